"""Occupancy grid, robot models and obstacle-clearance queries.

All clearance predicates are conservative: a fine cell counts as touching a
disc whenever its center lies within ``radius + (sqrt(2)/2) * resolution`` of
the query geometry.  Everything outside the map is occupied.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple, Sequence, Union

import numpy as np

HALF_DIAG = math.sqrt(2.0) / 2.0


class Pose(NamedTuple):
    x: float
    y: float
    theta: float = 0.0


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @classmethod
    def point(cls, x: float, y: float) -> "Rect":
        return cls(x, y, x, y)

    @classmethod
    def bounding(cls, points: Iterable[Sequence[float]]) -> "Rect":
        pts = np.asarray(list(points), dtype=float)
        return cls(float(pts[:, 0].min()), float(pts[:, 1].min()),
                   float(pts[:, 0].max()), float(pts[:, 1].max()))

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return (self.xmin - tol <= x <= self.xmax + tol
                and self.ymin - tol <= y <= self.ymax + tol)

    def intersects(self, other: "Rect") -> bool:
        return (self.xmin <= other.xmax and other.xmin <= self.xmax
                and self.ymin <= other.ymax and other.ymin <= self.ymax)

    def intersection(self, other: "Rect") -> "Rect | None":
        if not self.intersects(other):
            return None
        return Rect(max(self.xmin, other.xmin), max(self.ymin, other.ymin),
                    min(self.xmax, other.xmax), min(self.ymax, other.ymax))

    def distance_to(self, other: "Rect") -> float:
        dx = max(other.xmin - self.xmax, self.xmin - other.xmax, 0.0)
        dy = max(other.ymin - self.ymax, self.ymin - other.ymax, 0.0)
        return math.hypot(dx, dy)

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


@dataclass(frozen=True)
class RobotModel:
    id: int
    radius: float = 0.15
    v_max: float = 1.0
    omega_max: float = 1.0

    def __post_init__(self):
        if self.radius <= 0 or self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError(f"robot {self.id}: radius, v_max and omega_max must be positive")


@dataclass(frozen=True)
class Task:
    robot_id: int
    start: Pose
    goal: Pose


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Immutable 2-D occupancy map.

    ``cells[j, i]`` is True when the fine cell in column ``i`` (x) and row
    ``j`` (y, counted upward from ``origin``) is occupied.
    """

    cells: np.ndarray
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.size == 0:
            raise ValueError("occupancy matrix must be a non-empty 2-D array")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def nx(self) -> int:
        return self.cells.shape[1]

    @property
    def ny(self) -> int:
        return self.cells.shape[0]

    @property
    def width_m(self) -> float:
        return self.nx * self.resolution

    @property
    def height_m(self) -> float:
        return self.ny * self.resolution

    @property
    def bounds(self) -> Rect:
        ox, oy = self.origin
        return Rect(ox, oy, ox + self.width_m, oy + self.height_m)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (self.resolution == other.resolution and self.origin == other.origin
                and np.array_equal(self.cells, other.cells))

    __hash__ = None

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + (i + 0.5) * self.resolution,
                self.origin[1] + (j + 0.5) * self.resolution)

    def translated(self, dx: float, dy: float) -> "OccupancyGrid":
        return OccupancyGrid(self.cells, self.resolution, (self.origin[0] + dx, self.origin[1] + dy))

    @classmethod
    def empty(cls, width_m: float, height_m: float, resolution: float = 0.1,
              origin: tuple[float, float] = (0.0, 0.0)) -> "OccupancyGrid":
        nx = _checked_count(width_m, resolution, "width_m")
        ny = _checked_count(height_m, resolution, "height_m")
        return cls(np.zeros((ny, nx), dtype=bool), resolution, origin)

    def with_boxes(self, boxes: Iterable[Rect]) -> "OccupancyGrid":
        """Copy of the grid with every cell whose center lies in a box marked occupied."""
        cells = np.array(self.cells)
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * self.resolution
        for b in boxes:
            mx = (xs >= b.xmin) & (xs <= b.xmax)
            my = (ys >= b.ymin) & (ys <= b.ymax)
            cells[np.ix_(my, mx)] = True
        return OccupancyGrid(cells, self.resolution, self.origin)

    # -- window extraction with an implicit occupied border ----------------

    def window(self, i0: int, i1: int, j0: int, j1: int) -> np.ndarray:
        """Occupancy for the inclusive index box, out-of-map cells occupied."""
        out = np.ones((j1 - j0 + 1, i1 - i0 + 1), dtype=bool)
        a0, a1 = max(i0, 0), min(i1, self.nx - 1)
        b0, b1 = max(j0, 0), min(j1, self.ny - 1)
        if a0 <= a1 and b0 <= b1:
            out[b0 - j0:b1 - j0 + 1, a0 - i0:a1 - i0 + 1] = self.cells[b0:b1 + 1, a0:a1 + 1]
        return out

    def _index_span(self, lo: float, hi: float, axis: int) -> tuple[int, int]:
        o = self.origin[axis]
        r = self.resolution
        return math.floor((lo - o) / r - 0.5), math.ceil((hi - o) / r - 0.5)


def _checked_count(length: float, resolution: float, name: str) -> int:
    n = length / resolution
    k = int(round(n))
    if k <= 0 or abs(n - k) > 1e-9 * max(1.0, n):
        raise ValueError(f"{name}/resolution must be a positive integer, got {n}")
    return k


# -- clearance queries --------------------------------------------------------

def rect_free(grid: OccupancyGrid, rect: Rect, radius: float) -> bool:
    """True iff ``rect`` dilated by the robot disc avoids obstacles and the border."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    thr = radius + HALF_DIAG * grid.resolution
    i0, i1 = grid._index_span(rect.xmin - thr, rect.xmax + thr, 0)
    j0, j1 = grid._index_span(rect.ymin - thr, rect.ymax + thr, 1)
    occ = grid.window(i0, i1, j0, j1)
    if not occ.any():
        return True
    r = grid.resolution
    xs = grid.origin[0] + (np.arange(i0, i1 + 1) + 0.5) * r
    ys = grid.origin[1] + (np.arange(j0, j1 + 1) + 0.5) * r
    dx = np.maximum(np.maximum(rect.xmin - xs, xs - rect.xmax), 0.0)
    dy = np.maximum(np.maximum(rect.ymin - ys, ys - rect.ymax), 0.0)
    near = (dy[:, None] ** 2 + dx[None, :] ** 2) <= thr * thr
    return not bool(np.any(near & occ))


def disc_free(grid: OccupancyGrid, center: Sequence[float], radius: float) -> bool:
    """True iff the closed disc at ``center`` is clear of obstacles and inside the map."""
    return rect_free(grid, Rect.point(float(center[0]), float(center[1])), radius)


def clearance(grid: OccupancyGrid, point: Sequence[float], search: float = 2.0) -> float:
    """Exact distance from ``point`` to the nearest occupied cell square or the map border.

    Cells are treated as closed squares.  Returns 0 inside an obstacle or
    outside the map.  The search window grows until an obstacle is found.
    """
    px, py = float(point[0]), float(point[1])
    b = grid.bounds
    border = min(px - b.xmin, b.xmax - px, py - b.ymin, b.ymax - py)
    if border <= 0:
        return 0.0
    r = grid.resolution
    best = border
    reach = min(search, border)
    while True:
        i0, i1 = grid._index_span(px - reach - r, px + reach + r, 0)
        j0, j1 = grid._index_span(py - reach - r, py + reach + r, 1)
        i0, j0 = max(i0, 0), max(j0, 0)
        i1, j1 = min(i1, grid.nx - 1), min(j1, grid.ny - 1)
        occ = grid.cells[j0:j1 + 1, i0:i1 + 1]
        if occ.any():
            jj, ii = np.nonzero(occ)
            cx = grid.origin[0] + (ii + i0 + 0.5) * r
            cy = grid.origin[1] + (jj + j0 + 0.5) * r
            dx = np.maximum(np.abs(px - cx) - r / 2, 0.0)
            dy = np.maximum(np.abs(py - cy) - r / 2, 0.0)
            best = min(best, float(np.sqrt(dx * dx + dy * dy).min()))
        if best <= reach or reach >= border:
            return best
        reach = min(2 * reach, border)


def validate_tasks(grid: OccupancyGrid, robots: Sequence[RobotModel], tasks: Sequence[Task]) -> None:
    """Raise ValueError unless start/goal discs are free and pairwise disjoint."""
    by_id = {r.id: r for r in robots}
    for t in tasks:
        if t.robot_id not in by_id:
            raise ValueError(f"task references unknown robot {t.robot_id}")
        rad = by_id[t.robot_id].radius
        for name, p in (("start", t.start), ("goal", t.goal)):
            if not disc_free(grid, (p.x, p.y), rad):
                raise ValueError(f"robot {t.robot_id}: {name} ({p.x:g}, {p.y:g}) is not in free space")
    for a in range(len(tasks)):
        for b in range(a + 1, len(tasks)):
            ta, tb = tasks[a], tasks[b]
            rsum = by_id[ta.robot_id].radius + by_id[tb.robot_id].radius
            for name in ("start", "goal"):
                pa, pb = getattr(ta, name), getattr(tb, name)
                if math.hypot(pa.x - pb.x, pa.y - pb.y) <= rsum:
                    raise ValueError(f"robots {ta.robot_id} and {tb.robot_id}: {name} discs overlap")


# -- map files ------------------------------------------------------------------

class MapFormatError(ValueError):
    def __init__(self, message: str, line: int, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


FREE, OCCUPIED = ".", "#"


def load_map(source: Union[str, bytes, IO]) -> OccupancyGrid:
    """Parse either the ASCII form or the JSON cell-list form of a map file.

    ASCII form: a JSON header line ``{"origin": [x, y], "resolution": r}``
    followed by rows of ``.``/``#``, top row (largest y) first.  The
    cell-list form is a single JSON object with ``"format": "cells"``.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    cell_list = _as_cell_list(source)
    if cell_list is not None:
        return _load_cells(cell_list)
    lines = source.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MapFormatError("empty map file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"malformed header: {exc.msg}", 1, exc.colno) from None
    if not isinstance(header, dict) or "resolution" not in header:
        raise MapFormatError("header must be a JSON object with a resolution", 1)
    rows = lines[1:]
    if not rows:
        raise MapFormatError("map has no rows", 2)
    width = len(rows[0])
    cells = np.zeros((len(rows), width), dtype=bool)
    for r, row in enumerate(rows):
        lineno = r + 2
        if len(row) != width:
            raise MapFormatError(f"row {r} has length {len(row)}, expected {width}", lineno, min(len(row), width) + 1)
        for c, ch in enumerate(row):
            if ch == OCCUPIED:
                cells[r, c] = True
            elif ch != FREE:
                raise MapFormatError(f"unknown cell symbol {ch!r}", lineno, c + 1)
    origin = header.get("origin", [0.0, 0.0])
    return OccupancyGrid(cells[::-1], float(header["resolution"]), (float(origin[0]), float(origin[1])))


def _as_cell_list(text: str) -> dict | None:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) and obj.get("format") == "cells" else None


def _load_cells(obj: dict) -> OccupancyGrid:
    for key in ("width", "height", "resolution"):
        if key not in obj:
            raise MapFormatError(f"cell-list map missing {key!r}", 1)
    cells = np.zeros((int(obj["height"]), int(obj["width"])), dtype=bool)
    for k, (i, j) in enumerate(obj.get("occupied", [])):
        if not (0 <= i < cells.shape[1] and 0 <= j < cells.shape[0]):
            raise MapFormatError(f"occupied entry {k} ({i}, {j}) out of range", 1)
        cells[j, i] = True
    origin = obj.get("origin", [0.0, 0.0])
    return OccupancyGrid(cells, float(obj["resolution"]), (float(origin[0]), float(origin[1])))


def dump_map(grid: OccupancyGrid, form: str = "ascii") -> str:
    header = {"origin": [grid.origin[0], grid.origin[1]], "resolution": grid.resolution}
    if form == "cells":
        jj, ii = np.nonzero(grid.cells)
        occupied = sorted(zip(ii.tolist(), jj.tolist()), key=lambda c: (c[1], c[0]))
        return json.dumps({"format": "cells", "width": grid.nx, "height": grid.ny,
                           **header, "occupied": [list(c) for c in occupied]}, sort_keys=True) + "\n"
    if form != "ascii":
        raise ValueError(f"unknown map form {form!r}")
    rows = ["".join(OCCUPIED if v else FREE for v in row) for row in grid.cells[::-1]]
    return json.dumps(header, sort_keys=True) + "\n" + "\n".join(rows) + "\n"
