"""Safe corridors: overlapping free rectangles along a subdivided lattice path."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PlanningError
from .lattice import LatticeConfig, LatticeState, trace_pose
from .mapf import path_primitives
from .workspace import OccupancyGrid, Rect, RobotModel, disc_free, rect_free


@dataclass
class SampledPath:
    """Waypoints ``r^0 .. r^H`` taken every ``1/h`` of each primitive.

    ``inputs[j]`` is the constant (v, omega) of the primitive that contains
    the sub-step from ``r^j`` to ``r^(j+1)``.
    """

    poses: np.ndarray
    inputs: np.ndarray
    h: int
    delta_t: float

    @property
    def H(self) -> int:
        """Index of the last waypoint; there are ``1 + h * len(primitives)`` waypoints."""
        return len(self.poses) - 1

    @property
    def num_waypoints(self) -> int:
        return len(self.poses)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.H + 1) * self.delta_t


@dataclass
class SafeCorridor:
    """``rects[k - 1]`` is the rectangle for waypoint ``k`` (k = 1..H)."""

    rects: list[Rect]
    reused: list[bool]

    @property
    def H(self) -> int:
        return len(self.rects)

    def rect(self, k: int) -> Rect:
        if not 1 <= k <= len(self.rects):
            raise IndexError(f"corridor index {k} outside 1..{len(self.rects)}")
        return self.rects[k - 1]

    def translated(self, dx: float, dy: float) -> "SafeCorridor":
        return SafeCorridor([r.translated(dx, dy) for r in self.rects], list(self.reused))


def corridor_contains(c: SafeCorridor, k: int, p: Sequence[float]) -> bool:
    return c.rect(k).contains(float(p[0]), float(p[1]))


def subdivision_violations(h: int, cfg: LatticeConfig, robots: Sequence[RobotModel]) -> list[str]:
    if h < 1:
        return [f"h must be >= 1, got {h}"]
    chord = math.sqrt(2.0) * cfg.D / h
    problems = []
    for r in robots:
        if not chord < 2 * r.radius:
            problems.append(
                f"robot {r.id}: sqrt(2)*D/h = {chord:.4f} >= 2*R = {2 * r.radius:.4f}; "
                f"use h >= {math.floor(math.sqrt(2.0) * cfg.D / (2 * r.radius)) + 1}")
    return problems


def require_subdivision(h: int, cfg: LatticeConfig, robots: Sequence[RobotModel]) -> None:
    problems = subdivision_violations(h, cfg, robots)
    if problems:
        raise ConfigurationError("corridor subdivision too coarse: " + "; ".join(problems))


def subdivide_path(path: Sequence[LatticeState], h: int, cfg: LatticeConfig,
                   robots: Sequence[RobotModel] = ()) -> SampledPath:
    """Split every primitive of ``path`` into ``h`` equal sub-steps."""
    if robots:
        require_subdivision(h, cfg, robots)
    elif h < 1:
        raise ConfigurationError(f"h must be >= 1, got {h}")
    prims = path_primitives(path)
    taus = np.arange(h) / h
    poses = [cfg.pose(path[0])] if not prims else []
    inputs = []
    for s, m in zip(path, prims):
        poses.extend(trace_pose(s, m, taus, cfg))
        inputs.extend([cfg.velocity(m)] * h)
    if prims:
        poses.append(cfg.pose(path[-1]))
    poses = np.array(poses, dtype=float).reshape(-1, 3)
    poses[:, 2] = np.unwrap(poses[:, 2])
    return SampledPath(poses, np.array(inputs, dtype=float).reshape(-1, 2), h, cfg.delta_T / h)


def expand_rect(grid: OccupancyGrid, seed: Rect, radius: float, step: float) -> Rect:
    """Grow ``seed`` round-robin in +x, -x, +y, -y until every direction is blocked."""
    limit = math.hypot(grid.width_m, grid.height_m)
    x0, y0, x1, y1 = seed.xmin, seed.ymin, seed.xmax, seed.ymax
    active = [True, True, True, True]
    while any(active):
        for d in range(4):
            if not active[d]:
                continue
            if d == 0:
                strip = Rect(x1, y0, x1 + step, y1)
            elif d == 1:
                strip = Rect(x0 - step, y0, x0, y1)
            elif d == 2:
                strip = Rect(x0, y1, x1, y1 + step)
            else:
                strip = Rect(x0, y0 - step, x1, y0)
            if not rect_free(grid, strip, radius):
                active[d] = False
            elif d == 0:
                x1 = strip.xmax
            elif d == 1:
                x0 = strip.xmin
            elif d == 2:
                y1 = strip.ymax
            else:
                y0 = strip.ymin
            if x1 - x0 > limit or y1 - y0 > limit:
                active = [False] * 4
                break
    return Rect(x0, y0, x1, y1)


def build_corridor(grid: OccupancyGrid, sp: SampledPath, radius: float, step: float | None = None,
                   robot_id: int | None = None, seed_segments: bool = True) -> SafeCorridor:
    """Construct one rectangle per waypoint ``k = 1..H``.

    A waypoint inside the previous rectangle reuses it.  Otherwise the new
    rectangle is seeded with the segment from the previous waypoint when
    that segment's box is free (``seed_segments``), else with the waypoint
    alone, and grown until blocked.
    """
    if step is None:
        step = grid.resolution
    pts = sp.poses[:, :2]
    for k, p in enumerate(pts):
        if not disc_free(grid, p, radius):
            raise PlanningError("corridor", f"robot {robot_id}: waypoint {k} at ({p[0]:.3f}, {p[1]:.3f}) "
                                            f"is not collision free", {"robot": robot_id, "k": k})
    rects: list[Rect] = []
    reused: list[bool] = []
    for k in range(1, len(pts)):
        x, y = pts[k]
        if rects and rects[-1].contains(x, y):
            rects.append(rects[-1])
            reused.append(True)
            continue
        seed = Rect.point(x, y)
        if seed_segments:
            box = Rect.bounding(pts[k - 1:k + 1])
            if rect_free(grid, box, radius):
                seed = box
        rects.append(expand_rect(grid, seed, radius, step))
        reused.append(False)
    return SafeCorridor(rects, reused)
