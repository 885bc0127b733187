"""Orientation-augmented grid lattice and unicycle motion primitives.

A lattice state is a cell index pair plus one of four headings.  Every edge
is a motion primitive executed with constant linear and angular velocity
over one lattice timestep ``delta_T``; arcs are quarter circles of radius
``D``.  Primitive names ending in ``_L`` turn counter-clockwise (omega > 0),
``_R`` clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .workspace import HALF_DIAG, OccupancyGrid, Pose, RobotModel

HALF_PI = math.pi / 2


class Heading(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def angle(self) -> float:
        return _HEADING_ANGLE[self]

    @property
    def vector(self) -> tuple[int, int]:
        return _HEADING_VEC[self]

    def left(self) -> "Heading":
        return _LEFT[self]

    def right(self) -> "Heading":
        return _RIGHT[self]

    @classmethod
    def from_angle(cls, theta: float) -> "Heading":
        k = round(theta / HALF_PI) % 4
        return (cls.E, cls.N, cls.W, cls.S)[k]


_HEADING_ANGLE = {Heading.E: 0.0, Heading.N: HALF_PI, Heading.W: math.pi, Heading.S: -HALF_PI}
_HEADING_VEC = {Heading.N: (0, 1), Heading.E: (1, 0), Heading.S: (0, -1), Heading.W: (-1, 0)}
_LEFT = {Heading.N: Heading.W, Heading.W: Heading.S, Heading.S: Heading.E, Heading.E: Heading.N}
_RIGHT = {v: k for k, v in _LEFT.items()}


class Primitive(IntEnum):
    WAIT = 0
    FWD = 1
    BACK = 2
    TURN_L = 3
    TURN_R = 4
    FWD_ARC_L = 5
    FWD_ARC_R = 6
    BACK_ARC_L = 7
    BACK_ARC_R = 8


# (sign of v, sign of omega)
_MOTION = {
    Primitive.WAIT: (0, 0),
    Primitive.FWD: (1, 0),
    Primitive.BACK: (-1, 0),
    Primitive.TURN_L: (0, 1),
    Primitive.TURN_R: (0, -1),
    Primitive.FWD_ARC_L: (1, 1),
    Primitive.FWD_ARC_R: (1, -1),
    Primitive.BACK_ARC_L: (-1, 1),
    Primitive.BACK_ARC_R: (-1, -1),
}

BACK_ARCS = (Primitive.BACK_ARC_L, Primitive.BACK_ARC_R)


class LatticeState(NamedTuple):
    cx: int
    cy: int
    heading: Heading


@dataclass(frozen=True)
class LatticeConfig:
    """Lattice geometry: cell size ``D`` (m), edge duration ``delta_T`` (s).

    ``origin`` is the world position of the center of cell (0, 0).
    """

    D: float = 1.0
    delta_T: float = 1.6
    origin: tuple[float, float] = (0.0, 0.0)
    back_arcs: bool = True

    @property
    def primitives(self) -> tuple[Primitive, ...]:
        if self.back_arcs:
            return tuple(Primitive)
        return tuple(p for p in Primitive if p not in BACK_ARCS)

    def position(self, s: LatticeState) -> tuple[float, float]:
        return (self.origin[0] + s.cx * self.D, self.origin[1] + s.cy * self.D)

    def pose(self, s: LatticeState) -> Pose:
        x, y = self.position(s)
        return Pose(x, y, s.heading.angle)

    def state_of(self, pose: Sequence[float]) -> LatticeState:
        """Nearest lattice state to a world pose."""
        cx = round((pose[0] - self.origin[0]) / self.D)
        cy = round((pose[1] - self.origin[1]) / self.D)
        theta = pose[2] if len(pose) > 2 else 0.0
        return LatticeState(int(cx), int(cy), Heading.from_angle(theta))

    def velocity(self, m: Primitive) -> tuple[float, float]:
        """Constant (v, omega) that executes ``m`` over one timestep."""
        sv, sw = _MOTION[m]
        if sw == 0:
            v = sv * self.D / self.delta_T
        else:
            v = sv * HALF_PI * self.D / self.delta_T
        return v, sw * HALF_PI / self.delta_T


# -- feasibility gate ------------------------------------------------------------

def feasibility_violations(cfg: LatticeConfig, robots: Sequence[RobotModel]) -> list[str]:
    """Human readable reasons why the diagonal transition is infeasible (empty if fine)."""
    problems = []
    if cfg.D <= 0 or cfg.delta_T <= 0:
        return [f"D and delta_T must be positive (D={cfg.D}, delta_T={cfg.delta_T})"]
    need_v = HALF_PI * cfg.D
    for r in robots:
        if r.v_max * cfg.delta_T < need_v:
            problems.append(
                f"robot {r.id}: v_max*delta_T = {r.v_max * cfg.delta_T:.4f} < (pi/2)*D = {need_v:.4f}; "
                f"increase delta_T to >= {need_v / r.v_max:.4f} s or reduce D")
        if r.omega_max * cfg.delta_T < HALF_PI:
            problems.append(
                f"robot {r.id}: omega_max*delta_T = {r.omega_max * cfg.delta_T:.4f} < pi/2 = {HALF_PI:.4f}; "
                f"increase delta_T to >= {HALF_PI / r.omega_max:.4f} s")
    return problems


def feasibility_gate(cfg: LatticeConfig, robots: Sequence[RobotModel]) -> bool:
    return not feasibility_violations(cfg, robots)


def require_feasible(cfg: LatticeConfig, robots: Sequence[RobotModel]) -> None:
    problems = feasibility_violations(cfg, robots)
    if problems:
        raise ConfigurationError("lattice timing infeasible: " + "; ".join(problems))


# -- primitive geometry ------------------------------------------------------------

def apply_primitive(s: LatticeState, m: Primitive) -> LatticeState:
    h = s.heading
    fx, fy = h.vector
    lx, ly = h.left().vector
    if m == Primitive.WAIT:
        return s
    if m == Primitive.FWD:
        return LatticeState(s.cx + fx, s.cy + fy, h)
    if m == Primitive.BACK:
        return LatticeState(s.cx - fx, s.cy - fy, h)
    if m == Primitive.TURN_L:
        return LatticeState(s.cx, s.cy, h.left())
    if m == Primitive.TURN_R:
        return LatticeState(s.cx, s.cy, h.right())
    if m == Primitive.FWD_ARC_L:
        return LatticeState(s.cx + fx + lx, s.cy + fy + ly, h.left())
    if m == Primitive.FWD_ARC_R:
        return LatticeState(s.cx + fx - lx, s.cy + fy - ly, h.right())
    if m == Primitive.BACK_ARC_L:
        return LatticeState(s.cx - fx - lx, s.cy - fy - ly, h.left())
    if m == Primitive.BACK_ARC_R:
        return LatticeState(s.cx - fx + lx, s.cy - fy + ly, h.right())
    raise ValueError(f"unknown primitive {m!r}")


def unicycle_closed_form(pose: Sequence[float], v: float, omega: float, t):
    """Exact pose after driving constant (v, omega) for time ``t`` (scalar or array)."""
    x0, y0, th0 = pose
    t = np.asarray(t, dtype=float)
    th = th0 + omega * t
    if omega == 0.0:
        x = x0 + v * t * math.cos(th0)
        y = y0 + v * t * math.sin(th0)
    else:
        rho = v / omega
        x = x0 + rho * (np.sin(th) - math.sin(th0))
        y = y0 - rho * (np.cos(th) - math.cos(th0))
    return x, y, th


def trace_pose(s: LatticeState, m: Primitive, tau, cfg: LatticeConfig = LatticeConfig()):
    """Pose at fraction ``tau`` of the primitive; heading is left unwrapped."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr < 0) | (tau_arr > 1)):
        raise ValueError("tau must lie in [0, 1]")
    v, w = cfg.velocity(m)
    x, y, th = unicycle_closed_form(cfg.pose(s), v, w, tau_arr * cfg.delta_T)
    if tau_arr.ndim == 0:
        return Pose(float(x), float(y), float(th))
    return np.stack([np.broadcast_to(x, tau_arr.shape), np.broadcast_to(y, tau_arr.shape), th], axis=-1)


def path_length(m: Primitive, cfg: LatticeConfig) -> float:
    v, _ = cfg.velocity(m)
    return abs(v) * cfg.delta_T


def sample_taus(m: Primitive, cfg: LatticeConfig, stride: float) -> np.ndarray:
    n = max(1, math.ceil(path_length(m, cfg) / stride))
    return np.linspace(0.0, 1.0, n + 1)


def edge_valid(grid: OccupancyGrid, s: LatticeState, m: Primitive, radius: float,
               cfg: LatticeConfig = LatticeConfig()) -> bool:
    """Swept-disc check of a primitive, sampled every resolution/2 of arc length."""
    taus = sample_taus(m, cfg, grid.resolution / 2)
    pts = trace_pose(s, m, taus, cfg)[:, :2]
    return points_free(grid, pts, radius)


def points_free(grid: OccupancyGrid, pts: np.ndarray, radius: float) -> bool:
    """Vectorised ``disc_free`` over many centers (same conservative rule)."""
    thr = radius + HALF_DIAG * grid.resolution
    i0, i1 = grid._index_span(pts[:, 0].min() - thr, pts[:, 0].max() + thr, 0)
    j0, j1 = grid._index_span(pts[:, 1].min() - thr, pts[:, 1].max() + thr, 1)
    occ = grid.window(i0, i1, j0, j1)
    if not occ.any():
        return True
    jj, ii = np.nonzero(occ)
    cx = grid.origin[0] + (ii + i0 + 0.5) * grid.resolution
    cy = grid.origin[1] + (jj + j0 + 0.5) * grid.resolution
    d2 = (pts[:, 0, None] - cx[None, :]) ** 2 + (pts[:, 1, None] - cy[None, :]) ** 2
    return not bool((d2 <= thr * thr).any())


# -- cached graph --------------------------------------------------------------------

class LatticeGraph:
    """Valid vertices and edges of the lattice over one map for one robot radius."""

    def __init__(self, grid: OccupancyGrid, cfg: LatticeConfig, radius: float):
        self.grid = grid
        self.cfg = cfg
        self.radius = radius
        b = grid.bounds
        self.cx_range = (math.ceil((b.xmin - cfg.origin[0]) / cfg.D - 1e-9),
                         math.floor((b.xmax - cfg.origin[0]) / cfg.D + 1e-9))
        self.cy_range = (math.ceil((b.ymin - cfg.origin[1]) / cfg.D - 1e-9),
                         math.floor((b.ymax - cfg.origin[1]) / cfg.D + 1e-9))
        self._edges: dict[LatticeState, tuple[tuple[Primitive, LatticeState], ...]] = {}
        self._pred = None
        self._dist_cache: dict[LatticeState, dict[LatticeState, int]] = {}

    @cached_property
    def free_cells(self) -> frozenset[tuple[int, int]]:
        out = []
        for cx in range(self.cx_range[0], self.cx_range[1] + 1):
            for cy in range(self.cy_range[0], self.cy_range[1] + 1):
                p = self.cfg.position(LatticeState(cx, cy, Heading.N))
                if points_free(self.grid, np.array([p]), self.radius):
                    out.append((cx, cy))
        return frozenset(out)

    @property
    def num_cells(self) -> int:
        return (self.cx_range[1] - self.cx_range[0] + 1) * (self.cy_range[1] - self.cy_range[0] + 1)

    def vertex_valid(self, s: LatticeState) -> bool:
        return (s.cx, s.cy) in self.free_cells

    def states(self):
        for cx, cy in sorted(self.free_cells):
            for h in Heading:
                yield LatticeState(cx, cy, h)

    def successors(self, s: LatticeState) -> tuple[tuple[Primitive, LatticeState], ...]:
        """Valid (primitive, target) pairs in primitive enum order."""
        out = self._edges.get(s)
        if out is None:
            out = []
            if self.vertex_valid(s):
                for m in self.cfg.primitives:
                    t = apply_primitive(s, m)
                    if not self.vertex_valid(t):
                        continue
                    if m in (Primitive.WAIT, Primitive.TURN_L, Primitive.TURN_R) or \
                            edge_valid(self.grid, s, m, self.radius, self.cfg):
                        out.append((m, t))
            out = tuple(out)
            self._edges[s] = out
        return out

    def predecessors_map(self) -> dict[LatticeState, list[tuple[Primitive, LatticeState]]]:
        pred: dict[LatticeState, list] = {}
        for s in self.states():
            for m, t in self.successors(s):
                pred.setdefault(t, []).append((m, s))
        return pred

    def distances_to(self, goal: LatticeState) -> dict[LatticeState, int]:
        """Static shortest step counts to ``goal`` (admissible search heuristic)."""
        if goal in self._dist_cache:
            return self._dist_cache[goal]
        if self._pred is None:
            self._pred = self.predecessors_map()
        pred = self._pred
        dist = {goal: 0}
        frontier = [goal]
        while frontier:
            nxt = []
            for t in frontier:
                d = dist[t] + 1
                for _, s in pred.get(t, ()):
                    if s not in dist:
                        dist[s] = d
                        nxt.append(s)
            frontier = nxt
        self._dist_cache[goal] = dist
        return dist
