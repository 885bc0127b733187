"""Bounded-suboptimal multi-agent path finding (ECBS) on the heading lattice.

Conflicts are evaluated metrically: two robots conflict when their discs
overlap at a timestep (vertex conflict) or at any common sample of the two
primitive traces they execute between timesteps (edge conflict).  Because
the lattice is translation invariant, the trace-vs-trace test is tabulated
once per (config, radius sum) over relative cell offsets.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from itertools import count
from typing import NamedTuple, Sequence

import numpy as np

from .errors import PlanningError
from .lattice import (Heading, LatticeConfig, LatticeGraph, LatticeState, Primitive,
                      apply_primitive, require_feasible, trace_pose)
from .workspace import OccupancyGrid, RobotModel, Task, validate_tasks

N_EDGE_KINDS = len(Heading) * len(Primitive)
SAMPLES_PER_EDGE = 40


def edge_index(h: Heading, m: Primitive) -> int:
    return int(h) * len(Primitive) + int(m)


def primitive_between(s: LatticeState, t: LatticeState) -> Primitive:
    """The unique primitive leading from ``s`` to ``t``."""
    key = (s.heading, t.cx - s.cx, t.cy - s.cy, t.heading)
    try:
        return _STEP_TABLE[key]
    except KeyError:
        raise ValueError(f"no primitive connects {s} to {t}") from None


_STEP_TABLE = {}
for _h in Heading:
    for _m in Primitive:
        _t = apply_primitive(LatticeState(0, 0, _h), _m)
        _STEP_TABLE[(_h, _t.cx, _t.cy, _t.heading)] = _m


def path_primitives(path: Sequence[LatticeState]) -> list[Primitive]:
    return [primitive_between(a, b) for a, b in zip(path, path[1:])]


class ConflictTable:
    """Which pairs of simultaneous lattice edges bring two discs within ``rsum``.

    ``close[a, b, dx+K, dy+K]`` is True when edge kind ``a`` executed from
    cell (0, 0) and edge kind ``b`` executed from cell (dx, dy) come closer
    than ``rsum`` at some common interior sample (0 < tau < 1).
    """

    _cache: dict = {}

    def __init__(self, cfg: LatticeConfig, rsum: float):
        self.cfg = cfg
        self.rsum = rsum
        self.K = 2 + math.ceil(rsum / cfg.D)
        taus = np.linspace(0.0, 1.0, SAMPLES_PER_EDGE + 1)[1:-1]
        base = LatticeConfig(cfg.D, cfg.delta_T, (0.0, 0.0), cfg.back_arcs)
        traces = np.zeros((N_EDGE_KINDS, taus.size, 2))
        for h in Heading:
            for m in Primitive:
                traces[edge_index(h, m)] = trace_pose(LatticeState(0, 0, h), m, taus, base)[:, :2]
        span = 2 * self.K + 1
        close = np.zeros((N_EDGE_KINDS, N_EDGE_KINDS, span, span), dtype=bool)
        r2 = rsum * rsum
        for dx in range(-self.K, self.K + 1):
            for dy in range(-self.K, self.K + 1):
                off = np.array([dx * cfg.D, dy * cfg.D])
                diff = traces[:, None, :, :] - (traces[None, :, :, :] + off)
                d2 = (diff ** 2).sum(axis=-1)
                close[:, :, dx + self.K, dy + self.K] = (d2 < r2).any(axis=-1)
        self.close = close
        # per edge kind b: list of (edge kind a, -dx, -dy) for which an agent
        # at relative cell (-dx, -dy) executing a conflicts with b at origin
        self.partners = [
            [(a, -(ix - self.K), -(iy - self.K)) for a, ix, iy in zip(*np.nonzero(close[:, b]))]
            for b in range(N_EDGE_KINDS)
        ]

    @classmethod
    def get(cls, cfg: LatticeConfig, rsum: float) -> "ConflictTable":
        key = (cfg.D, cfg.delta_T, cfg.back_arcs, round(rsum, 12))
        tab = cls._cache.get(key)
        if tab is None:
            tab = cls._cache[key] = cls(cfg, rsum)
        return tab

    def edges_conflict(self, sa: LatticeState, ma: Primitive, sb: LatticeState, mb: Primitive) -> bool:
        dx, dy = sb.cx - sa.cx, sb.cy - sa.cy
        if abs(dx) > self.K or abs(dy) > self.K:
            return False
        return bool(self.close[edge_index(sa.heading, ma), edge_index(sb.heading, mb), dx + self.K, dy + self.K])


# -- plans and conflicts -----------------------------------------------------------

class Conflict(NamedTuple):
    kind: str  # "vertex" or "edge"
    i: int     # agent indices (positions in the plan), i < j
    j: int
    k: int     # vertex: timestep; edge: interval (k, k+1)
    state_i: LatticeState
    state_j: LatticeState
    prim_i: Primitive | None = None
    prim_j: Primitive | None = None

    @property
    def order_key(self):
        return (self.k, 0 if self.kind == "vertex" else 1, self.i, self.j)


@dataclass
class DiscretePlan:
    """Conflict-free lattice paths, all padded to ``M + 1`` states."""

    robot_ids: list[int]
    paths: list[list[LatticeState]]
    costs: list[int]
    sum_of_costs: int
    lower_bound: int
    search_lower_bound: int
    w: float = 1.5
    stats: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.paths[0]) - 1 if self.paths else 0

    def primitives(self, a: int) -> list[Primitive]:
        return path_primitives(self.paths[a])


def _padded(path: Sequence[LatticeState], k: int) -> LatticeState:
    return path[k] if k < len(path) else path[-1]


def _move(path: Sequence[LatticeState], k: int) -> tuple[LatticeState, Primitive]:
    if k + 1 < len(path):
        return path[k], primitive_between(path[k], path[k + 1])
    return path[-1], Primitive.WAIT


def detect_conflicts(paths: Sequence[Sequence[LatticeState]], radii: Sequence[float],
                     cfg: LatticeConfig, require_equal_length: bool = True) -> list[Conflict]:
    """All vertex and edge conflicts, earliest first, ties by (i, j)."""
    if not paths:
        return []
    if require_equal_length and len({len(p) for p in paths}) > 1:
        raise ValueError("all paths must have equal length")
    T = max(len(p) for p in paths)
    n = len(paths)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            rsum = radii[i] + radii[j]
            tab = ConflictTable.get(cfg, rsum)
            r2 = rsum * rsum
            pi, pj = paths[i], paths[j]
            for k in range(T):
                a, b = _padded(pi, k), _padded(pj, k)
                dx, dy = (a.cx - b.cx) * cfg.D, (a.cy - b.cy) * cfg.D
                if dx * dx + dy * dy < r2:
                    out.append(Conflict("vertex", i, j, k, a, b))
                if k + 1 < T:
                    sa, ma = _move(pi, k)
                    sb, mb = _move(pj, k)
                    if tab.edges_conflict(sa, ma, sb, mb):
                        out.append(Conflict("edge", i, j, k, sa, sb, ma, mb))
    out.sort(key=lambda c: c.order_key)
    return out


def first_conflict(paths, radii, cfg) -> Conflict | None:
    found = detect_conflicts(paths, radii, cfg, require_equal_length=False)
    return found[0] if found else None


# -- constraints and low level search ---------------------------------------------

class VertexConstraint(NamedTuple):
    cell: tuple[int, int]
    k: int


class EdgeConstraint(NamedTuple):
    state: LatticeState
    prim: Primitive
    k: int


@dataclass(frozen=True)
class AgentConstraints:
    vertex: frozenset = frozenset()
    edge: frozenset = frozenset()

    def add(self, c) -> "AgentConstraints":
        if isinstance(c, VertexConstraint):
            return AgentConstraints(self.vertex | {c}, self.edge)
        return AgentConstraints(self.vertex, self.edge | {c})

    @property
    def horizon(self) -> int:
        ks = [c.k for c in self.vertex] + [c.k + 1 for c in self.edge]
        return max(ks, default=0)

    def earliest_rest(self, goal: LatticeState) -> int:
        """First timestep from which the agent may stay at ``goal`` forever."""
        t = 0
        for c in self.vertex:
            if c.cell == (goal.cx, goal.cy):
                t = max(t, c.k + 1)
        for c in self.edge:
            if c.state == goal and c.prim == Primitive.WAIT:
                t = max(t, c.k + 1)
        return t


class LowLevelResult(NamedTuple):
    path: list[LatticeState]
    cost: int
    lb: int


class _Danger:
    """Conflict counts for candidate moves against other agents' (padded) paths."""

    def __init__(self, others: Sequence[tuple[Sequence[LatticeState], float]], radius: float,
                 cfg: LatticeConfig):
        self.T = max((len(p) for p, _ in others), default=1)
        self.by_time: list[dict] = [dict() for _ in range(self.T)]
        for path, r in others:
            tab = ConflictTable.get(cfg, radius + r)
            for k in range(self.T):
                s, m = _move(path, k)
                d = self.by_time[k]
                b = edge_index(s.heading, m)
                for a, dx, dy in tab.partners[b]:
                    key = (s.cx + dx, s.cy + dy, a)
                    d[key] = d.get(key, 0) + 1

    def count(self, k: int, s: LatticeState, m: Primitive) -> int:
        d = self.by_time[min(k, self.T - 1)]
        return d.get((s.cx, s.cy, edge_index(s.heading, m)), 0)


def low_level_search(graph: LatticeGraph, start: LatticeState, goal: LatticeState,
                     constraints: AgentConstraints = AgentConstraints(),
                     others: Sequence[tuple[Sequence[LatticeState], float]] = (),
                     w: float = 1.5, max_t: int | None = None) -> LowLevelResult | None:
    """Focal A* over (state, time); returns None when no path exists within ``max_t``.

    The returned path costs at most ``w`` times the constrained optimum; ``lb``
    is the smallest f-value in OPEN when the goal was selected.
    """
    dist = graph.distances_to(goal)
    if start not in dist or not graph.vertex_valid(start):
        return None
    if max_t is None:
        max_t = 4 * graph.num_cells
    rest = constraints.earliest_rest(goal)
    danger = _Danger(others, graph.radius, graph.cfg) if others else None
    stable = max(constraints.horizon, danger.T if danger else 0)
    vcon = {(c.cell, c.k) for c in constraints.vertex}
    econ = {(c.state, c.prim, c.k) for c in constraints.edge}

    seq = count()
    # node: (state, t, conflicts, parent)
    nodes: list[tuple] = []
    f_heap: list[int] = []
    f_count: dict[int, int] = {}
    focal: list[tuple] = []
    pending: list[tuple] = []
    closed: set = set()

    def push(state, t, conf, parent):
        f = t + dist[state]
        nid = len(nodes)
        nodes.append((state, t, conf, parent))
        if f not in f_count or f_count[f] == 0:
            heapq.heappush(f_heap, f)
            f_count[f] = 0
        f_count[f] += 1
        heapq.heappush(pending, (f, next(seq), nid))

    def f_min():
        while f_heap and f_count.get(f_heap[0], 0) == 0:
            heapq.heappop(f_heap)
        return f_heap[0] if f_heap else None

    def refill(bound):
        while pending and pending[0][0] <= bound:
            f, sq, nid = heapq.heappop(pending)
            state, t, conf, _ = nodes[nid]
            heapq.heappush(focal, (conf, f, -t, sq, nid))

    if ((start.cx, start.cy), 0) in vcon:
        return None
    push(start, 0, 0, -1)
    while True:
        fm = f_min()
        if fm is None:
            return None
        bound = w * fm + 1e-9
        refill(bound)
        if not focal:
            return None
        conf, f, negt, _, nid = heapq.heappop(focal)
        f_count[f] -= 1
        state, t, _, _ = nodes[nid]
        key = (state, min(t, stable + 1))
        if key in closed:
            continue
        closed.add(key)
        if state == goal and t >= rest:
            path = []
            while nid >= 0:
                path.append(nodes[nid][0])
                nid = nodes[nid][3]
            return LowLevelResult(path[::-1], t, fm)
        if t >= max_t:
            continue
        for m, nxt in graph.successors(state):
            if nxt not in dist:
                continue
            if ((nxt.cx, nxt.cy), t + 1) in vcon or (state, m, t) in econ:
                continue
            if (nxt, min(t + 1, stable + 1)) in closed:
                continue
            c = conf + (danger.count(t, state, m) if danger else 0)
            push(nxt, t + 1, c, nid)


# -- high level ECBS -----------------------------------------------------------------

class MapfFailure(PlanningError):
    def __init__(self, reason: str, message: str, detail=None):
        super().__init__("mapf", message, detail)
        self.reason = reason  # "timeout" | "infeasible" | "start_goal"


@dataclass
class _CTNode:
    constraints: list[AgentConstraints]
    paths: list[list[LatticeState]]
    costs: list[int]
    lbs: list[int]
    nid: int
    conflicts: list[Conflict] = field(default_factory=list)

    @property
    def cost(self) -> int:
        return sum(self.costs)

    @property
    def lb(self) -> int:
        return sum(self.lbs)


def ecbs_plan(tasks: Sequence[Task], grid: OccupancyGrid, robots: Sequence[RobotModel],
              cfg: LatticeConfig, w: float = 1.5, time_limit: float = 30.0,
              max_nodes: int = 20000) -> DiscretePlan:
    """Plan conflict-free lattice paths with cost at most ``w`` times a lower bound."""
    require_feasible(cfg, robots)
    validate_tasks(grid, robots, tasks)
    by_id = {r.id: r for r in robots}
    radii = [by_id[t.robot_id].radius for t in tasks]
    graph_for: dict[float, LatticeGraph] = {}
    graphs = []
    for r in radii:
        if r not in graph_for:
            graph_for[r] = LatticeGraph(grid, cfg, r)
        graphs.append(graph_for[r])
    starts = [cfg.state_of(t.start) for t in tasks]
    goals = [cfg.state_of(t.goal) for t in tasks]
    for a, t in enumerate(tasks):
        for s, name in ((starts[a], "start"), (goals[a], "goal")):
            if not graphs[a].vertex_valid(s):
                raise MapfFailure("start_goal", f"robot {t.robot_id}: {name} lattice state {s} is not free")

    n = len(tasks)
    deadline = time.perf_counter() + time_limit
    ids = count()

    def replan(a: int, cons: AgentConstraints, paths) -> LowLevelResult | None:
        others = [(paths[b], radii[b]) for b in range(n) if b != a and paths[b] is not None]
        return low_level_search(graphs[a], starts[a], goals[a], cons, others, w)

    empty = AgentConstraints()
    paths: list = [None] * n
    costs, lbs = [0] * n, [0] * n
    for a in range(n):
        res = replan(a, empty, paths)
        if res is None:
            raise MapfFailure("infeasible", f"robot {tasks[a].robot_id} cannot reach its goal")
        paths[a], costs[a], lbs[a] = res
    root = _CTNode([empty] * n, paths, costs, lbs, next(ids))
    root.conflicts = detect_conflicts(root.paths, radii, cfg, require_equal_length=False)
    root_lb = root.lb
    open_nodes = [root]
    expanded = 0
    while open_nodes:
        if time.perf_counter() > deadline or expanded >= max_nodes:
            raise MapfFailure("timeout", f"ECBS budget exhausted after {expanded} expansions",
                              {"expanded": expanded})
        lb_min = min(nd.lb for nd in open_nodes)
        bound = w * lb_min + 1e-9
        node = min((nd for nd in open_nodes if nd.cost <= bound),
                   key=lambda nd: (len(nd.conflicts), nd.cost, nd.nid))
        open_nodes.remove(node)
        expanded += 1
        if not node.conflicts:
            return _finish(tasks, node, root_lb, lb_min, w, expanded)
        c = node.conflicts[0]
        for a, st, pr in ((c.i, c.state_i, c.prim_i), (c.j, c.state_j, c.prim_j)):
            if c.kind == "vertex":
                con = VertexConstraint((st.cx, st.cy), c.k)
            else:
                con = EdgeConstraint(st, pr, c.k)
            if con in node.constraints[a].vertex or con in node.constraints[a].edge:
                continue
            cons = list(node.constraints)
            cons[a] = cons[a].add(con)
            res = replan(a, cons[a], node.paths)
            if res is None:
                continue
            child_paths = list(node.paths)
            child_paths[a] = res.path
            child_costs = list(node.costs)
            child_costs[a] = res.cost
            child_lbs = list(node.lbs)
            child_lbs[a] = max(node.lbs[a], res.lb)
            child = _CTNode(cons, child_paths, child_costs, child_lbs, next(ids))
            child.conflicts = detect_conflicts(child_paths, radii, cfg, require_equal_length=False)
            open_nodes.append(child)
    raise MapfFailure("infeasible", "constraint tree exhausted without a conflict-free solution",
                      {"expanded": expanded})


def _finish(tasks, node: _CTNode, root_lb: int, lb_min: int, w: float, expanded: int) -> DiscretePlan:
    padded = pad_paths(node.paths)
    return DiscretePlan(
        robot_ids=[t.robot_id for t in tasks],
        paths=padded,
        costs=list(node.costs),
        sum_of_costs=node.cost,
        lower_bound=root_lb,
        search_lower_bound=max(root_lb, lb_min),
        w=w,
        stats={"ct_expanded": expanded},
    )


def pad_paths(paths: Sequence[Sequence[LatticeState]]) -> list[list[LatticeState]]:
    M = max(len(p) for p in paths) - 1
    return [list(p) + [p[-1]] * (M + 1 - len(p)) for p in paths]
