"""Triple detection, grouping/priority assignment and group-by-group optimisation."""
from __future__ import annotations

import itertools
import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corridor import SafeCorridor, SampledPath
from .nlp import FixedTrajectory, Infeasible, SolverOptions, Weights, build_problem, solve
from .workspace import RobotModel

log = logging.getLogger(__name__)

Triple = tuple[int, ...]

# slack on the inclusive distance threshold; lattice positions carry float noise
_THRESHOLD_EPS = 1e-9


def _close_matrix(pts: np.ndarray, thr: float) -> np.ndarray:
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    close = d <= thr + _THRESHOLD_EPS
    np.fill_diagonal(close, False)
    return close


def _positions(refs: Sequence[SampledPath] | Sequence[np.ndarray]) -> np.ndarray:
    arrs = [np.asarray(r.poses if isinstance(r, SampledPath) else r, dtype=float)[:, :2] for r in refs]
    if len({a.shape for a in arrs}) > 1:
        raise ValueError("all references must share H")
    return np.stack(arrs)


def find_triples(refs, D: float, robot_ids: Sequence[int] | None = None) -> list[Triple]:
    """All robot triples pairwise within ``sqrt(2) * D`` at each step t = 1..H.

    ``refs`` holds one reference per robot (SampledPath or an array whose
    first two columns are positions).  Triples are sorted ascending and
    appended once per step at which they are detected.
    """
    if len(refs) < 3:
        return []
    pos = _positions(refs)
    ids = list(robot_ids) if robot_ids is not None else list(range(1, len(refs) + 1))
    order = np.argsort(ids, kind="stable")
    thr = math.sqrt(2.0) * D
    out: list[Triple] = []
    for t in range(1, pos.shape[1]):
        close = _close_matrix(pos[:, t, :], thr)
        for ia, a in enumerate(order):
            nbr = [b for b in order[ia + 1:] if close[a, b]]
            for ib, b in enumerate(nbr):
                for c in nbr[ib + 1:]:
                    if close[b, c]:
                        out.append((ids[a], ids[b], ids[c]))
    return out


def four_way_events(refs, D: float, robot_ids: Sequence[int] | None = None) -> list[tuple[int, tuple[int, ...]]]:
    """Steps at which four robots are pairwise within the triple threshold."""
    if len(refs) < 4:
        return []
    pos = _positions(refs)
    ids = list(robot_ids) if robot_ids is not None else list(range(1, len(refs) + 1))
    thr = math.sqrt(2.0) * D
    events = []
    for t in range(1, pos.shape[1]):
        close = _close_matrix(pos[:, t, :], thr)
        if close.sum(axis=1).max() < 3:
            continue
        for quad in itertools.combinations(range(len(ids)), 4):
            if all(close[a, b] for a, b in itertools.combinations(quad, 2)):
                events.append((t, tuple(sorted(ids[q] for q in quad))))
    return events


def assign_priorities(L: Sequence[Triple], robots: int | Sequence[int]) -> list[Triple]:
    """Group robots by repeatedly taking the most frequent element of ``L``.

    Ties go to the lexicographically smallest element.  Members of a chosen
    group are removed from every remaining element and emptied elements
    dropped; robots never listed become trailing singleton groups.
    """
    ids = list(range(1, robots + 1)) if isinstance(robots, int) else list(robots)
    remaining = [tuple(sorted(e)) for e in L]
    groups: list[Triple] = []
    while remaining:
        counts = Counter(remaining)
        best = max(counts.values())
        e = min(k for k, v in counts.items() if v == best)
        groups.append(e)
        members = set(e)
        remaining = [r for r in (tuple(m for m in l if m not in members) for l in remaining) if r]
    placed = {m for g in groups for m in g}
    groups.extend((i,) for i in sorted(ids) if i not in placed)
    return groups


def random_groups(robot_ids: Sequence[int], sizes: Sequence[int], seed: int) -> list[Triple]:
    """Seeded random partition with the given group sizes (in order)."""
    if sum(sizes) != len(robot_ids):
        raise ValueError("group sizes must add up to the number of robots")
    rng = np.random.default_rng(seed)
    perm = [robot_ids[i] for i in rng.permutation(len(robot_ids))]
    out, k = [], 0
    for s in sizes:
        out.append(tuple(sorted(perm[k:k + s])))
        k += s
    return out


@dataclass
class GroupOutcome:
    group: Triple
    status: str
    cost: float
    wall_time: float
    diagnostics: dict


@dataclass
class TeamTrajectories:
    """Optimised trajectories for every robot, in the order of ``robot_ids``."""

    robot_ids: list[int]
    states: np.ndarray    # (N, H+1, 3)
    inputs: np.ndarray    # (N, H, 2)
    dt: float
    costs: np.ndarray
    groups: list[Triple]
    outcomes: list[GroupOutcome] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(self.costs.sum())

    @property
    def H(self) -> int:
        return self.states.shape[1] - 1

    def __bool__(self):
        return True


@dataclass
class Failure:
    group: Triple
    reason: str
    groups: list[Triple]
    outcomes: list[GroupOutcome] = field(default_factory=list)

    def __bool__(self):
        return False


def _check_aligned(robots, refs, corridors):
    if not (len(robots) == len(refs) == len(corridors)):
        raise ValueError("robots, references and corridors must align")
    if len({r.id for r in robots}) != len(robots):
        raise ValueError("robot ids must be unique")


def solve_groups(groups: Sequence[Triple], robots: Sequence[RobotModel], refs: Sequence[SampledPath],
                 corridors: Sequence[SafeCorridor], weights: Weights | None = None,
                 options: SolverOptions | None = None,
                 sep_fractions: Sequence[float] = (0.0,)) -> TeamTrajectories | Failure:
    """Solve ``groups`` in order; earlier results become fixed obstacles for later groups."""
    _check_aligned(robots, refs, corridors)
    index = {r.id: k for k, r in enumerate(robots)}
    listed = sorted(m for g in groups for m in g)
    if listed != sorted(index):
        raise ValueError("groups must partition the robot ids")
    N, H = len(robots), refs[0].H
    states = np.zeros((N, H + 1, 3))
    inputs = np.zeros((N, H, 2))
    costs = np.zeros(N)
    fixed: list[FixedTrajectory] = []
    outcomes: list[GroupOutcome] = []
    for g in groups:
        ks = [index[m] for m in g]
        t0 = time.perf_counter()
        prob = build_problem([robots[k] for k in ks], [corridors[k] for k in ks], [refs[k] for k in ks],
                             fixed=fixed, weights=weights, sep_fractions=sep_fractions)
        res = solve(prob, options=options)
        wall = time.perf_counter() - t0
        if isinstance(res, Infeasible):
            outcomes.append(GroupOutcome(tuple(g), res.reason, math.nan, wall, res.diagnostics))
            return Failure(tuple(g), res.reason, list(groups), outcomes)
        outcomes.append(GroupOutcome(tuple(g), res.diagnostics["status"], res.cost, wall, res.diagnostics))
        for local, k in enumerate(ks):
            states[k], inputs[k], costs[k] = res.states[local], res.inputs[local], res.costs[local]
            fixed.append(FixedTrajectory(robots[k].id, robots[k].radius, states[k, :, :2].copy()))
    return TeamTrajectories([r.id for r in robots], states, inputs, refs[0].delta_t, costs, list(groups), outcomes)


def prioritized_solve(robots, refs, corridors, D: float, weights=None, options=None,
                      sep_fractions=(0.0,)) -> TeamTrajectories | Failure:
    ids = [r.id for r in robots]
    L = find_triples(refs, D, ids)
    quads = four_way_events(refs, D, ids)
    if quads:
        log.info("four robots mutually close at %d step(s), first at t=%d: %s", len(quads), *quads[0])
    groups = assign_priorities(L, ids)
    return solve_groups(groups, robots, refs, corridors, weights, options, sep_fractions)


def coupled_solve(robots, refs, corridors, weights=None, options=None,
                  sep_fractions=(0.0,)) -> TeamTrajectories | Failure:
    group = tuple(r.id for r in robots)
    return solve_groups([group], robots, refs, corridors, weights, options, sep_fractions)
