"""Independent reference implementations used as test oracles."""
import heapq
import itertools
import math

import numpy as np

from mrtraj.lattice import LatticeGraph, Primitive, apply_primitive, trace_pose

TAUS = np.linspace(0.0, 1.0, 41)[1:-1]


def _trace(cfg, s, m):
    return trace_pose(s, m, TAUS, cfg)[:, :2]


def joint_optimum(graph: LatticeGraph, starts, goals, radii, max_expansions: int = 2_000_000):
    """Optimal sum of costs by A* over joint lattice states.

    Each robot carries a "finished" flag (it stays at its goal from then on);
    every step costs the number of unfinished robots, so a robot's cost is
    its final arrival time.  Conflicts are re-derived from sampled traces.
    """
    cfg = graph.cfg
    n = len(starts)
    dist = [graph.distances_to(g) for g in goals]
    if any(s not in d for s, d in zip(starts, dist)):
        return None
    traces = {}

    def trace(s, m):
        key = (s, m)
        if key not in traces:
            traces[key] = _trace(cfg, s, m)
        return traces[key]

    def pos(s):
        return np.array(cfg.position(s))

    def clash(a_s, a_m, b_s, b_m, a_t, b_t, rsum):
        if np.linalg.norm(pos(a_t) - pos(b_t)) < rsum:
            return True
        d = trace(a_s, a_m) - trace(b_s, b_m)
        return bool(((d ** 2).sum(axis=1) < rsum * rsum).any())

    def h(states, done):
        return sum(0 if f else dist[i][s] for i, (s, f) in enumerate(zip(states, done)))

    start = (tuple(starts), tuple(False for _ in range(n)))
    tie = itertools.count()
    heap = [(h(*start), 0, next(tie), start)]
    best = {start: 0}
    expanded = 0
    while heap:
        f, g, _, node = heapq.heappop(heap)
        if g > best.get(node, math.inf):
            continue
        states, done = node
        if all(done):
            return g
        expanded += 1
        if expanded > max_expansions:
            raise RuntimeError("oracle budget exceeded")
        cost = sum(not d for d in done)
        options = []
        for i in range(n):
            if done[i]:
                options.append([(Primitive.WAIT, states[i])])
            else:
                options.append([(m, t) for m, t in graph.successors(states[i]) if t in dist[i]])
        for combo in itertools.product(*options):
            ok = True
            for i in range(n):
                for j in range(i + 1, n):
                    if clash(states[i], combo[i][0], states[j], combo[j][0], combo[i][1], combo[j][1],
                             radii[i] + radii[j]):
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                continue
            nxt = tuple(c[1] for c in combo)
            # every robot at its goal may either commit to staying or keep moving
            free = [i for i in range(n) if not done[i] and nxt[i] == goals[i]]
            for k in range(len(free) + 1):
                for commit in itertools.combinations(free, k):
                    nd = tuple(done[i] or i in commit for i in range(n))
                    child = (nxt, nd)
                    gc = g + cost
                    if gc < best.get(child, math.inf):
                        best[child] = gc
                        heapq.heappush(heap, (gc + h(nxt, nd), gc, next(tie), child))
    return None


def single_optimum(graph: LatticeGraph, start, goal, forbidden=frozenset(), max_t: int = 60):
    """Shortest arrival time by BFS over (state, t); ``forbidden`` holds ((cx, cy), t) pairs."""
    frontier = {start} if ((start.cx, start.cy), 0) not in forbidden else set()
    last_bad = max((t for _, t in forbidden), default=-1)
    for t in range(max_t + 1):
        for s in frontier:
            if s == goal and all(((goal.cx, goal.cy), k) not in forbidden for k in range(t, last_bad + 1)):
                return t
        nxt = set()
        for s in frontier:
            for m, u in graph.successors(s):
                if ((u.cx, u.cy), t + 1) not in forbidden:
                    nxt.add(u)
        frontier = nxt
    return None


def brute_triples(pos: np.ndarray, thr: float):
    """All sorted index triples with pairwise distance <= thr, per timestep (pos: N x T x 2)."""
    N, T = pos.shape[:2]
    out = []
    for t in range(T):
        for a, b, c in itertools.combinations(range(N), 3):
            if all(np.linalg.norm(pos[p, t] - pos[q, t]) <= thr for p, q in ((a, b), (a, c), (b, c))):
                out.append((t, (a, b, c)))
    return out


def apply_path(s, prims):
    out = [s]
    for m in prims:
        out.append(apply_primitive(out[-1], m))
    return out
