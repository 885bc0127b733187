import numpy as np
import pytest

from mrtraj.lattice import Heading, LatticeConfig, LatticeGraph, LatticeState, Primitive, apply_primitive
from mrtraj.mapf import (AgentConstraints, MapfFailure, VertexConstraint, detect_conflicts, ecbs_plan,
                         low_level_search, pad_paths, path_primitives)
from mrtraj.workspace import OccupancyGrid, Rect, RobotModel, Task

from conftest import open_map
from oracles import apply_path, joint_optimum, single_optimum

CFG = LatticeConfig(1.0, 1.6, (0.5, 0.5))
E, N, W, S = Heading.E, Heading.N, Heading.W, Heading.S


def st(cx, cy, h=E):
    return LatticeState(cx, cy, h)


def tasks_for(pairs):
    return [Task(i, CFG.pose(a), CFG.pose(b)) for i, (a, b) in enumerate(pairs)]


def small_instance(seed):
    """Random <=5x5-cell map with 2 or 3 robots; 3-robot maps are kept <=4x4 for the oracle."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    w, h = int(rng.integers(3, 6)), int(rng.integers(3, 6))
    if n == 3:
        w, h = min(w, 4), min(h, 4)
    occ = rng.random((h, w)) < 0.15
    grid = OccupancyGrid(np.kron(occ, np.ones((10, 10), dtype=bool)), 0.1)
    free = [(i, j) for j in range(h) for i in range(w) if not occ[j, i]]
    if len(free) < 2 * n:
        return None
    pick = rng.choice(len(free), 2 * n, replace=False)
    starts = [st(*free[k], Heading(int(rng.integers(4)))) for k in pick[:n]]
    goals = [st(*free[k], Heading(int(rng.integers(4)))) for k in pick[n:]]
    return grid, starts, goals


def test_detect_conflicts_examples():
    a = [st(0, 0), st(1, 0), st(2, 0), st(3, 0)]
    b = [st(3, 1, S), st(3, 1, S), st(3, 1, S), st(3, 0, S)]
    cs = detect_conflicts([a, b], [0.15, 0.15], CFG)
    assert ("vertex", 0, 1, 3) in [(c.kind, c.i, c.j, c.k) for c in cs]
    # adjacent cells, distance D
    assert detect_conflicts([[st(0, 0)], [st(1, 0)]], [0.15, 0.15], CFG) == []
    # swapping along one edge
    sw = detect_conflicts([[st(0, 0, E), st(1, 0, E)], [st(1, 0, W), st(0, 0, W)]], [0.15, 0.15], CFG)
    assert [c.kind for c in sw] == ["edge"] and sw[0].k == 0
    with pytest.raises(ValueError):
        detect_conflicts([[st(0, 0)], [st(1, 0), st(2, 0)]], [0.15, 0.15], CFG)


def test_conflicts_sorted_chronologically():
    a = [st(0, 0), st(0, 0), st(1, 0)]
    b = [st(1, 1, S), st(1, 0, S), st(1, 0, S)]
    cs = detect_conflicts([a, b], [0.15, 0.15], CFG)
    assert [c.k for c in cs] == sorted(c.k for c in cs)


def test_low_level_examples():
    g = LatticeGraph(open_map(6, 3), CFG, 0.15)
    r = low_level_search(g, st(1, 1), st(3, 1), w=1.0)
    assert path_primitives(r.path) == [Primitive.FWD, Primitive.FWD] and r.cost == 2
    r = low_level_search(g, st(2, 1), st(1, 1), w=1.0)
    assert path_primitives(r.path) == [Primitive.BACK] and r.cost == 1


def test_low_level_with_constraint_against_bfs():
    grid = open_map(6, 3)
    g = LatticeGraph(grid, CFG, 0.15)
    cons = AgentConstraints().add(VertexConstraint((2, 1), 1))
    r = low_level_search(g, st(1, 1), st(3, 1), cons, w=1.5)
    opt = single_optimum(g, st(1, 1), st(3, 1), frozenset({((2, 1), 1)}))
    assert r.path[1][:2] != (2, 1)
    assert opt <= r.cost <= 1.5 * opt
    assert r.lb <= opt


def test_low_level_unreachable():
    grid = open_map(5, 3, boxes=[Rect(2.0, 0.0, 3.0, 3.0)])
    g = LatticeGraph(grid, CFG, 0.15)
    assert low_level_search(g, st(0, 1), st(4, 1)) is None


def test_single_robot_plan_equals_low_level():
    grid = open_map(6, 6)
    plan = ecbs_plan(tasks_for([(st(0, 0), st(4, 3, N))]), grid, [RobotModel(0)], CFG)
    r = low_level_search(LatticeGraph(grid, CFG, 0.15), st(0, 0), st(4, 3, N))
    assert plan.paths[0] == r.path and plan.M == len(r.path) - 1


def test_crossing_example():
    from mrtraj.harness.scenario import crossing_scenario
    sc = crossing_scenario()
    cfg = sc.params.lattice
    plan = ecbs_plan(sc.tasks, sc.grid, sc.robots, cfg, w=1.5)
    assert detect_conflicts(plan.paths, [0.15, 0.15], cfg) == []
    assert plan.sum_of_costs <= 1.5 * plan.lower_bound
    # without the other robot each would drive straight across in 8 steps
    assert plan.sum_of_costs >= 16


def test_head_on_corridor_with_pocket():
    # 5x3 cells: only the middle row is free except one pocket cell above the middle
    occ = np.ones((3, 5), dtype=bool)
    occ[1, :] = False
    occ[2, 2] = False
    grid = OccupancyGrid(np.kron(occ, np.ones((10, 10), dtype=bool)), 0.1)
    starts, goals = [st(0, 1, E), st(4, 1, W)], [st(4, 1, E), st(0, 1, W)]
    plan = ecbs_plan(tasks_for(list(zip(starts, goals))), grid, [RobotModel(0), RobotModel(1)], CFG)
    opt = joint_optimum(LatticeGraph(grid, CFG, 0.15), starts, goals, [0.15, 0.15])
    assert opt is not None
    assert plan.sum_of_costs <= 1.5 * opt
    assert any((2, 2) == s[:2] for p in plan.paths for s in p)


@pytest.mark.parametrize("seed", range(8))
def test_w1_matches_joint_optimum(seed):
    inst = small_instance(seed)
    if inst is None:
        pytest.skip("not enough free cells")
    grid, starts, goals = inst
    robots = [RobotModel(i) for i in range(len(starts))]
    opt = joint_optimum(LatticeGraph(grid, CFG, 0.15), starts, goals, [0.15] * len(starts))
    tasks = tasks_for(list(zip(starts, goals)))
    if opt is None:
        with pytest.raises(MapfFailure):
            ecbs_plan(tasks, grid, robots, CFG, w=1.0)
    else:
        assert ecbs_plan(tasks, grid, robots, CFG, w=1.0).sum_of_costs == opt


def check_plan_invariants(plan, tasks, cfg, radii, w):
    assert detect_conflicts(plan.paths, radii, cfg) == []
    assert plan.sum_of_costs <= w * plan.lower_bound + 1e-9
    assert len({len(p) for p in plan.paths}) == 1
    for p, t, c in zip(plan.paths, tasks, plan.costs):
        assert p[0] == cfg.state_of(t.start) and p[-1] == cfg.state_of(t.goal)
        assert all(s == p[-1] for s in p[c:])
        for a, b in zip(p, p[1:]):
            assert sum(apply_primitive(a, m) == b for m in Primitive) == 1


@pytest.mark.parametrize("seed", range(3))
def test_warehouse_plan_invariants(seed):
    from mrtraj.harness.scenario import gen_warehouse
    sc = gen_warehouse(seed, 8)
    cfg = sc.params.lattice
    plan = ecbs_plan(sc.tasks, sc.grid, sc.robots, cfg, w=1.5)
    check_plan_invariants(plan, sc.tasks, cfg, [r.radius for r in sc.robots], 1.5)
    again = ecbs_plan(sc.tasks, sc.grid, sc.robots, cfg, w=1.5)
    assert again.paths == plan.paths


def test_pad_paths():
    p = pad_paths([apply_path(st(0, 0), [Primitive.FWD]), [st(5, 5)] * 3])
    assert [len(x) for x in p] == [3, 3] and p[0][-1] == p[0][-2]


def test_failures_are_explicit():
    grid = open_map(5, 3, boxes=[Rect(2.0, 0.0, 3.0, 3.0)])
    with pytest.raises(MapfFailure) as exc:
        ecbs_plan(tasks_for([(st(0, 1), st(4, 1))]), grid, [RobotModel(0)], CFG)
    assert exc.value.reason == "infeasible"
    occ = np.ones((3, 5), dtype=bool)
    occ[1, :] = False
    occ[2, 2] = False
    corridor = OccupancyGrid(np.kron(occ, np.ones((10, 10), dtype=bool)), 0.1)
    with pytest.raises(MapfFailure) as exc:
        ecbs_plan(tasks_for([(st(0, 1), st(4, 1)), (st(4, 1, W), st(0, 1, W))]), corridor,
                  [RobotModel(0), RobotModel(1)], CFG, w=1.0, max_nodes=1)
    assert exc.value.reason == "timeout"
    assert "robot 0" in str(MapfFailure("infeasible", "robot 0 cannot reach its goal"))
