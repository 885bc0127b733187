import math

import numpy as np
import pytest

from mrtraj.corridor import (SafeCorridor, build_corridor, corridor_contains, expand_rect, subdivide_path,
                             subdivision_violations)
from mrtraj.errors import ConfigurationError, PlanningError
from mrtraj.lattice import Heading, LatticeConfig, LatticeState, Primitive
from mrtraj.workspace import Rect, RobotModel, rect_free

from conftest import dense_disc_free, open_map
from oracles import apply_path

E, N = Heading.E, Heading.N
CFG = LatticeConfig(1.0, 1.6, (0.5, 0.5))


def sampled_sound(grid, rect, radius, n, rng) -> bool:
    pts = rng.uniform((rect.xmin, rect.ymin), (rect.xmax, rect.ymax), size=(n, 2))
    return all(dense_disc_free(grid, p, radius) for p in pts)


def check_corridor(grid, sp, c: SafeCorridor, radius, n, rng):
    assert c.H == sp.H
    for k in range(1, sp.H + 1):
        assert corridor_contains(c, k, sp.poses[k, :2])
    for a, b in zip(c.rects, c.rects[1:]):
        assert a.intersection(b) is not None
    for r in {id(r): r for r in c.rects}.values():
        assert rect_free(grid, r, radius)
        assert sampled_sound(grid, r, radius, n, rng)


def test_subdivision_gate():
    robots = [RobotModel(0)]
    assert subdivision_violations(5, LatticeConfig(), robots) == []
    msg = subdivision_violations(4, LatticeConfig(), robots)
    assert len(msg) == 1 and "0.3536" in msg[0] and "h >= 5" in msg[0]
    with pytest.raises(ConfigurationError, match="sqrt\\(2\\)\\*D/h"):
        subdivide_path([LatticeState(0, 0, E)] * 2, 4, LatticeConfig(), robots)


def test_subdivide_one_forward():
    cfg = LatticeConfig(1.0, 1.6)
    sp = subdivide_path(apply_path(LatticeState(0, 0, E), [Primitive.FWD]), 2, cfg)
    assert sp.H == 2
    assert np.allclose(sp.poses[:, 0], [0, 0.5, 1]) and np.allclose(sp.poses[:, 1], 0)
    assert sp.delta_t == pytest.approx(0.8)
    assert np.allclose(sp.inputs, [[1 / 1.6, 0]] * 2)


def test_subdivide_counts_and_spacing():
    prims = [Primitive.FWD, Primitive.FWD_ARC_L, Primitive.TURN_R, Primitive.WAIT, Primitive.BACK_ARC_R]
    path = apply_path(LatticeState(2, 2, E), prims)
    for h in (1, 3, 5, 8):
        sp = subdivide_path(path, h, CFG)
        assert sp.H == h * len(prims)
        assert sp.num_waypoints == 1 + h * len(prims)
        step = np.linalg.norm(np.diff(sp.poses[:, :2], axis=0), axis=1)
        assert step.max() <= math.pi / 2 / h + 1e-12
        assert np.abs(np.diff(sp.poses[:, 2])).max() <= math.pi / 2 / h + 1e-12


def test_single_waypoint_in_empty_map():
    g = open_map()
    s = LatticeState(4, 4, E)
    sp = subdivide_path([s, s], 1, CFG)
    c = build_corridor(g, sp, 0.15)
    r = c.rect(1)
    slack = 0.1 + math.sqrt(2) / 2 * 0.1
    for lo in (r.xmin, r.ymin, 10 - r.xmax, 10 - r.ymax):
        assert 0.15 <= lo <= 0.15 + slack


def test_corridor_between_walls():
    g = open_map(8, 3, boxes=[Rect(0, 0, 8, 1), Rect(0, 2, 8, 3)])
    path = apply_path(LatticeState(0, 1, E), [Primitive.FWD] * 5)
    sp = subdivide_path(path, 5, CFG)
    c = build_corridor(g, sp, 0.15)
    assert all(r.height <= 1 - 2 * 0.15 + 1e-9 for r in c.rects)
    check_corridor(g, sp, c, 0.15, 300, np.random.default_rng(0))


def test_reuse_branch():
    g = open_map()
    path = apply_path(LatticeState(3, 3, E), [Primitive.FWD, Primitive.WAIT, Primitive.FWD_ARC_L])
    sp = subdivide_path(path, 5, CFG)
    c = build_corridor(g, sp, 0.15)
    assert any(c.reused)
    for k, flag in enumerate(c.reused):
        if flag:
            assert c.rects[k] is c.rects[k - 1]


def test_corridor_contains():
    c = SafeCorridor([Rect(0, 0, 2, 1)], [False])
    assert corridor_contains(c, 1, (1, 0.5))
    assert corridor_contains(c, 1, (2, 1))
    assert not corridor_contains(c, 1, (2.001, 0.5))
    with pytest.raises(IndexError):
        corridor_contains(c, 2, (1, 0.5))


def test_blocked_waypoint_is_reported():
    g = open_map(boxes=[Rect(3.2, 2.0, 4.0, 3.0)])
    sp = subdivide_path(apply_path(LatticeState(2, 2, E), [Primitive.FWD]), 5, CFG)
    with pytest.raises(PlanningError, match="robot 7: waypoint"):
        build_corridor(g, sp, 0.15, robot_id=7)


def diagonal_failure_map():
    """A block sits inside the endpoint box of a quarter-arc but far from the arc itself."""
    return open_map(4, 4, boxes=[Rect(1.0, 2.3, 1.7, 3.0)])


def test_diagonal_segment_failure_map():
    g = diagonal_failure_map()
    path = apply_path(LatticeState(1, 1, E), [Primitive.FWD_ARC_L])
    ends = np.array([CFG.position(p) for p in path])
    # the robot's swept arc itself is free
    arc = subdivide_path(path, 50, CFG).poses[:, :2]
    assert all(dense_disc_free(g, p, 0.15) for p in arc)
    # building straight from the unsampled endpoints gives a rectangle that violates containment
    naive = expand_rect(g, Rect.bounding(ends), 0.15, 0.1)
    assert not rect_free(g, naive, 0.15)
    # subdividing into h = 5 parts gives a sound, connected corridor
    sp = subdivide_path(path, 5, CFG, [RobotModel(0)])
    c = build_corridor(g, sp, 0.15)
    check_corridor(g, sp, c, 0.15, 10_000, np.random.default_rng(3))


def test_warehouse_corridors(warehouse_runs):
    rng = np.random.default_rng(5)
    for sc, runs in warehouse_runs.values():
        res = runs["coupled"]
        for sp, c, r in zip(res.refs, res.corridors, sc.robots):
            check_corridor(sc.grid, sp, c, r.radius, 500, rng)
