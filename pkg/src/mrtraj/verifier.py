"""Independent safety and feasibility checks for plans and trajectories.

Only workspace geometry queries are shared with the planner.  Lattice
motions are re-derived from consecutive states and integrated in closed
form here; trajectory dynamics are re-evaluated with a local Euler step.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .workspace import OccupancyGrid, RobotModel, Task, clearance

DISCRETE_SAMPLES = 20
INTRA_STEP_SAMPLES = 5

_ANGLE = {"N": math.pi / 2, "E": 0.0, "S": -math.pi / 2, "W": math.pi}


@dataclass
class Tolerances:
    dynamics: float = 1e-5
    inputs: float = 1e-6
    separation: float = 1e-4
    clearance: float = 0.0
    endpoint: float = 1e-6
    margin: float = 0.0


@dataclass
class Violation:
    kind: str
    robots: tuple
    step: int
    sample: int
    value: float
    limit: float

    def __str__(self):
        who = "/".join(str(r) for r in self.robots)
        return f"{self.kind} robot {who} step {self.step} sample {self.sample}: {self.value:.6g} vs {self.limit:.6g}"


@dataclass
class VerificationReport:
    robots: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    checked: str = ""

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.passed

    def min_separation(self) -> float:
        vals = [p["min_separation"] for p in self.pairs.values()]
        return min(vals) if vals else math.inf

    def to_dict(self) -> dict:
        return {"checked": self.checked, "passed": self.passed,
                "robots": {str(k): v for k, v in self.robots.items()},
                "pairs": {f"{a}-{b}": v for (a, b), v in self.pairs.items()},
                "violations": [asdict(v) for v in self.violations]}

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, sort_keys=True) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def infer_motion(s, t, D: float, delta_T: float) -> tuple[float, float] | None:
    """Constant (v, omega) carrying lattice state ``s`` to ``t`` in ``delta_T``, or None."""
    th0, th1 = _ANGLE[s.heading.name], _ANGLE[t.heading.name]
    dth = _wrap(th1 - th0)
    dx, dy = (t.cx - s.cx) * D, (t.cy - s.cy) * D
    a = math.cos(th0) * dx + math.sin(th0) * dy      # along heading
    b = -math.sin(th0) * dx + math.cos(th0) * dy     # to the left
    eps = 1e-9 * max(D, 1.0)
    if abs(dth) < 1e-9:
        if abs(b) > eps or abs(a) > D + eps:
            return None
        return a / delta_T, 0.0
    if abs(abs(dth) - math.pi / 2) > 1e-9:
        return None
    omega = dth / delta_T
    if abs(a) < eps and abs(b) < eps:
        return 0.0, omega
    rho = a / math.sin(dth)
    if abs(b - rho * (1 - math.cos(dth))) > eps:
        return None
    return rho * omega, omega


def unicycle_samples(x0: float, y0: float, th0: float, v: float, w: float, times: np.ndarray) -> np.ndarray:
    if abs(w) < 1e-12:
        return np.column_stack([x0 + v * times * math.cos(th0), y0 + v * times * math.sin(th0)])
    th = th0 + w * times
    return np.column_stack([x0 + v / w * (np.sin(th) - math.sin(th0)),
                            y0 - v / w * (np.cos(th) - math.cos(th0))])


def _pad(paths):
    M = max(len(p) for p in paths) - 1
    return [list(p) + [p[-1]] * (M + 1 - len(p)) for p in paths], M


def verify_discrete(plan, grid: OccupancyGrid, robots: Sequence[RobotModel], D: float, delta_T: float,
                    origin: Sequence[float], tasks: Sequence[Task] = (), samples: int = DISCRETE_SAMPLES,
                    tol: Tolerances | None = None) -> VerificationReport:
    """Re-check a lattice plan by sampling each motion at ``samples + 1`` instants.

    ``plan`` needs ``robot_ids`` and ``paths`` (lists of lattice states).
    ``origin`` is the world position of lattice cell (0, 0).
    """
    tol = tol or Tolerances()
    if samples < 20:
        raise ValueError("use at least 20 samples per motion")
    rep = VerificationReport(checked="discrete")
    model = {r.id: r for r in robots}
    ids = list(plan.robot_ids)
    paths, M = _pad(plan.paths)
    taus = np.linspace(0.0, 1.0, samples + 1)
    pts = np.zeros((len(ids), M, samples + 1, 2))
    ox, oy = origin
    for a, (rid, path) in enumerate(zip(ids, paths)):
        rob = model[rid]
        min_clear = math.inf
        max_v = max_w = 0.0
        for k in range(M):
            s, t = path[k], path[k + 1]
            vw = infer_motion(s, t, D, delta_T)
            if vw is None:
                rep.violations.append(Violation("motion", (rid,), k, 0, math.nan, math.nan))
                pts[a, k] = [ox + s.cx * D, oy + s.cy * D]
                continue
            v, w = vw
            max_v, max_w = max(max_v, abs(v)), max(max_w, abs(w))
            if abs(v) > rob.v_max + tol.inputs:
                rep.violations.append(Violation("speed", (rid,), k, 0, abs(v), rob.v_max))
            if abs(w) > rob.omega_max + tol.inputs:
                rep.violations.append(Violation("turn_rate", (rid,), k, 0, abs(w), rob.omega_max))
            pts[a, k] = unicycle_samples(ox + s.cx * D, oy + s.cy * D, _ANGLE[s.heading.name], v, w,
                                         taus * delta_T)
            for q, p in enumerate(pts[a, k]):
                c = clearance(grid, p) - rob.radius
                min_clear = min(min_clear, c)
                if c < -tol.clearance:
                    rep.violations.append(Violation("obstacle", (rid,), k, q, c, 0.0))
        rep.robots[rid] = {"min_clearance": min_clear, "max_speed": max_v, "max_turn_rate": max_w,
                           "steps": M}
    _check_endpoints_discrete(rep, ids, paths, tasks, D, origin, tol)
    for a, b in itertools.combinations(range(len(ids)), 2):
        rsum = model[ids[a]].radius + model[ids[b]].radius
        d = np.linalg.norm(pts[a] - pts[b], axis=-1)
        _pair_report(rep, ids[a], ids[b], d, rsum, 1e-9)
    return rep


def _check_endpoints_discrete(rep, ids, paths, tasks, D, origin, tol):
    by_id = {t.robot_id: t for t in tasks}
    for rid, path in zip(ids, paths):
        task = by_id.get(rid)
        if task is None:
            continue
        for label, state, pose, step in (("start", path[0], task.start, 0), ("goal", path[-1], task.goal,
                                                                              len(path) - 1)):
            err = math.hypot(origin[0] + state.cx * D - pose[0], origin[1] + state.cy * D - pose[1])
            if err > D / 2:
                rep.violations.append(Violation(label, (rid,), step, 0, err, D / 2))


def _pair_report(rep, ra, rb, d, rsum, tol):
    flat = d.reshape(d.shape[0], -1)
    k, q = np.unravel_index(int(np.argmin(flat)), flat.shape)
    rep.pairs[(ra, rb)] = {"min_separation": float(flat[k, q]), "required": rsum}
    for k, q in zip(*np.nonzero(flat < rsum - tol)):
        rep.violations.append(Violation("separation", (ra, rb), int(k), int(q), float(flat[k, q]), rsum))


def _euler(z: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    return np.column_stack([z[:, 0] + dt * u[:, 0] * np.cos(z[:, 2]),
                            z[:, 1] + dt * u[:, 0] * np.sin(z[:, 2]),
                            z[:, 2] + dt * u[:, 1]])


def _angle_diff(a, b):
    return np.abs((np.asarray(a) - np.asarray(b) + np.pi) % (2 * np.pi) - np.pi)


def verify_trajectories(robot_ids: Sequence[int], states: np.ndarray, inputs: np.ndarray, dt: float,
                        grid: OccupancyGrid, robots: Sequence[RobotModel], tasks: Sequence[Task] = (),
                        tol: Tolerances | None = None,
                        intra_samples: int = INTRA_STEP_SAMPLES) -> VerificationReport:
    """Check dynamics, input limits, clearance and separation of optimised trajectories.

    Clearance and separation are evaluated at every timestep and at
    ``intra_samples`` evenly spaced points of the straight chord between
    consecutive states.
    """
    tol = tol or Tolerances()
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    N = len(robot_ids)
    if states.ndim != 3 or states.shape[0] != N or states.shape[2] != 3:
        raise ValueError(f"states must have shape (N, H+1, 3), got {states.shape}")
    H = states.shape[1] - 1
    if inputs.shape != (N, H, 2):
        raise ValueError(f"inputs must have shape {(N, H, 2)}, got {inputs.shape}")
    model = {r.id: r for r in robots}
    rep = VerificationReport(checked="trajectories")
    alphas = np.arange(intra_samples + 1) / (intra_samples + 1)
    # inst[a, j, q]: position at step j plus alphas[q] of the way to step j+1
    pos = states[:, :, :2]
    inst = pos[:, :-1, None, :] * (1 - alphas)[None, None, :, None] + pos[:, 1:, None, :] * alphas[None, None, :, None]
    last = np.repeat(pos[:, -1:, None, :], alphas.size, axis=2)
    last[:, :, 1:, :] = np.nan
    inst = np.concatenate([inst, last], axis=1)      # (N, H+1, S, 2)

    for a, rid in enumerate(robot_ids):
        rob = model[rid]
        res = np.abs(states[a, 1:] - _euler(states[a, :-1], inputs[a], dt))
        res_step = res.max(axis=1) if H else np.zeros(0)
        for j in np.nonzero(res_step > tol.dynamics)[0]:
            rep.violations.append(Violation("dynamics", (rid,), int(j), 0, float(res_step[j]), tol.dynamics))
        over_v = np.abs(inputs[a, :, 0]) - rob.v_max
        over_w = np.abs(inputs[a, :, 1]) - rob.omega_max
        for j in np.nonzero(over_v > tol.inputs)[0]:
            rep.violations.append(Violation("speed", (rid,), int(j), 0, float(abs(inputs[a, j, 0])), rob.v_max))
        for j in np.nonzero(over_w > tol.inputs)[0]:
            rep.violations.append(Violation("turn_rate", (rid,), int(j), 0, float(abs(inputs[a, j, 1])),
                                            rob.omega_max))
        min_clear = math.inf
        for j in range(H + 1):
            for q in range(alphas.size):
                p = inst[a, j, q]
                if np.isnan(p[0]):
                    continue
                c = clearance(grid, p) - rob.radius - tol.margin
                min_clear = min(min_clear, c)
                if c < -tol.clearance:
                    rep.violations.append(Violation("obstacle", (rid,), j, q, c, 0.0))
        rep.robots[rid] = {
            "max_dynamics_residual": float(res_step.max()) if H else 0.0,
            "max_input_violation": float(max(0.0, over_v.max(initial=-np.inf), over_w.max(initial=-np.inf))),
            "min_clearance": min_clear,
        }
    by_id = {t.robot_id: t for t in tasks}
    for a, rid in enumerate(robot_ids):
        task = by_id.get(rid)
        if task is None:
            continue
        for label, z, pose, step in (("start", states[a, 0], task.start, 0), ("goal", states[a, -1], task.goal, H)):
            err = max(math.hypot(z[0] - pose[0], z[1] - pose[1]), float(_angle_diff(z[2], pose[2])))
            if err > tol.endpoint:
                rep.violations.append(Violation(label, (rid,), step, 0, err, tol.endpoint))
    for a, b in itertools.combinations(range(N), 2):
        rsum = model[robot_ids[a]].radius + model[robot_ids[b]].radius + 2 * tol.margin
        d = np.linalg.norm(inst[a] - inst[b], axis=-1)
        d = np.where(np.isnan(d), np.inf, d)
        _pair_report(rep, robot_ids[a], robot_ids[b], d, rsum, tol.separation)
    return rep
