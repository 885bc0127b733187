"""End-to-end run: lattice MAPF, corridors, optimisation, verification."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..corridor import SafeCorridor, SampledPath, build_corridor, subdivide_path
from ..errors import PlanningError
from ..mapf import DiscretePlan, MapfFailure, ecbs_plan
from ..nlp import SolverOptions, Weights
from ..prioritizer import (Failure, TeamTrajectories, assign_priorities, find_triples, four_way_events,
                           random_groups, solve_groups)
from ..verifier import VerificationReport, verify_discrete, verify_trajectories
from .scenario import Scenario

TRAJECTORY_SCHEMA = "mrtraj.trajectories/1"
MODES = ("coupled", "prioritized", "prioritized-random")
# separation is enforced at each timestep and at these fractions of every step
INTRA_STEP_FRACTIONS = tuple(k / 6 for k in range(6))


@dataclass
class Budget:
    """Search and solver limits.  Node and iteration counts are the binding,
    reproducible limits; the wall-clock values are safety guards."""

    mapf_nodes: int = 20000
    mapf_time: float = 120.0
    solver_iterations: int = 1000
    solver_time: float = 60.0
    sep_fractions: tuple = INTRA_STEP_FRACTIONS

    def solver_options(self) -> SolverOptions:
        return SolverOptions(iteration_budget=self.solver_iterations, time_budget=self.solver_time)


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    mode: str
    N: int
    success: bool = False
    stage: str = "mapf"
    reason: str = ""
    sum_of_costs: int | None = None
    mapf_lower_bound: int | None = None
    makespan: int | None = None
    H: int | None = None
    total_cost: float | None = None
    costs: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    group_status: list = field(default_factory=list)
    solver_iterations: int = 0
    triples: int = 0
    four_way_events: int = 0
    min_separation: float | None = None
    min_clearance: float | None = None
    violations: int = 0
    times: dict = field(default_factory=dict)

    @property
    def optimization_time(self) -> float:
        return self.times.get("optimization", math.nan)

    def to_dict(self, timings: bool = True) -> dict:
        d = asdict(self)
        if not timings:
            d.pop("times")
        return d


@dataclass
class RunResult:
    metrics: RunMetrics
    plan: DiscretePlan | None = None
    refs: list[SampledPath] = field(default_factory=list)
    corridors: list[SafeCorridor] = field(default_factory=list)
    trajectories: TeamTrajectories | None = None
    discrete_report: VerificationReport | None = None
    report: VerificationReport | None = None


def _weights(sc: Scenario) -> Weights:
    return Weights(np.array(sc.params.P, dtype=float), np.array(sc.params.Q, dtype=float))


def run_pipeline(scenario: Scenario, mode: str = "prioritized", budget: Budget | None = None) -> RunResult:
    """Run all stages; the result only counts as a success when the verifier passes."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    budget = budget or Budget()
    scenario.validate()
    p = scenario.params
    cfg = p.lattice
    robots = scenario.robots
    by_id = {r.id: r for r in robots}
    m = RunMetrics(scenario.name, p.seed, mode, scenario.N)
    out = RunResult(m)
    clock = time.perf_counter

    t0 = clock()
    try:
        plan = ecbs_plan(scenario.tasks, scenario.grid, robots, cfg, w=p.w, time_limit=budget.mapf_time,
                         max_nodes=budget.mapf_nodes)
    except MapfFailure as exc:
        m.times["path_planning"] = clock() - t0
        m.reason = f"{exc.reason}: {exc}"
        return _finish(out)
    m.times["path_planning"] = clock() - t0
    out.plan = plan
    m.sum_of_costs, m.mapf_lower_bound, m.makespan = plan.sum_of_costs, plan.lower_bound, plan.M
    ordered = [by_id[rid] for rid in plan.robot_ids]
    out.discrete_report = verify_discrete(plan, scenario.grid, ordered, cfg.D, cfg.delta_T, cfg.origin,
                                          scenario.tasks)
    if not out.discrete_report.passed:
        m.stage, m.reason = "verification", "discrete plan failed verification"
        m.violations = len(out.discrete_report.violations)
        return _finish(out)

    m.stage = "corridor"
    t0 = clock()
    try:
        out.refs = [subdivide_path(path, p.h, cfg, ordered) for path in plan.paths]
        out.corridors = [build_corridor(scenario.grid, sp, r.radius, robot_id=r.id)
                         for sp, r in zip(out.refs, ordered)]
    except PlanningError as exc:
        m.times["corridor"] = clock() - t0
        m.reason = str(exc)
        return _finish(out)
    m.times["corridor"] = clock() - t0
    m.H = out.refs[0].H

    m.stage = "optimization"
    t0 = clock()
    ids = [r.id for r in ordered]
    L = None
    if mode == "coupled":
        groups = [tuple(ids)]
    else:
        L = find_triples(out.refs, cfg.D, ids)
        groups = assign_priorities(L, ids)
        if mode == "prioritized-random":
            groups = random_groups(ids, [len(g) for g in groups], p.seed)
    res = solve_groups(groups, ordered, out.refs, out.corridors, _weights(scenario), budget.solver_options(),
                       budget.sep_fractions)
    m.times["optimization"] = clock() - t0
    # diagnostics the mode itself does not need stay outside the timed region
    m.triples = len(L if L is not None else find_triples(out.refs, cfg.D, ids))
    m.four_way_events = len(four_way_events(out.refs, cfg.D, ids))
    m.groups = [list(g) for g in groups]
    m.group_status = [o.status for o in res.outcomes]
    m.solver_iterations = sum(int(o.diagnostics.get("inner_iterations", 0)) for o in res.outcomes)
    if isinstance(res, Failure):
        m.reason = f"group {list(res.group)}: {res.reason}"
        return _finish(out)
    out.trajectories = res
    m.costs = [float(c) for c in res.costs]
    m.total_cost = res.total_cost

    m.stage = "verification"
    t0 = clock()
    out.report = verify_trajectories(res.robot_ids, res.states, res.inputs, res.dt, scenario.grid, ordered,
                                     scenario.tasks)
    m.times["verification"] = clock() - t0
    m.min_separation = _finite_or_none(out.report.min_separation())
    m.min_clearance = _finite_or_none(min(r["min_clearance"] for r in out.report.robots.values()))
    m.violations = len(out.report.violations)
    if not out.report.passed:
        m.reason = f"{m.violations} verifier violation(s); first: {out.report.violations[0]}"
        return _finish(out)
    m.success, m.stage = True, "done"
    return _finish(out)


def _finite_or_none(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def _finish(out: RunResult) -> RunResult:
    m = out.metrics
    for k in ("path_planning", "corridor", "optimization"):
        m.times.setdefault(k, 0.0)
    m.times["total"] = m.times["path_planning"] + m.times["corridor"] + m.times["optimization"]
    return out


# -- files -------------------------------------------------------------------------

def trajectories_to_dict(scenario: Scenario, traj: TeamTrajectories, mode: str) -> dict:
    robots = []
    for a, rid in enumerate(traj.robot_ids):
        u = np.vstack([traj.inputs[a], np.zeros((1, 2))])
        t = np.arange(traj.H + 1) * traj.dt
        rows = np.column_stack([t, traj.states[a], u])
        robots.append({"id": rid, "cost": float(traj.costs[a]), "rows": rows.tolist()})
    return {"schema": TRAJECTORY_SCHEMA, "mode": mode, "dt": traj.dt,
            "columns": ["t", "x", "y", "theta", "v", "omega"],
            "groups": [list(g) for g in traj.groups], "robots": robots, "scenario": scenario.to_dict()}


def load_trajectories(text: str):
    """Parse a trajectory file into (scenario, robot_ids, states, inputs, dt).

    Inputs on row j act over [t_j, t_(j+1)); the final row's inputs are unused.
    """
    d = json.loads(text)
    if d.get("schema") != TRAJECTORY_SCHEMA:
        raise ValueError(f"unsupported trajectory schema {d.get('schema')!r}, expected {TRAJECTORY_SCHEMA!r}")
    sc = Scenario.from_dict(d["scenario"])
    ids = [r["id"] for r in d["robots"]]
    rows = np.array([r["rows"] for r in d["robots"]], dtype=float)
    return sc, ids, rows[:, :, 1:4], rows[:, :-1, 4:6], float(d["dt"])


def trajectories_csv(traj: TeamTrajectories) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["robot", "step", "t", "x", "y", "theta", "v", "omega"])
    for a, rid in enumerate(traj.robot_ids):
        for j in range(traj.H + 1):
            v, om = traj.inputs[a, j] if j < traj.H else (0.0, 0.0)
            w.writerow([rid, j, repr(j * traj.dt), *(repr(float(c)) for c in traj.states[a, j]),
                        repr(float(v)), repr(float(om))])
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_run(result: RunResult, scenario: Scenario, out_dir, figure: bool = True) -> dict[str, Path]:
    """Write metrics, timings, trajectories and (optionally) an SVG figure into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    files = {"metrics": out / "metrics.json", "timings": out / "timings.json"}
    files["metrics"].write_text(_dump(m.to_dict(timings=False)))
    files["timings"].write_text(_dump(m.times))
    if result.trajectories is not None:
        files["trajectories"] = out / "trajectories.json"
        files["trajectories_csv"] = out / "trajectories.csv"
        files["trajectories"].write_text(_dump(trajectories_to_dict(scenario, result.trajectories, m.mode)))
        files["trajectories_csv"].write_text(trajectories_csv(result.trajectories))
    if result.report is not None:
        files["verification"] = out / "verification.json"
        files["verification"].write_text(result.report.to_json())
    if figure and result.plan is not None:
        from .plotting import plot_run
        files["figure"] = out / "run.svg"
        plot_run(scenario, result, files["figure"])
    return files
