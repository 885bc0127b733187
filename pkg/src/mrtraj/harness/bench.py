"""Benchmark over seeded warehouse instances: runtime, cost gap and success rate per N and mode."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .pipeline import INTRA_STEP_FRACTIONS, MODES, Budget, run_pipeline
from .scenario import gen_warehouse

RUN_COLUMNS = ["N", "seed", "mode", "success", "stage", "total_cost", "sum_of_costs", "mapf_lower_bound",
               "n_groups", "max_group", "solver_iterations", "min_separation", "min_clearance",
               "t_path_planning", "t_corridor", "t_optimization", "t_total", "reason"]


@dataclass
class BenchConfig:
    N: list = field(default_factory=lambda: [2, 4, 8, 16])
    trials: int = 10
    modes: list = field(default_factory=lambda: list(MODES))
    seed0: int = 0
    solver_iterations: int = 1000
    solver_time: float = 60.0
    mapf_nodes: int = 20000
    sep_fractions: list = field(default_factory=lambda: list(INTRA_STEP_FRACTIONS))
    workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench config keys: {sorted(unknown)}")
        cfg = cls(**d)
        bad = [m for m in cfg.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}; choose from {MODES}")
        if cfg.trials < 1 or not cfg.N:
            raise ValueError("need at least one trial and one N")
        return cfg

    @property
    def budget(self) -> Budget:
        return Budget(self.mapf_nodes, solver_iterations=self.solver_iterations, solver_time=self.solver_time,
                      sep_fractions=tuple(self.sep_fractions))


def _run_one(args) -> list[dict]:
    N, seed, modes, budget = args
    sc = gen_warehouse(seed, N)
    rows = []
    for mode in modes:
        m = run_pipeline(sc, mode, budget).metrics
        rows.append({
            "N": N, "seed": seed, "mode": mode, "success": m.success, "stage": m.stage,
            "total_cost": m.total_cost, "sum_of_costs": m.sum_of_costs, "mapf_lower_bound": m.mapf_lower_bound,
            "n_groups": len(m.groups), "max_group": max((len(g) for g in m.groups), default=0),
            "solver_iterations": m.solver_iterations, "min_separation": m.min_separation,
            "min_clearance": m.min_clearance, "t_path_planning": m.times["path_planning"],
            "t_corridor": m.times["corridor"], "t_optimization": m.times["optimization"],
            "t_total": m.times["total"], "reason": m.reason,
        })
    return rows


def run_bench(cfg: BenchConfig) -> list[dict]:
    jobs = [(N, cfg.seed0 + k, list(cfg.modes), cfg.budget) for N in cfg.N for k in range(cfg.trials)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(_run_one, jobs))
    else:
        parts = [_run_one(j) for j in jobs]
    return [r for p in parts for r in p]


def _mean(xs) -> float | None:
    return float(np.mean(xs)) if len(xs) else None


def _median(xs) -> float | None:
    return float(np.median(xs)) if len(xs) else None


def loglog_slope(N, t) -> float | None:
    """Least-squares slope of log(t) against log(N)."""
    pts = [(n, v) for n, v in zip(N, t) if v is not None and v > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def summarize(rows: list[dict]) -> dict:
    by = {}
    for r in rows:
        by.setdefault((r["N"], r["mode"]), []).append(r)
    per = []
    for (N, mode), rs in sorted(by.items()):
        ok = [r for r in rs if r["success"]]
        opt = [r["t_optimization"] for r in rs if r["stage"] not in ("mapf", "corridor")]
        per.append({
            "N": N, "mode": mode, "trials": len(rs), "successes": len(ok), "success_rate": len(ok) / len(rs),
            "opt_time_mean": _mean(opt), "opt_time_median": _median(opt),
            "total_time_mean": _mean([r["t_total"] for r in rs]),
            "cost_mean": _mean([r["total_cost"] for r in ok]), "cost_median": _median([r["total_cost"] for r in ok]),
        })
    gaps = []
    for N in sorted({r["N"] for r in rows}):
        pairs = {}
        for r in rows:
            if r["N"] == N and r["success"] and r["mode"] in ("coupled", "prioritized"):
                pairs.setdefault(r["seed"], {})[r["mode"]] = r["total_cost"]
        both = [(v["prioritized"], v["coupled"]) for v in pairs.values() if len(v) == 2]
        if not both:
            gaps.append({"N": N, "instances": 0, "mean_ratio": None, "mean_gap_pct": None})
            continue
        pc, cc = np.array(both).T
        per_inst = [100.0 * (p - c) / c if c > 0 else 0.0 for p, c in both]
        gaps.append({"N": N, "instances": len(both), "mean_prioritized_cost": float(pc.mean()),
                     "mean_coupled_cost": float(cc.mean()), "mean_ratio": float(pc.mean() / cc.mean())
                     if cc.mean() > 0 else 1.0, "mean_gap_pct": float(np.mean(per_inst))})
    slopes = {}
    for mode in sorted({r["mode"] for r in rows}):
        pm = sorted((p for p in per if p["mode"] == mode), key=lambda p: p["N"])
        slopes[mode] = loglog_slope([p["N"] for p in pm], [p["opt_time_mean"] for p in pm])
    return {"per_mode": per, "cost_gap": gaps, "opt_time_loglog_slope": slopes}


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_bench(rows: list[dict], summary: dict, out_dir, figure: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"csv": out / "bench_runs.csv", "json": out / "bench_summary.json"}
    with open(files["csv"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RUN_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else _clean(r[k])) for k in RUN_COLUMNS})
    files["json"].write_text(json.dumps(summary, indent=1, sort_keys=True, default=_clean) + "\n")
    if figure:
        from .plotting import plot_bench
        files["svg"] = out / "bench.svg"
        plot_bench(summary["per_mode"], files["svg"])
    return files


def bench(cfg: BenchConfig, out_dir=None, figure: bool = True) -> dict:
    rows = run_bench(cfg)
    summary = summarize(rows)
    if out_dir is not None:
        write_bench(rows, summary, out_dir, figure)
    return {"rows": rows, "summary": summary}
