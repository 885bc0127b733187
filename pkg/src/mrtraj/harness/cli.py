"""Command line interface.

Every option can also be set through an environment variable named
``MRTRAJ_<COMMAND>_<OPTION>`` (for example ``MRTRAJ_PLAN_MODE=coupled``).
Explicit flags take precedence over environment variables, which take
precedence over defaults.
"""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click

from ..errors import ConfigurationError
from ..verifier import verify_trajectories
from ..workspace import load_map
from .bench import BenchConfig, bench as run_bench_suite
from .pipeline import INTRA_STEP_FRACTIONS, MODES, Budget, load_trajectories, run_pipeline, write_run
from .scenario import Params, Scenario, crossing_scenario, gen_warehouse, random_tasks_on_map


@click.group(context_settings={"auto_envvar_prefix": "MRTRAJ", "show_default": True})
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose: int):
    """Multi-robot trajectory planning on occupancy-grid maps."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--n", "n", type=int, default=4, show_envvar=True, help="Number of robots.")
@click.option("--seed", type=int, default=0, show_envvar=True)
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False), default=None, show_envvar=True,
              help="Sample tasks on this map instead of the warehouse.")
@click.option("--crossing", is_flag=True, help="Write the two-robot crossing example instead.")
@click.option("--out", type=click.Path(dir_okay=False), required=True, show_envvar=True)
def gen(n, seed, map_path, crossing, out):
    """Generate a scenario file."""
    try:
        if crossing:
            sc = crossing_scenario()
        elif map_path:
            sc = random_tasks_on_map(load_map(Path(map_path).read_text()), n, seed)
        else:
            sc = gen_warehouse(seed, n)
    except (ValueError, ConfigurationError) as exc:
        raise click.ClickException(str(exc))
    sc.save(out)
    click.echo(f"wrote {out} ({sc.name}, N={sc.N})")


@cli.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, dir_okay=False), default=None,
              show_envvar=True, help="Scenario JSON; without it a warehouse instance is generated.")
@click.option("--map", "map_path", type=click.Path(exists=True, dir_okay=False), default=None, show_envvar=True,
              help="Replace the scenario map, or sample tasks on it when no scenario is given.")
@click.option("--n", "n", type=int, default=4, show_envvar=True, help="Robots for generated scenarios.")
@click.option("--mode", type=click.Choice(MODES), default="prioritized", show_envvar=True)
@click.option("--w", type=float, default=None, show_envvar=True, help="ECBS suboptimality bound.")
@click.option("--D", "D", type=float, default=None, show_envvar=True, help="Lattice cell size [m].")
@click.option("--dt", type=float, default=None, show_envvar=True, help="Lattice edge duration [s].")
@click.option("--h", type=int, default=None, show_envvar=True, help="Sub-steps per lattice edge.")
@click.option("--seed", type=int, default=None, show_envvar=True)
@click.option("--budget", type=int, default=1000, show_envvar=True,
              help="Solver iteration budget per group.")
@click.option("--time-budget", type=float, default=60.0, show_envvar=True,
              help="Wall-clock guard per group [s].")
@click.option("--intra-step/--no-intra-step", default=True, show_envvar=True,
              help="Also enforce separation between timesteps.")
@click.option("--figure/--no-figure", default=True, show_envvar=True)
@click.option("--out", type=click.Path(file_okay=False), required=True, show_envvar=True)
def plan(scenario_path, map_path, n, mode, w, D, dt, h, seed, budget, time_budget, intra_step, figure, out):
    """Run the full pipeline and write metrics, trajectories and a figure."""
    try:
        if scenario_path:
            sc = Scenario.load(scenario_path)
            if map_path:
                sc = replace(sc, grid=load_map(Path(map_path).read_text()))
        elif map_path:
            sc = random_tasks_on_map(load_map(Path(map_path).read_text()), n, seed or 0)
        else:
            sc = gen_warehouse(seed or 0, n)
        changes = {k: v for k, v in (("w", w), ("D", D), ("delta_T", dt), ("h", h), ("seed", seed))
                   if v is not None}
        if changes:
            sc = sc.with_params(**changes)
        result = run_pipeline(sc, mode, make_budget(budget, time_budget, intra_step))
    except (ValueError, ConfigurationError) as exc:
        raise click.ClickException(str(exc))
    files = write_run(result, sc, out, figure=figure)
    m = result.metrics
    status = "success" if m.success else f"FAILED at {m.stage}: {m.reason}"
    click.echo(f"{sc.name} mode={mode}: {status}")
    if m.total_cost is not None:
        click.echo(f"total cost {m.total_cost:.6f}, groups {m.groups}")
    for k, p in files.items():
        click.echo(f"  {k}: {p}")
    sys.exit(0 if m.success else 1)


def make_budget(iterations: int, time_budget: float, intra_step: bool) -> Budget:
    fractions = INTRA_STEP_FRACTIONS if intra_step else (0.0,)
    return Budget(solver_iterations=iterations, solver_time=time_budget, sep_fractions=fractions)


@cli.command()
@click.argument("trajectory_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False), default=None, show_envvar=True,
              help="Write the verification report JSON here.")
def verify(trajectory_file, report):
    """Re-check a trajectory file; exit code 0 on pass, 1 on any violation."""
    try:
        sc, ids, states, inputs, dt = load_trajectories(Path(trajectory_file).read_text())
        by_id = {r.id: r for r in sc.robots}
        rep = verify_trajectories(ids, states, inputs, dt, sc.grid, [by_id[i] for i in ids], sc.tasks)
    except (ValueError, KeyError) as exc:
        raise click.ClickException(f"cannot read {trajectory_file}: {exc}")
    if report:
        Path(report).write_text(rep.to_json())
    if rep.passed:
        click.echo(f"PASS: {len(ids)} robots, min separation {rep.min_separation():.4f} m")
        sys.exit(0)
    click.echo(f"FAIL: {len(rep.violations)} violation(s)")
    for v in rep.violations[:20]:
        click.echo(f"  {v}")
    sys.exit(1)


@cli.command()
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--out", type=click.Path(file_okay=False), required=True, show_envvar=True)
@click.option("--workers", type=int, default=None, show_envvar=True, help="Parallel worker processes.")
@click.option("--figure/--no-figure", default=True, show_envvar=True)
def bench(config_file, out, workers, figure):
    """Run the benchmark described by a JSON config file (defaults if omitted)."""
    data = json.loads(Path(config_file).read_text()) if config_file else {}
    if workers is not None:
        data["workers"] = workers
    try:
        cfg = BenchConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise click.ClickException(f"bad bench config: {exc}")
    res = run_bench_suite(cfg, out, figure)
    for row in res["summary"]["per_mode"]:
        t = row["opt_time_mean"]
        click.echo(f"N={row['N']:>3} {row['mode']:<19} success {row['successes']}/{row['trials']}"
                   f"  opt time {'n/a' if t is None else f'{t:.3f} s'}")
    for g in res["summary"]["cost_gap"]:
        if g["instances"]:
            click.echo(f"N={g['N']:>3} cost gap {g['mean_gap_pct']:.3f}% over {g['instances']} instances")
    click.echo(f"wrote results to {out}")


def main():
    cli(prog_name="mrtraj")


if __name__ == "__main__":
    main()
