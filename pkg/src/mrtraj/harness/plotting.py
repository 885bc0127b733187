"""Static SVG figures for single runs and benchmark summaries."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Circle, Rectangle  # noqa: E402

# fixed ids and no timestamp so repeated runs write identical SVG files
plt.rcParams["svg.hashsalt"] = "mrtraj"
_SVG_META = {"Date": None, "Creator": "mrtraj"}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)


def _draw_map(ax, grid) -> None:
    b = grid.bounds
    ax.imshow(grid.cells, origin="lower", extent=(b.xmin, b.xmax, b.ymin, b.ymax), cmap="Greys",
              vmin=0, vmax=1.6, interpolation="nearest")
    ax.set_xlim(b.xmin, b.xmax)
    ax.set_ylim(b.ymin, b.ymax)
    ax.set_aspect("equal")


def plot_run(scenario, result, path, show_corridors: bool = True) -> None:
    """Map, corridors, lattice paths and optimised trajectories of one run."""
    fig, ax = plt.subplots(figsize=(6, 6 * scenario.grid.height_m / scenario.grid.width_m))
    _draw_map(ax, scenario.grid)
    colors = plt.get_cmap("tab20")
    ids = list(result.plan.robot_ids)
    if show_corridors and result.corridors:
        for a, c in enumerate(result.corridors):
            seen = set()
            for r in c.rects:
                if id(r) in seen:
                    continue
                seen.add(id(r))
                ax.add_patch(Rectangle((r.xmin, r.ymin), r.xmax - r.xmin, r.ymax - r.ymin, fill=True,
                                       alpha=0.06, color=colors(a % 20), lw=0))
    for a, sp in enumerate(result.refs):
        ax.plot(sp.poses[:, 0], sp.poses[:, 1], ls="--", lw=0.8, color=colors(a % 20))
    traj = result.trajectories
    if traj is not None:
        for a, rid in enumerate(traj.robot_ids):
            xy = traj.states[a, :, :2]
            ax.plot(xy[:, 0], xy[:, 1], lw=1.5, color=colors(a % 20), label=f"robot {rid}")
            rad = next(r.radius for r in scenario.robots if r.id == rid)
            ax.add_patch(Circle(tuple(xy[0]), rad, fill=False, color=colors(a % 20)))
            ax.add_patch(Circle(tuple(xy[-1]), rad, fill=True, alpha=0.5, color=colors(a % 20)))
    m = result.metrics
    ax.set_title(f"{scenario.name} | {m.mode} | {'ok' if m.success else 'failed: ' + m.stage}", fontsize=9)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if traj is not None and len(ids) <= 8:
        ax.legend(fontsize=7, loc="upper right")
    _save(fig, path)


def _num(v) -> float:
    return float("nan") if v is None else float(v)


def plot_bench(summary: list[dict], path) -> None:
    """Three panels over N: mean optimisation time (log), mean cost, success rate."""
    modes = sorted({r["mode"] for r in summary})
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for mode in modes:
        rows = sorted((r for r in summary if r["mode"] == mode), key=lambda r: r["N"])
        N = [r["N"] for r in rows]
        for ax, key in zip(axes, ("opt_time_mean", "cost_mean", "success_rate")):
            ax.plot(N, [_num(r[key]) for r in rows], marker="o", label=mode)
    axes[0].set_yscale("log")
    axes[0].set_ylabel("optimisation time [s]")
    axes[1].set_ylabel("total cost (successful runs)")
    axes[2].set_ylabel("success rate")
    axes[2].set_ylim(-0.05, 1.05)
    for ax in axes:
        ax.set_xlabel("number of robots N")
        ax.set_xscale("log", base=2)
        ax.grid(True, alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)

