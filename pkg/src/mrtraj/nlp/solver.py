"""Augmented-Lagrangian solver for :class:`TrajOptProblem`.

Equalities (dynamics) and inequalities (separation) enter a
Powell-Hestenes-Rockafellar augmented Lagrangian; corridor and input limits
stay as simple bounds.  Each subproblem is minimised either by a projected
Newton method on the sparse merit Hessian (default) or by L-BFGS-B.  After
the outer loop reaches the tolerance band a few Gauss-Newton projections
onto the dynamics manifold tighten the equality residual.
"""
from __future__ import annotations

import time
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import MatrixRankWarning, splu, spsolve

from .problem import SeparationSet, TrajOptProblem

INNER_METHODS = ("newton", "lbfgsb")


@dataclass
class SolverOptions:
    eq_tol: float = 1e-5
    ineq_tol: float = 1e-4
    inner_gtol: float = 1e-6
    inner: str = "newton"
    max_outer: int = 50
    max_inner: int = 3000
    # total inner iterations allowed per solve; this, not the clock, is the
    # binding limit so that results are reproducible
    iteration_budget: int = 1000
    time_budget: float = 30.0
    mu0: float = 10.0
    mu_growth: float = 10.0
    mu_max: float = 1e8
    polish_steps: int = 3
    cost_slack: float = 1e-6
    prune_margin: float = 1e-3
    # separation constraints farther than rsum + screen_distance from being
    # active are left out of the inner problem until an iterate approaches them
    screen_distance: float = 0.5
    # convergence is declared at this fraction of the tolerances so that
    # checks in distance units (rather than the scaled form) also pass
    target_fraction: float = 0.5

    def __post_init__(self):
        if self.inner not in INNER_METHODS:
            raise ValueError(f"inner must be one of {INNER_METHODS}, got {self.inner!r}")


@dataclass
class OptimizedTrajectory:
    robot_ids: list[int]
    states: np.ndarray    # (G, H+1, 3)
    inputs: np.ndarray    # (G, H, 2)
    dt: float
    cost: float
    costs: np.ndarray     # per robot
    diagnostics: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return self.states.shape[1] - 1

    def positions(self, g: int) -> np.ndarray:
        return self.states[g, :, :2]


@dataclass
class Infeasible:
    """Solve failed; ``reason`` is "budget" or "stagnation"."""

    reason: str
    max_eq_violation: float
    max_ineq_violation: float
    residual_profile: list
    diagnostics: dict = field(default_factory=dict)

    def __bool__(self):
        return False


class TrajectorySolver(ABC):
    @abstractmethod
    def solve(self, problem: TrajOptProblem, x0: np.ndarray | None = None) -> OptimizedTrajectory | Infeasible:
        ...


def violations(problem: TrajOptProblem, x: np.ndarray) -> tuple[float, float]:
    h = problem.dynamics_residual(x)
    g = problem.separation_values(x)
    eq = float(np.abs(h).max()) if h.size else 0.0
    ineq = float(np.maximum(-g, 0.0).max()) if g.size else 0.0
    return eq, ineq


class _Merit:
    """Augmented Lagrangian for fixed multipliers and penalty."""

    def __init__(self, problem: TrajOptProblem, lam: np.ndarray, mu: float, sep: SeparationSet, nu: np.ndarray):
        self.problem, self.lam, self.mu, self.sep, self.nu = problem, lam, mu, sep, nu

    def __call__(self, x: np.ndarray):
        pr, mu = self.problem, self.mu
        f, grad = pr.objective_and_grad(x)
        h = pr.dynamics_residual(x).ravel()
        self.yh = self.lam + mu * h
        f += self.lam @ h + 0.5 * mu * (h @ h)
        grad = grad + pr.dynamics_jac_T(x, self.yh)
        self.shifted = np.zeros(0)
        if self.sep.size:
            gs = pr.separation_values(x, self.sep)
            self.shifted = np.maximum(self.nu - mu * gs, 0.0)
            f += (self.shifted @ self.shifted - self.nu @ self.nu) / (2 * mu)
            grad = grad + pr.separation_jac_T(x, -self.shifted, self.sep)
        return f, grad

    def hessian(self, x: np.ndarray) -> sp.csc_matrix:
        """Objective Hessian, exact dynamics terms and Gauss-Newton separation terms.

        Must be called right after ``__call__`` at the same point.
        """
        pr, mu = self.problem, self.mu
        parts = [pr.objective_hessian_triplets(), pr.dynamics_curvature_triplets(x, self.yh),
                 pr.dynamics_gram_triplets(x, mu)]
        on = self.shifted > 0
        if on.any():
            cols, vals = pr.separation_rows(x, self.sep.subset(on))
            parts.append((np.repeat(cols, 8, axis=1).ravel(), np.tile(cols, 8).ravel(),
                          mu * (vals[:, :, None] * vals[:, None, :]).ravel()))
        r, c, v = (np.concatenate(t) for t in zip(*parts))
        # one conversion sums the duplicates, cheaper than chained sparse products and sums
        return sp.csc_matrix((v, (r, c)), shape=(pr.n, pr.n))


def _lu(A: sp.csc_matrix):
    return splu(A, permc_spec="COLAMD", options={"SymmetricMode": True})


def _newton_inner(merit: _Merit, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, max_iter: int,
                  gtol: float) -> tuple[np.ndarray, int]:
    """Projected Newton with an epsilon-active set and Armijo backtracking along the projection arc."""
    F, grad = merit(x)
    it = 0
    while it < max_iter:
        pg = x - np.clip(x - grad, lo, hi)
        pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
        if pg_norm <= gtol:
            break
        eps = min(1e-3, pg_norm)
        active = ((x <= lo + eps) & (grad > 0)) | ((x >= hi - eps) & (grad < 0))
        free = ~active
        Hfull = merit.hessian(x)
        Hff = Hfull if free.all() else Hfull[:, free][free]
        gf = grad[free]
        d = np.zeros_like(x)
        delta = 0.0
        scale = max(float(np.abs(Hff.diagonal()).max(initial=1.0)), 1.0)
        for _ in range(10):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MatrixRankWarning)
                A = Hff if delta == 0.0 else Hff + delta * sp.identity(Hff.shape[0], format="csc")
                try:
                    step = _lu(A).solve(-gf) if gf.size else gf
                except RuntimeError:  # exactly singular
                    step = np.full_like(gf, np.nan)
            if np.all(np.isfinite(step)) and gf @ step < -1e-16 * (gf @ gf):
                break
            delta = max(10 * delta, 1e-8 * scale)
        else:
            step = -gf
        d[free] = step
        d[active] = -grad[active]
        alpha, accepted = 1.0, False
        for _ in range(40):
            xn = np.clip(x + alpha * d, lo, hi)
            Fn, gn = merit(xn)
            if Fn <= F + 1e-4 * (grad @ (xn - x)):
                accepted = True
                break
            alpha *= 0.5
        it += 1
        if not accepted:
            merit(x)
            break
        dx = float(np.abs(xn - x).max())
        x, F, grad = xn, Fn, gn
        if dx <= 1e-14:
            break
    return x, it


class AugmentedLagrangianSolver(TrajectorySolver):
    def __init__(self, options: SolverOptions | None = None):
        self.options = options or SolverOptions()

    def solve(self, problem, x0=None):
        opt = self.options
        eq_target = opt.target_fraction * opt.eq_tol
        ineq_target = opt.target_fraction * opt.ineq_tol
        t_start = time.perf_counter()
        lo, hi = problem.bounds()
        x_init = problem.initial_point() if x0 is None else np.asarray(x0, dtype=float)
        if x_init.shape != (problem.n,):
            raise ValueError(f"initial point must have {problem.n} entries, got {x_init.shape}")
        init_eq, init_ineq = violations(problem, x_init)
        init_feasible = bool(init_eq <= eq_target and init_ineq <= ineq_target
                             and np.all(x_init >= lo - 1e-12) and np.all(x_init <= hi + 1e-12))
        init_cost = problem.objective(x_init)

        full = problem.separation.subset(~problem.prunable_separations(opt.prune_margin))
        x = np.clip(x_init, lo, hi)
        lam = np.zeros(problem.G * problem.H * 3)
        nu_full = np.zeros(full.size)
        working = self._near(problem, x, full, np.zeros(full.size, dtype=bool))
        mu = opt.mu0
        profile = []
        inner_total = 0
        prev_viol = np.inf
        status = "budget"

        outer = 0
        for outer in range(1, opt.max_outer + 1):
            remaining = opt.time_budget - (time.perf_counter() - t_start)
            iters_left = opt.iteration_budget - inner_total
            if remaining <= 0 or iters_left <= 0:
                break
            sep, nu = full.subset(working), nu_full[working]
            merit = _Merit(problem, lam, mu, sep, nu)
            cap = min(opt.max_inner, iters_left)
            if opt.inner == "newton":
                x, nit = _newton_inner(merit, x, lo, hi, cap, opt.inner_gtol)
            else:
                res = minimize(merit, x, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                               options={"maxiter": cap, "gtol": opt.inner_gtol, "ftol": 1e-15, "maxcor": 20})
                x, nit = res.x, int(res.nit)
            inner_total += nit
            h = problem.dynamics_residual(x).ravel()
            g_full = problem.separation_values(x, full) if full.size else np.zeros(0)
            eq = float(np.abs(h).max()) if h.size else 0.0
            ineq = float(np.maximum(-g_full, 0.0).max()) if g_full.size else 0.0
            profile.append({"outer": outer, "mu": mu, "eq": eq, "ineq": ineq, "inner_iters": nit,
                            "objective": problem.objective(x), "working_set": int(working.sum())})
            grown = self._near(problem, x, full, working)
            added = bool((grown & ~working).any())
            if not added and eq <= 10 * eq_target and ineq <= ineq_target:
                x = self._polish(problem, x, lo, hi)
                eq2, ineq2 = violations(problem, x)
                if eq2 <= eq_target and ineq2 <= ineq_target:
                    status = "converged"
                    break
            lam = lam + mu * h
            if sep.size:
                nu_full[working] = np.maximum(nu - mu * g_full[working], 0.0)
            working = grown
            viol = max(eq, ineq)
            if viol > 0.25 * prev_viol:
                if mu >= opt.mu_max:
                    status = "stagnation"
                    break
                mu = min(mu * opt.mu_growth, opt.mu_max)
            prev_viol = viol

        eq, ineq = violations(problem, x)
        cost = problem.objective(x)
        diag = {"outer_iterations": outer, "inner_iterations": inner_total, "inner_method": opt.inner,
                "max_eq_violation": eq, "max_ineq_violation": ineq, "active_separations": int(full.size),
                "working_separations": int(working.sum()), "total_separations": int(problem.separation.size),
                "wall_time": time.perf_counter() - t_start, "status": status, "profile": profile,
                "initial_cost": init_cost, "initial_feasible": init_feasible}
        if status == "converged" and init_feasible and cost > init_cost + opt.cost_slack:
            x, cost, status = x_init, init_cost, "warm_start"
        elif status != "converged":
            if not init_feasible:
                return Infeasible(status, eq, ineq, profile, diag)
            x, cost, status = x_init, init_cost, "warm_start"
        diag["status"] = status
        Z, U = problem.unpack(x)
        return OptimizedTrajectory([r.id for r in problem.robots], Z, U.copy(), problem.dt, float(cost),
                                   problem.cost_per_robot(Z, U), diag)

    def _near(self, problem: TrajOptProblem, x: np.ndarray, full: SeparationSet,
              working: np.ndarray) -> np.ndarray:
        """Working set grown by every constraint within ``rsum + screen_distance`` at ``x``."""
        if full.size == 0:
            return working
        g = problem.separation_values(x, full)
        dist = np.sqrt(np.maximum(2 * full.rsum * g + full.rsum ** 2, 0.0))
        return working | (dist < full.rsum + self.options.screen_distance)

    def _polish(self, problem: TrajOptProblem, x: np.ndarray, lo, hi) -> np.ndarray:
        """Least-norm Gauss-Newton steps on the dynamics residual over non-bound variables."""
        opt = self.options
        for _ in range(opt.polish_steps):
            h = problem.dynamics_residual(x).ravel()
            if h.size == 0 or np.abs(h).max() <= 1e-3 * opt.eq_tol:
                break
            free = (x > lo + 1e-9) & (x < hi - 1e-9)
            J = problem.dynamics_jacobian(x)[:, free]
            JJt = (J @ J.T).tocsc() + sp.identity(J.shape[0], format="csc") * 1e-12
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MatrixRankWarning)
                y = spsolve(JJt, h)
            if not np.all(np.isfinite(y)):
                break
            step = np.zeros_like(x)
            step[free] = -(J.T @ y)
            x_new = np.clip(x + step, lo, hi)
            if np.abs(problem.dynamics_residual(x_new)).max() >= np.abs(h).max():
                break
            x = x_new
        return x


def solve(problem: TrajOptProblem, x0: np.ndarray | None = None,
          options: SolverOptions | None = None) -> OptimizedTrajectory | Infeasible:
    return AugmentedLagrangianSolver(options).solve(problem, x0)
