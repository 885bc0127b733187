"""Direct transcription of the multi-robot trajectory optimisation problem.

Decision variables per robot are the interior states ``z^1 .. z^(H-1)``
(x, y, theta) and the inputs ``u^0 .. u^(H-1)`` (v, omega); the end states
are pinned to the start and goal poses.  Position bounds come from the safe
corridor and input bounds from the robot limits, so both are simple bounds.
Dynamics are equalities, robot-robot separation is a smooth inequality
``(|p_a - p_b|^2 - rsum^2) / (2 rsum) >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from ..corridor import SafeCorridor, SampledPath
from ..workspace import RobotModel

DEFAULT_P = np.diag([1.0, 1.0])
DEFAULT_Q = np.diag([1.0, 1.0, 0.1])


def discrete_dynamics(z, u, dt: float):
    """Forward-Euler step of the unicycle; heading is not wrapped."""
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    th = z[..., 2]
    out = np.empty(np.broadcast_shapes(z.shape[:-1], u.shape[:-1]) + (3,), dtype=float)
    out[..., 0] = z[..., 0] + dt * u[..., 0] * np.cos(th)
    out[..., 1] = z[..., 1] + dt * u[..., 0] * np.sin(th)
    out[..., 2] = th + dt * u[..., 1]
    return out


@dataclass
class FixedTrajectory:
    """Optimised positions of a higher-priority robot, one row per timestep."""

    robot_id: int
    radius: float
    positions: np.ndarray


@dataclass
class Weights:
    P: np.ndarray = field(default_factory=lambda: DEFAULT_P.copy())
    Q: np.ndarray = field(default_factory=lambda: DEFAULT_Q.copy())

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        for name, m, n in (("P", self.P, 2), ("Q", self.Q, 3)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")


@dataclass
class SeparationSet:
    """Vectorised description of the separation inequalities.

    Side A of constraint ``c`` is robot ``a[c]`` interpolated between steps
    ``j[c]`` and ``j[c] + 1`` with weight ``alpha[c]``.  Side B is either
    robot ``b[c]`` at the same instant, or (``b[c] == -1``) the fixed point
    ``fixed_xy[c]``.
    """

    a: np.ndarray
    b: np.ndarray
    j: np.ndarray
    alpha: np.ndarray
    rsum: np.ndarray
    fixed_xy: np.ndarray
    fixed_id: np.ndarray

    @property
    def size(self) -> int:
        return int(self.a.size)

    def subset(self, mask: np.ndarray) -> "SeparationSet":
        return SeparationSet(self.a[mask], self.b[mask], self.j[mask], self.alpha[mask],
                             self.rsum[mask], self.fixed_xy[mask], self.fixed_id[mask])


class TrajOptProblem:
    def __init__(self, robots: Sequence[RobotModel], refs: Sequence[SampledPath],
                 corridors: Sequence[SafeCorridor], weights: Weights | None = None,
                 fixed: Sequence[FixedTrajectory] = (), sep_fractions: Sequence[float] = (0.0,)):
        if not robots:
            raise ValueError("group must contain at least one robot")
        if not (len(robots) == len(refs) == len(corridors)):
            raise ValueError("robots, references and corridors must align")
        H = refs[0].H
        for r, c in zip(refs, corridors):
            if r.H != H or c.H != H:
                raise ValueError(f"all references and corridors must share H={H}")
        for f in fixed:
            if f.positions.shape != (H + 1, 2):
                raise ValueError(f"fixed trajectory of robot {f.robot_id} must have shape {(H + 1, 2)}")
        dts = {r.delta_t for r in refs}
        if len(dts) != 1:
            raise ValueError("references must share delta_t")
        self.robots = list(robots)
        self.refs = list(refs)
        self.corridors = list(corridors)
        self.weights = weights or Weights()
        self.fixed = list(fixed)
        self.sep_fractions = tuple(sep_fractions)
        self.H = H
        self.dt = dts.pop()
        self.G = len(robots)
        self.nz = 3 * (H - 1)
        self.nu = 2 * H
        self.nvar_robot = self.nz + self.nu
        self.n = self.G * self.nvar_robot
        self.ref_poses = np.stack([r.poses for r in refs])           # (G, H+1, 3)
        self.ref_inputs = np.stack([r.inputs for r in refs])         # (G, H, 2)
        self.starts = self.ref_poses[:, 0, :].copy()
        self.goals = self.ref_poses[:, -1, :].copy()
        self.position_boxes, self.segment_seeded = self._position_boxes()
        self.separation = self._separation_set()
        self._hess_f = None
        self._dyn_pat = None

    # -- layout -------------------------------------------------------------------

    def _position_boxes(self):
        """Bounds for z^1..z^(H-1): S^j, intersected with S^(j+1) when the reference allows.

        The intersection keeps every Euler segment inside one rectangle.
        """
        boxes = np.zeros((self.G, self.H - 1, 4))
        seeded = np.ones((self.G, self.H - 1), dtype=bool)
        for g, (c, ref) in enumerate(zip(self.corridors, self.refs)):
            for j in range(1, self.H):
                cur, nxt = c.rect(j), c.rect(j + 1)
                x, y = ref.poses[j, :2]
                box = cur
                if nxt.contains(x, y):
                    box = cur.intersection(nxt)
                else:
                    seeded[g, j - 1] = False
                boxes[g, j - 1] = box.as_list()
        return boxes, seeded

    def _separation_set(self) -> SeparationSet:
        H = self.H
        samples = []
        for alpha in self.sep_fractions:
            if alpha == 0.0:
                samples.extend((j, 0.0) for j in range(1, H + 1))
            else:
                samples.extend((j, alpha) for j in range(H))
        samples.sort()
        sj = np.array([s[0] for s in samples], dtype=int)
        sa = np.array([s[1] for s in samples], dtype=float)
        parts = []  # (a, b, j, alpha, rsum, fixed_xy, fixed_id)
        for a in range(self.G):
            for b in range(a + 1, self.G):
                rs = self.robots[a].radius + self.robots[b].radius
                parts.append((np.full(sj.size, a), np.full(sj.size, b), sj, sa, np.full(sj.size, rs),
                              np.zeros((sj.size, 2)), np.full(sj.size, -1)))
        for a in range(self.G):
            for f in self.fixed:
                rs = self.robots[a].radius + f.radius
                p0 = f.positions[sj]
                p1 = f.positions[np.minimum(sj + 1, H)]
                xy = (1 - sa)[:, None] * p0 + sa[:, None] * p1
                parts.append((np.full(sj.size, a), np.full(sj.size, -1), sj, sa, np.full(sj.size, rs),
                              xy, np.full(sj.size, f.robot_id)))
        if not parts:
            e = np.zeros(0)
            return SeparationSet(e.astype(int), e.astype(int), e.astype(int), e, e, np.zeros((0, 2)),
                                 e.astype(int))
        cols = [np.concatenate(c) for c in zip(*parts)]
        return SeparationSet(cols[0].astype(int), cols[1].astype(int), cols[2].astype(int), cols[3],
                             cols[4], cols[5], cols[6].astype(int))

    def unpack(self, x: np.ndarray):
        """Full state (G, H+1, 3) and input (G, H, 2) arrays for a variable vector."""
        X = np.asarray(x, dtype=float).reshape(self.G, self.nvar_robot)
        Z = np.empty((self.G, self.H + 1, 3))
        Z[:, 0] = self.starts
        Z[:, -1] = self.goals
        Z[:, 1:-1] = X[:, :self.nz].reshape(self.G, self.H - 1, 3)
        U = X[:, self.nz:].reshape(self.G, self.H, 2)
        return Z, U

    def pack(self, Z: np.ndarray, U: np.ndarray) -> np.ndarray:
        X = np.concatenate([Z[:, 1:-1].reshape(self.G, -1), U.reshape(self.G, -1)], axis=1)
        return X.ravel().copy()

    def initial_point(self) -> np.ndarray:
        return self.pack(self.ref_poses, self.ref_inputs)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full((self.G, self.nvar_robot), -np.inf)
        hi = np.full((self.G, self.nvar_robot), np.inf)
        for g, r in enumerate(self.robots):
            zl = lo[g, :self.nz].reshape(self.H - 1, 3)
            zh = hi[g, :self.nz].reshape(self.H - 1, 3)
            b = self.position_boxes[g]
            zl[:, 0], zl[:, 1], zh[:, 0], zh[:, 1] = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
            ul = lo[g, self.nz:].reshape(self.H, 2)
            uh = hi[g, self.nz:].reshape(self.H, 2)
            ul[:, 0], uh[:, 0] = -r.v_max, r.v_max
            ul[:, 1], uh[:, 1] = -r.omega_max, r.omega_max
        return lo.ravel(), hi.ravel()

    # -- objective -----------------------------------------------------------------

    def objective(self, x: np.ndarray) -> float:
        return self.objective_and_grad(x)[0]

    def objective_and_grad(self, x: np.ndarray):
        Z, U = self.unpack(x)
        P, Q = self.weights.P, self.weights.Q
        dU = U[:, 1:] - U[:, :-1]                      # j = 1..H-1
        dZ = Z[:, 1:] - self.ref_poses[:, 1:]          # j = 1..H
        PdU = dU @ P
        QdZ = dZ @ Q
        f = float(np.sum(PdU * dU) + np.sum(QdZ * dZ))
        gU = np.zeros_like(U)
        gU[:, 1:] += 2 * PdU
        gU[:, :-1] -= 2 * PdU
        gZ = np.zeros_like(Z)
        gZ[:, 1:] = 2 * QdZ
        return f, self.pack(gZ, gU)

    def cost_per_robot(self, Z: np.ndarray, U: np.ndarray) -> np.ndarray:
        P, Q = self.weights.P, self.weights.Q
        dU = U[:, 1:] - U[:, :-1]
        dZ = Z[:, 1:] - self.ref_poses[:, 1:]
        return np.einsum("gji,ik,gjk->g", dU, P, dU) + np.einsum("gji,ik,gjk->g", dZ, Q, dZ)

    # -- constraints ---------------------------------------------------------------

    def dynamics_residual(self, x: np.ndarray) -> np.ndarray:
        """``z^(j+1) - f(z^j, u^j)`` for j = 0..H-1, shape (G, H, 3)."""
        Z, U = self.unpack(x)
        return Z[:, 1:] - discrete_dynamics(Z[:, :-1], U, self.dt)

    def dynamics_jac_T(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``J_h(x)^T y`` for multipliers ``y`` shaped like the residual."""
        Z, U = self.unpack(x)
        y = np.asarray(y).reshape(self.G, self.H, 3)
        dt = self.dt
        th = Z[:, :-1, 2]
        v = U[:, :, 0]
        c, s = np.cos(th), np.sin(th)
        gZ = np.zeros_like(Z)
        gZ[:, 1:] += y
        gZ[:, :-1] -= y
        gZ[:, :-1, 2] += dt * v * (s * y[..., 0] - c * y[..., 1])
        gU = np.empty_like(U)
        gU[..., 0] = -dt * (c * y[..., 0] + s * y[..., 1])
        gU[..., 1] = -dt * y[..., 2]
        return self.pack(gZ, gU)

    def _sample_points(self, Z: np.ndarray, sep: SeparationSet):
        P = Z[..., :2]
        jn = np.minimum(sep.j + 1, self.H)
        al = sep.alpha[:, None]
        pa = (1 - al) * P[sep.a, sep.j] + al * P[sep.a, jn]
        pb = sep.fixed_xy.copy()
        rob = sep.b >= 0
        if rob.any():
            bb, jj, jnn = sep.b[rob], sep.j[rob], jn[rob]
            pb[rob] = (1 - al[rob]) * P[bb, jj] + al[rob] * P[bb, jnn]
        return pa, pb, jn

    def separation_values(self, x: np.ndarray, sep: SeparationSet | None = None) -> np.ndarray:
        sep = self.separation if sep is None else sep
        if sep.size == 0:
            return np.zeros(0)
        Z, _ = self.unpack(x)
        pa, pb, _ = self._sample_points(Z, sep)
        d = pa - pb
        return (np.sum(d * d, axis=1) - sep.rsum ** 2) / (2 * sep.rsum)

    def separation_jac_T(self, x: np.ndarray, y: np.ndarray, sep: SeparationSet | None = None) -> np.ndarray:
        sep = self.separation if sep is None else sep
        Z, U = self.unpack(x)
        gZ = np.zeros_like(Z)
        if sep.size:
            pa, pb, jn = self._sample_points(Z, sep)
            gp = (pa - pb) / sep.rsum[:, None] * np.asarray(y)[:, None]
            al = sep.alpha[:, None]
            rob = sep.b >= 0
            stride = self.H + 1
            # scatter (1-alpha) and alpha shares onto both endpoints of each side
            idx = [sep.a * stride + sep.j, sep.a * stride + jn,
                   sep.b[rob] * stride + sep.j[rob], sep.b[rob] * stride + jn[rob]]
            val = [(1 - al) * gp, al * gp, -(1 - al[rob]) * gp[rob], -al[rob] * gp[rob]]
            idx = np.concatenate(idx)
            val = np.concatenate(val)
            n = self.G * stride
            flat = gZ.reshape(n, 3)
            flat[:, 0] += np.bincount(idx, val[:, 0], minlength=n)
            flat[:, 1] += np.bincount(idx, val[:, 1], minlength=n)
        return self.pack(gZ, np.zeros_like(U))

    # -- sparse derivatives (second-order inner solver) ------------------------

    def _zcol(self, g, j, k):
        return g * self.nvar_robot + 3 * (j - 1) + k

    def _ucol(self, g, j, k):
        return g * self.nvar_robot + self.nz + 2 * j + k

    def objective_hessian(self) -> sp.csr_matrix:
        """Constant Hessian of the objective."""
        if self._hess_f is None:
            G, H = self.G, self.H
            P, Q = self.weights.P, self.weights.Q
            blocks = []
            D = sp.diags([-np.ones(H - 1), np.ones(H - 1)], [0, 1], shape=(H - 1, H)) if H > 1 \
                else sp.csr_matrix((0, H))
            Hu = 2 * sp.kron(D.T @ D, sp.csr_matrix(P))
            Hz = 2 * sp.kron(sp.identity(H - 1), sp.csr_matrix(Q))
            for _ in range(G):
                blocks.append(sp.block_diag([Hz, Hu]))
            self._hess_f = sp.block_diag(blocks, format="csr")
        return self._hess_f

    def objective_hessian_triplets(self):
        A = self.objective_hessian()
        return np.repeat(np.arange(self.n), np.diff(A.indptr)), A.indices, A.data

    def _dyn_pattern(self):
        """Index arrays of the dynamics Jacobian and curvature, fixed for the problem."""
        if self._dyn_pat is None:
            G, H = self.G, self.H
            g, j = np.meshgrid(np.arange(G), np.arange(H), indexing="ij")
            g, j = g.ravel(), j.ravel()
            base = (g * H + j) * 3
            nxt = j + 1 <= H - 1
            prv = j >= 1
            rows, cols, const = [], [], []
            for k in range(3):
                rows += [base[nxt] + k, base[prv] + k]
                cols += [self._zcol(g[nxt], j[nxt] + 1, k), self._zcol(g[prv], j[prv], k)]
                const += [np.ones(nxt.sum()), -np.ones(prv.sum())]
            rows += [base[prv], base[prv] + 1, base, base + 1, base + 2]
            cols += [self._zcol(g[prv], j[prv], 2)] * 2 + [self._ucol(g, j, 0), self._ucol(g, j, 0),
                                                           self._ucol(g, j, 1)]
            n_const = sum(c.size for c in const)
            rows, cols = np.concatenate(rows), np.concatenate(cols)
            order = np.lexsort((cols, rows))
            indptr = np.searchsorted(rows[order], np.arange(G * H * 3 + 1))
            gc, jc = g[prv], j[prv]
            zt, uv = self._zcol(gc, jc, 2), self._ucol(gc, jc, 0)
            crow, ccol = np.concatenate([zt, zt, uv]), np.concatenate([zt, uv, zt])
            corder = np.lexsort((ccol, crow))
            cptr = np.searchsorted(crow[corder], np.arange(self.n + 1))
            # entry pairs sharing a row, for the Gauss-Newton product J^T J
            L = np.diff(indptr)
            row_of = np.repeat(np.arange(L.size), L)
            cnt = L[row_of]
            e1 = np.repeat(np.arange(row_of.size), cnt)
            e2 = np.repeat(indptr[row_of], cnt) + np.arange(e1.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            self._dyn_pat = dict(g=g, j=j, prv=prv, const=np.concatenate(const), n_const=n_const, order=order,
                                 indices=cols[order], indptr=indptr, e1=e1, e2=e2, cg=gc, cj=jc, corder=corder,
                                 crows=crow[corder], cindices=ccol[corder], cptr=cptr)
        return self._dyn_pat

    def _dynamics_jacobian_data(self, x: np.ndarray) -> np.ndarray:
        pat = self._dyn_pattern()
        Z, U = self.unpack(x)
        g, j, prv, dt = pat["g"], pat["j"], pat["prv"], self.dt
        th = Z[g, j, 2]
        v = U[g, j, 0]
        c, s = np.cos(th), np.sin(th)
        vals = np.concatenate([pat["const"], dt * v[prv] * s[prv], -dt * v[prv] * c[prv],
                               -dt * c, -dt * s, np.full(c.size, -dt)])
        return vals[pat["order"]]

    def dynamics_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        """Sparse Jacobian of the flattened dynamics residual."""
        pat = self._dyn_pattern()
        return sp.csr_matrix((self._dynamics_jacobian_data(x), pat["indices"], pat["indptr"]),
                             shape=(self.G * self.H * 3, self.n))

    def dynamics_gram_triplets(self, x: np.ndarray, scale: float = 1.0):
        """``scale * J^T J`` of the dynamics Jacobian as unsummed (row, col, value) triplets."""
        pat = self._dyn_pattern()
        d = self._dynamics_jacobian_data(x)
        e1, e2, idx = pat["e1"], pat["e2"], pat["indices"]
        return idx[e1], idx[e2], scale * d[e1] * d[e2]

    def dynamics_curvature_triplets(self, x: np.ndarray, y: np.ndarray):
        pat = self._dyn_pattern()
        return pat["crows"], pat["cindices"], self._curvature_data(x, y)

    def dynamics_curvature(self, x: np.ndarray, y: np.ndarray) -> sp.csr_matrix:
        """``sum_i y_i * Hessian(h_i)`` for multipliers shaped like the residual."""
        pat = self._dyn_pattern()
        return sp.csr_matrix((self._curvature_data(x, y), pat["cindices"], pat["cptr"]), shape=(self.n, self.n))

    def _curvature_data(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        pat = self._dyn_pattern()
        Z, U = self.unpack(x)
        y = np.asarray(y).reshape(self.G, self.H, 3)
        g, j, dt = pat["cg"], pat["cj"], self.dt
        th = Z[g, j, 2]
        v = U[g, j, 0]
        c, s = np.cos(th), np.sin(th)
        yx, yy = y[g, j, 0], y[g, j, 1]
        tt = dt * v * (c * yx + s * yy)
        tv = dt * (s * yx - c * yy)
        return np.concatenate([tt, tv, tv])[pat["corder"]]

    def separation_rows(self, x: np.ndarray, sep: SeparationSet) -> tuple[np.ndarray, np.ndarray]:
        """Separation Jacobian as fixed-width rows: columns and values of shape (m, 8).

        Unused slots (fixed endpoints, the other side being a fixed point) hold
        column 0 and value 0.
        """
        Z, _ = self.unpack(x)
        pa, pb, jn = self._sample_points(Z, sep)
        gp = (pa - pb) / sep.rsum[:, None]
        al = sep.alpha
        rob = sep.b >= 0
        b = np.where(rob, sep.b, 0)
        robots = np.stack([sep.a, sep.a, b, b], axis=1)
        steps = np.stack([sep.j, jn, sep.j, jn], axis=1)
        wgt = np.stack([1 - al, al, -(1 - al), -al], axis=1)
        wgt[:, 2:] *= rob[:, None]
        wgt[(steps < 1) | (steps > self.H - 1)] = 0.0
        cols = np.where(wgt[..., None] != 0, self._zcol(robots[..., None], steps[..., None], np.arange(2)), 0)
        vals = wgt[..., None] * gp[:, None, :]
        return cols.reshape(-1, 8), vals.reshape(-1, 8)

    def separation_jacobian(self, x: np.ndarray, sep: SeparationSet | None = None) -> sp.csr_matrix:
        sep = self.separation if sep is None else sep
        if sep.size == 0:
            return sp.csr_matrix((0, self.n))
        cols, vals = self.separation_rows(x, sep)
        rows = np.repeat(np.arange(sep.size), 8)
        keep = vals.ravel() != 0
        return sp.csr_matrix((vals.ravel()[keep], (rows[keep], cols.ravel()[keep])), shape=(sep.size, self.n))

    def constraint_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        """Sparse Jacobian of [dynamics residual (flattened); separation values]."""
        return sp.vstack([self.dynamics_jacobian(x), self.separation_jacobian(x)], format="csr")

    def prunable_separations(self, margin: float = 1e-3) -> np.ndarray:
        """Mask of separation constraints that the position bounds make unviolable."""
        sep = self.separation
        keep = np.ones(sep.size, dtype=bool)
        if sep.size == 0:
            return ~keep
        full = np.zeros((self.G, self.H + 1, 4))
        full[:, 1:-1] = self.position_boxes
        full[:, 0, :2] = full[:, 0, 2:] = self.starts[:, :2]
        full[:, -1, :2] = full[:, -1, 2:] = self.goals[:, :2]
        jn = np.minimum(sep.j + 1, self.H)

        def sample_box(r, j, jn_, al):
            b0, b1 = full[r, j], full[r, jn_]
            inter = al > 0
            return np.where(inter[:, None],
                            np.column_stack([np.minimum(b0[:, 0], b1[:, 0]), np.minimum(b0[:, 1], b1[:, 1]),
                                             np.maximum(b0[:, 2], b1[:, 2]), np.maximum(b0[:, 3], b1[:, 3])]),
                            b0)

        ba = sample_box(sep.a, sep.j, jn, sep.alpha)
        bb = np.column_stack([sep.fixed_xy, sep.fixed_xy])
        rob = sep.b >= 0
        if rob.any():
            bb[rob] = sample_box(sep.b[rob], sep.j[rob], jn[rob], sep.alpha[rob])
        dx = np.maximum(np.maximum(bb[:, 0] - ba[:, 2], ba[:, 0] - bb[:, 2]), 0.0)
        dy = np.maximum(np.maximum(bb[:, 1] - ba[:, 3], ba[:, 1] - bb[:, 3]), 0.0)
        return np.hypot(dx, dy) > sep.rsum + margin

    def translated(self, dx: float, dy: float) -> "TrajOptProblem":
        refs = []
        for r in self.refs:
            poses = r.poses.copy()
            poses[:, 0] += dx
            poses[:, 1] += dy
            refs.append(SampledPath(poses, r.inputs.copy(), r.h, r.delta_t))
        fixed = [FixedTrajectory(f.robot_id, f.radius, f.positions + np.array([dx, dy])) for f in self.fixed]
        return TrajOptProblem(self.robots, refs, [c.translated(dx, dy) for c in self.corridors],
                              self.weights, fixed, self.sep_fractions)


def build_problem(group: Sequence[RobotModel], corridors: Sequence[SafeCorridor],
                  refs: Sequence[SampledPath], fixed: Sequence[FixedTrajectory] = (),
                  weights: Weights | None = None, sep_fractions: Sequence[float] = (0.0,)) -> TrajOptProblem:
    return TrajOptProblem(group, refs, corridors, weights, fixed, sep_fractions)
