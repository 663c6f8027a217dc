"""Convex QP container and an operator-splitting (ADMM) solver.

Problems have the form

    minimize    0.5 z'Pz + q'z + offset
    subject to  l <= A z <= u

with equality rows encoded as ``l_i == u_i``.  The solver follows the
usual OSQP recipe: Ruiz equilibration, relaxed ADMM with a cached
factorization, adaptive step size, primal infeasibility detection from
dual-iterate differences, and an optional active-set polishing step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
import scipy.linalg as sla
from scipy import sparse

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_SCALE = 1e3


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        d = self.q.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, d)
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        nc = self.A.shape[0]
        if self.P.shape != (d, d):
            raise ValueError(f"P must be {d}x{d}, got {self.P.shape}")
        if self.l.size != nc or self.u.size != nc:
            raise ValueError(f"bounds must have length {nc}")
        for name in ("P", "q", "A"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if np.any(np.isnan(self.l)) or np.any(np.isnan(self.u)):
            raise ValueError("bounds contain NaN")
        if not np.allclose(self.P, self.P.T, rtol=0, atol=1e-12):
            raise ValueError("P must be symmetric")

    @property
    def n_vars(self) -> int:
        return self.q.size

    @property
    def n_cons(self) -> int:
        return self.l.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.P @ z + self.q @ z + self.offset)


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    dual: np.ndarray = field(repr=False, default=None)
    polished: bool = False


@dataclass
class SolverSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_prim_inf: float = 1e-5
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    adaptive_rho_tolerance: float = 5.0
    check_every: int = 10
    scaling_iters: int = 10
    polish: bool = True
    polish_delta: float = 1e-9
    polish_refine_iters: int = 25


def kkt_residuals(prob: QpProblem, z, dual):
    """Return ``(primal, dual)`` residuals in the infinity norm.

    The primal residual is the worst violation of ``l <= A z <= u``; the
    dual residual is ``||P z + q + A' dual||``.
    """
    z = np.asarray(z, dtype=float).ravel()
    dual = np.asarray(dual, dtype=float).ravel()
    if z.size != prob.n_vars or dual.size != prob.n_cons:
        raise ValueError("dimension mismatch between problem and point")
    Az = prob.A @ z
    viol = np.maximum(prob.l - Az, 0.0) if prob.n_cons else np.zeros(0)
    viol = np.maximum(viol, Az - prob.u) if prob.n_cons else viol
    r_prim = float(np.max(viol, initial=0.0))
    r_dual = float(np.linalg.norm(prob.P @ z + prob.q + prob.A.T @ dual, np.inf)
                   if prob.n_vars else 0.0)
    return r_prim, r_dual


def _inf_norm(v) -> float:
    return float(np.max(np.abs(v), initial=0.0))


class _Scaling:
    """Ruiz equilibration of the KKT matrix plus cost scaling."""

    def __init__(self, P, q, A, iters):
        d, nc = P.shape[0], A.shape[0]
        D, E = np.ones(d), np.ones(nc)
        P, q, A = P.copy(), q.copy(), A.copy()
        c = 1.0
        for _ in range(iters):
            col_x = np.maximum(np.max(np.abs(P), axis=0, initial=0.0),
                               np.max(np.abs(A), axis=0, initial=0.0))
            col_z = np.max(np.abs(A), axis=1, initial=0.0)
            dx = 1.0 / np.sqrt(np.clip(col_x, 1e-4, 1e4))
            dz = 1.0 / np.sqrt(np.clip(col_z, 1e-4, 1e4))
            dx[col_x == 0] = 1.0
            dz[col_z == 0] = 1.0
            P = dx[:, None] * P * dx[None, :]
            A = dz[:, None] * A * dx[None, :]
            q = dx * q
            D *= dx
            E *= dz
            p_norm = np.mean(np.max(np.abs(P), axis=0, initial=0.0)) if d else 0.0
            gamma = max(p_norm, _inf_norm(q))
            gamma = 1.0 / np.clip(gamma, 1e-4, 1e4) if gamma > 0 else 1.0
            P *= gamma
            q *= gamma
            c *= gamma
        self.D, self.E, self.c = D, E, c
        self.P, self.q, self.A = P, q, A


class AdmmSolver:
    """Relaxed ADMM for :class:`QpProblem`.

    One instance owns one problem and its workspace.  ``solve`` may be
    called with a warm start (unscaled primal and dual vectors).
    """

    def __init__(self, prob: QpProblem, settings: Optional[SolverSettings] = None):
        self.prob = prob
        self.settings = settings or SolverSettings()
        s = self.settings
        self.scaling = sc = _Scaling(prob.P, prob.q, prob.A, s.scaling_iters)
        self.P, self.q, self.A = sc.P, sc.q, sc.A
        with np.errstate(invalid="ignore"):
            self.l = sc.E * prob.l
            self.u = sc.E * prob.u
        self.eq = (prob.u - prob.l) < 1e-10
        self.free = np.isinf(prob.l) & np.isinf(prob.u)
        self._set_rho(s.rho)

    def _set_rho(self, rho: float) -> None:
        self.rho = float(np.clip(rho, RHO_MIN, RHO_MAX))
        rv = np.full(self.prob.n_cons, self.rho)
        rv[self.eq] = RHO_EQ_SCALE * self.rho
        rv[self.free] = RHO_MIN
        self.rho_vec = rv
        K = self.P + self.settings.sigma * np.eye(self.prob.n_vars)
        K += self.A.T @ (rv[:, None] * self.A)
        self._factor = sla.cho_factor(K, check_finite=False)

    def _project(self, v):
        return np.minimum(np.maximum(v, self.l), self.u)

    def _unscaled(self, x, z, y):
        sc = self.scaling
        return sc.D * x, z / sc.E, sc.E * y / sc.c

    def _residual_check(self, x, z, y):
        """Unscaled residuals and tolerances."""
        sc, s = self.scaling, self.settings
        Ax = self.A @ x
        Px = self.P @ x
        Aty = self.A.T @ y
        r_p = _inf_norm((Ax - z) / sc.E)
        r_d = _inf_norm((Px + self.q + Aty) / sc.D) / sc.c
        e_p = s.eps_abs + s.eps_rel * max(_inf_norm(Ax / sc.E), _inf_norm(z / sc.E))
        e_d = s.eps_abs + s.eps_rel / sc.c * max(_inf_norm(Px / sc.D), _inf_norm(Aty / sc.D),
                                                 _inf_norm(self.q / sc.D))
        return r_p, r_d, e_p, e_d, Ax, Px, Aty

    def _primal_infeasible(self, dy) -> bool:
        sc, s = self.scaling, self.settings
        dy_us = sc.E * dy
        norm = _inf_norm(dy_us)
        if norm < 1e-30:
            return False
        if _inf_norm((self.A.T @ dy) / sc.D) > s.eps_prim_inf * norm:
            return False
        pos, neg = np.maximum(dy_us, 0), np.minimum(dy_us, 0)
        l, u = self.prob.l, self.prob.u
        if np.any((pos > 0) & np.isinf(u)) or np.any((neg < 0) & np.isinf(l)):
            return False
        support = pos[pos > 0] @ u[pos > 0] + neg[neg < 0] @ l[neg < 0]
        return support < -s.eps_prim_inf * norm

    def solve(self, x0=None, y0=None) -> QpSolution:
        prob, s, sc = self.prob, self.settings, self.scaling
        d, nc = prob.n_vars, prob.n_cons
        x = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float) / sc.D
        y = np.zeros(nc) if y0 is None else sc.c * np.asarray(y0, dtype=float) / sc.E
        z = self._project(self.A @ x)

        if np.any(prob.l > prob.u):
            # empty box: infeasible before any iteration
            r_p, r_d = kkt_residuals(prob, x * sc.D, np.zeros(nc))
            return QpSolution(x * sc.D, INFEASIBLE, np.nan, r_p, r_d, 0, np.zeros(nc))

        status, it = MAX_ITER, 0
        y_prev = y.copy()
        polished = None
        last_sig, tried_sig = None, None
        for it in range(1, s.max_iter + 1):
            rhs = s.sigma * x - self.q + self.A.T @ (self.rho_vec * z - y)
            x_t = sla.cho_solve(self._factor, rhs, check_finite=False)
            z_t = self.A @ x_t
            x = s.alpha * x_t + (1 - s.alpha) * x
            z_relax = s.alpha * z_t + (1 - s.alpha) * z
            z_new = self._project(z_relax + y / self.rho_vec)
            y = y + self.rho_vec * (z_relax - z_new)
            z = z_new

            if it % s.check_every:
                continue
            r_p, r_d, e_p, e_d, Ax, Px, Aty = self._residual_check(x, z, y)
            if r_p <= e_p and r_d <= e_d:
                status = OPTIMAL
                break
            if self._primal_infeasible(y - y_prev):
                status = INFEASIBLE
                break
            y_prev = y.copy()
            if s.polish:
                # degenerate problems converge slowly; an active set that has
                # settled usually polishes to the exact optimum early
                low, upp = self._active_set(z, y)
                sig = np.packbits(np.r_[low, upp]).tobytes()
                if sig == last_sig and sig != tried_sig:
                    tried_sig = sig
                    cand = self._polish(low, upp)
                    if cand is not None and cand[2] <= e_p and cand[3] <= e_d:
                        polished, status = cand, OPTIMAL
                        break
                last_sig = sig
            if s.adaptive_rho:
                num = _inf_norm(Ax - z) / max(_inf_norm(Ax), _inf_norm(z), 1e-30)
                den = _inf_norm(Px + self.q + Aty) / max(
                    _inf_norm(Px), _inf_norm(Aty), _inf_norm(self.q), 1e-30)
                rho_new = self.rho * np.sqrt(num / max(den, 1e-30))
                if (rho_new > s.adaptive_rho_tolerance * self.rho
                        or rho_new < self.rho / s.adaptive_rho_tolerance):
                    self._set_rho(rho_new)

        xu, _, yu = self._unscaled(x, z, y)
        if status == INFEASIBLE:
            r_p, r_d = kkt_residuals(prob, xu, yu)
            return QpSolution(xu, status, np.nan, r_p, r_d, it, yu)

        if status == OPTIMAL and s.polish and polished is None:
            cand = self._polish(*self._active_set(z, y))
            if cand is not None:
                r_p, r_d = kkt_residuals(prob, xu, yu)
                if cand[2] <= max(r_p, 1e-12) and cand[3] <= max(r_d, 1e-12):
                    polished = cand
        if polished is not None:
            xu, yu = polished[:2]
        r_p, r_d = kkt_residuals(prob, xu, yu)
        return QpSolution(xu, status, prob.objective(xu), r_p, r_d, it, yu,
                          polished is not None)

    def _active_set(self, z, y):
        """Guess which bounds hold with equality from the ADMM iterate."""
        tau = self.settings.eps_abs
        low = (z - self.l) < np.maximum(-y, 0.0) + tau
        upp = (self.u - z) < np.maximum(y, 0.0) + tau
        low &= np.isfinite(self.l)
        upp &= np.isfinite(self.u)
        low |= self.eq
        upp &= ~self.eq
        both = low & upp
        low[both] = y[both] <= 0
        upp[both] = ~low[both]
        return low, upp

    def _polish(self, low, upp):
        """Solve the equality-constrained KKT system on a given active set.

        Returns unscaled ``(x, y, primal_residual, dual_residual)``, or
        ``None`` if the system is singular or a multiplier has the wrong
        sign (the guessed active set is then not optimal).
        """
        s, prob = self.settings, self.prob
        act = low | upp
        target = np.where(low, self.l, self.u)[act]
        Aact = self.A[act]
        d, k = prob.n_vars, int(act.sum())

        K0 = np.block([[self.P, Aact.T], [Aact, np.zeros((k, k))]])
        reg = np.concatenate([np.full(d, s.polish_delta), np.full(k, -s.polish_delta)])
        try:
            lu = sla.lu_factor(K0 + np.diag(reg), check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        rhs = np.concatenate([-self.q, target])
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(s.polish_refine_iters):
            step = sla.lu_solve(lu, rhs - K0 @ sol, check_finite=False)
            sol += step
            if _inf_norm(step) <= 1e-14 * max(_inf_norm(sol), 1.0):
                break
        if not np.all(np.isfinite(sol)):
            return None

        x_pol = sol[:d]
        y_pol = np.zeros(prob.n_cons)
        y_pol[act] = sol[d:]
        sign_tol = 10 * s.eps_abs
        if np.any(y_pol[low & ~self.eq] > sign_tol) or np.any(y_pol[upp & ~self.eq] < -sign_tol):
            return None
        xu, _, yu = self._unscaled(x_pol, self.A @ x_pol, y_pol)
        return (xu, yu, *kkt_residuals(prob, xu, yu))


def polish_active_set(prob: QpProblem, low, upp, delta: float = 1e-9,
                      refine_iters: int = 25, sign_tol: float = 1e-9):
    """Re-solve ``prob`` with the rows flagged in ``low``/``upp`` held at
    their lower/upper bound and all other rows dropped.

    Single-variable active rows fix their variable outright, so the KKT
    system only involves the free variables.  Returns ``(z, dual)`` or
    ``None`` when the reduced system cannot be solved or an inequality
    multiplier has the wrong sign.
    """
    A, l, u = prob.A, prob.l, prob.u
    d = prob.n_vars
    low = np.asarray(low, dtype=bool)
    upp = np.asarray(upp, dtype=bool) & ~low
    act = low | upp
    target = np.where(low, l, u)
    nnz = np.count_nonzero(A, axis=1)
    fixed = np.zeros(d, dtype=bool)
    fix_row = np.full(d, -1)
    z = np.zeros(d)
    single = np.flatnonzero(act & (nnz == 1))
    cols = np.argmax(A[single] != 0, axis=1)
    # the first active row on a variable fixes it
    cols, first = np.unique(cols, return_index=True)
    single = single[first]
    fixed[cols], fix_row[cols] = True, single
    z[cols] = target[single] / A[single, cols]
    free = ~fixed
    rows = np.flatnonzero(act & ~np.isin(np.arange(prob.n_cons), single))
    Af = A[np.ix_(rows, free)]
    bf = target[rows] - A[np.ix_(rows, fixed)] @ z[fixed]
    Pf = prob.P[np.ix_(free, free)]
    qf = prob.q[free] + prob.P[np.ix_(free, fixed)] @ z[fixed]
    nf, k = int(free.sum()), rows.size

    K0 = np.block([[Pf, Af.T], [Af, np.zeros((k, k))]])
    reg = np.concatenate([np.full(nf, delta), np.full(k, -delta)])
    rhs = np.concatenate([-qf, bf])
    try:
        lu = sla.lu_factor(K0 + np.diag(reg), check_finite=False)
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(refine_iters):
            step = sla.lu_solve(lu, rhs - K0 @ sol, check_finite=False)
            sol += step
            if _inf_norm(step) <= 1e-15 * max(_inf_norm(sol), 1.0):
                break
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    z[free] = sol[:nf]
    y = np.zeros(prob.n_cons)
    y[rows] = sol[nf:]
    # multipliers of fixing rows close the stationarity of fixed variables
    grad = prob.P @ z + prob.q + A.T @ y
    y[single] = -grad[cols] / A[single, cols]
    eq = l == u
    if np.any(y[low & ~eq] > sign_tol) or np.any(y[upp & ~eq] < -sign_tol):
        return None
    return z, y


def solve(prob: QpProblem, settings: Optional[SolverSettings] = None,
          x0=None, y0=None) -> QpSolution:
    return AdmmSolver(prob, settings).solve(x0, y0)


def dump_qp(prob: QpProblem, prefix) -> list:
    """Write P, q, A, l, u as Matrix Market files ``<prefix>_<name>.mtx``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("P", "A"):
        path = prefix.with_name(f"{prefix.name}_{name}.mtx")
        scipy.io.mmwrite(path, sparse.coo_matrix(getattr(prob, name)))
        paths.append(path)
    for name in ("q", "l", "u"):
        path = prefix.with_name(f"{prefix.name}_{name}.mtx")
        vec = np.nan_to_num(getattr(prob, name), posinf=1e30, neginf=-1e30)
        scipy.io.mmwrite(path, vec.reshape(-1, 1))
        paths.append(path)
    return paths
