"""Primal-dual interior-point backend for :class:`~ddsf.qpcore.QpProblem`.

Mehrotra predictor-corrector on the split form

    minimize    0.5 x'Px + q'x
    subject to  E x = b,   G x <= h,   lb <= x <= ub

where rows of ``l <= A x <= u`` with a single nonzero become variable
bounds.  Variables that have a diagonal Hessian and appear in no general
inequality row are eliminated from the Newton system through a Schur
complement, so problems with many simplex weights or bounded slack
variables cost little more than their dense core.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .qpcore import (INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, QpSolution,
                     kkt_residuals, polish_active_set)

logger = logging.getLogger(__name__)


@dataclass
class InteriorPointSettings:
    eps_feas: float = 1e-9
    eps_gap: float = 1e-10
    eps_accept: float = 1e-6      # looser test applied when progress stalls
    max_iter: int = 100
    step_fraction: float = 0.995
    reg_primal: float = 1e-11
    reg_dual: float = 1e-11
    refine_iters: int = 3
    infeasible_dual: float = 1e10
    schur_threshold: float = 1e-4  # eliminate a variable only above this curvature
    polish: bool = True


class _Split:
    """Classify the rows of ``l <= A x <= u`` into equalities, bounds and
    general inequalities."""

    def __init__(self, prob: QpProblem):
        A, l, u = prob.A, prob.l, prob.u
        d = prob.n_vars
        self.d = d
        nnz = np.count_nonzero(A, axis=1) if A.size else np.zeros(0, int)
        eq = (l == u) & np.isfinite(l)
        self.eq_rows = np.flatnonzero(eq & (nnz > 0))
        self.E = A[self.eq_rows]
        self.b = l[self.eq_rows]
        # empty rows are checked once and then dropped
        empty = nnz == 0
        self.empty_ok = bool(np.all((l[empty] <= 0.0) & (u[empty] >= 0.0)))

        self.lb = np.full(d, -np.inf)
        self.ub = np.full(d, np.inf)
        self.lb_row = np.full(d, -1)
        self.ub_row = np.full(d, -1)
        rows = np.flatnonzero(~eq & (nnz == 1))
        cols = np.argmax(A[rows] != 0, axis=1)
        a = A[rows, cols]
        with np.errstate(invalid="ignore"):
            lo_v = np.where(a > 0, l[rows] / a, u[rows] / a)
            hi_v = np.where(a > 0, u[rows] / a, l[rows] / a)
        if np.unique(cols).size == cols.size:
            keep = lo_v > -np.inf
            self.lb[cols[keep]], self.lb_row[cols[keep]] = lo_v[keep], rows[keep]
            keep = hi_v < np.inf
            self.ub[cols[keep]], self.ub_row[cols[keep]] = hi_v[keep], rows[keep]
        else:
            for i, j, lo, hi in zip(rows, cols, lo_v, hi_v):
                if lo > self.lb[j]:
                    self.lb[j], self.lb_row[j] = lo, i
                if hi < self.ub[j]:
                    self.ub[j], self.ub_row[j] = hi, i

        gen = np.flatnonzero(~eq & (nnz > 1))
        up = gen[np.isfinite(u[gen])]
        lo = gen[np.isfinite(l[gen])]
        self.G = np.vstack([A[up], -A[lo]]) if gen.size else np.zeros((0, d))
        self.h = np.concatenate([u[up], -l[lo]])
        self.g_rows = np.concatenate([up, lo])
        self.g_sign = np.concatenate([np.ones(up.size), -np.ones(lo.size)])

        self.has_lb = np.isfinite(self.lb)
        self.has_ub = np.isfinite(self.ub)
        self.ilb = np.flatnonzero(self.has_lb)
        self.iub = np.flatnonzero(self.has_ub)

    @property
    def n_ineq(self) -> int:
        return self.h.size + self.ilb.size + self.iub.size

    def bounds_consistent(self) -> bool:
        return self.empty_ok and bool(np.all(self.lb <= self.ub))

    def to_dual(self, n_cons, nu, lam_g, lam_lb, lam_ub, A):
        """Map split multipliers to the ``A' y`` convention of QpSolution."""
        y = np.zeros(n_cons)
        y[self.eq_rows] = nu
        np.add.at(y, self.g_rows.astype(int), self.g_sign * lam_g)
        i = self.lb_row[self.ilb]
        np.add.at(y, i, -lam_lb / A[i, self.ilb])
        i = self.ub_row[self.iub]
        np.add.at(y, i, lam_ub / A[i, self.iub])
        return y


class InteriorPointSolver:
    def __init__(self, prob: QpProblem,
                 settings: Optional[InteriorPointSettings] = None):
        self.prob = prob
        self.settings = settings or InteriorPointSettings()
        sp = self.sp = _Split(prob)
        P = prob.P
        self._pdiag = np.diag(P).copy()
        self._quadratic = bool(np.any(P != 0))
        self._Ps = sparse.csr_matrix(P)
        # sparse copies for matvecs; the dense ones are sliced when factoring
        self._Es, self._Gs = sparse.csr_matrix(sp.E), sparse.csr_matrix(sp.G)
        self._EsT, self._GsT = self._Es.T.tocsr(), self._Gs.T.tocsr()
        offdiag = P - np.diag(self._pdiag)
        coupled = np.any(offdiag != 0, axis=0) | np.any(sp.G != 0, axis=0)
        # free variables with no curvature stay in the dense block
        curved = (self._pdiag > 0) | sp.has_lb | sp.has_ub
        self.diag_vars = np.flatnonzero(~coupled & curved)
        self.dense_vars = np.flatnonzero(coupled | ~curved)

    # ---- Newton system -------------------------------------------------
    def _factor(self, w_g, w_lb, w_ub):
        sp, P, st = self.sp, self.prob.P, self.settings
        hdiag = self._pdiag.copy()
        hdiag[sp.ilb] += w_lb
        hdiag[sp.iub] += w_ub
        # weakly curved variables would make the Schur block ill-conditioned
        strong = hdiag[self.diag_vars] >= st.schur_threshold
        D = np.sort(np.concatenate([self.dense_vars, self.diag_vars[~strong]]))
        S = self.diag_vars[strong]
        self._D, self._S = D, S
        H_DD = P[np.ix_(D, D)] + (sp.G[:, D].T * w_g) @ sp.G[:, D]
        H_DD[np.diag_indices_from(H_DD)] += hdiag[D] - self._pdiag[D]
        H_DD[np.diag_indices_from(H_DD)] += st.reg_primal
        h_S = hdiag[S] + st.reg_primal
        E_D, E_S = sp.E[:, D], sp.E[:, S]
        ne = sp.b.size
        K = np.zeros((D.size + ne, D.size + ne))
        K[:D.size, :D.size] = H_DD
        K[:D.size, D.size:] = E_D.T
        K[D.size:, :D.size] = E_D
        K[D.size:, D.size:] = -(E_S / h_S) @ E_S.T - st.reg_dual * np.eye(ne)
        self._lu = sla.lu_factor(K, check_finite=False)
        self._h_S = h_S
        self._w = (w_g, w_lb, w_ub)

    def _apply_kkt(self, dx, dnu):
        """Unregularized KKT operator, used for iterative refinement."""
        sp, P = self.sp, self._Ps
        w_g, w_lb, w_ub = self._w
        hx = P @ dx + self._GsT @ (w_g * (self._Gs @ dx))
        hx[sp.ilb] += w_lb * dx[sp.ilb]
        hx[sp.iub] += w_ub * dx[sp.iub]
        return hx + self._EsT @ dnu, self._Es @ dx

    def _raw_solve(self, r1, r2):
        D, S = self._D, self._S
        E_S = self.sp.E[:, S]
        rS = r1[S] / self._h_S
        rhs = np.concatenate([r1[D], r2 - E_S @ rS])
        sol = sla.lu_solve(self._lu, rhs, check_finite=False)
        dx = np.empty(self.sp.d)
        dx[D] = sol[:D.size]
        dnu = sol[D.size:]
        dx[S] = rS - (E_S.T @ dnu) / self._h_S
        return dx, dnu

    def _newton(self, r1, r2):
        dx, dnu = self._raw_solve(r1, r2)
        for _ in range(self.settings.refine_iters):
            a1, a2 = self._apply_kkt(dx, dnu)
            e1, e2 = r1 - a1, r2 - a2
            if max(_inf(e1), _inf(e2)) <= 1e-14 * (1 + max(_inf(r1), _inf(r2))):
                break
            cx, cnu = self._raw_solve(e1, e2)
            dx += cx
            dnu += cnu
        return dx, dnu

    # ---- iteration -----------------------------------------------------
    def _slacks(self, x):
        sp = self.sp
        return (sp.h - self._Gs @ x, x[sp.ilb] - sp.lb[sp.ilb],
                sp.ub[sp.iub] - x[sp.iub])

    def _initial_point(self):
        sp = self.sp
        ones = (np.ones(sp.h.size), np.ones(sp.ilb.size), np.ones(sp.iub.size))
        self._factor(*ones)
        r1 = -self.prob.q + sp.G.T @ sp.h
        r1[sp.ilb] += sp.lb[sp.ilb]
        r1[sp.iub] += sp.ub[sp.iub]
        x, nu = self._newton(r1, sp.b.copy())
        s = np.concatenate(self._slacks(x))
        if s.size:
            shift = -np.min(s)
            if shift >= 0:
                s = s + 1.0 + shift
        return x, nu, s, np.ones(s.size)

    def _residuals(self, x, nu, s, lam):
        sp, P = self.sp, self._Ps
        ng, nl = sp.h.size, sp.ilb.size
        lg, ll, lu = lam[:ng], lam[ng:ng + nl], lam[ng + nl:]
        rd = P @ x + self.prob.q + self._EsT @ nu + self._GsT @ lg
        rd[sp.ilb] -= ll
        rd[sp.iub] += lu
        rp = self._Es @ x - sp.b
        # rs = G x + s - h in stacked form
        sg, sl, su = self._slacks(x)
        rs = s - np.concatenate([sg, sl, su])
        return rd, rp, rs

    def _lift(self, v):
        """Stacked inequality operator ``v -> G_all v``."""
        sp = self.sp
        return np.concatenate([self._Gs @ v, -v[sp.ilb], v[sp.iub]])

    def _lift_t(self, w):
        sp = self.sp
        ng, nl = sp.h.size, sp.ilb.size
        out = self._GsT @ w[:ng]
        out[sp.ilb] -= w[ng:ng + nl]
        out[sp.iub] += w[ng + nl:]
        return out

    def _direction(self, rd, rp, rs, s, lam, rc):
        # ds = -rs - G dx;  dlam = (-rc - lam*ds)/s
        r1 = -rd + self._lift_t((rc - lam * rs) / s)
        dx, dnu = self._newton(r1, -rp)
        ds = -rs - self._lift(dx)
        dlam = (-rc - lam * ds) / s
        return dx, dnu, ds, dlam

    @staticmethod
    def _max_step(v, dv):
        neg = dv < 0
        if not np.any(neg):
            return 1.0
        return float(min(1.0, np.min(-v[neg] / dv[neg])))

    def solve(self) -> QpSolution:
        prob, sp, st = self.prob, self.sp, self.settings
        if np.any(prob.l > prob.u) or not sp.bounds_consistent():
            return self._finish(np.zeros(prob.n_vars), np.zeros(prob.n_cons),
                                INFEASIBLE, 0)
        mi = sp.n_ineq
        x, nu, s, lam = self._initial_point()
        best, best_score, feasible_seen, stall = None, np.inf, False, 0
        it = 0
        const_p = max(_inf(sp.b), _inf(sp.h))
        const_d = _inf(prob.q)
        for it in range(1, st.max_iter + 1):
            rd, rp, rs = self._residuals(x, nu, s, lam)
            mu = float(s @ lam) / mi if mi else 0.0
            r_p = max(_inf(rp), _inf(rs))
            r_d = _inf(rd)
            # relative scales in the style of operator-splitting solvers
            scale_p = 1.0 + max(_inf(self._Es @ x), _inf(self._Gs @ x), const_p)
            # multipliers grow without bound on degenerate problems, so the
            # dual scale only counts the objective terms
            scale_d = 1.0 + max(_inf(self._Ps @ x), const_d)
            score = max(r_p / scale_p, r_d / scale_d, mu)
            if score < best_score:
                best, best_score, stall = (x.copy(), nu.copy(), lam.copy()), score, 0
            elif mu <= st.eps_gap:
                # complementarity is exhausted; only the residual floor remains
                stall += 1
            feasible_seen |= r_p <= st.eps_feas * scale_p
            if r_p <= st.eps_feas * scale_p and r_d <= st.eps_feas * scale_d \
                    and mu <= st.eps_gap:
                return self._finish_split(x, nu, lam, OPTIMAL, it)
            if mi and not feasible_seen and _inf(lam) > st.infeasible_dual:
                return self._finish_split(x, nu, lam, INFEASIBLE, it)
            if stall >= 5:
                break

            w = lam / s if mi else lam
            ng, nl = sp.h.size, sp.ilb.size
            self._factor(w[:ng], w[ng:ng + nl], w[ng + nl:])
            # predictor
            aff = self._direction(rd, rp, rs, s, lam, s * lam)
            a_p = self._max_step(s, aff[2])
            a_d = self._max_step(lam, aff[3])
            if mi:
                mu_aff = float((s + a_p * aff[2]) @ (lam + a_d * aff[3])) / mi
                sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            else:
                sigma = 0.0
            # corrector
            rc = s * lam + aff[2] * aff[3] - sigma * mu
            dx, dnu, ds, dlam = self._direction(rd, rp, rs, s, lam, rc)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dlam))):
                break
            a_p = min(1.0, st.step_fraction * self._max_step(s, ds))
            a_d = min(1.0, st.step_fraction * self._max_step(lam, dlam))
            if self._quadratic and feasible_seen:
                # P couples x into the dual residual, so split steps leave
                # a floor of order |a_p - a_d| |P dx|; keep them split until
                # primal feasibility so infeasibility still shows in lam
                a_p = a_d = min(a_p, a_d)
            if max(a_p, a_d) < 1e-12:
                break
            x = x + a_p * dx
            s = s + a_p * ds
            nu = nu + a_d * dnu
            lam = lam + a_d * dlam

        x, nu, lam = best
        sol = self._finish_split(x, nu, lam, MAX_ITER, it)
        if best_score <= st.eps_accept:
            sol.status = OPTIMAL
        elif not feasible_seen and mi and best_score > st.eps_accept:
            sol.status = INFEASIBLE if _inf(lam) > st.infeasible_dual ** 0.5 else MAX_ITER
        return sol

    def _finish_split(self, x, nu, lam, status, it):
        sp, prob = self.sp, self.prob
        ng, nl = sp.h.size, sp.ilb.size
        y = sp.to_dual(prob.n_cons, nu, lam[:ng], lam[ng:ng + nl],
                       lam[ng + nl:], prob.A)
        sol = self._finish(x, y, status, it)
        if status == INFEASIBLE or not self.settings.polish:
            return sol
        # rows whose slack is smaller than their multiplier are taken active
        Ax = prob.A @ x
        low = (Ax - prob.l) < np.maximum(-y, 0.0)
        upp = (prob.u - Ax) < np.maximum(y, 0.0)
        low |= prob.l == prob.u
        cand = polish_active_set(prob, low, upp)
        if cand is None:
            return sol
        r_p, r_d = kkt_residuals(prob, *cand)
        if r_p <= max(sol.primal_residual, 1e-12) and r_d <= max(sol.dual_residual, 1e-12):
            sol = self._finish(cand[0], cand[1], status, it)
            sol.polished = True
            if status == MAX_ITER and r_p <= self.settings.eps_feas \
                    and r_d <= self.settings.eps_feas:
                sol.status = OPTIMAL
        return sol

    def _finish(self, x, y, status, it):
        prob = self.prob
        r_p, r_d = kkt_residuals(prob, x, y)
        return QpSolution(z=x, status=status, objective=prob.objective(x),
                          primal_residual=r_p, dual_residual=r_d,
                          iterations=it, dual=y)


def _inf(v) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def solve_interior(prob: QpProblem,
                   settings: Optional[InteriorPointSettings] = None) -> QpSolution:
    return InteriorPointSolver(prob, settings).solve()
