"""Data-driven safety filter with a sampled terminal set.

The filter keeps one recorded input/output batch (as Hankel matrices), the
last ``T_ini`` measured samples and a :class:`SampledSafeSet`.  Each call
solves

    min   (u0 - u_l)' R (u0 - u_l) + eps_reg |alpha|^2
    s.t.  [Hu; Hy] alpha = [u_bar; y_bar]          (implicit model)
          past T_ini samples of (u_bar, y_bar) = measured history
          last T_ini predicted samples = V beta + feas_tol (s+ - s-)
          sum(beta) = 1,  beta >= 0,  0 <= s+, s- <= 1
          output rows may stretch by feas_tol (o+ - o-),  0 <= o+, o- <= 1
          u_bar_k in U, y_bar_k in Y,  k = 0..N-1

over ``z = [alpha; u_bar; y_bar; beta; s+; s-; o+; o-]``.  The slacks
are bounded by ``feas_tol``, the tolerance used for membership and
constraint checks, and carry a large L1 price, so they stay at zero
unless round-off from earlier steps has left the exact problem
marginally infeasible.  This happens when the filter rides the edge of
the viable set, where the feasible region shrinks to a single plan.
Inputs are never relaxed.  By default the prediction runs
N + T_ini steps so the terminal window follows the N constrained steps;
the Hankel depth is then N + 2*T_ini.

The same problem is solved in a condensed form by default: trajectories
are parametrized by coordinates ``g`` in an orthonormal basis of the
Hankel range, with ``alpha`` recovered as the minimum-norm preimage.  The
two forms have the same optimum; the condensed one is much smaller and
better conditioned.
"""
from __future__ import annotations

import logging
from collections import deque
from pathlib import Path
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import qpcore
from .interior import InteriorPointSettings, solve_interior
from .consets import FEAS_TOL, Polytope
from .datamat import (HankelPair, Trajectory, ValidationReport, build_hankel,
                      stack_extended_state, validate_assumptions)
from .plant import SAMPLING_TIME, DelayedLtiPlant
from .qpcore import QpProblem, QpSolution, SolverSettings
from .safeset import NOVELTY_TOL, SampledSafeSet, hull_distance

logger = logging.getLogger(__name__)

W_ONLINE = 50
W_OFFLINE = 10
SCHUR_FALLBACK = (1e-6, 1e-8)


class AssumptionError(ValueError):
    """The data batch or configuration fails the filter's preconditions."""

    def __init__(self, report: ValidationReport):
        super().__init__(f"filter assumptions violated:\n{report}")
        self.report = report


class FilterInfeasible(RuntimeError):
    """No backup trajectory exists for the current history."""


class SolverFailure(RuntimeError):
    """The QP solver stopped without reaching the requested accuracy."""


@dataclass
class FilterConfig:
    N: int = 6
    T_ini: int = 3
    R: Optional[np.ndarray] = None
    eps_reg: float = 1e-8
    regularize: bool = True
    feas_tol: float = FEAS_TOL
    novelty_tol: float = NOVELTY_TOL
    insert_tol: float = 1e-9
    n_bar: int = 4
    rank_tol: float = 1e-9
    solver: SolverSettings = field(default_factory=SolverSettings)
    interior: InteriorPointSettings = field(default_factory=InteriorPointSettings)
    backend: str = "interior"
    condensed: bool = True
    warm_start: bool = True
    append_terminal: bool = True
    slack_penalty: float = 1e6

    def __post_init__(self):
        if self.N <= self.T_ini:
            raise ValueError(f"horizon N={self.N} must exceed T_ini={self.T_ini}")
        if self.T_ini < 1:
            raise ValueError("T_ini must be positive")
        if min(self.eps_reg, self.feas_tol, self.novelty_tol, self.insert_tol) <= 0:
            raise ValueError("tolerances and eps_reg must be positive")
        if self.backend not in ("interior", "admm"):
            raise ValueError(f"unknown QP backend {self.backend!r}")

    @property
    def n_pred(self) -> int:
        """Number of predicted samples.

        With ``append_terminal`` the terminal window is an extra ``T_ini``
        samples after the N constrained steps; otherwise it overlaps the
        last ``T_ini`` of them.
        """
        return self.N + (self.T_ini if self.append_terminal else 0)

    @property
    def L(self) -> int:
        """Hankel depth: T_ini past samples plus the predicted ones."""
        return self.T_ini + self.n_pred

    def weight(self, m: int) -> np.ndarray:
        R = np.eye(m) if self.R is None else np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (m, m) or not np.allclose(R, R.T):
            raise ValueError("R must be a symmetric m x m matrix")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        return R


@dataclass
class BackupTrajectory:
    u_bar: np.ndarray
    y_bar: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    objective: float
    u_past: np.ndarray = field(repr=False, default=None)
    y_past: np.ndarray = field(repr=False, default=None)
    solution: QpSolution = field(repr=False, default=None)

    @property
    def T_ini(self) -> int:
        return len(self.u_past)

    def extended_state(self, j: int) -> np.ndarray:
        """Extended state after predicted step ``j`` (0 <= j < len(u_bar))."""
        u = np.vstack([self.u_past, self.u_bar])
        y = np.vstack([self.y_past, self.y_bar])
        T = self.T_ini
        return stack_extended_state(u[j + 1:j + 1 + T], y[j + 1:j + 1 + T])

    @property
    def terminal_state(self) -> np.ndarray:
        return self.extended_state(len(self.u_bar) - 1)


@dataclass
class StepRecord:
    t: int
    seconds: float
    u_learning: np.ndarray
    u_safe: np.ndarray
    y: np.ndarray
    objective: float
    qp_status: str
    qp_iters: int
    n_vertices: int
    growth_metric: float


class _Layout:
    """Index bookkeeping for the stacked decision vector."""

    def __init__(self, n_alpha, m, p, T_ini, n_pred, n_vertices, n_out_slack=0):
        L = T_ini + n_pred
        self.m, self.p, self.T_ini, self.n_pred = m, p, T_ini, n_pred
        self.alpha = slice(0, n_alpha)
        self.u = slice(n_alpha, n_alpha + m * L)
        self.y = slice(self.u.stop, self.u.stop + p * L)
        self.beta = slice(self.y.stop, self.y.stop + n_vertices)
        self.slack = slice(self.beta.stop, self.beta.stop + 2 * (m + p) * T_ini)
        self.out_slack = slice(self.slack.stop, self.slack.stop + 2 * n_out_slack)
        self.n_out_slack = n_out_slack
        self.size = self.out_slack.stop

    def u_block(self, k):
        """Column range of predicted input ``k`` (k = -T_ini .. n_pred-1)."""
        i = self.u.start + (k + self.T_ini) * self.m
        return slice(i, i + self.m)

    def y_block(self, k):
        i = self.y.start + (k + self.T_ini) * self.p
        return slice(i, i + self.p)


class _RangeBasis:
    """Orthonormal basis ``W`` of the stacked Hankel range, ``H = W S Vt``."""

    def __init__(self, hankel: HankelPair, rank_tol: float):
        U, S, Vt = np.linalg.svd(hankel.stacked, full_matrices=False)
        r = int(np.sum(S > rank_tol * S[0])) if S.size and S[0] > 0 else 0
        self.W, self.S, self.Vt = U[:, :r], S[:r], Vt[:r]
        mL = hankel.m * hankel.L
        self.Wu, self.Wy = self.W[:mL], self.W[mL:]
        self.m, self.p = hankel.m, hankel.p

    @property
    def rank(self) -> int:
        return self.S.size

    def u_rows(self, i):
        """Rows of ``Wu`` for the i-th sample of the window (0-based)."""
        return self.Wu[i * self.m:(i + 1) * self.m]

    def y_rows(self, i):
        return self.Wy[i * self.p:(i + 1) * self.p]

    def alpha(self, g):
        return self.Vt.T @ (g / self.S)


class SafetyFilter:
    """Safety filter state: data, measured history and terminal safe set."""

    def __init__(self, hankel: HankelPair, cfg: FilterConfig,
                 input_set: Polytope, output_set: Polytope,
                 safe_set: SampledSafeSet):
        if hankel.L != cfg.L:
            raise ValueError(f"Hankel depth {hankel.L} != T_ini + N = {cfg.L}")
        if safe_set.T_ini != cfg.T_ini:
            raise ValueError("safe set dimension does not match T_ini")
        self.hankel = hankel
        self.cfg = cfg
        self.input_set, self.output_set = input_set, output_set
        self.safe_set = safe_set
        self.m, self.p = hankel.m, hankel.p
        self.R = cfg.weight(self.m)
        self.basis = _RangeBasis(hankel, cfg.rank_tol)
        self.history: deque = deque(maxlen=cfg.T_ini)
        self.last_solution: Optional[np.ndarray] = None
        self._last_layout: Optional[_Layout] = None
        self.t = 0

    @classmethod
    def from_data(cls, traj: Trajectory, cfg: FilterConfig,
                  input_set: Polytope, output_set: Polytope,
                  safe_set: Optional[SampledSafeSet] = None,
                  equilibrium=(0.0, 0.0)) -> "SafetyFilter":
        """Validate the batch, build Hankel matrices and start at equilibrium."""
        report = validate_assumptions(traj, cfg.N, cfg.T_ini, cfg.n_bar, cfg.rank_tol,
                                      depth=cfg.L)
        if not report.ok:
            raise AssumptionError(report)
        u_s, y_s = (np.atleast_1d(np.asarray(e, dtype=float)) for e in equilibrium)
        if safe_set is None:
            safe_set = SampledSafeSet.from_equilibrium(
                u_s, y_s, cfg.T_ini, input_set, output_set,
                novelty_tol=cfg.insert_tol, feas_tol=cfg.feas_tol)
        filt = cls(build_hankel(traj, cfg.L), cfg, input_set, output_set, safe_set)
        filt.reset_history([u_s] * cfg.T_ini, [y_s] * cfg.T_ini)
        return filt

    # -- history -----------------------------------------------------------

    def reset_history(self, u_hist, y_hist) -> None:
        u_hist = np.asarray(u_hist, dtype=float).reshape(-1, self.m)
        y_hist = np.asarray(y_hist, dtype=float).reshape(-1, self.p)
        if len(u_hist) != self.cfg.T_ini or len(y_hist) != self.cfg.T_ini:
            raise ValueError(f"history must hold exactly T_ini={self.cfg.T_ini} samples")
        self.history.clear()
        for u, y in zip(u_hist, y_hist):
            self.history.append((u.copy(), y.copy()))
        self.last_solution = None

    def set_extended_state(self, xi) -> None:
        xi = np.asarray(xi, dtype=float)
        T, m = self.cfg.T_ini, self.m
        self.reset_history(xi[:m * T], xi[m * T:])

    def update(self, u, y) -> None:
        self.history.append((np.asarray(u, dtype=float).reshape(self.m),
                             np.asarray(y, dtype=float).reshape(self.p)))

    def history_arrays(self):
        if len(self.history) != self.cfg.T_ini:
            raise RuntimeError("filter history is not initialized")
        u = np.array([h[0] for h in self.history])
        y = np.array([h[1] for h in self.history])
        return u, y

    @property
    def extended_state(self) -> np.ndarray:
        return stack_extended_state(*self.history_arrays())

    # -- optimization ------------------------------------------------------

    def assemble_qp(self, u_learning, vertices=None):
        """Build the filter QP; returns ``(problem, layout)``."""
        cfg, hk = self.cfg, self.hankel
        m, p, T, N = self.m, self.p, cfg.T_ini, cfg.N
        u_l = np.asarray(u_learning, dtype=float).reshape(m)
        u_hist, y_hist = self.history_arrays()
        V = self.safe_set.vertices if vertices is None else np.atleast_2d(vertices)
        nv = len(V)
        ky = self.output_set.qp_rows()[0].shape[0]
        lay = _Layout(hk.n_cols, m, p, T, cfg.n_pred, nv, N * ky)
        d = lay.size

        P = np.zeros((d, d))
        q = np.zeros(d)
        s0 = lay.u_block(0)
        P[s0, s0] = 2 * self.R
        q[s0] = -2 * self.R @ u_l
        if cfg.regularize:
            P[lay.alpha, lay.alpha] = 2 * cfg.eps_reg * np.eye(hk.n_cols)
        q[lay.slack] = cfg.slack_penalty * cfg.feas_tol
        q[lay.out_slack] = cfg.slack_penalty * cfg.feas_tol
        offset = float(u_l @ self.R @ u_l)

        rows, lo, hi = [], [], []

        def add(block, l, u):
            rows.append(block)
            lo.append(np.broadcast_to(l, block.shape[0]))
            hi.append(np.broadcast_to(u, block.shape[0]))

        # implicit model
        blk = np.zeros((m * cfg.L, d))
        blk[:, lay.alpha] = hk.Hu
        blk[:, lay.u] = -np.eye(m * cfg.L)
        add(blk, 0.0, 0.0)
        blk = np.zeros((p * cfg.L, d))
        blk[:, lay.alpha] = hk.Hy
        blk[:, lay.y] = -np.eye(p * cfg.L)
        add(blk, 0.0, 0.0)

        # initial condition pinned to measurements
        blk = np.zeros((m * T, d))
        blk[:, lay.u.start:lay.u.start + m * T] = np.eye(m * T)
        add(blk, u_hist.ravel(), u_hist.ravel())
        blk = np.zeros((p * T, d))
        blk[:, lay.y.start:lay.y.start + p * T] = np.eye(p * T)
        add(blk, y_hist.ravel(), y_hist.ravel())

        # terminal extended state in the hull of the safe-set vertices
        dim = (m + p) * T
        blk = np.zeros((dim + 1, d))
        blk[:m * T, lay.u.stop - m * T:lay.u.stop] = -np.eye(m * T)
        blk[m * T:dim, lay.y.stop - p * T:lay.y.stop] = -np.eye(p * T)
        blk[:dim, lay.beta] = V.T
        blk[:dim, lay.slack] = cfg.feas_tol * np.hstack([np.eye(dim), -np.eye(dim)])
        blk[dim, lay.beta] = 1.0
        add(blk, np.r_[np.zeros(dim), 1.0], np.r_[np.zeros(dim), 1.0])

        # input/output constraints over the horizon
        ft = cfg.feas_tol
        for k in range(N):
            M, l, u = self.input_set.qp_rows()
            blk = np.zeros((M.shape[0], d))
            blk[:, lay.u_block(k)] = M
            add(blk, l, u)
            M, l, u = self.output_set.qp_rows()
            blk = np.zeros((ky, d))
            blk[:, lay.y_block(k)] = M
            j = lay.out_slack.start + k * ky
            blk[:, j:j + ky] = -ft * np.eye(ky)
            j += N * ky
            blk[:, j:j + ky] = ft * np.eye(ky)
            add(blk, l, u)

        blk = np.zeros((nv, d))
        blk[:, lay.beta] = np.eye(nv)
        add(blk, 0.0, np.inf)
        n_sl = lay.out_slack.stop - lay.slack.start
        blk = np.zeros((n_sl, d))
        blk[:, lay.slack.start:] = np.eye(n_sl)
        add(blk, 0.0, 1.0)

        prob = QpProblem(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi),
                         offset=offset)
        return prob, lay

    def _warm_start(self, lay: _Layout):
        prev, old = self.last_solution, self._last_layout
        if prev is None or old is None or not self.cfg.warm_start:
            return None
        z = np.zeros(lay.size)
        a = prev[old.alpha]
        z[lay.alpha.start + 1:lay.alpha.stop] = a[:-1]
        m, p = self.m, self.p
        u = prev[old.u]
        y = prev[old.y]
        z[lay.u] = np.r_[u[m:], u[-m:]]
        z[lay.y] = np.r_[y[p:], y[-p:]]
        nv_old = old.beta.stop - old.beta.start
        nv = lay.beta.stop - lay.beta.start
        beta = prev[old.beta][:min(nv, nv_old)].clip(min=0)
        if beta.sum() > 0:
            z[lay.beta.start:lay.beta.start + beta.size] = beta / beta.sum()
        return z

    def assemble_condensed(self, u_learning, vertices=None) -> QpProblem:
        """Filter QP over ``[g; beta]`` with trajectories ``W g``."""
        cfg, B = self.cfg, self.basis
        m, p, T, N, L = self.m, self.p, cfg.T_ini, cfg.N, cfg.L
        u_l = np.asarray(u_learning, dtype=float).reshape(m)
        u_hist, y_hist = self.history_arrays()
        V = self.safe_set.vertices if vertices is None else np.atleast_2d(vertices)
        r, nv = B.rank, len(V)
        dim = (m + p) * T
        ky = self.output_set.qp_rows()[0].shape[0]
        n_sl = 2 * dim + 2 * N * ky
        d = r + nv + n_sl
        ft = cfg.feas_tol
        o0 = r + nv + 2 * dim          # first output slack column

        E0 = B.u_rows(T)
        P = np.zeros((d, d))
        q = np.zeros(d)
        P[:r, :r] = 2 * E0.T @ self.R @ E0
        if cfg.regularize:
            P[:r, :r] += 2 * cfg.eps_reg * np.diag(1.0 / B.S ** 2)
        P = 0.5 * (P + P.T)
        q[:r] = -2 * E0.T @ self.R @ u_l
        q[r + nv:] = cfg.slack_penalty * ft
        offset = float(u_l @ self.R @ u_l)

        rows, lo, hi = [], [], []

        def add(block, l, u):
            rows.append(block)
            lo.append(np.broadcast_to(l, block.shape[0]))
            hi.append(np.broadcast_to(u, block.shape[0]))

        blk = np.zeros(((m + p) * T, d))
        blk[:m * T, :r] = B.Wu[:m * T]
        blk[m * T:, :r] = B.Wy[:p * T]
        h = np.r_[u_hist.ravel(), y_hist.ravel()]
        add(blk, h, h)

        blk = np.zeros((dim + 1, d))
        blk[:m * T, :r] = B.Wu[m * (L - T):]
        blk[m * T:dim, :r] = B.Wy[p * (L - T):]
        blk[:dim, r:r + nv] = -V.T
        blk[:dim, r + nv:o0] = ft * np.hstack([-np.eye(dim), np.eye(dim)])
        blk[dim, r:r + nv] = 1.0
        add(blk, np.r_[np.zeros(dim), 1.0], np.r_[np.zeros(dim), 1.0])

        for k in range(N):
            M, l, u = self.input_set.qp_rows()
            blk = np.zeros((M.shape[0], d))
            blk[:, :r] = M @ B.u_rows(T + k)
            add(blk, l, u)
            M, l, u = self.output_set.qp_rows()
            blk = np.zeros((ky, d))
            blk[:, :r] = M @ B.y_rows(T + k)
            j = o0 + k * ky
            blk[:, j:j + ky] = -ft * np.eye(ky)
            j += N * ky
            blk[:, j:j + ky] = ft * np.eye(ky)
            add(blk, l, u)

        blk = np.zeros((nv + n_sl, d))
        blk[:, r:] = np.eye(nv + n_sl)
        add(blk, 0.0, np.r_[np.full(nv, np.inf), np.ones(n_sl)])
        return QpProblem(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi),
                         offset=offset)

    def _run_backend(self, prob: QpProblem, x0=None) -> QpSolution:
        if self.cfg.backend != "interior":
            return qpcore.AdmmSolver(prob, self.cfg.solver).solve(x0)
        first = sol = solve_interior(prob, self.cfg.interior)
        # eliminating weakly curved variables can stall near the edge of the
        # viable set; retry with less elimination before giving up
        for threshold in SCHUR_FALLBACK:
            if sol.status in (qpcore.OPTIMAL, qpcore.INFEASIBLE):
                return sol
            if threshold < self.cfg.interior.schur_threshold:
                sol = solve_interior(prob, replace(self.cfg.interior,
                                                   schur_threshold=threshold))
        return sol if sol.status == qpcore.OPTIMAL else first

    def solve(self, u_learning, vertices=None):
        """Solve the filter QP; returns ``(problem, layout, solution)`` in
        the full ``[alpha; u_bar; y_bar; beta]`` layout."""
        if not self.cfg.condensed:
            prob, lay = self.assemble_qp(u_learning, vertices)
            sol = self._run_backend(prob, self._warm_start(lay))
            return prob, lay, sol
        cprob = self.assemble_condensed(u_learning, vertices)
        csol = self._run_backend(cprob)
        r = self.basis.rank
        dim = (self.m + self.p) * self.cfg.T_ini
        ky = self.output_set.qp_rows()[0].shape[0]
        nv = cprob.n_vars - r - 2 * dim - 2 * self.cfg.N * ky
        lay = _Layout(self.hankel.n_cols, self.m, self.p, self.cfg.T_ini,
                      self.cfg.n_pred, nv, self.cfg.N * ky)
        g = csol.z[:r]
        z = np.empty(lay.size)
        z[lay.alpha] = self.basis.alpha(g)
        z[lay.u] = self.basis.Wu @ g
        z[lay.y] = self.basis.Wy @ g
        z[lay.beta] = csol.z[r:r + nv]
        z[lay.slack.start:] = csol.z[r + nv:]
        sol = QpSolution(z=z, status=csol.status, objective=csol.objective,
                         primal_residual=csol.primal_residual,
                         dual_residual=csol.dual_residual,
                         iterations=csol.iterations, dual=None)
        return cprob, lay, sol

    def filter_input(self, u_learning, vertices=None, dump_qp=None):
        """Return ``(u_safe, backup)``: the input closest to ``u_learning``
        that admits a backup trajectory ending in the safe set."""
        prob, lay, sol = self.solve(u_learning, vertices)
        if dump_qp is not None:
            qpcore.dump_qp(self.assemble_qp(u_learning, vertices)[0], dump_qp)
        if sol.status == qpcore.INFEASIBLE:
            raise FilterInfeasible(
                f"filter QP infeasible at t={self.t} from extended state {self.extended_state}")
        if sol.status != qpcore.OPTIMAL:
            raise SolverFailure(
                f"QP solver returned {sol.status} after {sol.iterations} iterations "
                f"(residuals {sol.primal_residual:.2e}, {sol.dual_residual:.2e})")
        self.last_solution, self._last_layout = sol.z, lay
        backup = self._backup(sol, lay)
        return backup.u_bar[0].copy(), backup

    def _backup(self, sol: QpSolution, lay: _Layout) -> BackupTrajectory:
        z, m, p, T = sol.z, self.m, self.p, self.cfg.T_ini
        u_all = z[lay.u].reshape(-1, m)
        y_all = z[lay.y].reshape(-1, p)
        return BackupTrajectory(u_all[T:], y_all[T:], z[lay.alpha], z[lay.beta],
                                sol.objective, u_all[:T], y_all[:T], sol)

    # -- closed loop -------------------------------------------------------

    def step_online(self, plant: DelayedLtiPlant, u_learning, expand: bool = True,
                    dump_qp=None) -> StepRecord:
        """Filter ``u_learning``, apply it to ``plant`` and grow the safe set."""
        n_vertices = len(self.safe_set)
        u_safe, backup = self.filter_input(u_learning, dump_qp=dump_qp)
        y = plant.step(u_safe)
        self.update(u_safe, y)
        growth = 0.0
        if expand:
            gen = self.safe_set.generation
            self.safe_set.insert(self.extended_state)
            growth = self.safe_set.growth_metric(gen)
        sol = backup.solution
        rec = StepRecord(self.t, self.t * SAMPLING_TIME, np.atleast_1d(u_learning).astype(float),
                         u_safe, y, backup.objective, sol.status, sol.iterations,
                         n_vertices, growth)
        self.t += 1
        return rec


@dataclass
class OnlineResult:
    records: List[StepRecord]
    converged_at: Optional[int]
    snapshots: Dict[int, np.ndarray]


def run_closed_loop(filt: SafetyFilter, plant: DelayedLtiPlant, learning: Sequence,
                    expand: bool = False, window: int = W_ONLINE,
                    stop_on_convergence: bool = True,
                    snapshot_steps: Sequence[int] = (),
                    dump_dir=None) -> OnlineResult:
    """Run the filter in closed loop; with ``expand`` this is the online
    set-expansion loop, which stops growing the set once it has not
    changed for ``window`` consecutive steps."""
    records, quiet, converged_at = [], 0, None
    snapshots = {}
    snap = set(snapshot_steps)
    for t, u_l in enumerate(learning):
        if t in snap:
            snapshots[t] = filt.safe_set.vertices
        grow = expand and converged_at is None
        dump = None if dump_dir is None else Path(dump_dir) / f"step_{t:05d}"
        rec = filt.step_online(plant, u_l, expand=grow, dump_qp=dump)
        records.append(rec)
        if grow:
            quiet = quiet + 1 if rec.growth_metric <= filt.cfg.novelty_tol else 0
            if quiet >= window:
                converged_at = t
                if not stop_on_convergence:
                    quiet, converged_at = 0, None
                logger.info("online safe set converged at step %d with %d vertices",
                            t, len(filt.safe_set))
    if len(learning) in snap:
        snapshots[len(learning)] = filt.safe_set.vertices
    return OnlineResult(records, converged_at, snapshots)


@dataclass
class OfflineResult:
    safe_set: SampledSafeSet
    iterations: int
    converged: bool
    growth: List[float]
    snapshots: Dict[int, np.ndarray]


def expand_offline(hankel: HankelPair, cfg: FilterConfig, seed_set: SampledSafeSet,
                   rng_seed: int, input_set: Optional[Polytope] = None,
                   output_set: Optional[Polytope] = None, max_iter: int = 1000,
                   window: int = W_OFFLINE, snapshot_iters: Sequence[int] = (),
                   callback: Optional[Callable[[int, SampledSafeSet], None]] = None,
                   ) -> OfflineResult:
    """Grow a safe set from backup trajectories predicted by the data alone.

    Each iteration starts from an extended state of the current set, probes
    with an extreme input, and inserts every predicted extended state of
    the backup.  The next start is the newly inserted state farthest from
    the previous hull (or a random vertex when nothing was added).
    """
    input_set = input_set if input_set is not None else seed_set.input_set
    output_set = output_set if output_set is not None else seed_set.output_set
    if input_set is None or output_set is None:
        raise ValueError("constraint sets are required")
    safe = seed_set.copy()
    filt = SafetyFilter(hankel, cfg, input_set, output_set, safe)
    rng = np.random.default_rng(rng_seed)
    probes = input_set.vertices()
    phase = int(rng.integers(len(probes)))
    xi = safe.vertices[0]
    growth_hist, snapshots, quiet = [], {}, 0
    snap = set(snapshot_iters)
    converged, it = False, 0

    for it in range(max_iter):
        if it in snap:
            snapshots[it] = safe.vertices
        filt.set_extended_state(xi)
        try:
            _, backup = filt.filter_input(probes[(phase + it) % len(probes)])
        except FilterInfeasible as exc:
            if it == 0:
                raise FilterInfeasible(
                    "offline expansion: no backup trajectory from the seed set "
                    f"within N={cfg.N} steps") from exc
            raise
        pre = safe.vertices
        best, best_d = [], 0.0
        for j in range(cfg.n_pred):
            cand = backup.extended_state(j)
            dist = hull_distance(pre, cand)
            # inside the pre-round hull means inside the current one too
            if dist <= safe.novelty_tol or not safe.insert(cand):
                continue
            if dist > best_d + 1e-12:
                best, best_d = [cand], dist
            elif abs(dist - best_d) <= 1e-12:
                best.append(cand)
        growth_hist.append(best_d)
        if callback is not None:
            callback(it, safe)
        quiet = quiet + 1 if best_d <= cfg.novelty_tol else 0
        if quiet >= window:
            converged = True
            break
        if best_d > cfg.novelty_tol:
            xi = best[int(rng.integers(len(best)))] if len(best) > 1 else best[0]
        else:
            V = safe.vertices
            xi = V[int(rng.integers(len(V)))]
    n_iter = it + 1
    if n_iter in snap or max_iter in snap:
        snapshots[n_iter] = safe.vertices
    return OfflineResult(safe, n_iter, converged, growth_hist, snapshots)
