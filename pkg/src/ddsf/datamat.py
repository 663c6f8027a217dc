"""Trajectory records, Hankel matrices and persistency of excitation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

DEFAULT_RANK_TOL = 1e-9


@dataclass(frozen=True)
class Trajectory:
    """Input/output samples; ``u`` has shape (N0, m) and ``y`` (N0, p)."""

    u: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        u = u.reshape(len(u), -1)
        y = y.reshape(len(y), -1)
        if len(u) != len(y):
            raise ValueError(f"u and y lengths differ: {len(u)} != {len(y)}")
        if len(u) < 1:
            raise ValueError("trajectory must contain at least one sample")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.u)

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def to_csv(self, path) -> None:
        header = (["t"] + [f"u_{i}" for i in range(self.m)]
                  + [f"y_{i}" for i in range(self.p)])
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for t, (u, y) in enumerate(zip(self.u, self.y)):
                w.writerow([t, *map(repr, u.tolist()), *map(repr, y.tolist())])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        ucols = [i for i, h in enumerate(header) if h.startswith("u_")]
        ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
        data = np.array(body, dtype=float)
        return cls(data[:, ucols], data[:, ycols])


def hankel_matrix(x, L: int) -> np.ndarray:
    """Block-Hankel matrix of depth ``L`` from samples ``x`` of shape (N0, k).

    Column ``j`` stacks ``x_j, ..., x_{j+L-1}``.
    """
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1)
    N0, k = x.shape
    if L < 1:
        raise ValueError(f"depth must be positive, got {L}")
    if L > N0:
        raise ValueError(f"depth L={L} exceeds trajectory length {N0}")
    cols = N0 - L + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (L, k))[:, 0]
    return windows.reshape(cols, L * k).T.copy()


@dataclass(frozen=True)
class HankelPair:
    Hu: np.ndarray
    Hy: np.ndarray
    L: int
    m: int
    p: int

    @property
    def n_cols(self) -> int:
        return self.Hu.shape[1]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.Hu, self.Hy])


def build_hankel(traj: Trajectory, L: int) -> HankelPair:
    return HankelPair(hankel_matrix(traj.u, L), hankel_matrix(traj.y, L),
                      L, traj.m, traj.p)


def numerical_rank(M, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def is_persistently_exciting(u, order: int,
                             rank_tol: float = DEFAULT_RANK_TOL) -> bool:
    """True iff the depth-``order`` Hankel matrix of ``u`` has rank m*order."""
    u = np.asarray(u, dtype=float)
    u = u.reshape(len(u), -1)
    if order < 1 or len(u) < order:
        return False
    return numerical_rank(hankel_matrix(u, order), rank_tol) == u.shape[1] * order


def extended_state(traj: Trajectory, t: int, T_ini: int) -> np.ndarray:
    """Last ``T_ini`` inputs then last ``T_ini`` outputs before time ``t``."""
    if T_ini < 1:
        raise ValueError(f"T_ini must be positive, got {T_ini}")
    if t < T_ini or t > len(traj):
        raise ValueError(f"need T_ini <= t <= {len(traj)}, got t={t}, T_ini={T_ini}")
    return stack_extended_state(traj.u[t - T_ini:t], traj.y[t - T_ini:t])


def stack_extended_state(u_window, y_window) -> np.ndarray:
    return np.concatenate([np.ravel(u_window), np.ravel(y_window)]).astype(float)


def split_extended_state(xi, m: int, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`stack_extended_state`: windows of shape (T_ini, m), (T_ini, p)."""
    xi = np.asarray(xi, dtype=float)
    T_ini, rem = divmod(xi.size, m + p)
    if rem:
        raise ValueError(f"length {xi.size} is not a multiple of m+p={m + p}")
    return xi[:m * T_ini].reshape(T_ini, m), xi[m * T_ini:].reshape(T_ini, p)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        return "\n".join(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}"
                         for c in self.checks)


def validate_assumptions(traj: Trajectory, N: int, T_ini: int, n_bar: int = 4,
                         rank_tol: float = DEFAULT_RANK_TOL,
                         depth: Optional[int] = None) -> ValidationReport:
    """Check horizon length, input excitation and data length for a filter.

    ``depth`` is the Hankel depth L (default ``T_ini + N``); the input must
    be persistently exciting of order ``L + n_bar`` and the data must give
    at least ``m * (L + n_bar)`` Hankel columns.
    """
    report = ValidationReport()
    report.checks.append(Check(
        "horizon", N > T_ini, f"N={N} must exceed T_ini={T_ini}"))

    L = T_ini + N if depth is None else depth
    order = L + n_bar
    N0, m = len(traj), traj.m
    if N0 >= order:
        rank = numerical_rank(hankel_matrix(traj.u, order), rank_tol)
    else:
        rank = 0
    report.checks.append(Check(
        "persistent_excitation", rank == m * order,
        f"rank H_{order}(u) = {rank}, required {m * order}"))

    cols = N0 - L + 1
    report.checks.append(Check(
        "data_length", cols >= m * (L + n_bar),
        f"N0-L+1 = {cols}, required >= {m * (L + n_bar)}"))
    return report
