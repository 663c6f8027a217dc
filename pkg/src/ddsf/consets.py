"""Polytopic input/output constraint sets."""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog

FEAS_TOL = 1e-7


class Polytope:
    """H-representation ``{v : A_mat v <= b}``.

    The defining inequalities are strict in theory; membership uses the
    closure relaxed by ``feas_tol``.
    """

    def __init__(self, A_mat, b, interior_point=None):
        A_mat = np.atleast_2d(np.asarray(A_mat, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A_mat.shape[0] < 1 or A_mat.shape[0] != b.size:
            raise ValueError(f"need n_c >= 1 rows matching b, got {A_mat.shape} and {b.shape}")
        self.A_mat, self.b = A_mat, b
        if interior_point is None:
            interior_point = self._chebyshev_center()
        else:
            interior_point = np.asarray(interior_point, dtype=float).ravel()
            if not np.all(A_mat @ interior_point < b):
                raise ValueError("supplied point is not in the interior")
        self.interior_point = interior_point

    @property
    def dim(self) -> int:
        return self.A_mat.shape[1]

    def _chebyshev_center(self) -> np.ndarray:
        norms = np.linalg.norm(self.A_mat, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        res = linprog(c, A_ub=np.column_stack([self.A_mat, norms]), b_ub=self.b,
                      bounds=[(None, None)] * self.dim + [(0, None)], method="highs")
        if res.status == 3:
            # unbounded radius: the set contains a full ball of any size
            return np.linalg.lstsq(self.A_mat, self.b - 1.0, rcond=None)[0]
        if res.status != 0 or res.x[-1] <= 0:
            raise ValueError("polytope has an empty interior")
        return res.x[:-1]

    def _check_dim(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.dim:
            raise ValueError(f"expected vector of length {self.dim}, got {v.size}")
        return v

    def contains(self, v, feas_tol: float = FEAS_TOL) -> bool:
        v = self._check_dim(v)
        return bool(np.all(self.A_mat @ v <= self.b + feas_tol))

    def as_rows_for_horizon(self, k: int) -> "Polytope":
        """Block-diagonal copy constraining ``k`` stacked vectors at once."""
        if k < 1:
            raise ValueError(f"horizon must be positive, got {k}")
        if k == 1:
            return self
        return Polytope(block_diag(*[self.A_mat] * k), np.tile(self.b, k),
                        interior_point=np.tile(self.interior_point, k))

    def qp_rows(self):
        """Rows ``(M, lo, hi)`` with ``lo <= M v <= hi`` describing the set."""
        return self.A_mat, np.full(self.b.size, -np.inf), self.b

    def vertices(self) -> np.ndarray:
        """Vertex enumeration by brute force over ``dim``-subsets of facets."""
        d = self.dim
        out = []
        for rows in itertools.combinations(range(self.A_mat.shape[0]), d):
            M = self.A_mat[list(rows)]
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, self.b[list(rows)])
            if self.contains(v, 1e-9) and not any(np.allclose(v, w) for w in out):
                out.append(v)
        return np.array(out)


class BoxSet(Polytope):
    """Axis-aligned box ``lo <= v <= hi``."""

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box bounds must satisfy lo <= hi elementwise")
        self.lo, self.hi = lo, hi
        d = lo.size
        super().__init__(np.vstack([np.eye(d), -np.eye(d)]), np.concatenate([hi, -lo]),
                         interior_point=None if np.any(lo == hi) else (lo + hi) / 2)

    def __repr__(self):
        return f"BoxSet(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def contains(self, v, feas_tol: float = FEAS_TOL) -> bool:
        v = self._check_dim(v)
        return bool(np.all(v <= self.hi + feas_tol) and np.all(v >= self.lo - feas_tol))

    def qp_rows(self):
        return np.eye(self.lo.size), self.lo, self.hi

    def vertices(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)


def symmetric_box(bound: float, dim: int = 1) -> BoxSet:
    return BoxSet(-bound * np.ones(dim), bound * np.ones(dim))


def contains_all(poly: Polytope, vectors, feas_tol: Optional[float] = None) -> bool:
    tol = FEAS_TOL if feas_tol is None else feas_tol
    return all(poly.contains(v, tol) for v in np.atleast_2d(vectors))
