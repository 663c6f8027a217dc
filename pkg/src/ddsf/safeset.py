"""Sampled terminal safe sets stored as vertex lists (V-representation)."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .consets import FEAS_TOL, Polytope
from .datamat import split_extended_state, stack_extended_state

NOVELTY_TOL = 1e-6
PRUNE_EVERY = 25
REDUNDANCY_TOL = 1e-9   # LP distance below which a vertex counts as redundant


def hull_distance(V, xi) -> float:
    """L-infinity distance from ``xi`` to the convex hull of the rows of ``V``.

    Solves  min s  s.t.  -s <= V'beta - xi <= s,  sum(beta) = 1,  beta >= 0.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    xi = np.asarray(xi, dtype=float).ravel()
    k, dim = V.shape
    if xi.size != dim:
        raise ValueError(f"expected point of length {dim}, got {xi.size}")
    if k == 1:
        return float(np.max(np.abs(V[0] - xi)))
    c = np.zeros(k + 1)
    c[-1] = 1.0
    ones = np.ones((dim, 1))
    A_ub = np.block([[V.T, -ones], [-V.T, -ones]])
    b_ub = np.concatenate([xi, -xi])
    A_eq = np.concatenate([np.ones(k), [0.0]])[None, :]
    # the LP is always feasible and bounded; near-duplicate vertices can
    # still stall one HiGHS algorithm, so fall back to the others
    for method in ("highs", "highs-ds", "highs-ipm"):
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                      bounds=[(0, None)] * (k + 1), method=method)
        if res.status == 0:
            return max(float(res.x[-1]), 0.0)
    raise RuntimeError(f"hull distance LP failed: {res.message}")


def extreme_points(V, method: str = "auto") -> np.ndarray:
    """Boolean mask of the rows of ``V`` that are vertices of their hull.

    ``"qhull"`` works in affine-hull coordinates and keeps the first copy of
    duplicated rows; ``"lp"`` tests each row against the hull of the rows
    kept so far, newest first.  ``"auto"`` tries Qhull and falls back to LP.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if method not in ("auto", "qhull", "lp"):
        raise ValueError(f"unknown method {method!r}")
    if method != "lp":
        mask = _extreme_qhull(V)
        if mask is not None:
            return mask
        if method == "qhull":
            raise RuntimeError("Qhull could not process the vertex set")
    return _extreme_lp(V)


def _extreme_lp(V):
    keep = np.ones(len(V), dtype=bool)
    for i in reversed(range(len(V))):
        if keep.sum() == 1:
            break
        others = keep.copy()
        others[i] = False
        try:
            keep[i] = hull_distance(V[others], V[i]) > REDUNDANCY_TOL
        except RuntimeError:
            pass
    return keep


def _extreme_qhull(V):
    _, first = np.unique(V, axis=0, return_index=True)
    first = np.sort(first)
    W = V[first]
    X = W - W.mean(axis=0)
    _, S, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(S > 1e-9 * max(1.0, S[0] if S.size else 0.0)))
    keep = np.zeros(len(V), dtype=bool)
    if r == 0:
        keep[first[0]] = True
        return keep
    Y = X @ Vt[:r].T
    if r == 1:
        keep[first[[np.argmin(Y[:, 0]), np.argmax(Y[:, 0])]]] = True
        return keep
    if len(W) <= r + 1:
        keep[first] = True
        return keep
    hull = None
    for opts in (None, "QbB", "QbB Q12"):
        try:
            hull = ConvexHull(Y, qhull_options=opts)
            break
        except QhullError:
            continue
    if hull is None:
        return None
    keep[first[hull.vertices]] = True
    # Qhull merges nearly coincident facets; confirm each drop with an LP
    for i in first[~np.isin(np.arange(len(W)), hull.vertices)]:
        try:
            redundant = hull_distance(V[keep], V[i]) <= REDUNDANCY_TOL
        except RuntimeError:
            redundant = False   # keeping a vertex never changes the hull
        keep[i] = not redundant
    return keep


class SampledSafeSet:
    """Convex hull of sampled extended states.

    Vertices are rows of :attr:`vertices`, each of length ``(m+p)*T_ini``.
    ``generation`` counts insertions that grew the hull.  When the
    constraint sets are given, every vertex must have its input blocks in
    ``input_set`` and its output blocks in ``output_set``.
    """

    def __init__(self, vertices, m: int, p: int,
                 input_set: Optional[Polytope] = None,
                 output_set: Optional[Polytope] = None,
                 novelty_tol: float = NOVELTY_TOL,
                 feas_tol: float = FEAS_TOL,
                 prune_every: Optional[int] = PRUNE_EVERY):
        V = np.atleast_2d(np.asarray(vertices, dtype=float))
        if V.shape[0] < 1:
            raise ValueError("safe set needs at least one vertex")
        self.m, self.p = m, p
        self.dim = V.shape[1]
        self.T_ini, rem = divmod(self.dim, m + p)
        if rem or self.T_ini < 1:
            raise ValueError(f"vertex length {self.dim} incompatible with m={m}, p={p}")
        self.input_set, self.output_set = input_set, output_set
        self.novelty_tol, self.feas_tol = novelty_tol, feas_tol
        self.prune_every = prune_every
        for v in V:
            self._check_constraints(v)
        self._V = V.copy()
        self._born = np.zeros(len(V), dtype=int)
        self.generation = 0
        self.growth_log: List[tuple] = []
        self._since_prune = 0

    @classmethod
    def from_equilibrium(cls, u_s, y_s, T_ini: int,
                         input_set: Optional[Polytope] = None,
                         output_set: Optional[Polytope] = None, **kwargs):
        u_s = np.atleast_1d(np.asarray(u_s, dtype=float))
        y_s = np.atleast_1d(np.asarray(y_s, dtype=float))
        xi = stack_extended_state(np.tile(u_s, (T_ini, 1)), np.tile(y_s, (T_ini, 1)))
        return cls(xi[None, :], u_s.size, y_s.size, input_set, output_set, **kwargs)

    def __len__(self):
        return len(self._V)

    def __repr__(self):
        return (f"SampledSafeSet(n_vertices={len(self)}, dim={self.dim}, "
                f"generation={self.generation})")

    @property
    def vertices(self) -> np.ndarray:
        return self._V.copy()

    def copy(self) -> "SampledSafeSet":
        other = SampledSafeSet.__new__(SampledSafeSet)
        other.__dict__.update(self.__dict__)
        other._V = self._V.copy()
        other._born = self._born.copy()
        other.growth_log = list(self.growth_log)
        return other

    def _check_constraints(self, xi) -> None:
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.size != getattr(self, "dim", xi.size):
            raise ValueError(f"expected extended state of length {self.dim}, got {xi.size}")
        u_win, y_win = split_extended_state(xi, self.m, self.p)
        if self.input_set is not None and not all(
                self.input_set.contains(u, self.feas_tol) for u in u_win):
            raise ValueError("extended state has an input outside the input constraints")
        if self.output_set is not None and not all(
                self.output_set.contains(y, self.feas_tol) for y in y_win):
            raise ValueError("extended state has an output outside the output constraints")

    def distance(self, xi) -> float:
        return hull_distance(self._V, xi)

    def contains(self, xi, tol: float = FEAS_TOL) -> bool:
        return self.distance(xi) <= tol

    def insert(self, xi) -> bool:
        """Add ``xi`` unless it already lies in the hull (within novelty_tol)."""
        xi = np.asarray(xi, dtype=float).ravel()
        self._check_constraints(xi)
        dist = self.distance(xi)
        if dist <= self.novelty_tol:
            return False
        self._V = np.vstack([self._V, xi])
        self.generation += 1
        self._born = np.append(self._born, self.generation)
        self.growth_log.append((self.generation, dist))
        self._since_prune += 1
        # hull cost grows with the vertex count, so prune on a geometric schedule
        if self.prune_every and \
                self._since_prune >= max(self.prune_every, len(self._V) // 4):
            self.prune()
        return True

    def prune(self, method: str = "auto") -> int:
        """Drop vertices that are convex combinations of the remaining ones."""
        self._since_prune = 0
        keep = extreme_points(self._V, method)
        removed = int((~keep).sum())
        self._V = self._V[keep]
        self._born = self._born[keep]
        return removed

    def vertices_at(self, generation: int) -> np.ndarray:
        """Surviving vertices that were present at ``generation``."""
        return self._V[self._born <= generation]

    def growth_metric(self, prev_generation: int,
                      probes: Optional[Iterable] = None) -> float:
        """Largest distance by which the hull grew since ``prev_generation``.

        With ``probes`` the distances are measured from each probe to the
        hull of the surviving vertices of ``prev_generation`` (an upper
        bound on the distance to the original hull).  Without probes the
        distances recorded at insertion time are used.
        """
        if self.generation == prev_generation:
            return 0.0
        if probes is None:
            return max((dist for gen, dist in self.growth_log if gen > prev_generation),
                       default=0.0)
        old = self.vertices_at(prev_generation)
        if len(old) == 0:
            raise ValueError("no surviving vertices from the requested generation")
        return max((hull_distance(old, xi) for xi in probes), default=0.0)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        T = self.T_ini
        header = ([f"u_{k}_{i}" for k in range(T) for i in range(self.m)]
                  + [f"y_{k}_{i}" for k in range(T) for i in range(self.p)])
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for v in self._V:
                w.writerow(map(repr, v.tolist()))

    @classmethod
    def from_csv(cls, path, m: int, p: int, **kwargs) -> "SampledSafeSet":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))[1:]
        return cls(np.array(rows, dtype=float), m, p, **kwargs)
