"""Discrete-time LTI plant with a pure input delay.

The plant is only used as a ground-truth simulator (data collection and
closed-loop runs).  The safety filter never reads its matrices.
"""
from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

#: Sampling time used for reporting step indices in seconds.
SAMPLING_TIME = 0.1


@dataclass(frozen=True)
class PlantDims:
    n: int
    m: int
    p: int

    def __post_init__(self):
        if min(self.n, self.m, self.p) < 1:
            raise ValueError(f"plant dimensions must be positive, got {self}")


class DelayedLtiPlant:
    """LTI system whose input reaches the dynamics ``tau_d`` steps late.

        x(t+1) = A x(t) + B u(t - tau_d)
        y(t)   = C x(t) + D u(t - tau_d)

    The last ``tau_d`` inputs are kept in a FIFO buffer (oldest first).
    """

    def __init__(self, A, B, C, D=None, tau_d: int = 0, x0=None, buffer0=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        B = B.reshape(n, -1)
        m = B.shape[1]
        if C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got shape {C.shape}")
        p = C.shape[0]
        D = np.zeros((p, m)) if D is None else np.asarray(D, dtype=float).reshape(p, m)
        if int(tau_d) != tau_d or tau_d < 0:
            raise ValueError(f"tau_d must be a non-negative integer, got {tau_d}")

        self.A, self.B, self.C, self.D = A, B, C, D
        self.tau_d = int(tau_d)
        self.dims = PlantDims(n, m, p)
        self.reset(x0, buffer0)

    def __repr__(self):
        n, m, p = self.dims.n, self.dims.m, self.dims.p
        return f"DelayedLtiPlant(n={n}, m={m}, p={p}, tau_d={self.tau_d})"

    def reset(self, x0=None, buffer0: Optional[Sequence] = None) -> None:
        """Set the state and delay buffer; both default to zeros."""
        n, m = self.dims.n, self.dims.m
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel()
        if x.shape != (n,):
            raise ValueError(f"x0 must have length {n}, got {x.shape}")
        if buffer0 is None:
            buf = [np.zeros(m) for _ in range(self.tau_d)]
        else:
            buf = [np.asarray(b, dtype=float).reshape(m) for b in buffer0]
            if len(buf) != self.tau_d:
                raise ValueError(
                    f"delay buffer must hold {self.tau_d} inputs, got {len(buf)}")
        self.x = x.copy()
        self.delay_buffer = deque(buf)

    def step(self, u) -> np.ndarray:
        """Apply ``u`` and return the output y(t), measured before the update."""
        u = np.asarray(u, dtype=float).ravel()
        if u.shape != (self.dims.m,):
            raise ValueError(f"u must have length {self.dims.m}, got {u.shape}")
        if self.tau_d:
            u_del = self.delay_buffer.popleft()
            self.delay_buffer.append(u.copy())
        else:
            u_del = u
        y = self.C @ self.x + self.D @ u_del
        self.x = self.A @ self.x + self.B @ u_del
        return y

    def simulate(self, inputs) -> np.ndarray:
        """Step through ``inputs`` (shape (T, m)) and return outputs (T, p)."""
        inputs = np.asarray(inputs, dtype=float).reshape(-1, self.dims.m)
        return np.array([self.step(u) for u in inputs]).reshape(-1, self.dims.p)

    def copy(self) -> "DelayedLtiPlant":
        return copy.deepcopy(self)

    def augment(self) -> "DelayedLtiPlant":
        """Delay-free realization with state ``[x; u(t-tau_d); ...; u(t-1)]``.

        The delayed inputs become extra states, so the returned plant has
        ``tau_d = 0`` and the same input-output map.  Its initial state is
        built from the current state and buffer.
        """
        if self.tau_d == 0:
            raise ValueError("plant has no input delay to augment")
        n, m, p = self.dims.n, self.dims.m, self.dims.p
        k = self.tau_d
        na = n + m * k
        Aa = np.zeros((na, na))
        Aa[:n, :n] = self.A
        Aa[:n, n:n + m] = self.B
        # shift register: d_i(t+1) = d_{i+1}(t)
        Aa[n:n + m * (k - 1), n + m:] = np.eye(m * (k - 1))
        Ba = np.zeros((na, m))
        Ba[na - m:, :] = np.eye(m)
        Ca = np.zeros((p, na))
        Ca[:, :n] = self.C
        Ca[:, n:n + m] = self.D
        xa = np.concatenate([self.x, *self.delay_buffer])
        return DelayedLtiPlant(Aa, Ba, Ca, np.zeros((p, m)), tau_d=0, x0=xa)

    def lag(self) -> int:
        """Observability index of the delay-free realization."""
        plant = self.augment() if self.tau_d else self
        A, C = plant.A, plant.C
        n = A.shape[0]
        blocks, M = [], C
        for l in range(1, n + 1):
            blocks.append(M)
            if np.linalg.matrix_rank(np.vstack(blocks)) == n:
                return l
            M = M @ A
        raise ValueError("pair (A, C) is not observable")


def benchmark_plant(tau_d: int = 1) -> DelayedLtiPlant:
    """Second-order benchmark used in the case studies, with scalar I/O."""
    A = [[1.0, -0.1], [0.0, 1.0]]
    B = [[0.0], [0.1]]
    C = [[1.0, 0.0]]
    return DelayedLtiPlant(A, B, C, tau_d=tau_d)
