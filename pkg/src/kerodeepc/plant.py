"""Discrete-time plants used for data generation and closed-loop runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """A simulated state left the finite region (``|x|_inf > 1e6`` or NaN)."""


class Plant:
    """Base class: ``x+ = f(x, u)``, ``y = h(x)``.

    Subclasses implement :meth:`step`, :meth:`output` and the Jacobians
    :meth:`step_jacobian` / :meth:`output_jacobian` (needed by the NMPC
    baseline's sensitivities).
    """

    state_dim: int
    input_dim: int
    output_dim: int

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step_jacobian(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def output_jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, x, u=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.state_dim:
            raise ValueError(f"state has length {x.size}, expected {self.state_dim}")
        if u is None:
            return x
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != self.input_dim:
            raise ValueError(f"input has length {u.size}, expected {self.input_dim}")
        return x, u


@dataclass(frozen=True)
class VanDerPolPlant(Plant):
    """Euler-discretized Van der Pol oscillator with output ``y = x1``."""

    mu: float = 1.0
    ts: float = 0.1

    state_dim = 2
    input_dim = 1
    output_dim = 1

    def step(self, x, u):
        x, u = self._check(x, u)
        x1, x2 = x
        ts, mu = self.ts, self.mu
        return np.array(
            [
                x1 + ts * x2,
                -ts * x1 + x2 + ts * u[0] + ts * mu * (1.0 - x1 * x1) * x2,
            ]
        )

    def output(self, x):
        x = self._check(x)
        return x[:1].copy()

    def step_jacobian(self, x, u):
        x, u = self._check(x, u)
        x1, x2 = x
        ts, mu = self.ts, self.mu
        A = np.array(
            [
                [1.0, ts],
                [-ts - 2.0 * ts * mu * x1 * x2, 1.0 + ts * mu * (1.0 - x1 * x1)],
            ]
        )
        B = np.array([[0.0], [ts]])
        return A, B

    def output_jacobian(self, x):
        return np.array([[1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class LtiPlant(Plant):
    """``x+ = A x + B u``, ``y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, A.shape[0])
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def state_dim(self):
        return self.A.shape[0]

    @property
    def input_dim(self):
        return self.B.shape[1]

    @property
    def output_dim(self):
        return self.C.shape[0]

    def step(self, x, u):
        x, u = self._check(x, u)
        return self.A @ x + self.B @ u

    def output(self, x):
        x = self._check(x)
        return self.C @ x

    def step_jacobian(self, x, u):
        return self.A.copy(), self.B.copy()

    def output_jacobian(self, x):
        return self.C.copy()


def step(plant: Plant, x, u) -> np.ndarray:
    return plant.step(x, u)


def simulate(plant: Plant, x0, u_seq) -> tuple[np.ndarray, np.ndarray]:
    """Roll the plant forward from ``x0`` under ``u_seq``.

    Returns ``(states, outputs)`` of shapes ``(N, n)`` and ``(N, p)``: the
    successor states ``x_1..x_N`` and their outputs ``y_1..y_N``. The initial
    output ``h(x0)`` is not included.

    Raises
    ------
    DivergenceError
        If a state becomes non-finite or exceeds ``1e6`` in magnitude.
    """
    x = np.asarray(x0, dtype=float).reshape(-1)
    U = np.asarray(u_seq, dtype=float).reshape(-1, plant.input_dim)
    N = U.shape[0]
    if N < 1:
        raise ValueError("input sequence must have at least one step")
    X = np.empty((N, plant.state_dim))
    Y = np.empty((N, plant.output_dim))
    for k in range(N):
        x = plant.step(x, U[k])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state diverged at step {k + 1}: {x}")
        X[k] = x
        Y[k] = plant.output(x)
    return X, Y
