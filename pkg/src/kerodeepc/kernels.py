"""Kernel functions, Gram matrices and vector-kernels."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .numerics import kron


class KernelFamily(str, Enum):
    GAUSSIAN = "gaussian"
    HARDY = "hardy"
    LINEAR = "linear"
    WEIGHTED_GAUSSIAN = "weighted_gaussian"


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its parameters.

    ``weights`` (weighted Gaussian only) hold ``1 / sigma_i**2`` per
    coordinate; build them with :meth:`weighted_gaussian` from per-coordinate
    length scales.
    """

    family: KernelFamily
    sigma: float = 1.0
    exponent: float = 0.5
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family in (KernelFamily.GAUSSIAN, KernelFamily.HARDY) and not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.family is KernelFamily.WEIGHTED_GAUSSIAN:
            if self.weights is None or len(self.weights) == 0:
                raise ValueError("weighted Gaussian kernel needs per-coordinate weights")
            w = tuple(float(v) for v in self.weights)
            if any(not v > 0 for v in w):
                raise ValueError("all weights must be positive")
            object.__setattr__(self, "weights", w)

    @classmethod
    def gaussian(cls, sigma: float) -> "KernelSpec":
        return cls(KernelFamily.GAUSSIAN, sigma=sigma)

    @classmethod
    def hardy(cls, sigma: float, exponent: float = 0.5) -> "KernelSpec":
        return cls(KernelFamily.HARDY, sigma=sigma, exponent=exponent)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(KernelFamily.LINEAR)

    @classmethod
    def weighted_gaussian(cls, sigmas) -> "KernelSpec":
        sigmas = np.asarray(sigmas, dtype=float)
        if np.any(~(sigmas > 0)):
            raise ValueError(f"length scales must be positive, got {sigmas}")
        return cls(KernelFamily.WEIGHTED_GAUSSIAN, weights=tuple(1.0 / sigmas**2))

    @property
    def unit_diagonal(self) -> bool:
        return self.family in (KernelFamily.GAUSSIAN, KernelFamily.WEIGHTED_GAUSSIAN)


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2:
        raise ValueError("points must be a list of vectors")
    return P


def _check_weights(spec: KernelSpec, dim: int) -> np.ndarray | None:
    if spec.family is not KernelFamily.WEIGHTED_GAUSSIAN:
        return None
    w = np.asarray(spec.weights)
    if w.size != dim:
        raise ValueError(f"kernel has {w.size} weights but points have dimension {dim}")
    return w


def cross_kernel(spec: KernelSpec, A, B) -> np.ndarray:
    """Matrix ``out[i, j] = k(A[i], B[j])`` for two point sets (rows)."""
    A = _as_points(A)
    B = _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    fam = spec.family
    if fam is KernelFamily.LINEAR:
        return A @ B.T
    w = _check_weights(spec, A.shape[1])
    if w is not None:
        sw = np.sqrt(w)
        A = A * sw
        B = B * sw
    # coordinate-wise differences: exact zeros on the diagonal, no cancellation
    d2 = np.zeros((A.shape[0], B.shape[0]))
    for c in range(A.shape[1]):
        diff = A[:, c, None] - B[None, :, c]
        diff *= diff
        d2 += diff
    if fam is KernelFamily.GAUSSIAN:
        return np.exp(-d2 / spec.sigma**2)
    if fam is KernelFamily.WEIGHTED_GAUSSIAN:
        return np.exp(-d2)
    return (1.0 + d2 / spec.sigma**2) ** spec.exponent


def eval_kernel(spec: KernelSpec, z1, z2) -> float:
    """Evaluate ``k(z1, z2)`` directly from the closed-form definition."""
    z1 = np.atleast_1d(np.asarray(z1, dtype=float))
    z2 = np.atleast_1d(np.asarray(z2, dtype=float))
    if z1.shape != z2.shape:
        raise ValueError(f"dimension mismatch: {z1.shape} vs {z2.shape}")
    fam = spec.family
    if fam is KernelFamily.LINEAR:
        return float(z1 @ z2)
    diff = z1 - z2
    if fam is KernelFamily.WEIGHTED_GAUSSIAN:
        w = _check_weights(spec, z1.size)
        return float(np.exp(-np.sum(w * diff**2)))
    d2 = float(diff @ diff)
    if fam is KernelFamily.GAUSSIAN:
        return float(np.exp(-d2 / spec.sigma**2))
    return float((1.0 + d2 / spec.sigma**2) ** spec.exponent)


@dataclass(frozen=True)
class GramMatrix:
    points: np.ndarray
    matrix: np.ndarray
    kernel: KernelSpec

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def gram(spec: KernelSpec, points, block: int = 1024) -> GramMatrix:
    """Gram matrix of ``points`` (one point per row).

    Only the upper triangle is computed, in row blocks, and then mirrored so
    the result is exactly symmetric. Memory stays at one ``T x T`` array plus
    one ``block x T`` temporary.
    """
    P = _as_points(points)
    T = P.shape[0]
    if T == 0:
        raise ValueError("gram needs at least one point")
    _check_weights(spec, P.shape[1])
    K = np.empty((T, T))
    for start in range(0, T, block):
        stop = min(start + block, T)
        K[start:stop, start:] = cross_kernel(spec, P[start:stop], P[start:])
    for i in range(1, T):
        K[i, :i] = K[:i, i]
    return GramMatrix(points=P, matrix=K, kernel=spec)


def kernel_vector(spec: KernelSpec, z, points) -> np.ndarray:
    """``col(k(z, z_1), ..., k(z, z_T))``."""
    P = _as_points(points)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != P.shape[1]:
        raise ValueError(f"dimension mismatch: query {z.size}, points {P.shape[1]}")
    return cross_kernel(spec, z[None, :], P)[0]


def kernel_vector_jacobian(spec: KernelSpec, z, points) -> np.ndarray:
    """Jacobian of :func:`kernel_vector` w.r.t. ``z``; shape ``(T, dim)``.

    Row ``i`` is the gradient of ``k(z, z_i)``.
    """
    P = _as_points(points)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != P.shape[1]:
        raise ValueError(f"dimension mismatch: query {z.size}, points {P.shape[1]}")
    fam = spec.family
    if fam is KernelFamily.LINEAR:
        return P.copy()
    diff = z[None, :] - P
    k = kernel_vector(spec, z, P)
    if fam is KernelFamily.GAUSSIAN:
        return (-2.0 / spec.sigma**2) * k[:, None] * diff
    if fam is KernelFamily.WEIGHTED_GAUSSIAN:
        w = np.asarray(spec.weights)
        return -2.0 * k[:, None] * (w[None, :] * diff)
    # Hardy: d/dz (1 + d2/s^2)^e = e (1 + d2/s^2)^(e-1) * 2 diff / s^2
    base = 1.0 + (diff**2).sum(1) / spec.sigma**2
    return (spec.exponent * base ** (spec.exponent - 1.0) * 2.0 / spec.sigma**2)[:, None] * diff


def product_kernel_vector(ku_vec, kx_vec) -> np.ndarray:
    """``ku kron kx`` with input-sequence index outer, state index inner."""
    ku_vec = np.asarray(ku_vec, dtype=float).ravel()
    kx_vec = np.asarray(kx_vec, dtype=float).ravel()
    return np.outer(ku_vec, kx_vec).ravel()


def product_gram(ku: GramMatrix, kx: GramMatrix) -> np.ndarray:
    """Materialized ``Ku kron Kx``; baselines and tests only."""
    return kron(ku.matrix, kx.matrix)
