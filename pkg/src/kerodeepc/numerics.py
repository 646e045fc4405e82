"""Dense linear algebra helpers and matrix-free Kronecker operators.

Matrices are plain ``numpy`` arrays. Kronecker products follow the usual
block convention ``(A kron B)[i*r + k, j*s + l] = A[i, j] * B[k, l]``, which
matches ``numpy.kron`` and row-major flattening of ``(q, s)`` coefficient
arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be Cholesky-factorized.

    ``min_eig`` carries an estimate of the smallest eigenvalue of the
    (jittered) matrix so callers can suggest a remedy.
    """

    def __init__(self, message: str, min_eig: float | None = None):
        super().__init__(message)
        self.min_eig = min_eig


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Materialized Kronecker product. Only for tests and tiny instances."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    p, q = a.shape
    r, s = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(p * r, q * s)


@dataclass(frozen=True)
class KroneckerOperator:
    """Implicit ``left kron right``; never stores the product."""

    left: np.ndarray
    right: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        p, q = self.left.shape
        r, s = self.right.shape
        return p * r, q * s

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return kron_apply(self, v)

    def to_dense(self) -> np.ndarray:
        return kron(self.left, self.right)


def kron_apply(op: KroneckerOperator, v: np.ndarray) -> np.ndarray:
    """Compute ``(left kron right) @ v`` without forming the product.

    Uses ``(A kron B) vec(V) = vec(A V B^T)`` with row-major ``vec``. ``v`` may
    be a vector or a matrix whose columns are processed independently.

    Raises
    ------
    ValueError
        If ``v`` has the wrong leading dimension.
    """
    a, b = op.left, op.right
    p, q = a.shape
    r, s = b.shape
    v = np.asarray(v, dtype=float)
    if v.shape[0] != q * s:
        raise ValueError(
            f"dimension mismatch: operator has {q * s} columns, got vector of length {v.shape[0]}"
        )
    if v.ndim == 1:
        V = v.reshape(q, s)
        return (a @ V @ b.T).reshape(p * r)
    c = v.shape[1]
    V = v.reshape(q, s, c)
    # contract the s-axis with B first (cheaper when s >= r), then q with A
    W = np.einsum("ks,qsc->qkc", b, V)
    out = np.einsum("pq,qkc->pkc", a, W)
    return out.reshape(p * r, c)


def default_rank_tol(s: np.ndarray, shape: tuple[int, int]) -> float:
    if s.size == 0:
        return 0.0
    return np.finfo(float).eps * max(shape) * s[0]


def pinv(a: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by SVD.

    Singular values ``<= tol`` are discarded; the default cutoff is
    ``eps * max(rows, cols) * sigma_max``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("pinv: non-finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if tol is None:
        tol = default_rank_tol(s, a.shape)
    keep = s > tol
    if not np.any(keep):
        return np.zeros((a.shape[1], a.shape[0]))
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def nullspace_basis(a: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthonormal basis of ``{v : a @ v = 0}`` as columns.

    Returns an ``(cols, 0)`` array when the null space is trivial.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise np.linalg.LinAlgError("nullspace_basis: non-finite entries")
    n = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if tol is None:
        tol = default_rank_tol(s, a.shape)
    rank = int(np.sum(s > tol))
    return vt[rank:].T.copy()


@dataclass(frozen=True)
class SpdFactorization:
    """Cholesky factorization of ``source + jitter * I``."""

    source: np.ndarray
    factor: np.ndarray
    jitter: float = 0.0
    _cho: tuple = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.source.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return spd_solve(self, rhs)

    def inverse(self) -> np.ndarray:
        return spd_solve(self, np.eye(self.n))

    def solve_refined(self, rhs: np.ndarray, steps: int = 1) -> np.ndarray:
        """:meth:`solve` plus iterative refinement with an extended-precision residual.

        When ``longdouble`` is wider than ``float64`` (x86) each step recovers
        most of the digits lost to conditioning, up to the float64 rounding of
        the result.
        """
        x = self.solve(rhs)
        if steps <= 0:
            return x
        A = self.source.astype(np.longdouble)
        if self.jitter:
            A[np.diag_indices_from(A)] += np.longdouble(self.jitter)
        b = np.asarray(rhs, dtype=np.longdouble)
        for _ in range(steps):
            r = b - A @ x.astype(np.longdouble)
            x = x + self.solve(r.astype(float))
        return x

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.factor))))


def spd_factor(a: np.ndarray, jitter: float = 0.0, overwrite: bool = False) -> SpdFactorization:
    """Cholesky-factorize ``a + jitter * I``.

    Raises
    ------
    FactorizationError
        When the jittered matrix is not numerically positive definite.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"spd_factor: square matrix required, got shape {a.shape}")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    work = a if overwrite else a.copy()
    if jitter:
        work[np.diag_indices_from(work)] += jitter
    try:
        c, lower = scipy.linalg.cho_factor(work, lower=True, overwrite_a=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        min_eig = None
        if a.shape[0] <= 2000 and not overwrite:
            min_eig = float(np.linalg.eigvalsh(a)[0]) + jitter
        raise FactorizationError(
            f"matrix of size {a.shape[0]} is not positive definite with jitter {jitter:g}"
            + (f" (smallest eigenvalue ~ {min_eig:.3e})" if min_eig is not None else ""),
            min_eig=min_eig,
        ) from exc
    # zero the unused triangle in place; np.tril would copy a possibly huge array
    for i in range(c.shape[0] - 1):
        c[i, i + 1 :] = 0.0
    return SpdFactorization(source=a, factor=c, jitter=float(jitter), _cho=(c, lower))


def spd_solve(f: SpdFactorization, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(source + jitter * I) x = rhs`` using the stored Cholesky factor."""
    return scipy.linalg.cho_solve(f._cho, np.asarray(rhs, dtype=float), check_finite=False)


def kron_solve(left: SpdFactorization, right: SpdFactorization, v: np.ndarray) -> np.ndarray:
    """Apply ``(L^{-1} kron R^{-1})`` to ``v`` using the two factorizations.

    Equivalent to ``kron_apply(KroneckerOperator(inv(L), inv(R)), v)`` but
    with triangular solves instead of explicit inverses.
    """
    q, s = left.n, right.n
    v = np.asarray(v, dtype=float)
    if v.shape[0] != q * s:
        raise ValueError(f"dimension mismatch: expected length {q * s}, got {v.shape[0]}")
    if v.ndim == 1:
        V = left.solve(v.reshape(q, s))
        return right.solve(V.T).T.reshape(q * s)
    c = v.shape[1]
    V = left.solve(v.reshape(q, s * c)).reshape(q, s, c)
    V = right.solve(V.transpose(1, 0, 2).reshape(s, q * c)).reshape(s, q, c)
    return V.transpose(1, 0, 2).reshape(q * s, c)
