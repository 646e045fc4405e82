"""Box-bounded, equality-constrained NLP solver (augmented Lagrangian).

Outer loop: multiplier update ``mu <- mu + rho * c(v)``; the penalty grows
tenfold (capped) whenever the constraint violation fails to shrink by a
factor of four while still above ``tol_eq``. Inner loop: projected quasi-Newton (L-BFGS-B) on the
augmented Lagrangian over the box.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.optimize
import scipy.sparse.linalg

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]
Constraints = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass
class NlpProblem:
    """``min f(v)  s.t.  c(v) = 0,  lower <= v <= upper``.

    ``objective(v)`` returns ``(f, grad)``; ``eq_constraints(v)`` returns
    ``(c, J)`` with ``J`` of shape ``(n_eq, dim)``. Use ``None`` for no
    equality constraints.
    """

    dim: int
    objective: Objective
    v0: np.ndarray
    eq_constraints: Constraints | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.v0 = np.asarray(self.v0, dtype=float).reshape(self.dim)
        lo = np.full(self.dim, -np.inf) if self.lower is None else np.broadcast_to(self.lower, self.dim)
        hi = np.full(self.dim, np.inf) if self.upper is None else np.broadcast_to(self.upper, self.dim)
        self.lower = np.asarray(lo, dtype=float).copy()
        self.upper = np.asarray(hi, dtype=float).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: some lower bound exceeds its upper bound")

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)

    def constraints(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.eq_constraints is None:
            return np.zeros(0), np.zeros((0, self.dim))
        c, J = self.eq_constraints(v)
        return np.asarray(c, dtype=float).ravel(), np.asarray(J, dtype=float).reshape(-1, self.dim)


@dataclass
class NlpResult:
    v_star: np.ndarray
    objective_value: float
    eq_residual: float
    kkt_residual: float
    status: str
    iterations: int
    multipliers: np.ndarray | None = None
    message: str = ""
    solve_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class _NonFinite(RuntimeError):
    pass


def projected_gradient_norm(v, g, lower, upper) -> float:
    """``|P(v - g) - v|_inf``: zero exactly at box-KKT points."""
    if v.size == 0:
        return 0.0
    return float(np.max(np.abs(np.clip(v - g, lower, upper) - v)))


def _polish(fun, v, lower, upper, gtol, budget, max_steps=10):
    """Projected Newton-CG steps accepted on projected-gradient decrease.

    L-BFGS-B stops once ``f`` no longer resolves the remaining decrease, so
    its gradient accuracy is about ``sqrt(eps * curvature)``. Here the
    Hessian enters only through gradient differences, which stay accurate
    well below that level. ``budget`` caps the Hessian-vector products over
    all steps.
    """
    _, g = fun(v)
    pg = projected_gradient_norm(v, g, lower, upper)
    for _ in range(max_steps):
        if pg <= gtol or budget <= 0:
            break
        free = ~(((v <= lower) & (g > 0)) | ((v >= upper) & (g < 0)))

        def hess_vec(d, v=v, free=free):
            d = np.where(free, d, 0.0)
            nd = np.linalg.norm(d)
            if nd == 0.0:
                return d
            t = 1e-6 * (1.0 + np.linalg.norm(v)) / nd
            return np.where(free, (fun(v + t * d)[1] - fun(v - t * d)[1]) / (2 * t), 0.0)

        op = scipy.sparse.linalg.LinearOperator((v.size, v.size), matvec=hess_vec, dtype=float)
        n_cg = min(2 * v.size, budget)
        budget -= n_cg
        d, _ = scipy.sparse.linalg.cg(op, -np.where(free, g, 0.0), rtol=1e-6, maxiter=n_cg)
        w = np.clip(v + np.where(free, d, 0.0), lower, upper)
        _, gw = fun(w)
        pw = projected_gradient_norm(w, gw, lower, upper)
        if not pw < pg:
            break
        v, g, pg = w, gw, pw
    return v


def solve_nlp(
    problem: NlpProblem,
    tol_eq: float = 1e-6,
    tol_kkt: float = 1e-6,
    max_iter: int = 200,
    max_inner: int = 500,
    rho0: float = 10.0,
    rho_max: float = 1e10,
) -> NlpResult:
    """Augmented-Lagrangian solve. Deterministic given the problem and ``v0``."""
    t0 = time.perf_counter()
    lo, hi = problem.lower, problem.upper
    v = problem.project(problem.v0)
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(lo, hi)]

    def evaluate(v):
        f, g = problem.objective(v)
        c, J = problem.constraints(v)
        if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(c)) and np.all(np.isfinite(J))):
            raise _NonFinite(f"non-finite objective or constraint at v={v}")
        return float(f), np.asarray(g, dtype=float).ravel(), c, J

    try:
        f, g, c, J = evaluate(v)
    except _NonFinite as exc:
        return NlpResult(v, np.nan, np.inf, np.inf, INFEASIBLE, 0, message=str(exc), solve_time=time.perf_counter() - t0)

    mu = np.zeros(c.size)
    rho = rho0
    prev_viol = np.inf
    status = MAX_ITER
    message = ""
    it = 0
    viol = float(np.max(np.abs(c))) if c.size else 0.0
    kkt = projected_gradient_norm(v, g + J.T @ mu, lo, hi)

    for it in range(1, max_iter + 1):

        def aug(w, mu=mu, rho=rho):
            fw, gw, cw, Jw = evaluate(w)
            if cw.size:
                shifted = mu + rho * cw
                return fw + mu @ cw + 0.5 * rho * (cw @ cw), gw + Jw.T @ shifted
            return fw, gw

        try:
            res = scipy.optimize.minimize(
                aug,
                v,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": max_inner, "gtol": 0.1 * tol_kkt, "ftol": 1e-16, "maxcor": 20},
            )
            v = _polish(aug, problem.project(res.x), lo, hi, 0.1 * tol_kkt, budget=max_inner // 5)
            f, g, c, J = evaluate(v)
        except _NonFinite as exc:
            status, message = INFEASIBLE, str(exc)
            break

        viol = float(np.max(np.abs(c))) if c.size else 0.0
        if c.size:
            mu = mu + rho * c
        kkt = projected_gradient_norm(v, g + J.T @ mu, lo, hi)
        log.debug("outer %d: viol %.3g kkt %.3g rho %.3g", it, viol, kkt, rho)
        if viol <= tol_eq and kkt <= tol_kkt:
            status = CONVERGED
            break
        if not c.size:
            # unconstrained: one more inner pass only helps if L-BFGS-B stopped early
            if res.nit == 0 or not res.success and res.nit < 2:
                message = str(res.message)
                break
            continue
        # a satisfied constraint needs better multipliers, not a stiffer penalty
        if viol > tol_eq and viol > 0.25 * prev_viol:
            rho = min(10.0 * rho, rho_max)
        prev_viol = viol

    return NlpResult(
        v_star=v,
        objective_value=float(f),
        eq_residual=viol,
        kkt_residual=kkt,
        status=status,
        iterations=it,
        multipliers=mu,
        message=message,
        solve_time=time.perf_counter() - t0,
    )


def check_gradients(problem: NlpProblem, v=None, eps: float = 1e-6) -> dict[str, float]:
    """Compare supplied derivatives with central differences at ``v``.

    Returns the maximum relative errors ``{"objective": ..., "constraints": ...}``
    where relative error is ``|analytic - fd| / max(1, |fd|)`` per entry.
    """
    v = problem.v0 if v is None else np.asarray(v, dtype=float)
    _, g = problem.objective(v)
    c, J = problem.constraints(v)
    fd_g = np.empty(problem.dim)
    fd_J = np.empty_like(J)
    for i in range(problem.dim):
        e = np.zeros(problem.dim)
        h = eps * max(1.0, abs(v[i]))
        e[i] = h
        fp, _ = problem.objective(v + e)
        fm, _ = problem.objective(v - e)
        fd_g[i] = (fp - fm) / (2 * h)
        if c.size:
            cp, _ = problem.constraints(v + e)
            cm, _ = problem.constraints(v - e)
            fd_J[:, i] = (cp - cm) / (2 * h)
    out = {"objective": float(np.max(np.abs(g - fd_g) / np.maximum(1.0, np.abs(fd_g))))}
    out["constraints"] = float(np.max(np.abs(J - fd_J) / np.maximum(1.0, np.abs(fd_J)))) if c.size else 0.0
    return out
