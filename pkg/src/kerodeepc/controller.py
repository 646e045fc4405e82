"""Receding-horizon controllers and the closed-loop runner.

Three controllers share one interface ``solve(x_k, ref_y, ref_u, warm)``:

* :class:`EfficientController` -- reduced product-kernel formulation. The
  null-space constraint is satisfied by construction (``g~ = Nb xi``) and
  ``y`` is eliminated, leaving an NLP in ``(u, xi)``.
* :class:`FullController` -- the full formulation with decision variables
  ``(u, y, g)`` and the materialized Gram equality (product or stacked).
* :class:`NmpcController` -- single shooting on the true plant model.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .numerics import nullspace_basis, spd_factor
from .plant import Plant
from .predictor import ProductPredictor, StackedPredictor
from .solver import CONVERGED, INFEASIBLE, NlpProblem, NlpResult, solve_nlp

log = logging.getLogger(__name__)


@dataclass
class ControlConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    lam: float = 1.0
    u_bounds: tuple | None = None
    y_bounds: tuple | None = None
    tol_eq: float = 1e-6
    tol_kkt: float = 1e-6
    max_iter: int = 200
    max_inner: int = 500

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        for name in ("Q", "R", "P"):
            M = getattr(self, name)
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric matrix")
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError(f"{name} must be positive definite")
        if self.Q.shape != self.P.shape:
            raise ValueError("Q and P must have the same shape")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.N < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def output_weight(self) -> np.ndarray:
        """Block-diagonal weight on ``col(y_1..y_N)``: ``Q`` then ``P`` last."""
        W = np.kron(np.eye(self.N), self.Q)
        p = self.p
        W[-p:, -p:] = self.P
        return W

    def input_weight(self) -> np.ndarray:
        return np.kron(np.eye(self.N), self.R)

    def input_box(self) -> tuple[np.ndarray, np.ndarray]:
        return _box(self.u_bounds, self.m, self.N)

    def output_box(self) -> tuple[np.ndarray, np.ndarray]:
        return _box(self.y_bounds, self.p, self.N)


def _box(bounds, dim: int, N: int):
    if bounds is None:
        return np.full(dim * N, -np.inf), np.full(dim * N, np.inf)
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if b.shape[0] == 1:
        b = np.repeat(b, dim, axis=0)
    return np.tile(b[:, 0], N), np.tile(b[:, 1], N)


@dataclass
class StepSolution:
    u_plan: np.ndarray
    y_plan: np.ndarray
    g: np.ndarray
    solve_time: float
    result: NlpResult
    info: dict = field(default_factory=dict)

    @property
    def g_tilde(self) -> np.ndarray:
        return self.g


def tracking_cost(cfg: ControlConfig, y, u, ref_y, ref_u) -> float:
    ey = np.ravel(y) - np.ravel(ref_y)
    eu = np.ravel(u) - np.ravel(ref_u)
    return float(ey @ cfg.output_weight() @ ey + eu @ cfg.input_weight() @ eu)


def _shift(plan: np.ndarray) -> np.ndarray:
    plan = np.asarray(plan)
    return np.concatenate([plan[1:], plan[-1:]], axis=0)


class EfficientController:
    """Reduced product-kernel controller.

    Per step it forms ``M = Y Omega_pinv(x)``, ``A = Omega(x) Y^+`` and an
    orthonormal basis ``Nb`` of ``null(A)``; then ``g~ = Nb xi`` and
    ``y = M ku(u) + Nb xi``. Output bounds, if any, are imposed through slack
    variables ``s = y`` with box bounds and an equality constraint.
    """

    name = "efficient"

    def __init__(self, pred: ProductPredictor, cfg: ControlConfig):
        if not pred.y_full_row_rank:
            raise ValueError(
                f"output data matrix has rank {pred.y_row_rank} < {pred.Y.shape[0]} rows; "
                "the reduced formulation needs full row rank"
            )
        self.pred = pred
        self.cfg = cfg
        self._Wy = cfg.output_weight()
        self._Wu = cfg.input_weight()

    def build(self, x_k, ref_y, ref_u, warm: StepSolution | None = None):
        pred, cfg = self.pred, self.cfg
        N, m, p = cfg.N, cfg.m, cfg.p
        om = pred.omega(x_k)
        M = pred.reduced_map_from(om)
        A = pred.omega_ydagger(om)
        Nb = nullspace_basis(A)
        d = Nb.shape[1]
        ylo, yhi = cfg.output_box()
        has_ybox = bool(np.any(np.isfinite(ylo)) or np.any(np.isfinite(yhi)))
        ns = p * N if has_ybox else 0
        mN = m * N
        Wy, Wu, lam = self._Wy, self._Wu, cfg.lam
        ry, ru = np.ravel(ref_y), np.ravel(ref_u)

        def split(v):
            return v[:mN], v[mN : mN + d], v[mN + d :]

        def outputs(u, xi):
            return M @ pred.ku(u) + Nb @ xi

        def objective(v):
            u, xi, _ = split(v)
            ku = pred.ku(u)
            y = M @ ku + Nb @ xi
            ey, eu = y - ry, u - ru
            wey = Wy @ ey
            f = ey @ wey + eu @ (Wu @ eu) + lam * (xi @ xi)
            grad = np.zeros_like(v)
            grad[:mN] = 2.0 * (pred.ku_jacobian(u).T @ (M.T @ wey)) + 2.0 * (Wu @ eu)
            grad[mN : mN + d] = 2.0 * (Nb.T @ wey) + 2.0 * lam * xi
            return f, grad

        eq = None
        if has_ybox:

            def eq(v):
                u, xi, s = split(v)
                c = outputs(u, xi) - s
                J = np.zeros((ns, v.size))
                J[:, :mN] = M @ pred.ku_jacobian(u)
                J[:, mN : mN + d] = Nb
                J[:, mN + d :] = -np.eye(ns)
                return c, J

        ulo, uhi = cfg.input_box()
        lower = np.concatenate([ulo, np.full(d, -np.inf), ylo if has_ybox else []])
        upper = np.concatenate([uhi, np.full(d, np.inf), yhi if has_ybox else []])
        if warm is not None:
            u0 = np.ravel(_shift(warm.u_plan))
            xi0 = Nb.T @ np.ravel(warm.g) if warm.g.size == p * N else np.zeros(d)
        else:
            u0 = np.clip(np.zeros(mN), ulo, uhi)
            xi0 = np.zeros(d)
        u0 = np.clip(u0, ulo, uhi)
        v0 = np.concatenate([u0, xi0])
        if has_ybox:
            v0 = np.concatenate([v0, np.clip(outputs(u0, xi0), ylo, yhi)])
        problem = NlpProblem(dim=v0.size, objective=objective, v0=v0, eq_constraints=eq, lower=lower, upper=upper)
        parts = dict(M=M, A=A, Nb=Nb, split=split, outputs=outputs, null_dim=d)
        return problem, parts

    def solve(self, x_k, ref_y, ref_u, warm: StepSolution | None = None) -> StepSolution:
        t0 = time.perf_counter()
        problem, parts = self.build(x_k, ref_y, ref_u, warm)
        res = solve_nlp(
            problem, self.cfg.tol_eq, self.cfg.tol_kkt, self.cfg.max_iter, self.cfg.max_inner
        )
        u, xi, _ = parts["split"](res.v_star)
        y = parts["outputs"](u, xi)
        Nb = parts["Nb"]
        return StepSolution(
            u_plan=u.reshape(self.cfg.N, self.cfg.m),
            y_plan=y.reshape(self.cfg.N, self.cfg.p),
            g=Nb @ xi,
            solve_time=time.perf_counter() - t0,
            result=res,
            info={"null_dim": parts["null_dim"], "A": parts["A"], "M": parts["M"]},
        )


class FullController:
    """Full formulation over ``(u, y, g)`` with the materialized Gram matrix.

    Works with a :class:`ProductPredictor` (``K = Ku kron Kx``) or a
    :class:`StackedPredictor` (``K = Kz``). Only practical for small ``T``.
    With ``precondition`` (default) the Gram equality is imposed as
    ``g - K^{-1} k(u, x) = 0`` using an explicit dense inverse, an equivalent
    constraint whose Jacobian in ``g`` is the identity; without it the raw
    ``K g - k = 0`` form is used, which is badly conditioned for smooth
    kernels.
    """

    name = "full"

    def __init__(self, pred, cfg: ControlConfig, precondition: bool = True):
        self.pred = pred
        self.cfg = cfg
        self.K = pred.full_gram()
        self.precondition = precondition
        # row preconditioning by the explicit Gram inverse: K g = k  <=>  g = K^{-1} k
        self.K_inv = spd_factor(self.K).inverse() if precondition else None
        self._Wy = cfg.output_weight()
        self._Wu = cfg.input_weight()
        if isinstance(pred, ProductPredictor):
            self.name = "full-product"
        else:
            self.name = "full-stacked"

    def _kvec(self, u, x):
        pred = self.pred
        if isinstance(pred, ProductPredictor):
            kx = pred.kx(x)
            return np.outer(pred.ku(u), kx).ravel(), np.kron(pred.ku_jacobian(u), kx[:, None])
        return pred.kz(u, x), pred.kz_jacobian_u(u, x)

    def _coefficients(self, u, x):
        return self.pred.coefficients(u, x)

    def build(self, x_k, ref_y, ref_u, warm: StepSolution | None = None):
        cfg, K, Yd = self.cfg, self.K, self.pred.Y
        N, m, p = cfg.N, cfg.m, cfg.p
        mN, pN, T = m * N, p * N, K.shape[0]
        Wy, Wu, lam = self._Wy, self._Wu, cfg.lam
        ry, ru = np.ravel(ref_y), np.ravel(ref_u)
        x_k = np.ravel(x_k)

        def split(v):
            return v[:mN], v[mN : mN + pN], v[mN + pN :]

        def objective(v):
            u, y, g = split(v)
            ey, eu = y - ry, u - ru
            f = ey @ (Wy @ ey) + eu @ (Wu @ eu) + lam * (g @ g)
            grad = np.concatenate([2.0 * (Wu @ eu), 2.0 * (Wy @ ey), 2.0 * lam * g])
            return f, grad

        Kinv = self.K_inv
        J = np.zeros((T + pN, mN + pN + T))
        J[:T, mN + pN :] = np.eye(T) if self.precondition else K
        J[T:, mN : mN + pN] = -np.eye(pN)
        J[T:, mN + pN :] = Yd

        def eq(v):
            u, y, g = split(v)
            kv, dk = self._kvec(u, x_k)
            if self.precondition:
                J[:T, :mN] = -(Kinv @ dk)
                c1 = g - Kinv @ kv
            else:
                J[:T, :mN] = -dk
                c1 = K @ g - kv
            return np.concatenate([c1, Yd @ g - y]), J.copy()

        ulo, uhi = cfg.input_box()
        ylo, yhi = cfg.output_box()
        if warm is not None:
            u0 = np.ravel(_shift(warm.u_plan))
        else:
            u0 = np.zeros(mN)
        u0 = np.clip(u0, ulo, uhi)
        # consistent start: g solves the Gram equality exactly, y = Y g
        g0 = self._coefficients(u0, x_k)
        y0 = np.clip(Yd @ g0, ylo, yhi)
        v0 = np.concatenate([u0, y0, g0])
        lower = np.concatenate([ulo, ylo, np.full(T, -np.inf)])
        upper = np.concatenate([uhi, yhi, np.full(T, np.inf)])
        problem = NlpProblem(dim=v0.size, objective=objective, v0=v0, eq_constraints=eq, lower=lower, upper=upper)
        return problem, {"split": split}

    def solve(self, x_k, ref_y, ref_u, warm: StepSolution | None = None) -> StepSolution:
        t0 = time.perf_counter()
        problem, parts = self.build(x_k, ref_y, ref_u, warm)
        res = solve_nlp(problem, self.cfg.tol_eq, self.cfg.tol_kkt, self.cfg.max_iter, self.cfg.max_inner)
        u, y, g = parts["split"](res.v_star)
        return StepSolution(
            u_plan=u.reshape(self.cfg.N, self.cfg.m),
            y_plan=y.reshape(self.cfg.N, self.cfg.p),
            g=g,
            solve_time=time.perf_counter() - t0,
            result=res,
        )


def rollout_with_gradient(plant: Plant, x0, u, W_y, ry):
    """Simulate ``u`` (``(N, m)``) from ``x0``; return outputs, cost and its input gradient.

    Cost is ``(y - ry)^T W_y (y - ry)`` over ``col(y_1..y_N)``; the gradient
    uses a backward adjoint sweep through the plant Jacobians.
    """
    N, m = u.shape
    n, p = plant.state_dim, plant.output_dim
    xs = np.empty((N + 1, n))
    xs[0] = np.ravel(x0)
    ys = np.empty((N, p))
    for k in range(N):
        xs[k + 1] = plant.step(xs[k], u[k])
        ys[k] = plant.output(xs[k + 1])
    ey = ys.reshape(-1) - np.ravel(ry)
    wey = W_y @ ey
    cost = float(ey @ wey)
    dy = (2.0 * wey).reshape(N, p)
    grad = np.empty((N, m))
    lam = np.zeros(n)
    for k in range(N - 1, -1, -1):
        # lam := dJ/dx_{k+1}
        lam = lam + plant.output_jacobian(xs[k + 1]).T @ dy[k]
        A, B = plant.step_jacobian(xs[k], u[k])
        grad[k] = B.T @ lam
        lam = A.T @ lam
    return ys, cost, grad


class NmpcController:
    """Model-based single-shooting NMPC on the true plant."""

    name = "nmpc"

    def __init__(self, plant: Plant, cfg: ControlConfig):
        self.plant = plant
        self.cfg = cfg
        self._Wy = cfg.output_weight()
        self._Wu = cfg.input_weight()

    def build(self, x_k, ref_y, ref_u, warm: StepSolution | None = None):
        cfg, plant = self.cfg, self.plant
        N, m = cfg.N, cfg.m
        ry, ru = np.ravel(ref_y), np.ravel(ref_u)
        Wy, Wu = self._Wy, self._Wu

        def objective(v):
            _, c, g = rollout_with_gradient(plant, x_k, v.reshape(N, m), Wy, ry)
            eu = v - ru
            return c + eu @ (Wu @ eu), g.reshape(-1) + 2.0 * (Wu @ eu)

        ylo, yhi = cfg.output_box()
        eq = None
        has_ybox = bool(np.any(np.isfinite(ylo)) or np.any(np.isfinite(yhi)))
        ulo, uhi = cfg.input_box()
        u0 = np.ravel(_shift(warm.u_plan)) if warm is not None else np.zeros(m * N)
        u0 = np.clip(u0, ulo, uhi)
        lower, upper, v0 = ulo, uhi, u0
        if has_ybox:
            pN = cfg.p * N

            def eq(v):
                u, s = v[: m * N], v[m * N :]
                ys = self._outputs(x_k, u.reshape(N, m))
                J = np.zeros((pN, v.size))
                J[:, : m * N] = self._output_sensitivity(x_k, u.reshape(N, m))
                J[:, m * N :] = -np.eye(pN)
                return ys - s, J

            obj_u = objective

            def objective(v):  # noqa: F811
                f, g = obj_u(v[: m * N])
                return f, np.concatenate([g, np.zeros(pN)])

            s0 = np.clip(self._outputs(x_k, u0.reshape(N, m)), ylo, yhi)
            lower, upper = np.concatenate([ulo, ylo]), np.concatenate([uhi, yhi])
            v0 = np.concatenate([u0, s0])
        return NlpProblem(dim=v0.size, objective=objective, v0=v0, eq_constraints=eq, lower=lower, upper=upper)

    def _outputs(self, x0, u):
        ys = []
        x = np.ravel(x0)
        for k in range(u.shape[0]):
            x = self.plant.step(x, u[k])
            ys.append(self.plant.output(x))
        return np.concatenate(ys)

    def _output_sensitivity(self, x0, u):
        """``d col(y_1..y_N) / d col(u_0..u_{N-1})`` by forward sensitivities."""
        plant = self.plant
        N, m = u.shape
        n, p = plant.state_dim, plant.output_dim
        S = np.zeros((p * N, m * N))
        dx = np.zeros((n, m * N))
        x = np.ravel(x0)
        for k in range(N):
            A, B = plant.step_jacobian(x, u[k])
            dx = A @ dx
            dx[:, k * m : (k + 1) * m] += B
            x = plant.step(x, u[k])
            S[k * p : (k + 1) * p] = plant.output_jacobian(x) @ dx
        return S

    def solve(self, x_k, ref_y, ref_u, warm: StepSolution | None = None) -> StepSolution:
        t0 = time.perf_counter()
        cfg = self.cfg
        problem = self.build(x_k, ref_y, ref_u, warm)
        res = solve_nlp(problem, cfg.tol_eq, cfg.tol_kkt, cfg.max_iter, cfg.max_inner)
        u = res.v_star[: cfg.m * cfg.N].reshape(cfg.N, cfg.m)
        y = self._outputs(x_k, u).reshape(cfg.N, cfg.p)
        return StepSolution(u_plan=u, y_plan=y, g=np.zeros(0), solve_time=time.perf_counter() - t0, result=res)


def piecewise_constant(levels, segment: int, p: int = 1) -> np.ndarray:
    """Reference of shape ``(len(levels) * segment, p)`` holding each level for ``segment`` steps."""
    levels = np.asarray(levels, dtype=float).reshape(len(levels), -1)
    if levels.shape[1] == 1 and p > 1:
        levels = np.repeat(levels, p, axis=1)
    return np.repeat(levels, segment, axis=0)


@dataclass
class TrackingResult:
    applied_inputs: np.ndarray
    measured_outputs: np.ndarray
    references: np.ndarray
    states: np.ndarray
    solve_times: np.ndarray
    statuses: list[str]
    eq_residuals: np.ndarray
    mean_tracking_error: float
    mean_solve_time: float
    null_dims: list[int] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.applied_inputs.shape[0]


def run_receding_horizon(
    plant: Plant,
    controller,
    cfg: ControlConfig,
    steps: int,
    x_init,
    reference,
    ref_u=None,
) -> TrackingResult:
    """Closed loop: measure ``x_k``, solve, apply ``u_{0|k}``, repeat.

    ``reference`` is an array of outputs indexed by absolute time; the step at
    time ``k`` tracks ``reference[k+1 .. k+N]`` (the last value is held past
    the end). The tracking error at step ``k`` is ``|y_{k+1} - r_{k+1}|_2``.
    A solve that ends ``infeasible`` (or raises) holds the previous input;
    a ``max_iter`` result is applied but recorded as such.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    N, m, p = cfg.N, cfg.m, cfg.p
    ref = np.asarray(reference, dtype=float).reshape(-1, p)
    ru_all = np.zeros((steps + N + 1, m)) if ref_u is None else np.asarray(ref_u, dtype=float).reshape(-1, m)
    ulo, uhi = cfg.input_box()
    ulo, uhi = ulo[:m], uhi[:m]

    def ref_window(arr, start):
        idx = np.minimum(np.arange(start, start + N), arr.shape[0] - 1)
        return arr[idx]

    x = np.ravel(np.asarray(x_init, dtype=float))
    u_prev = np.clip(np.zeros(m), ulo, uhi)
    warm = None
    U, Yout, R, X = [], [], [], [x.copy()]
    times, statuses, eqres, nulls = [], [], [], []
    for k in range(steps):
        ry = ref_window(ref, k + 1)
        ru = ref_window(ru_all, k)
        try:
            sol = controller.solve(x, ry, ru, warm)
        except Exception as exc:  # record and hold
            log.warning("step %d: controller raised %s; holding previous input", k, exc)
            sol = None
        if sol is None or sol.result.status == INFEASIBLE or not np.all(np.isfinite(sol.u_plan)):
            u = u_prev
            statuses.append(INFEASIBLE if sol is None else sol.result.status)
            times.append(np.nan if sol is None else sol.solve_time)
            eqres.append(np.inf)
            warm = None
        else:
            u = sol.u_plan[0]
            statuses.append(sol.result.status)
            times.append(sol.solve_time)
            eqres.append(sol.result.eq_residual)
            nulls.append(sol.info.get("null_dim", -1))
            warm = sol
            if sol.result.status != CONVERGED:
                log.info("step %d: solver status %s", k, sol.result.status)
        u = np.clip(u, ulo, uhi)
        x = plant.step(x, u)
        y = plant.output(x)
        U.append(u)
        Yout.append(y)
        R.append(ref[min(k + 1, ref.shape[0] - 1)])
        X.append(x.copy())
        u_prev = u
    U, Yout, R = np.array(U), np.array(Yout), np.array(R)
    err = np.linalg.norm(Yout - R, axis=1)
    t = np.array(times, dtype=float)
    return TrackingResult(
        applied_inputs=U,
        measured_outputs=Yout,
        references=R,
        states=np.array(X),
        solve_times=t,
        statuses=statuses,
        eq_residuals=np.array(eqres),
        mean_tracking_error=float(np.mean(err)),
        mean_solve_time=float(np.nanmean(t)) if np.any(np.isfinite(t)) else float("nan"),
        null_dims=nulls,
    )


def solve_efficient_step(pred, x_k, cfg, ref_y, ref_u=None, warm=None) -> StepSolution:
    ref_u = np.zeros((cfg.N, cfg.m)) if ref_u is None else ref_u
    return EfficientController(pred, cfg).solve(x_k, ref_y, ref_u, warm)


def solve_full_step(pred, x_k, cfg, ref_y, ref_u=None, warm=None) -> StepSolution:
    ref_u = np.zeros((cfg.N, cfg.m)) if ref_u is None else ref_u
    return FullController(pred, cfg).solve(x_k, ref_y, ref_u, warm)


def solve_nmpc_step(plant, x_k, cfg, ref_y, ref_u=None, warm=None) -> StepSolution:
    ref_u = np.zeros((cfg.N, cfg.m)) if ref_u is None else ref_u
    return NmpcController(plant, cfg).solve(x_k, ref_y, ref_u, warm)
