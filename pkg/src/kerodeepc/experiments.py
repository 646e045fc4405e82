"""Experiment pipeline for the Van der Pol study, driven by an ExperimentConfig.

Seeds are derived from ``data.seed``: initial-condition rollout ``+1``,
input sequences ``+2``, stacked-data rollout ``+3``, validation rollout
``r`` uses ``+7+r``.
"""

from __future__ import annotations

import gc
import logging
import os
import statistics
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .controller import (
    ControlConfig,
    EfficientController,
    FullController,
    NmpcController,
    TrackingResult,
    piecewise_constant,
    run_receding_horizon,
)
from .datagen import (
    Dataset,
    ExcitationConfig,
    KMeansConfig,
    KMeansResult,
    excitation_rollout,
    generate_dataset,
    generate_stacked_data,
    input_sequences,
    kmeans,
    multisine,
)
from .kernels import KernelSpec, gram
from .numerics import kron, spd_factor
from .plant import VanDerPolPlant, simulate
from .predictor import (
    ProductPredictor,
    StackedPredictor,
    default_jitter,
    fit_product,
    fit_stacked,
    predict_reduced,
)

log = logging.getLogger(__name__)

METHODS = ("efficient", "full-product", "full-stacked", "nmpc")


def plant_from(cfg: ExperimentConfig) -> VanDerPolPlant:
    return VanDerPolPlant(mu=cfg.plant.mu, ts=cfg.plant.ts)


def excitation(cfg: ExperimentConfig, length: int, seed: int) -> ExcitationConfig:
    d = cfg.data
    return ExcitationConfig(
        length=length,
        band=tuple(d.band),
        amplitude_range=tuple(d.amplitude),
        num_sinusoids=d.num_sinusoids,
        num_trials=d.num_trials,
        grid_skip=d.grid_skip,
        seed=seed,
    )


def _kernel(family: str, sigma: float, exponent: float) -> KernelSpec:
    if family == "gaussian":
        return KernelSpec.gaussian(sigma)
    if family == "hardy":
        return KernelSpec.hardy(sigma, exponent)
    if family == "linear":
        return KernelSpec.linear()
    raise ValueError(f"unknown kernel family {family!r}")


def product_kernels(cfg: ExperimentConfig) -> tuple[KernelSpec, KernelSpec]:
    k = cfg.kernel
    return _kernel(k.u_family, k.u_sigma, k.u_exponent), _kernel(k.x_family, k.x_sigma, k.x_exponent)


def stacked_kernel(cfg: ExperimentConfig, n: int, mN: int) -> KernelSpec:
    k = cfg.kernel
    return KernelSpec.weighted_gaussian([k.stacked_x_sigma] * n + [k.stacked_u_sigma] * mN)


@dataclass
class ProductData:
    dataset: Dataset
    kmeans: KMeansResult
    rollout_states: np.ndarray


def build_product_data(cfg: ExperimentConfig, Tu=None, Tx=None, T_u_ini=None) -> ProductData:
    """Initial conditions by k-means (Algorithm-1 style) then the trajectory grid."""
    d = cfg.data
    Tu = d.Tu if Tu is None else Tu
    Tx = d.Tx if Tx is None else Tx
    T_u_ini = d.T_u_ini if T_u_ini is None else T_u_ini
    plant = plant_from(cfg)
    _, states = excitation_rollout(plant, d.x_start, excitation(cfg, T_u_ini, d.seed + 1))
    box = ((d.state_box[0], d.state_box[1]), (d.state_box[2], d.state_box[3]))
    km = kmeans(states, KMeansConfig(k=Tx, box=box, max_iter=d.kmeans_max_iter, init=d.kmeans_init, seed=d.seed + 1))
    U = input_sequences(excitation(cfg, 1, d.seed + 2), d.N, Tu, plant.input_dim)
    ds = generate_dataset(plant, km.centroids.T.copy(), U, d.N)
    return ProductData(dataset=ds, kmeans=km, rollout_states=states)


def fit_product_cfg(cfg: ExperimentConfig, ds: Dataset, jitter_u=None, jitter_x=None) -> ProductPredictor:
    ku, kx = product_kernels(cfg)
    ju = cfg.kernel.jitter_u if jitter_u is None else jitter_u
    jx = cfg.kernel.jitter_x if jitter_x is None else jitter_x
    return fit_product(ds, ku, kx, ju, jx)


def build_stacked_data(cfg: ExperimentConfig, T: int):
    plant = plant_from(cfg)
    return generate_stacked_data(plant, cfg.data.x_start, excitation(cfg, 1, cfg.data.seed + 3), cfg.data.N, T)


def fit_stacked_cfg(cfg: ExperimentConfig, Z, Y, jitter=None) -> StackedPredictor:
    plant = plant_from(cfg)
    spec = stacked_kernel(cfg, plant.state_dim, plant.input_dim * cfg.data.N)
    j = cfg.kernel.jitter_z if jitter is None else jitter
    return fit_stacked(Z, Y, spec, j, state_dim=plant.state_dim)


@dataclass
class PredictionRecord:
    rollout: int
    windows: int
    product_error: float
    reduced_error: float
    stacked_error: float
    max_product_reduced_diff: float


def validation_windows(cfg: ExperimentConfig, r: int):
    """Fresh rollout ``r``: yields ``(x_k, u_seq, y_true)`` for each window."""
    v, N = cfg.validation, cfg.data.N
    plant = plant_from(cfg)
    u = multisine(excitation(cfg, v.length, cfg.data.seed + 7 + r), plant.input_dim)
    X, Y = simulate(plant, v.x_start, u)
    # X[k] is the state after u[k]; a window from X[k] uses u[k+1..k+N]
    for k in range(v.burn_in, v.length - N - 1, v.stride):
        yield X[k], u[k + 1 : k + 1 + N], Y[k + 1 : k + 1 + N].ravel()


def prediction_errors(
    cfg: ExperimentConfig, product: ProductPredictor | None, stacked: StackedPredictor | None, rollouts=None
) -> list[PredictionRecord]:
    """Per-rollout mean of ``(1/N) |y_hat - y|_2`` over validation windows."""
    N = cfg.data.N
    out = []
    for r in range(cfg.validation.rollouts if rollouts is None else rollouts):
        ep, er, es, diff = [], [], [], 0.0
        for x, u, y in validation_windows(cfg, r):
            if product is not None:
                yp = product.predict(u, x)
                yr = predict_reduced(product, u, x)
                ep.append(np.linalg.norm(yp - y) / N)
                er.append(np.linalg.norm(yr - y) / N)
                diff = max(diff, float(np.max(np.abs(yp - yr)) / max(1.0, np.max(np.abs(yp)))))
            if stacked is not None:
                es.append(np.linalg.norm(stacked.predict(u, x) - y) / N)
        nwin = max(len(ep), len(es))
        mean = lambda a: float(np.mean(a)) if a else float("nan")  # noqa: E731
        out.append(PredictionRecord(r, nwin, mean(ep), mean(er), mean(es), diff))
    return out


def control_config(cfg: ExperimentConfig, max_iter: int | None = None) -> ControlConfig:
    c, s = cfg.control, cfg.solver
    return ControlConfig(
        N=cfg.data.N,
        Q=np.diag(c.Q),
        R=np.diag(c.R),
        P=np.diag(c.P),
        lam=c.lam,
        u_bounds=None if c.u_bounds is None else [tuple(c.u_bounds)],
        y_bounds=None if c.y_bounds is None else [tuple(c.y_bounds)],
        tol_eq=s.tol_eq,
        tol_kkt=s.tol_kkt,
        max_iter=s.max_iter if max_iter is None else max_iter,
        max_inner=s.max_inner,
    )


def reference(cfg: ExperimentConfig) -> np.ndarray:
    c = cfg.control
    return piecewise_constant(c.ref_levels, c.ref_segment)


def make_controller(method: str, cfg: ExperimentConfig, product=None, stacked=None):
    plant = plant_from(cfg)
    if method == "efficient":
        return EfficientController(product, control_config(cfg))
    if method == "full-product":
        return FullController(product, control_config(cfg, cfg.solver.full_max_iter))
    if method == "full-stacked":
        return FullController(stacked, control_config(cfg, cfg.solver.full_max_iter))
    if method == "nmpc":
        return NmpcController(plant, control_config(cfg))
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def run_tracking(cfg: ExperimentConfig, controller, steps: int | None = None) -> TrackingResult:
    c = cfg.control
    return run_receding_horizon(
        plant_from(cfg),
        controller,
        controller.cfg,
        c.steps if steps is None else steps,
        c.x_init,
        reference(cfg),
    )


# ---------------------------------------------------------------- benchmark

BENCH_HEADER = (
    "config_hash",
    "method",
    "T",
    "Tu",
    "Tx",
    "gram_construction_s",
    "gram_construction_materialized_s",
    "gram_inversion_s",
    "mean_control_action_s",
    "mean_tracking_error",
    "mean_prediction_error",
    "note",
)


@dataclass
class BenchRecord:
    method: str
    T: int
    Tu: int
    Tx: int
    gram_construction_s: float = float("nan")
    gram_construction_materialized_s: float = float("nan")
    gram_inversion_s: float = float("nan")
    mean_control_action_s: float = float("nan")
    mean_tracking_error: float = float("nan")
    mean_prediction_error: float = float("nan")
    note: str = ""

    def row(self, config_hash: str) -> list[str]:
        vals = [config_hash] + [getattr(self, f.name) for f in fields(self)]
        return [repr(v) if isinstance(v, float) else str(v) for v in vals]


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def _control_time(cfg: ExperimentConfig, make, steps: int, repeats: int) -> float:
    """Median over repeats of the mean per-step solve time over ``steps`` closed-loop steps."""

    def once():
        return float(np.mean(run_tracking(cfg, make(), steps).solve_times))

    once()
    return statistics.median(once() for _ in range(repeats))


def _bench_size(cfg, Tu, Tx, T_u_ini, include_full, log_fn) -> list[BenchRecord]:
    b = cfg.bench
    reps = b.repeats
    T = Tu * Tx
    pdata = build_product_data(cfg, Tu, Tx, T_u_ini)
    ds = pdata.dataset
    ku_spec, kx_spec = product_kernels(cfg)
    Upts, Xpts = ds.U.T, ds.X0.T

    prod = BenchRecord("product", T, Tu, Tx)
    prod.gram_construction_s = _median_time(lambda: (gram(ku_spec, Upts), gram(kx_spec, Xpts)), reps)
    Ku, Kx = gram(ku_spec, Upts).matrix, gram(kx_spec, Xpts).matrix
    ju = default_jitter(Ku) if cfg.kernel.jitter_u is None else cfg.kernel.jitter_u
    jx = default_jitter(Kx) if cfg.kernel.jitter_x is None else cfg.kernel.jitter_x
    prod.gram_inversion_s = _median_time(lambda: (spd_factor(Ku, ju), spd_factor(Kx, jx)), reps)
    if b.materialize_product:
        # the hypothetical dense Ku kron Kx, timed for comparison only
        prod.gram_construction_materialized_s = prod.gram_construction_s + _median_time(lambda: kron(Ku, Kx), 1)
        gc.collect()
    product = fit_product_cfg(cfg, ds)
    log_fn(f"T={T}: product Gram built and factored")

    Z, Ys = build_stacked_data(cfg, T)
    spec = stacked_kernel(cfg, ds.n, ds.m * ds.N)
    st = BenchRecord("stacked", T, Tu, Tx)
    st.gram_construction_s = _median_time(lambda: gram(spec, Z), reps)
    gc.collect()
    Kz = gram(spec, Z).matrix
    jz = default_jitter(Kz) if cfg.kernel.jitter_z is None else cfg.kernel.jitter_z
    st.gram_inversion_s = _median_time(lambda: spd_factor(Kz, jz), reps)
    st.gram_construction_materialized_s = st.gram_construction_s
    del Kz
    gc.collect()
    stacked = fit_stacked_cfg(cfg, Z, Ys)
    log_fn(f"T={T}: stacked Gram built and factored")

    nval = max(1, min(cfg.validation.rollouts, 10))
    recs = prediction_errors(cfg, product, stacked, rollouts=nval)
    prod.mean_prediction_error = float(np.mean([r.product_error for r in recs]))
    st.mean_prediction_error = float(np.mean([r.stacked_error for r in recs]))

    prod.mean_control_action_s = _control_time(
        cfg, lambda: make_controller("efficient", cfg, product=product), b.full_steps, reps
    )
    tr = run_tracking(cfg, make_controller("efficient", cfg, product=product))
    prod.mean_tracking_error = tr.mean_tracking_error
    prod.note = "efficient formulation; Gram columns cover the factors Ku and Kx; materialized column adds dense Ku kron Kx"
    log_fn(f"T={T}: efficient tracking error {tr.mean_tracking_error:.4f}")

    out = [prod, st]
    if include_full:
        st.mean_control_action_s = _control_time(
            cfg, lambda: make_controller("full-stacked", cfg, stacked=stacked), b.full_steps, reps
        )
        st.note = f"full formulation; at most {cfg.solver.full_max_iter} outer iterations"
        fp = BenchRecord("full-product", T, Tu, Tx, note=f"full formulation; at most {cfg.solver.full_max_iter} outer iterations")
        fp.mean_control_action_s = _control_time(
            cfg, lambda: make_controller("full-product", cfg, product=product), b.full_steps, reps
        )
        fp.mean_prediction_error = prod.mean_prediction_error
        out.append(fp)
        log_fn(f"T={T}: full-formulation control timing done")
    else:
        st.note = "control action unavailable (full formulation too large)"
    return out


def run_bench(cfg: ExperimentConfig, log_fn=log.info) -> list[BenchRecord]:
    """Timing comparison at the configured size and at the large size.

    Timed sections run single-threaded (BLAS pinned to one thread) so ratios
    compare like with like.
    """
    from threadpoolctl import threadpool_limits

    d, b = cfg.data, cfg.bench
    with threadpool_limits(limits=1):
        records = _bench_size(cfg, d.Tu, d.Tx, d.T_u_ini, True, log_fn)
        records += _bench_size(cfg, b.large_Tu, b.large_Tx, b.large_T_u_ini, False, log_fn)
    return records


def write_csv_atomic(path, header, rows, comment: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    os.replace(tmp, path)


def write_report(path, records: list[BenchRecord], config_hash: str) -> None:
    write_csv_atomic(path, BENCH_HEADER, [r.row(config_hash) for r in records])


def read_report(path) -> list[dict]:
    """Parse a ``report.csv``; raises ``ValueError`` if it is malformed."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or tuple(lines[0].split(",")) != BENCH_HEADER:
        raise ValueError(f"{path}: bad header")
    out = []
    for ln in lines[1:]:
        vals = ln.split(",", len(BENCH_HEADER) - 1)
        if len(vals) != len(BENCH_HEADER):
            raise ValueError(f"{path}: bad row {ln!r}")
        rec = dict(zip(BENCH_HEADER, vals))
        for k in BENCH_HEADER[2:5]:
            rec[k] = int(rec[k])
        for k in BENCH_HEADER[5:11]:
            rec[k] = float(rec[k])
        out.append(rec)
    return out
