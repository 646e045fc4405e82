"""Command-line harness.

``kerodeepc datagen|predict-eval|track|bench --config <path> [--out DIR] [--seed INT]``

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure,
3 solver non-convergence (only with ``solver.strict = true`` or ``--strict``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .datagen import DatasetFormatError, load_dataset, save_dataset
from .numerics import FactorizationError
from .plant import DivergenceError
from .solver import CONVERGED

log = logging.getLogger("kerodeepc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 1, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _provenance(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.hash}"


def cmd_datagen(cfg: ExperimentConfig, out: Path) -> int:
    pdata = ex.build_product_data(cfg)
    ds = pdata.dataset
    save_dataset(ds, out / "dataset", provenance=_provenance(cfg))
    rows = [("rollout", *map(_fmt, s)) for s in pdata.rollout_states]
    rows += [("centroid", *map(_fmt, c)) for c in pdata.kmeans.centroids]
    ex.write_csv_atomic(out / "centroids.csv", ("kind", "x1", "x2"), rows, _provenance(cfg))
    log.info("dataset: Tu=%d Tx=%d N=%d, %d trajectories -> %s", ds.Tu, ds.Tx, ds.N, ds.T, out / "dataset")
    return EXIT_OK


def _dataset(cfg: ExperimentConfig, data: Path | None, out: Path):
    path = data if data is not None else out / "dataset"
    if (path / "meta.csv").exists():
        ds = load_dataset(path)
        if ds.N != cfg.data.N:
            raise DatasetFormatError(f"dataset horizon N={ds.N} does not match data.N={cfg.data.N}")
        return ds
    if data is not None:
        raise DatasetFormatError(f"no dataset in {path}")
    log.info("no dataset at %s; generating it from the config", path)
    ds = ex.build_product_data(cfg).dataset
    save_dataset(ds, path, provenance=_provenance(cfg))
    return ds


def cmd_predict_eval(cfg: ExperimentConfig, out: Path, data: Path | None) -> int:
    ds = _dataset(cfg, data, out)
    product = ex.fit_product_cfg(cfg, ds)
    Z, Y = ex.build_stacked_data(cfg, ds.T)
    stacked = ex.fit_stacked_cfg(cfg, Z, Y)
    recs = ex.prediction_errors(cfg, product, stacked)
    header = ("rollout", "windows", "product_error", "reduced_error", "stacked_error", "max_product_reduced_diff")
    rows = [[_fmt(getattr(r, h)) for h in header] for r in recs]
    means = ["mean", sum(r.windows for r in recs)]
    means += [_fmt(np.mean([getattr(r, h) for r in recs])) for h in header[2:5]]
    means.append(_fmt(max(r.max_product_reduced_diff for r in recs)))
    rows.append(means)
    ex.write_csv_atomic(out / "prediction_errors.csv", header, rows, _provenance(cfg))
    log.info("mean prediction error: product %s, stacked %s", means[2], means[4])
    return EXIT_OK


def cmd_track(cfg: ExperimentConfig, out: Path, data: Path | None, method: str, strict: bool) -> int:
    product = stacked = None
    if method in ("efficient", "full-product", "full-stacked"):
        ds = _dataset(cfg, data, out)
        if method == "full-stacked":
            Z, Y = ex.build_stacked_data(cfg, ds.T)
            stacked = ex.fit_stacked_cfg(cfg, Z, Y)
        else:
            product = ex.fit_product_cfg(cfg, ds)
    ctrl = ex.make_controller(method, cfg, product=product, stacked=stacked)
    tr = ex.run_tracking(cfg, ctrl)
    header = ("step", "y", "r", "u", "solve_time_s", "status", "eq_residual")
    rows = [
        [k, _fmt(tr.measured_outputs[k, 0]), _fmt(tr.references[k, 0]), _fmt(tr.applied_inputs[k, 0]),
         _fmt(tr.solve_times[k]), tr.statuses[k], _fmt(tr.eq_residuals[k])]
        for k in range(tr.steps)
    ]
    n_conv = sum(s == CONVERGED for s in tr.statuses)
    rows.append(["summary", _fmt(tr.mean_tracking_error), "", "", _fmt(tr.mean_solve_time),
                 f"{n_conv}/{tr.steps} converged", _fmt(float(np.max(tr.eq_residuals)))])
    ex.write_csv_atomic(out / f"tracking_{method}.csv", header, rows, _provenance(cfg))
    log.info("%s: mean tracking error %.4f, mean solve time %.4f s, %d/%d converged",
             method, tr.mean_tracking_error, tr.mean_solve_time, n_conv, tr.steps)
    if strict and n_conv < tr.steps:
        log.error("strict mode: %d steps did not converge", tr.steps - n_conv)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_bench(cfg: ExperimentConfig, out: Path) -> int:
    records = ex.run_bench(cfg)
    ex.write_report(out / "report.csv", records, cfg.hash)
    for r in records:
        log.info("%-12s T=%-6d build %.4g s  factor %.4g s  control %.4g s  track %.4g  pred %.4g",
                 r.method, r.T, r.gram_construction_s, r.gram_inversion_s, r.mean_control_action_s,
                 r.mean_tracking_error, r.mean_prediction_error)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kerodeepc", description="Kernelized operator DeePC experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("datagen", "predict-eval", "track", "bench"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, default=None, help="base data seed (overrides data.seed)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name in ("predict-eval", "track"):
            sp.add_argument("--data", type=Path, default=None, help="dataset directory (default <out>/dataset)")
        if name == "track":
            sp.add_argument("--method", choices=ex.METHODS, default="efficient")
            sp.add_argument("--strict", action="store_true", help="exit 3 if any step fails to converge")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(data={"seed": args.seed})
        if args.out is not None:
            cfg = cfg.with_overrides(output={"dir": str(args.out)})
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "datagen":
            return cmd_datagen(cfg, out)
        if args.command == "predict-eval":
            return cmd_predict_eval(cfg, out, args.data)
        if args.command == "track":
            return cmd_track(cfg, out, args.data, args.method, args.strict or cfg.solver.strict)
        return cmd_bench(cfg, out)
    except (ConfigError, DatasetFormatError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FactorizationError as exc:
        log.error("%s (increase kernel.jitter_u / jitter_x / jitter_z)", exc)
        return EXIT_NUMERIC
    except (DivergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
