from pathlib import Path

import numpy as np
import pytest

from kerodeepc import experiments as ex
from kerodeepc.cli import main
from kerodeepc.config import ConfigError, ExperimentConfig, load_config, parse_config
from kerodeepc.datagen import load_dataset

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """\
data.Tu = 6
data.Tx = 5
data.N = 3
data.T_u_ini = 40
validation.rollouts = 2
validation.length = 60
control.ref_segment = 10
control.steps = 12
solver.full_max_iter = 3
bench.repeats = 1
bench.full_steps = 1
bench.large_Tu = 8
bench.large_Tx = 6
bench.large_T_u_ini = 40
"""


def write_cfg(tmp_path, text=SMALL, name="small.cfg"):
    p = tmp_path / name
    p.write_text(text + f"output.dir = {tmp_path / 'out'}\n")
    return p


def read_csv(path):
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def test_defaults_validate():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()


@pytest.mark.parametrize("name", ["vdp_t400.cfg", "vdp_t10000.cfg"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.data.N == 10


def test_t400_config_is_the_default_study():
    cfg = load_config(CONFIGS / "vdp_t400.cfg")
    assert cfg.hash == ExperimentConfig().hash


def test_roundtrip_text():
    cfg = ExperimentConfig().with_overrides(data={"Tu": 7}, kernel={"jitter_u": 1e-6})
    again = parse_config(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash


def test_hash_ignores_output_dir_only():
    base = ExperimentConfig()
    assert base.with_overrides(output={"dir": "elsewhere"}).hash == base.hash
    assert base.with_overrides(data={"seed": 1}).hash != base.hash


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("data.Tu = 5\nbogus.key = 1\n", 2, "unknown section"),
        ("\n\ndata.nope = 1\n", 3, "unknown key data.nope"),
        ("data.Tu = five\n", 1, "bad value for data.Tu"),
        ("# comment\ndata.Tu\n", 2, "expected 'section.key = value'"),
        ("Tu = 4\n", 1, "section.key"),
        ("kernel.jitter_u = -\n", 1, "bad value"),
    ],
)
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "f.cfg")
    assert f"f.cfg:{line}:" in str(exc.value)
    assert fragment in str(exc.value)


def test_validation_errors():
    with pytest.raises(ConfigError, match="T_u_ini"):
        parse_config("data.T_u_ini = 3\n")
    with pytest.raises(ConfigError, match="u_bounds"):
        parse_config("control.u_bounds = 1, -1\n")


def test_none_values():
    cfg = parse_config("control.y_bounds = none\ncontrol.u_bounds = -1, 1\nkernel.jitter_x = 0\n")
    assert cfg.control.y_bounds is None and cfg.control.u_bounds == (-1.0, 1.0)
    assert cfg.kernel.jitter_x == 0.0


def test_missing_config_file_exit_code(tmp_path):
    assert main(["datagen", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("data.Tu = x\n")
    assert main(["datagen", "--config", str(p)]) == 1


def test_datagen_outputs(tmp_path):
    p = write_cfg(tmp_path, "")
    assert main(["datagen", "--config", str(p)]) == 0
    ds = load_dataset(tmp_path / "out" / "dataset")
    assert ds.Y.shape == (10, 400)
    y_lines = [ln for ln in (tmp_path / "out" / "dataset" / "y.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(y_lines) == 400 and all(len(ln.split(",")) == 10 for ln in y_lines)
    header, rows = read_csv(tmp_path / "out" / "centroids.csv")
    assert header == ["kind", "x1", "x2"]
    assert sum(r[0] == "centroid" for r in rows) == 20
    assert "config_hash=" in (tmp_path / "out" / "centroids.csv").read_text().splitlines()[0]


def test_seed_changes_centroids_not_shapes(tmp_path):
    p = write_cfg(tmp_path)
    outs = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert main(["datagen", "--config", str(p), "--seed", str(seed), "--out", str(out)]) == 0
        _, rows = read_csv(out / "centroids.csv")
        outs.append(np.array([[float(v) for v in r[1:]] for r in rows if r[0] == "centroid"]))
    assert outs[0].shape == outs[1].shape == (5, 2)
    assert not np.allclose(outs[0], outs[1])


def test_predict_eval(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["predict-eval", "--config", str(p)]) == 0
    header, rows = read_csv(tmp_path / "out" / "prediction_errors.csv")
    assert header[-1] == "max_product_reduced_diff"
    assert rows[-1][0] == "mean" and len(rows) == 3
    assert max(float(r[-1]) for r in rows) < 1e-9


def test_predict_eval_missing_data_dir(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["predict-eval", "--config", str(p), "--data", str(tmp_path / "none")]) == 1


def test_predict_eval_horizon_mismatch(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["datagen", "--config", str(p)]) == 0
    p2 = write_cfg(tmp_path, SMALL.replace("data.N = 3", "data.N = 4"), "n4.cfg")
    assert main(["predict-eval", "--config", str(p2), "--data", str(tmp_path / "out" / "dataset")]) == 1


@pytest.mark.parametrize("method", ["efficient", "nmpc"])
def test_track_summary(tmp_path, method):
    p = write_cfg(tmp_path)
    assert main(["track", "--config", str(p), "--method", method]) == 0
    header, rows = read_csv(tmp_path / "out" / f"tracking_{method}.csv")
    assert header == ["step", "y", "r", "u", "solve_time_s", "status", "eq_residual"]
    assert len(rows) == 13 and rows[-1][0] == "summary"
    assert rows[-1][5] == "12/12 converged"
    assert np.isfinite(float(rows[-1][1]))


def test_track_strict_nonconvergence_exit_code(tmp_path):
    p = write_cfg(tmp_path, SMALL + "solver.max_iter = 1\nsolver.max_inner = 1\n")
    assert main(["track", "--config", str(p), "--strict"]) == 3


def test_factorization_failure_exit_code(tmp_path):
    # a kernel this wide makes Ku numerically singular without jitter
    p = write_cfg(tmp_path, SMALL + "kernel.u_sigma = 1e6\nkernel.jitter_u = 0\n")
    assert main(["predict-eval", "--config", str(p)]) == 2


def test_bench_report(tmp_path):
    p = write_cfg(tmp_path)
    assert main(["bench", "--config", str(p)]) == 0
    recs = ex.read_report(tmp_path / "out" / "report.csv")
    assert [(r["method"], r["T"]) for r in recs] == [
        ("product", 30), ("stacked", 30), ("full-product", 30), ("product", 48), ("stacked", 48)
    ]
    assert len({r["config_hash"] for r in recs}) == 1
    assert all(r["gram_inversion_s"] > 0 for r in recs if r["method"] != "full-product")


def test_read_report_rejects_garbage(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="bad header"):
        ex.read_report(p)
