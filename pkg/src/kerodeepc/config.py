"""Experiment configuration: line-oriented ``section.key = value`` files.

Blank lines and ``#`` comments are ignored. Lists are comma separated.
Unknown sections or keys are rejected with the offending line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_floats(text: str):
    if text.strip().lower() in ("none", ""):
        return None
    return _floats(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    if text.strip().lower() in ("none", "auto", ""):
        return None
    return float(text)


@dataclass(frozen=True)
class PlantSection:
    mu: float = 1.0
    ts: float = 0.1


@dataclass(frozen=True)
class DataSection:
    Tu: int = 20
    Tx: int = 20
    N: int = 10
    T_u_ini: int = 100
    x_start: tuple = (0.0, 0.0)
    state_box: tuple = (-3.0, 3.0, -3.0, 3.0)
    band: tuple = (0.0, 1.0)
    amplitude: tuple = (-1.0, 1.0)
    num_sinusoids: int = 25
    num_trials: int = 40
    grid_skip: int = 1
    kmeans_init: str = "halton"
    kmeans_max_iter: int = 300
    seed: int = 0


@dataclass(frozen=True)
class KernelSection:
    u_family: str = "gaussian"
    u_sigma: float = 50.0
    u_exponent: float = 0.5
    x_family: str = "gaussian"
    x_sigma: float = 3.0
    x_exponent: float = 0.5
    stacked_x_sigma: float = 3.0
    stacked_u_sigma: float = 50.0
    jitter_u: float | None = None
    jitter_x: float | None = None
    jitter_z: float | None = None


@dataclass(frozen=True)
class ValidationSection:
    rollouts: int = 20
    length: int = 400
    x_start: tuple = (0.5, 0.0)
    burn_in: int = 20
    stride: int = 4


@dataclass(frozen=True)
class ControlSection:
    Q: tuple = (1.0,)
    R: tuple = (0.01,)
    P: tuple = (1.0,)
    lam: float = 1.0
    u_bounds: tuple | None = (-2.0, 2.0)
    y_bounds: tuple | None = None
    ref_levels: tuple = (1.0, -1.0, 0.5, 0.0)
    ref_segment: int = 100
    steps: int = 399
    x_init: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class SolverSection:
    tol_eq: float = 1e-6
    tol_kkt: float = 1e-6
    max_iter: int = 200
    max_inner: int = 500
    full_max_iter: int = 20
    strict: bool = False


@dataclass(frozen=True)
class BenchSection:
    repeats: int = 5
    large_Tu: int = 50
    large_Tx: int = 200
    large_T_u_ini: int = 1000
    full_steps: int = 3
    materialize_product: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"


# field annotations are strings under postponed evaluation
_PARSERS = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _bool,
    "tuple": _floats,
    "tuple | None": _opt_floats,
    "float | None": _opt_float,
}


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantSection = field(default_factory=PlantSection)
    data: DataSection = field(default_factory=DataSection)
    kernel: KernelSection = field(default_factory=KernelSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    control: ControlSection = field(default_factory=ControlSection)
    solver: SolverSection = field(default_factory=SolverSection)
    bench: BenchSection = field(default_factory=BenchSection)
    output: OutputSection = field(default_factory=OutputSection)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """``cfg.with_overrides(data={"Tu": 5})``."""
        new = self
        for name, values in sections.items():
            new = replace(new, **{name: replace(getattr(new, name), **values)})
        return new

    def to_text(self) -> str:
        lines = []
        for sec in fields(self):
            obj = getattr(self, sec.name)
            for f in fields(obj):
                v = getattr(obj, f.name)
                if isinstance(v, tuple):
                    v = ", ".join(repr(float(x)) for x in v)
                elif v is None:
                    v = "none"
                elif isinstance(v, bool):
                    v = "true" if v else "false"
                lines.append(f"{sec.name}.{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        """Short digest of every setting except the output directory."""
        text = "\n".join(ln for ln in self.to_text().splitlines() if not ln.startswith("output."))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_value(ftype, text: str):
    key = ftype if isinstance(ftype, str) else ftype.__name__
    if key not in _PARSERS:
        raise TypeError(f"unsupported field type {ftype!r}")
    return _PARSERS[key](text)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    updates: dict[str, dict] = {}
    section_types = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value', got {raw.strip()!r}")
        lhs, rhs = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"{where}: key {lhs!r} must be of the form section.key")
        sec, key = lhs.split(".", 1)
        if sec not in section_types:
            raise ConfigError(f"{where}: unknown section {sec!r}")
        sec_fields = {f.name: f for f in fields(section_types[sec])}
        if key not in sec_fields:
            raise ConfigError(f"{where}: unknown key {sec}.{key}")
        try:
            value = _parse_value(sec_fields[key].type, rhs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: bad value for {sec}.{key}: {exc}") from None
        updates.setdefault(sec, {})[key] = value
    try:
        cfg = cfg.with_overrides(**updates)
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    d, c, k = cfg.data, cfg.control, cfg.kernel
    checks = [
        (cfg.plant.ts > 0, "plant.ts must be positive"),
        (min(d.Tu, d.Tx, d.N) >= 1, "data.Tu, data.Tx and data.N must be >= 1"),
        (d.T_u_ini >= d.Tx, "data.T_u_ini must be >= data.Tx (k-means needs enough points)"),
        (len(d.x_start) == 2, "data.x_start must have 2 entries"),
        (len(d.state_box) == 4, "data.state_box must be lo1, hi1, lo2, hi2"),
        (len(d.band) == 2 and 0 <= d.band[0] <= d.band[1] <= 1, "data.band must satisfy 0 <= lo <= hi <= 1"),
        (len(d.amplitude) == 2 and d.amplitude[0] < d.amplitude[1], "data.amplitude must be lo, hi with lo < hi"),
        (d.kmeans_init in ("halton", "uniform"), "data.kmeans_init must be halton or uniform"),
        (k.u_family in ("gaussian", "hardy", "linear"), "kernel.u_family must be gaussian, hardy or linear"),
        (k.x_family in ("gaussian", "hardy", "linear"), "kernel.x_family must be gaussian, hardy or linear"),
        (min(k.u_sigma, k.x_sigma, k.stacked_x_sigma, k.stacked_u_sigma) > 0, "kernel sigmas must be positive"),
        (len(c.Q) == 1 and c.Q[0] > 0, "control.Q must be one positive value (p = 1)"),
        (len(c.R) == 1 and c.R[0] > 0, "control.R must be one positive value (m = 1)"),
        (len(c.P) == 1 and c.P[0] > 0, "control.P must be one positive value (p = 1)"),
        (c.lam > 0, "control.lam must be positive"),
        (c.u_bounds is None or (len(c.u_bounds) == 2 and c.u_bounds[0] < c.u_bounds[1]), "control.u_bounds must be lo, hi"),
        (c.y_bounds is None or (len(c.y_bounds) == 2 and c.y_bounds[0] < c.y_bounds[1]), "control.y_bounds must be lo, hi"),
        (len(c.ref_levels) >= 1 and c.ref_segment >= 1, "control.ref_levels and control.ref_segment required"),
        (c.steps >= 1, "control.steps must be >= 1"),
        (cfg.solver.tol_eq > 0 and cfg.solver.tol_kkt > 0, "solver tolerances must be positive"),
        (cfg.bench.repeats >= 1, "bench.repeats must be >= 1"),
        (cfg.validation.length > cfg.validation.burn_in + d.N, "validation.length too short"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p))
