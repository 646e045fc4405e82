"""Excitation signals, k-means initial conditions and trajectory grids.

Data matrices keep samples in columns:

* ``X0``: ``(n, Tx)`` initial states,
* ``U``: ``(m*N, Tu)`` stacked input sequences (time-major, ``u_t[c]`` at
  row ``t*m + c``),
* ``Y``: ``(p*N, Tu*Tx)`` stacked outputs ``y_1..y_N``.

Column ``j*Tx + i`` of ``Y`` (0-based) is the response of initial state ``i``
to input sequence ``j``: input index outer, state index inner. This is the
ordering under which the Gram matrix of the pairs equals ``Ku kron Kx``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import DivergenceError, Plant, simulate

log = logging.getLogger(__name__)

ORDERING = "u-outer/x-inner"


@dataclass(frozen=True)
class ExcitationConfig:
    """Multisine excitation, modelled on the usual sum-of-sines design.

    ``band`` is normalized to the Nyquist frequency. Frequencies sit on the
    DFT grid of the signal length (every ``grid_skip``-th point inside the
    band); ``num_trials`` random phase draws are made and the one with the
    lowest crest factor is kept.
    """

    length: int
    band: tuple[float, float] = (0.0, 1.0)
    amplitude_range: tuple[float, float] = (-1.0, 1.0)
    num_sinusoids: int = 25
    num_trials: int = 40
    grid_skip: int = 1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.band
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"band must satisfy 0 <= low <= high <= 1, got {self.band}")
        a, b = self.amplitude_range
        if not a < b:
            raise ValueError(f"amplitude range must satisfy lo < hi, got {self.amplitude_range}")
        if self.num_sinusoids < 1 or self.num_trials < 1 or self.grid_skip < 1:
            raise ValueError("num_sinusoids, num_trials and grid_skip must be >= 1")
        if self.length < 1:
            raise ValueError("length must be >= 1")


def _frequencies(cfg: ExcitationConfig) -> np.ndarray:
    """Normalized frequencies (fraction of Nyquist) of the sinusoids."""
    L = cfg.length
    lo, hi = cfg.band
    grid = 2.0 * np.arange(L // 2 + 1) / L
    inband = grid[(grid >= lo - 1e-12) & (grid <= hi + 1e-12)][:: cfg.grid_skip]
    if inband.size == 0:
        return np.array([(lo + hi) / 2.0])
    if inband.size <= cfg.num_sinusoids:
        return inband
    idx = np.round(np.linspace(0, inband.size - 1, cfg.num_sinusoids)).astype(int)
    return inband[np.unique(idx)]


def multisine(cfg: ExcitationConfig, m: int = 1) -> np.ndarray:
    """Seeded multisine of shape ``(length, m)`` with samples in ``amplitude_range``."""
    rng = np.random.default_rng(cfg.seed)
    freqs = _frequencies(cfg)
    t = np.arange(cfg.length)
    lo, hi = cfg.amplitude_range
    out = np.empty((cfg.length, m))
    for c in range(m):
        best, best_crest = None, np.inf
        for _ in range(cfg.num_trials):
            phases = rng.uniform(0.0, 2.0 * np.pi, size=freqs.size)
            s = np.sin(np.pi * freqs[None, :] * t[:, None] + phases[None, :]).sum(1)
            rms = np.sqrt(np.mean(s**2))
            crest = np.max(np.abs(s)) / rms if rms > 0 else np.inf
            if best is None or crest < best_crest:
                best, best_crest = s, crest
        smin, smax = best.min(), best.max()
        if smax - smin <= 1e-14 * max(1.0, abs(smax)):
            out[:, c] = 0.5 * (lo + hi)
        else:
            out[:, c] = lo + (hi - lo) * (best - smin) / (smax - smin)
        np.clip(out[:, c], lo, hi, out=out[:, c])
    return out


def hankel_windows(signal: np.ndarray, N: int, count: int | None = None) -> np.ndarray:
    """Stack length-``N`` sliding windows of ``signal`` (``(L, m)``) as columns.

    Column ``j`` is ``col(signal[j], ..., signal[j+N-1])``; the result has
    shape ``(m*N, count)``.
    """
    s = np.asarray(signal, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    L, m = s.shape
    if count is None:
        count = L - N + 1
    if count < 1 or count + N - 1 > L:
        raise ValueError(f"signal of length {L} cannot provide {count} windows of length {N}")
    return np.stack([s[j : j + N].reshape(-1) for j in range(count)], axis=1)


def input_sequences(cfg: ExcitationConfig, N: int, Tu: int, m: int = 1) -> np.ndarray:
    """``U`` as the Hankel windows of one multisine of length ``Tu + N - 1``."""
    exc = ExcitationConfig(**{**cfg.__dict__, "length": Tu + N - 1})
    return hankel_windows(multisine(exc, m), N, Tu)


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71)


def _radical_inverse(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def halton(dim: int, count: int, box=None) -> np.ndarray:
    """First ``count`` Halton points (indices 1..count), mapped into ``box``.

    ``box`` is a sequence of ``(lo, hi)`` per coordinate; default unit cube.
    """
    if dim < 1 or dim > len(_PRIMES):
        raise ValueError(f"dim must be in 1..{len(_PRIMES)}")
    pts = np.array(
        [[_radical_inverse(i, _PRIMES[d]) for d in range(dim)] for i in range(1, count + 1)]
    ).reshape(count, dim)
    if box is not None:
        box = np.asarray(box, dtype=float).reshape(dim, 2)
        pts = box[:, 0] + pts * (box[:, 1] - box[:, 0])
    return pts


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    box: tuple = ((-1.0, 1.0),)
    max_iter: int = 300
    tol: float = 0.0
    init: str = "halton"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError(f"empty box {self.box}")
        if self.init not in ("halton", "uniform"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = np.zeros((points.shape[0], centroids.shape[0]))
    for c in range(points.shape[1]):
        diff = points[:, c, None] - centroids[None, :, c]
        d += diff * diff
    return d


def kmeans(points, cfg: KMeansConfig) -> KMeansResult:
    """Lloyd's algorithm with squared Euclidean distance.

    Centroids start at Halton or uniform points in ``cfg.box``. An empty
    cluster is re-seeded at the point farthest from its current centroid,
    which never increases the objective.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    T, n = P.shape
    k = cfg.k
    if T < k:
        raise ValueError(f"need at least k={k} points, got {T}")
    box = np.asarray(cfg.box, dtype=float).reshape(-1, 2)
    if box.shape[0] == 1 and n > 1:
        box = np.repeat(box, n, axis=0)
    if cfg.init == "halton":
        C = halton(n, k, box)
    else:
        rng = np.random.default_rng(cfg.seed)
        C = box[:, 0] + rng.uniform(size=(k, n)) * (box[:, 1] - box[:, 0])

    labels = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        D = _sq_dists(P, C)
        new_labels = np.argmin(D, axis=1)
        # re-seed empty clusters one at a time at the currently worst-served point
        counts = np.bincount(new_labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            own = D[np.arange(T), new_labels]
            movable = counts[new_labels] > 1
            if not np.any(movable):
                break
            far = int(np.argmax(np.where(movable, own, -np.inf)))
            counts[new_labels[far]] -= 1
            new_labels[far] = c
            counts[c] = 1
            C[c] = P[far]
            D[:, c] = _sq_dists(P, C[c : c + 1])[:, 0]
        for c in range(k):
            members = P[new_labels == c]
            if len(members):
                C[c] = members.mean(axis=0)
        obj = float(np.sum((P - C[new_labels]) ** 2))
        history.append(obj)
        if labels is not None and np.array_equal(labels, new_labels):
            converged = True
            labels = new_labels
            break
        if len(history) > 1 and cfg.tol > 0 and history[-2] - obj <= cfg.tol * max(history[-2], 1e-300):
            labels = new_labels
            converged = True
            break
        labels = new_labels
    return KMeansResult(centroids=C, labels=labels, objective_history=history, iterations=it, converged=converged)


def excitation_rollout(plant: Plant, x_start, exc: ExcitationConfig) -> tuple[np.ndarray, np.ndarray]:
    """Apply a multisine to the plant; returns ``(inputs, visited_states)``."""
    u = multisine(exc, plant.input_dim)
    X, _ = simulate(plant, x_start, u)
    return u, X


def generate_initial_conditions(
    plant: Plant, x_start, exc: ExcitationConfig, km: KMeansConfig, return_states: bool = False
):
    """Initial states ``X0`` (shape ``(n, Tx)``) as k-means centroids of one excitation rollout."""
    _, states = excitation_rollout(plant, x_start, exc)
    res = kmeans(states, km)
    X0 = res.centroids.T.copy()
    if return_states:
        return X0, states
    return X0


@dataclass(frozen=True, eq=False)
class Dataset:
    X0: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    N: int
    m: int
    n: int
    p: int
    ordering: str = ORDERING

    def __post_init__(self):
        X0 = np.asarray(self.X0, dtype=float)
        U = np.asarray(self.U, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X0.shape[0] != self.n or U.shape[0] != self.m * self.N or Y.shape[0] != self.p * self.N:
            raise ValueError(
                f"dataset row dimensions {X0.shape[0]}, {U.shape[0]}, {Y.shape[0]} "
                f"inconsistent with n={self.n}, m*N={self.m * self.N}, p*N={self.p * self.N}"
            )
        if Y.shape[1] != U.shape[1] * X0.shape[1]:
            raise ValueError(f"Y has {Y.shape[1]} columns, expected Tu*Tx={U.shape[1] * X0.shape[1]}")
        if self.ordering != ORDERING:
            raise ValueError(f"unsupported column ordering {self.ordering!r}")
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)

    @property
    def Tu(self) -> int:
        return self.U.shape[1]

    @property
    def Tx(self) -> int:
        return self.X0.shape[1]

    @property
    def T(self) -> int:
        return self.Tu * self.Tx

    def column(self, j: int, i: int) -> int:
        """Column of ``Y`` for input sequence ``j`` and initial state ``i``."""
        return j * self.Tx + i

    def input_sequence(self, j: int) -> np.ndarray:
        return self.U[:, j].reshape(self.N, self.m)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.N, self.m, self.n, self.p, self.ordering)
            == (other.N, other.m, other.n, other.p, other.ordering)
            and np.array_equal(self.X0, other.X0)
            and np.array_equal(self.U, other.U)
            and np.array_equal(self.Y, other.Y)
        )


def generate_dataset(plant: Plant, X0, U, N: int) -> Dataset:
    """Simulate every (input sequence, initial state) pair.

    ``X0`` is ``(n, Tx)`` and ``U`` is ``(m*N, Tu)``.
    """
    X0 = np.asarray(X0, dtype=float).reshape(plant.state_dim, -1)
    U = np.asarray(U, dtype=float).reshape(plant.input_dim * N, -1)
    Tx, Tu = X0.shape[1], U.shape[1]
    if Tx == 0 or Tu == 0:
        raise ValueError("need at least one initial state and one input sequence")
    p = plant.output_dim
    Y = np.empty((p * N, Tu * Tx))
    for j in range(Tu):
        u = U[:, j].reshape(N, plant.input_dim)
        for i in range(Tx):
            try:
                _, y = simulate(plant, X0[:, i], u)
            except DivergenceError as exc:
                raise DivergenceError(f"input sequence {j}, initial state {i}: {exc}") from exc
            Y[:, j * Tx + i] = y.reshape(-1)
    return Dataset(X0=X0, U=U, Y=Y, N=N, m=plant.input_dim, n=plant.state_dim, p=p)


class DatasetFormatError(ValueError):
    pass


_META_KEYS = ("n", "m", "p", "N", "Tu", "Tx", "ordering")


def _write_csv(path: Path, records: np.ndarray, header_comment: str | None):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        for row in records:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    os.replace(tmp, path)


def _read_csv(path: Path, width: int, count: int) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"missing file {path}")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if len(vals) != width:
                raise DatasetFormatError(f"{path}:{lineno}: expected {width} values, got {len(vals)}")
            rows.append(vals)
    if len(rows) != count:
        raise DatasetFormatError(f"{path}: expected {count} records, got {len(rows)}")
    return np.array(rows, dtype=float).reshape(count, width)


def save_dataset(dataset: Dataset, directory, provenance: str | None = None) -> None:
    """Write ``meta.csv``, ``x0.csv``, ``u.csv``, ``y.csv`` (one record per column)."""
    if dataset.Tx == 0 or dataset.Tu == 0:
        raise DatasetFormatError("refusing to save an empty dataset")
    for name, M in (("X0", dataset.X0), ("U", dataset.U), ("Y", dataset.Y)):
        if not np.all(np.isfinite(M)):
            raise DatasetFormatError(f"{name} contains non-finite values")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = d / "meta.csv"
    with open(meta.with_suffix(".csv.tmp"), "w") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write(",".join(_META_KEYS) + "\n")
        fh.write(
            ",".join(
                str(v)
                for v in (dataset.n, dataset.m, dataset.p, dataset.N, dataset.Tu, dataset.Tx, dataset.ordering)
            )
            + "\n"
        )
    os.replace(meta.with_suffix(".csv.tmp"), meta)
    _write_csv(d / "x0.csv", dataset.X0.T, provenance)
    _write_csv(d / "u.csv", dataset.U.T, provenance)
    _write_csv(d / "y.csv", dataset.Y.T, provenance)


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    meta = d / "meta.csv"
    if not meta.exists():
        raise DatasetFormatError(f"missing file {meta}")
    lines = [ln.strip() for ln in meta.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) != 2 or tuple(lines[0].split(",")) != _META_KEYS:
        raise DatasetFormatError(f"{meta}: malformed header")
    vals = lines[1].split(",")
    try:
        n, m, p, N, Tu, Tx = (int(v) for v in vals[:6])
    except ValueError:
        raise DatasetFormatError(f"{meta}: non-integer dimension") from None
    ordering = vals[6]
    X0 = _read_csv(d / "x0.csv", n, Tx).T
    U = _read_csv(d / "u.csv", m * N, Tu).T
    Y = _read_csv(d / "y.csv", p * N, Tu * Tx).T
    return Dataset(X0=X0, U=U, Y=Y, N=N, m=m, n=n, p=p, ordering=ordering)


def dataset_io(dataset: Dataset | None, path, direction: str):
    if direction == "save":
        save_dataset(dataset, path)
        return None
    if direction == "load":
        return load_dataset(path)
    raise ValueError(f"direction must be 'save' or 'load', got {direction!r}")


def generate_stacked_data(plant: Plant, x_start, exc: ExcitationConfig, N: int, T: int):
    """Stacked-kernel training data from one long excitation rollout.

    Returns ``(Z, Y)`` with ``Z`` of shape ``(T, n + m*N)`` holding
    ``col(x_i, u_i, ..., u_{i+N-1})`` per row and ``Y`` of shape ``(p*N, T)``
    holding the matching outputs ``y_{i+1}, ..., y_{i+N}``.
    """
    exc = ExcitationConfig(**{**exc.__dict__, "length": T + N - 1})
    u = multisine(exc, plant.input_dim)
    X, Yo = simulate(plant, x_start, u)
    states = np.vstack([np.ravel(x_start)[None, :], X])
    Z = np.empty((T, plant.state_dim + plant.input_dim * N))
    Y = np.empty((plant.output_dim * N, T))
    for i in range(T):
        Z[i, : plant.state_dim] = states[i]
        Z[i, plant.state_dim :] = u[i : i + N].reshape(-1)
        Y[:, i] = Yo[i : i + N].reshape(-1)
    return Z, Y
