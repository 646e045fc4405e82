import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import Delaunay

from kerodeepc.datagen import (
    ORDERING,
    Dataset,
    DatasetFormatError,
    ExcitationConfig,
    KMeansConfig,
    dataset_io,
    excitation_rollout,
    generate_dataset,
    generate_initial_conditions,
    generate_stacked_data,
    halton,
    hankel_windows,
    input_sequences,
    kmeans,
    load_dataset,
    multisine,
    save_dataset,
)
from kerodeepc.plant import DivergenceError, LtiPlant, VanDerPolPlant, simulate

BOX = ((-3.0, 3.0), (-3.0, 3.0))


def test_single_tone():
    u = multisine(ExcitationConfig(length=200, band=(0.1, 0.1), num_sinusoids=1))
    assert u.shape == (200, 1)
    assert u.min() == pytest.approx(-1.0) and u.max() == pytest.approx(1.0)
    # one tone at 0.1 of Nyquist: period 20 samples
    np.testing.assert_allclose(u[20:, 0], u[:-20, 0], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    lo=st.floats(-5, 0),
    width=st.floats(0.1, 5),
    length=st.integers(2, 300),
)
def test_multisine_within_range(seed, lo, width, length):
    cfg = ExcitationConfig(length=length, amplitude_range=(lo, lo + width), seed=seed, num_trials=3)
    u = multisine(cfg, m=2)
    assert u.shape == (length, 2)
    assert np.all(u >= lo) and np.all(u <= lo + width)


def test_multisine_deterministic_and_seed_sensitive():
    a = multisine(ExcitationConfig(length=100, seed=0))
    b = multisine(ExcitationConfig(length=100, seed=0))
    c = multisine(ExcitationConfig(length=100, seed=1))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_excitation_config_validation():
    with pytest.raises(ValueError):
        ExcitationConfig(length=10, band=(0.5, 0.2))
    with pytest.raises(ValueError):
        ExcitationConfig(length=10, amplitude_range=(1.0, -1.0))
    with pytest.raises(ValueError):
        ExcitationConfig(length=10, num_sinusoids=0)


def test_hankel_windows():
    H = hankel_windows(np.arange(6.0), 3)
    np.testing.assert_array_equal(H, [[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5]])
    with pytest.raises(ValueError):
        hankel_windows(np.arange(3.0), 3, count=2)


def test_input_sequences_shape():
    U = input_sequences(ExcitationConfig(length=1, seed=2), N=10, Tu=20)
    assert U.shape == (10, 20)
    np.testing.assert_array_equal(U[1:, 0], U[:-1, 1])


def test_halton_known_values():
    np.testing.assert_allclose(halton(1, 3, [(0, 1)])[:, 0], [0.5, 0.25, 0.75])
    np.testing.assert_allclose(halton(2, 1)[0], [0.5, 1.0 / 3.0])


@settings(max_examples=20, deadline=None)
@given(dim=st.integers(1, 5), count=st.integers(1, 200))
def test_halton_inside_box(dim, count):
    box = [(-1.0 - d, 2.0 + d) for d in range(dim)]
    P = halton(dim, count, box)
    assert P.shape == (count, dim)
    for d, (lo, hi) in enumerate(box):
        assert np.all(P[:, d] >= lo) and np.all(P[:, d] <= hi)
    assert np.array_equal(P, halton(dim, count, box))


def test_kmeans_k_equals_points(rng):
    P = rng.uniform(-1, 1, (6, 2))
    res = kmeans(P, KMeansConfig(k=6, box=((-1, 1), (-1, 1))))
    got = sorted(map(tuple, res.centroids))
    assert np.allclose(got, sorted(map(tuple, P)))


def test_kmeans_two_blobs(rng):
    a = rng.normal(0.0, 0.5, (100, 2))
    b = rng.normal(10.0, 0.5, (100, 2))
    res = kmeans(np.vstack([a, b]), KMeansConfig(k=2, box=((-1, 11), (-1, 11))))
    C = res.centroids[np.argsort(res.centroids[:, 0])]
    assert np.linalg.norm(C[0] - a.mean(0)) < 0.5
    assert np.linalg.norm(C[1] - b.mean(0)) < 0.5
    assert res.converged


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 25), init=st.sampled_from(["halton", "uniform"]))
def test_kmeans_objective_monotone(seed, k, init):
    g = np.random.default_rng(seed)
    P = g.normal(size=(60, 2)) * g.uniform(0.1, 3, 2)
    res = kmeans(P, KMeansConfig(k=k, box=BOX, init=init, seed=seed))
    h = np.array(res.objective_history)
    assert np.all(np.diff(h) <= 1e-12 * max(1.0, h[0]))
    assert res.iterations <= 300
    assert len(np.unique(res.labels)) == k


def test_kmeans_needs_enough_points():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), KMeansConfig(k=4, box=BOX))


def test_initial_conditions_single_centroid_is_mean():
    pl = VanDerPolPlant()
    exc = ExcitationConfig(length=100, seed=1)
    X0 = generate_initial_conditions(pl, [0, 0], exc, KMeansConfig(k=1, box=BOX))
    _, states = excitation_rollout(pl, [0, 0], exc)
    np.testing.assert_allclose(X0[:, 0], states.mean(0), atol=1e-14)


def test_initial_conditions_in_hull():
    pl = VanDerPolPlant()
    X0, states = generate_initial_conditions(
        pl, [0, 0], ExcitationConfig(length=100, seed=1), KMeansConfig(k=20, box=BOX), return_states=True
    )
    assert X0.shape == (2, 20)
    assert np.all(Delaunay(states).find_simplex(X0.T) >= 0)


def test_zero_input_from_origin():
    pl = VanDerPolPlant()
    exc = ExcitationConfig(length=50, amplitude_range=(0.0, 1e-300))
    X0 = generate_initial_conditions(pl, [0, 0], exc, KMeansConfig(k=3, box=BOX))
    assert np.max(np.abs(X0)) < 1e-250


def test_generate_dataset_single_pair():
    pl = VanDerPolPlant()
    u = np.array([0.1, -0.2, 0.3])
    ds = generate_dataset(pl, np.array([[0.5], [0.1]]), u[:, None], N=3)
    _, y = simulate(pl, [0.5, 0.1], u[:, None])
    np.testing.assert_array_equal(ds.Y[:, 0], y.ravel())


def test_generate_dataset_shape_and_ordering(study_data):
    ds = study_data.dataset
    assert ds.Y.shape == (10, 400)
    assert ds.ordering == ORDERING
    pl = VanDerPolPlant()
    for j, i in [(0, 0), (0, 19), (7, 3), (19, 19)]:
        _, y = simulate(pl, ds.X0[:, i], ds.input_sequence(j))
        np.testing.assert_array_equal(ds.Y[:, ds.column(j, i)], y.ravel())


def test_permuting_inputs_permutes_blocks(rng):
    pl = VanDerPolPlant()
    X0 = rng.uniform(-1, 1, (2, 3))
    U = rng.uniform(-1, 1, (4, 5))
    perm = np.array([3, 0, 4, 1, 2])
    a = generate_dataset(pl, X0, U, 4)
    b = generate_dataset(pl, X0, U[:, perm], 4)
    for jb, ja in enumerate(perm):
        np.testing.assert_array_equal(b.Y[:, jb * 3 : jb * 3 + 3], a.Y[:, ja * 3 : ja * 3 + 3])


def test_generate_dataset_reports_divergent_pair():
    pl = VanDerPolPlant(ts=0.5)
    X0 = np.array([[0.0, 50.0], [0.0, 50.0]])
    with pytest.raises(DivergenceError, match="input sequence 0, initial state 1"):
        generate_dataset(pl, X0, np.zeros((40, 1)), 40)


def test_dataset_roundtrip(tmp_path, study_data):
    ds = study_data.dataset
    save_dataset(ds, tmp_path / "d", provenance="config_hash=abc")
    back = load_dataset(tmp_path / "d")
    assert back == ds
    assert dataset_io(None, tmp_path / "d", "load") == ds
    assert (tmp_path / "d" / "y.csv").read_text().startswith("# config_hash=abc")
    assert not list((tmp_path / "d").glob("*.tmp"))


def test_dataset_roundtrip_is_bit_exact(tmp_path, rng):
    ds = Dataset(X0=rng.standard_normal((2, 3)) * 1e-7, U=rng.standard_normal((2, 2)), Y=rng.standard_normal((2, 6)) * 1e9, N=2, m=1, n=2, p=1)
    dataset_io(ds, tmp_path, "save")
    assert dataset_io(None, tmp_path, "load") == ds


def test_truncated_file_rejected(tmp_path, study_data):
    save_dataset(study_data.dataset, tmp_path)
    lines = (tmp_path / "y.csv").read_text().splitlines()
    (tmp_path / "y.csv").write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(DatasetFormatError, match="expected 400 records"):
        load_dataset(tmp_path)


def test_wrong_width_rejected(tmp_path, study_data):
    save_dataset(study_data.dataset, tmp_path)
    lines = (tmp_path / "u.csv").read_text().splitlines()
    lines[3] = lines[3] + ",0.0"
    (tmp_path / "u.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="expected 10 values"):
        load_dataset(tmp_path)


def test_empty_dataset_rejected(tmp_path):
    ds = Dataset(X0=np.zeros((2, 0)), U=np.zeros((1, 0)), Y=np.zeros((1, 0)), N=1, m=1, n=2, p=1)
    with pytest.raises(DatasetFormatError):
        save_dataset(ds, tmp_path)
    with pytest.raises(ValueError):
        dataset_io(ds, tmp_path, "sideways")


def test_stacked_data_layout():
    pl = VanDerPolPlant()
    exc = ExcitationConfig(length=1, seed=3)
    Z, Y = generate_stacked_data(pl, [0.0, 0.0], exc, N=4, T=30)
    assert Z.shape == (30, 6) and Y.shape == (4, 30)
    for i in (0, 11, 29):
        _, y = simulate(pl, Z[i, :2], Z[i, 2:, None])
        np.testing.assert_allclose(Y[:, i], y.ravel(), atol=1e-14)


def test_lti_dataset_linear_in_inputs(rng):
    pl = LtiPlant(A=np.array([[0.9, 0.1], [0.0, 0.8]]), B=np.array([[0.0], [1.0]]), C=np.array([[1.0, 0.0]]))
    U = rng.standard_normal((5, 3))
    ds = generate_dataset(pl, np.zeros((2, 1)), U, 5)
    np.testing.assert_allclose(ds.Y[:, 0] + ds.Y[:, 1], generate_dataset(pl, np.zeros((2, 1)), U[:, :1] + U[:, 1:2], 5).Y[:, 0], atol=1e-12)
