import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerodeepc.plant import DivergenceError, LtiPlant, VanDerPolPlant, simulate, step


def test_vdp_equilibrium():
    np.testing.assert_array_equal(step(VanDerPolPlant(), [0.0, 0.0], [0.0]), [0.0, 0.0])


def test_vdp_step_hand_values():
    pl = VanDerPolPlant(mu=1.0, ts=0.1)
    np.testing.assert_allclose(step(pl, [1.0, 0.0], [0.0]), [1.0, -0.1], atol=1e-15)
    np.testing.assert_allclose(step(pl, [0.0, 1.0], [1.0]), [0.1, 1.2], atol=1e-15)


def test_vdp_dimensions_and_mismatch():
    pl = VanDerPolPlant()
    assert (pl.state_dim, pl.input_dim, pl.output_dim) == (2, 1, 1)
    with pytest.raises(ValueError):
        step(pl, [0.0, 0.0, 0.0], [0.0])
    with pytest.raises(ValueError):
        step(pl, [0.0, 0.0], [0.0, 1.0])


def test_simulate_one_step_is_step_plus_output():
    pl = VanDerPolPlant()
    X, Y = simulate(pl, [0.3, -0.2], [[0.5]])
    x1 = step(pl, [0.3, -0.2], [0.5])
    np.testing.assert_array_equal(X[0], x1)
    np.testing.assert_array_equal(Y[0], pl.output(x1))


def test_simulate_two_steps_by_hand():
    X, Y = simulate(VanDerPolPlant(), [1.0, 0.0], [[0.0], [0.0]])
    np.testing.assert_allclose(X, [[1.0, -0.1], [0.99, -0.2]], atol=1e-15)
    np.testing.assert_allclose(Y[:, 0], [1.0, 0.99], atol=1e-15)


def test_simulate_origin_stays():
    X, Y = simulate(VanDerPolPlant(), [0.0, 0.0], np.zeros((50, 1)))
    assert np.all(X == 0) and np.all(Y == 0)


def test_simulate_deterministic(rng):
    u = rng.uniform(-1, 1, (30, 1))
    a = simulate(VanDerPolPlant(), [0.2, 0.1], u)
    b = simulate(VanDerPolPlant(), [0.2, 0.1], u)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_simulate_requires_inputs():
    with pytest.raises(ValueError):
        simulate(VanDerPolPlant(), [0.0, 0.0], np.zeros((0, 1)))


def test_divergence_guard():
    with pytest.raises(DivergenceError):
        simulate(VanDerPolPlant(mu=1.0, ts=0.5), [5.0, 5.0], np.zeros((200, 1)))


def test_lti_nilpotent_depends_on_inputs_only():
    pl = LtiPlant(A=np.zeros((2, 2)), B=np.array([[1.0], [2.0]]), C=np.array([[1.0, 1.0]]))
    u = np.array([[1.0], [-1.0], [0.5]])
    _, Ya = simulate(pl, [3.0, 4.0], u)
    _, Yb = simulate(pl, [-7.0, 0.0], u)
    np.testing.assert_array_equal(Ya, Yb)
    np.testing.assert_allclose(Ya[:, 0], 3.0 * u[:, 0])


def test_lti_dimension_checks():
    with pytest.raises(ValueError):
        LtiPlant(A=np.zeros((2, 2)), B=np.zeros((3, 1)), C=np.zeros((1, 2)))


@settings(max_examples=40, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), seed=st.integers(0, 2**31 - 1))
def test_lti_superposition(alpha, beta, seed):
    g = np.random.default_rng(seed)
    pl = LtiPlant(A=0.5 * g.standard_normal((3, 3)), B=g.standard_normal((3, 2)), C=g.standard_normal((2, 3)))
    x0, x1 = g.standard_normal(3), g.standard_normal(3)
    u0, u1 = g.standard_normal((6, 2)), g.standard_normal((6, 2))
    Xc, Yc = simulate(pl, alpha * x0 + beta * x1, alpha * u0 + beta * u1)
    X0, Y0 = simulate(pl, x0, u0)
    X1, Y1 = simulate(pl, x1, u1)
    np.testing.assert_allclose(Yc, alpha * Y0 + beta * Y1, atol=1e-9)
    np.testing.assert_allclose(Xc, alpha * X0 + beta * X1, atol=1e-9)


def test_vdp_jacobians_match_fd(rng):
    pl = VanDerPolPlant(mu=1.3, ts=0.1)
    x, u = rng.standard_normal(2), rng.standard_normal(1)
    A, B = pl.step_jacobian(x, u)
    h = 1e-6
    fdA = np.column_stack([(pl.step(x + h * e, u) - pl.step(x - h * e, u)) / (2 * h) for e in np.eye(2)])
    fdB = ((pl.step(x, u + h) - pl.step(x, u - h)) / (2 * h))[:, None]
    np.testing.assert_allclose(A, fdA, atol=1e-8)
    np.testing.assert_allclose(B, fdB, atol=1e-8)
