import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safelearn import envs


@pytest.fixture
def integ():
    return envs.integrator()


@pytest.fixture
def pend():
    return envs.pendulum()


def residual_by_hand(x1, x2):
    # independent scalar transcription of the integrator disturbance
    return (0.01 * math.sin(x2) * math.cos(x1) + 0.006,
            0.01 * math.exp(x2) * math.cos(3 - 0.5 * x2))


def pendulum_by_hand(th, thd, u, m=1.0, l=1.0, g=9.81, dt=0.05):
    acc = 1.5 * g / l * math.sin(th) + 3.0 / (m * l * l) * u
    return th + thd * dt + acc * dt * dt, thd + acc * dt


def test_integrator_euler_step_without_residual(integ):
    env = integ.replace(residual_enabled=False)
    np.testing.assert_allclose(envs.true_step(env, [0.5, 0.5], [1.0, 0.0]), [0.51, 0.5], atol=1e-15)


def test_pendulum_equilibrium(pend):
    np.testing.assert_array_equal(envs.true_step(pend, [0.0, 0.0], [0.0]), [0.0, 0.0])
    np.testing.assert_array_equal(envs.nominal_step(pend, [0.0, 0.0], [0.0]), [0.0, 0.0])


def test_integrator_residual_at_origin(integ):
    np.testing.assert_allclose(envs.true_residual(integ, [0.0, 0.0]), [0.006, 0.01 * math.cos(3)],
                               atol=1e-15)


def test_integrator_zero_control_adds_residual(integ):
    x = np.array([0.5, 0.5])
    np.testing.assert_allclose(envs.true_step(integ, x, [0.0, 0.0]),
                               x + np.array(residual_by_hand(0.5, 0.5)), atol=1e-15)


def test_residual_bounded_and_continuous(integ):
    g = np.linspace(-1, 1, 101)
    X = np.array([[a, b] for a in g for b in g])
    D = envs.true_residual(integ, X)
    assert np.linalg.norm(D, axis=1).max() < 0.05
    # Lipschitz constant of d on [-1, 1]^2 is below 0.05 in each coordinate
    grid = D.reshape(101, 101, 2)
    step = g[1] - g[0]
    assert np.abs(np.diff(grid, axis=0)).max() < 0.05 * step
    assert np.abs(np.diff(grid, axis=1)).max() < 0.05 * step


def test_true_step_matches_independent_code(integ, pend):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.uniform(-1, 1, 2)
        u = rng.uniform(-4, 4, 2)
        d = residual_by_hand(*x)
        ref = [x[0] + 0.01 * u[0] + d[0], x[1] + 0.01 * u[1] + d[1]]
        np.testing.assert_allclose(envs.true_step(integ, x, u), ref, atol=1e-12)
        th, thd, v = rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(-5, 5)
        np.testing.assert_allclose(envs.true_step(pend, [th, thd], [v]), pendulum_by_hand(th, thd, v),
                                   atol=1e-12)


def test_integrator_residual_consistency(integ):
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (50, 2))
    U = rng.uniform(-4, 4, (50, 2))
    np.testing.assert_array_equal(envs.true_step(integ, X, U) - envs.nominal_step(integ, X, U),
                                  (X + U * 0.01 + envs.true_residual(integ, X)) - (X + U * 0.01))


def test_nominal_matches_true_when_parameters_agree(pend):
    env = pend.replace(mass=1.2, length=1.2)
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (20, 2))
    U = rng.uniform(-5, 5, (20, 1))
    np.testing.assert_allclose(envs.nominal_step(env, X, U), envs.true_step(env, X, U), atol=1e-12)


def test_pendulum_upright_is_unstable(pend):
    x = np.array([0.01, 0.0])
    for _ in range(10):
        x = envs.true_step(pend, x, [0.0])
    assert abs(x[0]) > 0.01


def test_pendulum_rate_and_control_clipping(pend):
    x = envs.true_step(pend, [0.0, 15.9], [100.0])
    assert x[1] == 16.0
    # control above the bound behaves like the bound itself
    np.testing.assert_array_equal(envs.true_step(pend, [0.1, 0.0], [100.0]),
                                  envs.true_step(pend, [0.1, 0.0], [5.0]))


def test_noise_is_seeded(integ):
    a = envs.true_step(integ, [0.0, 1.0], [0.0, 0.0], np.random.default_rng(3))
    b = envs.true_step(integ, [0.0, 1.0], [0.0, 0.0], np.random.default_rng(3))
    c = envs.true_step(integ, [0.0, 1.0], [0.0, 0.0])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_costs(integ, pend):
    assert envs.cost(pend, [1.0, 1.0], [1.0]) == pytest.approx(1.101, abs=1e-15)
    assert envs.cost(integ, integ.goal, [0.0, 0.0]) == 0.0
    e = np.array([0.3, -0.2])
    goal = np.asarray(integ.goal)
    c1 = envs.cost(integ, goal + e, [0.0, 0.0])
    c2 = envs.cost(integ, goal + 2 * e, [0.0, 0.0])
    assert c2 == pytest.approx(4 * c1, rel=1e-14)


def test_barriers(integ, pend):
    assert envs.safety_h(integ, [0.6, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert envs.safety_h(pend, [0.0, 0.0]) == 1.0
    assert envs.safety_h(pend, [1.0, 0.0]) == 0.0
    assert envs.safety_h(integ, integ.x0) > 0
    assert envs.safety_h(pend, pend.x0) > 0


def test_non_finite_state_raises(integ):
    with pytest.raises(FloatingPointError):
        envs.true_step(integ, [np.inf, 0.0], [0.0, 0.0])


def test_bad_specs_rejected():
    with pytest.raises(ValueError):
        envs.integrator(dt=0.0)
    with pytest.raises(ValueError):
        envs.integrator(u_min=(1.0, 1.0), u_max=(0.0, 0.0))
    with pytest.raises(ValueError):
        envs.make_env("quadrotor")


@pytest.mark.parametrize("name", ["integrator", "pendulum"])
def test_safe_dataset_stays_safe(name):
    env = envs.make_env(name)
    X, U, Xn = envs.safe_initial_dataset(env, np.random.default_rng(0))
    assert X.shape == (50, env.state_dim) and U.shape == (50, env.control_dim)
    assert np.all(envs.safety_h(env, Xn) > 0)
    lo, hi = env.bounds
    assert np.all(U >= lo) and np.all(U <= hi)


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.floats(-40, 40), st.floats(-50, 50))
def test_pendulum_outputs_respect_clip_ranges(th, thd, u):
    env = envs.pendulum()
    x = envs.true_step(env, [th, thd], [u], np.random.default_rng(0))
    assert -16.0 <= x[1] <= 16.0
