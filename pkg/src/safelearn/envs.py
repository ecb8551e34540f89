"""Ground-truth simulation environments: single integrator and inverted pendulum.

Each environment exposes the true stochastic step, the nominal (imprecise)
model used by the learner, the stage cost, and the barrier function ``h``
(``h >= 0`` is safe). All step/cost/barrier functions accept either a single
state ``(n,)`` or a batch ``(R, n)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    control_dim: int
    dt: float
    u_min: tuple
    u_max: tuple
    noise_std: float
    x0: tuple
    goal: tuple
    gamma: float = 0.5
    # integrator
    obstacle_radius: float = 0.6
    residual_enabled: bool = True
    q_weight: float = 1.0
    r_weight: float = 1.0
    # pendulum
    mass: float = 1.0
    length: float = 1.0
    nominal_mass: float = 1.2
    nominal_length: float = 1.2
    gravity: float = GRAVITY
    thetadot_max: float = 16.0
    ellipse_a: float = 1.0
    ellipse_b: float = 2.0
    # learning / filter defaults that belong to the preset
    lengthscales: tuple = ()
    s_prior: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.u_min) != self.control_dim or len(self.u_max) != self.control_dim:
            raise ValueError("control bounds must match control_dim")
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("control bounds are not ordered")
        if self.noise_std < 0:
            raise ValueError("noise std must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if len(self.x0) != self.state_dim or len(self.goal) != self.state_dim:
            raise ValueError("x0 / goal must match state_dim")

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.control_dim

    @property
    def bounds(self) -> tuple:
        return np.asarray(self.u_min, dtype=float), np.asarray(self.u_max, dtype=float)

    def replace(self, **kw) -> "EnvSpec":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def integrator(**overrides) -> EnvSpec:
    spec = EnvSpec(
        name="integrator",
        state_dim=2,
        control_dim=2,
        dt=0.01,
        u_min=(-4.0, -4.0),
        u_max=(4.0, 4.0),
        noise_std=0.01,  # eps ~ N(0, dt^2 I)
        x0=(-1.0, -1.0),
        goal=(1.0, 1.0),
        gamma=0.5,
        lengthscales=(1.0, 1.0, 4.0, 4.0),
        s_prior=0.1,
    )
    return spec.replace(**overrides) if overrides else spec


def pendulum(**overrides) -> EnvSpec:
    spec = EnvSpec(
        name="pendulum",
        state_dim=2,
        control_dim=1,
        dt=0.05,
        u_min=(-5.0,),
        u_max=(5.0,),
        noise_std=0.005,
        x0=(0.5, 0.0),
        goal=(0.0, 0.0),
        gamma=0.5,
        lengthscales=(1.0, 4.0, 5.0),
        s_prior=0.1,
    )
    return spec.replace(**overrides) if overrides else spec


PRESETS = {"integrator": integrator, "pendulum": pendulum}


def make_env(name: str, **overrides) -> EnvSpec:
    try:
        return PRESETS[name](**overrides)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(PRESETS)}")


def _batch(a) -> tuple:
    a = np.asarray(a, dtype=float)
    return (a[None, :], True) if a.ndim == 1 else (a, False)


def clip_control(env: EnvSpec, u) -> np.ndarray:
    lo, hi = env.bounds
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def true_residual(env: EnvSpec, x) -> np.ndarray:
    """Integrator state-dependent disturbance ``d(x)``."""
    if env.name != "integrator":
        raise ValueError("closed-form residual is defined for the integrator only")
    X, single = _batch(x)
    x1, x2 = X[:, 0], X[:, 1]
    d = np.stack(
        [
            0.01 * np.sin(x2) * np.cos(x1) + 0.006,
            0.01 * np.exp(x2) * np.cos(3.0 - 0.5 * x2),
        ],
        axis=1,
    )
    return d[0] if single else d


def _pendulum_map(env: EnvSpec, X, U, mass, length) -> np.ndarray:
    dt = env.dt
    th, thd = X[:, 0], X[:, 1]
    u = U[:, 0]
    grav = 1.5 * env.gravity / length * np.sin(th)
    gain = 3.0 / (mass * length**2)
    th_next = th + thd * dt + grav * dt**2 + gain * dt**2 * u
    thd_next = thd + grav * dt + gain * dt * u
    return np.stack([th_next, thd_next], axis=1)


def nominal_step(env: EnvSpec, x, u) -> np.ndarray:
    """Known nominal model ``f_hat``; no noise, no residual."""
    X, single = _batch(x)
    U, _ = _batch(u)
    if env.name == "integrator":
        out = X + U * env.dt
    elif env.name == "pendulum":
        out = _pendulum_map(env, X, U, env.nominal_mass, env.nominal_length)
    else:
        raise ValueError(f"unknown environment {env.name!r}")
    return out[0] if single else out


def true_mean_step(env: EnvSpec, x, u) -> np.ndarray:
    """Noise-free ground-truth step (controls clipped, pendulum rate clipped)."""
    X, single = _batch(x)
    U, _ = _batch(clip_control(env, u))
    if env.name == "integrator":
        out = X + U * env.dt
        if env.residual_enabled:
            out = out + true_residual(env, X)
    elif env.name == "pendulum":
        out = _pendulum_map(env, X, U, env.mass, env.length)
    else:
        raise ValueError(f"unknown environment {env.name!r}")
    return out[0] if single else out


def true_step(env: EnvSpec, x, u, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Ground-truth transition with additive Gaussian noise (skipped if ``rng`` is None)."""
    out = true_mean_step(env, x, u)
    if rng is not None and env.noise_std > 0:
        out = out + env.noise_std * rng.standard_normal(out.shape)
    if env.name == "pendulum":
        out = np.array(out, dtype=float)
        out[..., 1] = np.clip(out[..., 1], -env.thetadot_max, env.thetadot_max)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("environment produced a non-finite state")
    return out


def cost(env: EnvSpec, x, u) -> np.ndarray:
    X, single = _batch(x)
    U, _ = _batch(u)
    if env.name == "integrator":
        e = X - np.asarray(env.goal)
        c = env.q_weight * np.sum(e * e, axis=1) + env.r_weight * np.sum(U * U, axis=1)
    else:
        th, thd = X[:, 0], X[:, 1]
        c = th**2 + 0.1 * thd**2 + 0.001 * U[:, 0] ** 2
    return float(c[0]) if single else c


def safety_h(env: EnvSpec, x) -> np.ndarray:
    X, single = _batch(x)
    if env.name == "integrator":
        h = np.sum(X * X, axis=1) - env.obstacle_radius**2
    else:
        a, b = env.ellipse_a, env.ellipse_b
        th, thd = X[:, 0], X[:, 1]
        h = 1.0 - th**2 / a**2 - thd**2 / b**2 - th * thd / (a * b)
    return float(h[0]) if single else h


def stabilizing_control(env: EnvSpec, x) -> np.ndarray:
    """Hand-tuned controller used to collect the safe initial dataset."""
    x = np.asarray(x, dtype=float)
    if env.name == "integrator":
        # hold position against the nominal model: zero velocity command
        # plus a weak pull back toward the start state
        u = -2.0 * (x - np.asarray(env.x0))
    else:
        # PD on the nominal pendulum, cancelling nominal gravity
        g = 1.5 * env.gravity / env.nominal_length
        gain = 3.0 / (env.nominal_mass * env.nominal_length**2)
        u = np.array([(-g * np.sin(x[0]) - 6.0 * x[0] - 2.5 * x[1]) / gain])
    return clip_control(env, u)


def safe_initial_dataset(env: EnvSpec, rng: np.random.Generator, steps: int = 50,
                         perturb: float = 0.05):
    """Roll out the stabilizing controller with small uniform control perturbations.

    Returns ``(X, U, X_next)``; every visited state is inside the safe set.
    """
    lo, hi = env.bounds
    amp = perturb * (hi - lo)
    x = np.asarray(env.x0, dtype=float)
    xs, us, xn = [], [], []
    for _ in range(steps):
        u = clip_control(env, stabilizing_control(env, x) + rng.uniform(-amp, amp))
        x_next = true_step(env, x, u, rng)
        xs.append(x)
        us.append(u)
        xn.append(x_next)
        x = x_next
    return np.array(xs), np.array(us), np.array(xn)
