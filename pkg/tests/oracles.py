"""Brute-force reference solutions shared by unit and acceptance tests."""
import numpy as np

from safelearn import envs
from safelearn.harness import barrier_for
from safelearn.safety_filter import B_value, control_grid, filter_control


def grid_oracle(env, x, u_ref, d_pred, radius, points=201):
    """Dense-grid minimizer of ||u - u_ref|| subject to B - radius >= 0."""
    lo, hi = env.bounds
    G = control_grid(lo, hi, points)
    spec = barrier_for(env)
    margins = B_value(x, G, lambda X, U: envs.nominal_step(env, X, U), d_pred, spec) - radius
    feas = margins >= 0
    spacing = float(np.max((hi - lo) / (points - 1)))
    if not feas.any():
        i = int(np.argmax(margins))
        return dict(feasible=False, u=G[i], margin=float(margins[i]), spacing=spacing)
    dev = np.linalg.norm(G[feas] - u_ref, axis=1)
    i = int(np.argmin(dev))
    return dict(feasible=True, u=G[feas][i], deviation=float(dev[i]), spacing=spacing)


def random_instance(env, rng):
    """State inside the safe set, a reference control, a constant residual guess and a radius."""
    lo, hi = env.bounds
    if env.name == "integrator":
        ang = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(0.6, 0.75)
        x = r * np.array([np.cos(ang), np.sin(ang)])
        # point the reference roughly at the obstacle so the constraint bites
        u_ref = -x / np.linalg.norm(x) * rng.uniform(1, 4) + rng.normal(0, 0.5, 2)
        d = rng.normal(0, 0.003, 2)
    else:
        while True:
            x = rng.uniform([-1, -2], [1, 2])
            if envs.safety_h(env, x) > 0:
                break
        u_ref = rng.uniform(lo, hi)
        d = rng.normal(0, 0.01, 2)
    radius = float(rng.uniform(0, 0.02))
    return x, np.clip(u_ref, lo, hi), d, radius


def run_filter(env, x, u_ref, d, radius, **kw):
    return filter_control(u_ref, x, lambda X, U: envs.nominal_step(env, X, U), d, radius,
                          barrier_for(env), env.bounds, **kw)
