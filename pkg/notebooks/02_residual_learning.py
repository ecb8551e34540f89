"""
Learning residual dynamics with ridge regression
================================================

The integrator's true motion differs from the nominal model ``x + u dt``
by a smooth state-dependent drift. We learn it as a linear model over
quadrature features, then draw Thompson samples from the posterior.
"""

import numpy as np

from safelearn import envs
from safelearn.dyn_model import (
    ResidualDataset, fit_ridge, init_from_safe_dataset, predict, thompson_sample,
)
from safelearn.kernel_features import FeatureConfig, build_qff

env = envs.integrator()
rng = np.random.default_rng(0)

###########################################################################
# Start from the pre-collected safe dataset near the start state.

X, U, Xn = envs.safe_initial_dataset(env, rng)
safe = ResidualDataset.from_transitions(env, X, U, Xn, episode=-1)
fmap = build_qff(FeatureConfig(4, 200, env.lengthscales))
model = init_from_safe_dataset(safe, ridge=1.0, featmap=fmap)
print("features:", model.n_features, "data:", model.data_count)

###########################################################################
# Add random transitions over the workspace, one batch per "episode",
# and watch the prediction error fall.

probe = rng.uniform(-1.2, 1.2, (200, 2))
zero_u = np.zeros((200, 2))
truth = envs.true_residual(env, probe)
for ep in range(4):
    Xe = rng.uniform(-1.2, 1.2, (300, 2))
    Ue = rng.uniform(-4, 4, (300, 2))
    batch = ResidualDataset.from_transitions(env, Xe, Ue, envs.true_step(env, Xe, Ue, rng), ep)
    model = fit_ridge(model, batch)
    err = predict(model, fmap, probe, zero_u) - truth
    print(f"after batch {ep}: rmse {np.sqrt(np.mean(err ** 2)):.5f}")

###########################################################################
# Thompson samples scatter around the mean; the spread is set by the
# posterior precision and an observation-noise scale.

draws = np.stack([predict(thompson_sample(model, s, scale=0.01), fmap, probe[:1], zero_u[:1])
                  for s in range(200)])
print("mean of draws:", draws.mean(0), "mean model:", predict(model, fmap, probe[0], zero_u[0]))
print("spread:", draws.std(0))
