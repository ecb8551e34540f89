"""
Quadrature vs random Fourier features
=====================================

Both feature maps approximate the RBF kernel by a finite inner product.
Quadrature features place frequencies on Gauss-Hermite nodes, random
features sample them. This script compares the two on a 1-D grid and
fits an exact GP for reference.
"""

###########################################################################
# Build both maps with ten frequencies each.

import numpy as np

from safelearn.kernel_features import (
    FeatureConfig, GpHyper, approx_kernel, build_qff, build_rff, feature_matrix,
    gp_fit, gp_predict, rbf_kernel,
)

x = np.linspace(-1, 1, 20)[:, None]
K = rbf_kernel(x, x, (1.0,))

qff = build_qff(FeatureConfig(1, 10, (1.0,)))
print("QFF nodes:", qff.num_frequencies, "feature length:", qff.dim)
print("QFF max Gram error:", np.abs(approx_kernel(qff, x) - K).max())

for seed in range(3):
    rff = build_rff(FeatureConfig(1, 10, (1.0,), kind="rff", seed=seed))
    print(f"RFF seed {seed} max Gram error:", np.abs(approx_kernel(rff, x) - K).max())

###########################################################################
# Error shrinks quickly with the quadrature order.

for order in (2, 4, 6, 8, 10):
    m = build_qff(FeatureConfig(1, order, (1.0,)))
    print(order, np.abs(approx_kernel(m, x) - K).max())

###########################################################################
# In several dimensions the rule is a tensor product, so the requested
# count is rounded down to a perfect power.

m4 = build_qff(FeatureConfig(4, 200, (1.0, 1.0, 4.0, 4.0)))
print("4-D, P=200 requested ->", m4.num_frequencies, "nodes, order", m4.order)

###########################################################################
# Ridge regression on QFF features reproduces the GP posterior mean when
# the GP noise equals the ridge parameter.

rng = np.random.default_rng(0)
X = rng.uniform(-1, 1, (30, 1))
Y = np.sin(3 * X)
lam = 1e-2
big = build_qff(FeatureConfig(1, 40, (1.0,)))
Phi = feature_matrix(big, X)
W = np.linalg.solve(Phi.T @ Phi + lam * np.eye(big.dim), Phi.T @ Y)
gp = gp_fit(X, Y, GpHyper((1.0,), 1.0, lam))
xq = np.linspace(-1, 1, 5)[:, None]
print(np.c_[feature_matrix(big, xq) @ W, gp_predict(gp, xq)[0]])
