"""Finite feature maps approximating an RBF-kernel Gaussian process.

Two constructions are provided:

* Quadrature Fourier features (QFF): a tensor-product Gauss-Hermite rule over
  the Gaussian spectral density of the RBF kernel.
* Random Fourier features (RFF): Monte-Carlo frequencies drawn from the same
  spectral density.

Both produce ``phi(X)`` with ``phi(X) @ phi(X') ~= k(X, X')`` where each
frequency contributes a ``(cos, sin)`` pair scaled by the square root of its
weight. An exact GP regressor is included as a baseline and accuracy oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import roots_hermite

QFF = "qff"
RFF = "rff"

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class FeatureConfig:
    input_dim: int
    feature_count: int
    lengthscales: tuple = ()
    kernel_variance: float = 1.0
    kind: str = QFF
    seed: int = 0

    def __post_init__(self):
        ls = self.lengthscales
        if ls is None or len(ls) == 0:
            ls = (1.0,) * int(self.input_dim)
        elif np.isscalar(ls):
            ls = (float(ls),) * int(self.input_dim)
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in ls))
        object.__setattr__(self, "kind", str(self.kind).lower())
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.feature_count < 1:
            raise ValueError("feature_count must be >= 1")
        if len(self.lengthscales) != self.input_dim:
            raise ValueError(
                f"expected {self.input_dim} lengthscales, got {len(self.lengthscales)}"
            )
        if not all(np.isfinite(v) and v > 0 for v in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if not (np.isfinite(self.kernel_variance) and self.kernel_variance > 0):
            raise ValueError("kernel_variance must be positive")
        if self.kind not in (QFF, RFF):
            raise ValueError(f"unknown feature kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "feature_count": self.feature_count,
            "lengthscales": list(self.lengthscales),
            "kernel_variance": self.kernel_variance,
            "kind": self.kind,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(
            input_dim=int(d["input_dim"]),
            feature_count=int(d["feature_count"]),
            lengthscales=tuple(d["lengthscales"]),
            kernel_variance=float(d["kernel_variance"]),
            kind=d["kind"],
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Deterministic map ``X -> [sqrt(w) cos(X w), sqrt(w) sin(X w)]``.

    ``frequencies`` is ``(nodes, d)``; ``weights`` are nonnegative and already
    include the kernel variance. For QFF the per-dimension node sets are kept in
    ``grid_nodes`` so evaluation can use the tensor-product structure.
    """

    config: FeatureConfig
    frequencies: np.ndarray
    weights: np.ndarray
    grid_nodes: Optional[tuple] = field(default=None, repr=False)
    grid_weights: Optional[tuple] = field(default=None, repr=False)

    @property
    def num_frequencies(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        """Realized feature length (cos and sin channels)."""
        return 2 * self.frequencies.shape[0]

    @property
    def order(self) -> Optional[int]:
        return None if self.grid_nodes is None else len(self.grid_nodes[0])

    def __call__(self, X) -> np.ndarray:
        return feature_matrix(self, X)


def qff_order(input_dim: int, requested: int) -> int:
    """Largest per-dimension order ``m`` with ``m ** input_dim <= requested``."""
    m = max(1, int(math.floor(requested ** (1.0 / input_dim))))
    while (m + 1) ** input_dim <= requested:
        m += 1
    while m > 1 and m**input_dim > requested:
        m -= 1
    return m


def build_qff(config: FeatureConfig, order: Optional[int] = None) -> FeatureMap:
    """Quadrature Fourier features on a tensor-product Gauss-Hermite grid.

    If ``order`` is given it must realize ``config.feature_count`` exactly
    (``order ** input_dim == feature_count``); otherwise the largest order with
    ``order ** input_dim <= feature_count`` is used.
    """
    if config.kind != QFF:
        raise ValueError("build_qff needs a QFF config")
    d = config.input_dim
    if order is None:
        order = qff_order(d, config.feature_count)
    elif order < 1 or order**d != config.feature_count:
        raise ValueError(
            f"order {order} in {d} dims realizes {order ** d} nodes, "
            f"not the requested {config.feature_count}"
        )
    t, w = roots_hermite(order)
    # int e^{-t^2} f(t) dt  <->  E_{w ~ N(0, 1/l^2)} f(w) with w = sqrt(2) t / l
    w1 = w / math.sqrt(math.pi)
    nodes = tuple(math.sqrt(2.0) * t / ls for ls in config.lengthscales)
    wts = tuple(w1 for _ in range(d))

    mesh = np.meshgrid(*nodes, indexing="ij")
    freqs = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*wts, indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    weights = config.kernel_variance * weights
    return FeatureMap(config, freqs, weights, grid_nodes=nodes, grid_weights=wts)


def build_rff(config: FeatureConfig) -> FeatureMap:
    """Random Fourier features with ``feature_count`` frequencies."""
    if config.kind != RFF:
        raise ValueError("build_rff needs an RFF config")
    rng = np.random.default_rng(config.seed)
    P = config.feature_count
    ls = np.asarray(config.lengthscales)
    freqs = rng.standard_normal((P, config.input_dim)) / ls
    weights = np.full(P, config.kernel_variance / P)
    return FeatureMap(config, freqs, weights)


def build_feature_map(config: FeatureConfig) -> FeatureMap:
    return build_qff(config) if config.kind == QFF else build_rff(config)


def _check_inputs(fmap: FeatureMap, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != fmap.config.input_dim:
        raise ValueError(
            f"expected inputs with {fmap.config.input_dim} columns, got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("feature inputs must be finite")
    return X


def feature_matrix(fmap: FeatureMap, X, check: bool = True) -> np.ndarray:
    """Evaluate features for a batch ``X`` of shape ``(N, d)`` -> ``(N, 2 * nodes)``."""
    if check:
        X = _check_inputs(fmap, X)
    scale = np.sqrt(fmap.weights)
    if fmap.grid_nodes is not None:
        # e^{i w.x} = prod_j e^{i w_j x_j}; much cheaper than a dense trig pass
        N = X.shape[0]
        E = np.ones((N, 1), dtype=complex)
        for j, nodes in enumerate(fmap.grid_nodes):
            ej = np.exp(1j * X[:, j : j + 1] * nodes[None, :])
            E = (E[:, :, None] * ej[:, None, :]).reshape(N, -1)
        return np.concatenate([E.real * scale, E.imag * scale], axis=1)
    Z = X @ fmap.frequencies.T
    return np.concatenate([np.cos(Z) * scale, np.sin(Z) * scale], axis=1)


def features(fmap: FeatureMap, x, u) -> np.ndarray:
    """Feature vector of a single ``(state, control)`` pair."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    X = np.concatenate([x, u])
    if X.shape[0] != fmap.config.input_dim:
        raise ValueError(
            f"state+control has {X.shape[0]} entries, map expects {fmap.config.input_dim}"
        )
    return feature_matrix(fmap, X[None, :])[0]


def approx_kernel(fmap: FeatureMap, X, Y=None) -> np.ndarray:
    PX = feature_matrix(fmap, X)
    PY = PX if Y is None else feature_matrix(fmap, Y)
    return PX @ PY.T


def rbf_kernel(X, Y, lengthscales, variance: float = 1.0) -> np.ndarray:
    """Closed-form ``variance * exp(-0.5 * ||(x - y) / l||^2)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],))
    Xs, Ys = X / ls, Y / ls
    sq = (
        np.sum(Xs**2, axis=1)[:, None]
        + np.sum(Ys**2, axis=1)[None, :]
        - 2.0 * Xs @ Ys.T
    )
    return variance * np.exp(-0.5 * np.maximum(sq, 0.0))


# --------------------------------------------------------------------------
# exact GP baseline


@dataclass(frozen=True)
class GpHyper:
    lengthscales: Sequence[float]
    kernel_variance: float = 1.0
    noise_variance: float = 1e-4


@dataclass(frozen=True, eq=False)
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray
    hyper: GpHyper
    chol: tuple = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def n_data(self) -> int:
        return self.inputs.shape[0]


def _robust_cho_factor(K: np.ndarray):
    jitter = 0.0
    eye = np.eye(K.shape[0])
    while True:
        try:
            return cho_factor(K + jitter * eye, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-12):
                raise np.linalg.LinAlgError(
                    "kernel matrix not positive definite after jitter escalation"
                )


def gp_fit(inputs, targets, hyper: GpHyper) -> GpModel:
    """Exact GP regression, one output per target column, shared hyperparameters.

    Cost is cubic in the number of data points.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] < 1:
        raise ValueError("gp_fit needs at least one data point")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("inputs and targets have different lengths")
    if not hyper.noise_variance > 0:
        raise ValueError("noise variance must be positive")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("GP data must be finite")
    K = rbf_kernel(X, X, hyper.lengthscales, hyper.kernel_variance)
    K[np.diag_indices_from(K)] += hyper.noise_variance
    chol, jitter = _robust_cho_factor(K)
    alpha = cho_solve(chol, Y, check_finite=False)
    return GpModel(X, Y, hyper, chol, alpha, jitter)


def gp_predict_mean(model: GpModel, Xq) -> np.ndarray:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Ks = rbf_kernel(Xq, model.inputs, model.hyper.lengthscales, model.hyper.kernel_variance)
    return Ks @ model.alpha


def gp_predict(model: GpModel, Xq):
    """Posterior mean ``(M, n)`` and variance ``(M, n)`` at query inputs.

    A single 1-D query returns ``(n,)`` arrays.
    """
    Xq_arr = np.asarray(Xq, dtype=float)
    single = Xq_arr.ndim == 1
    Xq_arr = np.atleast_2d(Xq_arr)
    hp = model.hyper
    Ks = rbf_kernel(Xq_arr, model.inputs, hp.lengthscales, hp.kernel_variance)
    mean = Ks @ model.alpha
    v = cho_solve(model.chol, Ks.T, check_finite=False)
    var = hp.kernel_variance - np.sum(Ks * v.T, axis=1)
    var = np.maximum(var, 0.0)
    var = np.repeat(var[:, None], mean.shape[1], axis=1)
    if single:
        return mean[0], var[0]
    return mean, var
