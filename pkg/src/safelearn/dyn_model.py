"""Residual dynamics learning: ridge regression over a feature map plus Thompson sampling.

The model keeps sufficient statistics

    precision = lambda * I + sum phi phi^T        (P x P)
    moment    = sum phi d^T                       (P x n)

so that ``mean_weights = (precision^{-1} moment)^T`` and an episode's worth of
data can be folded in without revisiting older transitions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from . import envs
from .kernel_features import (
    JITTER_MAX,
    JITTER_START,
    FeatureConfig,
    FeatureMap,
    GpHyper,
    build_feature_map,
    feature_matrix,
    gp_fit,
    gp_predict_mean,
)


@dataclass
class ResidualDataset:
    """Observed transitions with their residual ``d_obs = x_next - f_hat(x, u)``."""

    states: np.ndarray
    controls: np.ndarray
    residuals: np.ndarray
    episode: np.ndarray = None
    step: np.ndarray = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        self.residuals = np.atleast_2d(np.asarray(self.residuals, dtype=float))
        n = len(self)
        if not (len(self.controls) == len(self.residuals) == len(self.states)):
            raise ValueError("states, controls and residuals must have equal length")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.controls))
                and np.all(np.isfinite(self.residuals))):
            raise ValueError("dataset entries must be finite")
        self.episode = np.zeros(n, dtype=int) if self.episode is None else np.asarray(self.episode, dtype=int)
        self.step = np.arange(n) if self.step is None else np.asarray(self.step, dtype=int)

    def __len__(self) -> int:
        return 0 if self.states.size == 0 else self.states.shape[0]

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.states, self.controls], axis=1)

    @classmethod
    def empty(cls, state_dim: int, control_dim: int) -> "ResidualDataset":
        return cls(np.zeros((0, state_dim)), np.zeros((0, control_dim)), np.zeros((0, state_dim)))

    @classmethod
    def from_transitions(cls, env: envs.EnvSpec, states, controls, next_states,
                         episode: int = 0) -> "ResidualDataset":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        if len(states) == 0:
            return cls.empty(env.state_dim, env.control_dim)
        d = np.asarray(next_states, dtype=float) - envs.nominal_step(env, states, controls)
        return cls(states, controls, d, np.full(len(states), episode), np.arange(len(states)))

    def concat(self, other: "ResidualDataset") -> "ResidualDataset":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return ResidualDataset(
            np.concatenate([self.states, other.states]),
            np.concatenate([self.controls, other.controls]),
            np.concatenate([self.residuals, other.residuals]),
            np.concatenate([self.episode, other.episode]),
            np.concatenate([self.step, other.step]),
        )


@dataclass(frozen=True, eq=False)
class WeightSample:
    weights: np.ndarray  # (n, P)
    seed: Optional[int] = None


@dataclass(frozen=True, eq=False)
class LinearDynModel:
    featmap: FeatureMap
    mean_weights: np.ndarray  # (n, P)
    precision: np.ndarray  # (P, P)
    moment: np.ndarray  # (P, n)
    ridge: float
    data_count: int = 0

    @property
    def n_features(self) -> int:
        return self.precision.shape[0]

    @property
    def state_dim(self) -> int:
        return self.mean_weights.shape[0]

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)


def _cholesky(A: np.ndarray):
    jitter = 0.0
    eye = np.eye(A.shape[0])
    while True:
        try:
            return cho_factor(A + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-12):
                raise np.linalg.LinAlgError("precision matrix not factorizable")


def _solve_weights(precision: np.ndarray, moment: np.ndarray) -> np.ndarray:
    return cho_solve(_cholesky(precision), moment, check_finite=False).T


def _check_dataset(featmap: FeatureMap, data: ResidualDataset):
    d_in = data.states.shape[1] + data.controls.shape[1]
    if len(data) and d_in != featmap.config.input_dim:
        raise ValueError(f"dataset inputs have {d_in} columns, features expect {featmap.config.input_dim}")


def empty_model(featmap: FeatureMap, state_dim: int, ridge: float = 1.0) -> LinearDynModel:
    """Prior-only model with ``precision = ridge * I`` and zero mean."""
    if not ridge > 0:
        raise ValueError("ridge must be positive")
    P = featmap.dim
    return LinearDynModel(featmap, np.zeros((state_dim, P)), ridge * np.eye(P),
                          np.zeros((P, state_dim)), float(ridge), 0)


def init_from_safe_dataset(dataset: ResidualDataset, ridge: float = 1.0,
                           featmap: Optional[FeatureMap] = None,
                           feature_config: Optional[FeatureConfig] = None) -> LinearDynModel:
    """Ridge solution on the pre-collected safe dataset; this forms the initial precision."""
    if len(dataset) == 0:
        raise ValueError("safe dataset is empty")
    if featmap is None:
        if feature_config is None:
            raise ValueError("need a feature map or feature config")
        featmap = build_feature_map(feature_config)
    return fit_ridge(empty_model(featmap, dataset.residuals.shape[1], ridge), dataset)


def fit_ridge(model: LinearDynModel, dataset: ResidualDataset) -> LinearDynModel:
    """Fold ``dataset`` into the sufficient statistics and re-solve the normal equations."""
    if len(dataset) == 0:
        return model
    _check_dataset(model.featmap, dataset)
    if dataset.residuals.shape[1] != model.state_dim:
        raise ValueError("residual dimension does not match the model")
    Phi = feature_matrix(model.featmap, dataset.inputs)
    return update_statistics(model, Phi, dataset.residuals)


def update_statistics(model: LinearDynModel, Phi, residuals) -> LinearDynModel:
    """Add feature rows ``Phi`` (N x P) with targets ``residuals`` (N x n)."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if Phi.shape[1] != model.n_features or residuals.shape != (Phi.shape[0], model.state_dim):
        raise ValueError("feature rows / residuals do not match the model dimensions")
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(residuals))):
        raise ValueError("non-finite observation")
    precision = model.precision + Phi.T @ Phi
    precision = 0.5 * (precision + precision.T)
    moment = model.moment + Phi.T @ residuals
    W = _solve_weights(precision, moment)
    return replace(model, mean_weights=W, precision=precision, moment=moment,
                   data_count=model.data_count + Phi.shape[0])


def thompson_sample(model: LinearDynModel, seed, scale: float = 1.0) -> WeightSample:
    """Draw each row of ``W`` independently from ``N(mean_row, scale^2 precision^{-1})``.

    ``scale`` is the observation-noise standard deviation; 1 gives the
    unit-noise posterior.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c, lower = _cholesky(model.precision)
    L = np.tril(c) if lower else np.triu(c).T
    z = rng.standard_normal((model.n_features, model.state_dim))
    # precision = L L^T  ->  L^{-T} z ~ N(0, precision^{-1})
    eps = solve_triangular(L.T, z, lower=False, check_finite=False)
    return WeightSample(model.mean_weights + scale * eps.T, None if isinstance(seed, np.random.Generator) else seed)


def _weights_of(w) -> np.ndarray:
    if isinstance(w, WeightSample):
        return w.weights
    if isinstance(w, LinearDynModel):
        return w.mean_weights
    return np.asarray(w, dtype=float)


def predict(weights, featmap: FeatureMap, x, u) -> np.ndarray:
    """``W phi(x, u)`` for one pair, or a batch when ``x`` and ``u`` are 2-D."""
    W = _weights_of(weights)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim == 1:
        X = np.concatenate([x, np.atleast_1d(u)])[None, :]
        single = True
    else:
        X = np.concatenate([x, u], axis=1)
        single = False
    Phi = feature_matrix(featmap, X)
    if W.shape[1] != Phi.shape[1]:
        raise ValueError(f"weights have {W.shape[1]} columns, features have {Phi.shape[1]}")
    out = Phi @ W.T
    return out[0] if single else out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: LinearDynModel, path: Union[str, Path]) -> None:
    doc = {
        "kind": "linear",
        "feature_config": model.featmap.config.to_dict(),
        "ridge": model.ridge,
        "data_count": model.data_count,
        "mean_weights": model.mean_weights.tolist(),
        "precision": model.precision.tolist(),
        "moment": model.moment.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: Union[str, Path]):
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") == "gp":
        return GpResidualModel.from_dict(doc)
    featmap = build_feature_map(FeatureConfig.from_dict(doc["feature_config"]))
    return LinearDynModel(
        featmap,
        np.asarray(doc["mean_weights"], dtype=float),
        np.asarray(doc["precision"], dtype=float),
        np.asarray(doc["moment"], dtype=float),
        float(doc["ridge"]),
        int(doc["data_count"]),
    )


# --------------------------------------------------------------------------
# exact GP baseline behind the same episodic interface


class GpResidualModel:
    """Exact GP on all residual data gathered so far; refit from scratch each episode.

    The planner and filter use the posterior mean (no posterior function sampling).
    """

    def __init__(self, hyper: GpHyper, dataset: Optional[ResidualDataset] = None):
        self.hyper = hyper
        self.dataset = dataset
        self.gp = None
        if dataset is not None and len(dataset):
            self.gp = gp_fit(dataset.inputs, dataset.residuals, hyper)

    @property
    def data_count(self) -> int:
        return 0 if self.dataset is None else len(self.dataset)

    def fit(self, increment: ResidualDataset) -> "GpResidualModel":
        data = increment if self.dataset is None else self.dataset.concat(increment)
        return GpResidualModel(self.hyper, data)

    def predict(self, X, U) -> np.ndarray:
        return gp_predict_mean(self.gp, np.concatenate([X, U], axis=1))

    def to_dict(self) -> dict:
        return {
            "kind": "gp",
            "lengthscales": list(map(float, self.hyper.lengthscales)),
            "kernel_variance": self.hyper.kernel_variance,
            "noise_variance": self.hyper.noise_variance,
            "states": self.dataset.states.tolist(),
            "controls": self.dataset.controls.tolist(),
            "residuals": self.dataset.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpResidualModel":
        hyper = GpHyper(tuple(d["lengthscales"]), d["kernel_variance"], d["noise_variance"])
        data = ResidualDataset(d["states"], d["controls"], d["residuals"])
        return cls(hyper, data)
