"""Model predictive path integral (MPPI) reference controller.

The planner perturbs a warm-started nominal control sequence, rolls every
sample through a deterministic dynamics hypothesis, and averages the samples
with softmin weights ``exp(-(S - min S) / temperature)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Dynamics = Callable[[np.ndarray, np.ndarray], np.ndarray]
CostFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MppiConfig:
    horizon: int
    rollouts: int
    temperature: float
    noise_std: tuple
    u_min: tuple
    u_max: tuple
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_std", tuple(float(s) for s in np.atleast_1d(self.noise_std)))
        object.__setattr__(self, "u_min", tuple(float(s) for s in np.atleast_1d(self.u_min)))
        object.__setattr__(self, "u_max", tuple(float(s) for s in np.atleast_1d(self.u_max)))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if any(s <= 0 for s in self.noise_std):
            raise ValueError("noise std must be positive")
        if not len(self.noise_std) == len(self.u_min) == len(self.u_max):
            raise ValueError("noise_std and control bounds must have one entry per control")

    @property
    def control_dim(self) -> int:
        return len(self.u_min)

    @classmethod
    def for_bounds(cls, u_min, u_max, horizon=15, rollouts=512, temperature=1.0,
                   noise_frac=0.2, seed=0) -> "MppiConfig":
        """Noise std defaults to ``noise_frac`` of the control half-range."""
        lo, hi = np.asarray(u_min, float), np.asarray(u_max, float)
        return cls(horizon, rollouts, temperature, tuple(noise_frac * (hi - lo) / 2.0),
                   tuple(lo), tuple(hi), seed)


@dataclass
class PlanState:
    controls: np.ndarray  # (H, m)

    @classmethod
    def zeros(cls, config: MppiConfig) -> "PlanState":
        return cls(np.zeros((config.horizon, config.control_dim)))


def rollout(x, dynamics: Dynamics, controls, cost_fn: Optional[CostFn] = None,
            terminal_cost: Optional[Callable[[np.ndarray], np.ndarray]] = None):
    """Forward-simulate ``controls`` through ``dynamics``.

    ``controls`` is ``(H, m)`` for one sequence or ``(R, H, m)`` for a batch.
    Returns ``(trajectory, total_cost)`` with trajectory ``([R,] H + 1, n)``;
    the cost is ``sum_k cost_fn(x_k, u_k)`` for ``k < H``, plus
    ``terminal_cost(x_H)`` when given.
    """
    U = np.asarray(controls, dtype=float)
    single = U.ndim == 2
    if single:
        U = U[None]
    R, H = U.shape[0], U.shape[1]
    x = np.asarray(x, dtype=float)
    X = np.broadcast_to(x, (R, x.shape[-1])).copy() if x.ndim == 1 else x.copy()
    traj = np.empty((R, H + 1, X.shape[1]))
    traj[:, 0] = X
    total = np.zeros(R)
    for k in range(H):
        u = U[:, k]
        if cost_fn is not None:
            total += cost_fn(X, u)
        X = dynamics(X, u)
        traj[:, k + 1] = X
    if terminal_cost is not None:
        total += terminal_cost(X)
    if not np.all(np.isfinite(traj)):
        bad = ~np.all(np.isfinite(traj.reshape(R, -1)), axis=1)
        total[bad] = np.inf
        if single:
            raise FloatingPointError("rollout produced a non-finite state")
    if single:
        return traj[0], float(total[0])
    return traj, total


def softmin_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise FloatingPointError("every MPPI rollout has a non-finite cost")
    w = np.zeros_like(costs)
    c = costs[finite]
    e = np.exp(-(c - c.min()) / temperature)
    w[finite] = e / e.sum()
    return w


def mppi_plan(x, dynamics: Dynamics, cost_fn: CostFn, plan: PlanState,
              config: MppiConfig, rng: np.random.Generator, terminal_cost=None):
    """One MPPI step. Returns ``(u_ref, new_plan)``.

    Sample 0 is the unperturbed nominal sequence. The returned plan is the
    weighted sequence shifted by one step with its last entry repeated.
    """
    H, m, R = config.horizon, config.control_dim, config.rollouts
    lo, hi = np.asarray(config.u_min), np.asarray(config.u_max)
    nominal = np.clip(plan.controls, lo, hi)
    noise = rng.standard_normal((R, H, m)) * np.asarray(config.noise_std)
    noise[0] = 0.0
    V = np.clip(nominal[None] + noise, lo, hi)
    _, costs = rollout(x, dynamics, V, cost_fn, terminal_cost)
    w = softmin_weights(costs, config.temperature)
    seq = np.clip(np.tensordot(w, V, axes=1), lo, hi)
    shifted = np.concatenate([seq[1:], seq[-1:]], axis=0)
    return seq[0].copy(), PlanState(shifted)
