"""Adaptive conformal prediction for the scalar barrier predictor.

``AcpState`` keeps a bounded window of nonconformity scores and the adapted
failure-rate iterate. The calibrated radius is the r-th smallest buffered score
with ``r = ceil((M + 1) * (1 - alpha_k))``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

ALPHA_MIN = 0.001
ALPHA_MAX = 0.5
FALLBACK_INFLATION = 1.5


@dataclass
class AcpState:
    alpha_target: float
    learn_rate: float
    window: int
    alpha: float = None
    scores: deque = None
    step_count: int = 0
    s_prior: float = 0.1
    alpha_min: float = ALPHA_MIN
    alpha_max: float = ALPHA_MAX
    last_miss: int = 0

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = self.alpha_target
        if self.scores is None:
            self.scores = deque(maxlen=self.window)

    def copy(self) -> "AcpState":
        return AcpState(self.alpha_target, self.learn_rate, self.window, self.alpha,
                        deque(self.scores, maxlen=self.window), self.step_count,
                        self.s_prior, self.alpha_min, self.alpha_max, self.last_miss)

    def reset_scores(self) -> None:
        self.scores = deque(maxlen=self.window)


def acp_init(alpha_target: float, learn_rate: float, window: int, s_prior: float = 0.1) -> AcpState:
    if not 0.0 < alpha_target < 1.0:
        raise ValueError("alpha_target must lie in (0, 1)")
    if not learn_rate > 0:
        raise ValueError("learn_rate must be positive")
    if int(window) < 1:
        raise ValueError("window must be >= 1")
    if not s_prior >= 0:
        raise ValueError("s_prior must be nonnegative")
    return AcpState(float(alpha_target), float(learn_rate), int(window), s_prior=float(s_prior))


def nonconformity(b_pred: float, b_true: float) -> float:
    if not (math.isfinite(b_pred) and math.isfinite(b_true)):
        raise ValueError("nonconformity needs finite values")
    return abs(float(b_true) - float(b_pred))


def quantile_index(count: int, alpha: float) -> int:
    # guard against 20 * 0.95 = 18.999999999999996 style round-off
    return math.ceil((count + 1) * (1.0 - alpha) - 1e-9)


def acp_quantile(state: AcpState) -> float:
    """Current radius ``S^(r)``; inflated max score (or ``s_prior``) when ``r > M``."""
    M = len(state.scores)
    if M == 0:
        return state.s_prior
    r = quantile_index(M, state.alpha)
    ordered = sorted(state.scores)
    if r > M:
        return ordered[-1] * FALLBACK_INFLATION
    return ordered[max(r, 1) - 1]


def acp_update(state: AcpState, score: float) -> AcpState:
    """Coverage check against the pre-insert quantile, alpha step, then buffer the score."""
    score = float(score)
    if not math.isfinite(score) or score < 0:
        raise ValueError("score must be finite and nonnegative")
    q = acp_quantile(state)
    miss = 0 if score <= q else 1
    alpha = state.alpha + state.learn_rate * (state.alpha_target - miss)
    state.alpha = min(max(alpha, state.alpha_min), state.alpha_max)
    state.scores.append(score)
    state.step_count += 1
    state.last_miss = miss
    return state
