"""Discrete-time CBF safety filter calibrated by a conformal radius.

The barrier predictor is

    B(x, u) = h(f_hat(x, u) + d_pred(x, u)) - (1 - gamma) h(x)

and the filter returns the control closest to the reference that keeps
``B(x, u) - radius >= 0`` inside the control box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import minimize

from .acp import AcpState, acp_quantile

MARGIN_TOL = 1e-9


@dataclass(frozen=True)
class BarrierSpec:
    h: Callable[[np.ndarray], np.ndarray]
    gamma: float
    description: str = ""

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")


@dataclass(frozen=True)
class FilterResult:
    u_safe: np.ndarray
    feasible: bool
    margin: float
    deviation: float


def _h(spec: BarrierSpec, X) -> np.ndarray:
    return np.asarray(spec.h(np.atleast_2d(X)), dtype=float).reshape(-1)


def B_value(x, u, nominal_step, d_pred, spec: BarrierSpec):
    """Barrier predictor at one control ``(m,)`` or a batch ``(R, m)``.

    ``d_pred`` is either the predicted residual (array) or a callable
    ``d_pred(X, U) -> (R, n)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    U = np.atleast_2d(u)
    X = np.broadcast_to(x, (U.shape[0], x.shape[0]))
    d = d_pred(X, U) if callable(d_pred) else np.broadcast_to(np.asarray(d_pred, float), X.shape)
    nxt = nominal_step(X, U) + d
    B = _h(spec, nxt) - (1.0 - spec.gamma) * _h(spec, x)
    if not np.all(np.isfinite(B)):
        raise FloatingPointError("barrier predictor is not finite")
    return float(B[0]) if single else B


def B_true(x, x_next, spec: BarrierSpec) -> float:
    """Realized barrier value from an observed transition."""
    B = _h(spec, x_next)[0] - (1.0 - spec.gamma) * _h(spec, x)[0]
    if not math.isfinite(B):
        raise FloatingPointError("realized barrier value is not finite")
    return float(B)


def control_grid(lo, hi, points: int) -> np.ndarray:
    axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def _bisect_boundary(margin_fn, u_in, u_out, iters: int = 60) -> np.ndarray:
    """Feasible point on the segment from feasible ``u_in`` toward infeasible ``u_out``."""
    a, b = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if margin_fn((1 - mid) * u_in + mid * u_out) >= 0:
            a = mid
        else:
            b = mid
    return (1 - a) * u_in + a * u_out


def filter_control(u_ref, x, nominal_step, d_pred, radius: Union[float, AcpState],
                   spec: BarrierSpec, bounds, grid_points: int = 41,
                   refine: bool = True) -> FilterResult:
    """Minimal-deviation safe control.

    Stage 1 scans a regular grid over the control box; stage 2 refines the best
    grid point with SLSQP on ``||u - u_ref||^2`` and repairs any residual
    constraint violation by bisection toward a known feasible point. If no
    feasible control exists the max-margin control is returned with
    ``feasible=False``.
    """
    S = acp_quantile(radius) if isinstance(radius, AcpState) else float(radius)
    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    u_ref = np.asarray(u_ref, dtype=float).reshape(-1)
    u0 = np.clip(u_ref, lo, hi)
    m = u0.shape[0]

    def margins(U):
        return B_value(x, U, nominal_step, d_pred, spec) - S

    def margin(u):
        return float(margins(np.asarray(u, dtype=float)[None, :])[0])

    def margin_grad(u, h=1e-6):
        E = np.eye(m) * h
        vals = margins(np.concatenate([u + E, u - E]))
        return (vals[:m] - vals[m:]) / (2 * h)

    def result(u, feasible):
        u = np.clip(u, lo, hi)
        return FilterResult(u, bool(feasible), margin(u), float(np.linalg.norm(u - u_ref)))

    def _repair(u):
        # Newton steps along the constraint gradient; the segment back to a
        # feasible point can cross the infeasible region when it is non-convex
        for _ in range(20):
            mu = margin(u)
            if mu >= 0:
                break
            g = margin_grad(u)
            gg = float(g @ g)
            if gg == 0.0:
                break
            u = np.clip(u - (mu * (1.0 + 1e-6) - 1e-15) * g / gg, lo, hi)
        return u

    m0 = margin(u0)
    if m0 >= 0:
        return result(u0, True)

    G = control_grid(lo, hi, grid_points)
    gm = margins(G)
    feas = gm >= 0
    if not feas.any():
        best = G[np.argmax(gm)]
        if refine:
            res = minimize(lambda u: -margin(u), best, jac=lambda u: -margin_grad(u),
                           method="L-BFGS-B", bounds=list(zip(lo, hi)))
            if np.all(np.isfinite(res.x)) and margin(res.x) > margin(best):
                best = np.clip(res.x, lo, hi)
        if margin(best) < 0:
            return result(best, False)
        G, feas = best[None, :], np.array([True])

    cand = G[feas]
    dist = np.linalg.norm(cand - u_ref, axis=1)
    best = cand[np.argmin(dist)]
    # the boundary crossing toward u_ref is never farther than the grid point
    best = _bisect_boundary(margin, best, u0)
    if refine:
        res = minimize(
            lambda u: float(np.sum((u - u_ref) ** 2)),
            best,
            jac=lambda u: 2.0 * (u - u_ref),
            method="SLSQP",
            bounds=list(zip(lo, hi)),
            constraints=[{"type": "ineq", "fun": margin, "jac": margin_grad}],
            options={"maxiter": 100, "ftol": 1e-14},
        )
        u_new = np.clip(res.x, lo, hi)
        if np.all(np.isfinite(u_new)):
            if margin(u_new) < 0:
                u_new = _repair(u_new)
            if margin(u_new) < 0:
                u_new = _bisect_boundary(margin, best, u_new)
            if np.linalg.norm(u_new - u_ref) < np.linalg.norm(best - u_ref):
                best = u_new
    return result(best, True)
