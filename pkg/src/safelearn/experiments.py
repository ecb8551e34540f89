"""Multi-run drivers behind the batch commands: ablation, Table-1 style sweeps,
fit-time benchmarks and evaluation of a saved model from several initial states.

Runs are independent, so ``jobs > 1`` fans them out over processes; results
come back in submission order and do not depend on scheduling.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import envs
from .dyn_model import GpResidualModel, LinearDynModel, load_checkpoint
from .harness import (
    MODELS,
    SAFETY_MODES,
    RunConfig,
    TrainLog,
    barrier_for,
    model_predictor,
    planning_costs,
    planning_model,
    train,
)
from .mppi import PlanState, mppi_plan
from .safety_filter import filter_control


@dataclasses.dataclass
class RunResult:
    """Compact, picklable digest of one training run."""

    config: RunConfig
    min_h: float
    episode_min_h: List[float]
    episode_costs: List[float]
    test_rewards: List[float]
    fit_times: List[float]
    oracle: Optional[float]
    paths: List[np.ndarray]
    infeasible_events: int
    acp_updates: int
    cbf_acp_steps: int

    @classmethod
    def from_log(cls, tl: TrainLog) -> "RunResult":
        steps = sum(len(ep) for ep in tl.episodes) if tl.config.safety == "cbf-acp" else 0
        return cls(
            tl.config,
            tl.min_h,
            [ep.min_h for ep in tl.episodes],
            tl.episode_costs.tolist(),
            list(tl.test_rewards),
            list(tl.fit_times),
            tl.oracle,
            [np.vstack([ep.x[:1], ep.x_next]) for ep in tl.episodes if len(ep)],
            sum(ep.infeasible_events for ep in tl.episodes),
            sum(ep.acp_updates for ep in tl.episodes),
            steps,
        )


def _run_one(config: RunConfig) -> RunResult:
    return RunResult.from_log(train(config))


def run_many(configs: Sequence[RunConfig], jobs: int = 1,
             progress: Optional[Callable[[int, RunResult], None]] = None) -> List[RunResult]:
    configs = list(configs)
    if jobs <= 1:
        out = []
        for i, c in enumerate(configs):
            out.append(_run_one(c))
            if progress is not None:
                progress(i, out[-1])
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        out = list(pool.map(_run_one, configs))
    if progress is not None:
        for i, r in enumerate(out):
            progress(i, r)
    return out


def _variant(base: RunConfig, **kw) -> RunConfig:
    return dataclasses.replace(base, **kw)


def ablation(seeds: Iterable[int], base: Optional[RunConfig] = None,
             modes: Sequence[str] = SAFETY_MODES, jobs: int = 1) -> Dict[str, List[RunResult]]:
    """Same model and environment under each safety mode."""
    base = base or RunConfig(env="integrator", model="qff", evaluate=False)
    seeds = list(seeds)
    configs = [_variant(base, safety=m, seed=s) for m in modes for s in seeds]
    res = run_many(configs, jobs)
    return {m: res[i * len(seeds):(i + 1) * len(seeds)] for i, m in enumerate(modes)}


def table1(seeds: Iterable[int], envs_: Sequence[str] = ("integrator", "pendulum"),
           models: Sequence[str] = MODELS, episodes: int = 10, jobs: int = 1,
           **overrides) -> Dict[tuple, List[RunResult]]:
    """Minimal h over all training episodes for every (env, model) pair under cbf-acp."""
    seeds = list(seeds)
    keys = [(e, m) for e in envs_ for m in models]
    configs = [RunConfig(env=e, model=m, safety="cbf-acp", episodes=episodes, seed=s,
                         evaluate=False, **overrides)
               for e, m in keys for s in seeds]
    res = run_many(configs, jobs)
    return {k: res[i * len(seeds):(i + 1) * len(seeds)] for i, k in enumerate(keys)}


def table1_rows(results: Dict[tuple, List[RunResult]]) -> List[dict]:
    rows = []
    for (env, model), runs in results.items():
        mins = np.array([r.min_h for r in runs])
        rows.append({
            "env": env,
            "model": model,
            "runs": len(runs),
            "min_h_mean": float(mins.mean()),
            "min_h_std": float(mins.std()),
            "safe_fraction": float(np.mean(mins > 0)),
        })
    return rows


def bench_timing(seed: int = 0, episodes: int = 10, env: str = "integrator",
                 models: Sequence[str] = MODELS, safety: str = "cbf-acp",
                 jobs: int = 1) -> Dict[str, List[float]]:
    """Per-episode fit time for each model variant."""
    configs = [RunConfig(env=env, model=m, safety=safety, episodes=episodes, seed=seed,
                         evaluate=False) for m in models]
    return {m: r.fit_times for m, r in zip(models, run_many(configs, jobs))}


def fit_time_ratio(times: Sequence[float]) -> float:
    return float(times[-1] / times[0])


# ---------------------------------------------------------------------------
# evaluation of a stored model


def infer_env(model) -> str:
    """Pick the preset whose input dimension matches the stored model."""
    if isinstance(model, GpResidualModel):
        d = model.dataset.states.shape[1] + model.dataset.controls.shape[1]
    else:
        d = model.featmap.config.input_dim
    names = [n for n, make in envs.PRESETS.items() if make().input_dim == d]
    if len(names) != 1:
        raise ValueError(f"cannot infer environment for input dimension {d}; pass it explicitly")
    return names[0]


def evaluate_model(model, inits: Sequence[Sequence[float]], env: Optional[str] = None,
                   steps: Optional[int] = None, radius: float = 0.0, safety: str = "cbf",
                   seed: int = 0) -> List[dict]:
    """Noise-free closed loop with the mean model from each initial state.

    MPPI plans on ``f_hat + mean residual``; with ``safety="cbf"`` the control
    is filtered with a fixed ``radius`` (``none`` skips the filter).
    """
    if isinstance(model, (str, Path)):
        model = load_checkpoint(model)
    name = env or infer_env(model)
    cfg = RunConfig(env=name, model="gp" if isinstance(model, GpResidualModel) else "qff",
                    safety=safety if safety != "cbf-acp" else "cbf")
    spec = cfg.env_spec()
    K = cfg.K if steps is None else int(steps)
    mcfg = cfg.mppi_config(spec, seed)
    d_pred = model_predictor(model)
    dyn = planning_model(spec, d_pred)
    stage, terminal = planning_costs(spec, cfg.terminal)
    barrier = barrier_for(spec)
    nominal = lambda X, U: envs.nominal_step(spec, X, U)
    out = []
    for x0 in inits:
        x = np.asarray(x0, dtype=float)
        if x.shape != (spec.state_dim,):
            raise ValueError(f"initial state {x0} does not match state_dim {spec.state_dim}")
        rng = np.random.default_rng(seed)
        plan = PlanState.zeros(mcfg)
        path, total, infeasible = [x], 0.0, 0
        for _ in range(K):
            u, plan = mppi_plan(x, dyn, stage, plan, mcfg, rng, terminal)
            if safety != "none":
                res = filter_control(u, x, nominal, d_pred, radius, barrier, spec.bounds)
                u, infeasible = res.u_safe, infeasible + (not res.feasible)
            u = envs.clip_control(spec, u)
            total += float(envs.cost(spec, x, u))
            x = envs.true_step(spec, x, u, None)
            path.append(x)
        path = np.array(path)
        out.append({
            "x0": [float(v) for v in x0],
            "total_cost": total,
            "min_h": float(np.min(envs.safety_h(spec, path[1:]))) if K else float("nan"),
            "infeasible_events": infeasible,
            "path": path,
        })
    return out
