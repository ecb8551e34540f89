"""Episodic safe-learning loop: Thompson sampling -> MPPI -> CBF/ACP filter -> ridge refit.

``train`` runs the full outer loop for one :class:`RunConfig`; ``run_episode``
is the inner loop. Model variants are ``qff``, ``rff`` (linear models over
feature maps) and ``gp`` (exact GP, posterior mean). Safety variants are
``none``, ``cbf`` (radius fixed at 0) and ``cbf-acp``.
"""
from __future__ import annotations

import dataclasses
import gc
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import envs
from .acp import AcpState, acp_init, acp_quantile, acp_update, nonconformity
from .dyn_model import (
    GpResidualModel,
    LinearDynModel,
    ResidualDataset,
    fit_ridge,
    init_from_safe_dataset,
    save_checkpoint,
    thompson_sample,
)
from .kernel_features import FeatureConfig, GpHyper, build_feature_map, feature_matrix
from .mppi import MppiConfig, PlanState, mppi_plan, rollout
from .safety_filter import B_true, B_value, BarrierSpec, filter_control

log = logging.getLogger(__name__)

MODELS = ("gp", "rff", "qff")
SAFETY_MODES = ("none", "cbf", "cbf-acp")

# per-environment planner defaults; see README for the rationale
MPPI_PRESETS = {
    "integrator": dict(horizon=15, rollouts=128, temperature=10.0, noise_frac=0.2,
                       terminal_weight=100.0),
    "pendulum": dict(horizon=15, rollouts=128, temperature=0.03, noise_frac=0.2,
                     terminal_weight=0.0),
}
STEP_PRESETS = {"integrator": 300, "pendulum": 150}
RIDGE_PRESETS = {"integrator": 1.0, "pendulum": 1.0}


@dataclass
class RunConfig:
    env: str = "integrator"
    model: str = "qff"
    safety: str = "cbf-acp"
    episodes: int = 10
    steps: Optional[int] = None
    seed: int = 0
    alpha_target: float = 0.05
    learn_rate: float = 0.05
    gamma: Optional[float] = None
    ridge: Optional[float] = None
    feature_count: int = 200
    lengthscales: Optional[list] = None
    horizon: Optional[int] = None
    rollouts: Optional[int] = None
    temperature: Optional[float] = None
    noise_frac: Optional[float] = None
    terminal_weight: Optional[float] = None
    acp_window: Optional[int] = None
    acp_reset_per_episode: bool = False
    filter_uses_mean: bool = False
    ts_scale: Optional[float] = None
    safe_steps: int = 50
    filter_grid: int = 41
    evaluate: bool = True
    oracle_seeds: int = 5
    compute_oracle: bool = False
    env_overrides: dict = field(default_factory=dict)
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.env not in envs.PRESETS:
            raise ValueError(f"unknown env {self.env!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.safety not in SAFETY_MODES:
            raise ValueError(f"unknown safety mode {self.safety!r}; choose from {SAFETY_MODES}")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0 < self.alpha_target < 1:
            raise ValueError("alpha_target must lie in (0, 1)")
        if self.learn_rate <= 0:
            raise ValueError("learn_rate must be positive")
        if self.safe_steps < 1:
            raise ValueError("safe_steps must be >= 1")

    # resolved values -------------------------------------------------------
    @property
    def K(self) -> int:
        return STEP_PRESETS[self.env] if self.steps is None else int(self.steps)

    def env_spec(self) -> envs.EnvSpec:
        over = dict(self.env_overrides)
        if self.gamma is not None:
            over["gamma"] = self.gamma
        for key in ("x0", "goal", "u_min", "u_max", "lengthscales"):
            if key in over:
                over[key] = tuple(over[key])
        return envs.make_env(self.env, **over)

    def mppi_config(self, env: envs.EnvSpec, seed: int = 0) -> MppiConfig:
        p = MPPI_PRESETS[self.env]
        return MppiConfig.for_bounds(
            env.u_min, env.u_max,
            horizon=self.horizon or p["horizon"],
            rollouts=self.rollouts or p["rollouts"],
            temperature=self.temperature or p["temperature"],
            noise_frac=self.noise_frac or p["noise_frac"],
            seed=seed,
        )

    @property
    def terminal(self) -> float:
        return MPPI_PRESETS[self.env]["terminal_weight"] if self.terminal_weight is None else self.terminal_weight

    @property
    def ridge_value(self) -> float:
        return RIDGE_PRESETS[self.env] if self.ridge is None else float(self.ridge)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# logs

STEP_FIELDS = ("cost", "h", "B", "B_true", "score", "radius", "alpha", "miss",
               "feasible", "margin", "deviation", "wall_clock")


@dataclass
class EpisodeLog:
    episode: int
    x: np.ndarray  # (K, n) state before the step
    x_next: np.ndarray  # (K, n)
    u_ref: np.ndarray  # (K, m)
    u_safe: np.ndarray  # (K, m)
    cost: np.ndarray
    h: np.ndarray  # h(x_next)
    B: np.ndarray
    B_true: np.ndarray
    score: np.ndarray
    radius: np.ndarray
    alpha: np.ndarray
    miss: np.ndarray
    feasible: np.ndarray
    margin: np.ndarray
    deviation: np.ndarray
    wall_clock: np.ndarray
    aborted: bool = False
    fit_time: float = float("nan")
    acp_updates: int = 0
    infeasible_events: int = 0

    def __len__(self) -> int:
        return len(self.cost)

    @property
    def min_h(self) -> float:
        return float(np.min(self.h)) if len(self) else float("nan")

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.cost))

    @classmethod
    def empty(cls, episode: int, n: int, m: int) -> "EpisodeLog":
        z = np.zeros(0)
        return cls(episode, np.zeros((0, n)), np.zeros((0, n)), np.zeros((0, m)),
                   np.zeros((0, m)), *([z] * len(STEP_FIELDS)))

    def dataset(self, env: envs.EnvSpec) -> ResidualDataset:
        return ResidualDataset.from_transitions(env, self.x, self.u_safe, self.x_next, self.episode)


@dataclass
class TrainLog:
    config: RunConfig
    episodes: List[EpisodeLog] = field(default_factory=list)
    test_rewards: List[float] = field(default_factory=list)
    fit_times: List[float] = field(default_factory=list)
    oracle: Optional[float] = None
    regret: Optional[np.ndarray] = None
    model: object = None
    acp: Optional[AcpState] = None
    thompson_draws: int = 0
    refits: int = 0
    safe_data: Optional[ResidualDataset] = None

    @property
    def min_h(self) -> float:
        return float(min(ep.min_h for ep in self.episodes if len(ep)))

    @property
    def episode_costs(self) -> np.ndarray:
        return np.array([ep.total_cost for ep in self.episodes])

    @property
    def data_count(self) -> int:
        return self.model.data_count

    def summary(self, include_timing: bool = False) -> dict:
        """Run summary.

        By default every value is seed-determined and ``fit_time`` entries are
        ``None`` (wall-clock times go to ``timing.json``); pass
        ``include_timing=True`` to fill them in.
        """
        return {
            "env": self.config.env,
            "model": self.config.model,
            "safety": self.config.safety,
            "seed": self.config.seed,
            "episodes": len(self.episodes),
            "steps": self.config.K,
            "min_h": self.min_h,
            "total_cost": float(np.sum(self.episode_costs)),
            "data_count": int(self.data_count),
            "oracle_cost": self.oracle,
            "episode_summaries": [
                {
                    "episode": ep.episode,
                    "min_h": ep.min_h,
                    "total_cost": ep.total_cost,
                    "test_reward": (self.test_rewards[i] if i < len(self.test_rewards) else None),
                    "regret": (float(self.regret[i]) if self.regret is not None else None),
                    "fit_time": (float(ep.fit_time) if include_timing else None),
                    "acp_updates": ep.acp_updates,
                    "infeasible_events": ep.infeasible_events,
                    "aborted": ep.aborted,
                    "final_alpha": float(ep.alpha[-1]) if len(ep) else None,
                    "final_radius": float(ep.radius[-1]) if len(ep) else None,
                }
                for i, ep in enumerate(self.episodes)
            ],
            # where the files went is not part of the result
            "config": {k: v for k, v in self.config.to_dict().items() if k != "out_dir"},
        }


# ---------------------------------------------------------------------------
# models behind one predictor interface


def feature_config_for(config: RunConfig, env: envs.EnvSpec, seed: int) -> FeatureConfig:
    ls = tuple(config.lengthscales) if config.lengthscales else env.lengthscales
    return FeatureConfig(env.input_dim, config.feature_count, ls, 1.0, config.model, seed)


def linear_predictor(weights: np.ndarray, featmap) -> Callable:
    W = np.asarray(weights)

    def d_pred(X, U):
        return feature_matrix(featmap, np.concatenate([X, U], axis=1), check=False) @ W.T

    return d_pred


def model_predictor(model) -> Callable:
    if isinstance(model, GpResidualModel):
        return model.predict
    return linear_predictor(model.mean_weights, model.featmap)


def residual_scale(model: LinearDynModel, data: ResidualDataset) -> float:
    """RMS of the ridge fit residuals; plug-in observation-noise scale for sampling."""
    pred = feature_matrix(model.featmap, data.inputs) @ model.mean_weights.T
    return float(np.sqrt(np.mean((data.residuals - pred) ** 2)))


def initial_model(config: RunConfig, env: envs.EnvSpec, data: ResidualDataset, seed: int):
    lam = config.ridge_value
    if config.model == "gp":
        ls = tuple(config.lengthscales) if config.lengthscales else env.lengthscales
        return GpResidualModel(GpHyper(ls, 1.0, lam), data)
    featmap = build_feature_map(feature_config_for(config, env, seed))
    return init_from_safe_dataset(data, lam, featmap)


def refit(model, increment: ResidualDataset):
    if isinstance(model, GpResidualModel):
        return model.fit(increment)
    return fit_ridge(model, increment)


def timed_refit(model, increment: ResidualDataset, repeats: int = 3):
    """Refit and report the best-of-``repeats`` wall time (fits are pure functions).

    Garbage collection is paused while timing, as ``timeit`` does.
    """
    best, out = float("inf"), None
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = refit(model, increment)
            best = min(best, time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    return out, best


def barrier_for(env: envs.EnvSpec) -> BarrierSpec:
    return BarrierSpec(lambda X: envs.safety_h(env, X), env.gamma, env.name)


def planning_model(env: envs.EnvSpec, d_pred: Optional[Callable]) -> Callable:
    if d_pred is None:
        return lambda X, U: envs.true_mean_step(env, X, U)
    return lambda X, U: envs.nominal_step(env, X, U) + d_pred(X, U)


def planning_costs(env: envs.EnvSpec, terminal_weight: float):
    goal = np.asarray(env.goal)

    def stage(X, U):
        return envs.cost(env, X, U)

    terminal = None
    if terminal_weight:
        def terminal(X):
            return terminal_weight * np.sum((X - goal) ** 2, axis=1)
    return stage, terminal


# ---------------------------------------------------------------------------
# inner loop


def run_episode(env: envs.EnvSpec, plan_pred: Callable, filter_pred: Callable,
                acp_state: Optional[AcpState], safety: str, mppi_cfg: MppiConfig,
                steps: int, seed, episode: int = 0, terminal_weight: float = 0.0,
                filter_grid: int = 41) -> EpisodeLog:
    """Roll one episode on the true environment.

    ``plan_pred`` is the residual hypothesis used by MPPI, ``filter_pred`` the
    one used inside the barrier predictor. ``acp_state`` is updated in place
    when ``safety == "cbf-acp"``.
    """
    n, m = env.state_dim, env.control_dim
    if steps == 0:
        return EpisodeLog.empty(episode, n, m)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    plan_ss, env_ss = ss.spawn(2)
    plan_rng = np.random.default_rng(plan_ss)
    env_rng = np.random.default_rng(env_ss)

    dyn = planning_model(env, plan_pred)
    stage, terminal = planning_costs(env, terminal_weight)
    nominal = lambda X, U: envs.nominal_step(env, X, U)
    spec = barrier_for(env)
    bounds = env.bounds

    rec = {k: [] for k in ("x", "x_next", "u_ref", "u_safe") + STEP_FIELDS}
    plan = PlanState.zeros(mppi_cfg)
    x = np.asarray(env.x0, dtype=float)
    aborted, updates, infeasible = False, 0, 0
    t0 = time.perf_counter()
    for k in range(steps):
        try:
            u_ref, plan = mppi_plan(x, dyn, stage, plan, mppi_cfg, plan_rng, terminal)
        except FloatingPointError:
            aborted = True
            break
        if safety == "none":
            u, feasible, mg, dev = envs.clip_control(env, u_ref), True, np.nan, 0.0
            radius = 0.0
        else:
            radius = 0.0 if safety == "cbf" else acp_quantile(acp_state)
            res = filter_control(u_ref, x, nominal, filter_pred, radius, spec, bounds,
                                 grid_points=filter_grid)
            u, feasible, mg, dev = res.u_safe, res.feasible, res.margin, res.deviation
            if not feasible:
                infeasible += 1
                log.debug("constraint_infeasible episode=%d step=%d", episode, k)
        b_pred = B_value(x, u, nominal, filter_pred, spec)
        try:
            x_next = envs.true_step(env, x, u, env_rng)
        except FloatingPointError:
            aborted = True
            break
        b_star = B_true(x, x_next, spec)
        score = nonconformity(b_pred, b_star)
        miss = 0
        alpha = acp_state.alpha if acp_state is not None else np.nan
        if safety == "cbf-acp":
            acp_update(acp_state, score)
            miss, alpha = acp_state.last_miss, acp_state.alpha
            updates += 1
        rec["x"].append(x)
        rec["x_next"].append(x_next)
        rec["u_ref"].append(np.asarray(u_ref, dtype=float))
        rec["u_safe"].append(np.asarray(u, dtype=float))
        rec["cost"].append(envs.cost(env, x, u))
        rec["h"].append(envs.safety_h(env, x_next))
        rec["B"].append(b_pred)
        rec["B_true"].append(b_star)
        rec["score"].append(score)
        rec["radius"].append(radius)
        rec["alpha"].append(alpha)
        rec["miss"].append(miss)
        rec["feasible"].append(int(feasible))
        rec["margin"].append(mg)
        rec["deviation"].append(dev)
        rec["wall_clock"].append(time.perf_counter() - t0)
        x = x_next

    if not rec["cost"]:
        out = EpisodeLog.empty(episode, n, m)
        out.aborted = aborted
        return out
    arr = {k: np.asarray(v, dtype=float) for k, v in rec.items()}
    return EpisodeLog(episode, arr["x"], arr["x_next"], arr["u_ref"], arr["u_safe"],
                      *[arr[f] for f in STEP_FIELDS], aborted=aborted,
                      acp_updates=updates, infeasible_events=infeasible)


# ---------------------------------------------------------------------------
# evaluation and oracle


def closed_loop_cost(env: envs.EnvSpec, plan_pred: Optional[Callable], mppi_cfg: MppiConfig,
                     steps: int, seed, x0=None, terminal_weight: float = 0.0,
                     return_path: bool = False):
    """Noise-free closed loop: MPPI on ``f_hat + plan_pred`` (true model if None)."""
    rng = np.random.default_rng(seed)
    dyn = planning_model(env, plan_pred)
    stage, terminal = planning_costs(env, terminal_weight)
    plan = PlanState.zeros(mppi_cfg)
    x = np.asarray(env.x0 if x0 is None else x0, dtype=float)
    total, path = 0.0, [x]
    for _ in range(steps):
        u, plan = mppi_plan(x, dyn, stage, plan, mppi_cfg, rng, terminal)
        u = envs.clip_control(env, u)
        total += envs.cost(env, x, u)
        x = envs.true_step(env, x, u, None)
        path.append(x)
    return (total, np.array(path)) if return_path else total


def oracle_cost(env: envs.EnvSpec, mppi_cfg: MppiConfig, seeds, steps: int, x0=None,
                terminal_weight: float = 0.0, plan_pred: Optional[Callable] = None) -> float:
    """Mean noise-free cost of MPPI planning on the ground-truth dynamics.

    Passing ``plan_pred`` plans on ``f_hat + plan_pred`` instead, with the
    same planner seeds.
    """
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    return float(np.mean([closed_loop_cost(env, plan_pred, mppi_cfg, steps, 10_000 + s, x0,
                                           terminal_weight) for s in seeds]))


def empirical_regret(episode_costs, oracle: float) -> np.ndarray:
    """Cumulative excess cost over the oracle, one entry per episode."""
    return np.cumsum(np.asarray(episode_costs, dtype=float) - oracle)


def test_reward(env: envs.EnvSpec, model, mppi_cfg: MppiConfig, steps: int, seeds,
                terminal_weight: float = 0.0) -> float:
    """Negative noise-free cost under the mean model, averaged over planner seeds.

    The planner seeds are the oracle's, so the gap to the oracle reflects the
    model rather than sampling luck.
    """
    return -oracle_cost(env, mppi_cfg, seeds, steps, terminal_weight=terminal_weight,
                        plan_pred=model_predictor(model))


# ---------------------------------------------------------------------------
# outer loop


def train(config: RunConfig, progress: Optional[Callable[[int, EpisodeLog], None]] = None) -> TrainLog:
    env = config.env_spec()
    K = config.K
    root = np.random.SeedSequence(config.seed)
    safe_ss, feat_ss, ep_root = root.spawn(3)
    feat_seed = int(feat_ss.generate_state(1)[0])
    safe_rng = np.random.default_rng(safe_ss)

    X0, U0, X1 = envs.safe_initial_dataset(env, safe_rng, config.safe_steps)
    safe_data = ResidualDataset.from_transitions(env, X0, U0, X1, episode=-1)
    model = initial_model(config, env, safe_data, feat_seed)
    if config.ts_scale is not None:
        ts_scale = float(config.ts_scale)
    elif isinstance(model, LinearDynModel):
        ts_scale = residual_scale(model, safe_data)
    else:
        ts_scale = 0.0

    acp_state = acp_init(config.alpha_target, config.learn_rate, config.acp_window or max(K, 1),
                         s_prior=env.s_prior)
    mppi_cfg = config.mppi_config(env, config.seed)
    eval_cfg = config.mppi_config(env, 0)
    tl = TrainLog(config, model=model, acp=acp_state, safe_data=safe_data)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    ep_seeds = ep_root.spawn(config.episodes)
    for t in range(config.episodes):
        ts_ss, run_ss = ep_seeds[t].spawn(2)
        if isinstance(model, LinearDynModel):
            sample = thompson_sample(model, np.random.default_rng(ts_ss), ts_scale)
            plan_pred = linear_predictor(sample.weights, model.featmap)
            tl.thompson_draws += 1
        else:
            plan_pred = model.predict
        filter_pred = model_predictor(model) if config.filter_uses_mean else plan_pred
        if config.acp_reset_per_episode:
            acp_state.reset_scores()
        ep = run_episode(env, plan_pred, filter_pred, acp_state, config.safety, mppi_cfg, K,
                         run_ss, t, config.terminal, config.filter_grid)
        model, ep.fit_time = timed_refit(model, ep.dataset(env))
        tl.refits += 1
        tl.episodes.append(ep)
        tl.fit_times.append(ep.fit_time)
        if config.evaluate:
            tl.test_rewards.append(test_reward(env, model, eval_cfg, K, config.oracle_seeds, config.terminal))
        if out_dir is not None:
            _save_model(model, out_dir / f"checkpoint_{t}.json")
        if progress is not None:
            progress(t, ep)
    tl.model = model
    if config.compute_oracle:
        tl.oracle = oracle_cost(env, eval_cfg, config.oracle_seeds, K, terminal_weight=config.terminal)
        tl.regret = empirical_regret(tl.episode_costs, tl.oracle)
    return tl


def _save_model(model, path: Path) -> None:
    if isinstance(model, GpResidualModel):
        path.write_text(json.dumps(model.to_dict()))
    else:
        save_checkpoint(model, path)
