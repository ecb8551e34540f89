"""End-to-end acceptance checks, one per criterion.

Each test appends a ``PASS`` / ``FAIL`` line (echoed in the terminal summary)
and then asserts. Tolerances are fixed here, next to the check they guard.
Heavy training runs are shared between criteria through module fixtures.

Run directly with ``python tests/test_acceptance.py`` or through pytest.
"""
import json
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import grid_oracle, random_instance, run_filter
from safelearn import envs
from safelearn.acp import acp_init, acp_update
from safelearn.cli import main as cli_main
from safelearn.dyn_model import empty_model, update_statistics
from safelearn.experiments import ablation, fit_time_ratio, table1
from safelearn.harness import RunConfig, barrier_for, oracle_cost, train
from safelearn.kernel_features import FeatureConfig, approx_kernel, build_qff, build_rff, rbf_kernel
from safelearn.safety_filter import filter_control

JOBS = max(1, os.cpu_count() or 1)
SEEDS = list(range(10))

# criterion tolerances
SAFE_FRACTION = 0.95
MIN_H_SCALE = 0.1
ABLATION_UNSAFE_SEEDS = 7
QFF_GRAM_TOL = 1e-4
QFF_WIN_SEEDS = 9
RIDGE_REL_TOL = 1e-8
COVERAGE_TOL = 0.02
MARGIN_TOL = 1e-9
DEVIATION_TOL = 1e-6
GP_RATIO_MIN = 3.0
LINEAR_RATIO_MAX = 3.0
REWARD_GAP = 0.15
INVARIANCE_TOL = 1e-9


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def table1_results():
    t0 = time.perf_counter()
    res = table1(SEEDS, episodes=10, jobs=JOBS)
    print(f"table-1 sweep took {time.perf_counter() - t0:.0f}s")
    return res


# 1 -------------------------------------------------------------------------
def test_criterion_1_table1_safety(table1_results):
    parts, ok = [], True
    for (env, model), runs in table1_results.items():
        mins = np.array([r.min_h for r in runs])
        frac = float(np.mean(mins > 0))
        cell_ok = frac >= SAFE_FRACTION and float(np.mean(mins)) < MIN_H_SCALE
        ok &= cell_ok
        parts.append(f"{env}/{model} safe {frac:.0%} min h {mins.mean():.4f}+-{mins.std():.4f}")
    report(1, ok, "; ".join(parts))
    assert ok


# 2 -------------------------------------------------------------------------
def test_criterion_2_ablation():
    base = RunConfig(env="integrator", model="qff", episodes=1, evaluate=False)
    res = ablation(SEEDS, base, jobs=JOBS)
    unsafe = {m: int(sum(r.min_h < 0 for r in runs)) for m, runs in res.items()}
    ok = (unsafe["none"] >= ABLATION_UNSAFE_SEEDS and unsafe["cbf"] >= ABLATION_UNSAFE_SEEDS
          and unsafe["cbf-acp"] == 0)
    report(2, ok, ", ".join(f"{m} unsafe in {k}/10 seeds" for m, k in unsafe.items()))
    assert ok


# 3 -------------------------------------------------------------------------
def test_criterion_3_kernel_approximation():
    x = np.linspace(-1, 1, 20)[:, None]
    K = rbf_kernel(x, x, (1.0,), 1.0)
    qff = build_qff(FeatureConfig(1, 10, (1.0,)))
    e_qff = float(np.abs(approx_kernel(qff, x) - K).max())
    e_rff = [float(np.abs(approx_kernel(build_rff(FeatureConfig(1, 10, (1.0,), 1.0, "rff", seed=s)), x)
                          - K).max()) for s in range(10)]
    wins = sum(e_qff < e for e in e_rff)
    ok = e_qff < QFF_GRAM_TOL and wins >= QFF_WIN_SEEDS
    report(3, ok, f"QFF order-10 max error {e_qff:.2e}; beats RFF (P=10) in {wins}/10 seeds")
    assert ok


# 4 -------------------------------------------------------------------------
def test_criterion_4_ridge_equivalence():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        P = int(rng.integers(1, 33)) * 2  # realized length, <= 64
        n = int(rng.integers(1, 4))
        lam = float(10 ** rng.uniform(-3, 1))
        fm = build_qff(FeatureConfig(1, P // 2, (1.0,)))
        model = empty_model(fm, n, lam)
        chunks = [(rng.normal(size=(int(rng.integers(1, 40)), P)), None) for _ in range(3)]
        chunks = [(Phi, rng.normal(size=(len(Phi), n))) for Phi, _ in chunks]
        for Phi, D in chunks:
            model = update_statistics(model, Phi, D)
        Phi = np.vstack([c[0] for c in chunks])
        D = np.vstack([c[1] for c in chunks])
        direct = np.linalg.solve(lam * np.eye(P) + Phi.T @ Phi, Phi.T @ D).T
        rel = np.linalg.norm(model.mean_weights - direct) / max(np.linalg.norm(direct), 1e-300)
        worst = max(worst, float(rel))
    ok = worst < RIDGE_REL_TOL
    report(4, ok, f"worst Frobenius relative error over 100 instances {worst:.2e}")
    assert ok


# 5 -------------------------------------------------------------------------
def test_criterion_5_acp_coverage():
    rng = np.random.default_rng(0)
    s = acp_init(0.05, 0.01, 300)
    misses = 0
    for v in rng.gamma(2.0, 1.0, size=10_000):
        acp_update(s, float(v))
        misses += s.last_miss
    rate = misses / 10_000
    ok = abs(rate - 0.05) < COVERAGE_TOL
    report(5, ok, f"empirical miss rate {rate:.4f} (target 0.05)")
    assert ok


# 6 -------------------------------------------------------------------------
def test_criterion_6_filter_oracle():
    rng = np.random.default_rng(123)
    worst_excess, worst_margin, mismatched, infeasible = 0.0, 0.0, 0, 0
    for i in range(200):
        env = envs.make_env("integrator" if i % 2 == 0 else "pendulum")
        x, u_ref, d, radius = random_instance(env, rng)
        res = run_filter(env, x, u_ref, d, radius)
        oracle = grid_oracle(env, x, u_ref, d, radius)
        if oracle["feasible"]:
            excess = res.deviation - oracle["deviation"]
            worst_excess = max(worst_excess, excess)
            worst_margin = min(worst_margin, res.margin)
            if not res.feasible or excess > DEVIATION_TOL \
                    or abs(excess) > oracle["spacing"] * np.sqrt(env.control_dim):
                mismatched += 1
        else:
            infeasible += 1
            if res.margin < oracle["margin"] - MARGIN_TOL:
                mismatched += 1
    ok = mismatched == 0 and worst_margin >= -MARGIN_TOL
    report(6, ok, f"{mismatched} mismatches over 200 instances ({infeasible} infeasible); "
                  f"worst deviation excess {worst_excess:.2e}, worst margin {worst_margin:.2e}")
    assert ok


# 7 -------------------------------------------------------------------------
def test_criterion_7_timing(table1_results):
    times = {m: table1_results[("integrator", m)][0].fit_times for m in ("gp", "rff", "qff")}
    gp = times["gp"]
    ratios = {m: fit_time_ratio(t) for m, t in times.items()}
    ok = (all(b > a for a, b in zip(gp, gp[1:])) and ratios["gp"] > GP_RATIO_MIN
          and ratios["qff"] < LINEAR_RATIO_MAX and ratios["rff"] < LINEAR_RATIO_MAX)
    report(7, ok, ", ".join(f"{m} ratio {r:.2f}" for m, r in ratios.items())
           + f"; gp strictly increasing {all(b > a for a, b in zip(gp, gp[1:]))}")
    assert ok


# 8 -------------------------------------------------------------------------
def test_criterion_8_reward_convergence():
    cfg = RunConfig(env="pendulum", model="qff", safety="cbf-acp", episodes=15, seed=0)
    tl = train(cfg)
    env = cfg.env_spec()
    oracle_reward = -oracle_cost(env, cfg.mppi_config(env, 0), 5, cfg.K, terminal_weight=cfg.terminal)
    r = np.asarray(tl.test_rewards)
    gap = abs(r[-1] - oracle_reward) / abs(oracle_reward)
    trend = r[-3:].mean() > r[:3].mean()
    ok = gap <= REWARD_GAP and trend
    report(8, ok, f"final reward {r[-1]:.3f} vs oracle {oracle_reward:.3f} (gap {gap:.1%}); "
                  f"first-3 mean {r[:3].mean():.3f}, last-3 mean {r[-3:].mean():.3f}")
    assert ok


# 9 -------------------------------------------------------------------------
def test_criterion_9_forward_invariance():
    env = envs.integrator(noise_std=0.0)
    spec = barrier_for(env)
    nominal = lambda X, U: envs.nominal_step(env, X, U)
    exact = lambda X, U: envs.true_residual(env, X)
    goal = np.asarray(env.goal)
    x = np.asarray(env.x0, dtype=float)
    assert envs.safety_h(env, x) > 0
    worst = np.inf
    for _ in range(1000):
        # aggressive reference straight at the goal, through the obstacle
        u_ref = np.clip(10.0 * (goal - x), -4, 4)
        res = filter_control(u_ref, x, nominal, exact, 0.0, spec, env.bounds)
        x = envs.true_step(env, x, res.u_safe)
        worst = min(worst, float(envs.safety_h(env, x)))
    ok = worst >= -INVARIANCE_TOL
    report(9, ok, f"min h over 1000 noiseless steps {worst:.3e}")
    assert ok


# 10 ------------------------------------------------------------------------
def test_criterion_10_determinism(tmp_path):
    args = ["run", "--env", "integrator", "--model", "qff", "--safety", "cbf-acp",
            "--episodes", "2", "--steps", "60", "--seed", "7", "--no-plots"]
    cli_main(args + ["--out", str(tmp_path / "a")])
    cli_main(args + ["--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "summary.json").read_bytes()
    b = (tmp_path / "b" / "summary.json").read_bytes()
    ok = a == b and len(a) > 0
    report(10, ok, f"summary.json identical across repeated runs: {a == b} ({len(a)} bytes)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
