"""
MPPI reference controller
=========================

Sampling-based receding-horizon planning on the nominal pendulum and on
the integrator.
"""

import numpy as np

from safelearn import envs
from safelearn.harness import RunConfig, closed_loop_cost, planning_costs
from safelearn.mppi import PlanState, mppi_plan

###########################################################################
# Pendulum swing-in from the preset start, planning on the true dynamics.

cfg = RunConfig(env="pendulum")
env = cfg.env_spec()
cost, path = closed_loop_cost(env, None, cfg.mppi_config(env), 150, seed=0, return_path=True)
print("pendulum cost:", round(cost, 3), "final state:", path[-1].round(4))

###########################################################################
# One planning step by hand on the integrator.

cfg = RunConfig(env="integrator")
env = cfg.env_spec()
mcfg = cfg.mppi_config(env)
stage, terminal = planning_costs(env, cfg.terminal)
dyn = lambda X, U: envs.nominal_step(env, X, U)
u, plan = mppi_plan(np.asarray(env.x0), dyn, stage, PlanState.zeros(mcfg), mcfg,
                    np.random.default_rng(0), terminal)
print("first control toward the goal:", u)
print("warm-started plan shape:", plan.controls.shape)
