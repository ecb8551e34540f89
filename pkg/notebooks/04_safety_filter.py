"""
The conformal CBF safety filter
===============================

A reference control that would drive the robot into the obstacle is
replaced by the closest control satisfying the barrier condition with
the calibrated radius. With an exact model and zero radius the safe set
is forward invariant.
"""

import numpy as np

from safelearn import envs
from safelearn.harness import barrier_for
from safelearn.safety_filter import B_value, filter_control

env = envs.integrator(noise_std=0.0)
spec = barrier_for(env)
nominal = lambda X, U: envs.nominal_step(env, X, U)
exact = lambda X, U: envs.true_residual(env, X)

###########################################################################
# One projection near the obstacle.

x = np.array([0.65, 0.0])
u_ref = np.array([-4.0, 0.0])
print("B at the reference:", B_value(x, u_ref, nominal, exact, spec))
for radius in (0.0, 0.01, 0.02):
    res = filter_control(u_ref, x, nominal, exact, radius, spec, env.bounds)
    print(radius, res.u_safe.round(4), "deviation", round(res.deviation, 4), "margin", res.margin)

###########################################################################
# A radius larger than anything the box can deliver makes the problem
# infeasible; the filter then returns the max-margin control.

res = filter_control(u_ref, x, nominal, exact, 5.0, spec, env.bounds)
print("feasible:", res.feasible, "u:", res.u_safe)

###########################################################################
# Drive straight at the goal through the obstacle for 1000 steps.

goal = np.asarray(env.goal)
x = np.asarray(env.x0, dtype=float)
hs = []
for _ in range(1000):
    u = filter_control(np.clip(10 * (goal - x), -4, 4), x, nominal, exact, 0.0, spec, env.bounds).u_safe
    x = envs.true_step(env, x, u)
    hs.append(envs.safety_h(env, x))
print("min h:", min(hs), "final state:", x)
