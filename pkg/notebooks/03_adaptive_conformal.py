"""
Adaptive conformal prediction under a distribution shift
========================================================

The ACP state keeps a window of nonconformity scores and nudges its
failure-rate iterate after every step. When the score scale suddenly
grows the radius follows, and the long-run miss rate returns to target.
"""

import numpy as np

from safelearn.acp import acp_init, acp_quantile, acp_update

rng = np.random.default_rng(0)
scores = np.concatenate([rng.exponential(1.0, 5000), rng.exponential(3.0, 5000)])

state = acp_init(alpha_target=0.05, learn_rate=0.01, window=300)
radius, miss = [], []
for s in scores:
    radius.append(acp_quantile(state))
    acp_update(state, s)
    miss.append(state.last_miss)
miss = np.array(miss)

print("miss rate before shift:", miss[:5000].mean())
print("miss rate right after shift:", miss[5000:5300].mean())
print("miss rate after adaptation:", miss[6000:].mean())
print("radius before / after:", np.mean(radius[4000:5000]), np.mean(radius[9000:]))

###########################################################################
# Plot the radius over time.

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

plt.figure(figsize=(6, 3))
plt.plot(radius, lw=0.8)
plt.axvline(5000, color="k", ls="--")
plt.xlabel("step")
plt.ylabel("radius")
plt.tight_layout()
plt.savefig("acp_radius.svg")
