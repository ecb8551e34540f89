"""
Safe learning on the single integrator
======================================

Train the full loop (Thompson sample, MPPI, conformal CBF filter, ridge
refit) and compare the three safety modes on one seed. A longer sweep is
available from the command line: ``safelearn ablation`` and
``safelearn reproduce-table1``.
"""

from pathlib import Path

from safelearn import envs
from safelearn.export import export
from safelearn.harness import RunConfig, train
from safelearn.plots import emit_plots, plot_paths

out = Path("out_integrator")

###########################################################################
# Three episodes with the calibrated filter; logs and figures go to disk.

tl = train(RunConfig(env="integrator", model="qff", safety="cbf-acp", episodes=3, seed=0,
                     compute_oracle=True, oracle_seeds=2))
for ep in tl.episodes:
    print(f"episode {ep.episode}: min h {ep.min_h:.4f}, cost {ep.total_cost:.1f}, "
          f"final radius {ep.radius[-1]:.4f}")
print("cumulative regret:", tl.regret)
export(tl, out)
emit_plots(tl, out)

###########################################################################
# One episode per safety mode, same seed.

paths = {}
for mode in ("none", "cbf", "cbf-acp"):
    run = train(RunConfig(env="integrator", model="qff", safety=mode, episodes=1, seed=0,
                          evaluate=False))
    ep = run.episodes[0]
    print(f"{mode:8s} min h {ep.min_h:+.4f}")
    paths[mode] = [ep.x_next]
plot_paths(paths, envs.integrator(), out / "ablation_paths.svg", title="first episode")
