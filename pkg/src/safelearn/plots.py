"""SVG figures: exploration paths, minimal-h bars, reward and fit-time curves."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import envs  # noqa: E402
from .harness import TrainLog  # noqa: E402


def _safe_set_overlay(ax, env: envs.EnvSpec) -> None:
    if env.name == "integrator":
        r = env.obstacle_radius
        ax.add_patch(plt.Circle((0.0, 0.0), r, color="tab:red", alpha=0.25, label="obstacle"))
        ax.plot(*env.x0, "ko", ms=5)
        ax.plot(*env.goal, "k*", ms=9)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        # boundary of the ellipse h = 0, traced in polar form
        a, b = env.ellipse_a, env.ellipse_b
        phi = np.linspace(0, 2 * np.pi, 400)
        c, s = np.cos(phi), np.sin(phi)
        rho = 1.0 / np.sqrt(c**2 / a**2 + s**2 / b**2 + c * s / (a * b))
        ax.plot(rho * c, rho * s, "r-", lw=1.2, label="h = 0")
        ax.set_xlabel("theta")
        ax.set_ylabel("theta_dot")
    ax.set_aspect("equal", adjustable="datalim")


def plot_paths(paths: Dict[str, Sequence[np.ndarray]], env: envs.EnvSpec,
               path: Union[str, Path], title: str = "") -> Path:
    """One line per trajectory; ``paths`` maps a label to a list of (K+1, n) arrays."""
    fig, ax = plt.subplots(figsize=(5, 5))
    _safe_set_overlay(ax, env)
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (label, trajs) in enumerate(paths.items()):
        for j, tr in enumerate(trajs):
            tr = np.asarray(tr)
            ax.plot(tr[:, 0], tr[:, 1], color=colors[i % len(colors)], lw=1,
                    alpha=0.8, label=label if j == 0 else None)
    ax.legend(loc="best", fontsize=8)
    ax.set_title(title)
    return _save(fig, path)


def plot_min_h_bars(values: Dict[str, Sequence[float]], path: Union[str, Path],
                    title: str = "minimal h") -> Path:
    """Mean and std of per-run minimal h for each method."""
    labels = list(values)
    means = [float(np.mean(values[k])) for k in labels]
    stds = [float(np.std(values[k])) for k in labels]
    fig, ax = plt.subplots(figsize=(1.2 * len(labels) + 2, 3.5))
    ax.bar(labels, means, yerr=stds, capsize=4, color="tab:blue")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_ylabel("min h")
    ax.set_title(title)
    return _save(fig, path)


def plot_curves(curves: Dict[str, Sequence[float]], path: Union[str, Path], ylabel: str,
                reference: Optional[float] = None, reference_label: str = "oracle",
                title: str = "", logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ys in curves.items():
        ys = np.asarray(ys, dtype=float)
        ax.plot(np.arange(1, len(ys) + 1), ys, marker="o", ms=3, label=label)
    if reference is not None:
        ax.axhline(reference, color="k", ls="--", lw=1, label=reference_label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("episode")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def emit_plots(tl: TrainLog, out_dir: Union[str, Path]) -> List[Path]:
    """Figures for one run: paths, per-episode min h, test reward and fit time."""
    out = Path(out_dir)
    env = tl.config.env_spec()
    trajs = [np.vstack([ep.x[:1], ep.x_next]) for ep in tl.episodes if len(ep)]
    label = f"{tl.config.model} / {tl.config.safety}"
    files = [plot_paths({label: trajs}, env, out / "paths.svg", title=f"{env.name} exploration")]
    files.append(plot_min_h_bars({f"ep {ep.episode}": [ep.min_h] for ep in tl.episodes if len(ep)},
                                 out / "min_h.svg", title="minimal h per episode"))
    if tl.test_rewards:
        oracle = -tl.oracle if tl.oracle is not None else None
        files.append(plot_curves({label: tl.test_rewards}, out / "reward.svg", "test reward",
                                 reference=oracle))
    files.append(plot_curves({tl.config.model: tl.fit_times}, out / "fit_time.svg",
                             "fit time [s]", logy=True))
    return files
