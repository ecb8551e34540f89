"""Batch command line: ``run``, ``bench-timing``, ``ablation``, ``reproduce-table1``, ``eval``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import envs
from .dyn_model import load_checkpoint
from .experiments import (
    ablation,
    bench_timing,
    evaluate_model,
    fit_time_ratio,
    infer_env,
    table1,
    table1_rows,
)
from .export import export, write_json
from .harness import MODELS, SAFETY_MODES, RunConfig, train
from .plots import emit_plots, plot_curves, plot_min_h_bars, plot_paths


def _seeds(args) -> list:
    return list(range(args.seed, args.seed + args.seeds))


def cmd_run(args) -> int:
    base = RunConfig.from_json(args.config).to_dict() if args.config else {}
    for key, flag in (("env", args.env), ("model", args.model), ("safety", args.safety),
                      ("episodes", args.episodes), ("steps", args.steps), ("seed", args.seed)):
        if flag is not None:
            base[key] = flag
    if args.acp_reset_per_episode:
        base["acp_reset_per_episode"] = True
    if args.filter_uses_mean:
        base["filter_uses_mean"] = True
    if args.oracle:
        base["compute_oracle"] = True
    base["out_dir"] = str(args.out)
    cfg = RunConfig.from_dict(base)

    def progress(t, ep):
        logging.info("episode %d: min_h=%.4g cost=%.4g fit_time=%.3gs", t, ep.min_h,
                     ep.total_cost, ep.fit_time)

    tl = train(cfg, progress)
    export(tl, args.out)
    if not args.no_plots:
        emit_plots(tl, args.out)
    print(json.dumps({"min_h": tl.min_h, "total_cost": float(np.sum(tl.episode_costs))}))
    return 0


def cmd_bench_timing(args) -> int:
    times = bench_timing(args.seed, args.episodes, args.env, safety=args.safety, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratios = {m: fit_time_ratio(t) for m, t in times.items()}
    write_json({"fit_time": times, "ratio_last_first": ratios}, out / "timing.json")
    plot_curves(times, out / "fit_time.svg", "fit time [s]", logy=True, title="fit time per episode")
    for m in times:
        print(f"{m}: episode-{args.episodes}/episode-1 fit time ratio {ratios[m]:.2f}")
    return 0


def cmd_ablation(args) -> int:
    base = RunConfig(env=args.env, model=args.model, episodes=args.episodes, evaluate=False)
    res = ablation(_seeds(args), base, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {m: {"min_h": [r.min_h for r in runs],
               "unsafe_runs": int(sum(r.min_h < 0 for r in runs))}
           for m, runs in res.items()}
    write_json(doc, out / "ablation.json")
    plot_min_h_bars({m: d["min_h"] for m, d in doc.items()}, out / "min_h.svg",
                    title=f"{args.env}: minimal h by safety mode")
    env = envs.make_env(args.env)
    plot_paths({m: runs[0].paths[:1] for m, runs in res.items()}, env, out / "paths.svg",
               title="first-episode paths")
    for m, d in doc.items():
        print(f"{m}: unsafe in {d['unsafe_runs']}/{len(d['min_h'])} seeds, "
              f"min h mean {np.mean(d['min_h']):.4f}")
    return 0


def cmd_table1(args) -> int:
    res = table1(_seeds(args), args.envs, args.models, args.episodes, jobs=args.jobs)
    rows = table1_rows(res)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json({"rows": rows, "seeds": _seeds(args), "episodes": args.episodes},
               out / "table1.json")
    for env in args.envs:
        plot_min_h_bars({m: [r.min_h for r in res[(env, m)]] for m in args.models},
                        out / f"min_h_{env}.svg", title=f"{env}: minimal h over training")
    for r in rows:
        print(f"{r['env']:<11} {r['model']:<4} min h {r['min_h_mean']:.4f} +- {r['min_h_std']:.4f}"
              f"  safe {r['safe_fraction']:.0%}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    inits = json.loads(Path(args.inits).read_text())
    env = args.env or infer_env(model)
    res = evaluate_model(model, inits, env, args.steps, args.radius, args.safety, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json([{k: v for k, v in r.items() if k != "path"} for r in res], out / "eval.json")
    plot_paths({"learned model": [r["path"] for r in res]}, envs.make_env(env),
               out / "eval_paths.svg", title="closed loop from several initial states")
    for r in res:
        print(f"x0={r['x0']}: cost {r['total_cost']:.4g}, min h {r['min_h']:.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safelearn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one configuration and write logs, summary and plots")
    r.add_argument("--env", choices=sorted(envs.PRESETS))
    r.add_argument("--model", choices=MODELS)
    r.add_argument("--safety", choices=SAFETY_MODES)
    r.add_argument("--episodes", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    r.add_argument("--acp-reset-per-episode", action="store_true")
    r.add_argument("--filter-uses-mean", action="store_true")
    r.add_argument("--oracle", action="store_true", help="also compute the oracle cost and regret")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench-timing", help="per-episode fit time for gp, rff and qff")
    b.add_argument("--env", default="integrator", choices=sorted(envs.PRESETS))
    b.add_argument("--episodes", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--safety", default="cbf-acp", choices=SAFETY_MODES)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", default="out/timing")
    b.set_defaults(func=cmd_bench_timing)

    a = sub.add_parser("ablation", help="none vs cbf vs cbf-acp over several seeds")
    a.add_argument("--env", default="integrator", choices=sorted(envs.PRESETS))
    a.add_argument("--model", default="qff", choices=MODELS)
    a.add_argument("--episodes", type=int, default=1)
    a.add_argument("--seed", type=int, default=0, help="first seed")
    a.add_argument("--seeds", type=int, default=10, help="number of seeds")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--out", default="out/ablation")
    a.set_defaults(func=cmd_ablation)

    t = sub.add_parser("reproduce-table1", help="minimal h over training for every env and model")
    t.add_argument("--envs", nargs="+", default=["integrator", "pendulum"])
    t.add_argument("--models", nargs="+", default=list(MODELS), choices=MODELS)
    t.add_argument("--episodes", type=int, default=10)
    t.add_argument("--seed", type=int, default=0, help="first seed")
    t.add_argument("--seeds", type=int, default=10, help="number of seeds")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", default="out/table1")
    t.set_defaults(func=cmd_table1)

    e = sub.add_parser("eval", help="closed loop with a saved model from several initial states")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--inits", required=True, help="JSON list of initial states")
    e.add_argument("--env", choices=sorted(envs.PRESETS))
    e.add_argument("--steps", type=int)
    e.add_argument("--radius", type=float, default=0.0, help="fixed conformal radius for the filter")
    e.add_argument("--safety", default="cbf", choices=("none", "cbf"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="out/eval")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
