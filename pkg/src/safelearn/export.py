"""Persistence for training runs: per-episode CSV, JSON summary and timing files.

Floats are written with 17 significant digits so a CSV read back with
:func:`read_episode_csv` reproduces the in-memory arrays bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List, Union

import numpy as np

from .harness import STEP_FIELDS, EpisodeLog, TrainLog

FLOAT_FMT = "%.17g"


def episode_header(n: int, m: int) -> List[str]:
    cols = ["k"]
    cols += [f"x_{i}" for i in range(n)]
    cols += [f"x_next_{i}" for i in range(n)]
    cols += [f"u_ref_{j}" for j in range(m)]
    cols += [f"u_safe_{j}" for j in range(m)]
    return cols + list(STEP_FIELDS)


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def write_episode_csv(ep: EpisodeLog, path: Union[str, Path]) -> None:
    n, m = ep.x.shape[1], ep.u_ref.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(episode_header(n, m))
        for k in range(len(ep)):
            row = [str(k)]
            row += [_fmt(v) for v in ep.x[k]]
            row += [_fmt(v) for v in ep.x_next[k]]
            row += [_fmt(v) for v in ep.u_ref[k]]
            row += [_fmt(v) for v in ep.u_safe[k]]
            row += [_fmt(getattr(ep, f)[k]) for f in STEP_FIELDS]
            w.writerow(row)


def read_episode_csv(path: Union[str, Path], episode: int = 0) -> EpisodeLog:
    """Inverse of :func:`write_episode_csv` (episode-level metadata is not in the CSV)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for c in header if c.startswith("x_") and not c.startswith("x_next_"))
    m = sum(1 for c in header if c.startswith("u_ref_"))
    if header != episode_header(n, m):
        raise ValueError(f"unexpected CSV header in {path}")
    if not body:
        return EpisodeLog.empty(episode, n, m)
    A = np.array([[float(v) for v in r[1:]] for r in body])
    o = 0
    blocks = []
    for width in (n, n, m, m):
        blocks.append(A[:, o:o + width])
        o += width
    cols = [A[:, o + i] for i in range(len(STEP_FIELDS))]
    return EpisodeLog(episode, *blocks, *cols)


def write_json(obj, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def timing_record(tl: TrainLog) -> dict:
    return {
        "env": tl.config.env,
        "model": tl.config.model,
        "seed": tl.config.seed,
        "fit_time": [float(t) for t in tl.fit_times],
        "data_count": [int(len(tl.safe_data) + sum(len(e) for e in tl.episodes[: i + 1]))
                       for i in range(len(tl.episodes))],
    }


def export(tl: TrainLog, out_dir: Union[str, Path]) -> Path:
    """Write ``episode_<t>.csv``, ``summary.json`` and ``timing.json`` into ``out_dir``.

    ``summary.json`` holds only seed-determined quantities so repeated runs
    produce identical bytes; wall-clock fit times live in ``timing.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ep in tl.episodes:
        write_episode_csv(ep, out / f"episode_{ep.episode}.csv")
    write_json(tl.summary(), out / "summary.json")
    write_json(timing_record(tl), out / "timing.json")
    return out
