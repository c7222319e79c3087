"""Running trackers over sequence directories, optionally in parallel."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .dataset import feature_path, has_feature_files, parse_sequence
from .fusion import Pipeline
from .synthetic import load_spec, render_features
from .tensor import read_tensor
from .tracking import THETA_HIGH, THETA_LOW, FusionTracker, OpeResult, run_ope

log = logging.getLogger(__name__)


def frame_source(seq_dir) -> Callable | None:
    """Feature loader for a sequence: tensor files if present, else the generator spec."""
    seq_dir = Path(seq_dir)
    if has_feature_files(seq_dir):
        return lambda i: (read_tensor(feature_path(seq_dir, "rgb", i)), read_tensor(feature_path(seq_dir, "ir", i)))
    spec = load_spec(seq_dir)
    if spec is not None:
        return lambda i: render_features(spec, i)
    return None


@dataclass(frozen=True)
class TrackJob:
    seq_dir: str
    pipeline: str = "cif,dff,adf"
    long_term: bool = False
    theta_low: float = THETA_LOW
    theta_high: float = THETA_HIGH
    timing: bool = True


@dataclass(frozen=True)
class TrackOutcome:
    name: str
    result: OpeResult | None
    warning: str | None = None


def _zero_clock():
    return 0.0


def track_sequence(job: TrackJob) -> TrackOutcome:
    record = parse_sequence(job.seq_dir)
    frames = frame_source(job.seq_dir)
    if frames is None:
        return TrackOutcome(record.name, None, f"{record.name}: no features on disk and no synth.json, skipped")
    tracker = FusionTracker(
        Pipeline.parse(job.pipeline), long_term=job.long_term, theta_low=job.theta_low, theta_high=job.theta_high
    )
    clock = None if job.timing else _zero_clock
    result = run_ope(tracker, record, frames, **({} if clock is None else {"clock": clock}))
    return TrackOutcome(record.name, result)


def run_jobs(jobs: Iterable[TrackJob], workers: int = 1) -> list[TrackOutcome]:
    """Run every job; outcomes come back sorted by sequence name."""
    jobs = list(jobs)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(track_sequence, jobs))
    else:
        outcomes = [track_sequence(j) for j in jobs]
    return sorted(outcomes, key=lambda o: o.name)
