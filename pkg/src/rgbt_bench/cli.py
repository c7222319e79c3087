"""Command-line entry point.

Exit codes: 0 success, 1 validation or metric failure, 2 IO or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import report as rep
from .attributes import ATTRIBUTES
from .benchmarks import DEFAULT_SEED, SUITES
from .dataset import alignment_stats, is_sequence_dir, list_sequences, load_dataset, parse_sequence
from .errors import ConfigurationError, GeometryError, ParseError, ProtocolError
from .fusion import Pipeline
from .metrics import DEFAULT_TAU, PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS
from .runner import TrackJob, run_jobs
from .synthetic import write_synthetic
from .tensor import get_op, grad_check, register_op, registered_ops, unregister_op
from .tracking import THETA_HIGH, THETA_LOW, OpeResult

log = logging.getLogger("rgbt_bench")

EXIT_OK, EXIT_FAIL, EXIT_IO = 0, 1, 2
SEED_ENV = "RGBT_BENCH_SEED"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    filter: str | None = None
    pipeline: str = "cif,dff,adf"
    tau: float = DEFAULT_TAU
    theta_low: float = THETA_LOW
    theta_high: float = THETA_HIGH
    out: str | None = None
    seed: int = DEFAULT_SEED
    workers: int = 1
    lt: bool = False

    def __post_init__(self):
        Pipeline.parse(self.pipeline)
        if not self.theta_low < self.theta_high:
            raise ConfigurationError(f"need theta_low < theta_high, got {self.theta_low} and {self.theta_high}")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if self.workers < 1:
            raise ConfigurationError("workers must be at least 1")

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        kw = {k: getattr(ns, k) for k in cls.__dataclass_fields__ if getattr(ns, k, None) is not None}
        kw["seed"] = resolve_seed(getattr(ns, "seed", None))
        return cls(**kw)


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _dataset_root(path) -> Path:
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a readable directory")
    return root


def _records(cfg: RunConfig):
    return load_dataset(_dataset_root(cfg.dataset), cfg.filter)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    root = _dataset_root(args.dataset)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if args.filter:
        dirs = [p for p in dirs if args.filter in p.name]
    if not dirs:
        print("no sequences found")
        return EXIT_FAIL
    problems = 0
    for d in dirs:
        if not is_sequence_dir(d):
            print(f"{d.name}: missing manifest.txt")
            problems += 1
            continue
        try:
            parse_sequence(d)
        except (ParseError, ProtocolError, GeometryError) as e:
            print(f"{d.name}: {e}")
            problems += 1
    if problems:
        print(f"{problems} of {len(dirs)} sequences invalid")
        return EXIT_FAIL
    print(f"{len(dirs)} sequences OK")
    return EXIT_OK


def cmd_synth_gen(args) -> int:
    seed = resolve_seed(args.seed)
    names = list(SUITES) if args.preset == "all" else [args.preset]
    out = Path(args.out)
    n = 0
    for name in names:
        kw = {"count": args.count} if args.count else {}
        for seq in SUITES[name](seed, **kw):
            write_synthetic(seq, out, write_features=args.write_features)
            n += 1
    print(f"wrote {n} sequences to {out} (seed {seed})")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = RunConfig.from_args(args)
    root = _dataset_root(cfg.dataset)
    dirs = list_sequences(root)
    if cfg.filter:
        dirs = [d for d in dirs if cfg.filter in d.name]
    if not dirs:
        print("no sequences found")
        return EXIT_FAIL
    jobs = [
        TrackJob(str(d), cfg.pipeline, cfg.lt, cfg.theta_low, cfg.theta_high, timing=not args.no_timing)
        for d in dirs
    ]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fps, frames, millis = {}, 0, 0.0
    for o in run_jobs(jobs, cfg.workers):
        if o.result is None:
            log.warning(o.warning)
            continue
        _write(out / f"{o.name}.txt", o.result.to_text())
        fps[o.name] = o.result.fps
        frames += len(o.result)
        millis += sum(o.result.millis)
    tracked = len(fps)
    _write(out / "run.json", json.dumps({"schema_version": rep.SCHEMA_VERSION, **asdict(cfg)}, indent=2) + "\n")
    if not args.no_timing and fps:
        timing = {
            "schema_version": rep.SCHEMA_VERSION,
            "fps": frames / (millis / 1000.0) if millis > 0 else None,
            "sequences": fps,
        }
        _write(out / "timing.json", json.dumps(timing, indent=2) + "\n")
    print(f"tracked {tracked} of {len(dirs)} sequences with {Pipeline.parse(cfg.pipeline).label}" + (" (LT)" if cfg.lt else ""))
    return EXIT_OK if tracked else EXIT_FAIL


def _load_results(results_dir, records) -> dict:
    rdir = Path(results_dir)
    if not rdir.is_dir():
        raise FileNotFoundError(f"results directory {rdir} not found")
    out = {}
    for r in records:
        p = rdir / f"{r.name}.txt"
        if not p.is_file():
            log.warning("%s: result file %s missing, scoring empty boxes", r.name, p)
            out[r.name] = None
            continue
        out[r.name] = OpeResult.from_text(p.read_text(), p)
    return out


def cmd_evaluate(args) -> int:
    cfg = RunConfig.from_args(args)
    records = _records(cfg)
    if not records:
        print("no sequences found")
        return EXIT_FAIL
    results = _load_results(args.results, records)
    report = rep.evaluate(records, results, cfg.tau, args.level)
    out = Path(cfg.out or args.results)
    _write(out / "report.json", rep.dumps(report))
    curves = rep.overall_curves(records, results, rep.subset_groups(records))
    _write(out / "success.csv", rep.success_csv(curves))
    _write(out / "precision.csv", rep.precision_csv(curves))
    _write(
        out / "success.svg",
        rep.svg_plot("Success plot", "overlap threshold", SUCCESS_THRESHOLDS, {k: v[0] for k, v in curves.items()}, 1.0),
    )
    _write(
        out / "precision.svg",
        rep.svg_plot(
            "Precision plot", "location error threshold (px)", PRECISION_THRESHOLDS, {k: v[1] for k, v in curves.items()}, 50.0
        ),
    )
    o = report["overall"]
    print(f"sequences {o['sequences']}  MSR {o['msr']:.3f}  MPR {o['mpr']:.3f} (tau {cfg.tau:g})")
    for name, s in report["subsets"].items():
        print(f"  {name:<15} {s['sequences']:>3}  MSR {s['msr']:.3f}  MPR {s['mpr']:.3f}")
    if "segmentation" in report:
        s = report["segmentation"]
        print(f"  {'masks':<15} {s['sequences']:>3}  J {s['J']:.3f}  F {s['F']:.3f}")
    if report["missing"]:
        print(f"missing results: {', '.join(report['missing'])}")
    return EXIT_OK


def cmd_attr_report(args) -> int:
    cfg = RunConfig.from_args(args)
    records = _records(cfg)
    if not records:
        print("no sequences found")
        return EXIT_FAIL
    results = _load_results(args.results, records)
    report = rep.evaluate(records, results, cfg.tau, args.level)
    scores = report["attributes"]["scores"]
    sys.stdout.write(rep.attribute_table(scores))
    if cfg.out:
        doc = {"schema_version": rep.SCHEMA_VERSION, "level": args.level, "tau": cfg.tau, "order": list(ATTRIBUTES), "scores": scores}
        _write(Path(cfg.out) / "attributes.json", json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_align_stats(args) -> int:
    cfg = RunConfig.from_args(args)
    root = _dataset_root(cfg.dataset)
    records = _records(cfg)
    if not records:
        print("no sequences found")
        return EXIT_FAIL
    mean, median = alignment_stats(records)
    label = args.label or root.resolve().name
    width = max(len(label), len("dataset"))
    print(f"{'dataset':<{width}}  {'mean':>8}  {'median':>8}")
    print(f"{label:<{width}}  {mean:8.2f}  {median:8.2f}")
    return EXIT_OK


def _corrupt(name: str) -> str:
    """Register a copy of ``name`` whose backward is scaled by 1.01."""
    spec = get_op(name)

    def bad_backward(inputs, grads):
        return {k: 1.01 * v for k, v in spec.backward(inputs, grads).items()}

    corrupt = f"{name}[corrupted]"
    register_op(corrupt, spec.forward, bad_backward, spec.sample, fusion=True, replace=True)
    return corrupt


def cmd_gradcheck(args) -> int:
    seed = resolve_seed(args.seed)
    if args.epsilon <= 0:
        raise UsageError("epsilon must be positive")
    names = registered_ops(fusion_only=not args.all)
    if args.corrupt:
        if args.corrupt not in registered_ops():
            raise UsageError(f"unknown op {args.corrupt!r}")
        names = [n for n in names if n != args.corrupt] + [_corrupt(args.corrupt)]
    rng = np.random.default_rng(seed)
    width = max(len(n) for n in names)
    print(f"{'op':<{width}}  {'max_rel_error':>13}  status")
    failed = 0
    try:
        for name in names:
            spec = get_op(name)
            report = grad_check(name, spec.sample(rng), epsilon=args.epsilon, tolerance=args.tolerance, seed=seed)
            failed += not report.ok
            print(f"{name:<{width}}  {report.max_error:13.3e}  {'ok' if report.ok else 'FAIL'}")
    finally:
        if args.corrupt:
            unregister_op(names[-1])
    print(f"{len(names) - failed} of {len(names)} ops pass (epsilon {args.epsilon:g}, tolerance {args.tolerance:g})")
    return EXIT_OK if failed == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rgbt-bench", description="Toy RGB-T tracking benchmark and fusion toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def dataset(sp, required=True):
        sp.add_argument("--dataset", required=required, help="dataset root holding sequence directories")
        sp.add_argument("--filter", help="only sequences whose name contains this string")

    def seed(sp):
        sp.add_argument("--seed", type=int, help=f"random seed (falls back to ${SEED_ENV}, then {DEFAULT_SEED})")

    sp = sub.add_parser("validate", help="parse and check every sequence")
    dataset(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth-gen", help="write a seeded synthetic benchmark")
    sp.add_argument("--out", required=True)
    seed(sp)
    sp.add_argument("--preset", choices=[*SUITES, "all"], default="mixed")
    sp.add_argument("--count", type=int, help="sequences per suite")
    sp.add_argument("--write-features", action="store_true", help="store feature tensors instead of regenerating them")
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("track", help="run the reference tracker over a dataset")
    dataset(sp)
    sp.add_argument("--out", required=True)
    seed(sp)
    sp.add_argument("--pipeline", default="cif,dff,adf", help="cif,dff,adf subset, or rgb / ir")
    sp.add_argument("--lt", action="store_true", help="enable the local/global switcher")
    sp.add_argument("--theta-low", type=float, default=THETA_LOW)
    sp.add_argument("--theta-high", type=float, default=THETA_HIGH)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-timing", action="store_true", help="record zero wall time for byte-identical output")
    sp.set_defaults(func=cmd_track)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "score result files"),
        ("attr-report", cmd_attr_report, "per-attribute scores"),
    ):
        sp = sub.add_parser(name, help=helptext)
        dataset(sp)
        sp.add_argument("--results", required=True)
        sp.add_argument("--out", help="output directory (evaluate defaults to the results directory)")
        sp.add_argument("--tau", type=float, default=DEFAULT_TAU)
        sp.add_argument("--level", choices=["sequence", "frame"], default="sequence")
        sp.set_defaults(func=func)

    sp = sub.add_parser("align-stats", help="visible/thermal center offset statistics")
    dataset(sp)
    sp.add_argument("--label", help="dataset name shown in the table (default: root directory name)")
    sp.set_defaults(func=cmd_align_stats)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every fusion op")
    seed(sp)
    sp.add_argument("--epsilon", type=float, default=1e-5)
    sp.add_argument("--tolerance", type=float, default=1e-6)
    sp.add_argument("--all", action="store_true", help="include the tensor primitives")
    sp.add_argument("--corrupt", metavar="OP", help=argparse.SUPPRESS)  # test hook
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_IO if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, ProtocolError, GeometryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
