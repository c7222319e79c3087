"""Pipeline ablation on the seeded mixed-degradation benchmark.

    python scripts/ablation.py --seeds 1,2,3,7 --count 24

Prints MSR/MPR per pipeline and seed, plus the ADF minus average margin.
"""

import argparse
import time

import numpy as np

from rgbt_bench.benchmarks import DEFAULT_SEED, SUITES
from rgbt_bench.fusion import Pipeline
from rgbt_bench.metrics import mpr, msr
from rgbt_bench.tracking import FusionTracker, run_ope

PIPELINES = ("cif,dff,adf", "cif,dff", "cif", "dff", "rgb", "ir")


def score(suite, pipeline):
    s, p = [], []
    for seq in suite:
        r = seq.record
        pred = run_ope(FusionTracker(Pipeline.parse(pipeline)), r, seq.features).at(r.annotated_frames)
        s.append(msr(pred, r.gt_rgb, r.gt_ir)[0])
        p.append(mpr(pred, r.gt_rgb, r.gt_ir))
    return float(np.mean(s)), float(np.mean(p))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default=str(DEFAULT_SEED))
    ap.add_argument("--count", type=int, default=24)
    ap.add_argument("--preset", choices=list(SUITES), default="mixed")
    ap.add_argument("--pipelines", default=";".join(PIPELINES), help="semicolon-separated")
    args = ap.parse_args()
    pipelines = args.pipelines.split(";")
    print(f"{'seed':>4}  " + "  ".join(f"{p:>13}" for p in pipelines) + "  adf-avg")
    for seed in (int(s) for s in args.seeds.split(",")):
        t0 = time.perf_counter()
        suite = SUITES[args.preset](seed, count=args.count)
        res = {p: score(suite, p) for p in pipelines}
        cells = "  ".join(f"{m:.3f}/{q:.3f}" for m, q in res.values())
        margin = res["cif,dff,adf"][0] - res["cif,dff"][0] if {"cif,dff,adf", "cif,dff"} <= res.keys() else float("nan")
        print(f"{seed:>4}  {cells}  {margin:+.4f}   ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
