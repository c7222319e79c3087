"""Switched vs unswitched tracker on the re-entry suite.

    python scripts/long_term.py --seeds 7 --theta-low 0.3 --theta-high 0.6
"""

import argparse

import numpy as np

from rgbt_bench.benchmarks import DEFAULT_SEED, reentry_suite
from rgbt_bench.metrics import msr
from rgbt_bench.tracking import GLOBAL, FusionTracker, run_ope


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", default=str(DEFAULT_SEED))
    ap.add_argument("--count", type=int, default=8)
    ap.add_argument("--theta-low", type=float, default=0.3)
    ap.add_argument("--theta-high", type=float, default=0.6)
    args = ap.parse_args()
    for seed in (int(s) for s in args.seeds.split(",")):
        rows = []
        for seq in reentry_suite(seed, args.count):
            r = seq.record
            out = []
            for lt in (False, True):
                t = FusionTracker(long_term=lt, theta_low=args.theta_low, theta_high=args.theta_high)
                pred = run_ope(t, r, seq.features).at(r.annotated_frames)
                out.append(msr(pred, r.gt_rgb, r.gt_ir)[0])
            rows.append(out + [t.modes.count(GLOBAL)])
            print(f"  {r.name}  plain {out[0]:.3f}  switched {out[1]:.3f}  global frames {rows[-1][2]}")
        plain, switched = np.mean([x[0] for x in rows]), np.mean([x[1] for x in rows])
        print(f"seed {seed}: plain {plain:.4f}  switched {switched:.4f}  gain {switched - plain:+.4f}")


if __name__ == "__main__":
    main()
