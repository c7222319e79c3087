"""Rebuild tests/golden/report.json from the seeded mixed benchmark.

Run only when a deliberate change alters tracker output; review the diff.
"""

import sys
import tempfile
from pathlib import Path

from rgbt_bench.cli import main

GOLDEN = Path(__file__).resolve().parents[1] / "tests" / "golden" / "report.json"

with tempfile.TemporaryDirectory() as tmp:
    data, res = Path(tmp) / "data", Path(tmp) / "res"
    for argv in (
        ["synth-gen", "--out", data, "--seed", "7", "--count", "4"],
        ["track", "--dataset", data, "--out", res, "--no-timing"],
        ["evaluate", "--dataset", data, "--results", res],
    ):
        if main([str(a) for a in argv]):
            sys.exit(f"failed: {argv[0]}")
    GOLDEN.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN.write_text((res / "report.json").read_text())
print(f"wrote {GOLDEN}")
