import json
import shutil
from pathlib import Path

import pytest

from rgbt_bench.attributes import ATTRIBUTES
from rgbt_bench.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, RunConfig, main
from rgbt_bench.dataset import SequenceRecord, load_dataset, write_sequence
from rgbt_bench.errors import ConfigurationError
from rgbt_bench.metrics import BoundingBox as B
from rgbt_bench.tracking import EchoTracker, run_ope

GOLDEN = Path(__file__).parent / "golden" / "report.json"


def seq(name, gv, gt):
    n = len(gv)
    return SequenceRecord(name, "short-term", n, 1, gv, gt, [frozenset()] * n)


def offset_tree(root, offsets, name="off"):
    gv = [B.from_center(50, 50, 10, 10)] * len(offsets)
    gt = [B.from_center(50 + d, 50, 10, 10) for d in offsets]
    write_sequence(seq(name, gv, gt), root / name)
    return root


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Four seeded mixed sequences, tracked once with the full pipeline."""
    root = tmp_path_factory.mktemp("bench")
    data, res = root / "data", root / "res"
    assert main(["synth-gen", "--out", str(data), "--seed", "7", "--count", "4"]) == 0
    assert main(["track", "--dataset", str(data), "--out", str(res), "--no-timing"]) == 0
    return data, res


# ---------------------------------------------------------------------------
# config


def test_run_config_defaults_and_validation():
    cfg = RunConfig()
    assert cfg.tau == 20 and cfg.pipeline == "cif,dff,adf"
    for bad in (dict(tau=0), dict(theta_low=0.7), dict(workers=0), dict(pipeline="adf")):
        with pytest.raises(ConfigurationError):
            RunConfig(**bad)


def test_seed_falls_back_to_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RGBT_BENCH_SEED", "11")
    code, out, _ = run(capsys, "synth-gen", "--out", tmp_path, "--count", "1")
    assert code == EXIT_OK and "seed 11" in out
    monkeypatch.setenv("RGBT_BENCH_SEED", "eleven")
    assert run(capsys, "synth-gen", "--out", tmp_path, "--count", "1")[0] == EXIT_IO


# ---------------------------------------------------------------------------
# validate


def test_validate_clean_tree(tmp_path, capsys):
    offset_tree(tmp_path, [0, 1], "a")
    offset_tree(tmp_path, [0, 1], "b")
    code, out, _ = run(capsys, "validate", "--dataset", tmp_path)
    assert code == EXIT_OK and "2 sequences OK" in out


def test_validate_reports_corrupted_line(tmp_path, capsys):
    offset_tree(tmp_path, [0, 1, 2], "a")
    offset_tree(tmp_path, [0, 1], "b")
    gt = tmp_path / "a" / "gt_ir.txt"
    lines = gt.read_text().splitlines()
    lines[2] = "45,45,x,10"
    gt.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "validate", "--dataset", tmp_path)
    assert code == EXIT_FAIL
    assert "a:" in out and "gt_ir.txt:3:" in out
    assert "1 of 2 sequences invalid" in out


def test_validate_empty_and_missing_roots(tmp_path, capsys):
    code, out, _ = run(capsys, "validate", "--dataset", tmp_path)
    assert code == EXIT_FAIL and "no sequences found" in out
    assert run(capsys, "validate", "--dataset", tmp_path / "nope")[0] == EXIT_IO


def test_usage_errors_exit_2(capsys):
    assert run(capsys, "track")[0] == EXIT_IO
    assert run(capsys, "frobnicate")[0] == EXIT_IO


# ---------------------------------------------------------------------------
# align-stats


@pytest.mark.parametrize(
    "offsets, row",
    [([0, 0, 0], "0.00 0.00"), ([5, 5, 5, 5], "5.00 5.00"), ([2, 8, 20], "10.00 8.00")],
)
def test_align_stats_table(tmp_path, capsys, offsets, row):
    root = offset_tree(tmp_path / "fixture", offsets)
    code, out, _ = run(capsys, "align-stats", "--dataset", root)
    assert code == EXIT_OK
    header, line = out.splitlines()
    assert header.split() == ["dataset", "mean", "median"]
    assert line.split() == ["fixture", *row.split()]


def test_align_stats_without_paired_frames(tmp_path, capsys):
    write_sequence(seq("x", [B(0, 0, 5, 5), None], [None, B(0, 0, 5, 5)]), tmp_path / "x")
    assert run(capsys, "align-stats", "--dataset", tmp_path)[0] == EXIT_FAIL


# ---------------------------------------------------------------------------
# gradcheck


def test_gradcheck_default_seed_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == EXIT_OK
    assert "4 of 4 ops pass" in out


def test_gradcheck_detects_corrupted_backward(capsys):
    code, out, _ = run(capsys, "gradcheck", "--corrupt", "dff_fuse")
    assert code == EXIT_FAIL
    assert "dff_fuse[corrupted]" in out and "FAIL" in out


def test_gradcheck_coarse_epsilon_is_bounded(capsys):
    code, out, _ = run(capsys, "gradcheck", "--epsilon", "1e-3", "--tolerance", "1e-4")
    assert code == EXIT_OK


def test_gradcheck_rejects_unknown_op(capsys):
    assert run(capsys, "gradcheck", "--corrupt", "nope")[0] == EXIT_IO


# ---------------------------------------------------------------------------
# track / evaluate


def test_track_writes_one_result_per_sequence(bench):
    data, res = bench
    names = sorted(p.name for p in data.iterdir())
    assert sorted(p.stem for p in res.glob("*.txt")) == names
    assert not (res / "timing.json").exists()
    run_cfg = json.loads((res / "run.json").read_text())
    assert run_cfg["pipeline"] == "cif,dff,adf" and run_cfg["tau"] == 20


def test_track_timing_summary(bench, tmp_path, capsys):
    data, _ = bench
    code, out, _ = run(capsys, "track", "--dataset", data, "--out", tmp_path, "--filter", "mixed_000")
    assert code == EXIT_OK and "tracked 1 of 1" in out
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["fps"] > 0 and list(timing["sequences"]) == ["mixed_000"]


def test_track_skips_sequences_without_features(tmp_path, capsys):
    offset_tree(tmp_path / "data", [0, 1])
    code, _, _ = run(capsys, "track", "--dataset", tmp_path / "data", "--out", tmp_path / "res")
    assert code == EXIT_FAIL


def test_evaluate_echo_results_score_one(tmp_path, capsys, bench):
    data, _ = bench
    res = tmp_path / "echo"
    res.mkdir()
    for r in load_dataset(data):
        (res / f"{r.name}.txt").write_text(run_ope(EchoTracker(r), r).to_text())
    code, out, _ = run(capsys, "evaluate", "--dataset", data, "--results", res)
    assert code == EXIT_OK
    report = json.loads((res / "report.json").read_text())
    assert report["overall"]["msr"] == 1.0 and report["overall"]["mpr"] == 1.0
    assert "MSR 1.000  MPR 1.000" in out
    for f in ("success.csv", "precision.csv", "success.svg", "precision.svg"):
        assert (res / f).stat().st_size > 0


def test_evaluate_tau_override_is_monotone(bench, tmp_path, capsys):
    data, res = bench
    run(capsys, "evaluate", "--dataset", data, "--results", res, "--out", tmp_path / "t20")
    run(capsys, "evaluate", "--dataset", data, "--results", res, "--out", tmp_path / "t10", "--tau", "10")
    t20 = json.loads((tmp_path / "t20" / "report.json").read_text())
    t10 = json.loads((tmp_path / "t10" / "report.json").read_text())
    assert t10["tau"] == 10
    assert t10["overall"]["mpr"] <= t20["overall"]["mpr"]
    assert t10["overall"]["msr"] == t20["overall"]["msr"]


def test_evaluate_missing_result_is_scored_empty(bench, tmp_path, capsys, caplog):
    data, res = bench
    partial = tmp_path / "partial"
    partial.mkdir()
    keep = sorted(res.glob("mixed_*.txt"))[1:]
    for p in keep:
        (partial / p.name).write_text(p.read_text())
    code, _, _ = run(capsys, "evaluate", "--dataset", data, "--results", partial)
    assert code == EXIT_OK
    report = json.loads((partial / "report.json").read_text())
    assert report["missing"] == ["mixed_000"]
    assert report["sequences"]["mixed_000"]["msr"] == 0.0
    assert any("mixed_000" in r.getMessage() for r in caplog.records)


def test_evaluate_matches_golden_report(bench, tmp_path, capsys):
    data, res = bench
    assert run(capsys, "evaluate", "--dataset", data, "--results", res, "--out", tmp_path)[0] == EXIT_OK
    assert (tmp_path / "report.json").read_text() == GOLDEN.read_text()


def test_attr_report(bench, tmp_path, capsys):
    data, res = bench
    code, out, _ = run(capsys, "attr-report", "--dataset", data, "--results", res, "--out", tmp_path)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "attributes.json").read_text())
    assert doc["order"] == list(ATTRIBUTES)
    assert set(doc["scores"]) <= set(doc["order"])
    assert out.splitlines()


# ---------------------------------------------------------------------------
# determinism


def _tree_bytes(root: Path) -> dict:
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_cli_outputs_are_byte_identical(tmp_path, capsys):
    trees = []
    base = tmp_path / "run"
    for _ in range(2):
        shutil.rmtree(base, ignore_errors=True)
        assert main(["synth-gen", "--out", str(base / "data"), "--preset", "all", "--count", "2", "--seed", "3"]) == 0
        for lt in ([], ["--lt"]):
            out = base / ("res_lt" if lt else "res")
            assert main(["track", "--dataset", str(base / "data"), "--out", str(out), "--no-timing", *lt]) == 0
            assert main(["evaluate", "--dataset", str(base / "data"), "--results", str(out)]) == 0
        trees.append(_tree_bytes(base))
    capsys.readouterr()
    assert trees[0].keys() == trees[1].keys()
    for k in trees[0]:
        assert trees[0][k] == trees[1][k], k


def test_parallel_workers_match_serial(bench, tmp_path):
    data, res = bench
    assert main(["track", "--dataset", str(data), "--out", str(tmp_path), "--no-timing", "--workers", "2"]) == 0
    for p in res.glob("*.txt"):
        assert (tmp_path / p.name).read_bytes() == p.read_bytes()


def test_visible_beats_thermal_on_daylight_fixtures(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth-gen", "--out", str(data), "--preset", "daylight", "--count", "4"]) == 0
    msr = {}
    for p in ("rgb", "ir"):
        res = tmp_path / p
        assert main(["track", "--dataset", str(data), "--out", str(res), "--pipeline", p, "--no-timing"]) == 0
        assert main(["evaluate", "--dataset", str(data), "--results", str(res)]) == 0
        msr[p] = json.loads((res / "report.json").read_text())["overall"]["msr"]
    capsys.readouterr()
    assert msr["rgb"] >= msr["ir"]


def test_lt_flag_helps_on_reentry_fixtures(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth-gen", "--out", str(data), "--preset", "reentry", "--count", "4"]) == 0
    msr = {}
    for flag in ([], ["--lt"]):
        res = tmp_path / ("lt" if flag else "plain")
        assert main(["track", "--dataset", str(data), "--out", str(res), "--no-timing", *flag]) == 0
        assert main(["evaluate", "--dataset", str(data), "--results", str(res)]) == 0
        msr[bool(flag)] = json.loads((res / "report.json").read_text())["subsets"]["long-term"]["msr"]
    capsys.readouterr()
    assert msr[True] > msr[False]
