"""Acceptance suite: one test per headline criterion.

Each test asserts at the stated tolerance and time budget; the terminal
summary prints a PASS/FAIL line per criterion (see conftest.py).
"""

import json
import shutil
import time

import numpy as np

import oracles
from rgbt_bench.attributes import FM_OFFSET_PX, LR_AREA, SV_RANGE, derive_fm, derive_lr, derive_sv, derive_tvs
from rgbt_bench.benchmarks import DEFAULT_SEED, mixed_suite, reentry_suite
from rgbt_bench.cli import RunConfig, main
from rgbt_bench.dataset import (
    SequenceRecord,
    decode_rle,
    encode_rle,
    format_box,
    format_mask,
    load_dataset,
    parse_box,
    parse_mask,
    parse_sequence,
    write_sequence,
)
from rgbt_bench.fusion import (
    AdfParams,
    DffParams,
    Pipeline,
    adf_fuse,
    cif_divergence_loss,
    dff_fuse,
)
from rgbt_bench.metrics import DEFAULT_TAU, BoundingBox, FrameMask, boundary_f, f_score, iou, jaccard, mask_iou, mpr, msr
from rgbt_bench.tensor import format_tensor, get_op, grad_check, parse_tensor, registered_ops
from rgbt_bench.tracking import EchoTracker, FusionTracker, OpeResult, run_ope

B = BoundingBox


def _timed(budget_s):
    start = time.perf_counter()
    return lambda: time.perf_counter() - start < budget_s


def _suite_msr(suite, make_tracker):
    scores = []
    for seq in suite:
        r = seq.record
        res = run_ope(make_tracker(), r, seq.features)
        scores.append(msr(res.at(r.annotated_frames), r.gt_rgb, r.gt_ir)[0])
    return float(np.mean(scores))


# ---------------------------------------------------------------------------


def test_criterion_1_metric_oracles():
    within = _timed(30)
    rng = np.random.default_rng(1)
    n = 10_000
    # real-valued boxes on a quarter-pixel lattice: scaled by 4 they are integer boxes
    q = rng.integers(0, 80, (n, 8))
    q[:, [2, 3, 6, 7]] += 1
    for row in q:
        a, b = row[:4] / 4.0, row[4:] / 4.0
        assert abs(iou(B(*a), B(*b)) - oracles.grid_iou(row[:4], row[4:])) < 1e-9
    # mask instances grouped into short sequences for J and F
    for _ in range(n // 5):
        shape = (int(rng.integers(1, 17)), int(rng.integers(1, 17)))
        Ms = [oracles.random_mask(rng, shape=shape) for _ in range(5)]
        Gs = [oracles.random_mask(rng, shape=shape) for _ in range(5)]
        fm = [FrameMask.from_array(m) for m in Ms]
        fg = [FrameMask.from_array(g) for g in Gs]
        j_ref = [oracles.pixel_iou(m, g) for m, g in zip(Ms, Gs)]
        f_ref = [oracles.boundary_f(m, g) for m, g in zip(Ms, Gs)]
        assert [mask_iou(a, b) for a, b in zip(fm, fg)] == j_ref
        assert [boundary_f(a, b) for a, b in zip(fm, fg)] == f_ref
        assert jaccard(fm, fg) == float(np.mean(j_ref))
        assert f_score(fm, fg) == float(np.mean(f_ref))
    assert within(), "over the 30 s budget"


def test_criterion_2_protocol_constants():
    assert DEFAULT_TAU == 20 and RunConfig().tau == 20
    assert SV_RANGE == (0.5, 2.0) and LR_AREA == 400 and FM_OFFSET_PX == 20
    base = B(0, 0, 10, 10)
    # scale ratio exactly 2 or 0.5 stays inside the closed range
    assert derive_sv([base, B(0, 0, 20, 10), B(0, 0, 5, 10), B(0, 0, 20.2, 10), B(0, 0, 4.9, 10)]) == [
        False, False, False, True, True,
    ]
    assert derive_lr([B(0, 0, 20, 20), B(0, 0, 20, 19.99)]) == [False, True]
    c = lambda x: B.from_center(x, 0, 5, 5)
    assert derive_fm([c(0), c(20), c(40.01)]) == [False, False, True]
    # touching boxes share no area
    assert derive_tvs([base, base], [B(10, 0, 10, 10), B(9.5, 0, 10, 10)]) == [True, False]
    gt = [B.from_center(100, 100, 20, 20)] * 2
    assert mpr([B.from_center(120, 100, 20, 20)] * 2, gt, gt) == 1.0
    assert mpr([B.from_center(121, 100, 20, 20)] * 2, gt, gt) == 0.0


def test_criterion_3_perfect_and_degenerate_trackers(tmp_path):
    data, echo, empty = tmp_path / "data", tmp_path / "echo", tmp_path / "empty"
    assert main(["synth-gen", "--out", str(data), "--preset", "all", "--count", "3"]) == 0
    echo.mkdir()
    empty.mkdir()
    for r in load_dataset(data):
        (echo / f"{r.name}.txt").write_text(run_ope(EchoTracker(r), r).to_text())
        blank = OpeResult([B.EMPTY] * r.frame_count, [0.0] * r.frame_count, [0.0] * r.frame_count)
        (empty / f"{r.name}.txt").write_text(blank.to_text())
    for res, want in ((echo, 1.0), (empty, 0.0)):
        assert main(["evaluate", "--dataset", str(data), "--results", str(res)]) == 0
        o = json.loads((res / "report.json").read_text())["overall"]
        assert (o["msr"], o["mpr"]) == (want, want)


def test_criterion_4_fusion_invariants():
    within = _timed(10)
    rng = np.random.default_rng(4)
    for _ in range(1000):
        C, H, W = rng.integers(1, 6, 3)
        D_v, D_t = rng.standard_normal((2, C, H, W)) * rng.uniform(0.1, 10)
        p = DffParams.init(int(C), int(rng.integers(1, 5)), seed=int(rng.integers(2**31)))
        p = DffParams(*(v * rng.uniform(0.5, 20) for v in p.tensors().values()))
        D_a, w_v, w_t = dff_fuse(D_v, D_t, p)
        assert np.all(np.abs(w_v + w_t - 1) <= 1e-12)
        lo, hi = np.minimum(D_v, D_t), np.maximum(D_v, D_t)
        tol = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
        assert np.all(D_a >= lo - tol) and np.all(D_a <= hi + tol)

        R_d, R_c, M_d, M_c = rng.standard_normal((4, H, W)) * rng.uniform(0.1, 10)
        ap = AdfParams.init(seed=int(rng.integers(2**31)))
        ap = AdfParams(*(v * rng.uniform(0.5, 20) for v in ap.tensors().values()))
        R_F, E_d, E_c = adf_fuse(R_d, R_c, M_d, M_c, ap)
        assert np.all(np.abs(E_d + E_c - 1) <= 1e-12)
        lo, hi = np.minimum(R_d, R_c), np.maximum(R_d, R_c)
        tol = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
        assert np.all(R_F >= lo - tol) and np.all(R_F <= hi + tol)

        blocks_v = [rng.standard_normal((int(C), 2, 2)) for _ in range(2)]
        blocks_t = [rng.standard_normal((int(C), 2, 2)) for _ in range(2)]
        assert cif_divergence_loss(blocks_v, blocks_t) > 0
        assert cif_divergence_loss(blocks_v, blocks_v) == 0.0
        # equal distributions from shifted logits
        shifted = [b + rng.uniform(-5, 5) for b in blocks_v]
        assert abs(cif_divergence_loss(blocks_v, shifted)) < 1e-12
    assert within(), "over the 10 s budget"


def test_criterion_5_gradient_checks():
    within = _timed(60)
    rng = np.random.default_rng(5)
    ops = registered_ops(fusion_only=True)
    assert set(ops) == {"adf_fuse", "cif_divergence_loss", "dff_fuse", "mam_confidence"}
    worst = {}
    for name in ops:
        for seed in range(10):
            inputs = get_op(name).sample(rng)
            assert max(max(np.shape(v), default=1) for v in inputs.values()) <= 4
            report = grad_check(name, inputs, epsilon=1e-5, tolerance=1e-6, seed=seed)
            worst[name] = max(worst.get(name, 0.0), report.max_error)
    assert all(e < 1e-6 for e in worst.values()), worst
    assert within(), "over the 60 s budget"


def test_criterion_6_ablation_ordering():
    within = _timed(300)
    suite = mixed_suite(DEFAULT_SEED)
    assert len(suite) >= 20
    scores = {
        p: _suite_msr(suite, lambda: FusionTracker(Pipeline.parse(p)))
        for p in ("cif,dff,adf", "cif,dff", "rgb", "ir")
    }
    print("ablation MSR", {k: round(v, 4) for k, v in scores.items()})
    assert scores["cif,dff,adf"] > scores["cif,dff"]
    assert scores["cif,dff"] > min(scores["rgb"], scores["ir"])
    assert within(), "over the 5 min budget"


def test_criterion_7_long_term_switcher():
    suite = reentry_suite(DEFAULT_SEED)
    for seq in suite:
        r = seq.record
        assert r.subset == "long-term" and r.longest_absence > 20
    switched = _suite_msr(suite, lambda: FusionTracker(long_term=True))
    plain = _suite_msr(suite, lambda: FusionTracker(long_term=False))
    print(f"re-entry MSR switched {switched:.4f} plain {plain:.4f}")
    assert switched - plain > 0


def test_criterion_8_alignment_statistics(tmp_path, capsys):
    gv = [B.from_center(50, 50, 10, 10)] * 3
    gt = [B.from_center(50 + d, 50, 10, 10) for d in (2, 8, 20)]
    write_sequence(SequenceRecord("fixture", "short-term", 3, 1, gv, gt, [frozenset()] * 3), tmp_path / "fixture")
    assert main(["align-stats", "--dataset", str(tmp_path), "--label", "fixture"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header.split() == ["dataset", "mean", "median"]
    assert row.split() == ["fixture", "10.00", "8.00"]


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_round_trips_and_determinism(tmp_path):
    within = _timed(30)
    rng = np.random.default_rng(9)
    for _ in range(2000):
        b = None if rng.random() < 0.1 else B(*rng.uniform(-1e3, 1e3, 2), *rng.uniform(0, 500, 2))
        assert parse_box(format_box(b)) == b
        bits = oracles.random_mask(rng, max_side=12)
        m = FrameMask.from_array(bits)
        assert parse_mask(format_mask(m)) == m
        assert decode_rle(m.width, m.height, *encode_rle(m)) == m
        x = rng.standard_normal(tuple(rng.integers(1, 4, rng.integers(1, 4))))
        assert np.array_equal(parse_tensor(format_tensor(x)), x)
    res = OpeResult([B(1.5, 2, 3, 4), B.EMPTY], [1.0, 0.25], [0.5, 0.0], "frame 1: boom")
    assert OpeResult.from_text(res.to_text()) == res

    run = tmp_path / "run"
    trees = []
    for _ in range(2):
        shutil.rmtree(run, ignore_errors=True)
        data, out = run / "data", run / "res"
        assert main(["synth-gen", "--out", str(data), "--preset", "all", "--count", "2", "--seed", "5"]) == 0
        for r in load_dataset(data):
            assert parse_sequence(data / r.name) == r
        assert main(["track", "--dataset", str(data), "--out", str(out), "--lt", "--no-timing"]) == 0
        assert main(["evaluate", "--dataset", str(data), "--results", str(out)]) == 0
        assert main(["attr-report", "--dataset", str(data), "--results", str(out), "--out", str(run / "attr")]) == 0
        trees.append(_tree(run))
    assert trees[0] == trees[1]
    assert within(), "over the 30 s budget"
