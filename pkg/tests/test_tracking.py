import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgbt_bench.dataset import SequenceRecord
from rgbt_bench.errors import ConfigurationError, DimensionError, ProtocolError
from rgbt_bench.fusion import DffParams, Pipeline
from rgbt_bench.metrics import BoundingBox as B
from rgbt_bench.metrics import mpr, msr
from rgbt_bench.synthetic import SyntheticSpec, Window, generate_synthetic, gt_boxes, signature
from rgbt_bench.tracking import (
    GLOBAL,
    LOCAL,
    EchoTracker,
    EmptyTracker,
    FusionModel,
    FusionTracker,
    OpeResult,
    StaticTracker,
    fused_response_step,
    global_search,
    lt_switch,
    ncc_response,
    reference_model,
    run_ope,
)

C, H, W, STRIDE = 4, 30, 40, 8


def blob(r, c, sig="rgb", amp=1.0, sigma=1.2):
    ys, xs = np.indices((H, W))
    g = np.exp(-((ys - r) ** 2 + (xs - c) ** 2) / (2 * sigma**2))
    return amp * signature(sig, C)[:, None, None] * g[None]


def cell_box(r, c, size=40):
    return B.from_center((c + 0.5) * STRIDE, (r + 0.5) * STRIDE, size, size)


def started(pipeline="cif,dff,adf", frame0=None, r=10, c=12, **kw):
    t = FusionTracker(Pipeline.parse(pipeline), **kw)
    frame0 = frame0 or (blob(r, c), blob(r, c, "ir"))
    t.initialize(frame0, cell_box(r, c))
    return t


# ---------------------------------------------------------------------------
# correlation and single steps


def test_ncc_peaks_at_planted_template():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((C, H, W))
    T = X[:, 5:10, 20:25].copy()
    R = ncc_response(X, T)
    assert np.unravel_index(R.argmax(), R.shape) == (7, 22)
    assert R[7, 22] == pytest.approx(1.0)
    assert np.all(np.abs(R) <= 1 + 1e-12)
    with pytest.raises(DimensionError):
        ncc_response(X, T[:, :4])
    with pytest.raises(DimensionError):
        ncc_response(X[:2], T)


@pytest.mark.parametrize("pipeline", ["cif,dff,adf", "cif,dff", "cif", "dff", "rgb", "ir"])
def test_planted_target_is_found_within_one_cell(pipeline):
    t = started(pipeline)
    fv, ft = blob(13, 15), blob(13, 15, "ir")
    _, box, conf = fused_response_step(t.state, fv, ft, t.pipeline, t.model)
    gx, gy = cell_box(13, 15).center
    bx, by = box.center
    assert abs(bx - gx) <= STRIDE and abs(by - gy) <= STRIDE
    assert 0.0 <= conf <= 1.0
    assert (box.w, box.h) == (40, 40)


def test_identical_modalities_give_one_peak_for_every_branch():
    rng = np.random.default_rng(1)
    f0 = blob(10, 12) + blob(10, 12, "ir")
    t = started(frame0=(f0, f0))
    x = np.roll(f0, (2, 3), axis=(1, 2)) + 0.05 * rng.standard_normal(f0.shape)
    sym = reference_model(C)
    sym = FusionModel(DffParams(np.eye(C), np.zeros(C), sym.dff.W_v, np.zeros(C), sym.dff.W_v, np.zeros(C)), sym.mam_d, sym.mam_c, sym.adf)
    t.model = sym
    peaks = []
    for p in ["dff", "cif", "cif,dff,adf", "cif,dff"]:
        R, box, _ = fused_response_step(t.state, x, x, Pipeline.parse(p), sym)
        peaks.append(np.unravel_index(R.argmax(), R.shape))
    assert len(set(peaks)) == 1
    # with R_d = R_c the ADF box is the single-branch box
    _, b_adf, _ = fused_response_step(t.state, x, x, Pipeline.parse("cif,dff,adf"), sym)
    _, b_d, _ = fused_response_step(t.state, x, x, Pipeline.parse("dff"), sym)
    assert b_adf == b_d


def test_thermal_dropout_with_saturated_dff_follows_visible():
    rng = np.random.default_rng(2)
    f0v = blob(10, 12) + 0.05 * rng.standard_normal((C, H, W))
    zero = np.zeros((C, H, W))
    m = reference_model(C)
    sat = DffParams(np.eye(C), np.zeros(C), np.zeros((C, C)), np.full(C, 50.0), np.zeros((C, C)), np.zeros(C))
    model = FusionModel(sat, m.mam_d, m.mam_c, m.adf)
    full = started(frame0=(f0v, zero), model=model)
    vis = started("rgb", frame0=(f0v, zero), model=model)
    x = blob(12, 9) + blob(5, 30, amp=0.6) + 0.05 * rng.standard_normal((C, H, W))
    R_F, _, _ = fused_response_step(full.state, x, zero, full.pipeline, model, region="global")
    R_v, _, _ = fused_response_step(vis.state, x, zero, vis.pipeline, model, region="global")
    assert np.unravel_index(R_F.argmax(), R_F.shape) == np.unravel_index(R_v.argmax(), R_v.shape)


def test_feature_shape_mismatch():
    t = started()
    with pytest.raises(DimensionError):
        fused_response_step(t.state, np.zeros((C, H, W)), np.zeros((C, H, W + 1)), t.pipeline, t.model)
    with pytest.raises(DimensionError):
        fused_response_step(t.state, np.zeros((C + 1, H, W)), np.zeros((C + 1, H, W)), t.pipeline, t.model)


def test_local_search_ignores_far_peaks_global_search_finds_them():
    t = started(r=10, c=8)
    far = (blob(20, 34), blob(20, 34, "ir"))
    _, local_box, local_conf = fused_response_step(t.state, *far, t.pipeline, t.model)
    box, conf = global_search(t.state, *far, t.pipeline, t.model)
    gx, gy = cell_box(20, 34).center
    assert abs(box.center[0] - gx) <= STRIDE and abs(box.center[1] - gy) <= STRIDE
    assert conf > local_conf


def test_global_search_on_single_peak_matches_local():
    t = started()
    frame = (blob(11, 13), blob(11, 13, "ir"))
    box_g, conf_g = global_search(t.state, *frame, t.pipeline, t.model)
    _, box_l, conf_l = fused_response_step(t.state, *frame, t.pipeline, t.model)
    assert box_g == box_l and conf_g == conf_l


def test_absent_target_gives_low_global_confidence():
    rng = np.random.default_rng(3)
    t = started(long_term=True)
    t.state.mode = GLOBAL
    noise = [(0.1 * rng.standard_normal((C, H, W)), 0.1 * rng.standard_normal((C, H, W))) for _ in range(5)]
    for i, f in enumerate(noise, 1):
        _, conf = t.update(i, f)
        assert conf < t.theta_high
        assert t.state.mode == GLOBAL


# ---------------------------------------------------------------------------
# switcher


def run_switch(trace, mode=LOCAL, lo=0.3, hi=0.6):
    modes = []
    for c in trace:
        mode = lt_switch(mode, c, lo, hi)
        modes.append(mode)
    return modes


def test_switch_traces():
    assert set(run_switch([0.9, 0.7, 0.61, 1.0])) == {LOCAL}
    modes = run_switch([0.9, 0.2, 0.1, 0.5, 0.7, 0.8, 0.4])
    episodes = sum(1 for a, b in zip([LOCAL] + modes, modes) if a == LOCAL and b == GLOBAL)
    assert episodes == 1 and modes[-1] == LOCAL
    assert modes == [LOCAL, GLOBAL, GLOBAL, GLOBAL, LOCAL, LOCAL, LOCAL]


@given(st.lists(st.floats(0.3, 0.5999), max_size=30), st.sampled_from([LOCAL, GLOBAL]))
def test_dead_band_never_switches(trace, mode):
    assert all(m == mode for m in run_switch(trace, mode))


def test_switch_threshold_validation():
    with pytest.raises(ConfigurationError):
        lt_switch(LOCAL, 0.5, 0.6, 0.3)
    with pytest.raises(ConfigurationError):
        FusionTracker(theta_low=0.5, theta_high=0.5)


# ---------------------------------------------------------------------------
# one-pass evaluation


def moving_record(n=30, interval=10):
    spec = SyntheticSpec(name="mover", seed=0, frame_count=n, interval=interval,
                         waypoints=((0, 60.0, 60.0), (n - 1, 260.0, 180.0)))
    return generate_synthetic(spec)


def test_echo_and_empty_trackers():
    r = moving_record().record
    echo = run_ope(EchoTracker(r), r).at(r.annotated_frames)
    assert msr(echo, r.gt_rgb, r.gt_ir)[0] == 1.0
    assert mpr(echo, r.gt_rgb, r.gt_ir) == 1.0
    empty = run_ope(EmptyTracker(), r).at(r.annotated_frames)
    # only the initialization frame scores
    n = len(r.annotated_frames)
    assert msr(empty, r.gt_rgb, r.gt_ir)[0] == pytest.approx(1 / n)
    assert mpr(empty, r.gt_rgb, r.gt_ir) == pytest.approx(1 / n)


def test_static_tracker_is_worse_than_echo_on_moving_target():
    r = moving_record().record
    score = lambda t: msr(run_ope(t, r).at(r.annotated_frames), r.gt_rgb, r.gt_ir)[0]
    assert score(StaticTracker()) < score(EchoTracker(r))


class Probe:
    def __init__(self, log):
        self.log = log

    def initialize(self, frame, box):
        self.log.append(("init", frame))

    def update(self, index, frame):
        assert frame == index
        self.log.append(("update", index))
        return B.EMPTY, 0.0


def test_driver_is_causal():
    log = []

    def frames(i):
        log.append(("read", i))
        return i

    r = moving_record(n=25).record
    res = run_ope(Probe(log), r, frames)
    assert len(res) == 25
    reads = [i for kind, i in log if kind == "read"]
    assert reads == list(range(25))
    for i in range(1, 24):
        # frame i + 1 is read only after update(i) returned
        assert log.index(("update", i)) < log.index(("read", i + 1))


class Exploding(StaticTracker):
    def update(self, index, frame):
        if index == 7:
            raise RuntimeError("boom")
        return super().update(index, frame)


def test_failure_policy_pads_with_empty_boxes():
    r = moving_record().record
    res = run_ope(Exploding(), r)
    assert len(res) == r.frame_count
    assert res.failed and "boom" in res.failed
    assert all(b.is_empty for b in res.boxes[7:])
    assert not res.boxes[6].is_empty


def test_missing_initial_annotation():
    r = SequenceRecord("x", "short-term", 11, 10, [None, B(0, 0, 5, 5)], [None, B(0, 0, 5, 5)], [frozenset()] * 2)
    with pytest.raises(ProtocolError):
        run_ope(StaticTracker(), r)


def test_fps_uses_total_time():
    ticks = itertools.count(0.0, 0.004)  # each clock call advances 4 ms
    r = moving_record(n=10, interval=1).record
    res = run_ope(StaticTracker(), r, clock=lambda: next(ticks))
    assert res.millis == pytest.approx([4.0] * 10)
    assert res.fps == pytest.approx(250.0)


box_vals = st.floats(0, 1e4, allow_nan=False)


@given(st.lists(st.tuples(st.builds(B, box_vals, box_vals, box_vals, box_vals), st.floats(0, 1), st.floats(0, 1e3)), min_size=1, max_size=20),
       st.one_of(st.none(), st.text("abc :", min_size=1, max_size=10)))
def test_result_round_trip(rows, failed):
    boxes, confs, millis = map(list, zip(*rows))
    failed = failed.strip() or None if failed else None
    res = OpeResult(boxes, confs, millis, failed)
    assert OpeResult.from_text(res.to_text()) == res


def test_tracker_confidences_stay_in_unit_interval():
    seq = moving_record(n=30)
    t = FusionTracker(long_term=True)
    res = run_ope(t, seq.record, seq.features)
    assert all(0 <= c <= 1 for c in res.confidences)
    assert len(t.modes) == 30


def test_reentry_recovered_by_switched_tracker():
    spec = SyntheticSpec(
        name="reentry", seed=4, frame_count=90,
        waypoints=((0, 60.0, 60.0), (30, 64.0, 64.0), (60, 260.0, 180.0), (89, 262.0, 178.0)),
        windows=(Window("absent", 30, 60),),
    )
    seq = generate_synthetic(spec)
    lt = FusionTracker(long_term=True)
    res = run_ope(lt, seq.record, seq.features)
    assert GLOBAL in lt.modes
    assert lt.modes[-1] == LOCAL
    gx, gy = gt_boxes(spec, 89)[0].center
    bx, by = res.boxes[89].center
    assert abs(bx - gx) <= STRIDE and abs(by - gy) <= STRIDE
