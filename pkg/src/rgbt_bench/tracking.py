"""One-pass evaluation driver and a toy fused-response tracker.

The tracker correlates a fixed frame-0 template with each branch's features
(normalized cross-correlation, per-channel zero mean), combines the branch
responses as the pipeline prescribes and places a fixed-size box at the
response peak. With ``long_term=True`` a local/global switcher runs an
exhaustive search over the whole feature map while the target is judged lost.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import SequenceRecord, fmt_num
from .errors import ConfigurationError, DimensionError, ParseError, ProtocolError
from .fusion import (
    AdfParams,
    DffParams,
    MamParams,
    Pipeline,
    adf_fuse,
    dff_fuse,
    mam_confidence,
)
from .metrics import BoundingBox
from .synthetic import signature

log = logging.getLogger(__name__)

LOCAL, GLOBAL = "LOCAL", "GLOBAL"
THETA_LOW, THETA_HIGH = 0.3, 0.6
SEARCH_SCALE = 4  # local window extent in template extents
FLOOR = -1.0  # response value outside the search region

Frame = tuple  # (visible features, thermal features)


# ---------------------------------------------------------------------------
# correlation


def ncc_response(features: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of ``template`` centred on every cell.

    Both patch and template are made zero-mean per channel; features are
    zero-padded at the border. Flat patches score 0.
    """
    C, th, tw = template.shape
    if features.shape[0] != C:
        raise DimensionError(f"template has {C} channels, features {features.shape[0]}")
    if th % 2 == 0 or tw % 2 == 0:
        raise DimensionError(f"template extents must be odd, got {th}x{tw}")
    padded = np.pad(features, ((0, 0), (th // 2, th // 2), (tw // 2, tw // 2)))
    win = sliding_window_view(padded, (th, tw), axis=(1, 2))  # C x H x W x th x tw
    t = template - template.mean(axis=(1, 2), keepdims=True)
    tnorm = np.sqrt(np.sum(t * t))
    num = np.einsum("chwij,cij->hw", win, t)
    n = th * tw
    s1 = win.sum(axis=(3, 4))
    s2 = np.einsum("chwij,chwij->chw", win, win)
    var = np.maximum((s2 - s1 * s1 / n).sum(axis=0), 0.0)
    den = np.sqrt(var) * tnorm
    return np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)


def crop(features: np.ndarray, center: tuple[int, int], size: tuple[int, int]) -> np.ndarray:
    """Zero-padded ``size`` crop of a ``C x H x W`` map around a cell."""
    th, tw = size
    r, c = center
    padded = np.pad(features, ((0, 0), (th, th), (tw, tw)))
    return padded[:, r + th - th // 2 : r + th + th // 2 + 1, c + tw - tw // 2 : c + tw + tw // 2 + 1].copy()


# ---------------------------------------------------------------------------
# model and state


@dataclass(frozen=True)
class FusionModel:
    dff: DffParams
    mam_d: MamParams
    mam_c: MamParams
    adf: AdfParams


def reference_model(channels: int = 4, gate: float = 4.0, sharpness: float = 2.0) -> FusionModel:
    """Hand-set parameters standing in for trained ones.

    * DFF: the global descriptor is the pooled sum of both modalities; each
      modality's logit is minus ``gate`` times the pooled level on that
      modality's signature channels, so a modality with a raised floor (glare,
      thermal crossover) loses weight.
    * MAM: ``phi`` is constant, ``psi`` is minus the channel mean, so the
      confidence is minus the mean energy of the channel-summed feature map:
      a branch flooded by noise or offset scores low everywhere.
    * ADF: the encoder splits ``M_d - M_c`` into its positive and negative
      parts and the decoder scales them, giving
      ``E_d = sigmoid(sharpness * (M_d - M_c))``.
    """
    sv, st = signature("rgb", channels), signature("ir", channels)
    W_v = -gate * np.tile(sv / (sv @ sv), (channels, 1))
    W_t = -gate * np.tile(st / (st @ st), (channels, 1))
    dff = DffParams(np.eye(channels), np.zeros(channels), W_v, np.zeros(channels), W_t, np.zeros(channels))

    def mam(c):
        return MamParams(np.zeros((1, c)), np.ones(1), -np.ones((1, c)) / c, np.zeros(1))

    W_enc = np.array([[1.0, -1.0], [-1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    W_dec = np.array([[sharpness, 0, 0, 0], [0, sharpness, 0, 0]], dtype=np.float64)
    adf = AdfParams(W_enc, np.zeros(4), W_dec, np.zeros(2))
    return FusionModel(dff, mam(channels), mam(2 * channels), adf)


@dataclass
class TrackerState:
    templates: dict  # branch or modality ("v"/"t" for DFF) -> C x th x tw template
    box: BoundingBox
    center: tuple  # feature cell (row, col) of the current estimate
    template_size: tuple
    stride: int
    mam_ref: dict = field(default_factory=dict)  # branch -> |confidence| at frame 0
    confidences: deque = field(default_factory=lambda: deque(maxlen=16))
    mode: str = LOCAL


def lt_switch(state_or_mode, confidence: float, theta_low: float = THETA_LOW, theta_high: float = THETA_HIGH) -> str:
    """Hysteresis switch between local tracking and global re-detection."""
    if not theta_low < theta_high:
        raise ConfigurationError(f"need theta_low < theta_high, got {theta_low} and {theta_high}")
    mode = getattr(state_or_mode, "mode", state_or_mode)
    if mode == LOCAL and confidence < theta_low:
        return GLOBAL
    if mode == GLOBAL and confidence >= theta_high:
        return LOCAL
    return mode


def normalize_confidence(M: np.ndarray, ref: float) -> np.ndarray:
    """Minus the log ratio of the aggregation magnitude to its frame-0 level."""
    return -np.log(np.maximum(np.abs(M), 1e-12) / ref)


def _branch_features(feat_v, feat_t, pipeline: Pipeline, model: FusionModel) -> tuple[dict, tuple | None]:
    """Per-branch search features and the DFF channel weights (if DFF runs)."""
    out = {}
    combiner = pipeline.combiner
    if combiner in ("rgb", "ir"):
        out[combiner] = feat_v if combiner == "rgb" else feat_t
        return out, None
    weights = None
    if pipeline.dff:
        D_a, w_v, w_t = dff_fuse(feat_v, feat_t, model.dff)
        out["d"], weights = D_a, (w_v, w_t)
    if pipeline.cif:
        out["c"] = np.concatenate([feat_v, feat_t])
    return out, weights


def _branch_templates(state: "TrackerState", weights) -> dict:
    """Templates per branch; the DFF template is fused with the current weights."""
    t = dict(state.templates)
    if weights is not None:
        w_v, w_t = weights
        t["d"] = w_v[:, None, None] * t.pop("v") + w_t[:, None, None] * t.pop("t")
    return t


def _search_mask(shape, state: TrackerState, region: str) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if region == "global":
        mask[:] = True
        return mask
    th, tw = state.template_size
    hr, hc = SEARCH_SCALE * th // 2, SEARCH_SCALE * tw // 2
    r, c = state.center
    mask[max(r - hr, 0) : r + hr + 1, max(c - hc, 0) : c + hc + 1] = True
    return mask


def fused_response_step(
    state: TrackerState,
    feat_v: np.ndarray,
    feat_t: np.ndarray,
    pipeline: Pipeline,
    model: FusionModel | None = None,
    region: str = "local",
):
    """Return ``(R_F, box, confidence)`` for one frame without touching ``state``."""
    model = model or reference_model(feat_v.shape[0])
    if feat_v.shape != feat_t.shape:
        raise DimensionError(f"modality features differ: {feat_v.shape} vs {feat_t.shape}")
    feats, weights = _branch_features(feat_v, feat_t, pipeline, model)
    templates = _branch_templates(state, weights)
    mask = _search_mask(feat_v.shape[1:], state, region)
    responses = {}
    for name, X in feats.items():
        R = ncc_response(X, templates[name])
        responses[name] = np.where(mask, R, FLOOR)
    combiner = pipeline.combiner
    if combiner in ("rgb", "ir"):
        R_F = responses[combiner]
    elif combiner == "discriminative":
        R_F = responses["d"]
    elif combiner == "complementary":
        R_F = responses["c"]
    elif combiner == "average":
        R_F = 0.5 * (responses["d"] + responses["c"])
    else:
        M_d = normalize_confidence(mam_confidence(feats["d"], model.mam_d), state.mam_ref["d"])
        M_c = normalize_confidence(mam_confidence(feats["c"], model.mam_c), state.mam_ref["c"])
        R_F = adf_fuse(responses["d"], responses["c"], M_d, M_c, model.adf)[0]
    flat = int(np.argmax(np.where(mask, R_F, -np.inf)))
    r, c = np.unravel_index(flat, R_F.shape)
    cx, cy = (c + 0.5) * state.stride, (r + 0.5) * state.stride
    box = BoundingBox.from_center(cx, cy, state.box.w, state.box.h)
    confidence = float(np.clip(R_F[r, c], 0.0, 1.0))
    return R_F, box, confidence


def global_search(state: TrackerState, feat_v, feat_t, pipeline: Pipeline, model: FusionModel | None = None):
    """Exhaustive correlation over the full feature map; returns ``(box, confidence)``."""
    _, box, conf = fused_response_step(state, feat_v, feat_t, pipeline, model, region="global")
    return box, conf


# ---------------------------------------------------------------------------
# trackers


class Tracker(Protocol):
    def initialize(self, frame: Frame, box: BoundingBox) -> None: ...

    def update(self, index: int, frame: Frame) -> tuple[BoundingBox, float]: ...


class FusionTracker:
    def __init__(
        self,
        pipeline: Pipeline = Pipeline(),
        model: FusionModel | None = None,
        stride: int = 8,
        long_term: bool = False,
        theta_low: float = THETA_LOW,
        theta_high: float = THETA_HIGH,
    ):
        if not theta_low < theta_high:
            raise ConfigurationError(f"need theta_low < theta_high, got {theta_low} and {theta_high}")
        self.pipeline = pipeline
        self.model = model
        self.stride = stride
        self.long_term = long_term
        self.theta_low = theta_low
        self.theta_high = theta_high
        self.state: TrackerState | None = None
        self.modes: list[str] = []

    def initialize(self, frame: Frame, box: BoundingBox) -> None:
        feat_v, feat_t = frame
        if self.model is None:
            self.model = reference_model(feat_v.shape[0])
        th = int(box.h / self.stride / 2) * 2 + 1
        tw = int(box.w / self.stride / 2) * 2 + 1
        cx, cy = box.center
        H, W = feat_v.shape[1:]
        center = (
            int(np.clip(round(cy / self.stride - 0.5), 0, H - 1)),
            int(np.clip(round(cx / self.stride - 0.5), 0, W - 1)),
        )
        feats, _ = _branch_features(feat_v, feat_t, self.pipeline, self.model)
        templates = {k: crop(X, center, (th, tw)) for k, X in feats.items() if k != "d"}
        if "d" in feats:
            # modality crops; fused per frame with that frame's DFF weights
            templates["v"] = crop(feat_v, center, (th, tw))
            templates["t"] = crop(feat_t, center, (th, tw))
        state = TrackerState(templates, box, center, (th, tw), self.stride)
        if self.pipeline.combiner == "adf":
            state.mam_ref["d"] = abs(float(mam_confidence(feats["d"], self.model.mam_d).mean())) or 1.0
            state.mam_ref["c"] = abs(float(mam_confidence(feats["c"], self.model.mam_c).mean())) or 1.0
        state.confidences.append(1.0)
        self.state = state
        self.modes = [LOCAL]

    def update(self, index: int, frame: Frame) -> tuple[BoundingBox, float]:
        state = self.state
        feat_v, feat_t = frame
        region = "global" if state.mode == GLOBAL else "local"
        _, box, conf = fused_response_step(state, feat_v, feat_t, self.pipeline, self.model, region)
        if self.long_term:
            state.mode = lt_switch(state, conf, self.theta_low, self.theta_high)
        state.box = box
        cx, cy = box.center
        state.center = (int(cy // self.stride), int(cx // self.stride))
        state.confidences.append(conf)
        self.modes.append(state.mode)
        return box, conf


class EchoTracker:
    """Replays the visible ground truth (thermal where visible is absent)."""

    def __init__(self, record: SequenceRecord):
        self.record = record
        self.last = BoundingBox.EMPTY

    def initialize(self, frame, box):
        self.last = box

    def update(self, index, frame):
        r = self.record
        if index % r.interval == 0:
            k = index // r.interval
            gt = r.gt_rgb[k] if r.gt_rgb[k] is not None else r.gt_ir[k]
            if gt is not None:
                self.last = gt
        return self.last, 1.0


class StaticTracker:
    """Never moves from the initial box."""

    def initialize(self, frame, box):
        self.box = box

    def update(self, index, frame):
        return self.box, 1.0


class EmptyTracker:
    def initialize(self, frame, box):
        pass

    def update(self, index, frame):
        return BoundingBox.EMPTY, 0.0


# ---------------------------------------------------------------------------
# one-pass evaluation


@dataclass
class OpeResult:
    boxes: list
    confidences: list
    millis: list
    failed: str | None = None

    def __len__(self):
        return len(self.boxes)

    def at(self, frames: Sequence[int]) -> list[BoundingBox]:
        return [self.boxes[f] for f in frames]

    @property
    def fps(self) -> float:
        total = sum(self.millis) / 1000.0
        return len(self.millis) / total if total > 0 else float("inf")

    def to_text(self) -> str:
        lines = []
        if self.failed:
            lines.append(f"# failed: {self.failed}")
        lines.append("frame,x,y,w,h,confidence,millis")
        for i, (b, c, t) in enumerate(zip(self.boxes, self.confidences, self.millis)):
            lines.append(",".join([str(i), *(fmt_num(v) for v in b.as_tuple()), fmt_num(c), fmt_num(t)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> "OpeResult":
        boxes, confs, millis, failed = [], [], [], None
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.startswith("frame,"):
                continue
            if line.startswith("#"):
                if line.startswith("# failed:"):
                    failed = line[len("# failed:"):].strip()
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ParseError(f"expected 7 fields, got {len(parts)}", path, lineno)
            try:
                idx = int(parts[0])
                vals = [float(p) for p in parts[1:]]
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", path, lineno) from None
            if idx != len(boxes):
                raise ParseError(f"frame {idx} out of order, expected {len(boxes)}", path, lineno)
            boxes.append(BoundingBox(*vals[:4]))
            confs.append(vals[4])
            millis.append(vals[5])
        return cls(boxes, confs, millis, failed)


def run_ope(
    tracker: Tracker,
    record: SequenceRecord,
    frames: Callable[[int], Frame] | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> OpeResult:
    """Initialize on frame 0 ground truth and run straight through.

    ``frames(i)`` is called in increasing order, once per frame, and only
    after the prediction for frame ``i - 1`` has been recorded. If the tracker
    raises, the remaining frames get empty boxes and the result is flagged.
    """
    init = record.gt_rgb[0] if record.gt_rgb[0] is not None else record.gt_ir[0]
    if init is None:
        raise ProtocolError(f"{record.name}: frame 0 carries no annotation to initialize from")
    frames = frames or (lambda i: None)
    boxes, confs, millis = [], [], []
    t0 = clock()
    tracker.initialize(frames(0), init)
    boxes.append(init)
    confs.append(1.0)
    millis.append((clock() - t0) * 1000.0)
    failed = None
    for i in range(1, record.frame_count):
        if failed is None:
            t0 = clock()
            try:
                box, conf = tracker.update(i, frames(i))
            except Exception as exc:  # tracker bugs must not abort the benchmark
                failed = f"frame {i}: {type(exc).__name__}: {exc}"
                log.warning("%s: tracker failed at %s", record.name, failed)
            else:
                boxes.append(box)
                confs.append(float(conf))
                millis.append((clock() - t0) * 1000.0)
                continue
        boxes.append(BoundingBox.EMPTY)
        confs.append(0.0)
        millis.append(0.0)
    return OpeResult(boxes, confs, millis, failed)
