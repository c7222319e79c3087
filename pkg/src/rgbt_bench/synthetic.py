"""Seeded synthetic RGB-T sequences with exact ground truth and toy features.

The target is a Gaussian blob whose channel profile differs per modality
(a "sensor signature"). Degradation windows perturb one modality:

* ``noise``   the sensor loses contrast: the target signal is attenuated,
              noise grows and a DC offset appears on that modality's
              signature channels (glare or thermal crossover);
* ``clutter`` a distractor with the target's signature appears near it;
* ``absent``  the target leaves the view in both modalities.

Features are rendered per frame from a per-frame RNG stream, so any frame can
be regenerated on its own and the output is byte-identical across runs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .attributes import derived_frame_attributes
from .dataset import SequenceRecord, write_sequence, feature_path, LONG_TERM_ABSENCE
from .metrics import BoundingBox, FrameMask
from .tensor import write_tensor

WINDOW_KINDS = ("absent", "noise", "clutter")
# manual attribute raised by a window of (kind, modality)
WINDOW_ATTRIBUTE = {
    ("absent", "both"): "OV",
    ("noise", "rgb"): "EI",
    ("noise", "ir"): "TC",
    ("clutter", "rgb"): "BC",
    ("clutter", "ir"): "TC",
}


@dataclass(frozen=True)
class Window:
    kind: str
    start: int
    stop: int  # exclusive
    modality: str = "both"
    offset: tuple = (0.0, 0.0)  # distractor displacement from the target, pixels

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.kind == "absent" and self.modality != "both":
            raise ValueError("absence windows apply to both modalities")
        if self.kind != "absent" and self.modality not in ("rgb", "ir"):
            raise ValueError(f"{self.kind} windows need modality rgb or ir")
        if not 0 <= self.start < self.stop:
            raise ValueError(f"empty window [{self.start}, {self.stop})")

    def covers(self, frame: int) -> bool:
        return self.start <= frame < self.stop

    @property
    def attribute(self) -> str:
        return WINDOW_ATTRIBUTE[(self.kind, self.modality)]


@dataclass(frozen=True)
class SyntheticSpec:
    name: str
    seed: int
    frame_count: int = 120
    image_size: tuple = (320, 240)  # width, height in pixels
    stride: int = 8
    channels: int = 4
    target_size: tuple = (40.0, 40.0)
    waypoints: tuple = ((0, 160.0, 120.0),)  # (frame, center x, center y)
    scale_waypoints: tuple = ((0, 1.0),)
    ir_offset: tuple = (0.0, 0.0)
    windows: tuple = ()
    interval: int = 10
    masks: bool = False
    mask_interval: int = 30
    noise: float = 0.1
    degraded_gain: float = 0.2
    degraded_noise: float = 0.6
    degraded_dc: float = 1.0
    degraded_smooth: float = 1.0  # spatial correlation of degraded-window noise, in cells

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        object.__setattr__(self, "target_size", tuple(float(v) for v in self.target_size))
        object.__setattr__(self, "ir_offset", tuple(float(v) for v in self.ir_offset))
        object.__setattr__(self, "waypoints", tuple(tuple(w) for w in self.waypoints))
        object.__setattr__(self, "scale_waypoints", tuple(tuple(w) for w in self.scale_waypoints))
        object.__setattr__(
            self, "windows", tuple(w if isinstance(w, Window) else Window(**w) for w in self.windows)
        )
        if self.channels < 4:
            raise ValueError("the modality signatures need at least 4 channels")
        if self.image_size[0] % self.stride or self.image_size[1] % self.stride:
            raise ValueError("image size must be a multiple of the feature stride")

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.channels, self.image_size[1] // self.stride, self.image_size[0] // self.stride

    def to_json(self) -> str:
        d = asdict(self)
        d["windows"] = [asdict(w) for w in self.windows]
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        d = json.loads(text)
        d["windows"] = tuple(Window(**{**w, "offset": tuple(w["offset"])}) for w in d["windows"])
        return cls(**d)


def signature(modality: str, channels: int) -> np.ndarray:
    """Per-channel profile of the target in one modality; the two overlap in no channel."""
    s = np.zeros(channels)
    if modality == "rgb":
        s[0], s[1] = 1.0, 0.5
    else:
        s[2], s[3] = 0.5, 1.0
    return s


def _interp(waypoints, frame):
    frames = [w[0] for w in waypoints]
    cols = list(zip(*waypoints))[1:]
    return tuple(float(np.interp(frame, frames, c)) for c in cols)


def target_state(spec: SyntheticSpec, frame: int):
    """Return ``(cx, cy, w, h)`` of the visible target at ``frame``."""
    cx, cy = _interp(spec.waypoints, frame)
    (s,) = _interp(spec.scale_waypoints, frame)
    return cx, cy, spec.target_size[0] * s, spec.target_size[1] * s


def is_present(spec: SyntheticSpec, frame: int) -> bool:
    if any(w.kind == "absent" and w.covers(frame) for w in spec.windows):
        return False
    cx, cy, _, _ = target_state(spec, frame)
    W, H = spec.image_size
    return 0 <= cx < W and 0 <= cy < H


def gt_boxes(spec: SyntheticSpec, frame: int) -> tuple[BoundingBox | None, BoundingBox | None]:
    if not is_present(spec, frame):
        return None, None
    cx, cy, w, h = target_state(spec, frame)
    dx, dy = spec.ir_offset
    return BoundingBox.from_center(cx, cy, w, h), BoundingBox.from_center(cx + dx, cy + dy, w, h)


def _blob(shape_hw, center_px, size_px, stride):
    Hf, Wf = shape_hw
    u = center_px[0] / stride - 0.5
    v = center_px[1] / stride - 0.5
    sx = max(size_px[0] / stride / 4, 0.5)
    sy = max(size_px[1] / stride / 4, 0.5)
    ys, xs = np.indices((Hf, Wf), dtype=np.float64)
    return np.exp(-(((xs - u) / sx) ** 2 + ((ys - v) / sy) ** 2) / 2)


def render_features(spec: SyntheticSpec, frame: int) -> tuple[np.ndarray, np.ndarray]:
    """Visible and thermal ``C x H x W`` feature tensors for one frame."""
    C, Hf, Wf = spec.feature_shape
    present = is_present(spec, frame)
    cx, cy, w, h = target_state(spec, frame)
    out = []
    for mod_id, mod in enumerate(("rgb", "ir")):
        rng = np.random.default_rng([spec.seed, frame, mod_id])
        sig = signature(mod, C)
        gain, sigma, dc, smooth = 1.0, spec.noise, 0.0, 0.0
        center = (cx, cy) if mod == "rgb" else (cx + spec.ir_offset[0], cy + spec.ir_offset[1])
        F = np.zeros((C, Hf, Wf))
        for win in spec.windows:
            if not win.covers(frame) or win.modality != mod:
                continue
            if win.kind == "noise":
                gain, sigma, dc = spec.degraded_gain, spec.degraded_noise, spec.degraded_dc
                smooth = spec.degraded_smooth
            elif win.kind == "clutter":
                pos = (center[0] + win.offset[0], center[1] + win.offset[1])
                F += sig[:, None, None] * _blob((Hf, Wf), pos, (w, h), spec.stride)[None]
        if present:
            F += gain * sig[:, None, None] * _blob((Hf, Wf), center, (w, h), spec.stride)[None]
        F += dc * sig[:, None, None]
        noise = rng.standard_normal((C, Hf, Wf))
        if smooth > 0:
            # blob-like structure, rescaled back to unit variance
            noise = ndimage.gaussian_filter(noise, (0, smooth, smooth), mode="wrap") * 2 * np.sqrt(np.pi) * smooth
        F += sigma * noise
        out.append(F)
    return out[0], out[1]


@dataclass
class SyntheticSequence:
    spec: SyntheticSpec
    record: SequenceRecord
    _cache: dict = field(default_factory=dict, repr=False)

    def features(self, frame: int) -> tuple[np.ndarray, np.ndarray]:
        if frame not in self._cache:
            self._cache[frame] = render_features(self.spec, frame)
        return self._cache[frame]

    def __len__(self):
        return self.spec.frame_count


def _longest_absent_run(flags, interval):
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best * interval


def generate_synthetic(spec: SyntheticSpec) -> SyntheticSequence:
    frames = list(range(0, spec.frame_count, spec.interval))
    boxes = [gt_boxes(spec, f) for f in frames]
    gt_rgb = [b[0] for b in boxes]
    gt_ir = [b[1] for b in boxes]
    derived = derived_frame_attributes(gt_rgb, gt_ir, spec.interval)
    frame_attrs = []
    for f, d in zip(frames, derived):
        manual = {w.attribute for w in spec.windows if w.covers(f)}
        if gt_rgb[frames.index(f)] is None:
            manual.add("OV")
        frame_attrs.append(frozenset(d | manual))
    absent = [v is None and t is None for v, t in zip(gt_rgb, gt_ir)]
    if _longest_absent_run(absent, spec.interval) > LONG_TERM_ABSENCE:
        subset = "long-term"
    elif spec.masks:
        subset = "mask-annotated"
    else:
        subset = "short-term"
    masks = {}
    if spec.masks:
        W, H = spec.image_size
        for f, b in zip(frames, gt_rgb):
            if f % spec.mask_interval == 0:
                masks[f] = FrameMask.from_box(b, W, H) if b is not None else FrameMask(W, H, np.zeros((H, W), bool))
    record = SequenceRecord(
        name=spec.name,
        subset=subset,
        frame_count=spec.frame_count,
        interval=spec.interval,
        gt_rgb=gt_rgb,
        gt_ir=gt_ir,
        frame_attributes=frame_attrs,
        masks=masks,
    )
    return SyntheticSequence(spec, record)


def write_synthetic(seq: SyntheticSequence, root, write_features: bool = False) -> Path:
    path = write_sequence(seq.record, Path(root) / seq.spec.name)
    (path / "synth.json").write_text(seq.spec.to_json() + "\n")
    if write_features:
        for mod in ("rgb", "ir"):
            (path / f"feat_{mod}").mkdir(exist_ok=True)
        for f in range(seq.spec.frame_count):
            rgb, ir = seq.features(f)
            write_tensor(feature_path(path, "rgb", f), rgb)
            write_tensor(feature_path(path, "ir", f), ir)
    return path


def load_spec(seq_dir) -> SyntheticSpec | None:
    p = Path(seq_dir) / "synth.json"
    if not p.is_file():
        return None
    return SyntheticSpec.from_json(p.read_text())
