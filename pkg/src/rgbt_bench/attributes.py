"""Challenge attributes: taxonomy, rule-based derivation, per-attribute scores.

Four attributes follow mechanically from the annotations and are derived
here (FM, SV, LR, TVS); the rest only come from label files.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AttributeUndefinedError, ConfigurationError
from .metrics import BoundingBox, center_distance, frame_distances, frame_overlaps, iou, success_curve, DEFAULT_TAU

ATTRIBUTES = ("TB", "CM", "EI", "DEF", "PO", "FO", "SV", "TC", "FM", "BC", "OV", "LR", "TVS")
DERIVED = frozenset({"FM", "SV", "LR", "TVS"})
MANUAL = frozenset(ATTRIBUTES) - DERIVED

ATTRIBUTE_NAMES = {
    "TB": "Target Blur",
    "CM": "Camera Movement",
    "EI": "Extreme Illumination",
    "DEF": "Deformation",
    "PO": "Partial Occlusion",
    "FO": "Full Occlusion",
    "SV": "Scale Variation",
    "TC": "Thermal Cluttering",
    "FM": "Fast Moving",
    "BC": "Background Clustering",
    "OV": "Out-of-View",
    "LR": "Low Resolution",
    "TVS": "Thermal-Visible Separation",
}

FM_OFFSET_PX = 20.0
SV_RANGE = (0.5, 2.0)
LR_AREA = 400.0

AttributeSet = frozenset  # of names drawn from ATTRIBUTES


def attribute_set(names: Iterable[str] = ()) -> frozenset:
    names = frozenset(names)
    unknown = names - set(ATTRIBUTES)
    if unknown:
        raise ValueError(f"unknown attribute(s): {', '.join(sorted(unknown))}")
    return names


def to_flags(attrs: frozenset) -> list[int]:
    return [int(a in attrs) for a in ATTRIBUTES]


def from_flags(flags: Sequence[int]) -> frozenset:
    if len(flags) != len(ATTRIBUTES):
        raise ValueError(f"expected {len(ATTRIBUTES)} flags, got {len(flags)}")
    return frozenset(a for a, f in zip(ATTRIBUTES, flags) if f)


# ---------------------------------------------------------------------------
# derivation rules


def derive_fm(gt: Sequence[BoundingBox | None], interval: int = 1) -> list[bool]:
    """Fast motion: center offset from the previous annotated frame, divided
    by the annotation interval, is larger than 20 px."""
    flags = [False] * len(gt)
    for i in range(1, len(gt)):
        a, b = gt[i - 1], gt[i]
        if a is None or b is None:
            continue
        flags[i] = center_distance(a, b) / interval > FM_OFFSET_PX
    return flags


def derive_sv(gt: Sequence[BoundingBox | None]) -> list[bool]:
    """Scale variation: area ratio to the first annotated box outside [0.5, 2]."""
    init = next((b for b in gt if b is not None), None)
    if init is None:
        return [False] * len(gt)
    if init.area <= 0:
        raise AttributeUndefinedError("scale variation is undefined for a zero-area initial box")
    lo, hi = SV_RANGE
    return [b is not None and not (lo <= b.area / init.area <= hi) for b in gt]


def derive_lr(gt: Sequence[BoundingBox | None]) -> list[bool]:
    return [b is not None and b.area < LR_AREA for b in gt]


def derive_tvs(gt_v: Sequence[BoundingBox | None], gt_t: Sequence[BoundingBox | None]) -> list[bool]:
    """Thermal-visible separation: the two modality boxes do not overlap.
    Frames missing either annotation are never flagged."""
    return [v is not None and t is not None and iou(v, t) == 0 for v, t in zip(gt_v, gt_t)]


def derived_frame_attributes(gt_v, gt_t, interval: int = 1) -> list[frozenset]:
    """Per-frame sets of the four derivable attributes, computed on the visible
    track (falling back to thermal where visible is absent)."""
    primary = [v if v is not None else t for v, t in zip(gt_v, gt_t)]
    columns = {
        "FM": derive_fm(primary, interval),
        "SV": derive_sv(primary),
        "LR": derive_lr(primary),
        "TVS": derive_tvs(gt_v, gt_t),
    }
    return [frozenset(k for k, col in columns.items() if col[i]) for i in range(len(primary))]


def sequence_attributes(frame_attrs: Sequence[frozenset], manual: frozenset | None = None) -> frozenset:
    """Manual sequence labels when given, else the OR over frames.

    Derived attributes flagged on any frame are always included.
    """
    union = frozenset().union(*frame_attrs) if frame_attrs else frozenset()
    if manual is not None:
        return frozenset(manual) | (union & DERIVED)
    return union


# ---------------------------------------------------------------------------
# breakdown


@dataclass(frozen=True)
class SequenceEval:
    """One sequence's evaluation inputs sampled at its annotated frames."""

    name: str
    pred: Sequence[BoundingBox]
    gt_v: Sequence[BoundingBox | None]
    gt_t: Sequence[BoundingBox | None]
    frame_attrs: Sequence[frozenset]
    seq_attrs: frozenset
    valid: Sequence[bool] | None = None

    def scores(self, tau: float = DEFAULT_TAU, mask: Sequence[bool] | None = None):
        ov, dist = self._select(mask)
        return success_curve(ov).auc, (float(np.mean(dist <= tau)) if dist.size else 0.0)

    def _select(self, mask=None):
        valid = self.valid
        if valid is None:
            valid = [v is not None or t is not None for v, t in zip(self.gt_v, self.gt_t)]
        if mask is not None:
            valid = [a and b for a, b in zip(valid, mask)]
        return (
            frame_overlaps(self.pred, self.gt_v, self.gt_t, valid),
            frame_distances(self.pred, self.gt_v, self.gt_t, valid),
        )

    def support(self, attr: str) -> list[bool]:
        return [attr in s for s in self.frame_attrs]


def attribute_breakdown(
    sequences: Sequence[SequenceEval], level: str = "sequence", tau: float = DEFAULT_TAU
) -> dict[str, tuple[float, float]]:
    """Per-attribute ``(MSR, MPR)``, in canonical attribute order.

    Sequence level averages per-sequence scores over sequences carrying the
    attribute; frame level pools exactly the flagged frames of all sequences.
    Attributes without support are left out.
    """
    if level not in ("sequence", "frame"):
        raise ConfigurationError(f"level must be 'sequence' or 'frame', got {level!r}")
    out = {}
    for attr in ATTRIBUTES:
        if level == "sequence":
            chosen = [s.scores(tau) for s in sequences if attr in s.seq_attrs]
            if chosen:
                out[attr] = (float(np.mean([c[0] for c in chosen])), float(np.mean([c[1] for c in chosen])))
        else:
            ovs, dists = [], []
            for s in sequences:
                ov, d = s._select(s.support(attr))
                ovs.append(ov)
                dists.append(d)
            ov, d = np.concatenate(ovs) if ovs else np.empty(0), np.concatenate(dists) if dists else np.empty(0)
            if ov.size:
                out[attr] = (success_curve(ov).auc, float(np.mean(d <= tau)))
    return out
