"""Box and mask evaluation metrics for dual-modality ground truth.

Success and precision use the more favorable modality per frame: the larger
IoU against either ground truth and the smaller center distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ProtocolError

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
DEFAULT_TAU = 20.0
BOUNDARY_FRACTION = 0.008


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner plus extent, in pixels.

    ``BoundingBox.EMPTY`` (zero width and height at the origin) stands for a
    missing prediction.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w >= 0 and self.h >= 0):
            raise ValueError(f"box extent must be non-negative, got w={self.w}, h={self.h}")

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BoundingBox":
        return cls(cx - w / 2, cy - h / 2, w, h)

    @property
    def is_empty(self) -> bool:
        return self.w == 0 and self.h == 0

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h


BoundingBox.EMPTY = BoundingBox(0.0, 0.0, 0.0, 0.0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax2, ay2, bx2, by2 = a.x + a.w, a.y + a.h, b.x + b.w, b.y + b.h
    iw = min(ax2, bx2) - max(a.x, b.x)
    ih = min(ay2, by2) - max(a.y, b.y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    # areas from the same corner arithmetic, so identical boxes score exactly 1
    union = (ax2 - a.x) * (ay2 - a.y) + (bx2 - b.x) * (by2 - b.y) - inter
    if union <= 0:
        return 0.0
    return inter / union


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    if a.is_empty or b.is_empty:
        return math.inf
    (ax, ay), (bx, by) = a.center, b.center
    return math.hypot(ax - bx, ay - by)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class SuccessCurve:
    thresholds: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.rates) > 0):
            raise AssertionError("success rates must be nonincreasing in the threshold")

    @property
    def auc(self) -> float:
        return float(np.mean(self.rates))


def success_curve(overlaps: Sequence[float], thresholds=SUCCESS_THRESHOLDS) -> SuccessCurve:
    """Fraction of frames whose overlap clears each threshold.

    Threshold 0 counts strictly positive overlaps; every other threshold
    counts ``overlap >= t``. An empty frame list yields all-zero rates.
    """
    ov = np.asarray(overlaps, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if ov.size == 0:
        return SuccessCurve(thresholds, np.zeros_like(thresholds))
    rates = np.array([np.mean(ov > t) if t == 0 else np.mean(ov >= t) for t in thresholds])
    return SuccessCurve(thresholds, rates)


def precision_curve(distances: Sequence[float], thresholds=PRECISION_THRESHOLDS) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.mean(d <= t) for t in thresholds])


def _align(pred, gt_v, gt_t, valid):
    n = len(pred)
    if len(gt_v) != n or len(gt_t) != n:
        raise ProtocolError(
            f"frame count mismatch: {n} predictions, {len(gt_v)} visible GT, {len(gt_t)} thermal GT"
        )
    if valid is None:
        valid = [v is not None or t is not None for v, t in zip(gt_v, gt_t)]
    elif len(valid) != n:
        raise ProtocolError(f"frame count mismatch: {n} predictions, {len(valid)} validity flags")
    return [i for i in range(n) if valid[i] and (gt_v[i] is not None or gt_t[i] is not None)]


def frame_overlaps(pred, gt_v, gt_t, valid=None) -> np.ndarray:
    """Per valid frame, the larger IoU against the two modality ground truths."""
    idx = _align(pred, gt_v, gt_t, valid)
    return np.array(
        [max(iou(pred[i], g) for g in (gt_v[i], gt_t[i]) if g is not None) for i in idx],
        dtype=np.float64,
    )


def frame_distances(pred, gt_v, gt_t, valid=None) -> np.ndarray:
    """Per valid frame, the smaller center distance to the two ground truths."""
    idx = _align(pred, gt_v, gt_t, valid)
    return np.array(
        [min(center_distance(pred[i], g) for g in (gt_v[i], gt_t[i]) if g is not None) for i in idx],
        dtype=np.float64,
    )


def msr(pred, gt_v, gt_t, valid=None) -> tuple[float, SuccessCurve]:
    curve = success_curve(frame_overlaps(pred, gt_v, gt_t, valid))
    return curve.auc, curve


def mpr(pred, gt_v, gt_t, valid=None, tau: float = DEFAULT_TAU) -> float:
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    d = frame_distances(pred, gt_v, gt_t, valid)
    return float(np.mean(d <= tau)) if d.size else 0.0


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True, eq=False)
class FrameMask:
    """Binary occupancy mask; ``bits`` is a ``height x width`` bool array."""

    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.size != self.width * self.height:
            raise DimensionError(f"mask has {bits.size} bits for {self.width}x{self.height}")
        object.__setattr__(self, "bits", bits.reshape(self.height, self.width))

    @classmethod
    def from_array(cls, arr) -> "FrameMask":
        arr = np.asarray(arr, dtype=bool)
        return cls(arr.shape[1], arr.shape[0], arr)

    @classmethod
    def from_box(cls, box: BoundingBox, width: int, height: int) -> "FrameMask":
        """Rasterize a box: pixel ``(r, c)`` is set when its center lies inside."""
        ys = np.arange(height) + 0.5
        xs = np.arange(width) + 0.5
        inside_y = (ys >= box.y) & (ys < box.y + box.h)
        inside_x = (xs >= box.x) & (xs < box.x + box.w)
        return cls(width, height, inside_y[:, None] & inside_x[None, :])

    def __eq__(self, other):
        if not isinstance(other, FrameMask):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.bits, other.bits
        )


def _check_masks(M, G):
    if len(M) != len(G):
        raise ProtocolError(f"{len(M)} predicted masks vs {len(G)} ground-truth masks")
    for i, (m, g) in enumerate(zip(M, G)):
        if (m.width, m.height) != (g.width, g.height):
            raise DimensionError(
                f"frame {i}: mask sizes {m.width}x{m.height} and {g.width}x{g.height} differ"
            )


def mask_iou(m: FrameMask, g: FrameMask) -> float:
    union = np.count_nonzero(m.bits | g.bits)
    if union == 0:
        return 1.0
    return np.count_nonzero(m.bits & g.bits) / union


def jaccard(M: Sequence[FrameMask], G: Sequence[FrameMask]) -> float:
    _check_masks(M, G)
    if not M:
        return 0.0
    return float(np.mean([mask_iou(m, g) for m, g in zip(M, G)]))


_CROSS = ndimage.generate_binary_structure(2, 1)


def boundary(bits: np.ndarray) -> np.ndarray:
    """Mask minus its 4-connected erosion; outside the image counts as empty."""
    bits = np.asarray(bits, dtype=bool)
    eroded = ndimage.binary_erosion(bits, structure=_CROSS, border_value=0)
    return bits & ~eroded


def default_boundary_tolerance(width: int, height: int) -> float:
    return float(np.ceil(BOUNDARY_FRACTION * math.hypot(width, height)))


def _matched_fraction(src: np.ndarray, dst: np.ndarray, tol: float) -> float:
    n = np.count_nonzero(src)
    if n == 0:
        return 0.0
    if not dst.any():
        return 0.0
    dist = ndimage.distance_transform_edt(~dst)
    return np.count_nonzero(dist[src] <= tol) / n


def boundary_f(m: FrameMask, g: FrameMask, tolerance_px: float | None = None) -> float:
    tol = default_boundary_tolerance(m.width, m.height) if tolerance_px is None else tolerance_px
    bm, bg = boundary(m.bits), boundary(g.bits)
    if not bm.any() and not bg.any():
        return 1.0
    pr = _matched_fraction(bm, bg, tol)
    re = _matched_fraction(bg, bm, tol)
    if pr + re == 0:
        return 0.0
    return 2 * pr * re / (pr + re)


def f_score(M: Sequence[FrameMask], G: Sequence[FrameMask], tolerance_px: float | None = None) -> float:
    """Mean per-frame contour F-measure.

    ``tolerance_px`` defaults to ``ceil(0.008 * image diagonal)``.
    """
    _check_masks(M, G)
    if not M:
        return 0.0
    return float(np.mean([boundary_f(m, g, tolerance_px) for m, g in zip(M, G)]))
