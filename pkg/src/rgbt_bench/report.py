"""Benchmark reports: per-sequence scores, subset splits, curves and plots."""

from __future__ import annotations

import json
import logging
from typing import Mapping, Sequence

import numpy as np

from .attributes import ATTRIBUTES, SequenceEval, attribute_breakdown
from .dataset import SequenceRecord
from .errors import ProtocolError
from .metrics import (
    DEFAULT_TAU,
    PRECISION_THRESHOLDS,
    SUCCESS_THRESHOLDS,
    BoundingBox,
    FrameMask,
    boundary_f,
    frame_distances,
    frame_overlaps,
    mask_iou,
    precision_curve,
    success_curve,
)
from .tracking import OpeResult

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DIGITS = 6  # reported precision; keeps golden files stable across BLAS builds


def _r(x: float) -> float:
    return round(float(x), DIGITS)


def empty_result(record: SequenceRecord) -> OpeResult:
    n = record.frame_count
    return OpeResult([BoundingBox.EMPTY] * n, [0.0] * n, [0.0] * n, failed="missing result")


def sequence_eval(record: SequenceRecord, result: OpeResult) -> SequenceEval:
    if len(result) != record.frame_count:
        raise ProtocolError(f"{record.name}: result has {len(result)} frames, sequence has {record.frame_count}")
    return SequenceEval(
        name=record.name,
        pred=result.at(record.annotated_frames),
        gt_v=record.gt_rgb,
        gt_t=record.gt_ir,
        frame_attrs=record.frame_attributes,
        seq_attrs=record.sequence_attributes,
        valid=record.valid,
    )


def sequence_curves(ev: SequenceEval) -> tuple[np.ndarray, np.ndarray]:
    """Success and precision curves of one sequence."""
    ov = frame_overlaps(ev.pred, ev.gt_v, ev.gt_t, ev.valid)
    d = frame_distances(ev.pred, ev.gt_v, ev.gt_t, ev.valid)
    return success_curve(ov).rates, precision_curve(d)


def mask_scores(record: SequenceRecord, result: OpeResult) -> tuple[float, float] | None:
    """Mean J and F of box-filled predictions on the mask-annotated frames."""
    if not record.masks:
        return None
    frames = sorted(record.masks)
    J, F = [], []
    for f in frames:
        g: FrameMask = record.masks[f]
        m = FrameMask.from_box(result.boxes[f], g.width, g.height)
        J.append(mask_iou(m, g))
        F.append(boundary_f(m, g))
    return float(np.mean(J)), float(np.mean(F))


def evaluate(
    records: Sequence[SequenceRecord],
    results: Mapping[str, OpeResult | None],
    tau: float = DEFAULT_TAU,
    level: str = "sequence",
) -> dict:
    """Build the evaluation report for ``records``.

    Sequences without a result are scored with empty boxes and listed under
    ``missing``. Group scores are means of per-sequence scores (the MSR of
    the mean success curve equals the mean MSR).
    """
    records = sorted(records, key=lambda r: r.name)
    per_seq, raw, evals, missing, failed = {}, {}, [], [], []
    seg = {}
    for r in records:
        res = results.get(r.name)
        if res is None:
            log.warning("%s: no result file, scoring empty boxes", r.name)
            missing.append(r.name)
            res = empty_result(r)
        elif res.failed:
            failed.append(r.name)
        ev = sequence_eval(r, res)
        evals.append(ev)
        msr_v, mpr_v = ev.scores(tau)
        raw[r.name] = (msr_v, mpr_v)
        entry = {"subset": r.subset, "msr": _r(msr_v), "mpr": _r(mpr_v)}
        js = mask_scores(r, res)
        if js is not None:
            seg[r.name] = js
            entry["J"], entry["F"] = _r(js[0]), _r(js[1])
        per_seq[r.name] = entry

    def block(names):
        names = list(names)
        if not names:
            return None
        m, p = np.mean([raw[n] for n in names], axis=0)
        return {"sequences": len(names), "msr": _r(m), "mpr": _r(p)}

    names = [r.name for r in records]
    subsets = {
        "short-term": block(r.name for r in records if not r.is_long_term),
        "long-term": block(r.name for r in records if r.is_long_term),
        "mask-annotated": block(r.name for r in records if r.subset == "mask-annotated"),
    }
    report = {
        "schema_version": SCHEMA_VERSION,
        "tau": tau,
        "overall": block(names) or {"sequences": 0, "msr": 0.0, "mpr": 0.0},
        "subsets": {k: v for k, v in subsets.items() if v is not None},
        "attributes": {
            "level": level,
            "scores": {
                a: {"msr": _r(m), "mpr": _r(p)} for a, (m, p) in attribute_breakdown(evals, level, tau).items()
            },
        },
        "sequences": per_seq,
        "missing": missing,
        "failed": failed,
    }
    if seg:
        report["segmentation"] = {
            "sequences": len(seg),
            "J": _r(np.mean([v[0] for v in seg.values()])),
            "F": _r(np.mean([v[1] for v in seg.values()])),
        }
    return report


def overall_curves(records, results, groups: Mapping[str, Sequence[str]] | None = None):
    """``{group: (success rates, precision rates)}`` averaged over sequences."""
    out = {}
    by_name = {r.name: r for r in records}
    groups = groups or {"all": sorted(by_name)}
    for label, names in groups.items():
        cs = []
        for n in names:
            res = results.get(n) or empty_result(by_name[n])
            cs.append(sequence_curves(sequence_eval(by_name[n], res)))
        if cs:
            out[label] = (np.mean([c[0] for c in cs], axis=0), np.mean([c[1] for c in cs], axis=0))
    return out


def subset_groups(records: Sequence[SequenceRecord]) -> dict[str, list[str]]:
    groups = {
        "all": [r.name for r in records],
        "short-term": [r.name for r in records if not r.is_long_term],
        "long-term": [r.name for r in records if r.is_long_term],
    }
    return {k: sorted(v) for k, v in groups.items() if v}


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def curve_csv(thresholds: np.ndarray, columns: Mapping[str, np.ndarray]) -> str:
    head = ["threshold", *columns]
    lines = [",".join(head)]
    for i, t in enumerate(thresholds):
        lines.append(",".join([f"{t:g}", *(f"{_r(v[i])}" for v in columns.values())]))
    return "\n".join(lines) + "\n"


def success_csv(curves: Mapping[str, tuple]) -> str:
    return curve_csv(SUCCESS_THRESHOLDS, {k: v[0] for k, v in curves.items()})


def precision_csv(curves: Mapping[str, tuple]) -> str:
    return curve_csv(PRECISION_THRESHOLDS, {k: v[1] for k, v in curves.items()})


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def svg_plot(title: str, xlabel: str, x: np.ndarray, series: Mapping[str, np.ndarray], xmax: float) -> str:
    """Minimal line plot, y in [0, 1]."""
    W, H, L, B, T, R = 480, 360, 56, 44, 30, 16
    pw, ph = W - L - R, H - T - B

    def px(v):
        return L + pw * v / xmax

    def py(v):
        return T + ph * (1 - v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:g}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(6):
        v = k / 5
        out.append(f'<text x="{L - 6}" y="{py(v) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.1f}</text>')
        xv = xmax * k / 5
        out.append(f'<text x="{px(xv):.1f}" y="{T + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:g}</text>')
    out.append(f'<text x="{L + pw / 2:g}" y="{H - 8}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>')
    for i, (name, y) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = T + 16 + 16 * i
        out.append(f'<line x1="{L + pw - 120}" y1="{ly - 4}" x2="{L + pw - 100}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{L + pw - 94}" y="{ly}" font-family="sans-serif" font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def attribute_table(scores: Mapping[str, Mapping[str, float]]) -> str:
    """Fixed-width table in canonical attribute order."""
    lines = [f"{'attr':<5} {'MSR':>6} {'MPR':>6}"]
    for a in ATTRIBUTES:
        if a in scores:
            lines.append(f"{a:<5} {scores[a]['msr']:6.3f} {scores[a]['mpr']:6.3f}")
    return "\n".join(lines) + "\n"
