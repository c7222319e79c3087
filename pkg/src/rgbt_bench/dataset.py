"""Sequence directories: parsing, writing and validation.

Layout of one sequence directory::

    manifest.txt        name / subset / frames / interval / homography
    gt_rgb.txt          one "x,y,w,h" line per annotated frame, "nan,nan,nan,nan" if absent
    gt_ir.txt           same for the thermal modality
    attr_frame.txt      13 space-separated 0/1 flags per annotated frame
    attr_seq.txt        optional, one line of 13 flags
    masks/NNNNNN.rle    optional run-length masks for annotated frames
    feat_rgb/NNNNNN.tns optional toy feature tensors, one per frame
    feat_ir/NNNNNN.tns
    synth.json          optional generator spec for features not on disk

Annotated frames are ``0, interval, 2*interval, ...`` below the frame count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attributes import ATTRIBUTES, from_flags, sequence_attributes, to_flags
from .errors import GeometryError, ParseError, ProtocolError
from .metrics import BoundingBox, FrameMask, center_distance

SUBSETS = ("short-term", "long-term", "mask-annotated")
DEFAULT_INTERVAL = 10
LONG_TERM_ABSENCE = 20  # frames; strictly more makes a sequence long-term
IDENTITY = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


def fmt_num(v: float) -> str:
    """Shortest round-trip text for a float; integral values drop the '.0'."""
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def frame_name(index: int, suffix: str) -> str:
    return f"{index:06d}{suffix}"


# ---------------------------------------------------------------------------
# homographies


def normalize_homography(H) -> tuple[float, ...]:
    H = np.asarray(H, dtype=np.float64).reshape(3, 3)
    if abs(H[2, 2]) < 1e-12:
        raise GeometryError("homography bottom-right entry is zero")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-9:
        raise GeometryError("homography is not invertible")
    return tuple(float(v) for v in H.reshape(-1))


def apply_alignment(box: BoundingBox, H) -> BoundingBox:
    """Map the box corners through ``H``; return their axis-aligned hull."""
    H = np.asarray(H, dtype=np.float64).reshape(3, 3)
    if abs(np.linalg.det(H)) <= 1e-9:
        raise GeometryError("homography is not invertible")
    x0, y0, x1, y1 = box.x, box.y, box.x + box.w, box.y + box.h
    corners = np.array([[x0, y0, 1], [x1, y0, 1], [x1, y1, 1], [x0, y1, 1]], dtype=np.float64)
    mapped = corners @ H.T
    if np.any(mapped[:, 2] <= 1e-12):
        raise GeometryError("box corner maps to the line at infinity")
    xy = mapped[:, :2] / mapped[:, 2:]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    return BoundingBox(float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class SequenceRecord:
    name: str
    subset: str
    frame_count: int
    interval: int
    gt_rgb: tuple  # BoundingBox | None per annotated frame
    gt_ir: tuple
    frame_attributes: tuple  # frozenset per annotated frame
    seq_attributes: frozenset | None = None
    homography: tuple = IDENTITY
    masks: dict = field(default_factory=dict)  # frame index -> FrameMask

    def __post_init__(self):
        object.__setattr__(self, "gt_rgb", tuple(self.gt_rgb))
        object.__setattr__(self, "gt_ir", tuple(self.gt_ir))
        object.__setattr__(self, "frame_attributes", tuple(frozenset(a) for a in self.frame_attributes))
        if self.seq_attributes is not None:
            object.__setattr__(self, "seq_attributes", frozenset(self.seq_attributes))
        object.__setattr__(self, "homography", normalize_homography(self.homography))
        validate_record(self)

    @property
    def annotated_frames(self) -> list[int]:
        return list(range(0, self.frame_count, self.interval))

    @property
    def valid(self) -> list[bool]:
        return [v is not None or t is not None for v, t in zip(self.gt_rgb, self.gt_ir)]

    @property
    def longest_absence(self) -> int:
        """Longest run of target-absent frames implied by the sparse annotations."""
        best = run = 0
        for v, t in zip(self.gt_rgb, self.gt_ir):
            run = run + 1 if v is None and t is None else 0
            best = max(best, run)
        return best * self.interval

    @property
    def is_long_term(self) -> bool:
        return self.longest_absence > LONG_TERM_ABSENCE

    @property
    def sequence_attributes(self) -> frozenset:
        return sequence_attributes(self.frame_attributes, self.seq_attributes)

    @property
    def homography_matrix(self) -> np.ndarray:
        return np.array(self.homography).reshape(3, 3)


def validate_record(r: SequenceRecord) -> None:
    if r.subset not in SUBSETS:
        raise ProtocolError(f"{r.name}: unknown subset {r.subset!r}")
    if r.frame_count < 1 or r.interval < 1:
        raise ProtocolError(f"{r.name}: frame count and interval must be positive")
    n = len(range(0, r.frame_count, r.interval))
    for label, seq in (("gt_rgb", r.gt_rgb), ("gt_ir", r.gt_ir), ("attr_frame", r.frame_attributes)):
        if len(seq) != n:
            raise ProtocolError(
                f"{r.name}: {label} has {len(seq)} entries, expected {n} "
                f"(frames {r.frame_count}, interval {r.interval})"
            )
    for idx, m in r.masks.items():
        if idx % r.interval or not 0 <= idx < r.frame_count:
            raise ProtocolError(f"{r.name}: mask at frame {idx} is not an annotated frame")
    if r.is_long_term != (r.subset == "long-term"):
        raise ProtocolError(
            f"{r.name}: subset {r.subset!r} but longest absence is {r.longest_absence} frames "
            f"(long-term iff > {LONG_TERM_ABSENCE})"
        )


# ---------------------------------------------------------------------------
# line formats


def format_box(b: BoundingBox | None) -> str:
    if b is None:
        return "nan,nan,nan,nan"
    return ",".join(fmt_num(v) for v in b.as_tuple())


def parse_box(line: str, path=None, lineno=None) -> BoundingBox | None:
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) != 4:
        raise ParseError(f"expected 4 comma-separated fields, got {len(parts)}", path, lineno)
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ParseError(f"non-numeric box field in {line.strip()!r}", path, lineno) from None
    if all(math.isnan(v) for v in vals):
        return None
    if any(math.isnan(v) or math.isinf(v) for v in vals):
        raise ParseError(f"partially missing box {line.strip()!r}", path, lineno)
    if vals[2] < 0 or vals[3] < 0:
        raise ParseError(f"negative box extent in {line.strip()!r}", path, lineno)
    return BoundingBox(*vals)


def _read_lines(path: Path) -> list[tuple[int, str]]:
    """Non-blank lines with their 1-based line numbers."""
    with open(path) as fh:
        return [(i, ln.rstrip("\n")) for i, ln in enumerate(fh, 1) if ln.strip()]


def read_boxes(path) -> list[BoundingBox | None]:
    return [parse_box(ln, path, i) for i, ln in _read_lines(Path(path))]


def write_boxes(path, boxes) -> None:
    with open(path, "w") as fh:
        fh.writelines(format_box(b) + "\n" for b in boxes)


def parse_flags(line: str, path=None, lineno=None) -> frozenset:
    toks = line.split()
    if len(toks) != len(ATTRIBUTES) or any(t not in ("0", "1") for t in toks):
        raise ParseError(f"expected {len(ATTRIBUTES)} 0/1 flags, got {line.strip()!r}", path, lineno)
    return from_flags([int(t) for t in toks])


def format_flags(attrs) -> str:
    return " ".join(str(f) for f in to_flags(frozenset(attrs)))


# ---------------------------------------------------------------------------
# run-length masks


def _serpentine(grid: np.ndarray) -> np.ndarray:
    # odd rows run right to left, so vertically adjacent pixels stay adjacent at row ends
    out = grid.copy()
    out[1::2] = out[1::2, ::-1]
    return out


def encode_rle(mask: FrameMask) -> tuple[int, list[int]]:
    """Runs over a serpentine row scan, starting with the value of the top-left pixel."""
    flat = _serpentine(mask.bits.reshape(mask.height, mask.width)).reshape(-1).astype(np.int8)
    start = int(flat[0]) if flat.size else 0
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    return start, [int(r) for r in np.diff(edges)]


def decode_rle(width: int, height: int, start: int, runs: Sequence[int]) -> FrameMask:
    if sum(runs) != width * height:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {width * height}")
    if any(r <= 0 for r in runs):
        raise ValueError("run lengths must be positive")
    values = np.repeat([(start + i) % 2 for i in range(len(runs))], runs).astype(bool)
    return FrameMask(width, height, _serpentine(values.reshape(height, width)))


def format_mask(mask: FrameMask) -> str:
    start, runs = encode_rle(mask)
    return f"{mask.width} {mask.height} {start}\n{' '.join(map(str, runs))}\n"


def parse_mask(text: str, path=None) -> FrameMask:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    try:
        width, height, start = (int(t) for t in lines[0].split())
        runs = [int(t) for t in " ".join(lines[1:]).split()]
    except (ValueError, IndexError):
        raise ParseError("malformed mask header or runs", path, 1) from None
    if start not in (0, 1) or width < 1 or height < 1:
        raise ParseError("mask header needs positive width/height and start value 0 or 1", path, 1)
    try:
        return decode_rle(width, height, start, runs)
    except ValueError as e:
        raise ParseError(str(e), path, 2) from None


def write_mask(path, mask: FrameMask) -> None:
    with open(path, "w") as fh:
        fh.write(format_mask(mask))


def read_mask(path) -> FrameMask:
    with open(path) as fh:
        return parse_mask(fh.read(), path)


# ---------------------------------------------------------------------------
# directories


def is_sequence_dir(path) -> bool:
    return (Path(path) / "manifest.txt").is_file()


def list_sequences(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir() and is_sequence_dir(p))


def parse_manifest(path: Path) -> dict:
    out = {}
    for i, ln in _read_lines(path):
        key, sep, value = ln.partition(":")
        if not sep:
            raise ParseError(f"expected 'key: value', got {ln!r}", path, i)
        out[key.strip()] = (value.strip(), i)
    for key in ("name", "subset", "frames", "interval"):
        if key not in out:
            raise ParseError(f"missing manifest key {key!r}", path)
    return out


def parse_sequence(path) -> SequenceRecord:
    """Read and validate one sequence directory."""
    path = Path(path)
    manifest_path = path / "manifest.txt"
    if not manifest_path.is_file():
        raise ProtocolError(f"{path}: no manifest.txt")
    m = parse_manifest(manifest_path)

    def num(key, conv):
        text, line = m[key]
        try:
            return conv(text)
        except ValueError:
            raise ParseError(f"bad value for {key}: {text!r}", manifest_path, line) from None

    frames = num("frames", int)
    interval = num("interval", int)
    H = IDENTITY
    if "homography" in m:
        text, line = m["homography"]
        try:
            H = tuple(float(t) for t in text.split())
        except ValueError:
            raise ParseError("non-numeric homography entry", manifest_path, line) from None
        if len(H) != 9:
            raise ParseError(f"homography needs 9 numbers, got {len(H)}", manifest_path, line)

    gts = {}
    for mod in ("rgb", "ir"):
        f = path / f"gt_{mod}.txt"
        if not f.is_file():
            raise ProtocolError(f"{path.name}: missing {f.name}")
        gts[mod] = read_boxes(f)
    attr_path = path / "attr_frame.txt"
    if not attr_path.is_file():
        raise ProtocolError(f"{path.name}: missing attr_frame.txt")
    frame_attrs = [parse_flags(ln, attr_path, i) for i, ln in _read_lines(attr_path)]
    seq_attrs = None
    seq_path = path / "attr_seq.txt"
    if seq_path.is_file():
        lines = _read_lines(seq_path)
        if len(lines) != 1:
            raise ParseError(f"expected exactly one line, got {len(lines)}", seq_path)
        seq_attrs = parse_flags(lines[0][1], seq_path, lines[0][0])
    masks = {}
    mask_dir = path / "masks"
    if mask_dir.is_dir():
        for f in sorted(mask_dir.glob("*.rle")):
            try:
                idx = int(f.stem)
            except ValueError:
                raise ParseError("mask file name must be a zero-padded frame index", f) from None
            masks[idx] = read_mask(f)
    return SequenceRecord(
        name=m["name"][0],
        subset=m["subset"][0],
        frame_count=frames,
        interval=interval,
        gt_rgb=gts["rgb"],
        gt_ir=gts["ir"],
        frame_attributes=frame_attrs,
        seq_attributes=seq_attrs,
        homography=H,
        masks=masks,
    )


def write_sequence(record: SequenceRecord, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "manifest.txt", "w") as fh:
        fh.write(f"name: {record.name}\n")
        fh.write(f"subset: {record.subset}\n")
        fh.write(f"frames: {record.frame_count}\n")
        fh.write(f"interval: {record.interval}\n")
        fh.write("homography: " + " ".join(fmt_num(v) for v in record.homography) + "\n")
    write_boxes(path / "gt_rgb.txt", record.gt_rgb)
    write_boxes(path / "gt_ir.txt", record.gt_ir)
    with open(path / "attr_frame.txt", "w") as fh:
        fh.writelines(format_flags(a) + "\n" for a in record.frame_attributes)
    if record.seq_attributes is not None:
        with open(path / "attr_seq.txt", "w") as fh:
            fh.write(format_flags(record.seq_attributes) + "\n")
    if record.masks:
        (path / "masks").mkdir(exist_ok=True)
        for idx in sorted(record.masks):
            write_mask(path / "masks" / frame_name(idx, ".rle"), record.masks[idx])
    return path


def load_dataset(root, name_filter: str | None = None) -> list[SequenceRecord]:
    records = [parse_sequence(p) for p in list_sequences(root)]
    if name_filter:
        records = [r for r in records if name_filter in r.name]
    return records


# ---------------------------------------------------------------------------
# alignment statistics


def center_offsets(records: Sequence[SequenceRecord]) -> np.ndarray:
    """Pooled visible-thermal center distances over frames annotated in both."""
    d = [
        center_distance(v, t)
        for r in records
        for v, t in zip(r.gt_rgb, r.gt_ir)
        if v is not None and t is not None
    ]
    return np.asarray(d, dtype=np.float64)


def alignment_stats(records: Sequence[SequenceRecord]) -> tuple[float, float]:
    d = center_offsets(records)
    if d.size == 0:
        raise ProtocolError("no frame carries annotations for both modalities")
    return float(d.mean()), float(np.median(d))


def feature_path(seq_dir, modality: str, index: int) -> Path:
    return Path(seq_dir) / f"feat_{modality}" / frame_name(index, ".tns")


def has_feature_files(seq_dir) -> bool:
    return os.path.isdir(Path(seq_dir) / "feat_rgb") and os.path.isdir(Path(seq_dir) / "feat_ir")
