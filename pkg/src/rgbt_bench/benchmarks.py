"""Seeded synthetic benchmark suites.

``mixed_suite``     short-term sequences with single-modality degradations,
                    biased toward the thermal side (daylight-style capture).
``daylight_suite``  the same construction with thermal-only degradations.
``reentry_suite``   long-term sequences where the target leaves the view for
                    30-40 frames and comes back far from where it left.
"""

from __future__ import annotations

import numpy as np

from .synthetic import SyntheticSpec, Window, generate_synthetic

DEFAULT_SEED = 7

# (kind, modality) -> draw probability; thermal trouble is more common
_DEGRADATIONS = (
    (("noise", "ir"), 0.35),
    (("clutter", "ir"), 0.25),
    (("noise", "rgb"), 0.25),
    (("clutter", "rgb"), 0.15),
)
_THERMAL_ONLY = ((("noise", "ir"), 0.6), (("clutter", "ir"), 0.4))


def _waypoints(rng, frames, n, W, H, margin, step):
    pts = [(0, float(rng.uniform(margin, W - margin)), float(rng.uniform(margin, H - margin)))]
    for k in range(1, n):
        f = round(k * (frames - 1) / (n - 1))
        _, x, y = pts[-1]
        x = float(np.clip(x + rng.uniform(-step, step), margin, W - margin))
        y = float(np.clip(y + rng.uniform(-step, step), margin, H - margin))
        pts.append((f, x, y))
    return tuple(pts)


def mixed_spec(seed: int, index: int, frames: int = 120, degradations=_DEGRADATIONS, prefix="mixed") -> SyntheticSpec:
    rng = np.random.default_rng([seed, index])
    W, H = 320, 240
    size = float(rng.uniform(32, 48))
    windows = []
    kinds, probs = zip(*degradations)
    for _ in range(int(rng.integers(1, 3))):
        kind, mod = kinds[rng.choice(len(kinds), p=probs)]
        length = int(rng.integers(20, 41))
        start = int(rng.integers(15, frames - length))
        offset = (0.0, 0.0)
        if kind == "clutter":
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(40, 64)
            offset = (float(dist * np.cos(ang)), float(dist * np.sin(ang)))
        windows.append(Window(kind, start, start + length, mod, offset))
    return SyntheticSpec(
        name=f"{prefix}_{index:03d}",
        seed=int(rng.integers(2**31)),
        frame_count=frames,
        target_size=(size, size),
        waypoints=_waypoints(rng, frames, 4, W, H, 40, 70),
        ir_offset=(float(rng.uniform(-4, 4)), float(rng.uniform(-4, 4))),
        windows=tuple(windows),
        masks=index % 4 == 0,
    )


def daylight_spec(seed: int, index: int, frames: int = 120) -> SyntheticSpec:
    return mixed_spec(seed, index, frames, _THERMAL_ONLY, "daylight")


def reentry_spec(seed: int, index: int, frames: int = 150) -> SyntheticSpec:
    rng = np.random.default_rng([seed, 1000 + index])
    W = 320
    size = float(rng.uniform(36, 48))
    start = int(rng.integers(40, 60))
    length = int(rng.integers(30, 41))
    x0, y0 = float(rng.uniform(50, 110)), float(rng.uniform(50, 190))
    # re-enter on the far side of the frame
    x1, y1 = float(rng.uniform(220, 270)), float(rng.uniform(50, 190))
    if index % 2:
        x0, x1 = W - x0, W - x1
    waypoints = (
        (0, x0, y0),
        (start, x0 + rng.uniform(-10, 10), y0 + rng.uniform(-10, 10)),
        (start + length, x1, y1),
        (frames - 1, x1 + rng.uniform(-20, 20), y1 + rng.uniform(-20, 20)),
    )
    return SyntheticSpec(
        name=f"reentry_{index:03d}",
        seed=int(rng.integers(2**31)),
        frame_count=frames,
        target_size=(size, size),
        waypoints=tuple((f, float(x), float(y)) for f, x, y in waypoints),
        windows=(Window("absent", start, start + length),),
    )


def mixed_suite(seed: int = DEFAULT_SEED, count: int = 24):
    return [generate_synthetic(mixed_spec(seed, i)) for i in range(count)]


def daylight_suite(seed: int = DEFAULT_SEED, count: int = 8):
    return [generate_synthetic(daylight_spec(seed, i)) for i in range(count)]


def reentry_suite(seed: int = DEFAULT_SEED, count: int = 8):
    return [generate_synthetic(reentry_spec(seed, i)) for i in range(count)]


SUITES = {"mixed": mixed_suite, "daylight": daylight_suite, "reentry": reentry_suite}
