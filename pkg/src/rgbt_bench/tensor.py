"""Dense float64 tensor primitives with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` values in float64. Every primitive is a
pure function; its ``*_backward`` companion maps the upstream gradient of
each output to partials for every input. Ops are collected in a registry so
that :func:`grad_check` can compare the analytic partials against central
finite differences.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionError

__all__ = [
    "as_tensor",
    "matmul",
    "gap",
    "fully_connected",
    "conv1x1",
    "softmax_pair",
    "relu",
    "register_op",
    "registered_ops",
    "get_op",
    "grad_check",
    "GradCheckReport",
    "GradRecord",
    "format_tensor",
    "parse_tensor",
]


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _require_rank(x: np.ndarray, rank: int, name: str, op: str) -> None:
    if x.ndim != rank:
        raise DimensionError(f"{op}: {name} must have rank {rank}, got shape {x.shape}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _require_rank(a, 2, "a", "matmul")
    _require_rank(b, 2, "b", "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    return a @ b


def matmul_backward(a, b, g):
    return {"a": g @ b.T, "b": a.T @ g}


def gap(x) -> np.ndarray:
    """Global average pooling of a ``C x H x W`` tensor to a ``C`` vector."""
    x = as_tensor(x)
    _require_rank(x, 3, "x", "gap")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise DimensionError(f"gap: empty spatial extent in shape {x.shape}")
    return x.mean(axis=(1, 2))


def gap_backward(x, g):
    _, h, w = x.shape
    return {"x": np.broadcast_to(g[:, None, None] / (h * w), x.shape).copy()}


def fully_connected(x, W, b) -> np.ndarray:
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    _require_rank(x, 1, "x", "fully_connected")
    _require_rank(W, 2, "W", "fully_connected")
    _require_rank(b, 1, "b", "fully_connected")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(
            f"fully_connected: W {W.shape}, x {x.shape}, b {b.shape} do not conform"
        )
    return W @ x + b


def fully_connected_backward(x, W, b, g):
    return {"x": W.T @ g, "W": np.outer(g, x), "b": g.copy()}


def conv1x1(x, W, b) -> np.ndarray:
    """Per-pixel linear map across channels: ``C x H x W -> C' x H x W``."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    _require_rank(x, 3, "x", "conv1x1")
    _require_rank(W, 2, "W", "conv1x1")
    _require_rank(b, 1, "b", "conv1x1")
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise DimensionError(f"conv1x1: W {W.shape}, x {x.shape}, b {b.shape} do not conform")
    return np.einsum("oc,chw->ohw", W, x) + b[:, None, None]


def conv1x1_backward(x, W, b, g):
    return {
        "x": np.einsum("oc,ohw->chw", W, g),
        "W": np.einsum("ohw,chw->oc", g, x),
        "b": g.sum(axis=(1, 2)),
    }


def softmax_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise two-way softmax, stable under large logit gaps."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"softmax_pair: shapes {a.shape} and {b.shape} differ")
    m = np.maximum(a, b)
    ea = np.exp(a - m)
    eb = np.exp(b - m)
    s = ea + eb
    return ea / s, eb / s


def softmax_pair_backward(a, b, g_pa, g_pb):
    pa, pb = softmax_pair(a, b)
    ga = (g_pa - g_pb) * pa * pb
    return {"a": ga, "b": -ga}


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, g):
    return {"x": g * (x > 0)}


# ---------------------------------------------------------------------------
# registry and gradient checking


@dataclass(frozen=True)
class OpSpec:
    """A differentiable op: ``forward(**inputs)`` returns an array or tuple of
    arrays; ``backward(inputs, grads)`` returns partials keyed by input name."""

    name: str
    forward: Callable
    backward: Callable
    sample: Callable[[np.random.Generator], dict] | None = None
    fusion: bool = False


_REGISTRY: dict[str, OpSpec] = {}


def register_op(name, forward, backward, sample=None, fusion=False, replace=False) -> OpSpec:
    if name in _REGISTRY and not replace:
        raise KeyError(f"op {name!r} already registered")
    spec = OpSpec(name, forward, backward, sample, fusion)
    _REGISTRY[name] = spec
    return spec


def unregister_op(name: str) -> None:
    _REGISTRY.pop(name, None)


def registered_ops(fusion_only: bool = False) -> list[str]:
    return sorted(n for n, s in _REGISTRY.items() if s.fusion or not fusion_only)


def get_op(name: str) -> OpSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise LookupError(f"no differentiable op registered under {name!r}") from None


@dataclass
class GradRecord:
    value: object
    partials: dict[str, np.ndarray]


@dataclass
class GradCheckReport:
    op: str
    epsilon: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> dict[str, bool]:
        return {k: v < self.tolerance for k, v in self.errors.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def _as_outputs(out) -> tuple[np.ndarray, ...]:
    if isinstance(out, tuple):
        return tuple(as_tensor(o) for o in out)
    return (as_tensor(out),)


def evaluate_with_grads(name: str, inputs: Mapping[str, np.ndarray], cotangents) -> GradRecord:
    spec = get_op(name)
    value = spec.forward(**inputs)
    partials = spec.backward(inputs, cotangents)
    for key, x in inputs.items():
        if partials[key].shape != np.shape(x):
            raise DimensionError(
                f"{name}: partial for {key} has shape {partials[key].shape}, input {np.shape(x)}"
            )
    return GradRecord(value, partials)


def grad_check(
    name: str,
    inputs: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    tolerance: float = 1e-6,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic partials of ``name`` with central differences.

    Multi-output ops are reduced to the scalar ``sum_k <c_k, out_k>`` with
    seeded random cotangents ``c_k``. The error per input is
    ``max |a - n| / max(1, |a|, |n|)`` over its entries.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    spec = get_op(name)
    inputs = {k: as_tensor(v).copy() for k, v in inputs.items()}
    rng = np.random.default_rng(seed)
    outs = _as_outputs(spec.forward(**inputs))
    cot = tuple(rng.standard_normal(o.shape) for o in outs)

    def objective(inp):
        return sum(float(np.sum(c * o)) for c, o in zip(cot, _as_outputs(spec.forward(**inp))))

    analytic = evaluate_with_grads(name, inputs, cot if len(cot) > 1 else cot[0]).partials
    report = GradCheckReport(name, epsilon, tolerance)
    for key, x in inputs.items():
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = objective(inputs)
            flat[i] = orig - epsilon
            fm = objective(inputs)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * epsilon)
        a = analytic[key]
        rel = np.abs(a - numeric) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        report.errors[key] = float(rel.max()) if rel.size else 0.0
    return report


def _sample(*shapes):
    def make(rng):
        return {k: rng.uniform(-1, 1, s) for k, s in shapes}

    return make


register_op(
    "matmul",
    lambda a, b: matmul(a, b),
    lambda inp, g: matmul_backward(inp["a"], inp["b"], g),
    _sample(("a", (3, 4)), ("b", (4, 2))),
)
register_op(
    "gap",
    lambda x: gap(x),
    lambda inp, g: gap_backward(inp["x"], g),
    _sample(("x", (3, 4, 2))),
)
register_op(
    "fully_connected",
    lambda x, W, b: fully_connected(x, W, b),
    lambda inp, g: fully_connected_backward(inp["x"], inp["W"], inp["b"], g),
    _sample(("x", (4,)), ("W", (3, 4)), ("b", (3,))),
)
register_op(
    "conv1x1",
    lambda x, W, b: conv1x1(x, W, b),
    lambda inp, g: conv1x1_backward(inp["x"], inp["W"], inp["b"], g),
    _sample(("x", (3, 2, 4)), ("W", (2, 3)), ("b", (2,))),
)
register_op(
    "softmax_pair",
    lambda a, b: softmax_pair(a, b),
    lambda inp, g: softmax_pair_backward(inp["a"], inp["b"], *g),
    _sample(("a", (8,)), ("b", (8,))),
)


# ---------------------------------------------------------------------------
# text serialization


def format_tensor(x) -> str:
    """Shape line followed by one line of values per innermost row."""
    x = as_tensor(x)
    lines = [" ".join(str(d) for d in x.shape)]
    rows = x.reshape(-1, x.shape[-1]) if x.ndim else x.reshape(1, 1)
    for row in rows:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_tensor(text: str) -> np.ndarray:
    lines = text.strip().splitlines()
    if not lines:
        raise ValueError("empty tensor text")
    shape = tuple(int(t) for t in lines[0].split())
    if any(d < 1 for d in shape):
        raise ValueError(f"non-positive extent in shape {shape}")
    values = np.array([float(t) for t in " ".join(lines[1:]).split()], dtype=np.float64)
    if values.size != int(np.prod(shape)):
        raise ValueError(f"shape {shape} needs {int(np.prod(shape))} values, got {values.size}")
    return values.reshape(shape)


def write_tensor(path, x) -> None:
    with open(path, "w") as fh:
        fh.write(format_tensor(x))


def read_tensor(path) -> np.ndarray:
    with open(path) as fh:
        return parse_tensor(fh.read())


def format_named(tensors: Mapping[str, np.ndarray]) -> str:
    buf = io.StringIO()
    for name, value in tensors.items():
        buf.write(f"@param {name}\n")
        buf.write(format_tensor(value))
    return buf.getvalue()


def parse_named(text: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    name, block = None, []
    for line in text.splitlines() + ["@param"]:
        if line.startswith("@param"):
            if name is not None:
                out[name] = parse_tensor("\n".join(block))
            name, block = line[len("@param"):].strip() or None, []
        elif line.strip():
            block.append(line)
    return out
