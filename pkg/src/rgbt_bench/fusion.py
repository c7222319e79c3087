"""Hierarchical multi-modal fusion: image, feature and decision level.

* ``cif_divergence_loss`` pulls the per-block shared features of the two
  modalities together (KL between softmax-normalized block features).
* ``dff_fuse`` mixes the modality features channel by channel with weights
  predicted from a pooled global descriptor.
* ``mam_confidence`` and ``adf_fuse`` turn branch features into confidence
  maps and blend the two branch responses with pixelwise convex weights.

Each op has a backward pass and is registered for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import (
    as_tensor,
    conv1x1,
    conv1x1_backward,
    fully_connected,
    fully_connected_backward,
    gap,
    gap_backward,
    register_op,
    relu,
    softmax_pair,
    softmax_pair_backward,
    format_named,
    parse_named,
)

KL_FLOOR = 1e-12
_LOG_FLOOR = np.log(KL_FLOOR)


class _Params:
    """Mixin: every field is a float64 tensor; (de)serializes to named blocks."""

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_tensor(getattr(self, f.name)))
        self.validate()

    def validate(self):
        pass

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return format_named(self.tensors())

    @classmethod
    def from_text(cls, text: str):
        return cls(**parse_named(text))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values()))


def _uniform(rng, shape):
    return rng.uniform(-0.1, 0.1, shape)


@dataclass(frozen=True, eq=False)
class DffParams(_Params):
    W_g: np.ndarray
    b_g: np.ndarray
    W_v: np.ndarray
    b_v: np.ndarray
    W_t: np.ndarray
    b_t: np.ndarray

    def validate(self):
        e, c = self.W_g.shape
        if self.b_g.shape != (e,):
            raise DimensionError(f"DffParams: b_g {self.b_g.shape} vs W_g {self.W_g.shape}")
        for W, b, tag in ((self.W_v, self.b_v, "v"), (self.W_t, self.b_t, "t")):
            if W.shape != (c, e) or b.shape != (c,):
                raise DimensionError(
                    f"DffParams: W_{tag} {W.shape}/b_{tag} {b.shape} must map embed {e} to channels {c}"
                )

    @property
    def channels(self) -> int:
        return self.W_g.shape[1]

    @classmethod
    def init(cls, channels: int, embed: int | None = None, seed: int = 0) -> "DffParams":
        rng = np.random.default_rng(seed)
        e = embed or channels
        return cls(
            _uniform(rng, (e, channels)), _uniform(rng, e),
            _uniform(rng, (channels, e)), _uniform(rng, channels),
            _uniform(rng, (channels, e)), _uniform(rng, channels),
        )


@dataclass(frozen=True, eq=False)
class MamParams(_Params):
    W_phi: np.ndarray
    b_phi: np.ndarray
    W_psi: np.ndarray
    b_psi: np.ndarray

    def validate(self):
        if self.W_phi.shape != self.W_psi.shape:
            raise DimensionError(f"MamParams: W_phi {self.W_phi.shape} vs W_psi {self.W_psi.shape}")
        inner = self.W_phi.shape[0]
        if self.b_phi.shape != (inner,) or self.b_psi.shape != (inner,):
            raise DimensionError("MamParams: bias extents must equal the inner extent")

    @property
    def channels(self) -> int:
        return self.W_phi.shape[1]

    @classmethod
    def init(cls, channels: int, inner: int = 2, seed: int = 0) -> "MamParams":
        rng = np.random.default_rng(seed)
        return cls(
            _uniform(rng, (inner, channels)), _uniform(rng, inner),
            _uniform(rng, (inner, channels)), _uniform(rng, inner),
        )


@dataclass(frozen=True, eq=False)
class AdfParams(_Params):
    """Encoder ``1x1 conv 2->4 + ReLU``, decoder ``1x1 conv 4->2``; the two
    decoder channels are the branch logits of a pixelwise softmax head."""

    W_enc: np.ndarray
    b_enc: np.ndarray
    W_dec: np.ndarray
    b_dec: np.ndarray

    def validate(self):
        hidden = self.W_enc.shape[0]
        if self.W_enc.shape != (hidden, 2) or self.b_enc.shape != (hidden,):
            raise DimensionError(f"AdfParams: encoder must take 2 channels, got {self.W_enc.shape}")
        if self.W_dec.shape != (2, hidden) or self.b_dec.shape != (2,):
            raise DimensionError(f"AdfParams: decoder must emit 2 channels, got {self.W_dec.shape}")

    @classmethod
    def init(cls, hidden: int = 4, seed: int = 0) -> "AdfParams":
        rng = np.random.default_rng(seed)
        return cls(
            _uniform(rng, (hidden, 2)), _uniform(rng, hidden),
            _uniform(rng, (2, hidden)), _uniform(rng, 2),
        )


@dataclass(frozen=True)
class LossWeights:
    beta: float = 100.0
    gamma: float = 100.0

    def __post_init__(self):
        if not self.beta > 0 or not self.gamma >= 0:
            raise ConfigurationError(f"need beta > 0 and gamma >= 0, got {self.beta}, {self.gamma}")


# ---------------------------------------------------------------------------
# complementary image fusion: divergence loss


def _log_softmax(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    m = flat.max()
    return (flat - m - np.log(np.exp(flat - m).sum())).reshape(x.shape)


def _check_blocks(P_v, P_t):
    if len(P_v) != len(P_t):
        raise DimensionError(f"cif: {len(P_v)} visible blocks vs {len(P_t)} thermal blocks")
    out = []
    for i, (a, b) in enumerate(zip(P_v, P_t)):
        a, b = as_tensor(a), as_tensor(b)
        if a.shape != b.shape:
            raise DimensionError(f"cif: block {i} shapes {a.shape} and {b.shape} differ")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError(f"cif: block {i} contains non-finite values")
        out.append((a, b))
    return out


def cif_divergence_loss(P_v, P_t) -> float:
    """Sum over blocks of KL(softmax(P_v^i) || softmax(P_t^i)).

    Each block is flattened over all ``C*H*W`` entries before normalizing.
    Thermal probabilities are floored at ``1e-12``.
    """
    total = 0.0
    for a, b in _check_blocks(P_v, P_t):
        logp = _log_softmax(a)
        logq = np.maximum(_log_softmax(b), _LOG_FLOOR)
        total += float(np.sum(np.exp(logp) * (logp - logq)))
    return total


def cif_divergence_backward(P_v, P_t, g: float = 1.0):
    gv, gt = [], []
    for a, b in _check_blocks(P_v, P_t):
        logp = _log_softmax(a)
        raw_logq = _log_softmax(b)
        logq = np.maximum(raw_logq, _LOG_FLOOR)
        p, q = np.exp(logp), np.exp(raw_logq)
        r = logp - logq
        kl = np.sum(p * r)
        gv.append(g * p * (r - kl))
        # d/dy of -sum p*logq; floored entries are constant in y
        active = raw_logq > _LOG_FLOOR
        gt.append(g * (q * np.sum(p * active) - p * active))
    return gv, gt


# ---------------------------------------------------------------------------
# discriminative feature fusion


def _check_dff(D_v, D_t, params: DffParams):
    D_v, D_t = as_tensor(D_v), as_tensor(D_t)
    if D_v.ndim != 3 or D_v.shape != D_t.shape:
        raise DimensionError(f"dff: feature shapes {D_v.shape} and {D_t.shape} must match (C x H x W)")
    if D_v.shape[0] != params.channels:
        raise DimensionError(f"dff: features have {D_v.shape[0]} channels, params expect {params.channels}")
    return D_v, D_t


def dff_logits(D_v, D_t, params: DffParams):
    pooled = gap(D_v + D_t)
    d_g = fully_connected(pooled, params.W_g, params.b_g)
    return (
        pooled,
        d_g,
        fully_connected(d_g, params.W_v, params.b_v),
        fully_connected(d_g, params.W_t, params.b_t),
    )


def dff_fuse(D_v, D_t, params: DffParams):
    """Return ``(D_a, w_v, w_t)`` with ``w_v + w_t = 1`` per channel."""
    D_v, D_t = _check_dff(D_v, D_t, params)
    _, _, lv, lt = dff_logits(D_v, D_t, params)
    w_v, w_t = softmax_pair(lv, lt)
    D_a = w_v[:, None, None] * D_v + w_t[:, None, None] * D_t
    return D_a, w_v, w_t


def dff_fuse_backward(D_v, D_t, params: DffParams, g_Da, g_wv=None, g_wt=None) -> dict:
    D_v, D_t = _check_dff(D_v, D_t, params)
    pooled, d_g, lv, lt = dff_logits(D_v, D_t, params)
    w_v, w_t = softmax_pair(lv, lt)
    C = D_v.shape[0]
    g_wv = np.zeros(C) if g_wv is None else g_wv
    g_wt = np.zeros(C) if g_wt is None else g_wt
    g_wv = g_wv + np.sum(g_Da * D_v, axis=(1, 2))
    g_wt = g_wt + np.sum(g_Da * D_t, axis=(1, 2))
    s = softmax_pair_backward(lv, lt, g_wv, g_wt)
    fv = fully_connected_backward(d_g, params.W_v, params.b_v, s["a"])
    ft = fully_connected_backward(d_g, params.W_t, params.b_t, s["b"])
    fg = fully_connected_backward(pooled, params.W_g, params.b_g, fv["x"] + ft["x"])
    g_sum = gap_backward(D_v, fg["x"])["x"]
    return {
        "D_v": w_v[:, None, None] * g_Da + g_sum,
        "D_t": w_t[:, None, None] * g_Da + g_sum,
        "W_g": fg["W"], "b_g": fg["b"],
        "W_v": fv["W"], "b_v": fv["b"],
        "W_t": ft["W"], "b_t": ft["b"],
    }


# ---------------------------------------------------------------------------
# modality aggregation (self-attention confidence) and decision fusion


def _mam_forward(X, params: MamParams):
    X = as_tensor(X)
    if X.ndim != 3:
        raise DimensionError(f"mam: input must be C x H x W, got {X.shape}")
    if X.shape[0] != params.channels:
        raise DimensionError(f"mam: input has {X.shape[0]} channels, params expect {params.channels}")
    C, H, W = X.shape
    phi = conv1x1(X, params.W_phi, params.b_phi)
    psi = conv1x1(X, params.W_psi, params.b_psi)
    r_phi = phi.reshape(phi.shape[0], H * W).T  # HW x C'
    r_psi = psi.reshape(psi.shape[0], H * W).T
    r_x = X.reshape(C, H * W).T  # HW x C
    return X, phi, psi, r_phi, r_psi, r_x


def attention_matrix(X, params: MamParams) -> np.ndarray:
    """The ``HW x HW`` affinity ``A = R(phi(X)) R(psi(X))^T``."""
    _, _, _, r_phi, r_psi, _ = _mam_forward(X, params)
    return r_phi @ r_psi.T


def mam_confidence(X, params: MamParams) -> np.ndarray:
    """``M = S(A x R(X))`` with ``A = R(phi(X)) R(psi(X))^T``; returns ``H x W``.

    The product is evaluated as ``R(phi) (R(psi)^T R(X))`` so the ``HW x HW``
    affinity is never materialized.
    """
    X, _, _, r_phi, r_psi, r_x = _mam_forward(X, params)
    return (r_phi @ (r_psi.T @ r_x)).sum(axis=1).reshape(X.shape[1:])


def mam_confidence_backward(X, params: MamParams, g_M) -> dict:
    X, phi, psi, r_phi, r_psi, r_x = _mam_forward(X, params)
    C, H, W = X.shape
    g = as_tensor(g_M).reshape(H * W)
    g_Y = np.repeat(g[:, None], C, axis=1)  # upstream of A @ r_x, HW x C
    # g_A = g_Y r_x^T, kept factored
    g_rx = r_psi @ (r_phi.T @ g_Y)
    g_rphi = g_Y @ (r_x.T @ r_psi)
    g_rpsi = r_x @ (g_Y.T @ r_phi)
    bphi = conv1x1_backward(X, params.W_phi, params.b_phi, g_rphi.T.reshape(phi.shape))
    bpsi = conv1x1_backward(X, params.W_psi, params.b_psi, g_rpsi.T.reshape(psi.shape))
    return {
        "X": g_rx.T.reshape(X.shape) + bphi["x"] + bpsi["x"],
        "W_phi": bphi["W"], "b_phi": bphi["b"],
        "W_psi": bpsi["W"], "b_psi": bpsi["b"],
    }


def combine_responses(R_d, R_c, E_d, E_c) -> np.ndarray:
    return as_tensor(R_d) * as_tensor(E_d) + as_tensor(R_c) * as_tensor(E_c)


def _adf_forward(M_d, M_c, params: AdfParams):
    Z = np.stack([as_tensor(M_d), as_tensor(M_c)])
    pre = conv1x1(Z, params.W_enc, params.b_enc)
    enc = relu(pre)
    dec = conv1x1(enc, params.W_dec, params.b_dec)
    return Z, pre, enc, dec


def _check_adf(*maps):
    shapes = {np.shape(m) for m in maps}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise DimensionError(f"adf: response and confidence maps must share one H x W shape, got {shapes}")


def adf_weights(M_d, M_c, params: AdfParams):
    _check_adf(M_d, M_c)
    *_, dec = _adf_forward(M_d, M_c, params)
    return softmax_pair(dec[0], dec[1])


def adf_fuse(R_d, R_c, M_d, M_c, params: AdfParams):
    """Return ``(R_F, E_d, E_c)`` where ``E_d + E_c = 1`` pixelwise."""
    _check_adf(R_d, R_c, M_d, M_c)
    E_d, E_c = adf_weights(M_d, M_c, params)
    return combine_responses(R_d, R_c, E_d, E_c), E_d, E_c


def adf_fuse_backward(R_d, R_c, M_d, M_c, params: AdfParams, g_RF, g_Ed=None, g_Ec=None) -> dict:
    _check_adf(R_d, R_c, M_d, M_c)
    R_d, R_c = as_tensor(R_d), as_tensor(R_c)
    Z, pre, enc, dec = _adf_forward(M_d, M_c, params)
    E_d, E_c = softmax_pair(dec[0], dec[1])
    g_Ed = (np.zeros_like(E_d) if g_Ed is None else g_Ed) + g_RF * R_d
    g_Ec = (np.zeros_like(E_c) if g_Ec is None else g_Ec) + g_RF * R_c
    s = softmax_pair_backward(dec[0], dec[1], g_Ed, g_Ec)
    d = conv1x1_backward(enc, params.W_dec, params.b_dec, np.stack([s["a"], s["b"]]))
    e = conv1x1_backward(Z, params.W_enc, params.b_enc, d["x"] * (pre > 0))
    return {
        "R_d": g_RF * E_d,
        "R_c": g_RF * E_c,
        "M_d": e["x"][0],
        "M_c": e["x"][1],
        "W_enc": e["W"], "b_enc": e["b"],
        "W_dec": d["W"], "b_dec": d["b"],
    }


# ---------------------------------------------------------------------------
# training losses


def composite_losses(L_bb: float, L_cls: float, L_div: float, w: LossWeights = LossWeights()):
    """``L_d = L_bb + beta L_cls`` and ``L_c = L_d + gamma L_div``."""
    for name, v in (("L_bb", L_bb), ("L_cls", L_cls), ("L_div", L_div)):
        if not v >= 0:
            raise ValueError(f"{name} must be non-negative, got {v}")
    L_d = L_bb + w.beta * L_cls
    return L_d, L_d + w.gamma * L_div


def gaussian_target(shape, center, sigma: float = 1.0) -> np.ndarray:
    ys, xs = np.indices(shape, dtype=np.float64)
    return np.exp(-((ys - center[0]) ** 2 + (xs - center[1]) ** 2) / (2 * sigma**2))


def classification_loss(response, target) -> float:
    response, target = as_tensor(response), as_tensor(target)
    if response.shape != target.shape:
        raise DimensionError(f"classification_loss: {response.shape} vs {target.shape}")
    return float(np.mean((response - target) ** 2))


def bbox_loss(pred, gt) -> float:
    from .metrics import iou

    return 1.0 - iou(pred, gt)


# ---------------------------------------------------------------------------
# ablation pipelines


@dataclass(frozen=True)
class Pipeline:
    """Which branches run and how their responses are combined.

    ``combiner`` is one of ``rgb``/``ir`` (single-modality baseline),
    ``complementary`` or ``discriminative`` (single branch), ``average`` or
    ``adf``.
    """

    cif: bool = True
    dff: bool = True
    adf: bool = True
    modality: str | None = None

    def __post_init__(self):
        n = self.cif + self.dff
        if self.adf and n < 2:
            raise ConfigurationError("adaptive decision fusion needs both the CIF and DFF branches")
        if n == 0 and self.modality not in ("rgb", "ir"):
            raise ConfigurationError("a pipeline without CIF/DFF must name a modality: rgb or ir")
        if n > 0 and self.modality is not None:
            raise ConfigurationError("modality selection only applies to single-modality baselines")

    @property
    def combiner(self) -> str:
        if self.modality is not None:
            return self.modality
        if self.adf:
            return "adf"
        if self.cif and self.dff:
            return "average"
        return "complementary" if self.cif else "discriminative"

    @property
    def label(self) -> str:
        if self.modality is not None:
            return self.modality
        return ",".join(n for n in ("cif", "dff", "adf") if getattr(self, n))

    @classmethod
    def parse(cls, text: str) -> "Pipeline":
        tokens = {t.strip().lower() for t in text.split(",") if t.strip()}
        unknown = tokens - {"cif", "dff", "adf", "rgb", "ir"}
        if unknown:
            raise ConfigurationError(f"unknown pipeline component(s): {', '.join(sorted(unknown))}")
        mods = tokens & {"rgb", "ir"}
        if len(mods) > 1:
            raise ConfigurationError("choose a single modality")
        return cls("cif" in tokens, "dff" in tokens, "adf" in tokens, next(iter(mods), None))


def ablation_config(cif: bool, dff: bool, adf: bool) -> Pipeline:
    return Pipeline(cif=cif, dff=dff, adf=adf)


# ---------------------------------------------------------------------------
# registry hooks for gradient checks


def _dff_params(inp):
    return DffParams(*(inp[k] for k in ("W_g", "b_g", "W_v", "b_v", "W_t", "b_t")))


def _mam_params(inp):
    return MamParams(*(inp[k] for k in ("W_phi", "b_phi", "W_psi", "b_psi")))


def _adf_params(inp):
    return AdfParams(*(inp[k] for k in ("W_enc", "b_enc", "W_dec", "b_dec")))


def _sample_dff(rng, C=3, H=4, W=3, E=2):
    p = DffParams.init(C, E, seed=int(rng.integers(2**31)))
    scale = {k: v * 10 for k, v in p.tensors().items()}  # widen beyond the init range
    return {"D_v": rng.standard_normal((C, H, W)), "D_t": rng.standard_normal((C, H, W)), **scale}


def _sample_mam(rng, C=3, H=3, W=4, inner=2):
    return {
        "X": rng.standard_normal((C, H, W)),
        "W_phi": rng.uniform(-1, 1, (inner, C)), "b_phi": rng.uniform(-1, 1, inner),
        "W_psi": rng.uniform(-1, 1, (inner, C)), "b_psi": rng.uniform(-1, 1, inner),
    }


def _sample_adf(rng, H=4, W=3):
    return {
        "R_d": rng.standard_normal((H, W)), "R_c": rng.standard_normal((H, W)),
        "M_d": rng.standard_normal((H, W)), "M_c": rng.standard_normal((H, W)),
        "W_enc": rng.uniform(-1, 1, (4, 2)), "b_enc": rng.uniform(-1, 1, 4),
        "W_dec": rng.uniform(-1, 1, (2, 4)), "b_dec": rng.uniform(-1, 1, 2),
    }


def _sample_cif(rng, blocks=2, shape=(2, 3, 2)):
    out = {}
    for i in range(blocks):
        out[f"P_v{i}"] = rng.standard_normal(shape)
        out[f"P_t{i}"] = rng.standard_normal(shape)
    return out


def _cif_split(inp):
    n = len([k for k in inp if k.startswith("P_v")])
    return [inp[f"P_v{i}"] for i in range(n)], [inp[f"P_t{i}"] for i in range(n)]


def _cif_forward(**inp):
    return np.array(cif_divergence_loss(*_cif_split(inp)))


def _cif_backward(inp, g):
    gv, gt = cif_divergence_backward(*_cif_split(inp), float(g))
    out = {f"P_v{i}": x for i, x in enumerate(gv)}
    out.update({f"P_t{i}": x for i, x in enumerate(gt)})
    return out


register_op("cif_divergence_loss", _cif_forward, _cif_backward, _sample_cif, fusion=True)
register_op(
    "dff_fuse",
    lambda D_v, D_t, **p: dff_fuse(D_v, D_t, _dff_params(p)),
    lambda inp, g: dff_fuse_backward(inp["D_v"], inp["D_t"], _dff_params(inp), *g),
    _sample_dff,
    fusion=True,
)
register_op(
    "mam_confidence",
    lambda X, **p: mam_confidence(X, _mam_params(p)),
    lambda inp, g: mam_confidence_backward(inp["X"], _mam_params(inp), g),
    _sample_mam,
    fusion=True,
)
register_op(
    "adf_fuse",
    lambda R_d, R_c, M_d, M_c, **p: adf_fuse(R_d, R_c, M_d, M_c, _adf_params(p)),
    lambda inp, g: adf_fuse_backward(
        inp["R_d"], inp["R_c"], inp["M_d"], inp["M_c"], _adf_params(inp), *g
    ),
    _sample_adf,
    fusion=True,
)
