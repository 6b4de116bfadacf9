"""The attribute-to-visual-space classifier.

Class attribute vectors pass through a self-gating block (two ReLU paths,
one of them modulated by a sigmoid gate), scaled row normalization, and a
projection layer; the result lives in the visual feature space, where
samples are classified by scaled cosine similarity against the embedded
candidate attributes. The visual features themselves are never trained.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .layers import (
    AffineParams,
    SCNParams,
    affine_backward,
    affine_forward,
    cosine_backward,
    cosine_logits,
    relu_backward,
    relu_forward,
    scn_backward,
    scn_forward,
    sigmoid_backward,
    sigmoid_forward,
    softmax_xent,
)
from .numerics import DEFAULT_DTYPE, NonFiniteError, make_rng

NORMALIZATION_MODES = ("scn", "plain_cn", "none")

CHECKPOINT_MAGIC = b"MCZP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture and ablation switches.

    hidden_width None means "match the feature dimension", which is 2048
    on all the standard pre-extracted-feature datasets. When an explicit
    hidden width differs from the feature dimension, a final affine
    hidden->feature layer is appended so cosine comparison happens in the
    visual space.
    """

    hidden_width: Optional[int] = None
    logit_scale: float = 10.0
    disable_self_gating: bool = False
    normalization: str = "scn"  # scn | plain_cn | none
    init_seed: int = 0

    def __post_init__(self):
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(f"normalization must be one of {NORMALIZATION_MODES}")
        if self.logit_scale < 0:
            raise ValueError("logit_scale must be nonnegative")


@dataclass
class ModelParams:
    """All trainable tensors, plus the fixed dims/flags they were built for."""

    attr_dim: int
    feat_dim: int
    hidden: int
    gated: bool
    normalization: str
    logit_scale: float
    phi_a: AffineParams
    phi_s: Optional[AffineParams]
    phi_b: Optional[AffineParams]
    scn1: SCNParams
    proj: AffineParams
    scn2: SCNParams
    out: Optional[AffineParams] = None

    def affines(self):
        pairs = [self.phi_a]
        if self.gated:
            pairs += [self.phi_s, self.phi_b]
        pairs.append(self.proj)
        if self.out is not None:
            pairs.append(self.out)
        return pairs

    def zero_grads(self):
        for a in self.affines():
            a.zero_grads()
        self.scn1.zero_grads()
        self.scn2.zero_grads()

    @property
    def dtype(self):
        return self.phi_a.weight.dtype

    def n_params(self) -> int:
        return sum(a.weight.size + a.bias.size for a in self.affines()) + 4

    def walk(self):
        """Yield parameter pieces in the documented flatten order.

        Pieces are ("tensor", value, grad) for arrays and
        ("scalar", scn_params, name) for the normalization scales.
        """
        gate = [self.phi_a, self.phi_s, self.phi_b] if self.gated else [self.phi_a]
        for a in gate:
            yield ("tensor", a.weight, a.grad_weight)
            yield ("tensor", a.bias, a.grad_bias)
        yield ("scalar", self.scn1, "alpha")
        yield ("scalar", self.scn1, "beta")
        yield ("tensor", self.proj.weight, self.proj.grad_weight)
        yield ("tensor", self.proj.bias, self.proj.grad_bias)
        yield ("scalar", self.scn2, "alpha")
        yield ("scalar", self.scn2, "beta")
        if self.out is not None:
            yield ("tensor", self.out.weight, self.out.grad_weight)
            yield ("tensor", self.out.bias, self.out.grad_bias)


def build_params(cfg: ModelConfig, attr_dim: int, feat_dim: int, dtype=DEFAULT_DTYPE) -> ModelParams:
    """Allocate the parameter structure with zero weights."""
    if attr_dim < 1 or feat_dim < 1:
        raise ValueError("attr_dim and feat_dim must be >= 1")
    hidden = cfg.hidden_width if cfg.hidden_width else feat_dim

    def zeros_affine(fi, fo):
        return AffineParams(np.zeros((fi, fo), dtype=dtype), np.zeros(fo, dtype=dtype))

    gated = not cfg.disable_self_gating
    return ModelParams(
        attr_dim=attr_dim,
        feat_dim=feat_dim,
        hidden=hidden,
        gated=gated,
        normalization=cfg.normalization,
        logit_scale=cfg.logit_scale,
        phi_a=zeros_affine(attr_dim, hidden),
        phi_s=zeros_affine(attr_dim, hidden) if gated else None,
        phi_b=zeros_affine(attr_dim, hidden) if gated else None,
        scn1=SCNParams(),
        proj=zeros_affine(hidden, hidden),
        scn2=SCNParams(),
        out=zeros_affine(hidden, feat_dim) if hidden != feat_dim else None,
    )


def init_params(
    cfg: ModelConfig,
    attr_dim: int,
    feat_dim: int,
    rng: Optional[np.random.Generator] = None,
    dtype=DEFAULT_DTYPE,
) -> ModelParams:
    """Fresh parameters: uniform +-sqrt(6/(fan_in+fan_out)) weights, zero
    biases, alpha = beta = 1. Deterministic given the rng (or cfg.init_seed)."""
    if rng is None:
        rng = make_rng(cfg.init_seed)
    p = build_params(cfg, attr_dim, feat_dim, dtype=dtype)
    for a in p.affines():
        fi, fo = a.weight.shape
        drawn = AffineParams.init(rng, fi, fo, dtype=dtype)
        a.weight[...] = drawn.weight
        a.bias[...] = drawn.bias
    return p


def flatten(p: ModelParams) -> np.ndarray:
    parts = []
    for kind, a, b in p.walk():
        if kind == "tensor":
            parts.append(a.ravel())
        else:
            parts.append(np.array([getattr(a, b)], dtype=p.dtype))
    return np.concatenate(parts)


def grads_flat(p: ModelParams) -> np.ndarray:
    parts = []
    for kind, a, b in p.walk():
        if kind == "tensor":
            parts.append(b.ravel())
        else:
            parts.append(np.array([getattr(a, "grad_" + b)], dtype=p.dtype))
    return np.concatenate(parts)


def unflatten(template: ModelParams, vec: np.ndarray) -> ModelParams:
    """Fresh ModelParams with the template's structure and vec's values."""
    vec = np.asarray(vec)
    if vec.shape != (template.n_params(),):
        raise ValueError(f"expected flat vector of length {template.n_params()}")
    cfg = ModelConfig(
        hidden_width=template.hidden,
        logit_scale=template.logit_scale,
        disable_self_gating=not template.gated,
        normalization=template.normalization,
    )
    p = build_params(cfg, template.attr_dim, template.feat_dim, dtype=template.dtype)
    pos = 0
    for kind, a, b in p.walk():
        if kind == "tensor":
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        else:
            setattr(a, b, float(vec[pos]))
            pos += 1
    return p


def self_gate(p: ModelParams, attrs: np.ndarray):
    """Gated attribute embedding: relu(A W_a) * sigmoid(A W_s) + relu(A W_b).

    With gating ablated this is a single relu(A W_a).
    """
    za, ca = affine_forward(p.phi_a, attrs)
    ra, cra = relu_forward(za)
    if not p.gated:
        return ra, ("plain", ca, cra)
    zs, cs = affine_forward(p.phi_s, attrs)
    s, css = sigmoid_forward(zs)
    zb, cb = affine_forward(p.phi_b, attrs)
    rb, crb = relu_forward(zb)
    g = ra * s + rb
    return g, ("gated", ca, cra, cs, css, cb, crb, ra, s)


def self_gate_backward(p: ModelParams, cache, dg: np.ndarray) -> np.ndarray:
    if cache[0] == "plain":
        _, ca, cra = cache
        return affine_backward(p.phi_a, ca, relu_backward(cra, dg))
    _, ca, cra, cs, css, cb, crb, ra, s = cache
    da = affine_backward(p.phi_a, ca, relu_backward(cra, dg * s))
    da += affine_backward(p.phi_s, cs, sigmoid_backward(css, dg * ra))
    da += affine_backward(p.phi_b, cb, relu_backward(crb, dg))
    return da


def _norm_forward(p: ModelParams, scn: SCNParams, h: np.ndarray):
    if p.normalization == "none":
        return h, None
    if p.normalization == "plain_cn":
        # alpha = beta = 1 frozen: same formula, scales never trained
        frozen = SCNParams(eps_var=scn.eps_var)
        y, cache = scn_forward(frozen, h)
        return y, ("plain", frozen, cache)
    y, cache = scn_forward(scn, h)
    return y, ("scn", scn, cache)


def _norm_backward(ncache, dy: np.ndarray) -> np.ndarray:
    if ncache is None:
        return dy
    kind, params, cache = ncache
    return scn_backward(params, cache, dy, train_scales=(kind == "scn"))


def embed_attributes(p: ModelParams, attrs: np.ndarray):
    """Map attribute rows into the visual feature space."""
    if attrs.shape[1] != p.attr_dim:
        raise ValueError(f"attribute dim {attrs.shape[1]} != {p.attr_dim}")
    g, gcache = self_gate(p, attrs)
    h1, n1 = _norm_forward(p, p.scn1, g)
    h2, pcache = affine_forward(p.proj, h1)
    h3, n2 = _norm_forward(p, p.scn2, h2)
    if p.out is not None:
        e, ocache = affine_forward(p.out, h3)
    else:
        e, ocache = h3, None
    return e, (gcache, n1, pcache, n2, ocache)


def embed_attributes_backward(p: ModelParams, cache, de: np.ndarray) -> np.ndarray:
    gcache, n1, pcache, n2, ocache = cache
    if ocache is not None:
        de = affine_backward(p.out, ocache, de)
    dh2 = _norm_backward(n2, de)
    dh1 = affine_backward(p.proj, pcache, dh2)
    dg = _norm_backward(n1, dh1)
    return self_gate_backward(p, gcache, dg)


def forward_logits(p: ModelParams, x: np.ndarray, attrs_cand: np.ndarray):
    """Scaled cosine similarity of each feature row against each embedded
    candidate attribute row."""
    if attrs_cand.shape[0] < 1:
        raise ValueError("candidate set must be nonempty")
    e, ecache = embed_attributes(p, attrs_cand)
    logits, ccache = cosine_logits(x, e, p.logit_scale)
    return logits, (ecache, ccache)


def loss_and_grads(p: ModelParams, x: np.ndarray, labels: np.ndarray, attrs_cand: np.ndarray):
    """Cross-entropy over the candidate classes and the full flat gradient.

    Gradient buffers are zeroed on entry; labels index rows of attrs_cand.
    """
    p.zero_grads()
    logits, (ecache, ccache) = forward_logits(p, x, attrs_cand)
    loss, dlogits = softmax_xent(logits, labels)
    if not np.isfinite(loss):
        raise NonFiniteError("training loss is non-finite")
    _, de = cosine_backward(ccache, dlogits)
    embed_attributes_backward(p, ecache, de)
    return loss, grads_flat(p)


def predict(p: ModelParams, x: np.ndarray, attrs_cand: np.ndarray) -> np.ndarray:
    """Argmax candidate index per feature row; ties go to the lowest index."""
    logits, _ = forward_logits(p, x, attrs_cand)
    return np.argmax(logits, axis=1)


def make_predictor(p: ModelParams) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    return lambda x, attrs_cand: predict(p, x, attrs_cand)


def episode_objective(template: ModelParams, features, labels, attrs_cand):
    """Bind one batch into a theta -> (loss, grad) callable for the optimizer."""

    def objective(theta: np.ndarray):
        p = unflatten(template, theta)
        return loss_and_grads(p, features, labels, attrs_cand)

    return objective


# --- checkpoint format -------------------------------------------------------
#
# Little-endian byte layout, version 1:
#   magic  4s   "MCZP"
#   u32    version
#   u32    attr_dim, u32 feat_dim, u32 hidden
#   u32    gated (1/0), u32 norm_mode (0 none, 1 plain_cn, 2 scn)
#   f32    logit_scale
#   u32    n_entries; per entry: u32 ndim, u32 dim[ndim] (ndim=0: scalar)
#   f32[]  flat parameter vector in flatten order

_NORM_CODE = {"none": 0, "plain_cn": 1, "scn": 2}
_NORM_NAME = {v: k for k, v in _NORM_CODE.items()}


class CheckpointError(Exception):
    """Malformed or incompatible checkpoint file."""


def save_checkpoint(p: ModelParams, path) -> None:
    head = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack(
            "<IIIII", p.attr_dim, p.feat_dim, p.hidden, int(p.gated), _NORM_CODE[p.normalization]
        ),
        struct.pack("<f", p.logit_scale),
    ]
    pieces = list(p.walk())
    head.append(struct.pack("<I", len(pieces)))
    for kind, a, _ in pieces:
        if kind == "scalar":
            head.append(struct.pack("<I", 0))
        else:
            head.append(struct.pack("<I", a.ndim))
            head.append(struct.pack(f"<{a.ndim}I", *a.shape))
    vec = flatten(p).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"".join(head))
        f.write(vec.tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")

    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    attr_dim, feat_dim, hidden, gated, norm_code = take("<IIIII")
    (logit_scale,) = take("<f")
    if norm_code not in _NORM_NAME:
        raise CheckpointError(f"unknown normalization code {norm_code}")
    cfg = ModelConfig(
        hidden_width=hidden,
        logit_scale=float(logit_scale),
        disable_self_gating=not bool(gated),
        normalization=_NORM_NAME[norm_code],
    )
    p = build_params(cfg, attr_dim, feat_dim, dtype=np.float32)
    (n_entries,) = take("<I")
    pieces = list(p.walk())
    if n_entries != len(pieces):
        raise CheckpointError("shape table does not match architecture")
    for kind, a, _ in pieces:
        (ndim,) = take("<I")
        dims = take(f"<{ndim}I") if ndim else ()
        want = () if kind == "scalar" else a.shape
        if tuple(dims) != tuple(want):
            raise CheckpointError(f"shape table mismatch: file {dims} vs model {want}")
    n = p.n_params()
    if len(blob) - pos != 4 * n:
        raise CheckpointError("truncated or oversized parameter payload")
    vec = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).astype(np.float32)
    return unflatten(p, vec)
