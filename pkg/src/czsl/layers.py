"""Differentiable primitives with hand-written forward and backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
consumes that cache plus the upstream gradient and returns the input
gradient, accumulating parameter gradients into the owning param struct.
All backwards are validated against the central finite-difference oracle
in :mod:`czsl.numerics`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import DEFAULT_DTYPE, EPS_VAR, matmul, rowwise_mean_std

# Cosine denominators below this norm are rejected rather than stabilized.
EPS_NORM = 1e-12


@dataclass
class AffineParams:
    """Weights of one fully connected layer, with parallel gradient buffers."""

    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    grad_weight: np.ndarray = field(repr=False, default=None)
    grad_bias: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.grad_weight is None:
            self.grad_weight = np.zeros_like(self.weight)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)
        if self.grad_weight.shape != self.weight.shape:
            raise ValueError("grad_weight shape mismatch")
        if self.grad_bias.shape != self.bias.shape:
            raise ValueError("grad_bias shape mismatch")

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE):
        """Uniform(-a, a) with a = sqrt(6/(fan_in+fan_out)); zero bias."""
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)
        b = np.zeros(fan_out, dtype=dtype)
        return cls(weight=w, bias=b)

    def zero_grads(self):
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0


@dataclass
class SCNParams:
    """Learnable scalar multipliers on the row mean and row std.

    y = (h - alpha*mu) / (beta*sigma) per row; alpha = beta = 1 is plain
    layer normalization without an affine gain. sigma carries eps_var
    inside the sqrt, so beta*sigma never touches zero.
    """

    alpha: float = 1.0
    beta: float = 1.0
    eps_var: float = EPS_VAR
    grad_alpha: float = 0.0
    grad_beta: float = 0.0

    def __post_init__(self):
        if self.beta == 0.0:
            raise ValueError("beta must be nonzero")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValueError("alpha/beta must be finite")

    def zero_grads(self):
        self.grad_alpha = 0.0
        self.grad_beta = 0.0


def affine_forward(p: AffineParams, x: np.ndarray):
    """y = x @ W + b, bias broadcast per row."""
    if x.shape[1] != p.weight.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.shape} vs W {p.weight.shape}")
    y = matmul(x, p.weight) + p.bias
    return y, x


def affine_backward(p: AffineParams, cache, dy: np.ndarray) -> np.ndarray:
    x = cache
    p.grad_weight += matmul(x.T, dy)
    p.grad_bias += dy.sum(axis=0)
    return matmul(dy, p.weight.T)


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(cache, dy: np.ndarray) -> np.ndarray:
    # Subgradient convention ReLU'(0) = 0.
    return np.where(cache > 0, dy, np.zeros_like(dy))


def sigmoid_forward(x: np.ndarray):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_backward(cache, dy: np.ndarray) -> np.ndarray:
    y = cache
    return dy * y * (1.0 - y)


def scn_forward(p: SCNParams, h: np.ndarray):
    """Scaled row normalization: y = (h - alpha*mu) / (beta*sigma)."""
    mean, std = rowwise_mean_std(h, p.eps_var)
    y = (h - p.alpha * mean[:, None]) / (p.beta * std[:, None])
    return y, (h, mean, std, y)


def scn_backward(p: SCNParams, cache, dy: np.ndarray, train_scales: bool = True):
    """Input gradient; alpha/beta gradients accumulate unless frozen."""
    h, mean, std, y = cache
    d = h.shape[1]
    row_dy = dy.sum(axis=1)
    row_dyy = (dy * y).sum(axis=1)
    if train_scales:
        p.grad_alpha += float(-(mean / (p.beta * std) * row_dy).sum())
        p.grad_beta += float(-(row_dyy / p.beta).sum())
    dh = (dy - (p.alpha / d) * row_dy[:, None]) / (p.beta * std[:, None])
    dh -= (h - mean[:, None]) * (row_dyy / (d * std**2))[:, None]
    return dh


def cosine_logits(x: np.ndarray, e: np.ndarray, scale: float):
    """logits[i, c] = scale * cos(x_i, e_c).

    Rows of either operand with norm <= EPS_NORM are rejected: a zero
    vector has no direction to compare.
    """
    if x.shape[1] != e.shape[1]:
        raise ValueError(f"cosine dim mismatch: {x.shape} vs {e.shape}")
    nx = np.linalg.norm(x, axis=1)
    ne = np.linalg.norm(e, axis=1)
    if np.any(nx <= EPS_NORM) or np.any(ne <= EPS_NORM):
        raise ValueError("cosine_logits: near-zero-norm row")
    u = x / nx[:, None]
    w = e / ne[:, None]
    cos = matmul(u, w.T)
    return scale * cos, (u, w, cos, nx, ne, scale)


def cosine_backward(cache, dlogits: np.ndarray):
    """Gradients w.r.t. both operands of cosine_logits."""
    u, w, cos, nx, ne, scale = cache
    dcos_rows = (dlogits * cos).sum(axis=1)  # per x-row
    dcos_cols = (dlogits * cos).sum(axis=0)  # per e-row
    dx = scale * (matmul(dlogits, w) - dcos_rows[:, None] * u) / nx[:, None]
    de = scale * (matmul(dlogits.T, u) - dcos_cols[:, None] * w) / ne[:, None]
    return dx, de


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over rows and its logits gradient.

    loss = mean_i -log softmax(logits_i)[labels_i]
    dlogits = (softmax - onehot) / n, log-sum-exp with max subtraction.
    """
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels must be one index per logits row")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("label index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    loss = float(-log_probs[np.arange(n), labels].mean())
    dlogits = exp / z
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype)
