"""Attention-fusion primitives with hand-derived backward passes.

Every forward returns (output, cache); the paired *_backward consumes the
cache plus the upstream gradient and returns gradients for each input in
the order the forward took them. Shapes are (batch, tokens, channels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    gain_y: np.ndarray
    gain_z: np.ndarray
    eps: float = 1e-6

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def create(cls, channels: int, rng: np.random.Generator, eps: float = 1e-6) -> "AttentionParams":
        scale = 1.0 / math.sqrt(channels)
        return cls(
            w_q=rng.normal(0.0, scale, (channels, channels)),
            w_k=rng.normal(0.0, scale, (channels, channels)),
            w_v=rng.normal(0.0, scale, (channels, channels)),
            gain_y=np.ones(channels),
            gain_z=np.ones(channels),
            eps=eps,
        )


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float):
    """Per-token root-mean-square normalization with a learnable gain."""
    ms = np.mean(x * x, axis=-1, keepdims=True)
    r = np.sqrt(ms + eps)
    out = x / r * gain
    return out, (x, gain, r)


def rms_norm_backward(cache, d_out: np.ndarray):
    x, gain, r = cache
    c = x.shape[-1]
    dg = np.sum(d_out * x / r, axis=tuple(range(x.ndim - 1)))
    inner = np.sum(d_out * gain * x, axis=-1, keepdims=True)
    dx = d_out * gain / r - x * inner / (c * r**3)
    return dx, dg


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_attention(y: np.ndarray, y_z: np.ndarray, params: AttentionParams):
    """Single-head attention: normalized `y` queries attend over normalized
    `y_z` keys/values and pull text information into the object branch."""
    if y.shape[-1] != y_z.shape[-1] or y.shape[0] != y_z.shape[0]:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_z.shape}")
    c = y.shape[-1]
    yn, cache_y = rms_norm(y, params.gain_y, params.eps)
    zn, cache_z = rms_norm(y_z, params.gain_z, params.eps)
    q = yn @ params.w_q
    k = zn @ params.w_k
    v = zn @ params.w_v
    attn = softmax(np.einsum("btc,bsc->bts", q, k) / math.sqrt(c))
    y_a = np.einsum("bts,bsc->btc", attn, v)
    return y_a, (cache_y, cache_z, yn, zn, q, k, v, attn, params)


def cross_attention_backward(cache, d_ya: np.ndarray):
    cache_y, cache_z, yn, zn, q, k, v, attn, params = cache
    c = q.shape[-1]
    dv = np.einsum("bts,btc->bsc", attn, d_ya)
    da = np.einsum("btc,bsc->bts", d_ya, v)
    dlogits = attn * (da - np.sum(da * attn, axis=-1, keepdims=True))
    dq = np.einsum("bts,bsc->btc", dlogits, k) / math.sqrt(c)
    dk = np.einsum("bts,btc->bsc", dlogits, q) / math.sqrt(c)
    dw_q = np.einsum("btc,btd->cd", yn, dq)
    dw_k = np.einsum("bsc,bsd->cd", zn, dk)
    dw_v = np.einsum("bsc,bsd->cd", zn, dv)
    dyn = dq @ params.w_q.T
    dzn = dk @ params.w_k.T + dv @ params.w_v.T
    dy, dg_y = rms_norm_backward(cache_y, dyn)
    dy_z, dg_z = rms_norm_backward(cache_z, dzn)
    return dy, dy_z, dw_q, dw_k, dw_v, dg_y, dg_z


def adaptive_fuse(y: np.ndarray, y_a: np.ndarray, alpha: float):
    """Gated channel concat: [y, y + tanh(alpha) * y_a]."""
    if y.shape != y_a.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_a.shape}")
    g = math.tanh(alpha)
    y_f = np.concatenate([y, y + g * y_a], axis=-1)
    return y_f, (y_a, alpha)


def adaptive_fuse_backward(cache, d_yf: np.ndarray):
    y_a, alpha = cache
    c = y_a.shape[-1]
    d1 = d_yf[..., :c]
    d2 = d_yf[..., c:]
    g = math.tanh(alpha)
    dy = d1 + d2
    dy_a = g * d2
    dalpha = (1.0 - g * g) * float(np.sum(d2 * y_a))
    return dy, dy_a, dalpha


def identity_projection(channels: int) -> np.ndarray:
    """(2C, C) map passing the first half through and dropping the second, so
    a zero-gated fuse followed by this projection is an exact identity."""
    w = np.zeros((2 * channels, channels))
    w[:channels] = np.eye(channels)
    return w


def project_fused(y_f: np.ndarray, w_proj: np.ndarray):
    """Fold the doubled channels back to C for the downstream block."""
    if y_f.shape[-1] != w_proj.shape[0]:
        raise ValueError(f"shape mismatch: {y_f.shape} vs {w_proj.shape}")
    return y_f @ w_proj, (y_f, w_proj)


def project_fused_backward(cache, d_out: np.ndarray):
    y_f, w_proj = cache
    d_yf = d_out @ w_proj.T
    dw = np.einsum("btc,btd->cd", y_f, d_out)
    return d_yf, dw
