"""Training losses: noise-prediction MSE and the weighted feature-space
distance between text-region crops, with a small fixed conv stack standing
in for a recognizer's last feature layer."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .schedule import NoiseSchedule


def loss_cd(eps: np.ndarray, eps_pred: np.ndarray):
    """Mean squared error between drawn and predicted noise."""
    if eps.shape != eps_pred.shape:
        raise ValueError("eps/eps_pred shape mismatch")
    diff = eps_pred - eps
    val = float(np.mean(diff * diff))
    return val, diff


def loss_cd_backward(cache, d_val: float = 1.0) -> np.ndarray:
    diff = cache
    return d_val * 2.0 * diff / diff.size


def crop_text_regions(image: np.ndarray, regions: Sequence) -> list[np.ndarray]:
    """Axis-aligned crops, one per region, over the tight bbox of each quad.

    `regions` holds objects exposing .bbox() -> (x0, y0, x1, y1) or raw
    4-tuples. Returns copies in region order.
    """
    h, w = image.shape[:2]
    crops = []
    for i, r in enumerate(regions):
        x0, y0, x1, y1 = r.bbox() if hasattr(r, "bbox") else r
        ix0, iy0 = int(np.floor(x0)), int(np.floor(y0))
        ix1, iy1 = int(np.ceil(x1)), int(np.ceil(y1))
        if ix0 < 0 or iy0 < 0 or ix1 > w or iy1 > h or ix0 >= ix1 or iy0 >= iy1:
            raise ValueError(f"region {i} bbox ({x0},{y0},{x1},{y1}) outside {w}x{h} image")
        crops.append(image[iy0:iy1, ix0:ix1].copy())
    return crops


def conv2d(x: np.ndarray, w: np.ndarray):
    """Same-padded stride-1 convolution; x is (H, W, Cin), w is (k, k, Cin, Cout)."""
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, Cin, k, k)
    out = np.einsum("hwckl,klcd->hwd", windows, w)
    return out, (x.shape, w)


def conv2d_backward(cache, d_out: np.ndarray):
    x_shape, w = cache
    k = w.shape[0]
    pad = k // 2
    h, width = x_shape[0], x_shape[1]
    dxp = np.zeros((h + 2 * pad, width + 2 * pad, x_shape[2]))
    for ki in range(k):
        for kj in range(k):
            dxp[ki : ki + h, kj : kj + width] += d_out @ w[ki, kj].T
    return dxp[pad : pad + h, pad : pad + width]


def conv2d_grad_w(x: np.ndarray, w_shape, d_out: np.ndarray) -> np.ndarray:
    k = w_shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(0, 1))
    return np.einsum("hwckl,hwd->klcd", windows, d_out)


class FeatureExtractor:
    """Fixed (non-trainable) 3-layer tanh conv stack mapping a crop to a
    feature map of the same spatial size. Weights are frozen at creation, so
    only input gradients are ever needed."""

    def __init__(self, c_in: int, c_hidden: int, c_out: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weights = [
            rng.normal(0.0, 0.5, (3, 3, c_in, c_hidden)),
            rng.normal(0.0, 0.5, (3, 3, c_hidden, c_hidden)),
            rng.normal(0.0, 0.5, (3, 3, c_hidden, c_out)),
        ]

    def forward(self, x: np.ndarray):
        caches = []
        h = x
        for i, w in enumerate(self.weights):
            z, c_conv = conv2d(h, w)
            if i < len(self.weights) - 1:
                a = np.tanh(z)
                caches.append((c_conv, a))
                h = a
            else:
                caches.append((c_conv, None))
                h = z
        return h, caches

    def backward(self, caches, d_out: np.ndarray) -> np.ndarray:
        d = d_out
        for c_conv, act in reversed(caches):
            if act is not None:
                d = d * (1.0 - act * act)
            d = conv2d_backward(c_conv, d)
        return d

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


class IdentityFeature:
    """Pass-through feature map, handy as an oracle stand-in."""

    def forward(self, x: np.ndarray):
        return x, None

    def backward(self, cache, d_out: np.ndarray) -> np.ndarray:
        return d_out


def loss_text(
    crops_truth: Sequence[np.ndarray],
    crops_pred: Sequence[np.ndarray],
    t: int,
    schedule: NoiseSchedule,
    feature_fn,
):
    """Weighted feature-space MSE over paired text-region crops.

    Per region: phi(t) / (h*w) * sum over feature entries of the squared
    difference, summed across regions. Gradients flow only through the
    predicted crops.
    """
    if len(crops_truth) != len(crops_pred):
        raise ValueError("crop list length mismatch")
    phi = float(schedule.phi(t))
    val = 0.0
    caches = []
    for s, sp in zip(crops_truth, crops_pred):
        f_true, _ = feature_fn.forward(s)
        f_pred, cache_pred = feature_fn.forward(sp)
        diff = f_pred - f_true
        hw = f_pred.shape[0] * f_pred.shape[1]
        val += phi / hw * float(np.sum(diff * diff))
        caches.append((cache_pred, diff, hw))
    return val, (caches, phi, feature_fn)


def loss_text_backward(cache, d_val: float = 1.0) -> list[np.ndarray]:
    caches, phi, feature_fn = cache
    grads = []
    for cache_pred, diff, hw in caches:
        d_feat = d_val * phi / hw * 2.0 * diff
        grads.append(feature_fn.backward(cache_pred, d_feat))
    return grads


def total_loss(l_cd: float, l_text: float, lam: float) -> float:
    """Weighted objective: noise-prediction loss plus lam * text loss."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return l_cd + lam * l_text
