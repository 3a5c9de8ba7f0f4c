"""Desk-scale training loop: a stack of gated attention-fusion layers
conditions a small stand-in denoiser on a synthetic denoising task whose
clean latents are a global mix of the text-branch features, so lowering the
loss requires opening the fusion gate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import FeatureExtractor, loss_cd, loss_cd_backward, total_loss
from .ops import (
    AttentionParams,
    adaptive_fuse,
    adaptive_fuse_backward,
    cross_attention,
    cross_attention_backward,
    identity_projection,
    project_fused,
    project_fused_backward,
)
from .schedule import NoiseSchedule, corrupt_latent


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step


@dataclass
class FusionConfig:
    """Where fusion layers attach and how the gate starts.

    `query_side` picks which branch issues attention queries; the object
    branch is the default, with the text branch supplying keys/values.
    """

    attach_indices: tuple[int, ...] = (0, 1, 2, 3)
    alpha_init: float = 0.0
    channels: int = 16
    query_side: str = "object"

    def __post_init__(self):
        if len(set(self.attach_indices)) != len(self.attach_indices):
            raise ValueError("attach_indices must be distinct")
        if any(i < 0 for i in self.attach_indices):
            raise ValueError("attach_indices must be non-negative")
        if self.query_side not in ("object", "text"):
            raise ValueError("query_side must be 'object' or 'text'")


@dataclass
class FusionLayer:
    attn: AttentionParams
    alpha: float
    w_proj: np.ndarray

    @classmethod
    def create(cls, channels: int, alpha_init: float, rng: np.random.Generator) -> "FusionLayer":
        return cls(
            attn=AttentionParams.create(channels, rng),
            alpha=alpha_init,
            w_proj=identity_projection(channels),
        )


def fusion_layer_forward(y: np.ndarray, y_z: np.ndarray, layer: FusionLayer, query_side: str = "object"):
    if query_side == "object":
        y_a, cache_attn = cross_attention(y, y_z, layer.attn)
    else:
        y_a, cache_attn = cross_attention(y_z, y, layer.attn)
    y_fused, cache_fuse = adaptive_fuse(y, y_a, layer.alpha)
    out, cache_proj = project_fused(y_fused, layer.w_proj)
    return out, (cache_attn, cache_fuse, cache_proj, query_side)


@dataclass
class FusionLayerGrads:
    d_wq: np.ndarray
    d_wk: np.ndarray
    d_wv: np.ndarray
    d_gy: np.ndarray
    d_gz: np.ndarray
    d_alpha: float
    d_wproj: np.ndarray


def fusion_layer_backward(cache, d_out: np.ndarray):
    cache_attn, cache_fuse, cache_proj, query_side = cache
    d_yf, d_wproj = project_fused_backward(cache_proj, d_out)
    dy_direct, d_ya, d_alpha = adaptive_fuse_backward(cache_fuse, d_yf)
    d_q_in, d_kv_in, d_wq, d_wk, d_wv, d_gy, d_gz = cross_attention_backward(cache_attn, d_ya)
    if query_side == "object":
        dy = dy_direct + d_q_in
        dy_z = d_kv_in
    else:
        dy = dy_direct + d_kv_in
        dy_z = d_q_in
    grads = FusionLayerGrads(d_wq, d_wk, d_wv, d_gy, d_gz, d_alpha, d_wproj)
    return dy, dy_z, grads


def fusion_stack_forward(y: np.ndarray, y_z: np.ndarray, layers, query_side: str = "object"):
    caches = []
    for layer in layers:
        y, cache = fusion_layer_forward(y, y_z, layer, query_side)
        caches.append(cache)
    return y, caches


def fusion_stack_backward(caches, d_y: np.ndarray):
    d_y_z_total = None
    grads: list[FusionLayerGrads] = []
    for cache in reversed(caches):
        d_y, d_y_z, g = fusion_layer_backward(cache, d_y)
        d_y_z_total = d_y_z if d_y_z_total is None else d_y_z_total + d_y_z
        grads.append(g)
    grads.reverse()
    return d_y, d_y_z_total, grads


# --- batched convolution for the stand-in denoiser ---------------------------


def conv_batch(x: np.ndarray, w: np.ndarray):
    """Same-padded 3x3 convolution over (B, H, W, Cin)."""
    k = w.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B,H,W,C,k,k)
    out = np.einsum("bhwckl,klcd->bhwd", windows, w)
    return out, (x, w)


def conv_batch_backward(cache, d_out: np.ndarray):
    x, w = cache
    k = w.shape[0]
    pad = k // 2
    b, h, width, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))
    dw = np.einsum("bhwckl,bhwd->klcd", windows, d_out)
    dxp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki : ki + h, kj : kj + width] += d_out @ w[ki, kj].T
    return dxp[:, pad : pad + h, pad : pad + width], dw


def sinusoidal_embedding(t_max: int, dim: int) -> np.ndarray:
    """(t_max, dim) table of interleaved sin/cos features of the step index."""
    t = np.arange(t_max)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(dim // 2) / max(1, dim // 2))
    ang = t * freqs[None, :]
    emb = np.zeros((t_max, dim))
    emb[:, 0::2] = np.sin(ang)
    emb[:, 1::2] = np.cos(ang)
    return emb


# --- synthetic task -----------------------------------------------------------


@dataclass
class ToyTask:
    """Fixed synthetic denoising problem.

    The clean latent z0 is a frozen global linear mix of the text-branch
    conditioning z_g, so local convolutions alone cannot explain it; pulling
    text information through the gated attention path is what pays off.
    """

    z_b: np.ndarray      # (B, h, w, c_b) object-branch conditioning
    z_g: np.ndarray      # (B, h, w, c_g) text-branch conditioning
    z_0: np.ndarray      # (B, h, w, c_lat) clean latents
    embed_b: np.ndarray  # (c_b, C) fixed token embedding
    embed_g: np.ndarray  # (c_g, C)
    w_dec: np.ndarray    # (c_lat, 1) fixed decoder to the toy image
    regions: tuple[tuple[int, int, int, int], ...]
    feature_fn: FeatureExtractor
    schedule: NoiseSchedule
    t_draw: np.ndarray   # (B,) fixed corruption times
    eps_draw: np.ndarray  # fixed corruption noise, shaped like z_0

    @classmethod
    def create(
        cls,
        seed: int = 0,
        batch: int = 24,
        h: int = 8,
        w: int = 8,
        c_lat: int = 4,
        c_b: int = 2,
        c_g: int = 2,
        channels: int = 16,
    ) -> "ToyTask":
        rng = np.random.default_rng(seed)
        z_b = rng.normal(size=(batch, h, w, c_b))
        z_g = rng.normal(size=(batch, h, w, c_g))
        n_in = h * w * c_g
        n_out = h * w * c_lat
        mix = rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out))
        z_0 = (z_g.reshape(batch, n_in) @ mix).reshape(batch, h, w, c_lat)
        schedule = NoiseSchedule.linear()
        return cls(
            z_b=z_b,
            z_g=z_g,
            z_0=z_0,
            embed_b=rng.normal(0.0, 1.0 / math.sqrt(c_b), (c_b, channels)),
            embed_g=rng.normal(0.0, 1.0 / math.sqrt(c_g), (c_g, channels)),
            w_dec=rng.normal(0.0, 1.0 / math.sqrt(c_lat), (c_lat, 1)),
            regions=((0, 0, w // 2, h // 2), (w // 2, h // 2, w, h)),
            feature_fn=FeatureExtractor(c_in=1, c_hidden=4, c_out=2, seed=seed + 1),
            schedule=schedule,
            t_draw=rng.integers(0, schedule.t_max, batch),
            eps_draw=rng.normal(size=(batch, h, w, c_lat)),
        )

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.z_0.shape


@dataclass
class ToyModel:
    layers: list[FusionLayer]
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_cond: np.ndarray
    temb: np.ndarray  # fixed sinusoidal table
    query_side: str

    @classmethod
    def create(
        cls,
        config: FusionConfig,
        task: ToyTask,
        rng: np.random.Generator,
        hidden: int = 12,
        cond_scale: float = 0.4,
    ) -> "ToyModel":
        if config.channels != task.embed_b.shape[1]:
            raise ValueError("config.channels must match the task's token width")
        c_lat = task.z_0.shape[-1]
        c_in = c_lat + task.z_b.shape[-1] + task.z_g.shape[-1]
        layers = [FusionLayer.create(config.channels, config.alpha_init, rng) for _ in config.attach_indices]
        return cls(
            layers=layers,
            w1=rng.normal(0.0, 0.1, (3, 3, c_in, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 0.1, (3, 3, hidden, c_lat)),
            b2=np.zeros(c_lat),
            w_cond=rng.normal(0.0, cond_scale, (task.embed_b.shape[1], hidden)),
            temb=sinusoidal_embedding(task.schedule.t_max, hidden),
            query_side=config.query_side,
        )

    def predict_noise(self, task: ToyTask, z_t: np.ndarray, t: np.ndarray):
        b, h, w, _ = z_t.shape
        y0 = task.z_b.reshape(b, h * w, -1) @ task.embed_b
        yz = task.z_g.reshape(b, h * w, -1) @ task.embed_g
        y_out, fusion_caches = fusion_stack_forward(y0, yz, self.layers, self.query_side)
        cond = (y_out @ self.w_cond).reshape(b, h, w, -1)
        inp = np.concatenate([z_t, task.z_b, task.z_g], axis=-1)
        z1, cache1 = conv_batch(inp, self.w1)
        z1 = z1 + self.b1 + self.temb[t][:, None, None, :] + cond
        a1 = np.tanh(z1)
        eps_pred, cache2 = conv_batch(a1, self.w2)
        eps_pred = eps_pred + self.b2
        return eps_pred, (fusion_caches, y_out, cache1, a1, cache2, (b, h, w))

    def backward(self, cache, d_eps_pred: np.ndarray):
        fusion_caches, y_out, cache1, a1, cache2, (b, h, w) = cache
        d_a1, d_w2 = conv_batch_backward(cache2, d_eps_pred)
        d_b2 = d_eps_pred.sum(axis=(0, 1, 2))
        d_z1 = d_a1 * (1.0 - a1 * a1)
        _, d_w1 = conv_batch_backward(cache1, d_z1)
        d_b1 = d_z1.sum(axis=(0, 1, 2))
        d_cond = d_z1.reshape(b, h * w, -1)
        d_wcond = np.einsum("btc,btd->cd", y_out, d_cond)
        d_yout = d_cond @ self.w_cond.T
        _, _, layer_grads = fusion_stack_backward(fusion_caches, d_yout)
        return {
            "w1": d_w1,
            "b1": d_b1,
            "w2": d_w2,
            "b2": d_b2,
            "w_cond": d_wcond,
            "layers": layer_grads,
        }

    def apply_grads(self, grads, lr: float) -> None:
        self.w1 -= lr * grads["w1"]
        self.b1 -= lr * grads["b1"]
        self.w2 -= lr * grads["w2"]
        self.b2 -= lr * grads["b2"]
        self.w_cond -= lr * grads["w_cond"]
        for layer, g in zip(self.layers, grads["layers"]):
            layer.attn.w_q -= lr * g.d_wq
            layer.attn.w_k -= lr * g.d_wk
            layer.attn.w_v -= lr * g.d_wv
            layer.attn.gain_y -= lr * g.d_gy
            layer.attn.gain_z -= lr * g.d_gz
            layer.alpha -= lr * g.d_alpha
            layer.w_proj -= lr * g.d_wproj


@dataclass
class TraceStep:
    step: int
    loss_cd: float
    loss_text: float
    alpha: float

    def to_dict(self) -> dict:
        return {"step": self.step, "loss_cd": self.loss_cd, "loss_text": self.loss_text, "alpha": self.alpha}


@dataclass
class TrainingTrace:
    records: list[TraceStep] = field(default_factory=list)
    total_losses: list[float] = field(default_factory=list)
    final_alphas: tuple[float, ...] = ()

    @property
    def initial_loss(self) -> float:
        return self.total_losses[0]

    @property
    def final_loss(self) -> float:
        return self.total_losses[-1]


def _batched_features(feature_fn: FeatureExtractor, crops: np.ndarray):
    """Batched mirror of FeatureExtractor.forward over (B, h, w, c) crops."""
    caches = []
    h = crops
    for i, w in enumerate(feature_fn.weights):
        z, c_conv = conv_batch(h, w)
        if i < len(feature_fn.weights) - 1:
            a = np.tanh(z)
            caches.append((c_conv, a))
            h = a
        else:
            caches.append((c_conv, None))
            h = z
    return h, caches


def _batched_features_backward(caches, d_out: np.ndarray) -> np.ndarray:
    d = d_out
    for c_conv, act in reversed(caches):
        if act is not None:
            d = d * (1.0 - act * act)
        d, _ = conv_batch_backward(c_conv, d)
    return d


def _objective(model: ToyModel, task: ToyTask, lam: float):
    """Loss and gradients against the task's fixed corruption draw."""
    z_t = corrupt_latent(task.z_0, task.t_draw, task.eps_draw, task.schedule)
    eps_pred, cache = model.predict_noise(task, z_t, task.t_draw)
    l_cd, cache_cd = loss_cd(task.eps_draw, eps_pred)
    d_eps = loss_cd_backward(cache_cd)

    batch = task.z_0.shape[0]
    l_text_val = 0.0
    if lam > 0.0:
        x_true = task.z_0 @ task.w_dec
        sc = task.schedule.signal_coeff(task.t_draw).reshape(batch, 1, 1, 1)
        nc = task.schedule.noise_coeff(task.t_draw).reshape(batch, 1, 1, 1)
        z0_hat = (z_t - nc * eps_pred) / sc
        x_pred = z0_hat @ task.w_dec
        d_xpred = np.zeros_like(x_pred)
        phi = task.schedule.phi(task.t_draw).reshape(batch, 1, 1, 1)
        for x0, y0, x1, y1 in task.regions:
            f_true, _ = _batched_features(task.feature_fn, x_true[:, y0:y1, x0:x1])
            f_pred, cache_feat = _batched_features(task.feature_fn, x_pred[:, y0:y1, x0:x1])
            diff = f_pred - f_true
            hw = diff.shape[1] * diff.shape[2]
            l_text_val += float(np.sum(phi.reshape(batch) * np.sum(diff * diff, axis=(1, 2, 3)) / hw)) / batch
            d_feat = (lam / batch) * phi / hw * 2.0 * diff
            d_xpred[:, y0:y1, x0:x1] += _batched_features_backward(cache_feat, d_feat)
        d_z0hat = d_xpred @ task.w_dec.T
        d_eps = d_eps + d_z0hat * (-nc / sc)

    grads = model.backward(cache, d_eps)
    return l_cd, l_text_val, grads


def toy_train(
    config: FusionConfig,
    task: ToyTask,
    steps: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    lam: float = 0.01,
) -> TrainingTrace:
    """Plain gradient descent over fusion, gate, projection, and denoiser
    parameters on the task's fixed corruption draw. The trace records one
    (step, loss_cd, loss_text, alpha) row per step."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    model = ToyModel.create(config, task, rng)
    trace = TrainingTrace()
    for step in range(steps):
        l_cd, l_text_val, grads = _objective(model, task, lam)
        total = total_loss(l_cd, l_text_val, lam)
        if not math.isfinite(total):
            raise TrainingDiverged(step)
        trace.records.append(TraceStep(step, l_cd, l_text_val, model.layers[0].alpha))
        trace.total_losses.append(total)
        model.apply_grads(grads, lr)
    trace.final_alphas = tuple(layer.alpha for layer in model.layers)
    return trace
