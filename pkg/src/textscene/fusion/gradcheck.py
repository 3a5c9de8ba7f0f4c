"""Finite-difference verification of every hand-derived backward pass, plus
the algebraic invariants of the fusion block. Shared by the test suite and
the `fuse-check` CLI."""

from __future__ import annotations

import numpy as np

from .losses import FeatureExtractor, loss_cd, loss_cd_backward, loss_text, loss_text_backward
from .ops import (
    AttentionParams,
    adaptive_fuse,
    adaptive_fuse_backward,
    cross_attention,
    cross_attention_backward,
    identity_projection,
    project_fused,
    project_fused_backward,
    rms_norm,
    rms_norm_backward,
)
from .schedule import NoiseSchedule


def finite_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        f_plus = f(x)
        flat[i] = orig - step
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(np.asarray(a, dtype=np.float64).ravel()))
    nb = float(np.linalg.norm(np.asarray(b, dtype=np.float64).ravel()))
    diff = float(np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()))
    return diff / max(na, nb, 1e-12)


def _scalarize(out: np.ndarray, probe: np.ndarray) -> float:
    return float(np.sum(out * probe))


def check_rms_norm(seed: int, dims=(1, 3, 8)) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    b, t, c = dims
    x = rng.normal(size=(b, t, c))
    gain = rng.normal(1.0, 0.2, c)
    probe = rng.normal(size=(b, t, c))
    eps = 1e-6

    out, cache = rms_norm(x, gain, eps)
    dx, dg = rms_norm_backward(cache, probe)
    errs = {
        "x": rel_error(dx, finite_diff(lambda v: _scalarize(rms_norm(v, gain, eps)[0], probe), x)),
        "gain": rel_error(dg, finite_diff(lambda v: _scalarize(rms_norm(x, v, eps)[0], probe), gain)),
    }
    return errs


def _attn_case(rng, dims):
    b, t, c = dims
    y = rng.normal(size=(b, t, c))
    y_z = rng.normal(size=(b, max(1, t - 1), c))
    params = AttentionParams.create(c, rng)
    params.gain_y = rng.normal(1.0, 0.2, c)
    params.gain_z = rng.normal(1.0, 0.2, c)
    return y, y_z, params


def check_cross_attention(seed: int, dims=(1, 3, 4)) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    y, y_z, params = _attn_case(rng, dims)
    probe = rng.normal(size=(y.shape[0], y.shape[1], y.shape[2]))

    out, cache = cross_attention(y, y_z, params)
    dy, dy_z, dwq, dwk, dwv, dgy, dgz = cross_attention_backward(cache, probe)

    def run(y_=None, z_=None, wq=None, wk=None, wv=None, gy=None, gz=None):
        p = AttentionParams(
            w_q=params.w_q if wq is None else wq,
            w_k=params.w_k if wk is None else wk,
            w_v=params.w_v if wv is None else wv,
            gain_y=params.gain_y if gy is None else gy,
            gain_z=params.gain_z if gz is None else gz,
            eps=params.eps,
        )
        return _scalarize(cross_attention(y if y_ is None else y_, y_z if z_ is None else z_, p)[0], probe)

    return {
        "y": rel_error(dy, finite_diff(lambda v: run(y_=v), y)),
        "y_z": rel_error(dy_z, finite_diff(lambda v: run(z_=v), y_z)),
        "w_q": rel_error(dwq, finite_diff(lambda v: run(wq=v), params.w_q)),
        "w_k": rel_error(dwk, finite_diff(lambda v: run(wk=v), params.w_k)),
        "w_v": rel_error(dwv, finite_diff(lambda v: run(wv=v), params.w_v)),
        "gain_y": rel_error(dgy, finite_diff(lambda v: run(gy=v), params.gain_y)),
        "gain_z": rel_error(dgz, finite_diff(lambda v: run(gz=v), params.gain_z)),
    }


def check_adaptive_fuse(seed: int, dims=(1, 3, 4)) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    b, t, c = dims
    y = rng.normal(size=(b, t, c))
    y_a = rng.normal(size=(b, t, c))
    alpha = float(rng.normal(0.0, 0.8))
    probe = rng.normal(size=(b, t, 2 * c))

    _, cache = adaptive_fuse(y, y_a, alpha)
    dy, dya, dalpha = adaptive_fuse_backward(cache, probe)
    return {
        "y": rel_error(dy, finite_diff(lambda v: _scalarize(adaptive_fuse(v, y_a, alpha)[0], probe), y)),
        "y_a": rel_error(dya, finite_diff(lambda v: _scalarize(adaptive_fuse(y, v, alpha)[0], probe), y_a)),
        "alpha": rel_error(
            np.array([dalpha]),
            finite_diff(lambda v: _scalarize(adaptive_fuse(y, y_a, float(v[0]))[0], probe), np.array([alpha])),
        ),
    }


def check_project_fused(seed: int, dims=(1, 3, 4)) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    b, t, c = dims
    y_f = rng.normal(size=(b, t, 2 * c))
    w = identity_projection(c) + rng.normal(0.0, 0.3, (2 * c, c))
    probe = rng.normal(size=(b, t, c))

    _, cache = project_fused(y_f, w)
    dyf, dw = project_fused_backward(cache, probe)
    return {
        "y_f": rel_error(dyf, finite_diff(lambda v: _scalarize(project_fused(v, w)[0], probe), y_f)),
        "w_proj": rel_error(dw, finite_diff(lambda v: _scalarize(project_fused(y_f, v)[0], probe), w)),
    }


def check_loss_cd(seed: int, dims=(2, 3, 4)) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    eps = rng.normal(size=dims)
    eps_pred = rng.normal(size=dims)
    _, cache = loss_cd(eps, eps_pred)
    d_pred = loss_cd_backward(cache)
    return {
        "eps_pred": rel_error(d_pred, finite_diff(lambda v: loss_cd(eps, v)[0], eps_pred)),
    }


def check_loss_text(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    schedule = NoiseSchedule.linear()
    feature = FeatureExtractor(c_in=1, c_hidden=3, c_out=2, seed=seed)
    t = int(rng.integers(0, schedule.t_max))
    crops_true = [rng.normal(size=(4, 5, 1)), rng.normal(size=(3, 3, 1))]
    crops_pred = [rng.normal(size=(4, 5, 1)), rng.normal(size=(3, 3, 1))]

    _, cache = loss_text(crops_true, crops_pred, t, schedule, feature)
    grads = loss_text_backward(cache)
    errs = {}
    for i, (sp, g) in enumerate(zip(crops_pred, grads)):
        def run(v, i=i):
            trial = [c if j != i else v for j, c in enumerate(crops_pred)]
            return loss_text(crops_true, trial, t, schedule, feature)[0]

        errs[f"crop{i}"] = rel_error(g, finite_diff(run, sp))
    return errs


def check_composition(seed: int, dims=(1, 3, 4)) -> dict[str, float]:
    """One fused block end to end: attention -> gate -> projection -> MSE
    against a fixed target, with gradients checked for every leaf."""
    rng = np.random.default_rng(seed)
    b, t, c = dims
    y, y_z, params = _attn_case(rng, dims)
    alpha = float(rng.normal(0.0, 0.8))
    w_proj = identity_projection(c) + rng.normal(0.0, 0.3, (2 * c, c))
    target = rng.normal(size=(b, t, c))

    def forward(y_, z_, p: AttentionParams, a_, w_):
        y_a, _ = cross_attention(y_, z_, p)
        y_f, _ = adaptive_fuse(y_, y_a, a_)
        out, _ = project_fused(y_f, w_)
        return loss_cd(target, out)[0]

    y_a, cache_attn = cross_attention(y, y_z, params)
    y_f, cache_fuse = adaptive_fuse(y, y_a, alpha)
    out, cache_proj = project_fused(y_f, w_proj)
    _, cache_cd = loss_cd(target, out)
    d_out = loss_cd_backward(cache_cd)
    d_yf, dw = project_fused_backward(cache_proj, d_out)
    dy_direct, d_ya, dalpha = adaptive_fuse_backward(cache_fuse, d_yf)
    dy_attn, dy_z, dwq, dwk, dwv, dgy, dgz = cross_attention_backward(cache_attn, d_ya)
    dy = dy_direct + dy_attn

    def swap(p: AttentionParams, **kw) -> AttentionParams:
        return AttentionParams(
            w_q=kw.get("w_q", p.w_q),
            w_k=kw.get("w_k", p.w_k),
            w_v=kw.get("w_v", p.w_v),
            gain_y=kw.get("gain_y", p.gain_y),
            gain_z=kw.get("gain_z", p.gain_z),
            eps=p.eps,
        )

    return {
        "y": rel_error(dy, finite_diff(lambda v: forward(v, y_z, params, alpha, w_proj), y)),
        "y_z": rel_error(dy_z, finite_diff(lambda v: forward(y, v, params, alpha, w_proj), y_z)),
        "w_q": rel_error(dwq, finite_diff(lambda v: forward(y, y_z, swap(params, w_q=v), alpha, w_proj), params.w_q)),
        "w_k": rel_error(dwk, finite_diff(lambda v: forward(y, y_z, swap(params, w_k=v), alpha, w_proj), params.w_k)),
        "w_v": rel_error(dwv, finite_diff(lambda v: forward(y, y_z, swap(params, w_v=v), alpha, w_proj), params.w_v)),
        "gain_y": rel_error(dgy, finite_diff(lambda v: forward(y, y_z, swap(params, gain_y=v), alpha, w_proj), params.gain_y)),
        "gain_z": rel_error(dgz, finite_diff(lambda v: forward(y, y_z, swap(params, gain_z=v), alpha, w_proj), params.gain_z)),
        "alpha": rel_error(
            np.array([dalpha]),
            finite_diff(lambda v: forward(y, y_z, params, float(v[0]), w_proj), np.array([alpha])),
        ),
        "w_proj": rel_error(dw, finite_diff(lambda v: forward(y, y_z, params, alpha, v), w_proj)),
    }


ALL_CHECKS = {
    "rms_norm": check_rms_norm,
    "cross_attention": check_cross_attention,
    "adaptive_fuse": check_adaptive_fuse,
    "project_fused": check_project_fused,
    "loss_cd": check_loss_cd,
    "loss_text": lambda seed, dims=None: check_loss_text(seed),
    "composition": check_composition,
}


def run_gradient_suite(seeds, dims=(1, 3, 4)) -> dict:
    """Gradient-check every op over the given seeds; returns max relative
    error per (op, tensor) and the overall worst case."""
    worst: dict[str, float] = {}
    for seed in seeds:
        for op, fn in ALL_CHECKS.items():
            errs = fn(seed, dims=dims) if op != "loss_text" else fn(seed)
            for name, err in errs.items():
                key = f"{op}.{name}"
                worst[key] = max(worst.get(key, 0.0), err)
    return {"per_tensor": worst, "max_rel_error": max(worst.values())}


def run_invariant_checks(seed: int, dims=(2, 5, 8), n_cases: int = 50) -> dict[str, bool]:
    """Algebraic invariants of the fusion block and the noise schedule."""
    rng = np.random.default_rng(seed)
    b, t, c = dims
    results = {
        "attention_rows_sum_to_one": True,
        "attention_convex_hull": True,
        "alpha_zero_identity": True,
        "kv_permutation_invariance": True,
        "schedule_monotone": True,
        "schedule_coeff_identity": True,
    }
    for _ in range(n_cases):
        y, y_z, params = _attn_case(rng, dims)
        yn, _ = rms_norm(y, params.gain_y, params.eps)
        zn, _ = rms_norm(y_z, params.gain_z, params.eps)
        q = yn @ params.w_q
        k = zn @ params.w_k
        v = zn @ params.w_v
        from .ops import softmax

        attn = softmax(np.einsum("btc,bsc->bts", q, k) / np.sqrt(c))
        if not np.allclose(attn.sum(axis=-1), 1.0, atol=1e-12):
            results["attention_rows_sum_to_one"] = False
        y_a = np.einsum("bts,bsc->btc", attn, v)
        vmin = v.min(axis=1, keepdims=True) - 1e-9
        vmax = v.max(axis=1, keepdims=True) + 1e-9
        if not ((y_a >= vmin).all() and (y_a <= vmax).all()):
            results["attention_convex_hull"] = False

        y_a2, _ = cross_attention(y, y_z, params)
        y_f, _ = adaptive_fuse(y, y_a2, 0.0)
        out, _ = project_fused(y_f, identity_projection(c))
        if not np.array_equal(out, y):
            results["alpha_zero_identity"] = False

        perm = rng.permutation(y_z.shape[1])
        y_a_perm, _ = cross_attention(y, y_z[:, perm], params)
        if np.max(np.abs(y_a_perm - y_a2)) > 1e-12:
            results["kv_permutation_invariance"] = False

    schedule = NoiseSchedule.linear()
    if not (np.diff(schedule.alpha_bar) < 0).all():
        results["schedule_monotone"] = False
    coeff = schedule.signal_coeff(np.arange(schedule.t_max)) ** 2 + (1.0 - schedule.alpha_bar)
    if not np.allclose(coeff, 1.0, atol=1e-12):
        results["schedule_coeff_identity"] = False
    return results
