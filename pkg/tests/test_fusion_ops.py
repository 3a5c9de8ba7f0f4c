"""Fusion primitives: forward semantics, invariants, gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textscene.fusion import (
    AttentionParams,
    adaptive_fuse,
    cross_attention,
    identity_projection,
    project_fused,
    rms_norm,
)
from textscene.fusion.gradcheck import ALL_CHECKS, rel_error, run_gradient_suite, run_invariant_checks


def make_params(c, seed=0, eps=1e-6):
    return AttentionParams.create(c, np.random.default_rng(seed), eps=eps)


# --- rms_norm -----------------------------------------------------------------


def test_rms_norm_zero_input():
    out, _ = rms_norm(np.zeros((1, 3, 8)), np.ones(8), 1e-6)
    assert (out == 0).all()


def test_rms_norm_constant_vector():
    x = np.full((1, 2, 16), 3.7)
    out, _ = rms_norm(x, np.ones(16), 1e-12)
    assert np.allclose(out, 1.0, atol=1e-9)


def test_rms_norm_gain_scales():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4))
    gain = np.array([1.0, 2.0, 0.5, -1.0])
    out, _ = rms_norm(x, gain, 1e-6)
    base, _ = rms_norm(x, np.ones(4), 1e-6)
    assert np.allclose(out, base * gain)


# --- cross attention ------------------------------------------------------------


def test_single_key_attention_copies_value_row():
    rng = np.random.default_rng(1)
    c = 6
    y = rng.normal(size=(1, 4, c))
    y_z = rng.normal(size=(1, 1, c))  # one text token
    params = make_params(c)
    y_a, _ = cross_attention(y, y_z, params)
    zn, _ = rms_norm(y_z, params.gain_z, params.eps)
    v_row = zn @ params.w_v
    assert np.allclose(y_a, np.broadcast_to(v_row, y_a.shape), atol=1e-12)


def test_zero_query_key_gives_uniform_attention():
    rng = np.random.default_rng(2)
    c = 5
    y = rng.normal(size=(1, 3, c))
    y_z = rng.normal(size=(1, 7, c))
    params = make_params(c)
    params.w_q = np.zeros((c, c))
    params.w_k = np.zeros((c, c))
    y_a, _ = cross_attention(y, y_z, params)
    zn, _ = rms_norm(y_z, params.gain_z, params.eps)
    v_mean = (zn @ params.w_v).mean(axis=1, keepdims=True)
    assert np.allclose(y_a, np.broadcast_to(v_mean, y_a.shape), atol=1e-12)


def test_attention_shape_mismatch():
    params = make_params(4)
    with pytest.raises(ValueError, match="shape mismatch"):
        cross_attention(np.zeros((1, 3, 4)), np.zeros((1, 3, 5)), params)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_attention_rows_and_hull(seed):
    rng = np.random.default_rng(seed)
    b, t, s, c = 2, 4, 5, 6
    y = rng.normal(size=(b, t, c))
    y_z = rng.normal(size=(b, s, c))
    params = make_params(c, seed)
    y_a, cache = cross_attention(y, y_z, params)
    attn = cache[7]
    assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-12)
    zn, _ = rms_norm(y_z, params.gain_z, params.eps)
    v = zn @ params.w_v
    assert (y_a >= v.min(axis=1, keepdims=True) - 1e-9).all()
    assert (y_a <= v.max(axis=1, keepdims=True) + 1e-9).all()


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_attention_kv_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    c = 4
    y = rng.normal(size=(1, 3, c))
    y_z = rng.normal(size=(1, 6, c))
    params = make_params(c, seed)
    base, _ = cross_attention(y, y_z, params)
    perm = rng.permutation(6)
    permuted, _ = cross_attention(y, y_z[:, perm], params)
    assert np.abs(base - permuted).max() <= 1e-12


# --- gating and projection --------------------------------------------------------


def test_fuse_alpha_zero_duplicates():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(1, 3, 4))
    y_a = rng.normal(size=(1, 3, 4))
    y_f, _ = adaptive_fuse(y, y_a, 0.0)
    assert np.array_equal(y_f[..., :4], y)
    assert np.array_equal(y_f[..., 4:], y)


def test_fuse_gate_saturation():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(1, 3, 4))
    y_a = rng.normal(size=(1, 3, 4))
    y_f, _ = adaptive_fuse(y, y_a, 20.0)
    assert np.abs(y_f[..., 4:] - (y + y_a)).max() < 1e-8


def test_fuse_gate_law_sampled_alphas():
    rng = np.random.default_rng(5)
    y = rng.normal(size=(2, 3, 4))
    y_a = rng.normal(size=(2, 3, 4))
    for alpha in (-2.0, -0.5, 0.0, 0.5, 2.0):
        y_f, _ = adaptive_fuse(y, y_a, alpha)
        assert np.abs(y_f[..., 4:] - (y + math.tanh(alpha) * y_a)).max() <= 1e-12
        assert np.array_equal(y_f[..., :4], y)


def test_projection_identity_init():
    rng = np.random.default_rng(6)
    y = rng.normal(size=(1, 5, 8))
    y_a = rng.normal(size=(1, 5, 8))
    y_f, _ = adaptive_fuse(y, y_a, 0.0)
    out, _ = project_fused(y_f, identity_projection(8))
    assert np.array_equal(out, y)


def test_projection_zeros():
    out, _ = project_fused(np.ones((1, 2, 8)), np.zeros((8, 4)))
    assert (out == 0).all()


def test_projection_shape_check():
    with pytest.raises(ValueError, match="shape mismatch"):
        project_fused(np.ones((1, 2, 8)), np.zeros((6, 4)))


# --- gradient checks ----------------------------------------------------------------


@pytest.mark.parametrize("op", sorted(ALL_CHECKS))
def test_gradients_match_finite_differences(op):
    fn = ALL_CHECKS[op]
    for seed in range(10):
        errs = fn(seed) if op == "loss_text" else fn(seed, dims=(1, 3, 4))
        worst = max(errs.values())
        assert worst < 1e-6, f"{op} seed {seed}: {errs}"


def test_invariant_suite_all_pass():
    assert all(run_invariant_checks(0).values())


def test_gradient_suite_summary():
    report = run_gradient_suite(range(3))
    assert report["max_rel_error"] < 1e-6
    assert len(report["per_tensor"]) >= 20
