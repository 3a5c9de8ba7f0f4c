"""Training losses and the crop/feature plumbing."""

import numpy as np
import pytest
from scipy.signal import correlate

from textscene.fusion import (
    FeatureExtractor,
    IdentityFeature,
    NoiseSchedule,
    crop_text_regions,
    loss_cd,
    loss_cd_backward,
    loss_text,
    loss_text_backward,
    total_loss,
)
from textscene.fusion.losses import conv2d
from textscene.manifest import TextRegion


def region(x0, y0, w, h):
    return TextRegion(
        text="t", quad=(x0, y0, x0 + w, y0, x0 + w, y0 + h, x0, y0 + h),
        font_px=10, rotation_deg=0.0, lines=1, bold=False, border=False,
    )


# --- loss_cd -----------------------------------------------------------------


def test_loss_cd_zero_on_equal():
    rng = np.random.default_rng(0)
    eps = rng.normal(size=(2, 3, 3, 4))
    assert loss_cd(eps, eps.copy())[0] == 0.0


def test_loss_cd_unit_case():
    eps = np.zeros((2, 5))
    pred = np.ones((2, 5))
    assert loss_cd(eps, pred)[0] == 1.0


def test_loss_cd_matches_naive_sum():
    rng = np.random.default_rng(1)
    eps = rng.normal(size=(3, 4, 5))
    pred = rng.normal(size=(3, 4, 5))
    naive = sum((a - b) ** 2 for a, b in zip(eps.flat, pred.flat)) / eps.size
    assert abs(loss_cd(eps, pred)[0] - naive) < 1e-12


def test_loss_cd_shape_mismatch():
    with pytest.raises(ValueError):
        loss_cd(np.zeros((2, 2)), np.zeros((2, 3)))


def test_loss_cd_backward_is_mse_gradient():
    rng = np.random.default_rng(2)
    eps = rng.normal(size=(4, 4))
    pred = rng.normal(size=(4, 4))
    _, cache = loss_cd(eps, pred)
    grad = loss_cd_backward(cache)
    assert np.allclose(grad, 2.0 * (pred - eps) / eps.size)


# --- crops ----------------------------------------------------------------------


def test_crop_simple_slice():
    rng = np.random.default_rng(3)
    img = rng.normal(size=(64, 64, 3))
    crops = crop_text_regions(img, [region(10, 10, 40, 20)])
    assert len(crops) == 1
    assert crops[0].shape == (20, 40, 3)
    assert np.array_equal(crops[0], img[10:30, 10:50])


def test_crop_zero_regions():
    assert crop_text_regions(np.zeros((8, 8)), []) == []


def test_crop_deterministic_on_copies():
    rng = np.random.default_rng(4)
    img = rng.normal(size=(32, 32))
    copy = img.copy()
    regs = [region(2, 3, 10, 8), region(15, 14, 12, 12)]
    for a, b in zip(crop_text_regions(img, regs), crop_text_regions(copy, regs)):
        assert np.array_equal(a, b)


def test_crop_out_of_bounds():
    with pytest.raises(ValueError, match="outside"):
        crop_text_regions(np.zeros((16, 16)), [region(10, 10, 10, 4)])


def test_crop_order_preserved():
    img = np.arange(64.0).reshape(8, 8)
    regs = [region(4, 4, 3, 3), region(0, 0, 3, 3)]
    crops = crop_text_regions(img, regs)
    assert crops[0][0, 0] == img[4, 4]
    assert crops[1][0, 0] == img[0, 0]


# --- loss_text --------------------------------------------------------------------


class FlatPhi:
    """Schedule stand-in with a directly controlled weight."""

    def __init__(self, value):
        self.value = value

    def phi(self, t):
        return self.value


def test_loss_text_zero_on_equal():
    rng = np.random.default_rng(5)
    crops = [rng.normal(size=(4, 4, 1)), rng.normal(size=(3, 5, 1))]
    feature = FeatureExtractor(1, 3, 2, seed=0)
    val, _ = loss_text(crops, [c.copy() for c in crops], 100, NoiseSchedule.linear(), feature)
    assert val == 0.0


def test_loss_text_linear_in_phi():
    rng = np.random.default_rng(6)
    s = [rng.normal(size=(4, 4, 1))]
    sp = [rng.normal(size=(4, 4, 1))]
    feature = IdentityFeature()
    v1, _ = loss_text(s, sp, 0, FlatPhi(0.3), feature)
    v2, _ = loss_text(s, sp, 0, FlatPhi(0.6), feature)
    assert v2 == pytest.approx(2.0 * v1, rel=1e-12)


def test_loss_text_identity_feature_matches_hand_sum():
    rng = np.random.default_rng(7)
    s = [rng.normal(size=(2, 2, 1))]
    sp = [rng.normal(size=(2, 2, 1))]
    phi = 0.42
    val, _ = loss_text(s, sp, 0, FlatPhi(phi), IdentityFeature())
    hand = phi / 4.0 * float(((s[0] - sp[0]) ** 2).sum())
    assert abs(val - hand) < 1e-12


def test_loss_text_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        loss_text([np.zeros((2, 2, 1))], [], 0, NoiseSchedule.linear(), IdentityFeature())


def test_loss_text_backward_identity_feature():
    rng = np.random.default_rng(8)
    s = [rng.normal(size=(3, 3, 1))]
    sp = [rng.normal(size=(3, 3, 1))]
    phi = 0.7
    _, cache = loss_text(s, sp, 0, FlatPhi(phi), IdentityFeature())
    grads = loss_text_backward(cache)
    assert np.allclose(grads[0], phi / 9.0 * 2.0 * (sp[0] - s[0]))


# --- conv oracle --------------------------------------------------------------------


def test_conv2d_matches_scipy_correlate():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(7, 6, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    out, _ = conv2d(x, w)
    for d in range(2):
        expected = np.zeros((7, 6))
        for c in range(3):
            expected += correlate(np.pad(x[..., c], 1), w[..., c, d], mode="valid")
        assert np.allclose(out[..., d], expected, atol=1e-12)


# --- total loss ----------------------------------------------------------------------


def test_total_loss_lambda_zero():
    assert total_loss(0.37, 99.0, 0.0) == 0.37


def test_total_loss_arithmetic():
    assert total_loss(0.5, 0.25, 2.0) == 1.0


def test_total_loss_negative_lambda_rejected():
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.5)


def test_total_loss_gradient_is_weighted_sum():
    """d(total)/d(pred) equals grad(l_cd) + lam * grad(l_text) when both
    losses read the same prediction, checked by finite differences."""
    rng = np.random.default_rng(10)
    lam = 0.37
    truth = rng.normal(size=(4, 4, 1))
    pred = rng.normal(size=(4, 4, 1))
    feature = FeatureExtractor(1, 3, 2, seed=1)
    schedule = NoiseSchedule.linear()
    t = 200

    def full(p):
        l1, _ = loss_cd(truth, p)
        l2, _ = loss_text([truth], [p], t, schedule, feature)
        return total_loss(l1, l2, lam)

    _, cache_cd = loss_cd(truth, pred)
    _, cache_tx = loss_text([truth], [pred], t, schedule, feature)
    analytic = loss_cd_backward(cache_cd) + lam * loss_text_backward(cache_tx)[0]

    h = 1e-6
    fd = np.zeros_like(pred)
    it = np.nditer(pred, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = pred[idx]
        pred[idx] = orig + h
        fp = full(pred)
        pred[idx] = orig - h
        fm = full(pred)
        pred[idx] = orig
        fd[idx] = (fp - fm) / (2 * h)
        it.iternext()
    assert np.abs(analytic - fd).max() < 1e-6
