import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicenter import head as H
from multicenter.variants import VariantConfig, am_backward, am_logits, margin_mask, mixup_labels, smooth_label
from oracles import central_diff, rel_err


def test_variant_config_ranges():
    VariantConfig()
    for bad in (dict(smoothing_eps=1.0), dict(mixup_alpha=0.0), dict(am_margin=-0.1), dict(am_scale=0.0)):
        with pytest.raises(ValueError):
            VariantConfig(**bad)


def test_smooth_label_examples():
    tau = np.array([0.5, 0.25, 0.25, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(smooth_label(tau, 0.0, 6), tau)
    np.testing.assert_allclose(smooth_label([1.0, 0, 0, 0], 0.4, 4), [0.7, 0.1, 0.1, 0.1], atol=1e-15)
    np.testing.assert_allclose(smooth_label(tau, 0.12, 6), [0.46, 0.24, 0.24, 0.02, 0.02, 0.02], atol=1e-15)


def test_smooth_label_checks():
    with pytest.raises(ValueError):
        smooth_label([1.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        smooth_label([1.0, 0.0], 0.1, 3)


def test_mixup_examples():
    cfg = H.HeadConfig(2, 3, 2)
    a, b = H.build_label(0, cfg), H.build_label(2, cfg)
    np.testing.assert_array_equal(mixup_labels(a, b, 1.0), a)
    half = mixup_labels([1.0, 0.0], [0.0, 1.0], 0.5)
    np.testing.assert_array_equal(half, [0.5, 0.5])
    mixed = mixup_labels(a, b, 0.3)
    np.testing.assert_allclose(mixed, 0.3 * a + 0.7 * b, atol=0)
    assert abs(mixed.sum() - 1.0) < 1e-12
    with pytest.raises(ValueError):
        mixup_labels(a, b[:-1], 0.5)
    with pytest.raises(ValueError):
        mixup_labels(a, b, 1.5)


@settings(max_examples=200)
@given(C=st.integers(2, 12), K=st.integers(1, 6), alpha=st.floats(0.05, 1.0), eps=st.floats(0.0, 0.99),
       lam=st.floats(0.0, 1.0), data=st.data())
def test_variant_labels_stay_normalized(C, K, alpha, eps, lam, data):
    cfg = H.HeadConfig(2, C, K, alpha)
    t1, t2 = data.draw(st.integers(0, C - 1)), data.draw(st.integers(0, C - 1))
    a = smooth_label(H.build_label(t1, cfg), eps)
    b = H.build_label(t2, cfg)
    for lab in (a, mixup_labels(a, b, lam)):
        assert lab.min() >= 0.0
        assert abs(lab.sum() - 1.0) < 1e-12


@settings(max_examples=200)
@given(C=st.integers(2, 12), K=st.integers(1, 6), alpha=st.floats(0.3, 1.0), frac=st.floats(0.0, 0.999), data=st.data())
def test_smoothing_preserves_argmax(C, K, alpha, frac, data):
    rest = (1 - alpha) / K
    if alpha <= rest:
        return
    S = C * (K + 1)
    bound = (alpha - rest) * S / (S - 1)
    eps = min(frac * bound, 0.999)
    t = data.draw(st.integers(0, C - 1))
    tau = H.build_label(t, H.HeadConfig(2, C, K, alpha))
    assert np.argmax(smooth_label(tau, eps)) == np.argmax(tau) == H.slot_index(t, 0, K)


def _instance(seed, d=4, C=3, K=2, n=5):
    rng = np.random.default_rng(seed)
    cfg = H.HeadConfig(d, C, K, 0.5)
    params = H.HeadParams(rng.normal(size=(d, C)), 0.3 * rng.normal(size=(d, C)))
    ew = H.sample_sub_centers(params, cfg, None, eps=rng.normal(size=(d, C * K)))
    return cfg, params, ew, rng.normal(size=(n, d)), rng.integers(0, C, size=n)


def test_am_logits_margin_free_are_cosines():
    cfg, params, ew, x, y = _instance(0)
    z = am_logits(x, ew, y, VariantConfig(am_margin=0.0, am_scale=1.0))
    assert np.all(np.abs(z) <= 1.0 + 1e-15)
    xn = x / np.linalg.norm(x, axis=1, keepdims=True)
    wn = ew.Wm / np.linalg.norm(ew.Wm, axis=0, keepdims=True)
    np.testing.assert_allclose(z, xn @ wn, atol=1e-14)


def test_am_logits_direct_evaluation():
    # cos = 0.9 between x and the only column
    x = np.array([[1.0, 0.0]])
    ew = H.ExpandedWeights(np.array([[0.9, 0.9], [math.sqrt(0.19), math.sqrt(0.19)]]), np.zeros((2, 0)), 0)
    z = am_logits(x, ew, [0], VariantConfig(am_margin=0.35, am_scale=30.0))
    assert z[0, 0] == pytest.approx(16.5, abs=1e-12)
    assert z[0, 1] == pytest.approx(27.0, abs=1e-12)


def test_am_logits_scale_invariance():
    cfg, params, ew, x, y = _instance(1)
    vc = VariantConfig()
    base = am_logits(x, ew, y, vc)
    np.testing.assert_allclose(am_logits(2 * x, ew, y, vc), base, atol=1e-10)
    scaled = H.ExpandedWeights(ew.Wm * np.array([0.5, 3.0, 1.0, 7.0, 2.0, 1.0, 1.0, 9.0, 0.1]), ew.eps, ew.K)
    np.testing.assert_allclose(am_logits(x, scaled, y, vc), base, atol=1e-10)


def test_am_zero_norm_rejected():
    cfg, params, ew, x, y = _instance(2)
    x[3] = 0.0
    with pytest.raises(ValueError, match="index 3"):
        am_logits(x, ew, y, VariantConfig())
    ew.Wm[:, 4] = 0.0
    with pytest.raises(ValueError, match="index 4"):
        am_logits(np.ones((2, 4)), ew, [0, 1], VariantConfig())


def test_margin_mask_on_and_off():
    on = margin_mask([1], 3, 2, True)
    off = margin_mask([1], 3, 2, False)
    assert on[0].tolist() == [False] * 3 + [True] * 3 + [False] * 3
    assert off[0].tolist() == [False] * 3 + [True] + [False] * 5


def test_am_backward_finite_differences():
    cfg, params, ew, x, y = _instance(3)
    vc = VariantConfig(am_scale=5.0)
    mask = margin_mask(y, 3, 2, True)
    T = H.build_labels(y, cfg)
    _, grads = am_backward(x, mask, T, ew, params, cfg, vc)
    W, ls, X = params.W.copy(), params.log_sigma.copy(), x.copy()

    def f():
        p = H.HeadParams(W, ls)
        e = H.sample_sub_centers(p, cfg, None, eps=ew.eps)
        xn = X / np.linalg.norm(X, axis=1, keepdims=True)
        wn = e.Wm / np.linalg.norm(e.Wm, axis=0, keepdims=True)
        z = vc.am_scale * (xn @ wn - vc.am_margin * mask)
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return -np.mean(np.sum(T * logp, axis=1)) + H.sigma_loss(ls)

    for analytic, arr in ((grads.dW, W), (grads.dlog_sigma, ls), (grads.dX, X)):
        assert rel_err(analytic, central_diff(f, arr)) < 1e-6
