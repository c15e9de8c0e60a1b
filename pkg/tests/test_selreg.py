import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classsel import numnet as nn
from classsel.selreg import (
    RegularizerConfig,
    avoid_selectivity_ties,
    batch_loss_fn,
    cross_entropy,
    mean_si_and_grad,
    regularized_loss,
    regularizer_activation_grads,
    selectivity_margin,
)


def fake_trace(logits, responses):
    responses = [np.asarray(r, dtype=float) for r in responses]
    return nn.ForwardTrace([], np.asarray(logits, dtype=float), list(range(len(responses))), responses, 0)


def deep_mlp(seed=0, slope=0.0):
    net = nn.build_network((6,), [("dense", 5), ("dense", 4), ("dense", 4), ("dense", 3)], 3, slope=slope, seed=seed)
    # positive biases keep a fully dead layer from pinning the next pre-activation at exactly 0
    rng = np.random.default_rng(seed)
    for p in net.params:
        if "b" in p:
            p["b"] = rng.uniform(0.05, 0.2, p["b"].shape)
    return net


def test_alpha_zero_is_plain_cross_entropy():
    rng = np.random.default_rng(0)
    tr = fake_trace(rng.standard_normal((8, 3)), [rng.random((8, 2))])
    y = rng.integers(0, 3, 8)
    br = regularized_loss(tr, y, RegularizerConfig(alpha=0.0))
    assert br.total == br.cross_entropy == cross_entropy(tr.logits, y)[0]


@pytest.mark.parametrize("alpha", [-3.0, 0.0, 2.5])
def test_uniform_logits_identical_units(alpha):
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    tr = fake_trace(np.zeros((8, 4)), [np.ones((8, 3))])
    br = regularized_loss(tr, y, RegularizerConfig(alpha=alpha))
    assert br.cross_entropy == pytest.approx(math.log(4), rel=1e-14)
    assert br.mu_si == 0.0
    assert br.total == pytest.approx(math.log(4), rel=1e-14)


def test_one_class_responder_is_penalised_when_alpha_negative():
    y = np.array([0, 1, 2, 3])
    layer = np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    tr = fake_trace(np.zeros((4, 4)), [layer])
    br = regularized_loss(tr, y, RegularizerConfig(alpha=-1.0))
    # unit 0: SI = 1/(1+eps); unit 1: SI = 0
    expected_mu = 0.5 * (1.0 / (1.0 + 1e-7))
    assert br.mu_si == pytest.approx(expected_mu, rel=1e-14)
    assert br.total == pytest.approx(br.cross_entropy + expected_mu, rel=1e-14)


def test_alpha_zero_activation_grads_empty():
    rng = np.random.default_rng(1)
    tr = fake_trace(rng.standard_normal((8, 3)), [rng.random((8, 2)), rng.random((8, 3))])
    grads = regularizer_activation_grads(tr, rng.integers(0, 3, 8), RegularizerConfig(alpha=0.0))
    assert all(g is None for g in grads)


def test_full_loss_finite_differences_batch_32():
    rng = np.random.default_rng(7)
    net = nn.build_network((5,), [("dense", 6), ("dense", 4)], 3, seed=7)
    x = nn.avoid_kinks(net, rng.standard_normal((32, 5)), 1e-4)
    y = rng.integers(0, 3, 32)
    assert nn.grad_check(net, x, batch_loss_fn(y, RegularizerConfig(alpha=-1.0))) < 1e-4


def test_gradient_sign_on_top_class_mean():
    y = np.array([0, 0, 1, 1, 2, 2])
    r = np.array([[2.0], [2.2], [0.5], [0.7], [0.1], [0.3]])
    cfg = RegularizerConfig(alpha=-1.0)
    g = regularizer_activation_grads(fake_trace(np.zeros((6, 3)), [r]), y, cfg)[0]
    d_top = g[y == 0].sum()
    assert d_top > 0
    # finite-difference oracle: raise every top-class response (i.e. mu_max) by h
    h = 1e-6
    bump = np.where(y[:, None] == 0, h, 0.0)
    up = regularized_loss(fake_trace(np.zeros((6, 3)), [r + bump]), y, cfg).total
    down = regularized_loss(fake_trace(np.zeros((6, 3)), [r - bump]), y, cfg).total
    fd = (up - down) / (2 * h)
    assert fd > 0
    assert d_top == pytest.approx(fd, rel=1e-6)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.floats(-5, 5), mask=st.sampled_from(["all", "first3", "last3"]))
def test_breakdown_identity(seed, alpha, mask):
    rng = np.random.default_rng(seed)
    resp = [np.maximum(rng.standard_normal((12, k)), 0) for k in (3, 2, 4, 5)]
    tr = fake_trace(rng.standard_normal((12, 3)), resp)
    br = regularized_loss(tr, rng.integers(0, 3, 12), RegularizerConfig(alpha=alpha, layer_mask=mask))
    assert abs(br.total - (br.cross_entropy - alpha * br.mu_si)) <= 1e-12 * max(1.0, abs(br.total))


def test_first3_leaves_other_layers_untouched():
    rng = np.random.default_rng(3)
    resp = [rng.random((10, 3)) for _ in range(5)]
    grads = regularizer_activation_grads(
        fake_trace(rng.standard_normal((10, 3)), resp), rng.integers(0, 3, 10), RegularizerConfig(-1.0, layer_mask="first3")
    )
    assert all(g is not None and np.any(g != 0) for g in grads[:3])
    assert grads[3] is None and grads[4] is None


def test_mask_resolution():
    assert RegularizerConfig(layer_mask="last3").masked_layers(5) == [2, 3, 4]
    assert RegularizerConfig(layer_mask="first3").masked_layers(2) == [0, 1]
    assert RegularizerConfig(layer_mask=[4, 1]).masked_layers(5) == [1, 4]
    with pytest.raises(ValueError):
        RegularizerConfig(layer_mask=[5]).masked_layers(5)
    with pytest.raises(ValueError):
        RegularizerConfig().masked_layers(0)
    with pytest.raises(ValueError):
        RegularizerConfig(layer_mask="middle")
    with pytest.raises(ValueError):
        RegularizerConfig(eps=0.0)


def test_single_class_batch_is_degenerate():
    r = np.random.default_rng(0).random((6, 3))
    si, g = mean_si_and_grad(r, np.zeros(6, dtype=int), 3)
    assert np.all(si == 0) and np.all(g == 0)
    tr = fake_trace(np.zeros((6, 3)), [r])
    br, _, ag = regularized_loss(tr, np.zeros(6, dtype=int), RegularizerConfig(alpha=2.0), want_grads=True)
    assert br.mu_si == 0.0 and np.all(ag[0] == 0) and np.all(np.isfinite(ag[0]))


def test_absent_class_gets_no_gradient_and_is_excluded():
    # three classes configured, class 2 absent from the batch
    y = np.array([0, 0, 1, 1])
    r = np.array([[3.0], [1.0], [1.0], [1.0]])
    si, _ = mean_si_and_grad(r, y, 3)
    assert si[0] == pytest.approx((2.0 - 1.0) / (3.0 + 1e-7))


def test_min_shift_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    r = rng.standard_normal((15, 3))
    y = rng.integers(0, 3, 15)
    for shift in ("nonneg", "min"):
        _, g = mean_si_and_grad(r, y, 3, shift=shift)
        fd = np.zeros_like(r)
        h = 1e-6
        for i in range(r.shape[0]):
            for j in range(r.shape[1]):
                rp, rm = r.copy(), r.copy()
                rp[i, j] += h
                rm[i, j] -= h
                fd[i, j] = (
                    mean_si_and_grad(rp, y, 3, want_grad=False, shift=shift)[0].mean()
                    - mean_si_and_grad(rm, y, 3, want_grad=False, shift=shift)[0].mean()
                ) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


@settings(max_examples=12, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    alpha=st.sampled_from([-2.0, -0.1, 0.0, 0.1, 2.0]),
    mask=st.sampled_from(["all", "first3", "last3"]),
    slope=st.sampled_from([0.0, 0.2]),
)
def test_gradient_property(seed, alpha, mask, slope):
    rng = np.random.default_rng(seed)
    net = deep_mlp(seed, slope)
    y = rng.integers(0, 3, 24)
    cfg = RegularizerConfig(alpha=alpha, layer_mask=mask)
    x = avoid_selectivity_ties(net, rng.standard_normal((24, 6)), y, cfg, 1e-4, rng)
    assert nn.grad_check(net, x, batch_loss_fn(y, cfg)) < 1e-4


def test_selectivity_margin_top_gap():
    # class means per unit: [1, 3] and [2, 2.5]
    trace = fake_trace(np.zeros((4, 2)), [[[1.0, 2.0], [1.0, 2.0], [3.0, 2.5], [3.0, 2.5]]])
    y = [0, 0, 1, 1]
    assert selectivity_margin(trace, y, RegularizerConfig(alpha=1.0)) == pytest.approx(0.5)
    assert selectivity_margin(trace, y, RegularizerConfig(alpha=0.0)) == math.inf


def test_selectivity_margin_skips_exact_ties():
    # a silent unit and a constant unit tie exactly and stay tied under small steps
    trace = fake_trace(np.zeros((4, 2)), [[[0.0, 0.7], [0.0, 0.7], [0.0, 0.7], [0.0, 0.7]]])
    assert selectivity_margin(trace, [0, 0, 1, 1], RegularizerConfig(alpha=1.0)) == math.inf


def test_selectivity_margin_shift_gap():
    # leaky responses: the two lowest values are 0.01 apart, the top gap is larger
    trace = fake_trace(np.zeros((4, 2)), [[[-0.30], [-0.29], [1.0], [2.0]]])
    assert selectivity_margin(trace, [0, 0, 1, 1], RegularizerConfig(alpha=1.0)) == pytest.approx(0.01)


def test_avoid_selectivity_ties_breaks_near_tie():
    net = nn.build_network((2,), [("dense", 2)], 2, seed=0)
    net.params[0]["W"] = np.eye(2)
    net.params[0]["b"] = np.full(2, 1.0)
    x = np.array([[0.0, 0.0], [1e-6, 0.0], [0.0, 0.0], [0.0, 2e-6]])
    y = np.array([0, 0, 1, 1])
    cfg = RegularizerConfig(alpha=1.0)
    assert selectivity_margin(nn.forward(net, x), y, cfg) < 1e-4
    out = avoid_selectivity_ties(net, x, y, cfg, margin=1e-4, rng=np.random.default_rng(0), scale=1e-2)
    assert selectivity_margin(nn.forward(net, out), y, cfg) > 1e-4
    assert nn.min_preactivation_margin(net, out) > 1e-4
