import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from classsel import selmetrics as sm


def naive_layer_si(acts, labels, n_classes, eps=1e-7):
    """Loop-by-loop reference: samples, then classes, per unit."""
    n, u = acts.shape
    out = []
    for j in range(u):
        sums = [0.0] * n_classes
        counts = [0] * n_classes
        for i in range(n):
            sums[labels[i]] += acts[i, j]
            counts[labels[i]] += 1
        present = [c for c in range(n_classes) if counts[c] > 0]
        if len(present) < 2:
            out.append(0.0)
            continue
        means = {c: sums[c] / counts[c] for c in present}
        top = present[0]
        for c in present:
            if means[c] > means[top]:
                top = c
        rest = 0.0
        for c in present:
            if c != top:
                rest += means[c]
        rest = min(rest / (len(present) - 1), means[top])
        out.append((means[top] - rest) / (means[top] + rest + eps))
    return np.array(out)


def test_class_means_simple():
    ccm = sm.class_conditional_means([[1.0], [3.0]], [0, 1], 2)
    np.testing.assert_array_equal(ccm.means, [[1.0], [3.0]])


def test_class_means_absent_class():
    ccm = sm.class_conditional_means([[2.0], [4.0]], [0, 0], 2)
    assert ccm.means[0, 0] == 3.0
    assert list(ccm.present) == [True, False]


def test_class_means_six_samples():
    acts = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]])
    ccm = sm.class_conditional_means(acts, [0, 0, 0, 1, 1, 1], 2)
    np.testing.assert_array_equal(ccm.means, [[2.0], [5.0]])


def test_class_means_empty():
    with pytest.raises(ValueError):
        sm.class_conditional_means(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)


def test_si_identical_means():
    assert sm.selectivity_index([0.5, 0.5, 0.5, 0.5]) == 0.0


def test_si_single_class_responder():
    assert sm.selectivity_index([1.0, 0.0, 0.0, 0.0]) == pytest.approx(1 / (1 + 1e-7), rel=1e-15)


def test_si_direct_evaluation():
    # max 0.6, other means 0.2
    si = sm.selectivity_index([0.6, 0.2, 0.2, 0.2])
    assert si == pytest.approx(0.4 / (0.8 + 1e-7), rel=1e-14)
    assert si == pytest.approx(0.49999994, abs=1e-8)


def test_si_dead_unit():
    assert sm.selectivity_index([0.0, 0.0, 0.0]) == 0.0


def test_si_single_class_is_zero():
    assert sm.selectivity_index([0.9]) == 0.0


def test_si_tie_uses_lowest_class():
    top, mx, rest = sm._max_and_rest(np.array([[0.5], [0.5], [0.1]]), np.ones(3, dtype=bool))
    assert top[0] == 0 and mx[0] == 0.5 and rest[0] == pytest.approx(0.3)


def test_network_mean_si_cases():
    assert sm.network_mean_si([[0.2], [0.4]]) == pytest.approx(0.3)
    assert sm.network_mean_si([[0, 0, 0, 1], [0.5]]) == 0.375
    assert sm.network_mean_si([[0.1, 0.3]]) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        sm.network_mean_si([])


def test_precision_cases():
    labels = np.array([0] * 5 + [1] * 5)
    acts = np.array([9, 8, 7, 6, 5, 0, 0, 0, 0, 0], dtype=float)
    assert sm.precision(acts, labels, 5) == 1.0
    uniform = np.arange(10)
    assert sm.precision(np.ones(10), uniform, 10) == pytest.approx(0.1)
    # 74 of the top 200 from one class
    labels = np.array([0] * 74 + [1] * 63 + [2] * 63 + [0] * 100)
    acts = np.concatenate([np.linspace(10, 5, 200), np.zeros(100)])
    assert sm.precision(acts, labels, 200) == pytest.approx(0.37)
    with pytest.raises(ValueError):
        sm.precision(acts, labels, 0)


def test_dead_units():
    acts = np.array([[0.0, 1e-12, -0.3], [0.0, 0.0, 0.2]])
    assert list(sm.dead_units(acts)) == [True, False, False]


def test_responsiveness():
    col = lambda k: np.array([1.0] * k + [0.0] * (10 - k))[:, None]
    frac, sparse = sm.responsiveness(np.hstack([col(8), col(4), col(0)]))
    np.testing.assert_allclose(frac, [0.8, 0.4, 0.0])
    assert list(sparse) == [False, True, True]


def test_shift_nonneg():
    acts = np.array([[-1.0, 0.0, -3.0], [2.0, 2.0, -1.0]])
    np.testing.assert_array_equal(sm.shift_nonneg(acts), [[0, 0, 0], [3, 2, 2]])


@st.composite
def labelled_acts(draw):
    n = draw(st.integers(2, 30))
    u = draw(st.integers(1, 5))
    c = draw(st.integers(2, 5))
    acts = draw(arrays(np.float64, (n, u), elements=st.floats(0, 10, allow_nan=False)))
    labels = np.array(draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)))
    return acts, labels, c


@settings(max_examples=200, deadline=None)
@given(labelled_acts())
def test_vectorized_matches_naive_bitwise(data):
    acts, labels, c = data
    got = sm.selectivity_from_acts(acts, labels, c)
    want = naive_layer_si(acts, labels, c)
    assert got.tobytes() == want.tobytes()
    assert np.all(got >= 0) and np.all(got < 1)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(0, 1, allow_nan=False)))
def test_si_scale_invariance(mu):
    if mu.max() < 0.1:
        mu = mu + 0.1
    exact = sm.selectivity_index(mu, eps=1e-300) if mu.sum() > 0 else 0.0
    assert abs(sm.selectivity_index(1000 * mu) - exact) < 1e-3


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-5, 5, allow_nan=False)))
def test_shift_nonneg_properties(acts):
    out = sm.shift_nonneg(acts)
    assert np.all(out >= 0)
    np.testing.assert_allclose(np.diff(out, axis=0), np.diff(acts, axis=0), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(labelled_acts())
def test_precision_bounds(data):
    acts, labels, c = data
    n = max(1, len(labels) // 2)
    for u in range(acts.shape[1]):
        p = sm.precision(acts[:, u], labels, n)
        assert 1.0 / c - 1e-12 <= p <= 1.0


def test_dead_unit_precision_is_chance_with_interleaved_labels():
    labels = np.arange(40) % 4
    assert sm.precision(np.zeros(40), labels, 20) == 0.25


def test_report_serialisation():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, 30)
    responses = [np.maximum(rng.standard_normal((30, 4)), 0), np.maximum(rng.standard_normal((30, 2)), 0)]
    responses[0][:, 1] = 0.0
    rep = sm.selectivity_report(responses, labels, 3, ["conv0", "dense1"])
    assert rep.n_dead == 1
    assert rep.mean_si == sm.network_mean_si(rep.si)
    back = sm.SelectivityReport.from_dict(json.loads(rep.to_json()))
    assert back.to_json() == rep.to_json()
    lines = rep.to_csv("r0").splitlines()
    assert lines[0] == "run,layer,unit,si,precision,dead,responsiveness"
    assert len(lines) == 1 + 6
    assert lines[2].split(",")[:3] == ["r0", "conv0", "1"]
    assert lines[2].split(",")[5] == "1"
