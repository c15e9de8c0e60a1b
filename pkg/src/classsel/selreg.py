"""Cross-entropy plus the class-selectivity regularizer, with exact gradients.

    total = CE - alpha * mu_SI

mu_SI is the mean over regularized layers of the mean unit SI, where each
unit's SI comes from class means of the current minibatch.  Unit responses
pass through ``shift_nonneg`` first so leaky-ReLU layers stay in the domain
of the index; for ReLU layers the shift is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numnet import Network, backward, forward, min_preactivation_margin
from .selmetrics import DEFAULT_EPS, _max_and_rest, class_conditional_means, shift_nonneg

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class RegularizerConfig:
    alpha: float = 0.0
    eps: float = DEFAULT_EPS
    layer_mask: object = "all"  # "all" | "first3" | "last3" | iterable of response-layer indices

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if isinstance(self.layer_mask, str):
            if self.layer_mask not in ("all", "first3", "last3"):
                raise ValueError(f"unknown layer mask {self.layer_mask!r}")
        else:
            object.__setattr__(self, "layer_mask", tuple(sorted(set(int(i) for i in self.layer_mask))))

    def masked_layers(self, n_hidden: int) -> list:
        """Indices into the hidden (response) layers that are regularized.

        The output layer has no response matrix, so it can never be selected.
        """
        if self.layer_mask == "all":
            idx = list(range(n_hidden))
        elif self.layer_mask == "first3":
            idx = list(range(min(3, n_hidden)))
        elif self.layer_mask == "last3":
            idx = list(range(max(0, n_hidden - 3), n_hidden))
        else:
            idx = list(self.layer_mask)
            bad = [i for i in idx if not 0 <= i < n_hidden]
            if bad:
                raise ValueError(f"layer mask entries {bad} outside the {n_hidden} hidden layers")
        if not idx:
            raise ValueError("layer mask selects no hidden layer")
        return idx


@dataclass
class LossBreakdown:
    total: float
    cross_entropy: float
    mu_si: float
    layer_si: list = field(default_factory=list)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean CE over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    p = softmax(logits)
    py = p[np.arange(n), labels]
    ce = float(-np.mean(np.log(np.maximum(py, PROB_FLOOR))))
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    g[py < PROB_FLOOR] = 0.0
    return ce, g / n


def mean_si_and_grad(r, labels, n_classes, eps=DEFAULT_EPS, want_grad=True, shift="nonneg"):
    """Per-unit SI of ``r`` and the gradient of their mean w.r.t. ``r``.

    ``shift="nonneg"`` subtracts min(0, column min) before the index,
    ``shift="min"`` always subtracts the column minimum.  The argmax class and
    the argmin sample are held fixed when differentiating.
    """
    n, u = r.shape
    mins = r.min(axis=0)
    if shift == "nonneg":
        offset = np.minimum(0.0, mins)
    elif shift == "min":
        offset = mins
    else:
        raise ValueError(f"unknown shift {shift!r}")
    rs = r - offset
    sums = np.zeros((n_classes, u))
    np.add.at(sums, labels, rs)
    counts = np.bincount(labels, minlength=n_classes)
    present = counts > 0
    n_present = int(present.sum())
    if n_present < 2:
        return np.zeros(u), (np.zeros_like(r) if want_grad else None)
    means = np.zeros_like(sums)
    means[present] = sums[present] / counts[present, None]

    top, a, b = _max_and_rest(means, present)
    cols = np.arange(u)
    d = a + b + eps
    si = (a - b) / d
    if not want_grad:
        return si, None

    # d SI / d mu_k; absent classes get nothing
    d_mu = np.where(present[:, None], -(2 * a + eps) / (d * d * (n_present - 1)), 0.0)
    d_mu[top, cols] = (2 * b + eps) / (d * d)
    d_mu /= u  # mean over units
    d_mu_per_sample = d_mu / np.maximum(counts, 1)[:, None]
    g_shifted = d_mu_per_sample[labels]  # (N, U)
    g = g_shifted.copy()
    moved = offset != 0
    if moved.any():
        amin = np.argmin(r, axis=0)
        g[amin[moved], cols[moved]] -= g_shifted[:, moved].sum(axis=0)
    return si, g


def regularized_loss(trace, labels, config: RegularizerConfig, want_grads: bool = False):
    """Loss breakdown for one batch; with ``want_grads`` also the gradients.

    When ``want_grads`` is true returns ``(breakdown, dlogits, activation_grads)``
    where ``activation_grads`` aligns with ``trace.responses`` and carries the
    regularizer gradient (``None`` for layers outside the mask or when alpha
    is 0).
    """
    labels = np.asarray(labels)
    n_classes = trace.logits.shape[1]
    ce, dlogits = cross_entropy(trace.logits, labels)
    masked = config.masked_layers(len(trace.responses))
    need = want_grads and config.alpha != 0.0
    layer_si, act_grads = [], [None] * len(trace.responses)
    for li in masked:
        si, g = mean_si_and_grad(trace.responses[li], labels, n_classes, config.eps, need)
        layer_si.append(float(si.mean()))
        if need:
            act_grads[li] = (-config.alpha / len(masked)) * g
    mu_si = float(np.mean(layer_si))
    total = ce - config.alpha * mu_si
    br = LossBreakdown(total, ce, mu_si, layer_si)
    if want_grads:
        return br, dlogits, act_grads
    return br


def regularizer_activation_grads(trace, labels, config: RegularizerConfig) -> list:
    return regularized_loss(trace, labels, config, want_grads=True)[2]


def loss_and_grads(network: Network, x, labels, config: RegularizerConfig):
    """Forward, composite loss and backward in one call."""
    trace = forward(network, x)
    br, dlogits, act_grads = regularized_loss(trace, labels, config, want_grads=True)
    return br, backward(network, trace, dlogits, act_grads), trace


def _smallest_positive(gaps, exact: float = 1e-12) -> float:
    # structural ties can differ by summation-order rounding
    gaps = gaps[gaps > exact]
    return float(gaps.min()) if gaps.size else np.inf


def selectivity_margin(trace, labels, config: RegularizerConfig) -> float:
    """Smallest distance to a point where the minibatch SI is not differentiable.

    Per unit in the masked layers: the gap between the top and runner-up class
    means, and, where the nonnegativity shift is active, the gap between the
    two lowest responses.  Exact ties are skipped: they come from units fed
    through a silent path (dead units included), whose tied values move
    together under small steps.  Infinite when alpha is 0.
    """
    if config.alpha == 0.0:
        return np.inf
    labels = np.asarray(labels)
    n_classes = trace.logits.shape[1]
    worst = np.inf
    for li in config.masked_layers(len(trace.responses)):
        r = trace.responses[li]
        low = np.sort(r, axis=0)
        if len(r) > 1:
            gap = (low[1] - low[0])[low[0] < 0]
            worst = min(worst, _smallest_positive(gap))
        ccm = class_conditional_means(shift_nonneg(r), labels, n_classes)
        if ccm.present.sum() >= 2:
            m = np.sort(ccm.means[ccm.present], axis=0)
            worst = min(worst, _smallest_positive(m[-1] - m[-2]))
    return worst


def avoid_selectivity_ties(network: Network, batch, labels, config: RegularizerConfig, margin: float = 1e-4,
                           rng=None, scale: float = 1e-3, max_tries: int = 200):
    """Jitter ``batch`` until it is ``margin`` away from ReLU kinks and SI argmax/argmin ties."""
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(batch, dtype=np.float64)
    for _ in range(max_tries):
        trace = forward(network, x)
        if min_preactivation_margin(network, x) > margin and selectivity_margin(trace, labels, config) > margin:
            return x
        x = x + scale * rng.standard_normal(x.shape)
    raise RuntimeError("could not move batch away from non-differentiable points")


def batch_loss_fn(labels, config: RegularizerConfig):
    """Adapter producing the ``loss_fn(network, batch)`` used by ``grad_check``."""

    def fn(network, batch):
        br, grads, _ = loss_and_grads(network, batch, labels, config)
        return br.total, grads

    return fn
