"""Upper bound on selectivity reachable by rotating a layer's unit basis.

An orthonormal W is fitted on validation activations to minimise
1 - mean SI(shift(A_val W)) and then applied to test activations.  Columns
are shifted by their minimum before the index is taken.  Orthonormality is
kept by a QR retraction after every Adam step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .selmetrics import DEFAULT_EPS
from .selreg import mean_si_and_grad


@dataclass(frozen=True)
class ProjectionConfig:
    lr: float = 1e-3
    max_steps: int = 3500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tol: float = 1e-6
    patience: int = 10
    si_eps: float = DEFAULT_EPS
    shift: str = "min"  # "min" or "nonneg", see selreg.mean_si_and_grad
    sign_flips: bool = True


@dataclass
class OrthonormalProjection:
    W: np.ndarray
    losses: list = field(default_factory=list)
    stop_reason: str = ""
    steps: int = 0
    best_step: int = 0

    @property
    def loss(self) -> float:
        return self.losses[self.best_step]


def orthonormality_error(W) -> float:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    e = W.T @ W - np.eye(W.shape[0])
    return float(np.sum(e * e))


def qr_retract(W) -> np.ndarray:
    q, r = np.linalg.qr(W)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def projection_objective(acts, W, labels, n_classes, config: ProjectionConfig = ProjectionConfig()):
    """``(1 - mean SI of shifted acts @ W, gradient w.r.t. W)``."""
    p = acts @ W
    si, g = mean_si_and_grad(p, labels, n_classes, config.si_eps, True, config.shift)
    return 1.0 - float(si.mean()), -(acts.T @ g)


def flip_columns(acts, W, labels, n_classes, config: ProjectionConfig = ProjectionConfig()):
    """Boolean mask of columns of W whose negation scores a higher SI.

    Negating a column keeps W orthonormal but is unreachable by small steps,
    and under the min shift a column pointing at minus a class direction is
    a poor local optimum.
    """
    p = acts @ W
    si = mean_si_and_grad(p, labels, n_classes, config.si_eps, False, config.shift)[0]
    si_neg = mean_si_and_grad(-p, labels, n_classes, config.si_eps, False, config.shift)[0]
    return si_neg > si


def optimize_projection(acts_val, labels, n_classes=None, config: ProjectionConfig = ProjectionConfig()):
    """Fit the orthonormal projection; returns the best iterate seen.

    The identity start counts as an iterate, so the result is never worse
    than the unrotated basis on ``acts_val``.
    """
    acts = np.asarray(acts_val, dtype=np.float64)
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if np.count_nonzero(np.bincount(labels, minlength=n_classes)) < 2:
        raise ValueError("at least two classes must be present to optimise selectivity")
    u = acts.shape[1]
    W = np.eye(u)
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    loss, grad = projection_objective(acts, W, labels, n_classes, config)
    losses = [loss]
    best_W, best_step = W.copy(), 0
    quiet = 0
    stop = "max_steps"
    for t in range(1, config.max_steps + 1):
        m = config.beta1 * m + (1 - config.beta1) * grad
        v = config.beta2 * v + (1 - config.beta2) * grad * grad
        mhat = m / (1 - config.beta1**t)
        vhat = v / (1 - config.beta2**t)
        W = qr_retract(W - config.lr * mhat / (np.sqrt(vhat) + config.adam_eps))
        if config.sign_flips:
            flip = flip_columns(acts, W, labels, n_classes, config)
            if flip.any():
                W[:, flip] *= -1.0
                m[:, flip] *= -1.0
        new_loss, grad = projection_objective(acts, W, labels, n_classes, config)
        losses.append(new_loss)
        if new_loss < losses[best_step]:
            best_W, best_step = W.copy(), t
        quiet = quiet + 1 if abs(new_loss - loss) < config.tol else 0
        loss = new_loss
        if quiet >= config.patience:
            stop = "converged"
            break
    return OrthonormalProjection(best_W, losses, stop, len(losses) - 1, best_step)


def projected_selectivity(acts_test, W, labels, n_classes=None, config: ProjectionConfig = ProjectionConfig()):
    """SI of every axis of ``acts_test @ W`` after the column shift, and their mean."""
    acts = np.asarray(acts_test, dtype=np.float64)
    W = W.W if isinstance(W, OrthonormalProjection) else np.asarray(W, dtype=np.float64)
    if W.shape != (acts.shape[1], acts.shape[1]):
        raise ValueError(f"projection of shape {W.shape} does not match {acts.shape[1]} units")
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    si, _ = mean_si_and_grad(acts @ W, labels, n_classes, config.si_eps, False, config.shift)
    return si, float(si.mean())


def layer_bound(acts_val, labels_val, acts_test, labels_test, n_classes, config: ProjectionConfig = ProjectionConfig()):
    """Fit on validation, score on test; the dict that goes into run reports."""
    proj = optimize_projection(acts_val, labels_val, n_classes, config)
    _, axis_mean = projected_selectivity(acts_test, np.eye(acts_test.shape[1]), labels_test, n_classes, config)
    _, bound_mean = projected_selectivity(acts_test, proj, labels_test, n_classes, config)
    return {
        "axis_aligned_mean_si": axis_mean,
        "upper_bound_mean_si": bound_mean,
        "stop_reason": proj.stop_reason,
        "steps": proj.steps,
    }
