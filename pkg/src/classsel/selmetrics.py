"""Selectivity metrics over (samples, units) activation matrices."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_EPS = 1e-7


@dataclass
class ClassConditionalMeans:
    means: np.ndarray  # (C, U); rows of absent classes are zero
    counts: np.ndarray  # (C,)

    @property
    def present(self):
        return self.counts > 0


def class_conditional_means(acts, labels, n_classes: int) -> ClassConditionalMeans:
    """Per-class mean of every column of ``acts``.

    Sums are accumulated sample by sample in row order (``np.add.at``), so the
    result is reproducible bit for bit by a naive loop.
    """
    acts = np.asarray(acts, dtype=np.float64)
    labels = np.asarray(labels)
    if acts.ndim != 2 or acts.shape[0] == 0:
        raise ValueError("activation matrix must be 2-D and non-empty")
    if labels.shape != (acts.shape[0],):
        raise ValueError("one label per activation row required")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    sums = np.zeros((n_classes, acts.shape[1]))
    np.add.at(sums, labels, acts)
    counts = np.bincount(labels, minlength=n_classes)
    means = np.zeros_like(sums)
    present = counts > 0
    means[present] = sums[present] / counts[present, None]
    return ClassConditionalMeans(means, counts)


def _max_and_rest(means, present):
    """Per-unit max over present classes (lowest index wins ties) and mean of the rest."""
    masked = np.where(present[:, None], means, -np.inf)
    top = np.argmax(masked, axis=0)
    mx = masked[top, np.arange(means.shape[1])]
    rest = np.zeros(means.shape[1])
    for c in range(means.shape[0]):
        if present[c]:
            rest = rest + np.where(top == c, 0.0, means[c])
    n_rest = int(present.sum()) - 1
    # the mean of the rest can round a hair above the max when all means tie
    return top, mx, np.minimum(rest / n_rest, mx)


def layer_selectivity(means, present=None, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Selectivity index of every unit from a (C, U) class-mean matrix."""
    means = np.asarray(means, dtype=np.float64)
    if present is None:
        present = np.ones(means.shape[0], dtype=bool)
    present = np.asarray(present, dtype=bool)
    if present.sum() < 2:
        return np.zeros(means.shape[1])
    _, mx, rest = _max_and_rest(means, present)
    return (mx - rest) / (mx + rest + eps)


def selectivity_index(class_means, eps: float = DEFAULT_EPS) -> float:
    """(mu_max - mu_rest) / (mu_max + mu_rest + eps) for one unit.

    ``class_means`` holds the means of the classes present; fewer than two
    classes gives 0.
    """
    m = np.asarray(class_means, dtype=np.float64).reshape(-1, 1)
    return float(layer_selectivity(m, eps=eps)[0])


def selectivity_from_acts(acts, labels, n_classes: int, eps: float = DEFAULT_EPS) -> np.ndarray:
    ccm = class_conditional_means(acts, labels, n_classes)
    return layer_selectivity(ccm.means, ccm.present, eps)


def network_mean_si(per_layer_si) -> float:
    """Mean within each layer, then mean over layers."""
    layers = [np.asarray(s, dtype=np.float64) for s in per_layer_si]
    if not layers:
        raise ValueError("at least one layer required")
    if any(s.size == 0 for s in layers):
        raise ValueError("every layer needs at least one unit")
    return float(np.mean([s.mean() for s in layers]))


def precision(acts_for_unit, labels, n: int) -> float:
    """Largest single-class share among the ``n`` most strongly activating samples.

    Ties are resolved in favour of the lower sample index.
    """
    col = np.asarray(acts_for_unit, dtype=np.float64)
    labels = np.asarray(labels)
    if n <= 0:
        raise ValueError("n must be positive")
    if n > col.size:
        raise ValueError("n exceeds the number of samples")
    top = np.argsort(-col, kind="stable")[:n]
    return float(np.bincount(labels[top]).max() / n)


def dead_units(acts) -> np.ndarray:
    return np.all(np.asarray(acts) == 0, axis=0)


def responsiveness(acts):
    """Fraction of samples with non-zero activation per unit, and the sparse mask (< 0.5)."""
    frac = np.mean(np.asarray(acts) != 0, axis=0)
    return frac, frac < 0.5


def shift_nonneg(acts) -> np.ndarray:
    acts = np.asarray(acts, dtype=np.float64)
    return acts - np.minimum(0.0, acts.min(axis=0))


@dataclass
class SelectivityReport:
    layer_names: list
    si: list
    precision: list
    dead: list
    responsiveness: list
    layer_mean_si: list = field(default_factory=list)
    mean_si: float = 0.0

    def to_dict(self):
        return {
            "layer_names": list(self.layer_names),
            "si": [s.tolist() for s in self.si],
            "precision": [p.tolist() for p in self.precision],
            "dead": [d.tolist() for d in self.dead],
            "responsiveness": [r.tolist() for r in self.responsiveness],
            "layer_mean_si": list(self.layer_mean_si),
            "mean_si": self.mean_si,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            layer_names=list(d["layer_names"]),
            si=[np.asarray(s, dtype=np.float64) for s in d["si"]],
            precision=[np.asarray(p, dtype=np.float64) for p in d["precision"]],
            dead=[np.asarray(x, dtype=bool) for x in d["dead"]],
            responsiveness=[np.asarray(r, dtype=np.float64) for r in d["responsiveness"]],
            layer_mean_si=list(d["layer_mean_si"]),
            mean_si=float(d["mean_si"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def n_dead(self) -> int:
        return int(sum(int(d.sum()) for d in self.dead))

    def csv_rows(self, run=""):
        for name, si, pr, dd, rs in zip(self.layer_names, self.si, self.precision, self.dead, self.responsiveness):
            for u in range(si.size):
                yield [run, name, u, repr(float(si[u])), repr(float(pr[u])), int(dd[u]), repr(float(rs[u]))]

    def to_csv(self, run="") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["run", "layer", "unit", "si", "precision", "dead", "responsiveness"])
        w.writerows(self.csv_rows(run))
        return buf.getvalue()


def selectivity_report(responses, labels, n_classes: int, layer_names=None, eps: float = DEFAULT_EPS, precision_n=None):
    """Full per-unit report for a list of per-layer activation matrices.

    SI is computed on ``shift_nonneg`` activations (a no-op after ReLU).
    ``precision_n`` defaults to the smallest class count in ``labels``.
    """
    labels = np.asarray(labels)
    if layer_names is None:
        layer_names = [f"layer{i}" for i in range(len(responses))]
    if precision_n is None:
        counts = np.bincount(labels, minlength=n_classes)
        precision_n = int(counts[counts > 0].min())
    si, prec, dead, resp = [], [], [], []
    for acts in responses:
        acts = np.asarray(acts, dtype=np.float64)
        si.append(selectivity_from_acts(shift_nonneg(acts), labels, n_classes, eps))
        prec.append(np.array([precision(acts[:, u], labels, precision_n) for u in range(acts.shape[1])]))
        dead.append(dead_units(acts))
        resp.append(responsiveness(acts)[0])
    layer_means = [float(s.mean()) for s in si]
    return SelectivityReport(list(layer_names), si, prec, dead, resp, layer_means, network_mean_si(si))
