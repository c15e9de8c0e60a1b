"""Projection-weighted CCA distance between two layer representations.

Inputs are (samples, units) matrices.  The distance is asymmetric: the
projection weights come from the first argument.
"""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

RANK_TOL = 1e-6


class DegenerateInputError(ValueError):
    """Raised when a representation has no variance at all."""


@dataclass
class CCAResult:
    correlations: np.ndarray
    weights: np.ndarray
    distance: float
    ranks: tuple


def _centered_basis(x, which):
    xc = x - x.mean(axis=0)
    u, s, _ = np.linalg.svd(xc, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateInputError(f"{which} argument has zero variance in every column")
    keep = s > RANK_TOL * s[0]
    return xc, u[:, keep]


def pwcca_distance(l1, l2) -> CCAResult:
    l1 = np.asarray(l1, dtype=np.float64)
    l2 = np.asarray(l2, dtype=np.float64)
    if l1.ndim != 2 or l2.ndim != 2 or l1.shape[0] != l2.shape[0]:
        raise ValueError("both inputs must be (samples, units) with the same sample count")
    m = l1.shape[0]
    if m <= max(l1.shape[1], l2.shape[1]):
        warnings.warn(
            f"{m} samples for {l1.shape[1]}/{l2.shape[1]} units; CCA will be unreliable",
            RuntimeWarning,
            stacklevel=2,
        )
    x1, u1 = _centered_basis(l1, "first")
    _, u2 = _centered_basis(l2, "second")
    p, rho, _ = np.linalg.svd(u1.T @ u2, full_matrices=False)
    rho = np.clip(rho, 0.0, 1.0)
    h = u1 @ p  # canonical variates of the first view, unit norm
    w = np.abs(h.T @ x1).sum(axis=1)
    w = w / w.sum()
    return CCAResult(rho, w, float(1.0 - np.sum(w * rho)), (u1.shape[1], u2.shape[1]))


def symmetric_distance(a, b) -> float:
    return 0.5 * (pwcca_distance(a, b).distance + pwcca_distance(b, a).distance)


def baseline_distances(runs) -> list:
    """Distances over all unordered pairs of replicate representations of one layer."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError("at least two runs are needed for baseline distances")
    return [symmetric_distance(runs[i], runs[j]) for i, j in itertools.combinations(range(len(runs)), 2)]


def cross_distances(runs_a, runs_b) -> list:
    runs_a, runs_b = list(runs_a), list(runs_b)
    if not runs_a or not runs_b:
        raise ValueError("both run sets must be non-empty")
    return [pwcca_distance(a, b).distance for a in runs_a for b in runs_b]


@dataclass
class DistanceRatioReport:
    baseline_mean: list
    cross_mean: list
    ratio: list
    mean_ratio: float
    layer_names: list = field(default_factory=list)

    def to_dict(self):
        return {
            "layer_names": list(self.layer_names),
            "baseline_mean": list(self.baseline_mean),
            "cross_mean": list(self.cross_mean),
            "ratio": list(self.ratio),
            "mean_ratio": self.mean_ratio,
        }


def distance_ratio(baselines, crosses, layer_names=None) -> DistanceRatioReport:
    """Per-layer ratio of mean cross distance to mean baseline distance."""
    if len(baselines) != len(crosses) or not baselines:
        raise ValueError("need matching, non-empty per-layer distance lists")
    bm = [float(np.mean(b)) for b in baselines]
    cm = [float(np.mean(c)) for c in crosses]
    if any(b <= 0 for b in bm):
        raise ValueError("baseline mean distance must be positive in every layer")
    ratio = [c / b for c, b in zip(cm, bm)]
    names = list(layer_names) if layer_names is not None else [f"layer{i}" for i in range(len(bm))]
    return DistanceRatioReport(bm, cm, ratio, float(np.mean(ratio)), names)


# ---------------------------------------------------------------- activation dumps

DUMP_MAGIC = "CLASSSEL-ACT"
DUMP_VERSION = 1


def write_activations(path, acts, layer: str = "layer") -> None:
    """Header line ``CLASSSEL-ACT 1 <layer> <rows> <cols>`` then row-major little-endian float64."""
    acts = np.ascontiguousarray(acts, dtype="<f8")
    if acts.ndim != 2:
        raise ValueError("activation dump must be 2-D")
    if not layer or any(ch.isspace() for ch in layer):
        raise ValueError("layer name must be non-empty without whitespace")
    with open(path, "wb") as fh:
        fh.write(f"{DUMP_MAGIC} {DUMP_VERSION} {layer} {acts.shape[0]} {acts.shape[1]}\n".encode())
        fh.write(acts.tobytes())


def read_activations(path):
    """Return ``(layer_name, acts)`` from a binary dump."""
    with open(path, "rb") as fh:
        parts = fh.readline().decode().split()
        if len(parts) != 5 or parts[0] != DUMP_MAGIC:
            raise ValueError(f"{path}: not an activation dump")
        if int(parts[1]) != DUMP_VERSION:
            raise ValueError(f"{path}: unsupported dump version {parts[1]}")
        rows, cols = int(parts[3]), int(parts[4])
        buf = fh.read()
    if len(buf) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(buf) // 8}")
    return parts[2], np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_activations_csv(path, acts) -> None:
    acts = np.asarray(acts, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"u{j}" for j in range(acts.shape[1])])
        for row in acts:
            w.writerow([repr(float(v)) for v in row])


def read_activations_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, -1)


def load_activations(path):
    """Read either format, chosen by extension (``.csv`` or binary)."""
    if str(path).endswith(".csv"):
        return read_activations_csv(path)
    return read_activations(path)[1]
