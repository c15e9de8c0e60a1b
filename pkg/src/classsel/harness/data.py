"""Synthetic datasets and CSV ingestion.

Two generators:

``blobs``
    C isotropic Gaussian clusters (unit variance) in ``dim`` dimensions.
    Class centres sit on orthonormal directions scaled by ``separation``, so
    pairwise centre distance is ``separation * sqrt(2)`` (random unit
    directions when ``dim < classes``).
``shapes``
    1 x S x S images.  Each class has a procedural pattern (bar, column,
    diagonal, ring, cross, checker, box, dot) placed with random jitter and
    brightness, scaled by ``separation`` and overlaid with unit Gaussian
    pixel noise (``noise`` scales it).

Every class gets exactly ``samples_per_class`` samples, split 80/10/10 per
class into train/val/test, order shuffled inside each split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .seeds import stream

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "shapes"
    classes: int = 4
    samples_per_class: int = 100
    dim: int = 16  # blobs: feature count; shapes: image side length
    separation: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def validate(self):
        if self.name not in GENERATORS:
            raise ValueError(f"unknown dataset {self.name!r}; choose from {sorted(GENERATORS)}")
        if self.classes < 2:
            raise ValueError("at least two classes required")
        if self.samples_per_class < 10:
            raise ValueError("need at least 10 samples per class for an 80/10/10 split")
        if self.name == "shapes" and self.classes > len(_PATTERNS):
            raise ValueError(f"shapes supports at most {len(_PATTERNS)} classes")
        if self.name == "shapes" and self.dim < 8:
            raise ValueError("shapes images must be at least 8 pixels wide")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def input_shape(self):
        return self.x_train.shape[1:]

    def split(self, name):
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")


# ---------------------------------------------------------------- generators


def _blobs(spec, rng):
    d, c = spec.dim, spec.classes
    basis = np.linalg.qr(rng.standard_normal((max(d, c), max(d, c))))[0]
    if d >= c:
        centres = spec.separation * basis[:d, :c].T
    else:
        dirs = rng.standard_normal((c, d))
        centres = spec.separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    n = spec.samples_per_class
    x = np.concatenate([centres[k] + spec.noise * rng.standard_normal((n, d)) for k in range(c)])
    return x


def _bar(img, r, cc, s):
    img[max(r - 1, 0) : r + 1, :] = 1.0


def _column(img, r, cc, s):
    img[:, max(cc - 1, 0) : cc + 1] = 1.0


def _diagonal(img, r, cc, s):
    off = r - cc
    idx = np.arange(s)
    for k in (0, 1):
        j = idx + off + k
        ok = (j >= 0) & (j < s)
        img[idx[ok], j[ok]] = 1.0


def _ring(img, r, cc, s):
    yy, xx = np.mgrid[0:s, 0:s]
    dist = np.hypot(yy - r, xx - cc)
    img[(dist > s / 5) & (dist < s / 5 + 1.5)] = 1.0


def _cross(img, r, cc, s):
    img[r, max(cc - 3, 0) : cc + 4] = 1.0
    img[max(r - 3, 0) : r + 4, cc] = 1.0


def _checker(img, r, cc, s):
    yy, xx = np.mgrid[0:s, 0:s]
    img[((yy + r) // 2 + (xx + cc) // 2) % 2 == 0] = 1.0


def _box(img, r, cc, s):
    h = s // 5
    r0, r1, c0, c1 = max(r - h, 0), min(r + h, s - 1), max(cc - h, 0), min(cc + h, s - 1)
    img[r0, c0 : c1 + 1] = img[r1, c0 : c1 + 1] = 1.0
    img[r0 : r1 + 1, c0] = img[r0 : r1 + 1, c1] = 1.0


def _dot(img, r, cc, s):
    yy, xx = np.mgrid[0:s, 0:s]
    img[np.hypot(yy - r, xx - cc) < s / 6] = 1.0


_PATTERNS = (_bar, _column, _diagonal, _ring, _cross, _checker, _box, _dot)


def _shapes(spec, rng):
    s, n = spec.dim, spec.samples_per_class
    imgs = []
    for k in range(spec.classes):
        draw = _PATTERNS[k]
        for _ in range(n):
            img = np.zeros((s, s))
            r, cc = rng.integers(s // 4, s - s // 4, size=2)
            draw(img, int(r), int(cc), s)
            img *= spec.separation * rng.uniform(0.6, 1.4)
            img += spec.noise * rng.standard_normal((s, s))
            imgs.append(img)
    return np.stack(imgs)[:, None, :, :]


GENERATORS = {"blobs": _blobs, "shapes": _shapes}


def _split(x, y, n_classes, rng):
    parts = {name: [] for name in SPLITS}
    for k in range(n_classes):
        idx = rng.permutation(np.flatnonzero(y == k))
        n = idx.size
        n_train = int(round(SPLIT_FRACTIONS[0] * n))
        n_val = int(round(SPLIT_FRACTIONS[1] * n))
        parts["train"].append(idx[:n_train])
        parts["val"].append(idx[n_train : n_train + n_val])
        parts["test"].append(idx[n_train + n_val :])
    out = {}
    for name in SPLITS:
        idx = rng.permutation(np.concatenate(parts[name]))
        out[name] = (x[idx], y[idx])
    return out


def make_synthetic_dataset(spec: DatasetSpec) -> Dataset:
    spec.validate()
    x = GENERATORS[spec.name](spec, stream(spec.seed, "dataset", spec.name))
    y = np.repeat(np.arange(spec.classes), spec.samples_per_class)
    s = _split(x, y, spec.classes, stream(spec.seed, "dataset", "split"))
    return Dataset(*s["train"], *s["val"], *s["test"], n_classes=spec.classes)


# ---------------------------------------------------------------- CSV

def save_dataset_csv(ds: Dataset, path) -> None:
    """One row per sample: ``split,label,x0,...`` (features flattened row-major)."""
    n_feat = int(np.prod(ds.input_shape))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["split", "label"] + [f"x{i}" for i in range(n_feat)])
        for name in SPLITS:
            x, y = ds.split(name)
            for xi, yi in zip(x.reshape(len(x), -1), y):
                w.writerow([name, int(yi)] + [repr(float(v)) for v in xi])


def load_dataset_csv(path, input_shape=None) -> Dataset:
    """Read the format written by :func:`save_dataset_csv`.

    User-provided files only need ``split`` in {train, val, test}, an integer
    ``label`` column and numeric feature columns.  ``input_shape`` reshapes
    the flat features (e.g. ``(1, 16, 16)``).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["split", "label"]:
            raise ValueError(f"{path}: first columns must be 'split,label'")
        rows = {name: ([], []) for name in SPLITS}
        for line_no, row in enumerate(reader, start=2):
            if row[0] not in rows:
                raise ValueError(f"{path}:{line_no}: unknown split {row[0]!r}")
            rows[row[0]][0].append([float(v) for v in row[2:]])
            rows[row[0]][1].append(int(row[1]))
    arrays = []
    for name in SPLITS:
        x, y = rows[name]
        if not y:
            raise ValueError(f"{path}: split {name!r} is empty")
        x = np.array(x, dtype=np.float64)
        if input_shape is not None:
            x = x.reshape((len(x),) + tuple(input_shape))
        arrays += [x, np.array(y, dtype=np.int64)]
    n_classes = int(max(a.max() for a in arrays[1::2])) + 1
    return Dataset(*arrays, n_classes=n_classes)
