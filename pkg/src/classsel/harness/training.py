"""Seeded training runs with best-validation checkpointing, and sweeps over them."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..numnet import OptimizerState, build_network, forward, parse_architecture, sgd_step
from ..selmetrics import SelectivityReport, selectivity_report
from ..selreg import RegularizerConfig, loss_and_grads
from .config import ExperimentConfig
from .data import Dataset, load_dataset_csv, make_synthetic_dataset
from .seeds import derived_seed, stream
from .stats import t95

log = logging.getLogger(__name__)


@dataclass
class EpochLog:
    train_acc: float
    val_acc: float
    test_acc: float
    loss: float
    cross_entropy: float
    mu_si: float
    lr: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class RunRecord:
    alpha: float
    seed: int
    epochs: list = field(default_factory=list)
    best_epoch: int = -1  # 0-indexed
    test_acc: float = float("nan")
    val_acc: float = float("nan")
    selectivity: SelectivityReport | None = None
    t95: int = 0
    diverged: bool = False
    checkpoint: str = ""
    bounds: list = field(default_factory=list)
    # in-memory only: best checkpoint and its unit responses
    network: object = None
    test_responses: list = field(default_factory=list)
    val_responses: list = field(default_factory=list)

    @property
    def run_id(self) -> str:
        return f"alpha={self.alpha!r}_seed={self.seed}"

    @property
    def mean_si(self) -> float:
        return self.selectivity.mean_si if self.selectivity is not None else float("nan")

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "alpha": self.alpha,
            "seed": self.seed,
            "epochs": [e.to_dict() for e in self.epochs],
            "best_epoch": self.best_epoch,
            "test_acc": self.test_acc,
            "val_acc": self.val_acc,
            "mean_si": self.mean_si,
            "selectivity": self.selectivity.to_dict() if self.selectivity is not None else None,
            "t95": self.t95,
            "diverged": self.diverged,
            "checkpoint": self.checkpoint,
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, d):
        rec = cls(alpha=float(d["alpha"]), seed=int(d["seed"]))
        rec.epochs = [EpochLog(**e) for e in d["epochs"]]
        rec.best_epoch = int(d["best_epoch"])
        rec.test_acc = float(d["test_acc"])
        rec.val_acc = float(d["val_acc"])
        rec.selectivity = SelectivityReport.from_dict(d["selectivity"]) if d["selectivity"] else None
        rec.t95 = int(d["t95"])
        rec.diverged = bool(d["diverged"])
        rec.checkpoint = d.get("checkpoint", "")
        rec.bounds = list(d.get("bounds", []))
        return rec


@lru_cache(maxsize=4)
def _cached_dataset(spec, data_csv, input_shape) -> Dataset:
    if data_csv:
        shape = tuple(int(v) for v in input_shape.split(",")) if input_shape else None
        return load_dataset_csv(data_csv, shape)
    return make_synthetic_dataset(spec)


def load_dataset(config: ExperimentConfig) -> Dataset:
    return _cached_dataset(config.dataset_spec(), config.data_csv, config.input_shape)


def accuracy(network, x, y, chunk: int = 512) -> float:
    hits = 0
    for i in range(0, len(x), chunk):
        hits += int(np.sum(np.argmax(forward(network, x[i : i + chunk]).logits, axis=1) == y[i : i + chunk]))
    return hits / len(x)


def unit_responses(network, x, chunk: int = 512):
    parts = [forward(network, x[i : i + chunk]).responses for i in range(0, len(x), chunk)]
    return [np.concatenate([p[l] for p in parts]) for l in range(len(parts[0]))]


def layer_names(network) -> list:
    names = []
    for li in network.response_layers:
        names.append(f"{network.layers[li - 1].kind}{len(names)}")
    return names


def lr_at(config: ExperimentConfig, epoch: int) -> float:
    passed = sum(1 for m in config.milestones if epoch >= m)
    return config.lr * config.lr_decay**passed


def train(config: ExperimentConfig, alpha: float, seed: int, dataset: Dataset | None = None) -> RunRecord:
    """Train one network; deterministic in (config, alpha, seed)."""
    ds = dataset if dataset is not None else load_dataset(config)
    net = build_network(
        ds.input_shape,
        parse_architecture(config.arch),
        ds.n_classes,
        slope=config.leaky_slope,
        seed=derived_seed(seed, "init"),
    )
    reg = RegularizerConfig(alpha=float(alpha), eps=config.eps, layer_mask=config.layer_mask)
    opt = OptimizerState(lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)
    shuffle = stream(seed, "shuffle")
    rec = RunRecord(alpha=float(alpha), seed=int(seed))
    best_val, best_net = -1.0, None
    n = len(ds.x_train)
    if config.batch_size > n:
        raise ValueError(f"batch size {config.batch_size} exceeds the {n} training samples")
    bs = config.batch_size

    for epoch in range(config.epochs):
        opt.lr = lr_at(config, epoch)
        order = shuffle.permutation(n)
        tot = ce = si = 0.0
        hits = 0
        n_batches = 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            x, y = ds.x_train[idx], ds.y_train[idx]
            br, grads, trace = loss_and_grads(net, x, y, reg)
            if not math.isfinite(br.total):
                rec.diverged = True
                break
            sgd_step(opt, net.params, grads)
            tot += br.total
            ce += br.cross_entropy
            si += br.mu_si
            hits += int(np.sum(np.argmax(trace.logits, axis=1) == y))
            n_batches += 1
        if rec.diverged or not all(np.all(np.isfinite(a)) for p in net.params for a in p.values()):
            rec.diverged = True
            log.warning("run %s diverged in epoch %d", rec.run_id, epoch)
            break
        val_acc = accuracy(net, ds.x_val, ds.y_val)
        test_acc = accuracy(net, ds.x_test, ds.y_test)
        rec.epochs.append(
            EpochLog(hits / n, val_acc, test_acc, tot / n_batches, ce / n_batches, si / n_batches, opt.lr)
        )
        if val_acc > best_val:
            best_val, best_net, rec.best_epoch = val_acc, net.copy(), epoch

    if best_net is None:
        return rec
    rec.network = best_net
    rec.val_acc = best_val
    rec.test_acc = accuracy(best_net, ds.x_test, ds.y_test)
    rec.test_responses = unit_responses(best_net, ds.x_test)
    rec.val_responses = unit_responses(best_net, ds.x_val)
    rec.selectivity = selectivity_report(
        rec.test_responses, ds.y_test, ds.n_classes, layer_names(best_net), eps=config.eps
    )
    rec.t95 = t95([e.test_acc for e in rec.epochs])
    return rec


def _train_job(args):
    config, alpha, seed = args
    return train(config, alpha, seed)


def sweep(config: ExperimentConfig, jobs: int = 1) -> list:
    """Train every (alpha, seed) pair; results ordered alpha-major, seed-minor."""
    tasks = [(config, a, s) for a in config.alphas for s in config.run_seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_job, tasks))
    return [_train_job(t) for t in tasks]
