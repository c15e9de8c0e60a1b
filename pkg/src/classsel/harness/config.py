"""Experiment configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .data import DatasetSpec


def _floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _ints(text):
    """``"0,2,5"`` or ``"0-9"`` (inclusive range) or a mix."""
    out = []
    for tok in str(text).split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "-" in tok[1:]:
            lo, hi = tok[0] + tok[1:].split("-", 1)[0], tok[1:].split("-", 1)[1]
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "shapes"
    data_csv: str = ""
    input_shape: str = ""  # reshape for CSV features, e.g. "1,16,16"
    classes: int = 4
    samples_per_class: int = 100
    dim: int = 16
    separation: float = 1.0
    noise: float = 1.0
    data_seed: int = 0
    arch: str = "c8s2,c8s2,d16"
    alphas: tuple = (0.0,)
    layer_mask: str = "all"
    leaky_slope: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    milestones: tuple = (20,)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    eps: float = 1e-7
    replicates: int = 1
    seeds: tuple = ()
    bound: bool = False
    stats_seed: int = 0
    out: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.alphas:
            raise ValueError("alpha grid must not be empty")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")

    @property
    def run_seeds(self) -> tuple:
        return self.seeds if self.seeds else tuple(range(self.replicates))

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            self.dataset, self.classes, self.samples_per_class, self.dim, self.separation, self.noise, self.data_seed
        )

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in dataclasses.fields(self)}

    def to_kv(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **coerce(changes))


_PARSERS = {
    "alphas": _floats,
    "milestones": _ints,
    "seeds": _ints,
    "bound": _bool,
}


def coerce(values: dict) -> dict:
    """Convert string values to the field types of :class:`ExperimentConfig`."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for key, val in values.items():
        key = key.replace("-", "_")
        if key not in fields:
            raise KeyError(f"unknown config key {key!r}")
        if not isinstance(val, str):
            out[key] = tuple(val) if isinstance(val, list) else val
            continue
        if key in _PARSERS:
            out[key] = _PARSERS[key](val)
        else:
            typ = type(fields[key].default)
            out[key] = typ(val) if typ is not str else val
    return out


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected key = value")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def load_config(path=None, **overrides) -> ExperimentConfig:
    values = {}
    if path:
        with open(path) as fh:
            values.update(parse_kv(fh.read()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**coerce(values))
