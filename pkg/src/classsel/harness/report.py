"""Flat run tables, per-alpha summaries, and the CCA / bound analyses.

Every summary is computed from the flat per-run rows, so ``summary.csv`` can
be rebuilt from ``runs.csv`` alone.  Floats are written with ``repr`` and
JSON with sorted keys, which keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..projbound import ProjectionConfig, layer_bound
from ..pwcca import baseline_distances, cross_distances, distance_ratio
from .seeds import derived_seed
from .stats import bootstrap_ci, compare_groups, paired_t_test

RUN_COLUMNS = (
    "run_id",
    "alpha",
    "seed",
    "best_epoch",
    "t95",
    "test_acc",
    "val_acc",
    "mean_si",
    "n_dead",
    "diverged",
)

SUMMARY_COLUMNS = (
    "alpha",
    "n_runs",
    "n_diverged",
    "acc_mean",
    "acc_lo",
    "acc_hi",
    "acc_p",
    "si_mean",
    "si_lo",
    "si_hi",
    "si_p",
    "t95_mean",
    "dead_mean",
)


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def run_row(rec) -> dict:
    return {
        "run_id": rec.run_id,
        "alpha": float(rec.alpha),
        "seed": int(rec.seed),
        "best_epoch": int(rec.best_epoch),
        "t95": int(rec.t95),
        "test_acc": float(rec.test_acc),
        "val_acc": float(rec.val_acc),
        "mean_si": float(rec.mean_si),
        "n_dead": int(rec.selectivity.n_dead) if rec.selectivity is not None else 0,
        "diverged": bool(rec.diverged),
    }


def runs_csv(records) -> str:
    return _csv([run_row(r) for r in records], RUN_COLUMNS)


def read_runs_csv(text: str) -> list:
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "run_id": raw["run_id"],
                "alpha": float(raw["alpha"]),
                "seed": int(raw["seed"]),
                "best_epoch": int(raw["best_epoch"]),
                "t95": int(raw["t95"]),
                "test_acc": float(raw["test_acc"]),
                "val_acc": float(raw["val_acc"]),
                "mean_si": float(raw["mean_si"]),
                "n_dead": int(raw["n_dead"]),
                "diverged": raw["diverged"] == "1",
            }
        )
    return rows


@dataclass
class SummaryRow:
    alpha: float
    n_runs: int
    n_diverged: int
    acc_mean: float
    acc_lo: float
    acc_hi: float
    acc_p: float  # vs alpha = 0, Bonferroni-corrected; nan for the reference row
    si_mean: float
    si_lo: float
    si_hi: float
    si_p: float
    t95_mean: float
    dead_mean: float


@dataclass
class SummaryTable:
    rows: list = field(default_factory=list)
    method: str = "t_test"
    reference_alpha: float = 0.0

    def row(self, alpha) -> SummaryRow:
        for r in self.rows:
            if r.alpha == alpha:
                return r
        raise KeyError(alpha)

    def to_dict(self):
        return {"method": self.method, "reference_alpha": self.reference_alpha, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d):
        return cls([SummaryRow(**r) for r in d["rows"]], d["method"], float(d["reference_alpha"]))

    def to_csv(self) -> str:
        return _csv([asdict(r) for r in self.rows], SUMMARY_COLUMNS)


def _ci(values, stats_seed, *names):
    if not values:
        return math.nan, math.nan, math.nan
    lo, hi = bootstrap_ci(values, seed=derived_seed(stats_seed, *names))
    return float(np.mean(values)), lo, hi


def summarize(rows, stats_seed: int = 0, method: str = "t_test", reference_alpha: float = 0.0) -> SummaryTable:
    """Aggregate run rows per alpha; diverged runs are counted but not averaged."""
    alphas = sorted({r["alpha"] for r in rows})
    by_alpha = {a: [r for r in rows if r["alpha"] == a and not r["diverged"]] for a in alphas}
    ref = by_alpha.get(reference_alpha, [])
    n_tests = sum(1 for a in alphas if a != reference_alpha)
    out = []
    for a in alphas:
        ok = by_alpha[a]
        acc = [r["test_acc"] for r in ok]
        si = [r["mean_si"] for r in ok]
        acc_mean, acc_lo, acc_hi = _ci(acc, stats_seed, "acc", repr(a))
        si_mean, si_lo, si_hi = _ci(si, stats_seed, "si", repr(a))
        acc_p = si_p = math.nan
        if a != reference_alpha and len(ok) >= 2 and len(ref) >= 2:
            acc_p = compare_groups(acc, [r["test_acc"] for r in ref], method, n_tests)
            si_p = compare_groups(si, [r["mean_si"] for r in ref], method, n_tests)
        out.append(
            SummaryRow(
                alpha=a,
                n_runs=sum(1 for r in rows if r["alpha"] == a),
                n_diverged=sum(1 for r in rows if r["alpha"] == a and r["diverged"]),
                acc_mean=acc_mean,
                acc_lo=acc_lo,
                acc_hi=acc_hi,
                acc_p=acc_p,
                si_mean=si_mean,
                si_lo=si_lo,
                si_hi=si_hi,
                si_p=si_p,
                t95_mean=float(np.mean([r["t95"] for r in ok])) if ok else math.nan,
                dead_mean=float(np.mean([r["n_dead"] for r in ok])) if ok else math.nan,
            )
        )
    return SummaryTable(out, method, reference_alpha)


# ---------------------------------------------------------------- analyses


def cca_analysis(records, alpha_r=None, alpha_0: float = 0.0) -> dict:
    """Baseline vs cross PWCCA distances per layer, at ``alpha_r`` (default: most negative alpha)."""
    ok = [r for r in records if not r.diverged and r.test_responses]
    if alpha_r is None:
        alpha_r = min(r.alpha for r in ok)
    runs_r = [r for r in ok if r.alpha == alpha_r]
    runs_0 = [r for r in ok if r.alpha == alpha_0]
    if len(runs_r) < 2 or not runs_0:
        raise ValueError(f"need >= 2 runs at alpha={alpha_r!r} and >= 1 at alpha={alpha_0!r}")
    n_layers = len(runs_r[0].test_responses)
    base, cross = [], []
    for l in range(n_layers):
        acts_r = [r.test_responses[l] for r in runs_r]
        base.append(baseline_distances(acts_r))
        cross.append(cross_distances(acts_r, [r.test_responses[l] for r in runs_0]))
    names = runs_r[0].selectivity.layer_names if runs_r[0].selectivity is not None else None
    rep = distance_ratio(base, cross, names)
    p = paired_t_test(rep.cross_mean, rep.baseline_mean) if n_layers >= 2 else math.nan
    return {
        "alpha_r": float(alpha_r),
        "alpha_0": float(alpha_0),
        "n_baseline_pairs": len(base[0]),
        "n_cross_pairs": len(cross[0]),
        "paired_p": p,
        "cross_exceeds_baseline": all(c > b for c, b in zip(rep.cross_mean, rep.baseline_mean)),
        **rep.to_dict(),
    }


def bound_analysis(records, dataset, config: ProjectionConfig = ProjectionConfig()) -> list:
    """Fill ``rec.bounds`` with one projection bound per layer (fit on val, score on test)."""
    out = []
    for rec in records:
        if rec.diverged or not rec.val_responses:
            continue
        rec.bounds = [
            layer_bound(va, dataset.y_val, te, dataset.y_test, dataset.n_classes, config)
            for va, te in zip(rec.val_responses, rec.test_responses)
        ]
        out.append({"run_id": rec.run_id, "layers": rec.bounds})
    return out


# ---------------------------------------------------------------- output


def _num(v, digits=4):
    return "n/a" if isinstance(v, float) and math.isnan(v) else f"{v:.{digits}f}"


def markdown(summary: SummaryTable, cca=None, bounds=None) -> str:
    lines = ["# Sweep summary", ""]
    lines.append(f"p-values vs alpha = {summary.reference_alpha!r} ({summary.method}, Bonferroni-corrected).")
    lines += ["", "## Test accuracy", "", "| alpha | runs | mean | 95% CI | p |", "|---|---|---|---|---|"]
    for r in summary.rows:
        lines.append(f"| {r.alpha!r} | {r.n_runs} | {_num(r.acc_mean)} | [{_num(r.acc_lo)}, {_num(r.acc_hi)}] | {_num(r.acc_p)} |")
    lines += ["", "## Mean class selectivity", "", "| alpha | mean | 95% CI | p | dead units |", "|---|---|---|---|---|"]
    for r in summary.rows:
        lines.append(
            f"| {r.alpha!r} | {_num(r.si_mean)} | [{_num(r.si_lo)}, {_num(r.si_hi)}] | {_num(r.si_p)} | {_num(r.dead_mean, 1)} |"
        )
    if cca:
        lines += ["", f"## PWCCA distances, alpha = {cca['alpha_r']!r} vs {cca['alpha_0']!r}", ""]
        lines += ["| layer | baseline | cross | ratio |", "|---|---|---|---|"]
        for name, b, c, q in zip(cca["layer_names"], cca["baseline_mean"], cca["cross_mean"], cca["ratio"]):
            lines.append(f"| {name} | {_num(b)} | {_num(c)} | {_num(q, 3)} |")
        lines.append("")
        lines.append(f"Mean ratio {_num(cca['mean_ratio'], 3)}, paired p {_num(cca['paired_p'])}.")
    if bounds:
        n_layers = len(bounds[0]["layers"])
        lines += ["", "## Off-axis selectivity bound (mean over runs)", "", "| layer | axis-aligned | bound |", "|---|---|---|"]
        for l in range(n_layers):
            ax = np.mean([b["layers"][l]["axis_aligned_mean_si"] for b in bounds])
            ub = np.mean([b["layers"][l]["upper_bound_mean_si"] for b in bounds])
            lines.append(f"| {l} | {_num(float(ax))} | {_num(float(ub))} |")
    return "\n".join(lines) + "\n"


def report_json(records, summary: SummaryTable, config=None, cca=None, bounds=None) -> str:
    cfg = config.to_dict() if config is not None else None
    if cfg is not None:
        cfg.pop("out", None)  # where a sweep was written must not change its contents
    doc = {
        "config": cfg,
        "runs": [r.to_dict() for r in records],
        "summary": summary.to_dict(),
        "cca": cca,
        "bounds": bounds,
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def write_report(out_dir, records, config=None, cca=None, bounds=None, method: str = "t_test") -> dict:
    """Write runs.csv, summary.csv, report.json and report.md; returns their paths."""
    if not records:
        raise ValueError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)
    stats_seed = config.stats_seed if config is not None else 0
    rows_csv = runs_csv(records)
    summary = summarize(read_runs_csv(rows_csv), stats_seed, method)
    files = {
        "runs": ("runs.csv", rows_csv),
        "summary": ("summary.csv", summary.to_csv()),
        "json": ("report.json", report_json(records, summary, config, cca, bounds)),
        "markdown": ("report.md", markdown(summary, cca, bounds)),
    }
    paths = {}
    for key, (name, text) in files.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths[key] = path
    return paths
