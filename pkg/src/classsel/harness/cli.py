"""Command-line entry point: ``classsel <command> [options]``.

Commands
    gen-data   write the configured synthetic dataset to CSV
    train      one (alpha, seed) run
    sweep      alpha grid x seeds, with optional CCA and bound analyses
    analyze    selectivity report for a checkpoint or a directory of activation dumps
    cca        PWCCA distance between two activation dumps, or the sweep analysis
    bound      off-axis selectivity bound for the runs of a sweep
    report     rebuild summary and markdown from a sweep directory
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

from ..numnet import load_network, save_network
from ..projbound import ProjectionConfig
from ..pwcca import load_activations, pwcca_distance, read_activations, write_activations
from ..selmetrics import selectivity_report
from .config import load_config
from .data import make_synthetic_dataset, save_dataset_csv
from .report import (
    bound_analysis,
    cca_analysis,
    markdown,
    read_runs_csv,
    summarize,
    write_report,
)
from .training import RunRecord, layer_names, load_dataset, sweep, train, unit_responses

log = logging.getLogger("classsel")


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--dataset", choices=["blobs", "shapes"])
    p.add_argument("--data-csv", help="train on a CSV dataset instead of a synthetic one")
    p.add_argument("--arch", help='hidden layers, e.g. "c8s2,c8s2,d16"')
    p.add_argument("--layer-mask", help="all, first3, last3 or comma-separated layer indices")
    p.add_argument("--leaky-slope", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", help="output directory")


def _load(args, **extra):
    over = {
        "dataset": args.dataset,
        "data_csv": args.data_csv,
        "arch": args.arch,
        "layer_mask": args.layer_mask,
        "leaky_slope": args.leaky_slope,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "out": args.out,
    }
    over.update(extra)
    for item in args.set:
        if "=" not in item:
            raise SystemExit(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    return load_config(args.config, **over)


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _save_run(rec, out_dir, names):
    ckpt = os.path.join("checkpoints", rec.run_id + ".net")
    if rec.network is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        save_network(rec.network, os.path.join(out_dir, ckpt))
        rec.checkpoint = ckpt
        act_dir = os.path.join(out_dir, "activations", rec.run_id)
        os.makedirs(act_dir, exist_ok=True)
        for name, acts in zip(names, rec.test_responses):
            write_activations(os.path.join(act_dir, name + ".act"), acts, name)


def load_sweep(out_dir):
    """Config and run records of a sweep directory, networks and responses restored."""
    with open(os.path.join(out_dir, "report.json")) as fh:
        doc = json.load(fh)
    config = load_config(None, **doc["config"], out=out_dir)
    ds = load_dataset(config)
    records = []
    for d in doc["runs"]:
        rec = RunRecord.from_dict(d)
        if rec.checkpoint:
            rec.network = load_network(os.path.join(out_dir, rec.checkpoint))
            rec.test_responses = unit_responses(rec.network, ds.x_test)
            rec.val_responses = unit_responses(rec.network, ds.x_val)
        records.append(rec)
    return config, records, ds, doc


def cmd_gen_data(args):
    config = _load(args)
    ds = make_synthetic_dataset(config.dataset_spec())
    path = args.path or os.path.join(config.out or ".", "dataset.csv")
    save_dataset_csv(ds, path)
    print(path)


def cmd_train(args):
    config = _load(args)
    rec = train(config, args.alpha, args.seed)
    out = config.out or "."
    if rec.network is not None:
        _save_run(rec, out, layer_names(rec.network))
    path = os.path.join(out, rec.run_id + ".json")
    _write(path, json.dumps(rec.to_dict(), sort_keys=True, indent=1) + "\n")
    print(f"{rec.run_id}: test_acc={rec.test_acc:.4f} mean_si={rec.mean_si:.4f} best_epoch={rec.best_epoch}")


def cmd_sweep(args):
    extra = {}
    if args.alpha:
        extra["alphas"] = args.alpha
    if args.seeds:
        extra["seeds"] = args.seeds
    if args.replicates:
        extra["replicates"] = args.replicates
    config = _load(args, **extra)
    if not config.out:
        raise SystemExit("sweep needs --out")
    records = sweep(config, jobs=args.jobs)
    for rec in records:
        if rec.network is not None:
            _save_run(rec, config.out, layer_names(rec.network))
    cca = cca_analysis(records) if args.cca else None
    bounds = bound_analysis(records, load_dataset(config)) if (args.bound or config.bound) else None
    paths = write_report(config.out, records, config, cca, bounds, method=args.method)
    for k in sorted(paths):
        print(paths[k])


def _read_dumps(directory):
    names, acts = [], []
    # layer names end in their position ("conv2d0", ..., "dense11"); order numerically
    files = [f for f in os.listdir(directory) if f.endswith(".act")]
    files.sort(key=lambda f: (int(re.search(r"(\d*)\.act$", f).group(1) or -1), f))
    for f in files:
        name, a = read_activations(os.path.join(directory, f))
        names.append(name)
        acts.append(a)
    if not acts:
        raise ValueError(f"{directory}: no .act dumps found")
    return names, acts


def cmd_analyze(args):
    """Selectivity of a checkpoint, or of a directory of activation dumps taken on ``--split``."""
    config = _load(args)
    ds = load_dataset(config)
    x, y = ds.split(args.split)
    if os.path.isdir(args.source):
        names, acts = _read_dumps(args.source)
    else:
        net = load_network(args.source)
        names, acts = layer_names(net), unit_responses(net, x)
    if any(len(a) != len(y) for a in acts):
        raise ValueError(f"dumps have {len(acts[0])} rows but the {args.split} split has {len(y)} samples")
    rep = selectivity_report(acts, y, ds.n_classes, names, eps=config.eps)
    if args.csv:
        _write(args.csv, rep.to_csv(os.path.basename(os.path.normpath(args.source))))
    print(rep.to_json() if args.json else f"mean_si={rep.mean_si!r} dead={rep.n_dead}")


def cmd_cca(args):
    if args.sweep:
        _, records, _, doc = load_sweep(args.sweep)
        res = cca_analysis(records, args.alpha_r, args.alpha_0)
        _write(os.path.join(args.sweep, "cca.json"), json.dumps(res, sort_keys=True, indent=1) + "\n")
        for name, b, c, r in zip(res["layer_names"], res["baseline_mean"], res["cross_mean"], res["ratio"]):
            print(f"{name}: baseline={b:.4f} cross={c:.4f} ratio={r:.3f}")
        print(f"paired p={res['paired_p']:.4g}")
        return
    if len(args.files) != 2:
        raise SystemExit("cca needs two activation files or --sweep DIR")
    res = pwcca_distance(load_activations(args.files[0]), load_activations(args.files[1]))
    print(repr(res.distance))


def cmd_bound(args):
    _, records, ds, _ = load_sweep(args.sweep)
    cfg = ProjectionConfig(max_steps=args.steps, shift=args.shift)
    bounds = bound_analysis(records, ds, cfg)
    _write(os.path.join(args.sweep, "bounds.json"), json.dumps(bounds, sort_keys=True, indent=1) + "\n")
    for b in bounds:
        ub = ", ".join(f"{l['axis_aligned_mean_si']:.3f}->{l['upper_bound_mean_si']:.3f}" for l in b["layers"])
        print(f"{b['run_id']}: {ub}")


def cmd_report(args):
    with open(os.path.join(args.sweep, "runs.csv"), newline="") as fh:
        rows = read_runs_csv(fh.read())
    with open(os.path.join(args.sweep, "report.json")) as fh:
        doc = json.load(fh)
    stats_seed = (doc.get("config") or {}).get("stats_seed", 0)
    summary = summarize(rows, stats_seed, args.method)
    cca = doc.get("cca")
    bounds = doc.get("bounds")
    for name in ("cca.json", "bounds.json"):
        path = os.path.join(args.sweep, name)
        if os.path.exists(path):
            with open(path) as fh:
                if name == "cca.json":
                    cca = json.load(fh)
                else:
                    bounds = json.load(fh)
    _write(os.path.join(args.sweep, "summary.csv"), summary.to_csv())
    text = markdown(summary, cca, bounds)
    _write(os.path.join(args.sweep, "report.md"), text)
    print(text, end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="classsel", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset as CSV")
    _config_args(p)
    p.add_argument("path", nargs="?")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one run")
    _config_args(p)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train an alpha grid over seeds")
    _config_args(p)
    p.add_argument("--alpha", help="comma-separated alpha grid")
    p.add_argument("--seeds", help='seed list, e.g. "0-9" or "0,3,7"')
    p.add_argument("--replicates", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cca", action="store_true", help="run the PWCCA analysis at the most negative alpha")
    p.add_argument("--bound", action="store_true", help="fit the off-axis selectivity bound for every run")
    p.add_argument("--method", choices=["t_test", "rank_sum"], default="t_test")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="selectivity report of a checkpoint or activation dumps")
    _config_args(p)
    p.add_argument("source", help="checkpoint file, or a directory of .act dumps")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--csv", help="also write per-unit CSV here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("cca", help="PWCCA distance(s)")
    p.add_argument("files", nargs="*", help="two activation dumps (.act or .csv)")
    p.add_argument("--sweep", help="sweep directory for the baseline/cross analysis")
    p.add_argument("--alpha-r", type=float)
    p.add_argument("--alpha-0", type=float, default=0.0)
    p.set_defaults(func=cmd_cca)

    p = sub.add_parser("bound", help="off-axis selectivity bound for a sweep")
    p.add_argument("sweep")
    p.add_argument("--steps", type=int, default=3500)
    p.add_argument("--shift", choices=["min", "nonneg"], default="min")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("report", help="rebuild summary.csv and report.md from runs.csv")
    p.add_argument("sweep")
    p.add_argument("--method", choices=["t_test", "rank_sum"], default="t_test")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
