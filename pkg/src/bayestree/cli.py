"""Command line interface: ``bayestree {fit,cv,sweep,predict}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .core import Hyperparams
from .runtime import resolve_workers


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--method", choices=harness.METHODS, default="mcmc")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV file, one label column")
    src.add_argument("--synthetic", help="preset (SD/SF ... BD/BF) or rows,features[,classes]")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic generator")
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--header", action="store_true", help="CSV has a header row")
    p.add_argument("--iterations", type=int, default=8000)
    p.add_argument("--burn-in", type=int, default=None, help="default: half the iterations")
    p.add_argument("--workers", type=int, default=None,
                   help="particles (sumd) or shards (dp); default: core count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=1.0, help="tree-prior constant a")
    p.add_argument("--beta", type=float, default=1.0, help="tree-prior depth penalty")
    p.add_argument("--smoothing", type=float, default=1.0, help="leaf pseudocount")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--sumd-weight", choices=("ratio", "capped"), default="ratio")
    p.add_argument("--out", default="results")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayestree",
                                     description="Bayesian classification trees: MCMC, SUMD and DP samplers")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    sub.add_parser("fit", parents=[common], help="sample trees and save them")
    cv = sub.add_parser("cv", parents=[common], help="k-fold cross-validated accuracy")
    cv.add_argument("--folds", type=int, default=10)
    sw = sub.add_parser("sweep", parents=[common], help="run time against worker count")
    sw.add_argument("--workers-list", default="1,2,4",
                    help="comma-separated worker counts")
    sw.add_argument("--repetitions", type=int, default=3)
    pr = sub.add_parser("predict", help="predict with saved trees")
    pr.add_argument("--model", required=True, help="samples.json written by fit")
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True, help="output CSV")
    pr.add_argument("--label-column", type=int, default=-1)
    pr.add_argument("--header", action="store_true")
    pr.add_argument("--no-labels", action="store_true", help="the CSV holds features only")
    return parser


def config_from_args(args) -> harness.ExperimentConfig:
    workers = args.workers if args.workers is not None else resolve_workers()
    burn_in = args.burn_in if args.burn_in is not None else args.iterations // 2
    hp = Hyperparams(a=args.alpha, beta=args.beta, iterations=args.iterations, burn_in=burn_in,
                     workers=workers, seed=args.seed, leaf_smoothing=args.smoothing,
                     max_depth=args.max_depth, sumd_weight=args.sumd_weight)
    synthetic = (harness.SyntheticSpec.parse(args.synthetic, seed=args.data_seed)
                 if args.synthetic else None)
    extra = {}
    if getattr(args, "folds", None) is not None:
        extra["folds"] = args.folds
    if getattr(args, "workers_list", None):
        extra["workers_list"] = tuple(int(w) for w in args.workers_list.split(","))
        extra["repetitions"] = args.repetitions
    return harness.ExperimentConfig(method=args.method, data_path=args.data, synthetic=synthetic,
                                    label_column=args.label_column, header=args.header,
                                    hp=hp, out=args.out, **extra)


def _predict(args) -> int:
    sample, meta = harness.load_samples(args.model)
    path = Path(args.data)
    if args.no_labels:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
        if args.header:
            rows = rows[1:]
        X, y_names = np.array(rows, dtype=np.float64), None
    else:
        data = harness.load_csv(path, args.label_column, args.header)
        X = data.features
        y_names = [data.label_names[i] for i in data.labels]
    if X.shape[1] != meta["n_features"]:
        raise SystemExit(f"model expects {meta['n_features']} features, data has {X.shape[1]}")
    probs = harness.predict_proba(sample, X)
    names = meta.get("label_names") or [str(k) for k in range(meta["n_classes"])]
    pred = [names[k] for k in np.argmax(probs, axis=1)]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "predicted"] + [f"p_{n}" for n in names])
        for i, (label, p) in enumerate(zip(pred, probs)):
            w.writerow([i, label] + [repr(float(v)) for v in p])
    if y_names is not None:
        acc = 100.0 * np.mean([a == b for a, b in zip(pred, y_names)])
        print(f"accuracy: {acc:.2f}%")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "predict":
        return _predict(args)
    try:
        config = config_from_args(args)
    except ValueError as e:
        raise SystemExit(f"bayestree: {e}")
    out = Path(config.out)
    if args.command == "fit":
        data = config.load()
        sample, report = harness.fit(config, data)
        out.mkdir(parents=True, exist_ok=True)
        harness.save_samples(out / "samples.json", sample, data, config.to_dict())
    elif args.command == "cv":
        report = harness.cross_validate(config)
    else:
        report = harness.scaling_sweep(config)
    paths = harness.emit_report(report, out)
    sys.stdout.write(harness.summary_text(report))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
