"""Experiment harness: data ingestion, synthetic data, prediction,
cross-validation, core-count sweeps and report files."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import model, samplers
from .core import Dataset, Hyperparams, Leaf, Split, Tree
from .runtime import benchmark, derive_seed, rng_stream, timed
from .samplers import PosteriorSample

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
METHODS = ("mcmc", "sumd", "dp")

# desk-scale stand-ins for the six size/feature classes of the benchmark datasets
PRESETS = {
    "SD/SF": (2_000, 8),
    "SD/BF": (2_000, 64),
    "MD/SF": (20_000, 8),
    "MD/BF": (20_000, 64),
    "BD/SF": (200_000, 8),
    "BD/BF": (200_000, 64),
}
PRESET_CLASSES = 3


class DataFormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# data


def load_csv(path: Union[str, os.PathLike], label_column: int = -1, header: bool = False) -> Dataset:
    """Read a numeric CSV with one label column.

    Labels may be arbitrary strings; they are mapped to ``0..K-1`` in order
    of first occurrence and the original names kept in ``label_names``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [(i, row) for i, row in enumerate(csv.reader(fh), start=1)
                 if any(cell.strip() for cell in row)]
    if header and lines:
        lines = lines[1:]
    if not lines:
        raise DataFormatError(f"{path}: no data rows")
    width = len(lines[0][1])
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature and one label column")
    col = label_column if label_column >= 0 else width + label_column
    if not 0 <= col < width:
        raise DataFormatError(f"{path}: label column {label_column} out of range for {width} columns")

    names: dict = {}
    features, labels, bad = [], [], []
    for lineno, row in lines:
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
        try:
            x = [float(v) for j, v in enumerate(row) if j != col]
        except ValueError:
            bad.append(lineno)
            continue
        if not all(math.isfinite(v) for v in x):
            bad.append(lineno)
            continue
        features.append(x)
        labels.append(names.setdefault(row[col].strip(), len(names)))
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise DataFormatError(f"{path}: non-numeric feature values on lines {shown}")
    if len(names) < 2:
        raise DataFormatError(f"{path}: need at least two classes, found {len(names)}")
    return Dataset(np.array(features), np.array(labels), n_classes=len(names),
                   label_names=tuple(names))


@dataclass(frozen=True)
class SyntheticSpec:
    rows: int
    features: int
    classes: int = 2
    seed: int = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "SyntheticSpec":
        """A preset name such as ``SD/SF`` or ``rows,features,classes``."""
        key = text.strip().upper()
        if key in PRESETS:
            rows, feats = PRESETS[key]
            return cls(rows, feats, PRESET_CLASSES, seed)
        parts = [p.strip() for p in text.split(",")]
        if len(parts) not in (2, 3):
            raise ValueError(f"bad synthetic spec {text!r}; use a preset {sorted(PRESETS)} "
                             "or rows,features[,classes]")
        vals = [int(p) for p in parts]
        return cls(*vals, seed=seed)


def planted_tree(spec: SyntheticSpec, attempt: int = 0) -> tuple[Tree, np.ndarray]:
    """Hidden complete tree labelling the synthetic rows, with its leaf classes."""
    rng = rng_stream(spec.seed, "planted", attempt)
    depth = max(3, math.ceil(math.log2(spec.classes)))
    n_leaves = 2 ** depth

    def build(d):
        if d == depth:
            return Leaf()
        f = int(rng.integers(spec.features))
        c = round(float(rng.uniform(0.25, 0.75)), 3) + 0.0005
        return Split(f, c, build(d + 1), build(d + 1))

    tree = Tree(build(0))
    leaf_class = rng.permutation(np.arange(n_leaves) % spec.classes)
    return tree, leaf_class


def generate_synthetic(spec: SyntheticSpec, noise: float = 0.1) -> Dataset:
    """Rows labelled by a random depth-3 tree, with ``noise`` of labels flipped.

    Features are uniform on [0, 1] rounded to two decimals.  Generation is
    repeated with a fresh planted tree until every class occurs.
    """
    if spec.rows < spec.classes:
        raise ValueError("need at least as many rows as classes")
    if spec.features < 1 or spec.classes < 2:
        raise ValueError("need at least one feature and two classes")
    rng = rng_stream(spec.seed, "synthetic")
    X = np.round(rng.random((spec.rows, spec.features)), 2)
    cols = np.ascontiguousarray(X.T)
    for attempt in range(100):
        tree, leaf_class = planted_tree(spec, attempt)
        slot, _ = model.route_columns(tree, cols)
        y = leaf_class[slot]
        flip = rng.random(spec.rows) < noise
        y[flip] = (y[flip] + rng.integers(1, spec.classes, flip.sum())) % spec.classes
        if len(np.unique(y)) == spec.classes:
            return Dataset(X, y, n_classes=spec.classes)
    raise RuntimeError("could not cover every class; use more rows")


# --------------------------------------------------------------------------
# prediction


def predict_proba(samples: PosteriorSample, X) -> np.ndarray:
    """Posterior-mean class probabilities for each row of ``X``."""
    if len(samples) == 0:
        raise ValueError("no retained trees")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cols = np.ascontiguousarray(X.T)
    # chains repeat the same tree object across rejected steps
    multiplicity = Counter(id(t) for t in samples.trees)
    firsts = {id(t): t for t in samples.trees}
    out = None
    for key, count in multiplicity.items():
        tree = firsts[key]
        slot, _ = model.route_columns(tree, cols)
        contrib = count * model.leaf_prob_matrix(tree)[slot]
        out = contrib if out is None else out + contrib
    out /= len(samples)
    return out / out.sum(axis=1, keepdims=True)


def predict(samples: PosteriorSample, x) -> np.ndarray:
    return predict_proba(samples, np.asarray(x, dtype=np.float64)[None, :])[0]


def accuracy(samples: PosteriorSample, data: Dataset) -> float:
    """Percentage of rows whose label is the argmax of the predictive."""
    pred = np.argmax(predict_proba(samples, data.features), axis=1)
    return 100.0 * float(np.mean(pred == data.labels))


def posterior_summary(samples: Sequence[PosteriorSample]) -> dict:
    depths = [t.depth for s in samples for t in s.trees]
    leaves = [len(t.leaf_ids) for s in samples for t in s.trees]
    return {"mean_depth": float(np.mean(depths)) if depths else 0.0,
            "mean_leaves": float(np.mean(leaves)) if leaves else 0.0}


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "mcmc"
    data_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    label_column: int = -1
    header: bool = False
    hp: Hyperparams = field(default_factory=Hyperparams)
    folds: int = 10
    workers_list: tuple = ()
    repetitions: int = 3
    out: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if (self.data_path is None) == (self.synthetic is None):
            raise ValueError("give exactly one of data_path and synthetic")
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if any(w < 1 for w in self.workers_list):
            raise ValueError("worker counts must be positive")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")

    def load(self) -> Dataset:
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic)
        return load_csv(self.data_path, self.label_column, self.header)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["workers_list"] = list(self.workers_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["hp"] = Hyperparams(**d["hp"])
        if d.get("synthetic") is not None:
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        d["workers_list"] = tuple(d.get("workers_list", ()))
        return cls(**d)


@dataclass(frozen=True)
class TimingRow:
    method: str
    workers: int
    repetitions: int
    min: float
    median: float
    mean: float


@dataclass
class RunReport:
    config: dict
    method: str
    label_names: Optional[list] = None
    accuracy_mean: Optional[float] = None
    accuracy_std: Optional[float] = None
    fold_accuracies: list = field(default_factory=list)
    retained: int = 0
    posterior: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def metrics(self) -> dict:
        """Everything except timings: a pure function of config and seed."""
        acc = None
        if self.accuracy_mean is not None:
            acc = {"mean": self.accuracy_mean, "std": self.accuracy_std,
                   "folds": list(self.fold_accuracies)}
        return {"method": self.method, "accuracy": acc, "retained": self.retained,
                "posterior": self.posterior}

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "config": self.config,
                "label_names": self.label_names, "metrics": self.metrics(),
                "timings": [dataclasses.asdict(t) for t in self.timings]}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        m = d["metrics"]
        acc = m["accuracy"] or {}
        return cls(config=d["config"], method=m["method"], label_names=d["label_names"],
                   accuracy_mean=acc.get("mean"), accuracy_std=acc.get("std"),
                   fold_accuracies=list(acc.get("folds", [])), retained=m["retained"],
                   posterior=m["posterior"], timings=[TimingRow(**t) for t in d["timings"]])


def fold_indices(n_rows: int, folds: int, seed: int) -> list:
    """Seeded assignment of rows to ``folds`` near-equal test folds."""
    if n_rows < folds:
        raise ValueError(f"cannot split {n_rows} rows into {folds} folds")
    perm = rng_stream(seed, "folds").permutation(n_rows)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def fit(config: ExperimentConfig, data: Optional[Dataset] = None) -> tuple[PosteriorSample, RunReport]:
    data = config.load() if data is None else data
    with timed(config.method, config.hp.workers) as t:
        sample = samplers.run(data, config.hp, config.method)
    sec = t.timing.seconds
    report = RunReport(config.to_dict(), config.method, _names(data), retained=len(sample),
                       posterior=posterior_summary([sample]),
                       timings=[TimingRow(config.method, config.hp.workers, 1, sec, sec, sec)])
    return sample, report


def cross_validate(config: ExperimentConfig, data: Optional[Dataset] = None) -> RunReport:
    """k-fold CV of ``config.method``; accuracy in percent, mean and sample std."""
    data = config.load() if data is None else data
    hp = config.hp
    accs, fitted = [], []
    start = time.perf_counter()
    for f, test in enumerate(fold_indices(data.n_rows, config.folds, hp.seed)):
        train = np.setdiff1d(np.arange(data.n_rows), test, assume_unique=True)
        hp_f = replace(hp, seed=derive_seed(hp.seed, "fold", f))
        sample = samplers.run(data.take(train), hp_f, config.method)
        accs.append(accuracy(sample, data.take(test)))
        fitted.append(sample)
        log.info("fold %d/%d: accuracy %.2f%%", f + 1, config.folds, accs[-1])
    sec = time.perf_counter() - start
    return RunReport(
        config.to_dict(), config.method, _names(data),
        accuracy_mean=float(np.mean(accs)), accuracy_std=float(np.std(accs, ddof=1)),
        fold_accuracies=accs, retained=sum(len(s) for s in fitted),
        posterior=posterior_summary(fitted),
        timings=[TimingRow(config.method, hp.workers, 1, sec, sec, sec)])


def _clamp_workers(method: str, workers: int, data: Dataset, hp: Hyperparams) -> int:
    limit = {"sumd": hp.iterations, "dp": data.n_rows}.get(method)
    if limit is not None and workers > limit:
        log.warning("clamping %d workers to %d for %s", workers, limit, method)
        return limit
    return workers


def scaling_sweep(config: ExperimentConfig, data: Optional[Dataset] = None,
                  pool_workers: Optional[int] = None, slow_seconds: float = 60.0) -> RunReport:
    """Time ``config.method`` at each worker count of ``config.workers_list``.

    Each point is run once; points faster than ``slow_seconds`` are repeated
    until ``config.repetitions`` runs are available for min/median/mean.
    """
    if not config.workers_list:
        raise ValueError("workers_list is empty")
    data = config.load() if data is None else data
    rows, retained, posts = [], 0, []
    for w in config.workers_list:
        w = _clamp_workers(config.method, w, data, config.hp)
        hp = replace(config.hp, workers=w)
        last = {}

        def go():
            last["s"] = samplers.run(data, hp, config.method, pool_workers)

        first = benchmark(go, 1)
        times = [first.median]
        if first.median < slow_seconds:
            for _ in range(config.repetitions - 1):
                times.append(benchmark(go, 1).median)
        rows.append(TimingRow(config.method, w, len(times), min(times),
                              float(np.median(times)), float(np.mean(times))))
        retained = len(last["s"])
        posts.append(last["s"])
        log.info("%s workers=%d median %.3fs", config.method, w, rows[-1].median)
    return RunReport(config.to_dict(), config.method, _names(data), retained=retained,
                     posterior=posterior_summary(posts), timings=rows)


def _names(data: Dataset) -> Optional[list]:
    return None if data.label_names is None else list(data.label_names)


# --------------------------------------------------------------------------
# output


def emit_report(report: RunReport, out_dir: Union[str, os.PathLike],
                stem: str = "report") -> dict:
    """Write ``<stem>.json``, ``<stem>_timings.csv`` and ``<stem>.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / f"{stem}.json", "csv": out / f"{stem}_timings.csv",
             "text": out / f"{stem}.txt"}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    with open(paths["csv"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "workers", "run_seconds", "min_seconds", "mean_seconds", "repetitions"])
        for t in report.timings:
            w.writerow([t.method, t.workers, repr(t.median), repr(t.min), repr(t.mean), t.repetitions])
    paths["text"].write_text(summary_text(report), encoding="utf-8")
    return paths


def merge_reports(reports: Sequence[RunReport]) -> RunReport:
    """Concatenate the timing rows of several sweeps (e.g. one per method)."""
    first = reports[0]
    return RunReport(first.config, "+".join(r.method for r in reports), first.label_names,
                     retained=first.retained, posterior=first.posterior,
                     timings=[t for r in reports for t in r.timings])


def summary_text(report: RunReport) -> str:
    lines = [f"method: {report.method}"]
    if report.accuracy_mean is not None:
        lines.append(f"accuracy: {report.accuracy_mean:.2f} ± {report.accuracy_std:.2f} "
                     f"({len(report.fold_accuracies)} folds)")
    lines.append(f"retained trees: {report.retained}")
    for k, v in report.posterior.items():
        lines.append(f"{k}: {v:.3f}")
    if report.timings:
        lines.append("")
        lines.append(f"{'method':<8}{'workers':>8}{'median s':>12}{'min s':>12}{'mean s':>12}")
        for t in report.timings:
            lines.append(f"{t.method:<8}{t.workers:>8}{t.median:>12.4f}{t.min:>12.4f}{t.mean:>12.4f}")
    return "\n".join(lines) + "\n"


def _node_to_dict(node) -> dict:
    if isinstance(node, Leaf):
        return {"kind": "leaf", "probs": [float(p) for p in node.probs]}
    return {"kind": "split", "feature": int(node.feature), "threshold": float(node.threshold),
            "children": [_node_to_dict(node.left), _node_to_dict(node.right)]}


def _node_from_dict(d: dict):
    if d["kind"] == "leaf":
        p = np.array(d["probs"], dtype=np.float64)
        p.setflags(write=False)
        return Leaf(p)
    if d["kind"] != "split":
        raise DataFormatError(f"unknown node kind {d['kind']!r}")
    left, right = d["children"]
    return Split(int(d["feature"]), float(d["threshold"]),
                 _node_from_dict(left), _node_from_dict(right))


def samples_to_dict(sample: PosteriorSample, data: Dataset, config: Optional[dict] = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "method": sample.method,
        "n_features": data.n_features,
        "n_classes": data.n_classes,
        "label_names": _names(data),
        "config": config,
        "steps": sample.steps,
        "accepted": sample.accepted,
        "trees": [{"iteration": int(i), "log_joint": float(lj), "root": _node_to_dict(t.root)}
                  for t, i, lj in zip(sample.trees, sample.iterations, sample.log_joints)],
    }


def samples_from_dict(d: dict) -> tuple[PosteriorSample, dict]:
    """Inverse of :func:`samples_to_dict`; also returns the header fields."""
    if d.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"unsupported samples format {d.get('format_version')!r}")
    out = PosteriorSample(method=d.get("method", "mcmc"), steps=d.get("steps", 0),
                          accepted=d.get("accepted", 0))
    for entry in d["trees"]:
        out.append(Tree(_node_from_dict(entry["root"])), entry["iteration"], entry["log_joint"])
    meta = {k: v for k, v in d.items() if k != "trees"}
    return out, meta


def save_samples(path, sample: PosteriorSample, data: Dataset, config: Optional[dict] = None):
    Path(path).write_text(json.dumps(samples_to_dict(sample, data, config)), encoding="utf-8")


def load_samples(path) -> tuple[PosteriorSample, dict]:
    return samples_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
