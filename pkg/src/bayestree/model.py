"""Log-densities of the probabilistic classification tree.

The joint is ``log p(Y | T, theta, x) + log p(theta | T) + log p(T)`` with

* a categorical likelihood read off the leaf reached by each row,
* a uniform prior over the feature of each split and over the threshold
  grid of that feature,
* the depth prior ``a / (1 + depth)**beta``.

Leaf probabilities are not sampled: they are refitted from the routed
training rows (smoothed class frequencies) after every structural change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ROOT, Dataset, Hyperparams, Leaf, Split, Tree
from .runtime import WorkerPool


def route(tree: Tree, data: Dataset, rows: Optional[np.ndarray] = None):
    """Send rows down the tree.

    Returns ``(slot, leaf_ids)``: ``slot[i]`` is the preorder ordinal of the
    leaf reached by ``rows[i]`` and ``leaf_ids`` maps ordinals to node ids.
    """
    if rows is None:
        rows = np.arange(data.n_rows)
    return route_columns(tree, data.columns, rows)


def route_columns(tree: Tree, columns: np.ndarray, rows: Optional[np.ndarray] = None):
    """:func:`route` on a column-major ``(F, N)`` feature array."""
    if rows is None:
        rows = np.arange(columns.shape[1])
    slot = np.empty(len(rows), dtype=np.intp)
    leaf_ids = []
    # positions index into `rows`/`slot`; the node-local subset travels with them
    stack = [(tree.root, ROOT, np.arange(len(rows)))]
    while stack:
        node, nid, pos = stack.pop()
        if isinstance(node, Leaf):
            slot[pos] = len(leaf_ids)
            leaf_ids.append(nid)
            continue
        go_left = columns[node.feature][rows[pos]] <= node.threshold
        stack.append((node.right, 2 * nid + 1, pos[~go_left]))
        stack.append((node.left, 2 * nid, pos[go_left]))
    return slot, leaf_ids


def leaf_counts(tree: Tree, data: Dataset, rows: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-leaf class counts, shape ``(n_leaves, K)``, leaves in preorder."""
    if rows is None:
        rows = np.arange(data.n_rows)
    slot, leaf_ids = route(tree, data, rows)
    k = data.n_classes
    flat = np.bincount(slot * k + data.labels[rows], minlength=len(leaf_ids) * k)
    return flat.reshape(len(leaf_ids), k)


def leaf_probs(counts: np.ndarray, smoothing: float) -> np.ndarray:
    """``(count + s) / (n + K s)`` per leaf; leaves without rows are uniform."""
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.shape[1]
    n = counts.sum(axis=1)
    if smoothing > 0:
        p = (counts + smoothing) / (n + k * smoothing)[:, None]
    else:
        p = np.full(counts.shape, 1.0 / k)
        seen = n > 0
        p[seen] = counts[seen] / n[seen, None]
    p /= p.sum(axis=1)[:, None]
    return p


def with_leaf_probs(tree: Tree, probs) -> Tree:
    """Copy of ``tree`` whose leaves, in preorder, carry ``probs``."""
    P = np.array(probs, dtype=np.float64)
    P.setflags(write=False)
    it = iter(P)

    def build(node):
        if isinstance(node, Leaf):
            return Leaf(next(it))
        return Split(node.feature, node.threshold, build(node.left), build(node.right))

    return Tree(build(tree.root))


def fit_leaves(tree: Tree, data: Dataset, smoothing: float = 1.0) -> Tree:
    if smoothing < 0:
        raise ValueError("smoothing must be non-negative")
    return with_leaf_probs(tree, leaf_probs(leaf_counts(tree, data), smoothing))


def leaf_prob_matrix(tree: Tree) -> np.ndarray:
    """Leaf probability vectors stacked in preorder, shape ``(n_leaves, K)``."""
    probs = [node.probs for _, _, node in tree.walk() if isinstance(node, Leaf)]
    if any(p is None for p in probs):
        raise ValueError("tree has unfitted leaves; call fit_leaves first")
    return np.vstack(probs)


def row_log_probs(tree: Tree, data: Dataset, rows: Optional[np.ndarray] = None) -> np.ndarray:
    """``log p(Y_i | x_i, T)`` for each of ``rows`` (all rows by default)."""
    if rows is None:
        rows = np.arange(data.n_rows)
    P = leaf_prob_matrix(tree)
    if P.shape[1] != data.n_classes:
        raise ValueError(f"leaves have {P.shape[1]} classes, data has {data.n_classes}")
    slot, _ = route(tree, data, rows)
    with np.errstate(divide="ignore"):
        return np.log(P[slot, data.labels[rows]])


def log_likelihood(tree: Tree, data: Dataset) -> float:
    return float(np.sum(row_log_probs(tree, data)))


def log_param_prior(tree: Tree, data: Dataset) -> float:
    """Sum over splits of ``log(1/F) + log(1/#thresholds of the split feature)``.

    A threshold off the grid of its feature has probability zero.
    """
    total = 0.0
    log_f = math.log(data.n_features)
    for _, _, node in tree.walk():
        if isinstance(node, Split):
            if node.feature >= data.n_features or node.threshold not in data.candidate_sets[node.feature]:
                return -math.inf
            total -= log_f + math.log(len(data.candidates[node.feature]))
    return total


def log_tree_prior(tree: Tree, hp: Hyperparams) -> float:
    return math.log(hp.a) - hp.beta * math.log1p(tree.depth)


def log_joint(tree: Tree, data: Dataset, hp: Hyperparams) -> float:
    return log_likelihood(tree, data) + log_param_prior(tree, data) + log_tree_prior(tree, hp)


def evaluate(tree: Tree, data: Dataset, hp: Hyperparams) -> tuple[Tree, float]:
    """Fit the leaves of ``tree`` and return it with its log joint.

    Same value as ``log_joint(fit_leaves(tree, data, s), data, hp)`` but
    routes the data once.
    """
    lpp, ltp = log_param_prior(tree, data), log_tree_prior(tree, hp)
    slot, leaf_ids = route(tree, data)
    k = data.n_classes
    counts = np.bincount(slot * k + data.labels, minlength=len(leaf_ids) * k)
    P = leaf_probs(counts.reshape(len(leaf_ids), k), hp.leaf_smoothing)
    fitted = with_leaf_probs(tree, P)
    if hp.leaf_smoothing > 0:
        ll = float(np.sum(np.log(P[slot, data.labels])))
    else:
        with np.errstate(divide="ignore"):
            ll = float(np.sum(np.log(P[slot, data.labels])))
    return fitted, ll + lpp + ltp


# --------------------------------------------------------------------------
# data partitioning


@dataclass(frozen=True)
class Partition:
    """Contiguous, disjoint row ranges covering ``0..N-1``."""

    shards: tuple

    @classmethod
    def even(cls, n_rows: int, n_shards: int) -> "Partition":
        """Sizes differ by at most one; the first ``n_rows % n_shards`` are larger.

        With more shards than rows the surplus shards are empty.
        """
        if n_shards < 1:
            raise ValueError("need at least one shard")
        base, extra = divmod(n_rows, n_shards)
        shards, start = [], 0
        for i in range(n_shards):
            stop = start + base + (i < extra)
            shards.append((start, stop))
            start = stop
        return cls(tuple(shards))

    @property
    def n_shards(self) -> int:
        return len(self.shards)

    def covers(self, n_rows: int) -> bool:
        pos = 0
        for start, stop in self.shards:
            if start != pos or stop < start:
                return False
            pos = stop
        return pos == n_rows


def _shard_counts(data: Dataset, item):
    tree, (start, stop) = item
    return leaf_counts(tree, data, np.arange(start, stop))


def _shard_log_likelihood(data: Dataset, item):
    tree, (start, stop) = item
    return float(np.sum(row_log_probs(tree, data, np.arange(start, stop))))


def _ordered_sum(partials) -> float:
    total = partials[0]
    for p in partials[1:]:
        total = total + p
    return float(total)


def partitioned_log_likelihood(tree: Tree, data: Dataset, part: Partition,
                               pool: Optional[WorkerPool] = None) -> float:
    """Log-likelihood as a fold, in shard order, of per-shard partial sums.

    Shards may be evaluated concurrently by ``pool`` (whose context must be
    ``data``); the combine step is always sequential, so the value depends
    only on the partition and not on scheduling.
    """
    if not part.covers(data.n_rows):
        raise ValueError("partition does not cover the dataset")
    items = [(tree, shard) for shard in part.shards]
    if pool is None:
        partials = [_shard_log_likelihood(data, it) for it in items]
    else:
        partials = pool.map(_shard_log_likelihood, items)
    return _ordered_sum(partials)


def evaluate_partitioned(tree: Tree, data: Dataset, hp: Hyperparams, part: Partition,
                         pool: Optional[WorkerPool] = None) -> tuple[Tree, float]:
    """:func:`evaluate` with the data split across shards.

    Two parallel passes: shards count labels per leaf (reduced exactly, as
    integers), then, with the fitted leaves, each shard sums its rows'
    log-probabilities.
    """
    if not part.covers(data.n_rows):
        raise ValueError("partition does not cover the dataset")
    lpp, ltp = log_param_prior(tree, data), log_tree_prior(tree, hp)
    items = [(tree, shard) for shard in part.shards]
    partial_counts = (pool.map(_shard_counts, items) if pool is not None
                      else [_shard_counts(data, it) for it in items])
    counts = partial_counts[0]
    for c in partial_counts[1:]:
        counts = counts + c
    fitted = with_leaf_probs(tree, leaf_probs(counts, hp.leaf_smoothing))
    return fitted, partitioned_log_likelihood(fitted, data, part, pool) + lpp + ltp
