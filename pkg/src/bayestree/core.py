"""Domain types: datasets, decision trees and sampler hyperparameters.

Trees are persistent: every node is an immutable value and structural edits
return a new tree that shares untouched subtrees with the old one.  Node ids
use heap numbering (root is 1, the children of ``j`` are ``2j`` and
``2j + 1``), so an id is stable for as long as the node exists in a tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Optional, Union

import numpy as np

ROOT = 1


class DegenerateDatasetError(ValueError):
    """No feature of the dataset admits a split threshold."""


class InvalidTreeError(ValueError):
    pass


# --------------------------------------------------------------------------
# dataset


@dataclass(frozen=True, eq=False)
class Dataset:
    """N rows of F real features with integer class labels in ``0..K-1``.

    ``feature_meta[f]`` holds the sorted distinct values of column ``f`` and
    ``candidates[f]`` the midpoints between consecutive ones, which form the
    discrete threshold grid used by the priors and the proposal kernel.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int] = None
    label_names: Optional[tuple] = None
    feature_meta: tuple = field(init=False, repr=False)
    candidates: tuple = field(init=False, repr=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, copy=True)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {X.shape}")
        n, f = X.shape
        if n < 1 or f < 1:
            raise ValueError(f"need N >= 1 and F >= 1, got {X.shape}")
        if y.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if y.dtype.kind not in "iu":
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        k = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if k < 2:
            raise ValueError(f"need at least 2 classes, got K={k}")
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must lie in 0..{k - 1}")
        if self.label_names is not None and len(self.label_names) != k:
            raise ValueError("label_names must have one entry per class")
        X.setflags(write=False)
        y.setflags(write=False)
        meta = []
        cands = []
        for col in X.T:
            u = np.unique(col)
            u.setflags(write=False)
            c = (u[:-1] + u[1:]) / 2.0
            c.setflags(write=False)
            meta.append(u)
            cands.append(c)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", k)
        object.__setattr__(self, "feature_meta", tuple(meta))
        object.__setattr__(self, "candidates", tuple(cands))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def columns(self) -> np.ndarray:
        """Column-major copy of the features, for fast per-feature gathers."""
        return np.ascontiguousarray(self.features.T)

    @cached_property
    def splittable(self) -> tuple:
        """Indices of features with at least one candidate threshold."""
        return tuple(f for f, c in enumerate(self.candidates) if len(c) > 0)

    @cached_property
    def candidate_sets(self) -> tuple:
        return tuple(frozenset(c.tolist()) for c in self.candidates)

    def take(self, rows) -> "Dataset":
        """Sub-dataset on ``rows``; the class count and label names are kept."""
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows],
                       n_classes=self.n_classes, label_names=self.label_names)

    def __getstate__(self):
        # cached arrays are cheap to rebuild and would double the pickle size
        return {"features": self.features, "labels": self.labels,
                "n_classes": self.n_classes, "label_names": self.label_names}

    def __setstate__(self, state):
        self.__init__(**state)


# --------------------------------------------------------------------------
# trees


@dataclass(frozen=True, eq=False)
class Leaf:
    """Terminal node; ``probs`` is the class-probability vector, or None if
    the leaf has not been fitted yet."""

    probs: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Split:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Split]


class TreeStats(NamedTuple):
    depth: int
    leaves: int
    internal: int
    prunable: int


def left_child(node_id: int) -> int:
    return 2 * node_id


def right_child(node_id: int) -> int:
    return 2 * node_id + 1


def node_depth(node_id: int) -> int:
    return node_id.bit_length() - 1


@dataclass(frozen=True, eq=False)
class Tree:
    root: Node = field(default_factory=Leaf)

    def walk(self) -> Iterator[tuple[int, int, Node]]:
        """Yield ``(node_id, depth, node)`` in preorder."""
        stack = [(ROOT, 0, self.root)]
        while stack:
            nid, d, node = stack.pop()
            yield nid, d, node
            if isinstance(node, Split):
                stack.append((2 * nid + 1, d + 1, node.right))
                stack.append((2 * nid, d + 1, node.left))

    def node(self, node_id: int) -> Node:
        node = self.root
        for bit in bin(node_id)[3:]:
            if not isinstance(node, Split):
                raise KeyError(node_id)
            node = node.right if bit == "1" else node.left
        return node

    def replace(self, node_id: int, new: Node) -> "Tree":
        """Return a copy of the tree with the subtree at ``node_id`` replaced."""
        path = bin(node_id)[3:]
        spine = [self.root]
        for bit in path:
            parent = spine[-1]
            if not isinstance(parent, Split):
                raise KeyError(node_id)
            spine.append(parent.right if bit == "1" else parent.left)
        for bit, parent in zip(reversed(path), reversed(spine[:-1])):
            if bit == "1":
                new = Split(parent.feature, parent.threshold, parent.left, new)
            else:
                new = Split(parent.feature, parent.threshold, new, parent.right)
        return Tree(new)

    @cached_property
    def _index(self):
        leaves, internal, prunable = [], [], []
        depth = 0
        for nid, d, node in self.walk():
            if isinstance(node, Split):
                internal.append(nid)
                if isinstance(node.left, Leaf) and isinstance(node.right, Leaf):
                    prunable.append(nid)
            else:
                leaves.append(nid)
                depth = max(depth, d)
        return tuple(leaves), tuple(internal), tuple(prunable), depth

    @property
    def leaf_ids(self) -> tuple:
        return self._index[0]

    @property
    def internal_ids(self) -> tuple:
        return self._index[1]

    @property
    def prunable_ids(self) -> tuple:
        """Internal nodes whose two children are both leaves."""
        return self._index[2]

    @property
    def depth(self) -> int:
        return self._index[3]

    def key(self):
        """Hashable structural identity: splits and thresholds, not leaf probs."""
        return _key(self.root)

    def same_structure(self, other: "Tree") -> bool:
        return self.key() == other.key()

    @property
    def is_fitted(self) -> bool:
        return all(isinstance(n, Split) or n.probs is not None
                   for _, _, n in self.walk())

    def __repr__(self):
        return f"Tree({_fmt(self.root)})"


def _key(node):
    if isinstance(node, Leaf):
        return None
    return (node.feature, node.threshold, _key(node.left), _key(node.right))


def _fmt(node):
    if isinstance(node, Leaf):
        return "leaf" if node.probs is None else "leaf" + np.array2string(
            np.asarray(node.probs), precision=3)
    return f"[x{node.feature}<={node.threshold:g} ? {_fmt(node.left)} : {_fmt(node.right)}]"


def tree_from_key(key) -> Tree:
    """Inverse of :meth:`Tree.key`; leaves come back unfitted."""
    def build(k):
        if k is None:
            return Leaf()
        f, c, left, right = k
        return Split(f, c, build(left), build(right))
    return Tree(build(key))


def descend(tree: Tree, x) -> int:
    """Id of the leaf reached by ``x``: left iff ``x[feature] <= threshold``."""
    node, nid = tree.root, ROOT
    while isinstance(node, Split):
        if x[node.feature] <= node.threshold:
            node, nid = node.left, 2 * nid
        else:
            node, nid = node.right, 2 * nid + 1
    return nid


def tree_stats(tree: Tree) -> TreeStats:
    return TreeStats(tree.depth, len(tree.leaf_ids), len(tree.internal_ids),
                     len(tree.prunable_ids))


def validate(tree: Tree, n_classes: Optional[int] = None,
             n_features: Optional[int] = None, require_fitted: bool = False):
    """Raise :class:`InvalidTreeError` if any structural invariant fails."""
    seen = set()
    n_leaves = n_internal = 0
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            raise InvalidTreeError("node reachable along two paths")
        seen.add(id(node))
        if isinstance(node, Split):
            n_internal += 1
            if not isinstance(node.feature, (int, np.integer)) or node.feature < 0:
                raise InvalidTreeError(f"bad feature index {node.feature!r}")
            if n_features is not None and node.feature >= n_features:
                raise InvalidTreeError(f"feature {node.feature} out of range")
            if not math.isfinite(node.threshold):
                raise InvalidTreeError("threshold must be finite")
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Leaf):
            n_leaves += 1
            if node.probs is None:
                if require_fitted:
                    raise InvalidTreeError("unfitted leaf")
                continue
            p = np.asarray(node.probs)
            if p.ndim != 1 or (n_classes is not None and p.shape[0] != n_classes):
                raise InvalidTreeError(f"leaf probs have shape {p.shape}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise InvalidTreeError("leaf probs are not on the simplex")
        else:
            raise InvalidTreeError(f"unknown node type {type(node).__name__}")
    if n_leaves != n_internal + 1:
        raise InvalidTreeError("leaf count must exceed internal count by one")


# --------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants and run settings shared by all samplers.

    ``max_depth`` truncates the tree space (Grow is disabled at leaves that
    already sit at that depth); None leaves it unbounded.  ``sumd_burn_in``
    counts rounds and defaults to half the SUMD rounds.  ``sumd_weight``
    selects the incremental particle weight: ``"ratio"`` uses the full
    Metropolis-Hastings ratio, ``"capped"`` uses ``min(1, ratio)``.
    """

    a: float = 1.0
    beta: float = 1.0
    iterations: int = 8000
    burn_in: int = 4000
    workers: int = 1
    seed: int = 0
    leaf_smoothing: float = 1.0
    max_depth: Optional[int] = None
    init_depth: int = 0
    sumd_burn_in: Optional[int] = None
    sumd_weight: str = "ratio"

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.workers < 1:
            raise ValueError("workers must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.leaf_smoothing > 0:
            raise ValueError("leaf_smoothing must be positive")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.init_depth < 0:
            raise ValueError("init_depth must be non-negative")
        if self.sumd_weight not in ("ratio", "capped"):
            raise ValueError(f"unknown sumd_weight {self.sumd_weight!r}")
