"""Grow / Prune / Change / Swap proposals on trees.

A proposal first picks a kind uniformly among the kinds valid for the
current tree, then an outcome uniformly within the kind:

Grow    a growable leaf, a splittable feature and one of its thresholds
Prune   an internal node whose children are both leaves
Change  an internal node, then a feature and threshold as in Grow
Swap    an unordered pair of internal nodes, whose (feature, threshold)
        pairs are exchanged

``log_q_fwd`` and ``log_q_rev`` are total transition probabilities: when
several outcomes produce the same tree (Change redrawing the current split,
Swap on two identical splits) their probabilities are summed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .core import DegenerateDatasetError, Dataset, Leaf, Split, Tree, node_depth


class MoveKind(enum.Enum):
    GROW = "grow"
    PRUNE = "prune"
    CHANGE = "change"
    SWAP = "swap"


@dataclass(frozen=True, eq=False)
class Proposal:
    kind: MoveKind
    new_tree: Tree
    log_q_fwd: float
    log_q_rev: float
    target: tuple = ()


def growable_leaves(tree: Tree, max_depth: Optional[int] = None) -> tuple:
    if max_depth is None:
        return tree.leaf_ids
    return tuple(j for j in tree.leaf_ids if node_depth(j) < max_depth)


def _valid(tree: Tree, data: Dataset, max_depth: Optional[int]) -> list:
    kinds = []
    if data.splittable and growable_leaves(tree, max_depth):
        kinds.append(MoveKind.GROW)
    if tree.prunable_ids:
        kinds.append(MoveKind.PRUNE)
    if tree.internal_ids:
        kinds.append(MoveKind.CHANGE)
    if len(tree.internal_ids) >= 2:
        kinds.append(MoveKind.SWAP)
    return kinds


def valid_moves(tree: Tree, data: Dataset, max_depth: Optional[int] = None) -> frozenset:
    return frozenset(_valid(tree, data, max_depth))


def _log_pick_split(data: Dataset, feature: int, threshold: float) -> float:
    """log P(drawing this feature and threshold) under the Grow/Change draw."""
    if feature not in data.splittable or threshold not in data.candidate_sets[feature]:
        return -math.inf
    return -math.log(len(data.splittable)) - math.log(len(data.candidates[feature]))


def _log_q_stay(tree: Tree, data: Dataset, kinds: list) -> float:
    """Total probability of proposing an unchanged tree."""
    terms = []
    base = -math.log(len(kinds))
    internal = [tree.node(j) for j in tree.internal_ids]
    m = len(internal)
    if MoveKind.CHANGE in kinds:
        for node in internal:
            terms.append(base - math.log(m) + _log_pick_split(data, node.feature, node.threshold))
    if MoveKind.SWAP in kinds:
        equal_pairs = sum(
            1 for i in range(m) for j in range(i + 1, m)
            if (internal[i].feature, internal[i].threshold) == (internal[j].feature, internal[j].threshold))
        if equal_pairs:
            terms.append(base + math.log(2 * equal_pairs / (m * (m - 1))))
    terms = [t for t in terms if t > -math.inf]
    if not terms:
        return -math.inf
    top = max(terms)
    return top + math.log(sum(math.exp(t - top) for t in terms))


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def propose(tree: Tree, data: Dataset, rng: np.random.Generator,
            max_depth: Optional[int] = None) -> Proposal:
    """Draw one move from ``tree``; new leaves are unfitted."""
    kinds = _valid(tree, data, max_depth)
    if not data.splittable:
        raise DegenerateDatasetError("every feature is constant; no split threshold exists")
    if not kinds:
        raise ValueError("no valid move from this tree")
    kind = _pick(rng, kinds)
    base = -math.log(len(kinds))

    if kind is MoveKind.GROW:
        leaves = growable_leaves(tree, max_depth)
        j = _pick(rng, leaves)
        k = _pick(rng, data.splittable)
        c = float(_pick(rng, data.candidates[k]))
        new = tree.replace(j, Split(k, c, Leaf(), Leaf()))
        fwd = base - math.log(len(leaves)) + _log_pick_split(data, k, c)
        rev = -math.log(len(_valid(new, data, max_depth))) - math.log(len(new.prunable_ids))
        return Proposal(kind, new, fwd, rev, (j,))

    if kind is MoveKind.PRUNE:
        j = _pick(rng, tree.prunable_ids)
        old = tree.node(j)
        new = tree.replace(j, Leaf())
        fwd = base - math.log(len(tree.prunable_ids))
        new_leaves = growable_leaves(new, max_depth)
        if j in new_leaves:
            rev = (-math.log(len(_valid(new, data, max_depth))) - math.log(len(new_leaves))
                   + _log_pick_split(data, old.feature, old.threshold))
        else:
            rev = -math.inf
        return Proposal(kind, new, fwd, rev, (j,))

    if kind is MoveKind.CHANGE:
        j = _pick(rng, tree.internal_ids)
        old = tree.node(j)
        k = _pick(rng, data.splittable)
        c = float(_pick(rng, data.candidates[k]))
        if (k, c) == (old.feature, old.threshold):
            stay = _log_q_stay(tree, data, kinds)
            return Proposal(kind, tree, stay, stay, (j,))
        new = tree.replace(j, Split(k, c, old.left, old.right))
        pick_j = base - math.log(len(tree.internal_ids))
        fwd = pick_j + _log_pick_split(data, k, c)
        rev = pick_j + _log_pick_split(data, old.feature, old.threshold)
        return Proposal(kind, new, fwd, rev, (j,))

    internal = tree.internal_ids
    m = len(internal)
    a = int(rng.integers(m))
    b = int(rng.integers(m - 1))
    b += b >= a
    j1, j2 = sorted((internal[a], internal[b]))
    n1, n2 = tree.node(j1), tree.node(j2)
    if (n1.feature, n1.threshold) == (n2.feature, n2.threshold):
        stay = _log_q_stay(tree, data, kinds)
        return Proposal(kind, tree, stay, stay, (j1, j2))
    new = tree.replace(j1, Split(n2.feature, n2.threshold, n1.left, n1.right))
    n2_now = new.node(j2)  # j2 may sit below j1
    new = new.replace(j2, Split(n1.feature, n1.threshold, n2_now.left, n2_now.right))
    lq = base + math.log(2.0 / (m * (m - 1)))
    return Proposal(kind, new, lq, lq, (j1, j2))


# --------------------------------------------------------------------------
# brute-force enumeration


def enumerate_moves(tree: Tree, data: Dataset,
                    max_depth: Optional[int] = None) -> Iterator[tuple[MoveKind, tuple, Tree, float]]:
    """Yield every outcome of :func:`propose` as ``(kind, target, tree, prob)``.

    Probabilities are products of the uniform choice sizes along each draw,
    computed without the closed forms used by :func:`propose`.
    """
    kinds = _valid(tree, data, max_depth)
    for kind in kinds:
        p_kind = 1.0 / len(kinds)
        if kind is MoveKind.GROW:
            leaves = growable_leaves(tree, max_depth)
            for j in leaves:
                for k in data.splittable:
                    cands = data.candidates[k]
                    for c in cands:
                        p = p_kind / len(leaves) / len(data.splittable) / len(cands)
                        yield kind, (j,), tree.replace(j, Split(k, float(c), Leaf(), Leaf())), p
        elif kind is MoveKind.PRUNE:
            for j in tree.prunable_ids:
                yield kind, (j,), tree.replace(j, Leaf()), p_kind / len(tree.prunable_ids)
        elif kind is MoveKind.CHANGE:
            for j in tree.internal_ids:
                old = tree.node(j)
                for k in data.splittable:
                    cands = data.candidates[k]
                    for c in cands:
                        p = p_kind / len(tree.internal_ids) / len(data.splittable) / len(cands)
                        yield kind, (j,), tree.replace(j, Split(k, float(c), old.left, old.right)), p
        else:
            ids = tree.internal_ids
            m = len(ids)
            # ordered draws of two distinct positions
            for a in range(m):
                for b in range(m):
                    if a == b:
                        continue
                    j1, j2 = sorted((ids[a], ids[b]))
                    n1, n2 = tree.node(j1), tree.node(j2)
                    new = tree.replace(j1, Split(n2.feature, n2.threshold, n1.left, n1.right))
                    below = new.node(j2)
                    new = new.replace(j2, Split(n1.feature, n1.threshold, below.left, below.right))
                    yield kind, (j1, j2), new, p_kind / m / (m - 1)


def transition_distribution(tree: Tree, data: Dataset, max_depth: Optional[int] = None) -> dict:
    """Map from structural key of each reachable tree to its total probability."""
    dist: dict = {}
    for _, _, new, p in enumerate_moves(tree, data, max_depth):
        key = new.key()
        dist[key] = dist.get(key, 0.0) + p
    return dist


def transition_log_prob(src: Tree, dst: Tree, data: Dataset,
                        max_depth: Optional[int] = None) -> float:
    """log P(one proposal from ``src`` yields ``dst``); ``-inf`` if impossible.

    Enumerates every outcome, so only suitable for small trees and grids.
    """
    p = transition_distribution(src, data, max_depth).get(dst.key(), 0.0)
    return math.log(p) if p > 0 else -math.inf
