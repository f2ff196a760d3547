import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from bayestree.core import Dataset, Leaf, Split, Tree, tree_from_key
from bayestree import moves


@pytest.fixture
def six_rows():
    """Hand-checkable data: feature 0 has 5 thresholds, feature 1 has one."""
    X = np.array([[0, 1], [1, 0], [2, 1], [3, 0], [4, 1], [5, 0]], dtype=float)
    y = np.array([0, 0, 0, 1, 1, 1])
    return Dataset(X, y, n_classes=2)


@pytest.fixture
def stump():
    return Tree(Split(0, 2.5, Leaf(), Leaf()))


@pytest.fixture
def two_level():
    return Tree(Split(0, 2.5, Leaf(), Split(1, 0.5, Leaf(), Leaf())))


def complete_tree(depth, feature=0, threshold=0.5):
    if depth == 0:
        return Leaf()
    return Split(feature, threshold, complete_tree(depth - 1, feature, threshold),
                 complete_tree(depth - 1, feature, threshold))


def toy_dataset(n_features=1, n_values=4, n_rows=20, seed=1, noise=0.25):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, n_values, size=(n_rows, n_features)).astype(float)
    # make sure every value occurs so the threshold grid is the full one
    X[:n_values, :] = np.arange(n_values)[:, None]
    y = ((X[:, 0] >= n_values / 2) ^ (rng.random(n_rows) < noise)).astype(int)
    return Dataset(X, y, n_classes=2)


def reachable_space(data, max_depth):
    """Structural keys of every tree reachable from the single leaf."""
    seen = {Tree().key()}
    frontier = [Tree()]
    while frontier:
        t = frontier.pop()
        for key in moves.transition_distribution(t, data, max_depth):
            if key not in seen:
                seen.add(key)
                frontier.append(tree_from_key(key))
    return sorted(seen, key=repr)


def grid_data(*n_candidates):
    """Dataset whose feature f has exactly ``n_candidates[f]`` thresholds."""
    n = max(n_candidates) + 1
    cols = [np.minimum(np.arange(n), k) for k in n_candidates]
    return Dataset(np.column_stack(cols).astype(float), np.arange(n) % 2, n_classes=2)


def shapes(n_internal):
    """All binary tree shapes with ``n_internal`` splits, as nested tuples."""
    if n_internal == 0:
        yield None
        return
    for left in range(n_internal):
        for a in shapes(left):
            for b in shapes(n_internal - 1 - left):
                yield (a, b)


def all_trees(data, max_internal):
    splits = [(k, float(c)) for k in data.splittable for c in data.candidates[k]]
    for m in range(max_internal + 1):
        for shape in shapes(m):
            for params in itertools.product(splits, repeat=m):
                it = iter(params)

                def build(s):
                    if s is None:
                        return Leaf()
                    k, c = next(it)
                    return Split(k, c, build(s[0]), build(s[1]))
                yield Tree(build(shape))


@st.composite
def trees(draw, n_features=3, max_depth=4, thresholds=(0.5, 1.5, 2.5)):
    def node(depth):
        if depth >= max_depth or not draw(st.booleans()):
            return Leaf()
        return Split(draw(st.integers(0, n_features - 1)), draw(st.sampled_from(thresholds)),
                     node(depth + 1), node(depth + 1))
    return Tree(node(0))


@st.composite
def datasets(draw, min_rows=1, max_rows=40, n_features=3, n_classes=3):
    n = draw(st.integers(min_rows, max_rows))
    X = draw(st.lists(st.lists(st.integers(0, 3), min_size=n_features, max_size=n_features),
                      min_size=n, max_size=n))
    y = draw(st.lists(st.integers(0, n_classes - 1), min_size=n, max_size=n))
    return Dataset(np.array(X, dtype=float), np.array(y), n_classes=n_classes)


# acceptance criteria report, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
