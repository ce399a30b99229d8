"""Shared fixtures: a hand-built forest, brute-force proximity oracles and a
small artificial tree."""

import sys

import numpy as np
import pytest

from rfae.dataset import generate_artificial_tree
from rfae.forest import LEAF, Forest, Tree

# Six 2-D points, two classes.
HAND_X = np.array([[0.0, 0.0], [0.1, 0.9], [0.2, 0.4], [0.7, 0.1], [0.8, 0.8], [0.9, 0.5]])
HAND_Y = np.array([0, 0, 0, 1, 1, 1])

# (feature, threshold) splits for three depth-1 or depth-2 trees and their
# bootstrap multiplicities. Every point is OOB in at least one tree and
# in-bag in at least one.
HAND_TREES = [
    # tree 0: x0 <= 0.5, then right side on x1 <= 0.3
    dict(feature=[0, LEAF, 1, LEAF, LEAF], threshold=[0.5, 0, 0.3, 0, 0],
         left=[1, -1, 3, -1, -1], right=[2, -1, 4, -1, -1],
         inbag=[2, 1, 0, 1, 0, 2]),
    # tree 1: x1 <= 0.45
    dict(feature=[1, LEAF, LEAF], threshold=[0.45, 0, 0], left=[1, -1, -1], right=[2, -1, -1],
         inbag=[0, 1, 2, 0, 2, 1]),
    # tree 2: x0 <= 0.15, then right side on x0 <= 0.75
    dict(feature=[0, LEAF, 0, LEAF, LEAF], threshold=[0.15, 0, 0.75, 0, 0],
         left=[1, -1, 3, -1, -1], right=[2, -1, 4, -1, -1],
         inbag=[1, 0, 1, 3, 1, 0]),
]


def build_hand_forest():
    trees = []
    for spec in HAND_TREES:
        n_nodes = len(spec["feature"])
        trees.append(Tree(spec["feature"], spec["threshold"], spec["left"], spec["right"],
                          np.zeros((n_nodes, 2)), spec["inbag"]))
    return Forest.from_trees(trees, HAND_X, 2)


@pytest.fixture
def hand_forest():
    return build_hand_forest()


def naive_leaf(spec, x):
    node = 0
    while spec["feature"][node] != LEAF:
        f = spec["feature"][node]
        node = spec["left"][node] if x[f] <= spec["threshold"][node] else spec["right"][node]
    return node


def tally_proximity(specs, X_train, i=None, j=None, x_new=None):
    """Per-tree tally of RF-GAP values straight from the definitions.

    ``x_new`` given: proximity of the new point to training point ``j``,
    averaged over all trees. ``i == j``: self-similarity over in-bag trees.
    Otherwise: proximity of ``i`` to ``j`` over the OOB trees of ``i``.
    """
    total, count = 0.0, 0
    for spec in specs:
        c = spec["inbag"]
        leaves = [naive_leaf(spec, x) for x in X_train]
        if x_new is not None:
            leaf_i = naive_leaf(spec, x_new)
        else:
            leaf_i = leaves[i]
            oob = c[i] == 0
            if (i == j and oob) or (i != j and not oob):
                continue
        size = sum(c[k] for k in range(len(X_train)) if leaves[k] == leaf_i)
        count += 1
        if leaves[j] == leaf_i and c[j] > 0:
            total += c[j] / size
    return total / count


@pytest.fixture(scope="session")
def small_tree():
    """A 3-branch artificial tree (240 points) for fast pipeline tests."""
    return generate_artificial_tree(seed=0, branch_lengths=(60, 60, 60), parents=(-1, 0, 0),
                                    points_per_node=20)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
