import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from evobagging.data import Dataset
from evobagging.errors import TreeError

logger = logging.getLogger(__name__)

# Float slack when comparing child impurity against the parent
IMPURITY_TOL = 1e-12


class SplitMode(str, Enum):
    ALL_FEATURES = "all_features"
    RANDOM_SUBSPACE = "random_subspace"
    RANDOM_THRESHOLD = "random_threshold"


class TreeConfig(BaseModel):
    """
    Split search and stopping rules of a single tree.

    - all_features: exact CART search over every feature (bagging)
    - random_subspace: exact search over `max_features` random features per node,
      default ceil(sqrt(n_features)) (random forest)
    - random_threshold: one uniform threshold per feature, best one kept (extra-trees)
    """

    model_config = ConfigDict(frozen=True)

    split_mode: SplitMode = SplitMode.ALL_FEATURES
    max_features: int | None = Field(default=None, ge=1)
    max_depth: int | None = Field(default=None, ge=1)
    min_samples_split: int = Field(default=2, ge=1)
    min_impurity_decrease: float = Field(default=0.0, ge=0.0)
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True)
class TreeNode:
    """Binary split node, or a leaf when `feature_index` is None.

    Every node keeps the multiplicity-weighted class counts of the samples that
    reached it; `n_features` is the width the tree was fitted on.
    """

    class_counts: np.ndarray
    n_features: int
    feature_index: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature_index is None

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.class_counts))


def gini_impurity(class_counts) -> float:
    """1 - sum(p_c^2) for the given class counts."""
    counts = np.asarray(class_counts, dtype=float)
    if np.any(counts < 0):
        raise TreeError(f"class counts must be non-negative, got {counts.tolist()}")
    total = counts.sum()
    if total <= 0:
        raise TreeError("gini impurity is undefined for all-zero class counts")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _weighted_child_gini(left: np.ndarray, total_counts: np.ndarray) -> np.ndarray:
    # left: (n_candidates, n_classes) counts going left; returns weighted child impurity per candidate
    right = total_counts - left
    n_left = left.sum(axis=1)
    n_right = right.sum(axis=1)
    gini_left = 1.0 - np.sum((left / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right / n_right[:, None]) ** 2, axis=1)
    return (n_left * gini_left + n_right * gini_right) / total_counts.sum()


class _TreeBuilder:
    def __init__(self, X, y, w, n_classes, config: TreeConfig, rng, max_features: int):
        self.X = X
        self.y = y
        self.w = w
        self.n_classes = n_classes
        self.config = config
        self.rng = rng
        self.max_features = max_features
        self.n_features = X.shape[1]

    def counts(self, rows: np.ndarray) -> np.ndarray:
        return np.bincount(self.y[rows], weights=self.w[rows], minlength=self.n_classes)

    def build(self, rows: np.ndarray, depth: int) -> TreeNode:
        counts = self.counts(rows)
        leaf = TreeNode(class_counts=counts.astype(np.int64), n_features=self.n_features)

        if np.count_nonzero(counts) <= 1:
            return leaf
        if self.config.max_depth is not None and depth >= self.config.max_depth:
            return leaf
        if counts.sum() < self.config.min_samples_split:
            return leaf

        score, feature, threshold = self.best_split(rows, counts)
        if feature is None:
            return leaf
        if gini_impurity(counts) - score + IMPURITY_TOL < self.config.min_impurity_decrease:
            return leaf

        go_left = self.X[rows, feature] <= threshold
        if go_left.all() or not go_left.any():
            return leaf
        return TreeNode(
            class_counts=leaf.class_counts,
            n_features=self.n_features,
            feature_index=int(feature),
            threshold=float(threshold),
            left=self.build(rows[go_left], depth + 1),
            right=self.build(rows[~go_left], depth + 1),
        )

    def candidate_features(self, rows: np.ndarray) -> list[int]:
        values = self.X[rows]
        splittable = values.max(axis=0) > values.min(axis=0)
        if self.config.split_mode != SplitMode.RANDOM_SUBSPACE:
            return [f for f in range(self.n_features) if splittable[f]]
        # constant features do not use up the subspace budget
        drawn = [int(f) for f in self.rng.permutation(self.n_features) if splittable[f]]
        return sorted(drawn[: self.max_features])

    def best_split(self, rows: np.ndarray, counts: np.ndarray):
        best_score, best_feature, best_threshold = math.inf, None, None
        for feature in self.candidate_features(rows):
            if self.config.split_mode == SplitMode.RANDOM_THRESHOLD:
                score, threshold = self.random_threshold_split(rows, feature, counts)
            else:
                score, threshold = self.exact_split(rows, feature, counts)
            # strict comparison: equal scores keep the lower feature index
            if score < best_score:
                best_score, best_feature, best_threshold = score, feature, threshold
        return best_score, best_feature, best_threshold

    def exact_split(self, rows: np.ndarray, feature: int, counts: np.ndarray):
        values = self.X[rows, feature]
        order = np.argsort(values, kind="stable")
        sorted_values = values[order]
        onehot = np.zeros((rows.size, self.n_classes))
        onehot[np.arange(rows.size), self.y[rows][order]] = self.w[rows][order]
        cumulative = np.cumsum(onehot, axis=0)[:-1]

        distinct = sorted_values[:-1] < sorted_values[1:]
        if not distinct.any():
            return math.inf, None
        scores = _weighted_child_gini(cumulative[distinct], counts)
        best = int(np.argmin(scores))  # first minimum = lowest threshold
        lower = sorted_values[:-1][distinct][best]
        upper = sorted_values[1:][distinct][best]
        return float(scores[best]), (lower + upper) / 2.0

    def random_threshold_split(self, rows: np.ndarray, feature: int, counts: np.ndarray):
        values = self.X[rows, feature]
        low, high = values.min(), values.max()
        threshold = self.rng.uniform(low, high)
        if threshold >= high:
            threshold = low
        go_left = values <= threshold
        left = np.bincount(self.y[rows][go_left], weights=self.w[rows][go_left], minlength=self.n_classes)
        score = _weighted_child_gini(left[None, :], counts)[0]
        return float(score), float(threshold)


def resolve_max_features(config: TreeConfig, n_features: int) -> int:
    if config.split_mode != SplitMode.RANDOM_SUBSPACE:
        return n_features
    k = config.max_features or math.ceil(math.sqrt(n_features))
    if k > n_features:
        raise TreeError(f"random subspace of {k} features requested, data has {n_features}")
    return k


def fit_tree(
    train: Dataset,
    sample_indices,
    config: TreeConfig | None = None,
    rng: np.random.Generator | None = None,
) -> TreeNode:
    """
    Grows a CART tree on a multiset of training rows.

    Duplicated indices weight a row by its multiplicity. Growth stops at pure nodes,
    at `max_depth`, below `min_samples_split` occurrences, or when no split reduces
    the weighted Gini impurity by at least `min_impurity_decrease`.
    """
    config = config or TreeConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    idx = np.asarray(sample_indices, dtype=np.intp)
    if idx.size == 0:
        raise TreeError("cannot fit a tree on an empty index set")
    if idx.min() < 0 or idx.max() >= train.n_samples:
        raise TreeError(f"sample indices must lie in [0, {train.n_samples})")

    rows, weights = np.unique(idx, return_counts=True)
    builder = _TreeBuilder(
        X=train.features[rows],
        y=train.labels[rows],
        w=weights.astype(float),
        n_classes=train.n_classes,
        config=config,
        rng=rng,
        max_features=resolve_max_features(config, train.n_features),
    )
    return builder.build(np.arange(rows.size), depth=0)


def _check_width(t: TreeNode, width: int):
    if width != t.n_features:
        raise TreeError(f"input has {width} features, tree was fitted on {t.n_features}")


def predict_tree(t: TreeNode, row) -> int:
    """Routes one row (value <= threshold goes left) and returns the leaf's majority class."""
    row = np.asarray(row, dtype=float)
    _check_width(t, row.shape[0])
    node = t
    while not node.is_leaf:
        node = node.left if row[node.feature_index] <= node.threshold else node.right
    return node.prediction


def predict_tree_batch(t: TreeNode, X) -> np.ndarray:
    """Vectorised predict_tree over the rows of X."""
    X = np.asarray(X, dtype=float)
    _check_width(t, X.shape[1])
    out = np.empty(X.shape[0], dtype=np.intp)

    def route(node: TreeNode, rows: np.ndarray):
        if rows.size == 0:
            return
        if node.is_leaf:
            out[rows] = node.prediction
            return
        go_left = X[rows, node.feature_index] <= node.threshold
        route(node.left, rows[go_left])
        route(node.right, rows[~go_left])

    route(t, np.arange(X.shape[0]))
    return out


def tree_depth(t: TreeNode) -> int:
    if t.is_leaf:
        return 0
    return 1 + max(tree_depth(t.left), tree_depth(t.right))


def n_leaves(t: TreeNode) -> int:
    if t.is_leaf:
        return 1
    return n_leaves(t.left) + n_leaves(t.right)


def export_text(t: TreeNode, feature_names: list[str] | None = None) -> str:
    """Preorder dump, one node per line, indented by depth."""
    lines = []

    def visit(node: TreeNode, depth: int):
        pad = "  " * depth
        counts = ",".join(str(int(c)) for c in node.class_counts)
        if node.is_leaf:
            lines.append(f"{pad}leaf class={node.prediction} counts=[{counts}]")
            return
        name = feature_names[node.feature_index] if feature_names else f"x{node.feature_index}"
        lines.append(f"{pad}split {name} <= {node.threshold!r} counts=[{counts}]")
        visit(node.left, depth + 1)
        visit(node.right, depth + 1)

    visit(t, 0)
    return "\n".join(lines)
