import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from evobagging.data import Dataset, bootstrap_indices
from evobagging.errors import EnsembleError
from evobagging.metrics import PredictionMatrix
from evobagging.tree import SplitMode, TreeConfig, TreeNode, fit_tree, predict_tree_batch, tree_depth

logger = logging.getLogger(__name__)

# Slack for comparing float vote sums; equal sums resolve to the lowest class
VOTE_TOL = 1e-9

# Baseline model name -> split mode of its trees
MODEL_SPLIT_MODES = {
    "bagging": SplitMode.ALL_FEATURES,
    "random_forest": SplitMode.RANDOM_SUBSPACE,
    "extra_trees": SplitMode.RANDOM_THRESHOLD,
}


class Voting(str, Enum):
    MAJORITY = "majority"
    WEIGHTED = "weighted"


class AccuracySource(str, Enum):
    """Data a member's voting weight is measured on."""

    TRAIN = "train"
    BAG = "bag"


@dataclass(frozen=True)
class Member:
    bag: np.ndarray
    tree: TreeNode
    train_accuracy: float


@dataclass(frozen=True)
class Ensemble:
    members: list[Member]
    n_classes: int
    voting: Voting = Voting.MAJORITY

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("an ensemble needs at least one member")
        object.__setattr__(self, "voting", Voting(self.voting))

    def __len__(self) -> int:
        return len(self.members)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([m.train_accuracy for m in self.members], dtype=float)


def member_accuracy(
    tree: TreeNode,
    train: Dataset,
    bag: np.ndarray,
    source: AccuracySource = AccuracySource.TRAIN,
) -> float:
    """Accuracy of one tree on the full training set, or on its own bag occurrences."""
    if AccuracySource(source) == AccuracySource.BAG:
        rows = np.asarray(bag, dtype=np.intp)
    else:
        rows = np.arange(train.n_samples)
    predictions = predict_tree_batch(tree, train.features[rows])
    return float(np.mean(predictions == train.labels[rows]))


def ensemble_from_members(
    trees: list[TreeNode],
    bags: list[np.ndarray],
    train: Dataset,
    voting: Voting = Voting.MAJORITY,
    accuracy_source: AccuracySource = AccuracySource.TRAIN,
) -> Ensemble:
    """Wraps already fitted trees (e.g. an evolved population) into an ensemble."""
    if len(trees) != len(bags):
        raise EnsembleError(f"{len(trees)} trees given for {len(bags)} bags")
    members = [
        Member(bag=np.asarray(bag, dtype=np.intp), tree=tree, train_accuracy=member_accuracy(tree, train, bag, accuracy_source))
        for tree, bag in zip(trees, bags)
    ]
    return Ensemble(members=members, n_classes=train.n_classes, voting=voting)


def _fit_member(train: Dataset, bag_size: int, tree_config: TreeConfig, seed: int, index: int, accuracy_source) -> Member:
    rng = np.random.default_rng([seed, index])
    bag = bootstrap_indices(train.n_samples, bag_size, rng)
    tree = fit_tree(train, bag, tree_config, rng)
    return Member(bag=bag, tree=tree, train_accuracy=member_accuracy(tree, train, bag, accuracy_source))


def fit_bagging(
    train: Dataset,
    n_bags: int,
    bag_size: int | None = None,
    mode: SplitMode = SplitMode.ALL_FEATURES,
    seed: int = 0,
    *,
    tree_config: TreeConfig | None = None,
    voting: Voting = Voting.MAJORITY,
    accuracy_source: AccuracySource = AccuracySource.TRAIN,
    n_jobs: int = 1,
) -> Ensemble:
    """
    Bootstrap-aggregated trees: bagging, random forest or extra-trees depending on `mode`.

    Member i draws its bag and its split randomness from the stream [seed, i], so the
    ensemble does not depend on `n_jobs`. `bag_size` defaults to the training size.
    """
    if n_bags < 1:
        raise EnsembleError(f"n_bags must be at least 1, got {n_bags}")
    bag_size = train.n_samples if bag_size is None else bag_size
    if bag_size < 1:
        raise EnsembleError(f"bag_size must be at least 1, got {bag_size}")
    if seed < 0:
        raise EnsembleError(f"seed must be non-negative, got {seed}")

    base = tree_config or TreeConfig()
    tree_config = base.model_copy(update={"split_mode": SplitMode(mode)})

    members = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_fit_member)(train, bag_size, tree_config, seed, i, accuracy_source) for i in range(n_bags)
    )
    logger.debug(f"🌳 Fitted {n_bags} {tree_config.split_mode.value} trees on bags of {bag_size}")
    return Ensemble(members=list(members), n_classes=train.n_classes, voting=voting)


# ----------------------------
# Aggregation
# ----------------------------
def _vote_matrix(predictions: np.ndarray, weights: np.ndarray, n_classes: int) -> np.ndarray:
    # (n_classes, n_samples) weighted vote sums
    votes = np.zeros((n_classes, predictions.shape[1]))
    for c in range(n_classes):
        votes[c] = weights @ (predictions == c)
    return votes


def _argmax_lowest(votes: np.ndarray) -> np.ndarray:
    top = votes.max(axis=0)
    return np.argmax(votes >= top - VOTE_TOL, axis=0).astype(np.intp)


def _check_predictions(per_learner_predictions, n_classes: int) -> np.ndarray:
    predictions = np.atleast_2d(np.asarray(per_learner_predictions))
    if predictions.size == 0:
        raise EnsembleError("prediction matrix is empty")
    if predictions.min() < 0 or predictions.max() >= n_classes:
        raise EnsembleError(f"predictions must lie in [0, {n_classes})")
    return predictions


def majority_vote(per_learner_predictions, n_classes: int) -> np.ndarray:
    """Most frequent class per column of a learners x samples matrix; ties go to the lowest class."""
    predictions = _check_predictions(per_learner_predictions, n_classes)
    return _argmax_lowest(_vote_matrix(predictions, np.ones(predictions.shape[0]), n_classes))


def weighted_vote(per_learner_predictions, learner_accuracies, n_classes: int) -> np.ndarray:
    """Class with the largest accuracy-weighted vote sum per sample; ties go to the lowest class."""
    predictions = _check_predictions(per_learner_predictions, n_classes)
    weights = np.asarray(learner_accuracies, dtype=float).ravel()
    if weights.size != predictions.shape[0]:
        raise EnsembleError(f"{weights.size} accuracies given for {predictions.shape[0]} learners")
    if np.any(weights < 0) or np.any(weights > 1):
        raise EnsembleError("learner accuracies must lie in [0, 1]")
    return _argmax_lowest(_vote_matrix(predictions, weights, n_classes))


def member_predictions(e: Ensemble, data: Dataset) -> np.ndarray:
    """members x samples matrix of class predictions."""
    return np.vstack([predict_tree_batch(m.tree, data.features) for m in e.members])


def ensemble_predict(e: Ensemble, data: Dataset, voting: Voting | None = None) -> np.ndarray:
    predictions = member_predictions(e, data)
    if Voting(voting or e.voting) == Voting.WEIGHTED:
        return weighted_vote(predictions, e.accuracies, e.n_classes)
    return majority_vote(predictions, e.n_classes)


def vote_fractions(e: Ensemble, data: Dataset) -> np.ndarray:
    """(n_samples, n_classes) share of members voting for each class; the ROC score."""
    predictions = member_predictions(e, data)
    votes = _vote_matrix(predictions, np.ones(len(e)), e.n_classes)
    return (votes / len(e)).T


def prediction_matrix(e: Ensemble, data: Dataset) -> PredictionMatrix:
    return PredictionMatrix(entries=member_predictions(e, data), truth=data.labels, n_classes=e.n_classes)


def mean_tree_depth(e: Ensemble) -> float:
    return float(np.mean([tree_depth(m.tree) for m in e.members]))
