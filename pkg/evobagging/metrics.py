"""
Classification metrics, ROC analysis, the 0/1 bias indicator and ensemble diversity.

The diversity measures follow the oracle-output formulations of Kuncheva and
Whitaker: every prediction is first reduced to correct/incorrect against the truth.
Pairwise measures (Q statistic, disagreement, double fault) are averaged over all
learner pairs; the non-pairwise ones (Kohavi-Wolpert variance, entropy, generalized
diversity) work on the number of learners that are correct on each sample.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from evobagging.data import minority_class
from evobagging.errors import MetricError

logger = logging.getLogger(__name__)


def _as_pair(predictions, truth) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise MetricError(f"predictions ({predictions.shape[0]}) and truth ({truth.shape[0]}) differ in length")
    if truth.size == 0:
        raise MetricError("metrics need at least one sample")
    return predictions, truth


# ----------------------------
# Label metrics
# ----------------------------
def accuracy(predictions, truth) -> float:
    predictions, truth = _as_pair(predictions, truth)
    return float(np.mean(predictions == truth))


def confusion_counts(predictions, truth, positive_class: int) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with `positive_class` as the positive label."""
    predictions, truth = _as_pair(predictions, truth)
    pred_pos = predictions == positive_class
    true_pos = truth == positive_class
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    tn = int(np.sum(~pred_pos & ~true_pos))
    return tp, fp, fn, tn


def _binary_scores(predictions, truth, positive_class: int) -> tuple[float, float, float]:
    tp, fp, fn, _ = confusion_counts(predictions, truth, positive_class)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _scores(predictions, truth, positive_class: int | None, n_classes: int | None):
    predictions, truth = _as_pair(predictions, truth)
    if positive_class is not None:
        return _binary_scores(predictions, truth, positive_class)
    n_classes = n_classes or max(int(predictions.max()), int(truth.max())) + 1
    if n_classes <= 2:
        return _binary_scores(predictions, truth, minority_class(truth, 2))
    # macro average over the labels that occur in either vector
    labels = np.union1d(predictions, truth)
    per_class = np.array([_binary_scores(predictions, truth, int(c)) for c in labels])
    return tuple(float(v) for v in per_class.mean(axis=0))


def precision(predictions, truth, positive_class: int | None = None, n_classes: int | None = None) -> float:
    """Binary precision for `positive_class` (minority class of `truth` by default), macro for multiclass."""
    return _scores(predictions, truth, positive_class, n_classes)[0]


def recall(predictions, truth, positive_class: int | None = None, n_classes: int | None = None) -> float:
    return _scores(predictions, truth, positive_class, n_classes)[1]


def f1(predictions, truth, positive_class: int | None = None, n_classes: int | None = None) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    return _scores(predictions, truth, positive_class, n_classes)[2]


# ----------------------------
# ROC
# ----------------------------
def roc_curve(scores, truth, positive_class: int = 1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    False/true positive rates at every distinct score threshold.

    Returns (fpr, tpr, thresholds) starting at (0, 0) with an infinite threshold;
    a sample is called positive when its score is >= the threshold.
    """
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise MetricError(f"scores ({scores.shape[0]}) and truth ({truth.shape[0]}) differ in length")
    positive = truth == positive_class
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC is undefined when the truth holds a single class")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positive[order]
    # last position of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(sorted_scores)), sorted_scores.size - 1]
    tps = np.cumsum(sorted_pos)[cut]
    fps = (cut + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    thresholds = np.r_[np.inf, sorted_scores[cut]]
    return fpr, tpr, thresholds


def roc_auc(scores, truth, positive_class: int = 1) -> float:
    """Trapezoidal area under the ROC curve; tied scores contribute half credit."""
    fpr, tpr, _ = roc_curve(scores, truth, positive_class)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def roc_auc_ovr(score_matrix, truth, n_classes: int) -> dict[int, float]:
    """One-vs-rest AUC per class from an (n_samples, n_classes) score matrix."""
    score_matrix = np.asarray(score_matrix, dtype=float)
    truth = np.asarray(truth)
    result = {}
    for c in range(n_classes):
        try:
            result[c] = roc_auc(score_matrix[:, c], truth, positive_class=c)
        except MetricError:
            logger.warning(f"⚠️ Class {c} absent from (or alone in) the truth, AUC skipped")
    return result


# ----------------------------
# Bias
# ----------------------------
@dataclass(frozen=True)
class PredictionMatrix:
    """learners x samples class predictions with the matching truth vector."""

    entries: np.ndarray
    truth: np.ndarray
    n_classes: int

    def __post_init__(self):
        entries = np.atleast_2d(np.asarray(self.entries))
        truth = np.asarray(self.truth)
        if entries.shape[1] != truth.shape[0]:
            raise MetricError(
                f"prediction matrix has {entries.shape[1]} columns, truth has {truth.shape[0]} entries"
            )
        if entries.size == 0:
            raise MetricError("prediction matrix is empty")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "truth", truth)

    @property
    def n_learners(self) -> int:
        return int(self.entries.shape[0])

    def correctness(self) -> np.ndarray:
        return self.entries == self.truth[None, :]


def bias_indicator(prediction: int, truth: int) -> int:
    return 0 if prediction == truth else 1


def average_ensemble_bias(m: PredictionMatrix) -> float:
    """Mean 0/1 error over every (learner, sample) cell."""
    return float(np.mean(~m.correctness()))


# ----------------------------
# Diversity
# ----------------------------
@dataclass(frozen=True)
class DiversityReport:
    q_statistic: float
    disagreement: float
    double_fault: float
    kohavi_wolpert: float
    entropy: float
    generalized_diversity: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def diversity_measures(m: PredictionMatrix) -> DiversityReport:
    L = m.n_learners
    if L < 2:
        raise MetricError(f"diversity needs at least 2 learners, got {L}")
    correct = m.correctness().astype(float)
    wrong = 1.0 - correct
    N = correct.shape[1]

    n11 = correct @ correct.T
    n00 = wrong @ wrong.T
    n10 = correct @ wrong.T
    n01 = wrong @ correct.T
    pairs = np.triu_indices(L, k=1)

    numerator = n11 * n00 - n01 * n10
    denominator = n11 * n00 + n01 * n10
    # degenerate pairs (zero denominator) count as Q = 0
    q = np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator != 0)

    votes = correct.sum(axis=0)  # correct learners per sample
    fails = L - votes
    p1 = float(np.mean(fails / L))
    p2 = float(np.mean(fails * (fails - 1) / (L * (L - 1))))

    return DiversityReport(
        q_statistic=float(q[pairs].mean()),
        disagreement=float(((n01 + n10) / N)[pairs].mean()),
        double_fault=float((n00 / N)[pairs].mean()),
        kohavi_wolpert=float(np.sum(votes * (L - votes)) / (N * L ** 2)),
        entropy=float(np.mean(np.minimum(votes, L - votes) / (L - math.ceil(L / 2)))),
        generalized_diversity=0.0 if p1 == 0 else 1.0 - p2 / p1,
    )


# ----------------------------
# Bundles
# ----------------------------
def metric_bundle(
    predictions,
    truth,
    n_classes: int,
    scores=None,
    positive_class: int | None = None,
) -> dict[str, float]:
    """
    accuracy / precision / recall / f1 and, when per-class scores are given, AUC.

    Binary tasks score `positive_class` (minority of `truth` when None) and its score
    column; multiclass tasks report macro averages and the mean one-vs-rest AUC.
    """
    if n_classes == 2 and positive_class is None:
        positive_class = minority_class(np.asarray(truth), 2)
    prec, rec, f1_score = _scores(predictions, truth, positive_class if n_classes == 2 else None, n_classes)
    bundle = {
        "accuracy": accuracy(predictions, truth),
        "precision": prec,
        "recall": rec,
        "f1": f1_score,
        "auc": math.nan,
    }
    if scores is not None:
        scores = np.asarray(scores, dtype=float)
        try:
            if n_classes == 2:
                bundle["auc"] = roc_auc(scores[:, positive_class], truth, positive_class)
            else:
                per_class = roc_auc_ovr(scores, truth, n_classes)
                bundle["auc"] = float(np.mean(list(per_class.values()))) if per_class else math.nan
        except MetricError as e:
            logger.warning(f"⚠️ AUC not available: {e}")
    return bundle


def summarize(df: pd.DataFrame, exclude: tuple[str, ...] = ("repetition", "seed")) -> dict[str, dict[str, float]]:
    """Mean and (population) standard deviation of every numeric column."""
    numeric = df.drop(columns=[c for c in exclude if c in df.columns]).select_dtypes(include="number")
    return {
        col: {"mean": float(numeric[col].mean()), "std": float(numeric[col].std(ddof=0))}
        for col in numeric.columns
    }
