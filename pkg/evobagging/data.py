import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from evobagging.errors import DatasetError

logger = logging.getLogger(__name__)

MISSING_TOKENS = {"", "?", "NA", "NaN", "nan"}


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with integer class labels.

    `row_ids` are the row positions in the source the dataset was built from; subsets
    keep them so that splits can be checked for disjointness.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: list[str] | None = None
    class_names: list[str] | None = None
    row_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise DatasetError(f"features must be a 2-d matrix, got {features.ndim} dimension(s)")
        if labels.ndim != 1:
            raise DatasetError("labels must be a vector")
        if features.shape[0] != labels.shape[0]:
            raise DatasetError(
                f"features have {features.shape[0]} rows but labels have {labels.shape[0]} entries"
            )
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise DatasetError("labels must be integer class indices")
        labels = labels.astype(np.intp)
        if self.n_classes < 2:
            raise DatasetError(f"n_classes must be at least 2, got {self.n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            bad = int(np.flatnonzero((labels < 0) | (labels >= self.n_classes))[0])
            raise DatasetError(f"label {labels[bad]} at row {bad} is outside [0, {self.n_classes})")
        if self.feature_names is not None and len(self.feature_names) != features.shape[1]:
            raise DatasetError(
                f"{len(self.feature_names)} feature names given for {features.shape[1]} columns"
            )
        row_ids = np.arange(labels.size) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.intp)
        if row_ids.shape != labels.shape:
            raise DatasetError("row_ids must have one entry per row")

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        """Rows at `indices` (duplicates allowed), keeping names and source row ids."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            n_classes=self.n_classes,
            feature_names=self.feature_names,
            class_names=self.class_names,
            row_ids=self.row_ids[idx],
        )


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset


# ----------------------------
# CSV ingestion
# ----------------------------
def _scan_csv_rows(text: str, path: Path) -> list[tuple[int, list[str]]]:
    """Returns (line number, cells) for every non-blank row; rejects ragged rows."""
    reader = csv.reader(io.StringIO(text))
    rows = []
    width = None
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(
                f"{path}: ragged row at line {reader.line_num}: expected {width} columns, found {len(row)}"
            )
        rows.append((reader.line_num, [cell.strip() for cell in row]))
    return rows


def _resolve_label_column(label_column: str | int, names: list[str] | None, width: int) -> int:
    if isinstance(label_column, str):
        if names is not None and label_column in names:
            return names.index(label_column)
        try:
            label_column = int(label_column)
        except ValueError:
            hint = "no header row" if names is None else f"columns are {names}"
            raise DatasetError(f"label column {label_column!r} not found ({hint})") from None
    if not -width <= label_column < width:
        raise DatasetError(f"label column index {label_column} out of range for {width} columns")
    return label_column % width


def load_csv(path: str | Path, label_column: str | int = -1, header: bool = True) -> Dataset:
    """
    Reads a comma-separated file into a Dataset.

    Categorical feature columns are integer-encoded by order of first appearance, and
    labels are re-indexed to 0..n_classes-1 the same way. Missing cells are rejected.

    Args:
        path: CSV file (UTF-8, decimal point `.`).
        label_column: column name (needs a header) or zero-based index, negative counts from the end.
        header: whether the first non-blank row holds column names.

    Returns:
        Dataset: the encoded data.
    """
    path = Path(path)
    if not path.is_file():
        logger.error(f"❌ Dataset file not found: {path}")
        raise DatasetError(f"dataset file not found: {path}")

    text = path.read_text(encoding="utf-8")
    rows = _scan_csv_rows(text, path)
    names = None
    if header and rows:
        names = rows[0][1]
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: empty dataset (no data rows)")

    width = len(rows[0][1])
    label_idx = _resolve_label_column(label_column, names, width)
    columns = names if names is not None else [f"x{i}" for i in range(width)]
    line_numbers = [line for line, _ in rows]
    df = pd.DataFrame([cells for _, cells in rows], columns=range(width))

    missing = df.isin(MISSING_TOKENS)
    if missing.to_numpy().any():
        row_pos, col_pos = np.argwhere(missing.to_numpy())[0]
        raise DatasetError(
            f"{path}: missing value at line {line_numbers[row_pos]}, column {columns[col_pos]!r}"
        )

    encoded = []
    for col in range(width):
        if col == label_idx:
            continue
        numeric = pd.to_numeric(df[col], errors="coerce")
        if numeric.isna().any():
            codes, _ = pd.factorize(df[col])
            logger.debug(f"Column {columns[col]!r} encoded as categorical")
            encoded.append(codes.astype(float))
        else:
            encoded.append(numeric.to_numpy(dtype=float))

    label_codes, label_uniques = pd.factorize(df[label_idx])
    if len(label_uniques) < 2:
        raise DatasetError(f"{path}: label column {columns[label_idx]!r} holds a single class")

    features = np.column_stack(encoded) if encoded else np.empty((len(df), 0))
    dataset = Dataset(
        features=features,
        labels=label_codes,
        n_classes=len(label_uniques),
        feature_names=[c for i, c in enumerate(columns) if i != label_idx],
        class_names=[str(u) for u in label_uniques],
    )
    logger.info(
        f"✅ Loaded {path.name}: {dataset.n_samples} rows, {dataset.n_features} features, "
        f"{dataset.n_classes} classes"
    )
    return dataset


# ----------------------------
# Synthetic generators
# ----------------------------
def gen_nbit_parity(n: int) -> Dataset:
    """All 2^n binary inputs; label is the odd-parity bit (1 when the bit sum is even)."""
    if not 1 <= n <= 20:
        raise DatasetError(f"parity width must be in [1, 20], got {n}")
    codes = np.arange(2 ** n)
    bits = (codes[:, None] >> np.arange(n - 1, -1, -1)) & 1
    labels = 1 - bits.sum(axis=1) % 2
    return Dataset(
        features=bits.astype(float),
        labels=labels,
        n_classes=2,
        feature_names=[f"b{i}" for i in range(n)],
        class_names=["0", "1"],
    )


def gen_two_spiral(
    n_points: int = 194,
    noise: float = 0.0,
    seed: int = 0,
    radius: float = 6.5,
    angle_step: float = np.pi / 16,
) -> Dataset:
    """
    Two interleaved planar spirals, the second the point reflection of the first.

    Point i of the first spiral sits at angle i*angle_step with radius shrinking
    linearly from `radius`; 194 points give the classic 97-per-class benchmark. Rows
    alternate between the classes.
    """
    if n_points <= 0 or n_points % 2:
        raise DatasetError(f"two-spiral needs a positive even number of points, got {n_points}")
    if noise < 0:
        raise DatasetError(f"noise must be non-negative, got {noise}")

    per_class = n_points // 2
    i = np.arange(per_class)
    phi = i * angle_step
    r = radius * (per_class + 7 - i) / (per_class + 7)
    first = np.column_stack([r * np.sin(phi), r * np.cos(phi)])

    features = np.empty((n_points, 2))
    features[0::2] = first
    features[1::2] = -first
    labels = np.tile([0, 1], per_class)
    if noise > 0:
        rng = np.random.default_rng(seed)
        features = features + rng.normal(0.0, noise, size=features.shape)
    return Dataset(features=features, labels=labels, n_classes=2, feature_names=["x1", "x2"], class_names=["0", "1"])


# ----------------------------
# Splitting and sampling
# ----------------------------
def _stratified_test_counts(class_counts: np.ndarray, test_fraction: float) -> np.ndarray:
    # Largest-remainder allocation of ceil(fraction * n) test rows; ties go to the lower class.
    present = class_counts > 0
    n = int(class_counts.sum())
    total = math.ceil(round(test_fraction * n, 9))
    quotas = test_fraction * class_counts
    counts = np.floor(quotas).astype(int)
    remainder = total - int(counts.sum())
    fractions = np.where(present, quotas - counts, -1.0)
    order = np.lexsort((np.arange(len(quotas)), -fractions))
    counts[order[:max(remainder, 0)]] += 1
    counts[present] = np.clip(counts[present], 1, class_counts[present] - 1)
    counts[~present] = 0
    return counts


def stratified_split(d: Dataset, test_fraction: float, seed: int) -> SplitPair:
    """
    Train/test partition preserving class proportions.

    Per-class test counts use largest-remainder rounding of `test_fraction`, so the
    test set holds ceil(test_fraction * n) rows up to one sample per class. Every
    class keeps at least one row on each side.
    """
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must be in (0, 1), got {test_fraction}")
    counts = d.class_counts()
    for c, count in enumerate(counts):
        if 0 < count < 2:
            name = d.class_names[c] if d.class_names else c
            raise DatasetError(f"class {name!r} has {count} sample, at least 2 are needed to split")

    test_counts = _stratified_test_counts(counts, test_fraction)
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(d.n_classes):
        if counts[c] == 0:
            continue
        members = np.flatnonzero(d.labels == c)
        test_idx.append(rng.permutation(members)[: test_counts[c]])
    test_idx = np.sort(np.concatenate(test_idx))
    train_idx = np.setdiff1d(np.arange(d.n_samples), test_idx)
    return SplitPair(train=d.subset(train_idx), test=d.subset(test_idx))


def stratified_kfold(d: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, validation) index pairs; class members are dealt round-robin over the folds."""
    if k < 2:
        raise DatasetError(f"cross-validation needs at least 2 folds, got {k}")
    if k > d.n_samples:
        raise DatasetError(f"{k} folds requested for {d.n_samples} samples")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(d.n_samples, dtype=int)
    offset = 0
    for c in range(d.n_classes):
        members = rng.permutation(np.flatnonzero(d.labels == c))
        fold_of[members] = (np.arange(members.size) + offset) % k
        offset += members.size
    folds = []
    for fold in range(k):
        val = np.flatnonzero(fold_of == fold)
        train = np.flatnonzero(fold_of != fold)
        folds.append((train, val))
    return folds


def bootstrap_indices(n_population: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """`size` indices drawn uniformly with replacement from [0, n_population)."""
    if n_population < 1:
        raise DatasetError(f"cannot bootstrap from an empty population ({n_population})")
    if size < 1:
        raise DatasetError(f"bootstrap size must be positive, got {size}")
    return rng.integers(0, n_population, size=size)


def resample_dataset(d: Dataset, rng: np.random.Generator) -> Dataset:
    """Bootstrap replicate of `d` with the same number of rows."""
    return d.subset(bootstrap_indices(d.n_samples, d.n_samples, rng))


def undersample_majority(d: Dataset, keep_fraction: float, seed: int) -> Dataset:
    """Keeps ceil(keep_fraction * count) majority-class rows, drawn without replacement."""
    if d.n_classes != 2:
        raise DatasetError(f"undersampling needs a binary dataset, got {d.n_classes} classes")
    if not 0 < keep_fraction <= 1:
        raise DatasetError(f"keep_fraction must be in (0, 1], got {keep_fraction}")

    counts = d.class_counts()
    majority = int(np.argmax(counts))
    majority_rows = np.flatnonzero(d.labels == majority)
    keep = math.ceil(round(keep_fraction * majority_rows.size, 9))
    rng = np.random.default_rng(seed)
    kept = rng.choice(majority_rows, size=keep, replace=False)
    rows = np.sort(np.concatenate([np.flatnonzero(d.labels != majority), kept]))
    logger.info(f"⚖️ Undersampled class {majority}: {majority_rows.size} -> {keep} rows")
    return d.subset(rows)


def binarize(d: Dataset, positive_labels: Iterable[str | int]) -> Dataset:
    """Maps the given classes (by name, or index when unnamed) to 1 and all others to 0."""
    wanted = {str(p) for p in positive_labels}
    names = d.class_names or [str(c) for c in range(d.n_classes)]
    positive = [c for c, name in enumerate(names) if name in wanted]
    unknown = wanted - {names[c] for c in positive}
    if unknown:
        raise DatasetError(f"positive labels {sorted(unknown)} not among classes {names}")
    labels = np.isin(d.labels, positive).astype(np.intp)
    return Dataset(
        features=d.features,
        labels=labels,
        n_classes=2,
        feature_names=d.feature_names,
        class_names=["rest", "+".join(names[c] for c in positive)],
        row_ids=d.row_ids,
    )


def class_distribution(d: Dataset) -> dict[int, float]:
    counts = d.class_counts()
    return {c: float(counts[c] / d.n_samples) for c in range(d.n_classes)}


def minority_class(labels: np.ndarray, n_classes: int = 2) -> int:
    """Least frequent class among those present; ties go to the higher index."""
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    counts[counts == 0] = np.inf
    smallest = counts.min()
    return int(np.flatnonzero(counts == smallest)[-1])


def imbalance_ratio(d: Dataset) -> float:
    """Majority count divided by minority count (1.0 for balanced data)."""
    counts = d.class_counts()
    counts = counts[counts > 0]
    return float(counts.max() / counts.min())
