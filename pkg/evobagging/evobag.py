"""
Evolutionary bagging.

A population of bags (multisets of training indices) is evolved for a fixed number
of generations. Each generation keeps the top `elitist_count` bags, injects
`gap_count` fresh bootstrap bags, and refills the rest with children of rank-selected
parents whose misclassified samples are swapped between them. `mutation_count` bags
then get `mutation_size` of their occurrences replaced by samples from outside the bag.
Every bag is refit and scored with

    fitness = alpha * (K + bag_size) / K

where alpha is the fitness metric of the bag's tree on the training set.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from evobagging.data import Dataset, bootstrap_indices, minority_class
from evobagging.ensemble import (
    AccuracySource,
    Ensemble,
    Voting,
    ensemble_from_members,
    majority_vote,
    weighted_vote,
)
from evobagging.errors import ConfigError, EvolutionError
from evobagging.metrics import PredictionMatrix, accuracy, average_ensemble_bias, f1
from evobagging.tree import TreeConfig, TreeNode, fit_tree, predict_tree_batch, tree_depth

logger = logging.getLogger(__name__)

# RNG stream ids within one generation: [seed, iteration, stream, slot]
OPERATOR_STREAM = 0
BAG_STREAM = 1


class FitnessMetric(str, Enum):
    ACCURACY = "accuracy"
    F1 = "f1"


class AlphaSource(str, Enum):
    """Rows a bag's tree is scored on when computing its fitness."""

    TRAIN = "train"
    BAG = "bag"


def percent_to_count(pct, base: int) -> int:
    """pct% of base, rounded half up (12.5% of 20 -> 3)."""
    value = Decimal(str(pct))
    if value < 0:
        raise ConfigError(f"percentage must be non-negative, got {pct}")
    return int((value * base / 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def resolve_count(value, base: int, name: str = "value") -> int:
    """Accepts an absolute count or a percentage string like '20%' of `base`."""
    if isinstance(value, str):
        text = value.strip()
        try:
            if text.endswith("%"):
                return percent_to_count(text[:-1].strip(), base)
            return int(text)
        except (ValueError, ArithmeticError) as e:
            raise ConfigError(f"{name}: cannot read {value!r} as a count or percentage") from e
    return int(value)


class EvoConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_bags: int = Field(ge=1)
    max_bag_size: int = Field(ge=1)
    gap_count: int = Field(default=0, ge=0)
    mutation_count: int = Field(default=0, ge=0)
    mutation_size: int = Field(default=0, ge=0)
    size_bias: float = Field(default=1000.0, ge=1)
    max_iterations: int = Field(default=10, ge=0)
    fitness_metric: FitnessMetric = FitnessMetric.ACCURACY
    elitist_count: int = Field(default=0, ge=0)
    alpha_source: AlphaSource = AlphaSource.TRAIN
    positive_class: int | None = Field(default=None, ge=0)
    tree_config: TreeConfig = Field(default_factory=TreeConfig)
    voting: Voting = Voting.MAJORITY
    accuracy_source: AccuracySource = AccuracySource.TRAIN
    seed: int = Field(default=0, ge=0)
    n_jobs: int = 1

    @model_validator(mode="after")
    def check_counts(self):
        if self.gap_count >= self.n_bags:
            raise ValueError(f"gap_count ({self.gap_count}) must be smaller than n_bags ({self.n_bags})")
        if self.gap_count + self.elitist_count > self.n_bags:
            raise ValueError(
                f"gap_count + elitist_count ({self.gap_count} + {self.elitist_count}) exceeds n_bags ({self.n_bags})"
            )
        if self.mutation_count + self.elitist_count > self.n_bags:
            raise ValueError(
                f"mutation_count ({self.mutation_count}) exceeds the {self.n_bags - self.elitist_count} "
                f"bags outside the elitist carryover"
            )
        if self.mutation_size > self.max_bag_size:
            raise ValueError(
                f"mutation_size ({self.mutation_size}) must not exceed max_bag_size ({self.max_bag_size})"
            )
        return self

    @property
    def crossover_count(self) -> int:
        return self.n_bags - self.gap_count - self.elitist_count

    @classmethod
    def from_percentages(
        cls,
        n_bags: int,
        max_bag_size: int,
        gap: str | float = "0%",
        mutation_count: str | float = "0%",
        mutation_size: str | float = "0%",
        **kwargs,
    ) -> "EvoConfig":
        """G and M as percentages of N, MS as a percentage of S."""

        def pct(v):
            return str(v).rstrip("%").strip()

        return cls(
            n_bags=n_bags,
            max_bag_size=max_bag_size,
            gap_count=percent_to_count(pct(gap), n_bags),
            mutation_count=percent_to_count(pct(mutation_count), n_bags),
            mutation_size=percent_to_count(pct(mutation_size), max_bag_size),
            **kwargs,
        )


@dataclass
class Bag:
    indices: np.ndarray
    fitness: float | None = None
    correct_mask: np.ndarray | None = field(default=None, repr=False)
    tree: TreeNode | None = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)

    def __len__(self) -> int:
        return int(self.indices.size)

    def copy(self) -> "Bag":
        return Bag(
            indices=self.indices.copy(),
            fitness=self.fitness,
            correct_mask=None if self.correct_mask is None else self.correct_mask.copy(),
            tree=self.tree,
        )


# ----------------------------
# Population
# ----------------------------
def _random_bag(train_size: int, max_bag_size: int, rng: np.random.Generator) -> Bag:
    size = int(rng.integers(math.ceil(max_bag_size / 2), max_bag_size + 1))
    return Bag(indices=bootstrap_indices(train_size, size, rng))


def init_population(train_size: int, cfg: EvoConfig, rng: np.random.Generator) -> list[Bag]:
    """N bootstrap bags with sizes uniform in [ceil(S/2), S]."""
    if train_size < 2:
        raise EvolutionError(f"training set needs at least 2 samples, got {train_size}")
    return [_random_bag(train_size, cfg.max_bag_size, rng) for _ in range(cfg.n_bags)]


def generation_gap(cfg: EvoConfig, train_size: int, rng: np.random.Generator, count: int | None = None) -> list[Bag]:
    count = cfg.gap_count if count is None else count
    return [_random_bag(train_size, cfg.max_bag_size, rng) for _ in range(count)]


def coverage_ratio(population: list[Bag], train_size: int) -> float:
    """Share of training rows present in at least one bag."""
    if not population:
        raise EvolutionError("coverage of an empty population is undefined")
    unique = np.unique(np.concatenate([b.indices for b in population]))
    return float(unique.size / train_size)


# ----------------------------
# Fitness
# ----------------------------
def bag_fitness(alpha: float, bag_size: int, size_bias: float) -> float:
    if size_bias < 1:
        raise EvolutionError(f"size_bias must be at least 1, got {size_bias}")
    if bag_size < 0:
        raise EvolutionError(f"bag size must be non-negative, got {bag_size}")
    return alpha * (size_bias + bag_size) / size_bias


def _fitness_metric(predictions, truth, cfg: EvoConfig, n_classes: int) -> float:
    if cfg.fitness_metric == FitnessMetric.F1:
        return f1(predictions, truth, positive_class=cfg.positive_class, n_classes=n_classes)
    return accuracy(predictions, truth)


def _score_bag(bag: Bag, train: Dataset, cfg: EvoConfig, rng: np.random.Generator):
    tree = fit_tree(train, bag.indices, cfg.tree_config, rng)
    train_predictions = predict_tree_batch(tree, train.features)
    correct_mask = train_predictions[bag.indices] == train.labels[bag.indices]
    if cfg.alpha_source == AlphaSource.BAG:
        alpha = _fitness_metric(train_predictions[bag.indices], train.labels[bag.indices], cfg, train.n_classes)
    else:
        alpha = _fitness_metric(train_predictions, train.labels, cfg, train.n_classes)
    fitness = bag_fitness(alpha, len(bag), cfg.size_bias)
    return fitness, tree, correct_mask, train_predictions


def evaluate_bag(bag: Bag, train: Dataset, cfg: EvoConfig, rng: np.random.Generator):
    """Fits the bag's tree; returns (fitness, tree, correct_mask over the bag's occurrences)."""
    fitness, tree, correct_mask, _ = _score_bag(bag, train, cfg, rng)
    return fitness, tree, correct_mask


# ----------------------------
# Operators
# ----------------------------
def _ranked(population: list[Bag]) -> list[int]:
    for i, bag in enumerate(population):
        if bag.fitness is None:
            raise EvolutionError(f"bag {i} has not been evaluated")
    return sorted(range(len(population)), key=lambda i: (-population[i].fitness, i))


def select_crossover_parents(population: list[Bag], count: int, rng: np.random.Generator | None = None) -> list[Bag]:
    """The `count` fittest bags (ties to the lower position), shuffled for pairing when `rng` is given."""
    if count < 0 or count > len(population):
        raise EvolutionError(f"cannot select {count} parents from {len(population)} bags")
    if count % 2:
        raise EvolutionError(f"parent count must be even, got {count}")
    chosen = [population[i] for i in _ranked(population)[:count]]
    if rng is not None:
        chosen = [chosen[i] for i in rng.permutation(count)]
    return chosen


def crossover_pair(a: Bag, b: Bag, rng: np.random.Generator) -> tuple[Bag, Bag]:
    """
    Each child keeps its parent's correctly classified occurrences and receives the
    other parent's misclassified ones. The two children together hold exactly the
    parents' occurrences.

    A fully grown tree classifies every occurrence of its own bag correctly unless
    the bag holds identical rows with different labels, so for such trees the
    children equal their parents.
    """
    for name, bag in (("a", a), ("b", b)):
        if bag.correct_mask is None:
            raise EvolutionError(f"parent {name} carries no correctness mask; evaluate it first")
        if bag.correct_mask.shape != bag.indices.shape:
            raise EvolutionError(f"parent {name} mask length differs from its bag size")

    child_a = np.concatenate([a.indices[a.correct_mask], b.indices[~b.correct_mask]])
    child_b = np.concatenate([b.indices[b.correct_mask], a.indices[~a.correct_mask]])

    if child_a.size == 0 or child_b.size == 0:
        full, empty = (child_b, child_a) if child_a.size == 0 else (child_a, child_b)
        pos = int(rng.integers(full.size))
        empty = full[pos : pos + 1].copy()
        full = np.delete(full, pos)
        logger.warning("⚠️ Crossover left a child empty, moved one occurrence over from its sibling")
        child_a, child_b = (empty, full) if child_a.size == 0 else (full, empty)

    return Bag(indices=child_a), Bag(indices=child_b)


def mutate_bag(bag: Bag, train_size: int, mutation_size: int, rng: np.random.Generator) -> Bag:
    """Swaps `mutation_size` random occurrences for rows outside the bag; size is preserved."""
    if mutation_size < 0:
        raise EvolutionError(f"mutation_size must be non-negative, got {mutation_size}")
    if mutation_size == 0:
        return bag.copy()
    n = min(mutation_size, len(bag))

    complement = np.setdiff1d(np.arange(train_size), bag.indices)
    removed = rng.choice(len(bag), size=n, replace=False)
    kept = np.delete(bag.indices, removed)
    if complement.size == 0:
        logger.warning("⚠️ Bag covers the whole training set, mutating with uniform draws")
        added = rng.integers(0, train_size, size=n)
    else:
        added = rng.choice(complement, size=n, replace=complement.size < n)
    return Bag(indices=np.concatenate([kept, added]))


def elitist_carryover(population: list[Bag], k: int) -> list[Bag]:
    """Copies of the k fittest bags."""
    if k < 0 or k > len(population):
        raise EvolutionError(f"cannot carry over {k} of {len(population)} bags")
    return [population[i].copy() for i in _ranked(population)[:k]]


# ----------------------------
# Telemetry
# ----------------------------
@dataclass(frozen=True)
class GenerationStats:
    iteration: int
    mean_fitness: float
    mean_bag_size: float
    coverage_ratio: float
    train_metric: float
    test_metric: float | None
    mean_bias: float
    mean_tree_depth: float
    test_metric_weighted: float | None = None

    def to_row(self) -> dict:
        return asdict(self)


def _evaluate_population(population: list[Bag], train: Dataset, cfg: EvoConfig, iteration: int) -> np.ndarray:
    # one RNG stream per bag slot, results in slot order
    scored = Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
        delayed(_score_bag)(bag, train, cfg, np.random.default_rng([cfg.seed, iteration, BAG_STREAM, slot]))
        for slot, bag in enumerate(population)
    )
    for bag, (fitness, tree, correct_mask, _) in zip(population, scored):
        bag.fitness, bag.tree, bag.correct_mask = fitness, tree, correct_mask
    return np.vstack([s[3] for s in scored])


def _member_weights(population: list[Bag], train_predictions: np.ndarray, train: Dataset, cfg: EvoConfig) -> np.ndarray:
    if cfg.accuracy_source == AccuracySource.BAG:
        return np.array([b.correct_mask.mean() for b in population])
    return (train_predictions == train.labels[None, :]).mean(axis=1)


def _generation_stats(
    iteration: int,
    population: list[Bag],
    train_predictions: np.ndarray,
    train: Dataset,
    test: Dataset | None,
    cfg: EvoConfig,
) -> GenerationStats:
    n_classes = train.n_classes
    train_vote = majority_vote(train_predictions, n_classes)
    train_metric = _fitness_metric(train_vote, train.labels, cfg, n_classes)

    test_metric = test_weighted = None
    if test is not None and test.n_samples:
        test_predictions = np.vstack([predict_tree_batch(b.tree, test.features) for b in population])
        weights = _member_weights(population, train_predictions, train, cfg)
        test_metric = _fitness_metric(majority_vote(test_predictions, n_classes), test.labels, cfg, n_classes)
        test_weighted = _fitness_metric(
            weighted_vote(test_predictions, weights, n_classes), test.labels, cfg, n_classes
        )
        bias = average_ensemble_bias(PredictionMatrix(test_predictions, test.labels, n_classes))
    else:
        bias = average_ensemble_bias(PredictionMatrix(train_predictions, train.labels, n_classes))

    return GenerationStats(
        iteration=iteration,
        mean_fitness=float(np.mean([b.fitness for b in population])),
        mean_bag_size=float(np.mean([len(b) for b in population])),
        coverage_ratio=coverage_ratio(population, train.n_samples),
        train_metric=train_metric,
        test_metric=test_metric,
        mean_bias=bias,
        mean_tree_depth=float(np.mean([tree_depth(b.tree) for b in population])),
        test_metric_weighted=test_weighted,
    )


def _log_generation(stats: GenerationStats):
    test = f", test {stats.test_metric:.4f}" if stats.test_metric is not None else ""
    logger.info(
        f"🧬 Generation {stats.iteration}: fitness {stats.mean_fitness:.4f}, "
        f"bag size {stats.mean_bag_size:.1f}, coverage {stats.coverage_ratio:.3f}, "
        f"train {stats.train_metric:.4f}{test}"
    )


def _next_generation(population: list[Bag], train_size: int, cfg: EvoConfig, rng: np.random.Generator) -> list[Bag]:
    k = cfg.elitist_count
    crossover_count = cfg.crossover_count
    gap_count = cfg.gap_count
    if crossover_count % 2:
        crossover_count -= 1
        gap_count += 1
        logger.warning(f"⚠️ Odd crossover count, pairing {crossover_count} parents and adding {gap_count} fresh bags")

    carried = elitist_carryover(population, k)
    fresh = generation_gap(cfg, train_size, rng, count=gap_count)
    parents = select_crossover_parents(population, crossover_count, rng)
    children = []
    for a, b in zip(parents[0::2], parents[1::2]):
        children.extend(crossover_pair(a, b, rng))

    new_population = carried + fresh + children
    # carried-over bags are never mutated
    for pos in np.sort(rng.choice(np.arange(k, len(new_population)), size=cfg.mutation_count, replace=False)):
        new_population[pos] = mutate_bag(new_population[pos], train_size, cfg.mutation_size, rng)
    return new_population


def with_positive_class(cfg: EvoConfig, train: Dataset) -> EvoConfig:
    """Pins the F1 positive class to the training set's minority class for binary tasks."""
    if cfg.fitness_metric != FitnessMetric.F1 or cfg.positive_class is not None or train.n_classes != 2:
        return cfg
    return cfg.model_copy(update={"positive_class": minority_class(train.labels, 2)})


def run_evobagging(train: Dataset, test: Dataset | None = None, cfg: EvoConfig | None = None) -> tuple[Ensemble, list[GenerationStats]]:
    """
    Evolves the bag population for `cfg.max_iterations` generations.

    Returns the ensemble of the last generation's trees and one GenerationStats row
    per generation, starting with the initial population as iteration 0.
    """
    if cfg is None:
        raise ConfigError("run_evobagging needs an EvoConfig")
    if cfg.positive_class is not None and cfg.positive_class >= train.n_classes:
        raise ConfigError(f"positive_class {cfg.positive_class} is outside [0, {train.n_classes})")
    if cfg.tree_config.max_features and cfg.tree_config.max_features > train.n_features:
        raise ConfigError(f"max_features {cfg.tree_config.max_features} exceeds the {train.n_features} features")
    # every bag is scored against the same positive class
    cfg = with_positive_class(cfg, train)

    rng =np.random.default_rng([cfg.seed, 0, OPERATOR_STREAM, 0])
    population = init_population(train.n_samples, cfg, rng)
    train_predictions = _evaluate_population(population, train, cfg, iteration=0)
    history = [_generation_stats(0, population, train_predictions, train, test, cfg)]
    _log_generation(history[-1])

    for iteration in range(1, cfg.max_iterations + 1):
        rng = np.random.default_rng([cfg.seed, iteration, OPERATOR_STREAM, 0])
        population = _next_generation(population, train.n_samples, cfg, rng)
        if len(population) != cfg.n_bags:
            raise EvolutionError(f"generation {iteration} holds {len(population)} bags instead of {cfg.n_bags}")
        train_predictions = _evaluate_population(population, train, cfg, iteration)
        history.append(_generation_stats(iteration, population, train_predictions, train, test, cfg))
        _log_generation(history[-1])

    ensemble = ensemble_from_members(
        trees=[b.tree for b in population],
        bags=[b.indices for b in population],
        train=train,
        voting=cfg.voting,
        accuracy_source=cfg.accuracy_source,
    )
    return ensemble, history
