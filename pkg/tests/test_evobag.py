import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from evobagging.data import Dataset, stratified_split
from evobagging.ensemble import ensemble_predict
from evobagging.errors import ConfigError, EvolutionError
from evobagging.evobag import (
    AlphaSource,
    Bag,
    EvoConfig,
    FitnessMetric,
    _next_generation,
    bag_fitness,
    coverage_ratio,
    crossover_pair,
    elitist_carryover,
    evaluate_bag,
    generation_gap,
    init_population,
    mutate_bag,
    percent_to_count,
    resolve_count,
    run_evobagging,
    select_crossover_parents,
    with_positive_class,
)
from evobagging.tree import TreeConfig

PROPERTY_CASES = 1000


@pytest.fixture
def skewed() -> Dataset:
    """Class 1 is the training minority; rows 0 and 1 share a feature value."""
    return Dataset(
        features=np.array([[0.0], [0.0], [1.0], [2.0], [3.0], [3.0], [3.0], [3.0]]),
        labels=np.array([0, 1, 1, 1, 0, 0, 0, 0]),
        n_classes=2,
    )


def evaluated(indices, mask, fitness=1.0) -> Bag:
    return Bag(indices=np.asarray(indices), fitness=fitness, correct_mask=np.asarray(mask, dtype=bool))


@st.composite
def masked_bags(draw, max_size=30, train_size=50):
    size = draw(st.integers(1, max_size))
    indices = draw(st.lists(st.integers(0, train_size - 1), min_size=size, max_size=size))
    mask = draw(st.lists(st.booleans(), min_size=size, max_size=size))
    return evaluated(indices, mask, fitness=draw(st.floats(0, 3)))


@st.composite
def evo_configs(draw):
    n_bags = draw(st.integers(2, 12))
    elitist = draw(st.integers(0, n_bags - 1))
    gap = draw(st.integers(0, n_bags - 1 - elitist))
    max_bag_size = draw(st.integers(1, 40))
    return EvoConfig(
        n_bags=n_bags,
        max_bag_size=max_bag_size,
        gap_count=gap,
        mutation_count=draw(st.integers(0, n_bags - elitist)),
        mutation_size=draw(st.integers(0, max_bag_size)),
        elitist_count=elitist,
        seed=draw(st.integers(0, 2**16)),
    )


def small_config(**overrides) -> EvoConfig:
    values = dict(
        n_bags=6,
        max_bag_size=16,
        gap_count=1,
        mutation_count=2,
        mutation_size=1,
        size_bias=100,
        max_iterations=3,
        seed=11,
    )
    values.update(overrides)
    return EvoConfig(**values)


class TestCounts:
    @pytest.mark.parametrize(
        "pct, base, expected",
        [(20, 50, 10), ("12.5", 20, 3), (15, 60, 9), (8, 60, 5), ("2.5", 20, 1), (0, 70, 0), (100, 321, 321)],
    )
    def test_percent_rounds_half_up(self, pct, base, expected):
        assert percent_to_count(pct, base) == expected

    def test_resolve_count(self):
        assert resolve_count("25%", 40) == 10
        assert resolve_count("7", 40) == 7
        assert resolve_count(3, 40) == 3
        with pytest.raises(ConfigError, match="gap"):
            resolve_count("lots", 40, "gap")


class TestEvoConfig:
    def test_from_percentages(self):
        cfg = EvoConfig.from_percentages(50, 100, "20%", "10%", "5%", size_bias=5000)
        assert (cfg.gap_count, cfg.mutation_count, cfg.mutation_size) == (10, 5, 5)
        assert cfg.crossover_count == 40

    @pytest.mark.parametrize(
        "overrides",
        [
            {"gap_count": 6},
            {"mutation_size": 17},
            {"size_bias": 0.5},
            {"elitist_count": 3, "gap_count": 4},
            {"elitist_count": 5, "mutation_count": 2},
            {"seed": -1},
            {"max_iterations": -1},
        ],
    )
    def test_rejects_invalid_counts(self, overrides):
        with pytest.raises(ValidationError):
            small_config(**overrides)


class TestFitness:
    @pytest.mark.parametrize(
        "alpha, size, k, expected",
        [(0.0, 37, 100, 0.0), (1.0, 100, 100, 2.0), (0.9, 500, 2000, 1.125)],
    )
    def test_values(self, alpha, size, k, expected):
        assert bag_fitness(alpha, size, k) == pytest.approx(expected)

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(st.floats(0.01, 1.0), st.integers(0, 10_000), st.floats(1, 20_000))
    def test_strictly_increasing_in_size_and_alpha(self, alpha, size, k):
        assert bag_fitness(alpha, size + 1, k) > bag_fitness(alpha, size, k)
        assert bag_fitness(min(alpha * 1.01 + 1e-3, 1.5), size, k) > bag_fitness(alpha, size, k)

    def test_rejects_small_size_bias(self):
        with pytest.raises(EvolutionError):
            bag_fitness(1.0, 3, 0.5)

    def test_full_parity_bag(self, parity3):
        fitness, tree, mask = evaluate_bag(Bag(indices=np.arange(8)), parity3, small_config(max_bag_size=8), np.random.default_rng(0))
        assert fitness == pytest.approx(1.08)
        assert mask.all()
        assert tree is not None

    def test_single_class_bag_scores_by_size(self, parity3):
        cfg = small_config(max_bag_size=8)
        bag = Bag(indices=np.array([1, 2, 4]))
        fitness, _, mask = evaluate_bag(bag, parity3, cfg, np.random.default_rng(0))
        # a constant predictor on balanced parity is right on half the rows
        assert fitness == pytest.approx(0.5 * 103 / 100)
        assert mask.tolist() == [True, True, True]

    def test_bag_alpha_source(self, parity3):
        cfg = small_config(max_bag_size=8, alpha_source=AlphaSource.BAG)
        fitness, _, _ = evaluate_bag(Bag(indices=np.array([1, 2, 4])), parity3, cfg, np.random.default_rng(0))
        assert fitness == pytest.approx(1.03)

    def test_f1_metric(self, parity3):
        cfg = small_config(max_bag_size=8, fitness_metric=FitnessMetric.F1)
        fitness, _, _ = evaluate_bag(Bag(indices=np.array([1, 2, 4])), parity3, cfg, np.random.default_rng(0))
        # predicts class 0 everywhere; the positive class (1 on a tie) is never predicted
        assert fitness == 0.0


class TestPopulation:
    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(evo_configs(), st.integers(2, 60))
    def test_init_size_law(self, cfg, train_size):
        population = init_population(train_size, cfg, np.random.default_rng(cfg.seed))
        assert len(population) == cfg.n_bags
        for bag in population:
            assert math.ceil(cfg.max_bag_size / 2) <= len(bag) <= cfg.max_bag_size
            assert bag.indices.min() >= 0 and bag.indices.max() < train_size

    def test_init_is_seeded(self):
        cfg = small_config()
        a = init_population(30, cfg, np.random.default_rng(1))
        b = init_population(30, cfg, np.random.default_rng(1))
        assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))

    def test_init_needs_two_samples(self):
        with pytest.raises(EvolutionError):
            init_population(1, small_config(), np.random.default_rng(0))

    def test_generation_gap(self):
        cfg = EvoConfig.from_percentages(50, 100, "20%")
        fresh = generation_gap(cfg, 100, np.random.default_rng(0))
        assert len(fresh) == 10
        assert all(50 <= len(b) <= 100 for b in fresh)
        assert generation_gap(cfg, 100, np.random.default_rng(0), count=0) == []

    @pytest.mark.parametrize(
        "bags, train_size, expected",
        [([[0, 1, 2, 3]], 4, 1.0), ([[0, 1], [2, 3]], 4, 1.0), ([[0]] * 5, 10, 0.1), ([[0, 0, 3]], 4, 0.5)],
    )
    def test_coverage_ratio(self, bags, train_size, expected):
        assert coverage_ratio([Bag(indices=b) for b in bags], train_size) == pytest.approx(expected)

    def test_coverage_of_empty_population(self):
        with pytest.raises(EvolutionError):
            coverage_ratio([], 10)


class TestSelection:
    def test_top_fitness(self):
        population = [evaluated([0], [True], f) for f in (3.0, 1.0, 2.0)]
        chosen = select_crossover_parents(population, 2)
        assert [b.fitness for b in chosen] == [3.0, 2.0]

    def test_ties_keep_population_order(self):
        population = [evaluated([i], [True], 1.0) for i in range(5)]
        chosen = select_crossover_parents(population, 4)
        assert [int(b.indices[0]) for b in chosen] == [0, 1, 2, 3]

    def test_whole_population_shuffled(self):
        population = [evaluated([i], [True], float(i)) for i in range(6)]
        chosen = select_crossover_parents(population, 6, np.random.default_rng(0))
        assert sorted(int(b.indices[0]) for b in chosen) == list(range(6))

    @pytest.mark.parametrize("count", [3, 8, -2])
    def test_invalid_counts(self, count):
        population = [evaluated([i], [True]) for i in range(6)]
        with pytest.raises(EvolutionError):
            select_crossover_parents(population, count)

    def test_unevaluated_bag(self):
        with pytest.raises(EvolutionError):
            select_crossover_parents([Bag(indices=[0]), Bag(indices=[1])], 2)

    def test_elitist_carryover(self):
        population = [evaluated([i], [True], float(i)) for i in range(4)]
        assert elitist_carryover(population, 0) == []
        top = elitist_carryover(population, 2)
        assert [b.fitness for b in top] == [3.0, 2.0]
        assert top[0] is not population[3]
        assert len(elitist_carryover(population, 4)) == 4
        with pytest.raises(EvolutionError):
            elitist_carryover(population, 5)


class TestCrossover:
    def test_transfers_misclassified_occurrences(self):
        a = evaluated([1, 2, 3, 4], [True, False, True, True])
        b = evaluated([5, 6, 7, 8], [True, False, False, True])
        child_a, child_b = crossover_pair(a, b, np.random.default_rng(0))
        assert child_a.indices.tolist() == [1, 3, 4, 6, 7]
        assert child_b.indices.tolist() == [5, 8, 2]
        assert child_a.fitness is None and child_a.correct_mask is None

    def test_all_correct_parents_are_kept(self):
        a, b = evaluated([1, 2], [True, True]), evaluated([3], [True])
        child_a, child_b = crossover_pair(a, b, np.random.default_rng(0))
        assert child_a.indices.tolist() == [1, 2]
        assert child_b.indices.tolist() == [3]

    def test_all_wrong_parents_are_swapped(self):
        a, b = evaluated([1, 2], [False, False]), evaluated([3], [False])
        child_a, child_b = crossover_pair(a, b, np.random.default_rng(0))
        assert child_a.indices.tolist() == [3]
        assert child_b.indices.tolist() == [1, 2]

    def test_empty_child_is_repaired(self):
        a, b = evaluated([1, 2], [False, False]), evaluated([3], [True])
        child_a, child_b = crossover_pair(a, b, np.random.default_rng(0))
        assert len(child_a) == 1 and len(child_b) == 2
        assert Counter(child_a.indices.tolist() + child_b.indices.tolist()) == Counter([1, 2, 3])

    def test_repair_is_seeded(self):
        a, b = evaluated([1, 2, 3, 4], [False] * 4), evaluated([5], [True])
        first = crossover_pair(a, b, np.random.default_rng(3))
        second = crossover_pair(a, b, np.random.default_rng(3))
        assert [c.indices.tolist() for c in first] == [c.indices.tolist() for c in second]

    def test_needs_rng(self):
        with pytest.raises(TypeError):
            crossover_pair(evaluated([1], [True]), evaluated([2], [True]))

    def test_fully_grown_trees_move_nothing(self, parity4):
        cfg = small_config()
        rng = np.random.default_rng(4)
        a, b = Bag(indices=np.arange(16)), Bag(indices=rng.integers(0, 16, size=12))
        for bag in (a, b):
            bag.fitness, bag.tree, bag.correct_mask = evaluate_bag(bag, parity4, cfg, rng)
        child_a, child_b = crossover_pair(a, b, rng)
        assert child_a.indices.tolist() == a.indices.tolist()
        assert child_b.indices.tolist() == b.indices.tolist()

    def test_stumps_swap_their_errors(self, parity4):
        cfg = small_config(tree_config=TreeConfig(max_depth=1))
        rng = np.random.default_rng(4)
        a, b = Bag(indices=np.arange(16)), Bag(indices=np.arange(16)[::-1])
        for bag in (a, b):
            bag.fitness, bag.tree, bag.correct_mask = evaluate_bag(bag, parity4, cfg, rng)
        # a stump leaves every parity leaf at 4 vs 4, so half of each bag is wrong
        assert a.correct_mask.sum() == 8
        child_a, child_b = crossover_pair(a, b, rng)
        assert Counter(child_a.indices.tolist()) == Counter(
            a.indices[a.correct_mask].tolist() + b.indices[~b.correct_mask].tolist()
        )
        assert not np.array_equal(child_a.indices, a.indices)

    def test_requires_mask(self):
        with pytest.raises(EvolutionError, match="mask"):
            crossover_pair(Bag(indices=[1]), evaluated([2], [True]), np.random.default_rng(0))

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(masked_bags(), masked_bags(), st.integers(0, 2**16))
    def test_conserves_multiset(self, a, b, seed):
        child_a, child_b = crossover_pair(a, b, np.random.default_rng(seed))
        parents = Counter(a.indices.tolist() + b.indices.tolist())
        children = Counter(child_a.indices.tolist() + child_b.indices.tolist())
        assert children == parents
        assert len(child_a) >= 1 and len(child_b) >= 1


class TestMutation:
    def test_zero_size_is_identity(self):
        bag = Bag(indices=[3, 3, 1])
        assert mutate_bag(bag, 10, 0, np.random.default_rng(0)).indices.tolist() == [3, 3, 1]

    def test_small_bag_example(self):
        mutated = mutate_bag(Bag(indices=[0, 0, 1]), 3, 1, np.random.default_rng(5))
        assert len(mutated) == 3
        assert mutated.indices.tolist().count(2) == 1

    def test_full_coverage_falls_back_to_uniform(self):
        mutated = mutate_bag(Bag(indices=[0, 1, 2]), 3, 2, np.random.default_rng(0))
        assert len(mutated) == 3
        assert set(mutated.indices.tolist()) <= {0, 1, 2}

    def test_seeded(self):
        bag = Bag(indices=np.arange(10))
        a = mutate_bag(bag, 40, 4, np.random.default_rng(9))
        b = mutate_bag(bag, 40, 4, np.random.default_rng(9))
        assert np.array_equal(a.indices, b.indices)

    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(masked_bags(max_size=20, train_size=25), st.integers(0, 20), st.integers(0, 2**16))
    def test_preserves_size_and_draws_from_complement(self, bag, mutation_size, seed):
        mutated = mutate_bag(bag, 25, mutation_size, np.random.default_rng(seed))
        assert len(mutated) == len(bag)
        swapped = min(mutation_size, len(bag))
        outside = ~np.isin(mutated.indices, bag.indices)
        complement = 25 - np.unique(bag.indices).size
        if complement:
            assert outside.sum() == swapped
            if complement >= swapped:
                assert np.unique(mutated.indices[outside]).size == swapped


class TestGeneration:
    @settings(max_examples=PROPERTY_CASES, deadline=None)
    @given(evo_configs(), st.data())
    def test_population_size_is_constant(self, cfg, data):
        train_size = 30
        rng = np.random.default_rng(cfg.seed)
        population = init_population(train_size, cfg, rng)
        for bag in population:
            bag.fitness = data.draw(st.floats(0, 2))
            bag.correct_mask = np.array(data.draw(st.lists(st.booleans(), min_size=len(bag), max_size=len(bag))))
        following = _next_generation(population, train_size, cfg, rng)
        assert len(following) == cfg.n_bags
        ranked = sorted(range(cfg.n_bags), key=lambda i: (-population[i].fitness, i))
        for kept, source in zip(following[: cfg.elitist_count], ranked):
            assert np.array_equal(kept.indices, population[source].indices)
        assert all(len(b) >= 1 for b in following)


class TestRunEvobagging:
    def test_history_and_population(self, parity4):
        ensemble, history = run_evobagging(parity4, cfg=small_config())
        assert [s.iteration for s in history] == [0, 1, 2, 3]
        assert len(ensemble) == 6
        for s in history:
            assert 0 < s.coverage_ratio <= 1
            assert 0 <= s.mean_bias <= 1
            assert s.test_metric is None
        assert history[0].to_row()["iteration"] == 0

    def test_deterministic_across_workers(self, small_spiral):
        pair = stratified_split(small_spiral, 0.25, seed=0)
        cfg = small_config(max_bag_size=30, mutation_size=2)
        e1, h1 = run_evobagging(pair.train, pair.test, cfg)
        e2, h2 = run_evobagging(pair.train, pair.test, cfg.model_copy(update={"n_jobs": 2}))
        assert [s.to_row() for s in h1] == [s.to_row() for s in h2]
        assert ensemble_predict(e1, pair.test).tolist() == ensemble_predict(e2, pair.test).tolist()
        assert h1[-1].test_metric is not None and h1[-1].test_metric_weighted is not None

    def test_zero_iterations_returns_initial_population(self, parity4):
        cfg = small_config(max_iterations=0)
        ensemble, history = run_evobagging(parity4, cfg=cfg)
        assert len(history) == 1
        initial = init_population(16, cfg, np.random.default_rng([cfg.seed, 0, 0, 0]))
        assert all(np.array_equal(m.bag, b.indices) for m, b in zip(ensemble.members, initial))

    @pytest.mark.parametrize("elitist_count", [0, 2, 4])
    def test_elitist_counts(self, parity4, elitist_count):
        ensemble, history = run_evobagging(parity4, cfg=small_config(elitist_count=elitist_count, gap_count=1))
        assert len(ensemble) == 6
        assert len(history) == 4

    def test_needs_config(self, parity4):
        with pytest.raises(ConfigError):
            run_evobagging(parity4)

    def test_positive_class_range(self, parity4):
        with pytest.raises(ConfigError):
            run_evobagging(parity4, cfg=small_config(positive_class=2))

    def test_f1_runs_use_the_training_minority(self, skewed):
        cfg = small_config(max_bag_size=8, fitness_metric=FitnessMetric.F1, alpha_source=AlphaSource.BAG)
        _, implicit = run_evobagging(skewed, cfg=cfg)
        _, explicit = run_evobagging(skewed, cfg=cfg.model_copy(update={"positive_class": 1}))
        assert [s.to_row() for s in implicit] == [s.to_row() for s in explicit]


class TestPositiveClass:
    def test_pinned_to_training_minority(self, skewed):
        cfg = small_config(max_bag_size=8, fitness_metric=FitnessMetric.F1, alpha_source=AlphaSource.BAG)
        cfg = with_positive_class(cfg, skewed)
        assert cfg.positive_class == 1
        # the bag's own minority is class 0, which it never predicts
        fitness, _, _ = evaluate_bag(Bag(indices=np.array([0, 1, 1, 2])), skewed, cfg, np.random.default_rng(0))
        assert fitness == pytest.approx(6 / 7 * 104 / 100)

    def test_left_alone(self, skewed):
        accuracy_cfg = small_config()
        assert with_positive_class(accuracy_cfg, skewed) is accuracy_cfg
        pinned = small_config(fitness_metric=FitnessMetric.F1, positive_class=0)
        assert with_positive_class(pinned, skewed).positive_class == 0
        three_classes = Dataset(features=np.arange(6.0).reshape(-1, 1), labels=np.array([0, 1, 2, 0, 1, 2]), n_classes=3)
        assert with_positive_class(small_config(fitness_metric=FitnessMetric.F1), three_classes).positive_class is None
