"""
Experiment protocols: repeated train/test runs, bag-count sweeps, the variance
protocol, the class-imbalance study and the cross-validated hyperparameter sweep.

Repetition r of an experiment uses seed `seed + r` for both its stratified split and
its model, so a run is fully determined by the resolved config.
"""

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from evobagging import export
from evobagging.data import (
    Dataset,
    binarize,
    class_distribution,
    gen_nbit_parity,
    gen_two_spiral,
    imbalance_ratio,
    load_csv,
    minority_class,
    resample_dataset,
    stratified_kfold,
    stratified_split,
    undersample_majority,
)
from evobagging.ensemble import (
    MODEL_SPLIT_MODES,
    AccuracySource,
    Ensemble,
    Voting,
    ensemble_predict,
    fit_bagging,
    mean_tree_depth,
    prediction_matrix,
    vote_fractions,
)
from evobagging.errors import ConfigError, DatasetError, MetricError
from evobagging.evobag import AlphaSource, EvoConfig, FitnessMetric, GenerationStats, resolve_count, run_evobagging
from evobagging.metrics import (
    PredictionMatrix,
    accuracy,
    diversity_measures,
    metric_bundle,
    roc_curve,
    summarize,
)
from evobagging.settings import default_n_jobs, default_output_dir
from evobagging.tree import SplitMode, TreeConfig

logger = logging.getLogger(__name__)

ModelName = Literal["bagging", "random_forest", "extra_trees", "evobagging"]
ALL_MODELS = ["bagging", "random_forest", "extra_trees", "evobagging"]

# Hyperparameter candidates searched with cross-validation
GAP_GRID = ["10%", "15%", "20%", "25%", "30%"]
MUTATION_COUNT_GRID = ["5%", "6%", "7%", "8%", "9%", "10%"]
MUTATION_SIZE_GRID = ["5%", "10%"]
SIZE_BIAS_GRID = [float(k) for k in range(1000, 20001, 1000)]


class ExperimentConfig(BaseModel):
    """Everything a run needs; written in full at the top of every result file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "experiment"

    # data
    dataset: Literal["csv", "parity", "two_spiral"] = "csv"
    csv_path: str | None = None
    label_column: str = "-1"
    header: bool = True
    positive_labels: list[str] = Field(default_factory=list)
    parity_bits: int = Field(default=6, ge=1, le=20)
    spiral_points: int = Field(default=194, ge=2)
    spiral_noise: float = Field(default=0.0, ge=0.0)
    keep_fraction: float | None = Field(default=None, gt=0.0, le=1.0)
    test_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)

    # models
    models: list[ModelName] = Field(default_factory=lambda: ["evobagging"])
    n_bags: int = Field(default=50, ge=1)
    bag_size: str | None = None
    voting: Voting = Voting.MAJORITY
    accuracy_source: AccuracySource = AccuracySource.TRAIN
    max_depth: int | None = Field(default=None, ge=1)
    min_samples_split: int = Field(default=2, ge=1)
    max_features: int | None = Field(default=None, ge=1)

    # evolution
    max_bag_size: str = "100%"
    gap: str = "20%"
    mutation_count: str = "10%"
    mutation_size: str = "5%"
    size_bias: float = Field(default=1000.0, ge=1.0)
    max_iterations: int = Field(default=20, ge=0)
    fitness_metric: FitnessMetric = FitnessMetric.ACCURACY
    elitist_count: int = Field(default=0, ge=0)
    alpha_source: AlphaSource = AlphaSource.TRAIN

    # protocol
    repetitions: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    output_dir: str = Field(default_factory=default_output_dir)
    n_jobs: int = Field(default_factory=default_n_jobs)
    cv_folds: int = Field(default=5, ge=2)
    grid_gap: list[str] = Field(default_factory=lambda: list(GAP_GRID))
    grid_mutation_count: list[str] = Field(default_factory=lambda: list(MUTATION_COUNT_GRID))
    grid_mutation_size: list[str] = Field(default_factory=lambda: list(MUTATION_SIZE_GRID))
    grid_size_bias: list[float] = Field(default_factory=lambda: list(SIZE_BIAS_GRID))

    @field_validator("models")
    @classmethod
    def check_models(cls, value):
        if not value:
            raise ValueError("at least one model is required")
        return list(dict.fromkeys(value))

    @model_validator(mode="after")
    def check_source(self):
        if self.dataset == "csv" and not self.csv_path:
            raise ValueError("csv_path is required when dataset=csv")
        if self.dataset == "two_spiral" and self.spiral_points % 2:
            raise ValueError(f"spiral_points must be even, got {self.spiral_points}")
        return self

    def resolved(self) -> dict:
        """JSON-compatible dict of every field, defaults included."""
        return self.model_dump(mode="json")


@dataclass
class ExperimentResult:
    runs: pd.DataFrame
    summary: dict
    telemetry: pd.DataFrame = field(default_factory=pd.DataFrame)
    roc: pd.DataFrame = field(default_factory=pd.DataFrame)
    output_dir: Path | None = None


# ----------------------------
# Data
# ----------------------------
def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset == "parity":
        dataset = gen_nbit_parity(cfg.parity_bits)
    elif cfg.dataset == "two_spiral":
        dataset = gen_two_spiral(cfg.spiral_points, cfg.spiral_noise, cfg.seed)
    else:
        dataset = load_csv(cfg.csv_path, cfg.label_column, cfg.header)

    if cfg.positive_labels:
        dataset = binarize(dataset, cfg.positive_labels)
    if cfg.keep_fraction is not None and cfg.keep_fraction < 1.0:
        dataset = undersample_majority(dataset, cfg.keep_fraction, cfg.seed)
    return dataset


def resolve_positive_class(dataset: Dataset) -> int | None:
    """Minority class of a binary dataset, None for multiclass (macro scores)."""
    if dataset.n_classes != 2:
        return None
    return minority_class(dataset.labels, 2)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset | None]:
    if test_fraction == 0:
        return dataset, None
    pair = stratified_split(dataset, test_fraction, seed)
    return pair.train, pair.test


# ----------------------------
# Models
# ----------------------------
def tree_config(cfg: ExperimentConfig, mode: SplitMode = SplitMode.ALL_FEATURES) -> TreeConfig:
    return TreeConfig(
        split_mode=mode,
        max_features=cfg.max_features,
        max_depth=cfg.max_depth,
        min_samples_split=cfg.min_samples_split,
    )


def resolve_evo_config(
    cfg: ExperimentConfig,
    train_size: int,
    seed: int,
    positive_class: int | None = None,
    n_jobs: int = 1,
) -> EvoConfig:
    """Turns percentage settings into counts: G and M of N, MS of S, S of the training size."""
    max_bag_size = resolve_count(cfg.max_bag_size, train_size, "max_bag_size")
    return EvoConfig(
        n_bags=cfg.n_bags,
        max_bag_size=max_bag_size,
        gap_count=resolve_count(cfg.gap, cfg.n_bags, "gap"),
        mutation_count=resolve_count(cfg.mutation_count, cfg.n_bags, "mutation_count"),
        mutation_size=resolve_count(cfg.mutation_size, max_bag_size, "mutation_size"),
        size_bias=cfg.size_bias,
        max_iterations=cfg.max_iterations,
        fitness_metric=cfg.fitness_metric,
        elitist_count=cfg.elitist_count,
        alpha_source=cfg.alpha_source,
        positive_class=positive_class,
        tree_config=tree_config(cfg),
        voting=cfg.voting,
        accuracy_source=cfg.accuracy_source,
        seed=seed,
        n_jobs=n_jobs,
    )


def fit_model(
    model: str,
    train: Dataset,
    cfg: ExperimentConfig,
    seed: int,
    positive_class: int | None = None,
    test: Dataset | None = None,
    n_jobs: int = 1,
) -> tuple[Ensemble, list[GenerationStats]]:
    """Fits one model; the generation history is empty for the baselines."""
    if model == "evobagging":
        evo = resolve_evo_config(cfg, train.n_samples, seed, positive_class, n_jobs)
        return run_evobagging(train, test, evo)
    if model not in MODEL_SPLIT_MODES:
        raise ConfigError(f"model: unknown model {model!r}, expected one of {ALL_MODELS}")
    bag_size = resolve_count(cfg.bag_size, train.n_samples, "bag_size") if cfg.bag_size else None
    ensemble = fit_bagging(
        train,
        cfg.n_bags,
        bag_size,
        MODEL_SPLIT_MODES[model],
        seed,
        tree_config=tree_config(cfg),
        voting=cfg.voting,
        accuracy_source=cfg.accuracy_source,
        n_jobs=n_jobs,
    )
    return ensemble, []


def evaluate(e: Ensemble, data: Dataset, positive_class: int | None) -> dict[str, float]:
    return metric_bundle(
        ensemble_predict(e, data),
        data.labels,
        e.n_classes,
        scores=vote_fractions(e, data),
        positive_class=positive_class,
    )


def _roc_frame(model: str, e: Ensemble, data: Dataset, positive_class: int | None) -> pd.DataFrame:
    scores = vote_fractions(e, data)
    classes = [positive_class] if positive_class is not None else range(e.n_classes)
    frames = []
    for c in classes:
        try:
            fpr, tpr, thresholds = roc_curve(scores[:, c], data.labels, positive_class=c)
        except MetricError:
            continue
        frames.append(pd.DataFrame({"model": model, "class": c, "fpr": fpr, "tpr": tpr, "threshold": thresholds}))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def run_repetition(
    cfg: ExperimentConfig,
    dataset: Dataset,
    model: str,
    repetition: int,
    positive_class: int | None,
    n_jobs: int = 1,
) -> tuple[dict, pd.DataFrame, pd.DataFrame]:
    """One split + fit + evaluation. Returns (metrics row, telemetry, ROC points)."""
    seed = cfg.seed + repetition
    train, test = split_dataset(dataset, cfg.test_fraction, seed)
    ensemble, history = fit_model(model, train, cfg, seed, positive_class, test, n_jobs)

    row = {"model": model, "repetition": repetition, "seed": seed, "n_bags": len(ensemble)}
    row.update({f"train_{k}": v for k, v in evaluate(ensemble, train, positive_class).items()})
    if test is not None:
        row.update({f"test_{k}": v for k, v in evaluate(ensemble, test, positive_class).items()})
    row["mean_tree_depth"] = mean_tree_depth(ensemble)
    row["mean_bag_size"] = float(np.mean([m.bag.size for m in ensemble.members]))

    telemetry = pd.DataFrame([s.to_row() for s in history])
    if not telemetry.empty:
        telemetry.insert(0, "repetition", repetition)
        telemetry.insert(0, "model", model)
    roc = _roc_frame(model, ensemble, test if test is not None else train, positive_class)
    if not roc.empty:
        roc.insert(1, "repetition", repetition)
    return row, telemetry, roc


def _run_all(cfg: ExperimentConfig, dataset: Dataset, positive_class: int | None):
    jobs = [(model, r) for model in cfg.models for r in range(cfg.repetitions)]
    if cfg.n_jobs != 1 and len(jobs) > 1:
        # repetitions in worker processes, members fitted serially inside each
        results = Parallel(n_jobs=cfg.n_jobs)(
            delayed(run_repetition)(cfg, dataset, model, r, positive_class, 1) for model, r in jobs
        )
    else:
        results = [run_repetition(cfg, dataset, model, r, positive_class, cfg.n_jobs) for model, r in jobs]
    runs = pd.DataFrame([row for row, _, _ in results])
    telemetry = pd.concat([t for _, t, _ in results], ignore_index=True)
    roc = pd.concat([c for _, _, c in results], ignore_index=True)
    return runs, telemetry, roc


def _dataset_summary(dataset: Dataset, positive_class: int | None) -> dict:
    return {
        "n_samples": dataset.n_samples,
        "n_features": dataset.n_features,
        "n_classes": dataset.n_classes,
        "class_distribution": class_distribution(dataset),
        "imbalance_ratio": imbalance_ratio(dataset),
        "positive_class": positive_class,
    }


def _model_summaries(runs: pd.DataFrame) -> dict:
    return {model: summarize(group.drop(columns="model")) for model, group in runs.groupby("model", sort=False)}


def _mean_table(runs: pd.DataFrame) -> pd.DataFrame:
    numeric = runs.drop(columns=["repetition", "seed"]).groupby("model", sort=False)
    return numeric.mean(numeric_only=True).reset_index()


def _output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir) / cfg.name


def run_experiment(cfg: ExperimentConfig, write: bool = True, xlsx: bool = False) -> ExperimentResult:
    """
    Runs every model for `repetitions` seeds and writes runs.csv, summary.json,
    telemetry.csv (evolving models only) and roc.csv (repetition 0).
    """
    dataset = load_dataset(cfg)
    positive_class = resolve_positive_class(dataset)
    logger.info(
        f"📊 Experiment {cfg.name!r}: models {cfg.models}, {cfg.repetitions} repetition(s), "
        f"{dataset.n_samples} samples"
    )
    runs, telemetry, roc = _run_all(cfg, dataset, positive_class)
    roc = roc[roc["repetition"] == 0].drop(columns="repetition") if not roc.empty else roc

    summary = {"dataset": _dataset_summary(dataset, positive_class), "models": _model_summaries(runs)}
    for model, stats in summary["models"].items():
        key = "test_accuracy" if "test_accuracy" in stats else "train_accuracy"
        logger.info(f"📊 {model}: {key} {stats[key]['mean']:.4f} ± {stats[key]['std']:.4f}")

    out = None
    if write:
        out = _output_dir(cfg)
        config = cfg.resolved()
        export.write_csv(runs, out / "runs.csv", config)
        export.write_json(out / "summary.json", config, summary)
        if not telemetry.empty:
            export.write_csv(telemetry, out / "telemetry.csv", config)
        if not roc.empty:
            export.write_csv(roc, out / "roc.csv", config)
        if xlsx:
            buffer = export.results_to_excel(_mean_table(runs), runs)
            (out / "results.xlsx").write_bytes(buffer.getvalue())
    return ExperimentResult(runs=runs, summary=summary, telemetry=telemetry, roc=roc, output_dir=out)


# ----------------------------
# Sweeps and studies
# ----------------------------
def _metric_column(runs: pd.DataFrame, metric: str = "accuracy") -> str:
    return f"test_{metric}" if f"test_{metric}" in runs.columns else f"train_{metric}"


def _aggregate(runs: pd.DataFrame, keys: list[str]) -> pd.DataFrame:
    """Mean and std (ddof=0) of every metric column per group."""
    metrics = [c for c in runs.columns if c.startswith(("train_", "test_"))]
    grouped = runs.groupby(keys, sort=False)[metrics]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=0).add_suffix("_std")
    return pd.concat([means, stds], axis=1).reset_index()


def sweep_bag_count(cfg: ExperimentConfig, start: int, stop: int, step: int = 10, write: bool = True) -> tuple[pd.DataFrame, dict]:
    """
    Runs every model at n_bags = start, start+step, ..., stop.

    Returns one row per (model, bag count) and, per model, the count with the best
    mean test accuracy (smallest count on ties).
    """
    if start < 1 or stop < start:
        raise ConfigError(f"bag range: need 1 <= from <= to, got {start}..{stop}")
    if step < 1:
        raise ConfigError(f"bag range: step must be at least 1, got {step}")

    dataset = load_dataset(cfg)
    positive_class = resolve_positive_class(dataset)
    tables = []
    for n_bags in range(start, stop + 1, step):
        logger.info(f"📊 Sweep: {n_bags} bags")
        runs, _, _ = _run_all(cfg.model_copy(update={"n_bags": n_bags}), dataset, positive_class)
        tables.append(runs)
    runs = pd.concat(tables, ignore_index=True)
    table = _aggregate(runs, ["model", "n_bags"])

    column = _metric_column(runs) + "_mean"
    best = {}
    for model, group in table.groupby("model", sort=False):
        ranked = group.sort_values(by=[column, "n_bags"], ascending=[False, True], kind="stable")
        best[model] = int(ranked["n_bags"].iloc[0])

    if write:
        out = _output_dir(cfg)
        config = cfg.resolved() | {"sweep_from": start, "sweep_to": stop, "sweep_step": step}
        export.write_csv(table, out / "sweep_bags.csv", config)
        export.write_json(out / "sweep_bags.json", config, {"best_n_bags": best, "selected_by": column})
    return table, best


def _mean_reports(reports: list[dict]) -> dict:
    if not reports:
        return {}
    return {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}


def variance_protocol(cfg: ExperimentConfig, runs: int = 30, seeds: list[int] | None = None, write: bool = True) -> dict:
    """
    Diversity across ensembles trained on bootstrap replicates of one training set.

    The test set is fixed by one stratified split. Run i bootstraps a training set of
    the same size with seed `seeds[i]` (default seed + i), fits each model on it and
    records its test predictions; the six diversity measures are then computed with
    every ensemble as one learner. Within-ensemble diversity of the individual trees
    is averaged over runs alongside.
    """
    if runs < 2:
        raise ConfigError(f"runs: the variance protocol needs at least 2 runs, got {runs}")
    seeds = list(seeds) if seeds is not None else [cfg.seed + i for i in range(runs)]
    if len(seeds) != runs:
        raise ConfigError(f"seeds: {len(seeds)} seeds given for {runs} runs")
    if cfg.test_fraction == 0:
        raise ConfigError("test_fraction: the variance protocol needs a test set")

    dataset = load_dataset(cfg)
    positive_class = resolve_positive_class(dataset)
    train, test = split_dataset(dataset, cfg.test_fraction, cfg.seed)

    report = {}
    rows = []
    for model in cfg.models:
        predictions, within, scores = [], [], []
        for seed in seeds:
            replicate = resample_dataset(train, np.random.default_rng(seed))
            ensemble, _ = fit_model(model, replicate, cfg, seed, positive_class, n_jobs=cfg.n_jobs)
            predicted = ensemble_predict(ensemble, test)
            predictions.append(predicted)
            scores.append(accuracy(predicted, test.labels))
            if len(ensemble) >= 2:
                within.append(diversity_measures(prediction_matrix(ensemble, test)).to_dict())
        across = diversity_measures(PredictionMatrix(np.vstack(predictions), test.labels, dataset.n_classes)).to_dict()
        report[model] = {
            "across": across,
            "within": _mean_reports(within),
            "test_accuracy_mean": float(np.mean(scores)),
            "test_accuracy_std": float(np.std(scores)),
        }
        rows.append({"model": model, "scope": "across", **across})
        if within:
            rows.append({"model": model, "scope": "within", **report[model]["within"]})
        logger.info(f"📊 {model}: disagreement across ensembles {across['disagreement']:.4f}")

    if write:
        out = _output_dir(cfg)
        config = cfg.resolved() | {"variance_runs": runs, "variance_seeds": seeds}
        export.write_csv(pd.DataFrame(rows), out / "variance.csv", config)
        export.write_json(out / "variance.json", config, report)
    return report


def imbalance_study(cfg: ExperimentConfig, keep_fractions: list[float], write: bool = True) -> pd.DataFrame:
    """
    Undersamples the majority class to each keep fraction and runs every model;
    evolving models use F1 fitness. One row per (model, keep fraction).
    """
    if not keep_fractions:
        raise ConfigError("fractions: at least one keep fraction is required")
    base = load_dataset(cfg.model_copy(update={"keep_fraction": None}))
    if base.n_classes != 2:
        raise DatasetError(
            f"the imbalance study needs a binary dataset, got {base.n_classes} classes (set positive_labels)"
        )
    positive_class = resolve_positive_class(base)
    study_cfg = cfg.model_copy(update={"fitness_metric": FitnessMetric.F1})

    for fraction in keep_fractions:
        if not 0 < fraction <= 1:
            raise ConfigError(f"fractions: keep fraction must be in (0, 1], got {fraction}")

    tables = []
    for fraction in keep_fractions:
        dataset = undersample_majority(base, fraction, cfg.seed) if fraction < 1.0 else base
        ratio = imbalance_ratio(dataset)
        logger.info(f"⚖️ Keep fraction {fraction}: imbalance ratio 1:{ratio:.2f}")
        runs, _, _ = _run_all(study_cfg, dataset, positive_class)
        runs.insert(1, "keep_fraction", fraction)
        runs.insert(2, "imbalance_ratio", ratio)
        tables.append(runs)
    runs = pd.concat(tables, ignore_index=True)
    table = _aggregate(runs, ["model", "keep_fraction", "imbalance_ratio"])

    if write:
        out = _output_dir(cfg)
        config = study_cfg.resolved() | {"keep_fractions": list(keep_fractions)}
        export.write_csv(table, out / "imbalance.csv", config)
        export.write_json(out / "imbalance.json", config, {"positive_class": positive_class, "rows": table.to_dict(orient="records")})
    return table


def _cv_score(cfg: ExperimentConfig, train: Dataset, folds, positive_class: int | None) -> list[float]:
    scores = []
    for fold, (fit_idx, val_idx) in enumerate(folds):
        fit_part, val_part = train.subset(fit_idx), train.subset(val_idx)
        ensemble, _ = fit_model("evobagging", fit_part, cfg, cfg.seed + fold, positive_class)
        scores.append(accuracy(ensemble_predict(ensemble, val_part), val_part.labels))
    return scores


def _evaluate_candidate(cfg: ExperimentConfig, candidate: dict, train: Dataset, folds, positive_class) -> dict:
    row = dict(candidate)
    try:
        scores = _cv_score(cfg.model_copy(update=candidate), train, folds, positive_class)
    except (ValidationError, ConfigError) as e:
        logger.warning(f"⚠️ Skipping candidate {candidate}: {e}")
        return row | {"cv_accuracy_mean": float("nan"), "cv_accuracy_std": float("nan")}
    return row | {"cv_accuracy_mean": float(np.mean(scores)), "cv_accuracy_std": float(np.std(scores))}


def sweep_hyper(cfg: ExperimentConfig, write: bool = True) -> tuple[pd.DataFrame, dict]:
    """
    Grid search over gap, mutation count, mutation size and size bias by stratified
    k-fold cross-validation accuracy on the training partition. The best candidate
    is the first maximum in grid order.
    """
    dataset = load_dataset(cfg)
    positive_class = resolve_positive_class(dataset)
    train, _ = split_dataset(dataset, cfg.test_fraction, cfg.seed)
    folds = stratified_kfold(train, cfg.cv_folds, cfg.seed)

    candidates = [
        {"gap": g, "mutation_count": m, "mutation_size": ms, "size_bias": k}
        for g, m, ms, k in itertools.product(
            cfg.grid_gap, cfg.grid_mutation_count, cfg.grid_mutation_size, cfg.grid_size_bias
        )
    ]
    if not candidates:
        raise ConfigError("grid: every grid_* list needs at least one candidate")
    logger.info(f"📊 Hyperparameter sweep: {len(candidates)} candidates x {cfg.cv_folds} folds")

    rows = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_evaluate_candidate)(cfg, candidate, train, folds, positive_class) for candidate in candidates
    )
    table = pd.DataFrame(rows)
    if table["cv_accuracy_mean"].isna().all():
        raise ConfigError("grid: no candidate yields a valid evolution config")
    best = candidates[int(np.nanargmax(table["cv_accuracy_mean"].to_numpy()))]
    logger.info(f"📊 Best candidate: {best}")

    if write:
        out = _output_dir(cfg)
        config = cfg.resolved()
        export.write_csv(table, out / "sweep_hyper.csv", config)
        export.write_json(out / "sweep_hyper.json", config, {"best": best})
    return table, best
