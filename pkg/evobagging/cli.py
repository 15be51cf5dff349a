import argparse
import logging
from pathlib import Path

from pydantic import ValidationError

from evobagging import __version__
from evobagging.errors import ConfigError, EvoBaggingError
from evobagging.experiments import (
    ALL_MODELS,
    ExperimentConfig,
    imbalance_study,
    run_experiment,
    sweep_bag_count,
    sweep_hyper,
    variance_protocol,
)
from evobagging.logs import setup_logger
from evobagging.settings import load_environment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

# keys whose value is a comma-separated list
LIST_KEYS = {"models", "positive_labels", "grid_gap", "grid_mutation_count", "grid_mutation_size", "grid_size_bias"}
NONE_TOKENS = {"", "none", "null"}


# ----------------------------
# Config files
# ----------------------------
def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat `key=value` lines; `#` starts a comment line, blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    entries = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"config: {path}:{number}: expected key=value, got {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def parse_overrides(items: list[str] | None) -> dict[str, str]:
    entries = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set: expected key=value, got {item!r}")
        entries[key.strip()] = value.strip()
    return entries


def _coerce(raw: dict) -> dict:
    values = dict(raw)
    if "model" in values:
        values["models"] = values.pop("model")
    for key, value in list(values.items()):
        if not isinstance(value, str):
            continue
        if key in LIST_KEYS:
            values[key] = [v.strip() for v in value.split(",") if v.strip()]
        elif value.strip().lower() in NONE_TOKENS:
            values[key] = None
    if values.get("models") == ["all"]:
        values["models"] = list(ALL_MODELS)
    return {k: v for k, v in values.items() if v is not None}


def describe_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        field = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{field}: {err['msg']}")
    return "; ".join(parts)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file, then `--set` overrides, then dedicated flags; later sources win."""
    raw = parse_config_file(args.config) if args.config else {}
    raw.update(parse_overrides(args.set))
    flags = {
        "seed": args.seed,
        "output_dir": args.out,
        "repetitions": args.reps,
        "models": args.model,
        "n_jobs": args.jobs,
    }
    raw.update({k: v for k, v in flags.items() if v is not None})
    try:
        return ExperimentConfig(**_coerce(raw))
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e)) from e


# ----------------------------
# Argument parsing
# ----------------------------
def _fractions(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value experiment config file")
    common.add_argument("--seed", type=int, help="base seed (repetition r uses seed + r)")
    common.add_argument("--out", help="output directory (default: $EVOBAG_OUTPUT_DIR or ./results)")
    common.add_argument("--reps", type=int, help="number of repetitions")
    common.add_argument("--model", help="model name, comma-separated list or 'all'")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--jobs", type=int, help="parallel workers (default: $EVOBAG_N_JOBS or 1)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="evobagging", description="Evolutionary bagging experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbs = parser.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", parents=[common], help="repeated train/test runs")
    run.add_argument("--xlsx", action="store_true", help="also write results.xlsx")

    sweep = verbs.add_parser("sweep-bags", parents=[common], help="sweep the number of bags")
    sweep.add_argument("--from", dest="start", type=int, default=10)
    sweep.add_argument("--to", dest="stop", type=int, default=100)
    sweep.add_argument("--step", type=int, default=10)

    variance = verbs.add_parser("variance", parents=[common], help="diversity across bootstrap-trained ensembles")
    variance.add_argument("--runs", type=int, default=30)

    imbalance = verbs.add_parser("imbalance", parents=[common], help="majority undersampling study")
    imbalance.add_argument("--fractions", type=_fractions, default=[1.0, 0.5])

    verbs.add_parser("sweep-hyper", parents=[common], help="cross-validated G/M/MS/K grid search")
    return parser


def dispatch(args: argparse.Namespace, cfg: ExperimentConfig):
    if args.verb == "run":
        return run_experiment(cfg, xlsx=args.xlsx)
    if args.verb == "sweep-bags":
        return sweep_bag_count(cfg, args.start, args.stop, args.step)
    if args.verb == "variance":
        return variance_protocol(cfg, runs=args.runs)
    if args.verb == "imbalance":
        return imbalance_study(cfg, args.fractions)
    return sweep_hyper(cfg)


# ----------------------------
# Steuerungslogik
# ----------------------------
def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    _, run_handler = setup_logger(args.log_level)

    out_dir = None
    try:
        cfg = build_config(args)
        out_dir = Path(cfg.output_dir) / cfg.name
        dispatch(args, cfg)
        code = EXIT_OK
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {e}")
        code = EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"❌ Configuration error: {describe_validation_error(e)}")
        code = EXIT_CONFIG
    except EvoBaggingError as e:
        logger.error(f"❌ {e}")
        code = EXIT_RUNTIME
    except Exception:
        logger.exception("❌ Unexpected error")
        code = EXIT_RUNTIME

    if out_dir is not None and out_dir.is_dir():
        run_handler.dump(out_dir / "run.log")
    return code
