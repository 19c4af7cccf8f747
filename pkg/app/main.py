"""
Command-line entry point.

    python -m app.main train <config>
    python -m app.main eval <checkpoint> <config>
    python -m app.main bench <config> [--checkpoint path]
    python -m app.main export-logits <checkpoint> <config> [--split test] [--out path]
    python -m app.main census <config>

Exit codes: 0 success, 1 other engine error, 2 config error, 3 NaN-abort.
"""

from pathlib import Path
from typing import List, Optional
import argparse
import logging
import sys

from app.core.config import load_experiment_config, settings, validate_settings
from app.core.exceptions import ConfigError, NaNAbortError, RankingMatchError
from app.core.logging import setup_logging
from app.schemas.experiment import ExperimentConfig, RankingVariant
from app.schemas.model import ModelSpec
from app.schemas.ranking import RankingLossConfig
from app.services.bench import (
    census_scaling,
    confidence_cost_profile,
    confidence_sweep,
    run_bench,
    sweep_batches,
    timing_inversions,
    write_bench_csv,
    write_census_csv,
)
from app.services.datasets import load_dataset
from app.services.evaluation import evaluate, export_logits
from app.services.models import logits_fn
from app.services.trainer import load_model_for_eval, run_training
from app.utils.helpers import ensure_directory, format_nanoseconds, format_percent, write_json

logger = logging.getLogger("app.main")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NAN = 3


# ==================== Commands ====================

def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    report = run_training(config)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def _eval_model(checkpoint: str, config: ExperimentConfig):
    if not Path(checkpoint).exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    split = load_dataset(config)
    spec = ModelSpec.from_experiment(config, split.train.sample_shape)
    return load_model_for_eval(spec, checkpoint), split


def cmd_eval(args) -> int:
    config = load_experiment_config(args.config)
    model, split = _eval_model(args.checkpoint, config)
    reports = {"test": evaluate(model, split.test)}
    if len(split.validation):
        reports["validation"] = evaluate(model, split.validation)

    for name, report in reports.items():
        logger.info("%s accuracy %s (error %s)", name, format_percent(report.accuracy), format_percent(report.error_rate))
    payload = "{" + ", ".join(f'"{name}": {report.model_dump_json()}' for name, report in reports.items()) + "}"
    write_json(ensure_directory(config.output_dir) / "eval.json", payload)
    print(payload)
    return EXIT_OK


def cmd_export_logits(args) -> int:
    config = load_experiment_config(args.config)
    model, split = _eval_model(args.checkpoint, config)
    subset = getattr(split, args.split)
    out = args.out or str(Path(config.output_dir) / f"logits_{args.split}.csv")
    export_logits(model, subset, out)
    print(out)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_experiment_config(args.config)
    records = run_bench(config)
    for record in records:
        logger.info(
            "%s n=%d triplets=%d median %s",
            record.variant.value, record.batch_size, record.triplets, format_nanoseconds(record.wall_time_ns),
        )
    ba_records = [record for record in records if record.variant == RankingVariant.BATCH_ALL]
    logger.info("BA timing inversions over %d sizes: %d", len(ba_records), timing_inversions(ba_records))
    out = write_bench_csv(records, str(Path(config.output_dir) / "bench.csv"))
    print(out)

    if args.checkpoint:
        params, split = _eval_model(args.checkpoint, config)
        batches = sweep_batches(split.train.samples, config.batch_size * config.mu, config.sweep_batches, config.seed)
        model = logits_fn(params)
        fractions = confidence_sweep(model, batches, config.threshold)
        logger.info("confident fraction per batch: %s", ", ".join(format_percent(f) for f in fractions))
        profile = confidence_cost_profile(
            model, batches, config.threshold, RankingLossConfig.from_experiment(config), config.bench_repetitions,
        )
        print(write_bench_csv(profile, str(Path(config.output_dir) / "confidence_bench.csv")))
    return EXIT_OK


def cmd_census(args) -> int:
    config = load_experiment_config(args.config)
    rows = census_scaling(config.census_sizes, config.census_classes)
    mismatches = [row for row in rows if row.closed_form_batch_all >= 0 and not row.matches_closed_form]
    if mismatches:
        logger.warning("%d census rows disagree with the closed form", len(mismatches))
    out = write_census_csv(rows, str(Path(config.output_dir) / "census.csv"))
    print(out)
    return EXIT_OK


# ==================== Parser ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankingmatch", description=settings.APP_NAME)
    verbs = parser.add_subparsers(dest="command", required=True)

    train = verbs.add_parser("train", help="run one training experiment")
    train.add_argument("config")
    train.set_defaults(handler=cmd_train)

    evaluate_verb = verbs.add_parser("eval", help="evaluate a checkpoint's EMA model")
    evaluate_verb.add_argument("checkpoint")
    evaluate_verb.add_argument("config")
    evaluate_verb.set_defaults(handler=cmd_eval)

    bench = verbs.add_parser("bench", help="time the ranking losses")
    bench.add_argument("config")
    bench.add_argument("--checkpoint", default=None, help="also sweep pseudo-label confidence against BA cost")
    bench.set_defaults(handler=cmd_bench)

    export = verbs.add_parser("export-logits", help="write logits and representations to CSV")
    export.add_argument("checkpoint")
    export.add_argument("config")
    export.add_argument("--split", choices=["train", "validation", "test"], default="test")
    export.add_argument("--out", default=None)
    export.set_defaults(handler=cmd_export_logits)

    census = verbs.add_parser("census", help="triplet counts against batch size")
    census.add_argument("config")
    census.set_defaults(handler=cmd_census)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    if not validate_settings():
        logger.error("Invalid process settings")
        return EXIT_CONFIG

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("Config error: %s", e)
        return EXIT_CONFIG
    except NaNAbortError as e:
        logger.error("NaN abort at step %d: %s", e.step, e)
        return EXIT_NAN
    except RankingMatchError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_ERROR
    except OSError as e:
        logger.error("I/O error: %s", e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
