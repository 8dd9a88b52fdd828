# metalr/cli.py
"""
Command-line entry point.

    python -m metalr run configs/reference.cfg --seeds 0,1,2 --out runs/ref
    python -m metalr ablate configs/reference.cfg
    python -m metalr oracle configs/oracle.cfg
    python -m metalr compare runs/a/report.json runs/b/report.json

Exit code 0 on success. On failure one line `error: <ErrorClass>: <message>` goes to
stderr with exit code 2 for configuration errors and 1 otherwise.
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

from metalr.core.errors import ConfigError
from metalr.core.logging_config import configure_logging
from metalr.core.settings import get_settings
from metalr.db import report_store
from metalr.models.schemas import ExperimentConfig
from metalr.services import experiment_service
from metalr.services.config_service import apply_overrides, load_config
from metalr.services.oracle_service import run_oracle

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _seed_list(value: str) -> List[int]:
    try:
        seeds = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got '{value}'")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metalr", description="Online layer-wise learning rates for fine-tuning.")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL (DEBUG, INFO, ...)")
    verbs = parser.add_subparsers(dest="command", required=True)

    for verb, help_text in (
        ("run", "fine-tune with the configured scheme over all seeds"),
        ("ablate", "baseline plus the MetaLR ablation rows"),
        ("oracle", "grid-search oracle vs online MetaLR on a tiny problem"),
    ):
        sub = verbs.add_parser(verb, help=help_text)
        sub.add_argument("config", help="flat key = value config file")
        sub.add_argument("--seeds", type=_seed_list, default=None, help="comma-separated seeds, e.g. 0,1,2")
        sub.add_argument("--out", default=None, help="output directory")
        sub.add_argument("--trace", action=argparse.BooleanOptionalAction, default=None,
                         help="write per-seed learning-rate traces")
        sub.add_argument("--workers", type=int, default=None, help="parallel seeds (or sweep cuts)")

    compare = verbs.add_parser("compare", help="compare saved report.json files; the first is the reference")
    compare.add_argument("reports", nargs="+")
    compare.add_argument("--out", default=None, help="also write the comparison as CSV")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    workers = args.workers
    if workers is None and get_settings().workers > 1:
        workers = get_settings().workers
    return apply_overrides(load_config(args.config), seeds=args.seeds, out=args.out,
                           trace=args.trace, workers=workers)


def _run(args: argparse.Namespace) -> None:
    report = experiment_service.run(_config(args))
    sys.stdout.write(report_store.render_summary(report))
    sys.stdout.write(f"report: {report.output_dir}\n")


def _ablate(args: argparse.Namespace) -> None:
    table = experiment_service.ablation_grid(_config(args))
    sys.stdout.write(report_store.render_ablation(table))


def _oracle(args: argparse.Namespace) -> None:
    config = _config(args)
    result = run_oracle(config.oracle)
    if config.run.out:
        report_store.write_oracle(result, config.run.out)
    sys.stdout.write(
        f"problem:        {result.problem}\n"
        f"grid best:      {result.best_alpha} -> {result.best_val_loss:.6g}\n"
        f"MetaLR (tail):  {result.metalr_alpha} -> {result.metalr_val_loss:.6g}\n"
        f"initial alpha:  {result.initial_val_loss:.6g}\n"
        f"relative gap:   {result.relative_gap:.4%}\n"
    )


def _compare(args: argparse.Namespace) -> None:
    rows = experiment_service.compare(args.reports)
    sys.stdout.write(experiment_service.render_comparison(rows))
    if args.out:
        report_store.write_comparison(rows, args.out)


HANDLERS = {"run": _run, "ablate": _ablate, "oracle": _oracle, "compare": _compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        HANDLERS[args.command](args)
    except ConfigError as e:
        logger.debug("Configuration rejected", exc_info=True)
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return EXIT_CONFIG
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        message = str(e).replace("\n", " ")
        sys.stderr.write(f"error: {type(e).__name__}: {message}\n")
        return EXIT_FAILURE
    return EXIT_OK
