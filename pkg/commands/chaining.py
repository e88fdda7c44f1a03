import argparse
import logging

from core.chaining import metric_table, sup_growth_experiment
from core.persistence import write_report
from dependencies.run_context import add_common_arguments, resolve_run_context
from schemas.config import ChainingRunConfig

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("chaining", help="Supremum-growth experiment and metric-entropy tables.")
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_chaining)


def cmd_chaining(args: argparse.Namespace) -> int:
    ctx = resolve_run_context(args, "chaining", ChainingRunConfig)
    cfg: ChainingRunConfig = ctx.config

    growth = sup_growth_experiment(cfg.growth, workers=ctx.workers)
    logger.info("growth fit preferred: %s", growth.preferred)
    ctx.record(write_report(ctx.path("growth_report.json"), growth))

    ctx.record(write_report(ctx.path("metric_report.json"), metric_table(cfg.metric_horizons, cfg.metric_nus)))
    ctx.write_manifest(master_seed=cfg.growth.seed)
    return 0
