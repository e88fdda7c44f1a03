import argparse
import logging

from core.errors import PartialEnsembleError, ScalingFitError
from core.exit_stats import run_ensemble, scaling_fit
from core.persistence import write_report
from dependencies.run_context import add_common_arguments, resolve_run_context
from schemas.config import ExitConfig

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("exit", help="Monte Carlo exit probabilities and the sigma scaling fit.")
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_exit)


def cmd_exit(args: argparse.Namespace) -> int:
    ctx = resolve_run_context(args, "exit", ExitConfig)
    cfg: ExitConfig = ctx.config
    logger.info("exit: %d paths x %d sigma values on %d workers", cfg.n_paths, len(cfg.sigma_list), ctx.workers)

    result = run_ensemble(cfg, workers=ctx.workers)
    ctx.record(write_report(ctx.path("exit_result.json"), result))
    try:
        fit = scaling_fit(result)
    except ScalingFitError as exc:
        logger.warning("scaling fit skipped: %s", exc)
    else:
        logger.info("scaling fit: slope=%.4f R^2=%.4f", fit.slope, fit.r_squared)
        ctx.record(write_report(ctx.path("fit_report.json"), fit))
    ctx.write_manifest(master_seed=cfg.master_seed)

    failed = sum(r.failed_count for r in result.records)
    if failed:
        raise PartialEnsembleError(failed, cfg.n_paths * len(cfg.sigma_list))
    return 0
