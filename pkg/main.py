import argparse
import logging
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

from commands import chaining, simulate, wave
from commands import exit as exit_command
from core import __version__
from core.errors import ConfigError, ConvergenceError, NagumoError, PartialEnsembleError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger("nagumo")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nagumo",
        description="Stochastic Nagumo fronts: wave solves, tracked simulations, exit statistics and chaining bounds.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    # Include commands
    wave.register(subparsers)
    simulate.register(subparsers)
    exit_command.register(subparsers)
    chaining.register(subparsers)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    # argparse exits with code 2 on usage errors, the same code as config errors
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except PartialEnsembleError as exc:
        logger.error("%s", exc)
        return EXIT_PARTIAL
    except NagumoError as exc:
        if isinstance(exc, ConvergenceError):
            logger.error("residual history: %s", ", ".join(f"{r:.3e}" for r in exc.residual_history))
        logger.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
