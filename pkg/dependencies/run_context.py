"""Shared per-run context: resolved config, output directory, worker count and manifest."""
import argparse
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Type, TypeVar

from pydantic import BaseModel, ValidationError

from core import __version__
from core.config import load_run_config, settings, validate_config
from core.errors import ConfigError
from core.persistence import file_digest, write_report
from schemas.reports import OutputFile, RunManifest

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

MANIFEST_NAME = "manifest.json"


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Key-value run configuration file.")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override one config entry (dotted keys, repeatable).",
    )
    parser.add_argument("--out", help="Output directory.")
    parser.add_argument("--workers", type=int, help="Worker processes (default: CPU count).")
    parser.add_argument("--manifest", type=Path, help="Replay the resolved config of an earlier run.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")


@dataclass
class RunContext:
    subcommand: str
    config: BaseModel
    out_dir: Path
    workers: int
    started: float = field(default_factory=time.perf_counter)
    outputs: List[Path] = field(default_factory=list)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def record(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path

    def write_manifest(self, master_seed: Optional[int] = None) -> Path:
        manifest = RunManifest(
            subcommand=self.subcommand,
            config=self.config.model_dump(mode="json"),
            master_seed=master_seed,
            version=__version__,
            workers=self.workers,
            outputs=[
                OutputFile(path=str(p.relative_to(self.out_dir)), sha256=file_digest(p)) for p in self.outputs
            ],
            wall_clock_seconds=time.perf_counter() - self.started,
        )
        path = write_report(self.path(MANIFEST_NAME), manifest)
        logger.info("%s: %d output files in %s", self.subcommand, len(self.outputs), self.out_dir)
        return path


def load_manifest(path: Path) -> RunManifest:
    try:
        return RunManifest.model_validate(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc


def resolve_workers(requested: Optional[int]) -> int:
    if requested is None:
        return os.cpu_count() or 1
    if requested < 1:
        raise ConfigError("--workers must be >= 1")
    return requested


def resolve_run_context(
    args: argparse.Namespace,
    subcommand: str,
    model: Type[ModelT],
    extra_overrides: Iterable[str] = (),
) -> RunContext:
    """Validate the run config (file + overrides, or a manifest replay) before any computation."""
    extra_overrides = list(extra_overrides)
    if args.manifest is not None:
        if args.config is not None or args.overrides or extra_overrides:
            raise ConfigError("--manifest replays a resolved config and cannot be combined with --config or --set")
        manifest = load_manifest(args.manifest)
        if manifest.subcommand != subcommand:
            raise ConfigError(f"manifest belongs to '{manifest.subcommand}', not '{subcommand}'")
        config = validate_config(model, manifest.config)
    else:
        config = load_run_config(model, args.config, [*args.overrides, *extra_overrides])

    out_dir = settings.output_dir(subcommand, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(args.workers)
    logger.debug("%s config: %s", subcommand, config.model_dump_json())
    return RunContext(subcommand=subcommand, config=config, out_dir=out_dir, workers=workers)
