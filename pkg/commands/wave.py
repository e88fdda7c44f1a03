import argparse
import logging

from core.freezing import stochastic_wave_sweep
from core.grid import coordinates
from core.persistence import write_columns, write_report
from core.wave import adjoint_residual, compute_spectral_data, richardson_wave, save_profile, solve_deterministic_wave
from dependencies.run_context import add_common_arguments, resolve_run_context
from schemas.common import SCHEMA_PROFILE
from schemas.config import WaveRunConfig
from schemas.reports import WaveReport

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser(
        "wave",
        help="Solve the deterministic front, its spectral data and stochastic corrections.",
    )
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_wave)


def cmd_wave(args: argparse.Namespace) -> int:
    """
    Writes profile.dat (x, Phi0, Phi0', psi_tw), one stochastic profile per requested sigma
    and wave_report.json with the residual and spectral diagnostics.
    """
    ctx = resolve_run_context(args, "wave", WaveRunConfig)
    cfg: WaveRunConfig = ctx.config
    params = cfg.params.with_sigma(0.0)

    wave = solve_deterministic_wave(params, cfg.grid)
    spectral = compute_spectral_data(wave, params)
    ctx.record(save_profile(ctx.path("profile.dat"), wave, params, spectral))

    sweep = stochastic_wave_sweep(params, cfg.grid, spectral, wave, cfg.sigmas, sigma_max=cfg.sigma_max)
    x = coordinates(cfg.grid)
    for sw in sweep.waves:
        meta = {"schema": SCHEMA_PROFILE, "sigma": repr(sw.sigma), "speed": repr(sw.speed), "residual": repr(sw.residual)}
        ctx.record(write_columns(ctx.path(f"profile_sigma_{sw.sigma:g}.dat"), {"x": x, "phi": sw.profile.values}, meta))
    if sweep.profile_slope is not None:
        logger.info("log-log slopes: profile %.3f, speed %.3f", sweep.profile_slope, sweep.speed_slope or float("nan"))

    speed_extrapolated = richardson_wave(params, cfg.grid).speed if cfg.extrapolate else None

    report = WaveReport(
        params=params.model_dump(mode="json"),
        grid=cfg.grid.model_dump(mode="json"),
        speed=wave.speed,
        residual=wave.residual,
        iterations=wave.iterations,
        residual_history=list(wave.residual_history),
        speed_extrapolated=speed_extrapolated,
        beta=spectral.beta,
        neutral_eigenvalue=spectral.neutral_eigenvalue,
        second_eigenvalue=spectral.second_eigenvalue,
        psi_normalization=spectral.normalization,
        adjoint_residual=adjoint_residual(spectral, wave, params),
        sweep=sweep.points,
        profile_slope=sweep.profile_slope,
        speed_slope=sweep.speed_slope,
    )
    ctx.record(write_report(ctx.path("wave_report.json"), report))
    ctx.write_manifest()
    return 0
