import argparse
import logging

from core.exit_stats import PhaseTracker, resolve_epsilon
from core.freezing import solve_stochastic_wave
from core.noise import build_sampler
from core.spde import FrontDriftGuard, SnapshotWriter, initial_condition, run_path
from core.wave import compute_spectral_data, solve_deterministic_wave
from dependencies.run_context import add_common_arguments, resolve_run_context
from schemas.config import SimulateRunConfig

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="Run one tracked SPDE path and write its diagnostics.")
    add_common_arguments(parser)
    parser.add_argument("--snapshot-every", type=int, metavar="K", help="Write the full state every K steps.")
    parser.set_defaults(handler=cmd_simulate)


def cmd_simulate(args: argparse.Namespace) -> int:
    extra = [] if args.snapshot_every is None else [f"snapshot_every={args.snapshot_every}"]
    ctx = resolve_run_context(args, "simulate", SimulateRunConfig, extra)
    cfg: SimulateRunConfig = ctx.config
    sim = cfg.sim
    params = sim.params
    base = params.with_sigma(0.0)

    wave = solve_deterministic_wave(base, sim.grid)
    spectral = compute_spectral_data(wave, base)
    epsilon = resolve_epsilon(cfg.epsilon, spectral.beta)
    sampler = build_sampler(sim.grid, cfg.pad_factor)
    sw = solve_stochastic_wave(params, sim.grid, spectral, wave, kernel=sampler.kernel)

    initial = initial_condition(cfg.initial, sw.profile, amplitude=cfg.amplitude, mode=cfg.mode, params=params)
    tracker = PhaseTracker(initial, sw, spectral, params, sim.dt, epsilon=epsilon)
    observers = [tracker, FrontDriftGuard()]
    snapshots = SnapshotWriter(cfg.snapshot_every, initial) if cfg.snapshot_every else None
    if snapshots is not None:
        observers.append(snapshots)

    final = run_path(sim, sampler, initial, *observers)
    lost_at = "none"
    if tracker.wave_lost:
        lost_at = repr(tracker.exit_time)
        logger.warning("wave lost at t=%s; series ends there", lost_at)
    logger.info("simulate: t=%.4f steps=%d max N=%.4e", final.t, final.increments_consumed, tracker.max_n)

    meta = {"sigma": repr(params.sigma), "dt": repr(sim.dt), "seed": sim.seed, "epsilon": repr(epsilon), "wave_lost_at": lost_at}
    ctx.record(tracker.write(ctx.path("series.dat"), meta))
    if snapshots is not None:
        ctx.record(snapshots.write(ctx.path("snapshots.dat")))
    ctx.write_manifest(master_seed=sim.seed)
    return 0
