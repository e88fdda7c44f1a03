"""Stability functional N(t), exit detection and seeded Monte Carlo ensembles.

N(t) = ||V(t)||^2 + int_0^t exp(-eps (t - s)) ||V(s)||_{H1}^2 ds and the path exits at
the first step where N(t) > eta.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest, linregress

from core.errors import ConfigError, FrontDriftError, NagumoError, ScalingFitError, ShiftRangeError, WaveLostError
from core.freezing import (
    PhaseState,
    StochasticWave,
    initial_phase_state,
    phase_step,
    solve_stochastic_wave,
)
from core.grid import GridFunction, norm_h1_sq, norm_l2_sq
from core.noise import NoiseSampler, build_sampler
from core.persistence import write_columns
from core.seeding import path_generator
from core.spde import PathState, initial_condition, run_path
from core.wave import SpectralData, WaveProfile, compute_spectral_data, solve_deterministic_wave
from schemas.common import SCHEMA_SERIES
from schemas.config import ExitConfig, NagumoParams, SimConfig
from schemas.reports import ExitResult, PathOutcome, ScalingFitReport, SigmaExitRecord

logger = logging.getLogger(__name__)

QUANTILES = (0.1, 0.5, 0.9)


# ---------------- Norm tracker ---------------- #

@dataclass(frozen=True)
class NormTracker:
    l2_sq: float
    h1_accum: float
    epsilon: float
    n_value: float = field(init=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.l2_sq < 0 or self.h1_accum < 0:
            raise ValueError("tracked norms must be non-negative")
        object.__setattr__(self, "n_value", self.l2_sq + self.h1_accum)

    @classmethod
    def start(cls, v: GridFunction, epsilon: float) -> "NormTracker":
        return cls(l2_sq=norm_l2_sq(v), h1_accum=0.0, epsilon=epsilon)


def tracker_update_from_norms(tr: NormTracker, l2_sq: float, h1_sq: float, dt: float) -> NormTracker:
    if dt <= 0:
        raise ValueError("dt must be positive")
    h1_accum = math.exp(-tr.epsilon * dt) * tr.h1_accum + dt * h1_sq
    return NormTracker(l2_sq=l2_sq, h1_accum=h1_accum, epsilon=tr.epsilon)


def tracker_update(tr: NormTracker, v: GridFunction, dt: float, *, current: Optional[GridFunction] = None) -> NormTracker:
    """
    h1 <- exp(-eps dt) h1 + dt ||v||_H1^2 and l2 <- ||current||^2.

    ``v`` is the value at the left end of the step; ``current`` (default ``v``) the value at its right end.
    """
    end = v if current is None else current
    return tracker_update_from_norms(tr, norm_l2_sq(end), norm_h1_sq(v), dt)


def detect_exit(tr: NormTracker, eta: float) -> bool:
    return tr.n_value > eta


def resolve_epsilon(epsilon: Optional[float], beta: float) -> float:
    if epsilon is None:
        return 0.5 * beta
    if not 0.0 < epsilon < beta:
        raise ConfigError(f"epsilon={epsilon} must lie in (0, beta={beta:.6f})")
    return epsilon


# ---------------- Tracked path ---------------- #

DIAGNOSTIC_COLUMNS = ("t", "gamma", "v_l2", "v_h1", "a_sigma", "b_hs_sq", "kappa", "n_value", "orthogonality")


class PhaseTracker:
    """
    Run-path observer coupling the phase SDE and the norm tracker to the SPDE.

    Returns True (stop) once N(t) > eta or the wave is lost; ``eta=None`` never stops.
    """

    def __init__(
        self,
        initial: PathState,
        sw: StochasticWave,
        spectral: SpectralData,
        p: NagumoParams,
        dt: float,
        *,
        epsilon: float,
        eta: Optional[float] = None,
        record: bool = True,
    ):
        self.sw, self.spectral, self.p, self.dt, self.eta = sw, spectral, p, dt, eta
        self.record = record
        self.rows: List[Tuple[float, ...]] = []
        self.wave_lost = False
        self.exit_time: Optional[float] = None
        self.lost_error: Optional[WaveLostError] = None
        self.phase: PhaseState = initial_phase_state(initial, sw, spectral, p)
        self.tracker = NormTracker.start(self.phase.v, epsilon)
        self.max_n = self.tracker.n_value
        self._previous = initial
        self._record()
        if eta is not None and detect_exit(self.tracker, eta):
            self.exit_time = initial.t

    @property
    def exited(self) -> bool:
        return self.exit_time is not None

    def _record(self) -> None:
        if not self.record:
            return
        ph = self.phase
        self.rows.append(
            (
                ph.t,
                ph.gamma,
                math.sqrt(norm_l2_sq(ph.v)),
                math.sqrt(norm_h1_sq(ph.v)),
                ph.a_last,
                ph.b_hs_sq_last,
                ph.kappa_last,
                self.tracker.n_value,
                ph.orthogonality,
            )
        )

    def __call__(self, state: PathState, xi: GridFunction) -> Optional[bool]:
        if self.exited:
            return True
        before = self.phase.v
        try:
            self.phase = phase_step(self.phase, self._previous, state, xi, self.dt, self.sw, self.spectral, self.p)
        except WaveLostError as exc:
            logger.info("wave lost at t=%.4f (pairing %.3e)", self._previous.t, exc.pairing)
            self.wave_lost = True
            self.lost_error = exc
            self.exit_time = self._previous.t
            return True
        self.tracker = tracker_update(self.tracker, before, self.dt, current=self.phase.v)
        self.max_n = max(self.max_n, self.tracker.n_value)
        self._previous = state
        self._record()
        if self.eta is not None and detect_exit(self.tracker, self.eta):
            self.exit_time = state.t
            return True
        return None

    def write(self, path: Path, meta: Optional[dict] = None) -> Path:
        data = np.array(self.rows, dtype=float).reshape(-1, len(DIAGNOSTIC_COLUMNS))
        columns = {name: data[:, i] for i, name in enumerate(DIAGNOSTIC_COLUMNS)}
        return write_columns(path, columns, {"schema": SCHEMA_SERIES, **(meta or {})})


@dataclass(frozen=True, eq=False)
class EnsembleContext:
    """Shared, read-only inputs of every path at one sigma."""
    cfg: ExitConfig
    sim: SimConfig
    sampler: NoiseSampler
    stochastic_wave: StochasticWave
    spectral: SpectralData
    epsilon: float


def simulate_tracked_path(ctx: EnsembleContext, path_index: int) -> PathOutcome:
    cfg, sim = ctx.cfg, ctx.sim
    p = sim.params
    rng = path_generator(cfg.master_seed, path_index)
    initial = initial_condition(cfg.initial, ctx.stochastic_wave.profile, amplitude=cfg.amplitude, mode=cfg.mode, params=p)
    try:
        tracker = PhaseTracker(
            initial, ctx.stochastic_wave, ctx.spectral, p, sim.dt, epsilon=ctx.epsilon, eta=cfg.eta, record=False
        )
    except WaveLostError:
        return PathOutcome(path_index=path_index, sigma=p.sigma, exited=True, exit_time=0.0, wave_lost=True)
    except NagumoError as exc:
        return PathOutcome(path_index=path_index, sigma=p.sigma, error=f"{type(exc).__name__}: {exc}")

    try:
        final = initial if tracker.exited else run_path(sim, ctx.sampler, initial, tracker, rng=rng)
    except (ShiftRangeError, FrontDriftError) as exc:
        logger.info("path %d left the domain: %s", path_index, exc)
        return PathOutcome(
            path_index=path_index,
            sigma=p.sigma,
            left_domain=True,
            error=f"{type(exc).__name__}: {exc}",
            max_n=tracker.max_n,
        )
    except NagumoError as exc:
        logger.debug("path %d failed: %s", path_index, exc)
        return PathOutcome(
            path_index=path_index, sigma=p.sigma, error=f"{type(exc).__name__}: {exc}", max_n=tracker.max_n
        )
    exit_time = None if tracker.exit_time is None else min(tracker.exit_time, cfg.t_horizon)
    return PathOutcome(
        path_index=path_index,
        sigma=p.sigma,
        exited=tracker.exited,
        exit_time=exit_time,
        wave_lost=tracker.wave_lost,
        final_n=tracker.tracker.n_value,
        max_n=tracker.max_n,
        steps=final.increments_consumed,
    )


# ---------------- Aggregation ---------------- #

def wilson_interval(k: int, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def aggregate_outcomes(sigma: float, outcomes: Sequence[PathOutcome]) -> SigmaExitRecord:
    completed = [o for o in outcomes if o.error is None]
    exits = [o for o in completed if o.exited]
    times = sorted(o.exit_time for o in exits if o.exit_time is not None)
    quantiles = {}
    if times:
        values = np.quantile(times, QUANTILES)
        quantiles = {f"q{int(round(100 * q))}": float(v) for q, v in zip(QUANTILES, values)}
    n = len(completed)
    return SigmaExitRecord(
        sigma=sigma,
        path_count=n,
        exit_count=len(exits),
        wave_lost_count=sum(o.wave_lost for o in completed),
        failed_count=len(outcomes) - n,
        left_domain_count=sum(o.left_domain for o in outcomes),
        p_hat=len(exits) / n if n else None,
        wilson_interval=wilson_interval(len(exits), n),
        exit_times=times,
        exit_time_quantiles=quantiles,
    )


def map_paths(ctx: EnsembleContext, indices: Iterable[int], workers: int = 1) -> List[PathOutcome]:
    """Ordered per-path outcomes; inline for one worker, process pool otherwise."""
    indices = list(indices)
    task = partial(simulate_tracked_path, ctx)
    if workers <= 1:
        return [task(i) for i in indices]
    chunksize = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, indices, chunksize=chunksize))


def run_ensemble(
    cfg: ExitConfig,
    *,
    workers: int = 1,
    wave: Optional[WaveProfile] = None,
    spectral: Optional[SpectralData] = None,
) -> ExitResult:
    """
    Exit statistics for every sigma in ``cfg.sigma_list``.

    Path ``i`` uses the same random stream at every sigma, so estimates across sigma are paired.
    """
    base = cfg.sim.params.with_sigma(0.0)
    grid = cfg.sim.grid
    wave = wave or solve_deterministic_wave(base, grid)
    spectral = spectral or compute_spectral_data(wave, base)
    epsilon = resolve_epsilon(cfg.epsilon, spectral.beta)
    sampler = build_sampler(grid, cfg.pad_factor)

    records = []
    for sigma in cfg.sigma_list:
        params = base.with_sigma(sigma)
        sw = solve_stochastic_wave(params, grid, spectral, wave, kernel=sampler.kernel)
        sim = cfg.sim.model_copy(update={"params": params, "t_end": cfg.t_horizon})
        ctx = EnsembleContext(cfg=cfg, sim=sim, sampler=sampler, stochastic_wave=sw, spectral=spectral, epsilon=epsilon)
        outcomes = map_paths(ctx, range(cfg.n_paths), workers)
        record = aggregate_outcomes(sigma, outcomes)
        logger.info(
            "sigma=%g: %d/%d exits (p_hat=%s, lost=%d, failed=%d, left domain=%d)",
            sigma, record.exit_count, record.path_count,
            "n/a" if record.p_hat is None else f"{record.p_hat:.4f}",
            record.wave_lost_count, record.failed_count, record.left_domain_count,
        )
        records.append(record)
    return ExitResult(
        eta=cfg.eta,
        epsilon=epsilon,
        t_horizon=cfg.t_horizon,
        master_seed=cfg.master_seed,
        n_paths=cfg.n_paths,
        records=records,
    )


# ---------------- Scaling fit ---------------- #

def exit_abscissa(sigma: float, eta: float) -> float:
    """x(sigma) = eta / (sigma (sigma + sqrt(eta)))."""
    if sigma <= 0:
        return math.inf
    return eta / (sigma * (sigma + math.sqrt(eta)))


def theorem_bound(t_horizon: float, kappa: float, eta: float, sigma: float) -> float:
    """min(1, 2T exp(-kappa x(sigma)))."""
    x = exit_abscissa(sigma, eta)
    if math.isinf(x):
        return 0.0 if kappa > 0 else 1.0
    return min(1.0, 2.0 * t_horizon * math.exp(-kappa * x))


def scaling_fit_points(
    sigmas: Sequence[float],
    p_hats: Sequence[Optional[float]],
    eta: float,
    t_horizon: float,
) -> ScalingFitReport:
    """Regress -ln p_hat on x(sigma); p_hat in {0, 1}, missing p_hat and sigma = 0 are excluded with a note."""
    ordered = sorted(zip(sigmas, p_hats), key=lambda pair: pair[0])
    used, excluded = [], []
    for sigma, p_hat in ordered:
        if p_hat is None:
            excluded.append(f"sigma={sigma:g}: no completed paths")
        elif sigma <= 0:
            excluded.append(f"sigma={sigma:g}: no finite abscissa")
        elif p_hat <= 0.0 or p_hat >= 1.0:
            excluded.append(f"sigma={sigma:g}: degenerate p_hat={p_hat:g}")
        else:
            used.append((sigma, p_hat))
    if len(used) < 3:
        raise ScalingFitError(f"need at least 3 usable sigma values, got {len(used)}")

    xs = np.array([exit_abscissa(s, eta) for s, _ in used])
    ys = np.array([-math.log(p) for _, p in used])
    fit = linregress(xs, ys)
    observed = [(s, p) for s, p in ordered if p is not None]
    probabilities = [p for _, p in observed]
    monotone = all(b > a for a, b in zip(probabilities, probabilities[1:]))
    flags = {f"{s:g}": p <= theorem_bound(t_horizon, float(fit.slope), eta, s) for s, p in observed}
    return ScalingFitReport(
        eta=eta,
        t_horizon=t_horizon,
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue**2),
        sigmas_used=[s for s, _ in used],
        x_values=xs.tolist(),
        neg_log_p=ys.tolist(),
        excluded=excluded,
        monotone_in_sigma=monotone,
        bound_consistent=flags,
    )


def scaling_fit(res: ExitResult, eta: Optional[float] = None) -> ScalingFitReport:
    eta = res.eta if eta is None else eta
    return scaling_fit_points([r.sigma for r in res.records], [r.p_hat for r in res.records], eta, res.t_horizon)
