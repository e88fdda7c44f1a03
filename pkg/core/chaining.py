"""Chaining toolkit: OU increment metric, covering numbers, Dudley integrals,
moment/tail converters and empirical supremum-growth experiments."""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import lfilter
from scipy.special import erfc, gamma, gammaincc
from scipy.stats import linregress

from core.errors import NonMonotoneMetricError, NumericalError, QuadratureError
from core.grid import trapezoid_weights
from core.noise import NoiseSampler, build_sampler
from core.seeding import STREAM_DIAGNOSTICS, STREAM_GROWTH, path_generator
from core.spde import step_count
from core.wave import (
    SpectralData,
    WaveProfile,
    build_semigroup_propagator,
    compute_spectral_data,
    evaluate_g,
    projection_complement_values,
    solve_deterministic_wave,
)
from schemas.config import GrowthExperimentConfig
from schemas.reports import CoveringRow, DudleyRow, FitSummary, GrowthReport, MetricReport

logger = logging.getLogger(__name__)

Evaluator = Callable[[float, float], float]
Reach = Callable[[float, float], float]

MAX_SWEEP = 5_000_000
STATIONARY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class IncrementMetric:
    """
    Increment metric on [0, horizon].

    ``reach(s, nu)`` returns sup{t >= s : d(s, t) <= nu} (``inf`` if unbounded); without it the
    covering sweep bisects on ``evaluator``.
    """
    evaluator: Evaluator
    d_max: float
    horizon: float
    reach: Optional[Reach] = None
    name: str = "custom"

    def __call__(self, t: float, s: float) -> float:
        return self.evaluator(t, s)


# ---------------- OU metric ---------------- #

def ou_exact_metric(t, s):
    """
    d(t, s) for dX = -X dt + dW, X(0) = 0.

    Equal to 1/2 (2 - e^{-2t} - e^{-2s} - 2(e^{-|t-s|} - e^{-(t+s)})), written as
    q (1 - e^{-2 min(t,s)} q / 2) with q = 1 - e^{-|t-s|} to avoid cancellation.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be non-negative")
    q = -np.expm1(-np.abs(t - s))
    d_sq = q * (1.0 - 0.5 * np.exp(-2.0 * np.minimum(t, s)) * q)
    out = np.sqrt(np.maximum(d_sq, 0.0))
    return float(out) if out.ndim == 0 else out


def _ou_reach(s: float, nu: float) -> float:
    decay = math.exp(-2.0 * s)
    nu_sq = nu * nu
    if nu_sq >= 1.0 - 0.5 * decay:
        return math.inf
    q = 2.0 * nu_sq / (1.0 + math.sqrt(1.0 - 2.0 * decay * nu_sq))
    if q >= 1.0:
        return math.inf
    return s - math.log1p(-q)


def metric_diameter(evaluator: Evaluator, horizon: float, samples: int = 257) -> float:
    """max_s d(s, horizon); the diameter of [0, horizon] for metrics non-decreasing in t >= s."""
    grid = np.linspace(0.0, horizon, samples)
    values = np.array([evaluator(s, horizon) for s in grid])
    best = int(np.argmax(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, samples - 1)]
    if hi > lo:
        refined = minimize_scalar(lambda s: -evaluator(s, horizon), bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        return float(max(values[best], -refined.fun))
    return float(values[best])


def ou_increment_metric(horizon: float) -> IncrementMetric:
    return IncrementMetric(
        evaluator=ou_exact_metric,
        d_max=metric_diameter(ou_exact_metric, horizon),
        horizon=horizon,
        reach=_ou_reach,
        name="ou",
    )


def holder_bound_metric(horizon: float, scale: float) -> IncrementMetric:
    """d(t, s) = scale * min(sqrt|t - s|, 1)."""

    def evaluator(t: float, s: float) -> float:
        return scale * min(math.sqrt(abs(t - s)), 1.0)

    def reach(s: float, nu: float) -> float:
        return s + (nu / scale) ** 2 if nu < scale else math.inf

    return IncrementMetric(
        evaluator=evaluator,
        d_max=scale * min(math.sqrt(horizon), 1.0),
        horizon=horizon,
        reach=reach,
        name="holder",
    )


# ---------------- Covering numbers ---------------- #

@lru_cache(maxsize=64)
def _verify_monotone(metric: IncrementMetric, samples: int = 64) -> None:
    rng = path_generator(0, 0, STREAM_DIAGNOSTICS)
    points = np.sort(rng.uniform(0.0, metric.horizon, size=(samples, 3)), axis=1)
    for s, t1, t2 in points:
        if metric(s, t1) > metric(s, t2) + 1e-12:
            raise NonMonotoneMetricError(
                f"d({s:.4f}, {t1:.4f}) > d({s:.4f}, {t2:.4f}): covering sweep needs monotone increments"
            )


def _bisect_reach(metric: IncrementMetric, horizon: float, s: float, nu: float) -> float:
    if metric(s, horizon) <= nu:
        return math.inf
    return brentq(lambda t: metric(s, t) - nu, s, horizon, xtol=1e-13)


def covering_number(horizon: float, metric: IncrementMetric, nu: float) -> int:
    """
    Greedy left-to-right cover of [0, horizon] by intervals of d-diameter <= nu.

    Once two consecutive interval lengths agree to ``STATIONARY_RTOL`` the remaining
    intervals are counted in closed form.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    if horizon > metric.horizon * (1.0 + 1e-12):
        raise ValueError(f"horizon {horizon} exceeds the metric's horizon {metric.horizon}")
    if nu >= metric.d_max:
        return 1
    _verify_monotone(metric)

    count = 0
    start = 0.0
    previous = None
    while True:
        count += 1
        end = metric.reach(start, nu) if metric.reach is not None else _bisect_reach(metric, horizon, start, nu)
        if end >= horizon:
            return count
        length = end - start
        if length <= 0.0:
            raise NumericalError(f"covering sweep stalled at s={start:.6g}")
        if previous is not None and abs(length - previous) <= STATIONARY_RTOL * length:
            return count + math.ceil((horizon - end) / length)
        if count >= MAX_SWEEP:
            raise NumericalError(f"covering sweep exceeded {MAX_SWEEP} intervals")
        previous = length
        start = end


# ---------------- Dudley integral ---------------- #

def _entropy_tail(mass: float, upper: float) -> float:
    """int_0^upper sqrt(ln(mass / nu^2)) d nu in closed form (requires upper^2 <= mass)."""
    x = min(upper / math.sqrt(mass), 1.0)
    return math.sqrt(mass) * (x * math.sqrt(-2.0 * math.log(x)) + math.sqrt(math.pi / 2.0) * erfc(math.sqrt(-math.log(x))))


def dudley_closed_form(horizon: float, d_max: float) -> float:
    """int_0^{d_max} sqrt(ln(T d_max^2 / nu^2)) d nu = d_max (sqrt(ln T) + sqrt(pi T / 2) erfc(sqrt(ln T / 2)))."""
    log_t = math.log(horizon)
    return d_max * (math.sqrt(log_t) + math.sqrt(0.5 * math.pi * horizon) * erfc(math.sqrt(0.5 * log_t)))


def dudley_integral(
    horizon: float,
    metric: IncrementMetric,
    *,
    floor_fraction: float = 0.1,
    exact_levels: int = 32,
    epsrel: float = 1e-6,
) -> float:
    """
    int_0^{d_max} sqrt(ln N(horizon, d, nu)) d nu.

    N is a non-increasing step function. Its first ``exact_levels`` jumps are located by
    bisection and integrated exactly; below them ``quad`` handles the nearly continuous
    remainder down to floor_fraction * d_max; the rest uses N(nu) ~ N(floor) (floor / nu)^2.
    """
    if math.isclose(horizon, metric.horizon):
        d_max = metric.d_max
    else:
        d_max = metric_diameter(metric.evaluator, horizon)
    if d_max <= 1e-300:
        return 0.0
    floor = floor_fraction * d_max
    cache: Dict[float, int] = {}

    def count(nu: float) -> int:
        if nu not in cache:
            cache[nu] = covering_number(horizon, metric, min(nu, d_max)) if nu < d_max else 1
        return cache[nu]

    def threshold(level: int) -> float:
        lo, hi = floor, d_max
        while hi - lo > 1e-13 * d_max:
            mid = 0.5 * (lo + hi)
            if count(mid) >= level:
                lo = mid
            else:
                hi = mid
        return lo

    n_floor = count(floor)
    top = min(exact_levels, n_floor)
    edges = [d_max] + [threshold(k) for k in range(2, top + 1)]
    total = sum(math.sqrt(math.log(k)) * (edges[k - 1] - edges[k]) for k in range(2, top))
    lower_edge = edges[-1] if top >= 2 else d_max

    if n_floor <= exact_levels:
        total += math.sqrt(math.log(max(n_floor, 1))) * (lower_edge - floor)
    elif lower_edge > floor:
        result = quad(lambda nu: math.sqrt(math.log(count(nu))), floor, lower_edge, epsrel=epsrel, limit=400, full_output=1)
        value, abserr = result[0], result[1]
        if len(result) > 3 and abserr > 1e-4 * max(abs(value), 1e-300):
            raise QuadratureError(f"entropy quadrature failed: {result[3]}")
        total += value

    total += _entropy_tail(n_floor * floor**2, floor)
    return float(total)


# ---------------- Moment / tail converters ---------------- #

def moment_to_tail(theta: float, vartheta: float) -> float:
    """P(Z > vartheta) <= 2 exp(-vartheta^2 / (2 e theta^2)) when E[Z^{2p}] <= p^p theta^{2p}."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    return 2.0 * math.exp(-(vartheta**2) / (2.0 * math.e * theta**2))


def _check_moment_args(count: float, theta: float, p: int, name: str) -> None:
    if count < 2:
        raise ValueError(f"{name} must be >= 2")
    if theta <= 0:
        raise ValueError("theta must be positive")
    if int(p) != p or p < 1:
        raise ValueError("p must be an integer >= 1")


def tail_to_moment(A: float, theta: float, p: int) -> float:
    """E[Z^{2p}] <= (p^p + ln(A)^p) (8 e theta^2)^p when P(Z > v) <= 2A exp(-v^2 / (2 e theta^2))."""
    _check_moment_args(A, theta, p, "A")
    return (p**p + math.log(A) ** p) * (8.0 * math.e * theta**2) ** p


def tail_to_moment_sharp(A: float, theta: float, p: int) -> float:
    """The intermediate bound 2 (2p + ln A)^p (2 e theta^2)^p, never above ``tail_to_moment``."""
    _check_moment_args(A, theta, p, "A")
    return 2.0 * (2.0 * p + math.log(A)) ** p * (2.0 * math.e * theta**2) ** p


def tail_moment_integral(A: float, theta: float, p: int) -> float:
    """u0 + 2 p A (2 e theta^2)^p Gamma(p, w0) with w0 = 2p + ln A, before the incomplete-gamma estimate."""
    _check_moment_args(A, theta, p, "A")
    w0 = 2.0 * p + math.log(A)
    scale = 2.0 * math.e * theta**2
    upper_gamma = gammaincc(p, w0) * gamma(p)
    return (scale * w0) ** p + 2.0 * p * A * scale**p * upper_gamma


def max_moment_bound(N: int, theta: float, p: int) -> float:
    """E max_i Y_i^{2p} <= (p^p + ln(N)^p) (8 e theta^2)^p for N >= 2 variables with p^p theta^{2p} moments."""
    _check_moment_args(N, theta, p, "N")
    return (p**p + math.log(N) ** p) * (8.0 * math.e * theta**2) ** p


# ---------------- Growth experiments ---------------- #

def _ou_coefficients(dt: float):
    return math.exp(-dt), math.sqrt(-0.5 * math.expm1(-2.0 * dt))


def simulate_ou(
    horizon: float,
    dt: float,
    rng: np.random.Generator,
    *,
    size: Optional[int] = None,
    start: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Exact OU transitions X_{k+1} = e^{-dt} X_k + sqrt((1 - e^{-2dt}) / 2) N(0, 1).

    Returns one path of shape (steps + 1,), or ``size`` independent paths of shape
    (size, steps + 1) when ``size`` is given. Column 0 holds ``start`` (zero by default).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    decay, scale = _ou_coefficients(dt)
    steps = step_count(horizon, dt)
    shape = (steps,) if size is None else (size, steps)
    x0 = np.zeros(shape[:-1]) if start is None else np.asarray(start, dtype=float)
    path = np.empty(shape[:-1] + (steps + 1,))
    path[..., 0] = x0
    path[..., 1:], _ = lfilter([scale], [1.0, -decay], rng.standard_normal(shape), axis=-1, zi=decay * x0[..., None])
    return path


@dataclass(frozen=True, eq=False)
class GrowthChunk:
    cfg: GrowthExperimentConfig
    index: int
    size: int
    wave: Optional[WaveProfile] = None
    spectral: Optional[SpectralData] = None
    sampler: Optional[NoiseSampler] = None


BLOCK_STEPS = 2048


def _running_suprema(advance: Callable[[int], np.ndarray], horizon_steps: Sequence[int], size: int) -> np.ndarray:
    """sup over steps 1..k_j of the per-path squared norms returned by ``advance``; shape (horizons, size)."""
    sups = np.zeros((len(horizon_steps), size))
    current = np.zeros(size)
    done = 0
    for j, target in enumerate(horizon_steps):
        while done < target:
            k = min(BLOCK_STEPS, target - done)
            current = np.maximum(current, advance(k).max(axis=1))
            done += k
        sups[j] = current
    return sups


def _ou_chunk(chunk: GrowthChunk) -> np.ndarray:
    cfg = chunk.cfg
    rng = path_generator(cfg.seed, chunk.index, STREAM_GROWTH)
    x = np.zeros(chunk.size)

    def advance(k: int) -> np.ndarray:
        nonlocal x
        paths = simulate_ou(k * cfg.dt, cfg.dt, rng, size=chunk.size, start=x)
        x = paths[:, -1]
        return np.square(paths[:, 1:])

    return _running_suprema(advance, [step_count(t, cfg.dt) for t in cfg.horizons], chunk.size)


def _convolution_chunk(chunk: GrowthChunk) -> np.ndarray:
    """Y <- Pi S(dt) Y + Pi(g(Phi0) xi), measured in L^2."""
    cfg = chunk.cfg
    wave, spectral, sampler = chunk.wave, chunk.spectral, chunk.sampler
    rng = path_generator(cfg.seed, chunk.index, STREAM_GROWTH)
    propagator = build_semigroup_propagator(wave, cfg.params.with_sigma(0.0), cfg.dt)
    multiplier = evaluate_g(wave.profile.values, cfg.params)
    weights = trapezoid_weights(wave.grid)
    y = np.zeros((chunk.size, wave.grid.points))

    def advance(k: int) -> np.ndarray:
        nonlocal y
        out = np.empty((chunk.size, k))
        for i in range(k):
            injection = projection_complement_values(multiplier * sampler.sample_batch(cfg.dt, rng, chunk.size), spectral, wave)
            y = projection_complement_values(propagator.advance_values(y), spectral, wave) + injection
            out[:, i] = np.square(y) @ weights
        return out

    return _running_suprema(advance, [step_count(t, cfg.dt) for t in cfg.horizons], chunk.size)


def run_growth_chunk(chunk: GrowthChunk) -> np.ndarray:
    if chunk.cfg.process == "scalar_ou":
        return _ou_chunk(chunk)
    return _convolution_chunk(chunk)


def _fit(xs: np.ndarray, ys: np.ndarray) -> FitSummary:
    fit = linregress(xs, ys)
    residuals = ys - (fit.slope * xs + fit.intercept)
    rss = max(float(np.sum(residuals**2)), np.finfo(float).tiny)
    n = xs.size
    return FitSummary(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        r_squared=float(fit.rvalue**2),
        aic=float(n * math.log(rss / n) + 2 * 2),
    )


def growth_fits(horizons: Sequence[float], mean_sup: Sequence[float]):
    """(log fit, linear fit): E sup ||X||^2 against ln T and against T."""
    t = np.asarray(horizons, dtype=float)
    y = np.asarray(mean_sup, dtype=float)
    return _fit(np.log(t), y), _fit(t, y)


def sup_growth_experiment(
    cfg: GrowthExperimentConfig,
    *,
    workers: int = 1,
    wave: Optional[WaveProfile] = None,
    spectral: Optional[SpectralData] = None,
    sampler: Optional[NoiseSampler] = None,
) -> GrowthReport:
    """
    Estimate E sup_{[0,T]} ||X||^2 for every horizon and fit it against ln T and T.

    Paths are split into fixed-size chunks, each with its own seeded stream, so the report
    does not depend on the worker count.
    """
    if cfg.process == "semigroup_convolution":
        base = cfg.params.with_sigma(0.0)
        wave = wave or solve_deterministic_wave(base, cfg.grid)
        spectral = spectral or compute_spectral_data(wave, base)
        sampler = sampler or build_sampler(cfg.grid, cfg.pad_factor)

    n_chunks = math.ceil(cfg.n_paths / cfg.chunk_size)
    sizes = [min(cfg.chunk_size, cfg.n_paths - i * cfg.chunk_size) for i in range(n_chunks)]
    chunks = [GrowthChunk(cfg, i, size, wave, spectral, sampler) for i, size in enumerate(sizes)]
    if workers <= 1:
        results = [run_growth_chunk(chunk) for chunk in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_growth_chunk, chunks))
    sups = np.concatenate(results, axis=1)
    mean = sups.mean(axis=1)
    stderr = sups.std(axis=1, ddof=1) / math.sqrt(sups.shape[1])
    log_fit, linear_fit = growth_fits(cfg.horizons, mean)
    logger.info(
        "%s growth: log fit R^2=%.4f AIC=%.2f, linear fit R^2=%.4f AIC=%.2f",
        cfg.process, log_fit.r_squared, log_fit.aic, linear_fit.r_squared, linear_fit.aic,
    )
    return GrowthReport(
        process=cfg.process,
        horizons=list(cfg.horizons),
        n_paths=cfg.n_paths,
        dt=cfg.dt,
        seed=cfg.seed,
        mean_sup=mean.tolist(),
        stderr_sup=stderr.tolist(),
        log_fit=log_fit,
        linear_fit=linear_fit,
        preferred="log" if log_fit.aic < linear_fit.aic else "linear",
    )


def metric_table(horizons: Sequence[float], nus: Sequence[float]) -> MetricReport:
    """OU covering numbers against T / nu^2 + 1 and Dudley integrals against the Holder closed form."""
    coverings: List[CoveringRow] = []
    dudley: List[DudleyRow] = []
    for horizon in horizons:
        metric = ou_increment_metric(horizon)
        for nu in nus:
            coverings.append(
                CoveringRow(horizon=horizon, nu=nu, covering_number=covering_number(horizon, metric, nu), upper_bound=horizon / nu**2 + 1)
            )
        holder = holder_bound_metric(horizon, 1.0)
        dudley.append(
            DudleyRow(
                horizon=horizon,
                d_max=metric.d_max,
                ou_integral=dudley_integral(horizon, metric),
                holder_integral=dudley_integral(horizon, holder),
                holder_closed_form=dudley_closed_form(horizon, holder.d_max),
            )
        )
        logger.info("metric table: T=%g done", horizon)
    return MetricReport(coverings=coverings, dudley=dudley)
