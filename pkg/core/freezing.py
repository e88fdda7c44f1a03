"""Stochastic freezing: the instantaneous stochastic wave and the phase SDE.

All pairings are taken against psi_tw(. - gamma). Writing ``pairing`` for
<d_x u, psi_tw(. - gamma)>:

    b(u, gamma)[w]  = -<g(u) w, psi> / pairing
    ||b||_HS^2      =  <g(u) Q[g(u) psi], psi> / pairing^2
    K_sigma         =  rho u'' + c u' + f(u) + sigma^2/2 ||b||_HS^2 u'' - sigma^2/pairing (g(u) Q[g(u) psi])'
    a_sigma         = -<K_sigma, psi> / pairing
    dGamma          =  (c_sigma + a_sigma) dt + sigma b[dW]
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from core.errors import ConfigError, ConvergenceError, GridMismatchError, WaveLostError
from core.grid import (
    GridFunction,
    Kernel,
    convolve_gaussian,
    derivative,
    derivative_values,
    gaussian_kernel,
    inner_l2,
    norm_h1,
    second_derivative_values,
    shift,
    trapezoid_weights,
)
from core.noise import NoiseSampler
from core.spde import PathState
from core.wave import (
    SpectralData,
    WaveProfile,
    bordered_solve,
    evaluate_g,
    interior_jacobian,
    traveling_wave_residual,
)
from schemas.config import GridSpec, NagumoParams
from schemas.reports import SweepPoint

logger = logging.getLogger(__name__)

# pairing guard as a fraction of <Phi0', psi_tw>
GUARD_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class StochasticWave:
    profile: GridFunction
    speed: float
    sigma: float
    derivative: GridFunction
    residual: float = 0.0
    iterations: int = 0
    residual_history: Tuple[float, ...] = ()
    kernel: Kernel = gaussian_kernel

    @property
    def grid(self) -> GridSpec:
        return self.profile.grid


@dataclass(frozen=True, eq=False)
class WaveSweep:
    waves: List[StochasticWave]
    points: List[SweepPoint]
    profile_slope: Optional[float]
    speed_slope: Optional[float]


@dataclass(frozen=True, eq=False)
class PhaseState:
    gamma: float
    v: GridFunction
    a_last: float = 0.0
    b_hs_sq_last: float = 0.0
    kappa_last: float = 1.0
    orthogonality: float = 0.0
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class _Frame:
    psi: GridFunction
    pairing: float


def _frame(u: GridFunction, gamma: float, spectral: SpectralData, t: Optional[float] = None) -> _Frame:
    if u.grid != spectral.psi_tw.grid:
        raise GridMismatchError("state and adjoint eigenfunction live on different grids")
    psi = shift(spectral.psi_tw, -gamma)
    pairing = inner_l2(derivative(u), psi)
    threshold = GUARD_FRACTION * spectral.normalization
    if abs(pairing) < threshold:
        raise WaveLostError(pairing, threshold, t)
    return _Frame(psi=psi, pairing=pairing)


def _k_sigma_parts(u: GridFunction, frame: _Frame, c: float, p: NagumoParams, kernel: Kernel = gaussian_kernel):
    """(K_sigma values, ||b||_HS^2) at (u, frame)."""
    base = traveling_wave_residual(u, c, p).values
    if p.sigma == 0.0:
        return base, 0.0
    dx = u.grid.spacing
    gu = GridFunction(u.grid, evaluate_g(u.values, p))
    smoothed = convolve_gaussian(gu * frame.psi, kernel)
    hs = inner_l2(gu * smoothed, frame.psi) / frame.pairing**2
    flux = gu.values * smoothed.values
    extra = 0.5 * p.sigma**2 * hs * second_derivative_values(u.values, dx) - p.sigma**2 / frame.pairing * derivative_values(flux, dx)
    extra[0] = extra[-1] = 0.0
    return base + extra, hs


# ---------------- Scalar coefficients ---------------- #

def b_bar_pairing(u: GridFunction, gamma: float, w: GridFunction, spectral: SpectralData, p: NagumoParams) -> float:
    frame = _frame(u, gamma, spectral)
    gu = GridFunction(u.grid, evaluate_g(u.values, p))
    return -inner_l2(gu * w, frame.psi) / frame.pairing


def b_bar_hs_norm_sq(u: GridFunction, gamma: float, spectral: SpectralData, p: NagumoParams, sampler: NoiseSampler) -> float:
    frame = _frame(u, gamma, spectral)
    gu = GridFunction(u.grid, evaluate_g(u.values, p))
    smoothed = convolve_gaussian(gu * frame.psi, sampler.kernel)
    return inner_l2(gu * smoothed, frame.psi) / frame.pairing**2


def k_sigma_residual(
    phi: GridFunction,
    gamma: float,
    c: float,
    spectral: SpectralData,
    p: NagumoParams,
    *,
    kernel: Kernel = gaussian_kernel,
) -> GridFunction:
    if p.sigma == 0.0:
        return traveling_wave_residual(phi, c, p)
    values, _ = _k_sigma_parts(phi, _frame(phi, gamma, spectral), c, p, kernel)
    return GridFunction(phi.grid, values)


def a_sigma(u: GridFunction, gamma: float, sw: StochasticWave, spectral: SpectralData, p: NagumoParams) -> float:
    frame = _frame(u, gamma, spectral)
    values, _ = _k_sigma_parts(u, frame, sw.speed, p, sw.kernel)
    return -inner_l2(GridFunction(u.grid, values), frame.psi) / frame.pairing


def kappa_sigma(u: GridFunction, gamma: float, spectral: SpectralData, p: NagumoParams, sampler: NoiseSampler) -> float:
    """1 + sigma^2 / (2 rho) ||b||_HS^2."""
    if p.sigma == 0.0:
        return 1.0
    return 1.0 + p.sigma**2 / (2.0 * p.rho) * b_bar_hs_norm_sq(u, gamma, spectral, p, sampler)


# ---------------- Stochastic wave ---------------- #

def solve_stochastic_wave(
    p: NagumoParams,
    grid: GridSpec,
    spectral: SpectralData,
    det_wave: WaveProfile,
    *,
    sigma_max: float = 0.5,
    tol: float = 1e-9,
    max_iter: int = 60,
    kernel: Kernel = gaussian_kernel,
) -> StochasticWave:
    """
    Solve K_sigma(Phi, 0, c) = 0 with <Phi - Phi0, psi_tw> = 0, warm-started at (Phi0, c0).

    Simplified Newton: the Jacobian is the local bordered Jacobian with the diffusion
    rho + sigma^2/2 ||b||_HS^2 frozen at the current iterate.
    """
    if p.sigma > sigma_max:
        raise ConfigError(f"sigma={p.sigma} above the stochastic-wave threshold {sigma_max}")
    if det_wave.grid != grid:
        raise GridMismatchError("deterministic wave lives on a different grid")
    phi0 = det_wave.profile
    if p.sigma == 0.0:
        residual = float(np.max(np.abs(traveling_wave_residual(phi0, det_wave.speed, p).values)))
        return StochasticWave(phi0, det_wave.speed, 0.0, det_wave.derivative, residual, 0, (residual,), kernel)

    dx = grid.spacing
    row = (spectral.psi_tw.values * trapezoid_weights(grid))[1:-1]
    phi = np.array(phi0.values, dtype=float)
    c = det_wave.speed
    history: List[float] = []
    for iteration in range(max_iter + 1):
        u = GridFunction(grid, phi)
        frame = _frame(u, 0.0, spectral)
        res, hs = _k_sigma_parts(u, frame, c, p, kernel)
        phase = inner_l2(u - phi0, spectral.psi_tw)
        r = float(max(np.max(np.abs(res)), abs(phase)))
        history.append(r)
        logger.debug("stochastic wave sigma=%g iter=%d residual=%.3e c=%.12f", p.sigma, iteration, r, c)
        if r <= tol:
            break
        if iteration == max_iter or not np.isfinite(r):
            raise ConvergenceError(f"stochastic-wave iteration failed for sigma={p.sigma}", history)
        jac = interior_jacobian(phi, c, p.rho + 0.5 * p.sigma**2 * hs, p, dx)
        update = bordered_solve(jac, derivative_values(phi, dx)[1:-1], row, res[1:-1], phase)
        phi[1:-1] -= update[:-1]
        c -= update[-1]

    logger.info("stochastic wave sigma=%g: c=%.10f residual=%.2e iterations=%d", p.sigma, c, history[-1], len(history) - 1)
    profile = GridFunction(grid, phi)
    return StochasticWave(
        profile=profile,
        speed=float(c),
        sigma=p.sigma,
        derivative=derivative(profile),
        residual=history[-1],
        iterations=len(history) - 1,
        residual_history=tuple(history),
        kernel=kernel,
    )


def loglog_slope(sigmas: Sequence[float], values: Sequence[float]) -> Optional[float]:
    pairs = [(s, v) for s, v in zip(sigmas, values) if s > 0 and v > 0]
    if len(pairs) < 2:
        return None
    xs, ys = zip(*pairs)
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def stochastic_wave_sweep(
    p: NagumoParams,
    grid: GridSpec,
    spectral: SpectralData,
    det_wave: WaveProfile,
    sigmas: Sequence[float],
    *,
    sigma_max: float = 0.5,
    kernel: Kernel = gaussian_kernel,
) -> WaveSweep:
    """Per-sigma stochastic waves, their distances to (Phi0, c0) and the log-log slopes of both."""
    waves, points = [], []
    for sigma in sigmas:
        sw = solve_stochastic_wave(p.with_sigma(sigma), grid, spectral, det_wave, sigma_max=sigma_max, kernel=kernel)
        waves.append(sw)
        points.append(
            SweepPoint(
                sigma=sigma,
                speed=sw.speed,
                profile_h1_distance=norm_h1(sw.profile - det_wave.profile),
                speed_distance=abs(sw.speed - det_wave.speed),
                residual=sw.residual,
                iterations=sw.iterations,
            )
        )
    profile_slope = loglog_slope([q.sigma for q in points], [q.profile_h1_distance for q in points])
    speed_slope = loglog_slope([q.sigma for q in points], [q.speed_distance for q in points])
    return WaveSweep(waves, points, profile_slope, speed_slope)


# ---------------- Phase ---------------- #

def initial_phase(u0: GridFunction, sw: StochasticWave, spectral: SpectralData, *, tol: float = 1e-10) -> float:
    """Root of h(gamma) = <u0(. + gamma) - Phi_sigma, psi_tw>, bracketed within |gamma| <= L/4."""
    limit = 0.25 * u0.grid.half_length

    def h(gamma: float) -> float:
        return inner_l2(shift(u0, gamma) - sw.profile, spectral.psi_tw)

    h0 = h(0.0)
    if abs(h0) <= tol:
        return 0.0
    # h is increasing: its slope is about <Phi', psi_tw> = 1
    direction = 1.0 if h0 < 0.0 else -1.0
    near, far = 0.0, direction * min(0.25, limit)
    while True:
        if h(far) * h0 <= 0.0:
            lo, hi = sorted((near, far))
            return float(brentq(h, lo, hi, xtol=1e-14, maxiter=200))
        if abs(far) >= limit:
            raise ConvergenceError(f"no phase bracket within |gamma| <= {limit:.3f}", [abs(h0)])
        near, far = far, direction * min(2.0 * abs(far), limit)


def _phase_state(u: GridFunction, gamma: float, sw: StochasticWave, spectral: SpectralData, p: NagumoParams, t: float):
    frame = _frame(u, gamma, spectral, t)
    k_values, hs = _k_sigma_parts(u, frame, sw.speed, p, sw.kernel)
    a = -inner_l2(GridFunction(u.grid, k_values), frame.psi) / frame.pairing
    return frame, a, hs


def initial_phase_state(state: PathState, sw: StochasticWave, spectral: SpectralData, p: NagumoParams) -> PhaseState:
    gamma = initial_phase(state.u, sw, spectral)
    v = shift(state.u, gamma) - sw.profile
    _, a, hs = _phase_state(state.u, gamma, sw, spectral, p, state.t)
    return PhaseState(
        gamma=gamma,
        v=v,
        a_last=a,
        b_hs_sq_last=hs,
        kappa_last=1.0 + p.sigma**2 / (2.0 * p.rho) * hs,
        orthogonality=inner_l2(v, spectral.psi_tw),
        t=state.t,
    )


def phase_step(
    ps: PhaseState,
    before: PathState,
    after: PathState,
    xi: GridFunction,
    dt: float,
    sw: StochasticWave,
    spectral: SpectralData,
    p: NagumoParams,
) -> PhaseState:
    """
    Euler-Maruyama step of the phase using the increment the SPDE step consumed.

    Coefficients are evaluated at the pre-step state (Ito); V is rebuilt from the post-step state.
    """
    frame, a, hs = _phase_state(before.u, ps.gamma, sw, spectral, p, before.t)
    noise = 0.0
    if p.sigma != 0.0:
        gu = GridFunction(before.u.grid, evaluate_g(before.u.values, p))
        noise = -p.sigma * inner_l2(gu * xi, frame.psi) / frame.pairing
    gamma = ps.gamma + (sw.speed + a) * dt + noise
    v = shift(after.u, gamma) - sw.profile
    return PhaseState(
        gamma=gamma,
        v=v,
        a_last=a,
        b_hs_sq_last=hs,
        kappa_last=1.0 + p.sigma**2 / (2.0 * p.rho) * hs,
        orthogonality=inner_l2(v, spectral.psi_tw),
        t=after.t,
    )
