"""Deterministic traveling front, adjoint eigenfunction and spectral gap.

Conventions: U(x, t) = Phi(x - c t) with Phi(-L) = 1, Phi(L) = 0, so the front solves
rho Phi'' + c Phi' + f(Phi) = 0 and c > 0 when the state 1 invades (a < 1/2).
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import splu, spsolve
from scipy.special import expit

from core.errors import ConvergenceError, GridMismatchError, NumericalError, SpectralError
from core.grid import (
    GridFunction,
    coordinates,
    derivative_values,
    inner_l2,
    norm_l2,
    second_derivative_values,
    trapezoid_weights,
)
from core.persistence import read_columns, write_columns
from schemas.common import SCHEMA_PROFILE
from schemas.config import GridSpec, NagumoParams

logger = logging.getLogger(__name__)


# ---------------- Nonlinearities ---------------- #

def evaluate_f(u, p: NagumoParams):
    return u * (1.0 - u) * (u - p.a)


def evaluate_f_prime(u, p: NagumoParams):
    return -3.0 * u**2 + 2.0 * (1.0 + p.a) * u - p.a


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def evaluate_chi(u, p: NagumoParams):
    """C^2 cut-off: 1 on the plateau, 0 outside the support, quintic smoothstep in between."""
    lo, hi = p.chi_plateau
    s_lo, s_hi = p.chi_support
    u = np.asarray(u, dtype=float)
    rising = _smoothstep((u - s_lo) / (lo - s_lo))
    falling = _smoothstep((s_hi - u) / (s_hi - hi))
    out = np.minimum(rising, falling)
    return out if out.ndim else float(out)


def evaluate_g(u, p: NagumoParams):
    return u * (1.0 - u) * evaluate_chi(u, p)


def closed_form_front(x, rho: float, a: float):
    """(1 + exp(x / sqrt(2 rho)))^-1, the exact front of the cubic nonlinearity."""
    return expit(-np.asarray(x) / np.sqrt(2.0 * rho))


def closed_form_speed(rho: float, a: float) -> float:
    return float(np.sqrt(2.0 * rho) * (0.5 - a))


# ---------------- Types ---------------- #

@dataclass(frozen=True, eq=False)
class WaveProfile:
    profile: GridFunction
    speed: float
    derivative: GridFunction
    residual: float = 0.0
    iterations: int = 0
    residual_history: Tuple[float, ...] = ()

    @property
    def grid(self) -> GridSpec:
        return self.profile.grid


@dataclass(frozen=True, eq=False)
class SpectralData:
    psi_tw: GridFunction
    beta: float
    neutral_eigenvalue: float
    second_eigenvalue: float
    neutral_mode: GridFunction
    normalization: float


# ---------------- Traveling-wave BVP ---------------- #

def _residual_values(phi: np.ndarray, c: float, diffusion: float, p: NagumoParams, dx: float) -> np.ndarray:
    res = diffusion * second_derivative_values(phi, dx) + c * derivative_values(phi, dx) + evaluate_f(phi, p)
    res[0] = res[-1] = 0.0
    return res


def traveling_wave_residual(phi: GridFunction, c: float, p: NagumoParams) -> GridFunction:
    """rho Phi'' + c Phi' + f(Phi) at interior nodes; boundary entries are 0 (Dirichlet rows)."""
    return GridFunction(phi.grid, _residual_values(phi.values, c, p.rho, p, phi.grid.spacing))


def _phase_pin(grid: GridSpec) -> Tuple[int, float, float]:
    """Linear interpolation weights for Phi(0) between nodes k and k+1."""
    x = coordinates(grid)
    k = int(np.searchsorted(x, 0.0, side="right")) - 1
    theta = (0.0 - x[k]) / grid.spacing
    return k, 1.0 - theta, theta


def interior_jacobian(phi: np.ndarray, c: float, diffusion: float, p: NagumoParams, dx: float) -> sp.csc_matrix:
    """Tridiagonal Jacobian of the residual with respect to the interior values."""
    m = phi.size - 2
    main = -2.0 * diffusion / dx**2 + evaluate_f_prime(phi[1:-1], p)
    upper = np.full(m - 1, diffusion / dx**2 + c / (2.0 * dx))
    lower = np.full(m - 1, diffusion / dx**2 - c / (2.0 * dx))
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csc")


def bordered_solve(block: sp.spmatrix, column: np.ndarray, row: np.ndarray, rhs: np.ndarray, rhs_last: float) -> np.ndarray:
    """Solve [[block, column], [row, 0]] z = [rhs, rhs_last]."""
    system = sp.bmat(
        [[block, sp.csc_matrix(column[:, None])], [sp.csc_matrix(row[None, :]), None]],
        format="csc",
    )
    return spsolve(system, np.append(rhs, rhs_last))


def solve_deterministic_wave(
    p: NagumoParams,
    grid: GridSpec,
    init: Optional[WaveProfile] = None,
    *,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> WaveProfile:
    """
    Newton iteration for (Phi, c) with Phi(-L)=1, Phi(L)=0 and the pin Phi(0)=1/2.

    The unknowns are the interior values of Phi and the speed c; the Jacobian is the
    tridiagonal linearization bordered by the c-column D1 Phi and the pin row.
    """
    dx = grid.spacing
    if init is None:
        phi = closed_form_front(coordinates(grid), p.rho, p.a)
        c = closed_form_speed(p.rho, p.a)
    else:
        if init.grid != grid:
            raise GridMismatchError("initial guess lives on a different grid")
        phi = np.array(init.profile.values, dtype=float)
        c = float(init.speed)
    phi[0], phi[-1] = 1.0, 0.0

    k, w_left, w_right = _phase_pin(grid)
    row = np.zeros(grid.points - 2)
    row[k - 1], row[k] = w_left, w_right

    history = []
    for iteration in range(max_iter + 1):
        res = _residual_values(phi, c, p.rho, p, dx)
        pin = w_left * phi[k] + w_right * phi[k + 1] - 0.5
        r = float(max(np.max(np.abs(res)), abs(pin)))
        history.append(r)
        logger.debug("wave newton iter=%d residual=%.3e c=%.12f", iteration, r, c)
        if r <= tol:
            break
        if iteration == max_iter or not np.isfinite(r):
            raise ConvergenceError(f"traveling-wave Newton failed after {iteration} iterations", history)
        jac = interior_jacobian(phi, c, p.rho, p, dx)
        step = bordered_solve(jac, derivative_values(phi, dx)[1:-1], row, res[1:-1], pin)
        phi[1:-1] -= step[:-1]
        c -= step[-1]

    if np.any(np.diff(phi) > 1e-8):
        logger.warning("computed front is not monotone within 1e-8")
    logger.info("deterministic wave: c=%.10f residual=%.2e iterations=%d", c, history[-1], len(history) - 1)
    profile = GridFunction(grid, phi)
    return WaveProfile(
        profile=profile,
        speed=float(c),
        derivative=GridFunction(grid, derivative_values(phi, dx)),
        residual=history[-1],
        iterations=len(history) - 1,
        residual_history=tuple(history),
    )


def refined_grid(grid: GridSpec) -> GridSpec:
    """Same domain, half the spacing; every coarse node is a fine node."""
    return grid.model_copy(update={"points": 2 * grid.points - 1})


def richardson_wave(p: NagumoParams, grid: GridSpec, *, tol: float = 1e-10) -> WaveProfile:
    """
    Combine solves at spacing dx and dx/2 as (4 fine - coarse) / 3, cancelling the dx^2 term
    of profile and speed. The result lives on ``grid``.
    """
    coarse = solve_deterministic_wave(p, grid, tol=tol)
    fine = solve_deterministic_wave(p, refined_grid(grid), tol=tol)
    phi = (4.0 * fine.profile.values[::2] - coarse.profile.values) / 3.0
    speed = (4.0 * fine.speed - coarse.speed) / 3.0
    logger.info("extrapolated speed %.12f (coarse %.12f, fine %.12f)", speed, coarse.speed, fine.speed)
    profile = GridFunction(grid, phi)
    return WaveProfile(
        profile=profile,
        speed=float(speed),
        derivative=GridFunction(grid, derivative_values(phi, grid.spacing)),
        residual=float(np.max(np.abs(_residual_values(phi, speed, p.rho, p, grid.spacing)))),
        iterations=coarse.iterations + fine.iterations,
    )


# ---------------- Spectral data ---------------- #

def _tridiagonal_coefficients(w: WaveProfile, p: NagumoParams):
    dx = w.grid.spacing
    main = -2.0 * p.rho / dx**2 + evaluate_f_prime(w.profile.values[1:-1], p)
    upper = p.rho / dx**2 + w.speed / (2.0 * dx)
    lower = p.rho / dx**2 - w.speed / (2.0 * dx)
    return main, upper, lower


def compute_spectral_data(w: WaveProfile, p: NagumoParams) -> SpectralData:
    """
    psi_tw = kappa exp(c x / rho) Phi' normalized so <Phi', psi_tw> = 1, and the two rightmost
    eigenvalues of the three-point discretization of L_tw v = rho v'' + c v' + f'(Phi) v.

    The discretization is tridiagonal with positive off-diagonal product, so it is
    diagonally similar to a symmetric tridiagonal matrix.
    """
    grid = w.grid
    x = coordinates(grid)
    dphi = w.derivative
    psi_raw = GridFunction(grid, np.exp(w.speed * x / p.rho) * dphi.values)
    pairing = inner_l2(dphi, psi_raw)
    if pairing == 0.0:
        raise SpectralError("adjoint eigenfunction is orthogonal to Phi'")
    psi = psi_raw * (1.0 / pairing)

    main, upper, lower = _tridiagonal_coefficients(w, p)
    if upper * lower <= 0.0:
        raise SpectralError(f"grid too coarse for speed {w.speed:.4f}: off-diagonal product not positive")
    m = main.size
    off = np.full(m - 1, np.sqrt(upper * lower))
    try:
        evals, evecs = eigh_tridiagonal(main, off, select="i", select_range=(m - 2, m - 1))
    except np.linalg.LinAlgError as exc:
        raise SpectralError(f"tridiagonal eigen-solver failed: {exc}") from exc
    neutral, second = float(evals[-1]), float(evals[-2])
    if second >= 0.0:
        raise SpectralError(f"second eigenvalue {second:.3e} is not negative; no spectral gap")

    # undo the diagonal similarity: v_i = w_i / s_i with s_i = (upper/lower)^(i/2)
    log_scale = -0.5 * np.arange(m) * np.log(upper / lower)
    mode = evecs[:, -1] * np.exp(log_scale - log_scale.max())
    full = np.zeros(grid.points)
    full[1:-1] = mode
    neutral_mode = GridFunction(grid, full)
    neutral_mode = neutral_mode * (1.0 / norm_l2(neutral_mode))
    if inner_l2(neutral_mode, dphi) < 0.0:
        neutral_mode = -neutral_mode

    beta = -0.5 * second
    logger.info("spectral data: lambda0=%.3e lambda1=%.6f beta=%.6f", neutral, second, beta)
    return SpectralData(
        psi_tw=psi,
        beta=beta,
        neutral_eigenvalue=neutral,
        second_eigenvalue=second,
        neutral_mode=neutral_mode,
        normalization=inner_l2(dphi, psi),
    )


def apply_linearization(v: GridFunction, w: WaveProfile, p: NagumoParams) -> GridFunction:
    """Discrete L_tw v at interior nodes (ends set to 0)."""
    dx = v.grid.spacing
    out = (
        p.rho * second_derivative_values(v.values, dx)
        + w.speed * derivative_values(v.values, dx)
        + evaluate_f_prime(w.profile.values, p) * v.values
    )
    out[0] = out[-1] = 0.0
    return GridFunction(v.grid, out)


def adjoint_residual(s: SpectralData, w: WaveProfile, p: NagumoParams) -> float:
    """||rho psi'' - c psi' + f'(Phi) psi|| / ||psi|| over interior nodes."""
    dx = w.grid.spacing
    psi = s.psi_tw.values
    res = p.rho * second_derivative_values(psi, dx) - w.speed * derivative_values(psi, dx) + evaluate_f_prime(w.profile.values, p) * psi
    res[0] = res[-1] = 0.0
    return norm_l2(GridFunction(w.grid, res)) / norm_l2(s.psi_tw)


def apply_projection_complement(v: GridFunction, s: SpectralData, w: WaveProfile) -> GridFunction:
    """Pi v = v - <v, psi_tw> Phi'."""
    return v - w.derivative * inner_l2(v, s.psi_tw)


def projection_complement_values(values: np.ndarray, s: SpectralData, w: WaveProfile) -> np.ndarray:
    """Pi applied to one vector or row-wise to a batch of shape (m, n)."""
    coefficients = values @ (s.psi_tw.values * trapezoid_weights(w.grid))
    return values - np.multiply.outer(coefficients, w.derivative.values)


# ---------------- Linear semigroup ---------------- #

@dataclass(frozen=True, eq=False)
class SemigroupPropagator:
    """Crank-Nicolson step of dv/dt = L_tw v with homogeneous Dirichlet ends."""
    grid: GridSpec
    dt: float
    explicit: sp.csc_matrix
    implicit_lu: object

    def advance_values(self, values: np.ndarray) -> np.ndarray:
        interior = np.asarray(values, dtype=float)[..., 1:-1]
        rhs = self.explicit @ interior.T
        solved = self.implicit_lu.solve(np.asarray(rhs, order="F"))
        out = np.zeros(np.shape(values))
        out[..., 1:-1] = solved.T
        if not np.all(np.isfinite(out)):
            raise NumericalError("semigroup step produced non-finite values")
        return out

    def advance(self, v: GridFunction) -> GridFunction:
        return GridFunction(v.grid, self.advance_values(v.values))


@lru_cache(maxsize=16)
def build_semigroup_propagator(w: WaveProfile, p: NagumoParams, dt: float) -> SemigroupPropagator:
    if dt <= 0:
        raise ValueError("dt must be positive")
    main, upper, lower = _tridiagonal_coefficients(w, p)
    m = main.size
    operator = sp.diags(
        [np.full(m - 1, lower), main, np.full(m - 1, upper)], [-1, 0, 1], format="csc"
    )
    identity = sp.identity(m, format="csc")
    return SemigroupPropagator(
        grid=w.grid,
        dt=dt,
        explicit=(identity + 0.5 * dt * operator).tocsc(),
        implicit_lu=splu((identity - 0.5 * dt * operator).tocsc()),
    )


def semigroup_step(v: GridFunction, dt: float, w: WaveProfile, p: NagumoParams) -> GridFunction:
    if v.grid != w.grid:
        raise GridMismatchError("perturbation and wave live on different grids")
    return build_semigroup_propagator(w, p, dt).advance(v)


def semigroup_bound_estimate(
    s: SpectralData,
    w: WaveProfile,
    p: NagumoParams,
    rng: np.random.Generator,
    *,
    horizon: float = 10.0,
    dt: float = 0.05,
    samples: int = 16,
) -> float:
    """Empirical max over t <= horizon of ||S(t) Pi v|| / ||Pi v|| for random localized bumps."""
    x = coordinates(w.grid)
    centers = rng.uniform(-0.5 * w.grid.half_length, 0.5 * w.grid.half_length, samples)
    widths = rng.uniform(0.5, 3.0, samples)
    bumps = np.exp(-(((x[None, :] - centers[:, None]) / widths[:, None]) ** 2))
    bumps[:, 0] = bumps[:, -1] = 0.0
    batch = projection_complement_values(bumps, s, w)
    weights = trapezoid_weights(w.grid)
    initial = np.sqrt(np.square(batch) @ weights)
    propagator = build_semigroup_propagator(w, p, dt)
    worst = 1.0
    for _ in range(int(np.ceil(horizon / dt))):
        batch = propagator.advance_values(batch)
        worst = max(worst, float(np.max(np.sqrt(np.square(batch) @ weights) / initial)))
    return worst


# ---------------- Profile files ---------------- #

def save_profile(path: Path, w: WaveProfile, p: NagumoParams, s: Optional[SpectralData] = None) -> Path:
    columns = {"x": coordinates(w.grid), "phi": w.profile.values, "dphi": w.derivative.values}
    if s is not None:
        columns["psi"] = s.psi_tw.values
    meta = {
        "schema": SCHEMA_PROFILE,
        "speed": repr(w.speed),
        "rho": repr(p.rho),
        "a": repr(p.a),
        "sigma": repr(p.sigma),
        "half_length": repr(w.grid.half_length),
        "points": w.grid.points,
    }
    return write_columns(path, columns, meta)


def load_profile(path: Path) -> WaveProfile:
    meta, columns = read_columns(path)
    if meta.get("schema") != SCHEMA_PROFILE:
        raise ValueError(f"{path} is not a profile file")
    grid = GridSpec(half_length=float(meta["half_length"]), points=int(meta["points"]))
    return WaveProfile(
        profile=GridFunction(grid, columns["phi"]),
        speed=float(meta["speed"]),
        derivative=GridFunction(grid, columns["dphi"]),
    )
