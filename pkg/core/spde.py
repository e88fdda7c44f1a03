"""Semi-implicit Euler-Maruyama for dU = [rho U_xx + f(U)] dt + sigma g(U) dW^Q.

Diffusion is implicit, reaction and noise explicit and evaluated at the pre-step state.
The end values of the incoming state are held fixed (Dirichlet), so 1 and 0 for every
wave-type initial datum.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import List, Literal, Optional, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from core.errors import BlowUpError, FrontDriftError, GridMismatchError
from core.grid import GridFunction, coordinates, norm_h1_sq, shift
from core.noise import NoiseSampler
from core.persistence import write_columns
from core.seeding import path_generator
from core.wave import evaluate_f, evaluate_g
from schemas.common import SCHEMA_SNAPSHOT
from schemas.config import GridSpec, NagumoParams, SimConfig

logger = logging.getLogger(__name__)

InitialKind = Literal["exact_wave", "perturbed_wave"]

# kernel width of exp(-r^2)
KERNEL_WIDTH = 1.0


@dataclass(frozen=True, eq=False)
class PathState:
    u: GridFunction
    t: float = 0.0
    increments_consumed: int = 0


class Observer(Protocol):
    def __call__(self, state: PathState, xi: GridFunction) -> Optional[bool]: ...


# --- Helper Functions ---

def perturbation_shape(grid: GridSpec, mode: int) -> GridFunction:
    """sin(mode pi x / L) sech(x): localized, vanishes at both ends."""
    x = coordinates(grid)
    values = np.sin(mode * np.pi * x / grid.half_length) / np.cosh(x)
    values[0] = values[-1] = 0.0
    return GridFunction(grid, values)


def initial_condition(
    kind: InitialKind,
    profile: GridFunction,
    *,
    amplitude: float = 0.0,
    mode: int = 1,
    params: Optional[NagumoParams] = None,
) -> PathState:
    if kind == "exact_wave" or amplitude == 0.0:
        return PathState(u=profile)
    if kind != "perturbed_wave":
        raise ValueError(f"unknown initial condition {kind!r}")
    u = profile + perturbation_shape(profile.grid, mode) * amplitude
    if params is not None:
        lo, hi = params.chi_plateau
        if u.values.min() < lo or u.values.max() > hi:
            logger.warning("perturbed initial data leaves the cut-off plateau [%g, %g]", lo, hi)
    return PathState(u=u)


def front_position(u: GridFunction) -> float:
    """Leftmost x where u crosses 1/2, by linear interpolation."""
    values = u.values - 0.5
    crossings = np.nonzero(np.sign(values[:-1]) != np.sign(values[1:]))[0]
    if crossings.size == 0:
        raise FrontDriftError("no level-1/2 crossing: front left the domain")
    i = int(crossings[0])
    x = coordinates(u.grid)
    theta = values[i] / (values[i] - values[i + 1])
    return float(x[i] + theta * (x[i + 1] - x[i]))


# ---------------- Stepper ---------------- #

@dataclass(frozen=True, eq=False)
class SemiImplicitStepper:
    grid: GridSpec
    rho: float
    dt: float
    lu: object

    @property
    def coupling(self) -> float:
        return self.dt * self.rho / self.grid.spacing**2

    def solve(self, rhs: np.ndarray, left: float, right: float) -> np.ndarray:
        interior = np.array(rhs[1:-1], dtype=float)
        interior[0] += self.coupling * left
        interior[-1] += self.coupling * right
        out = np.empty(self.grid.points)
        out[0], out[-1] = left, right
        out[1:-1] = self.lu.solve(interior)
        return out


@lru_cache(maxsize=16)
def build_stepper(grid: GridSpec, rho: float, dt: float) -> SemiImplicitStepper:
    """Factorize I - dt rho D2 on the interior nodes."""
    m = grid.points - 2
    r = dt * rho / grid.spacing**2
    matrix = sp.diags([np.full(m - 1, -r), np.full(m, 1.0 + 2.0 * r), np.full(m - 1, -r)], [-1, 0, 1], format="csc")
    return SemiImplicitStepper(grid=grid, rho=rho, dt=dt, lu=splu(matrix))


def step_with_increment(state: PathState, cfg: SimConfig, xi: GridFunction) -> PathState:
    """One step driven by the given increment; the deterministic core of ``step``."""
    if state.u.grid != cfg.grid or xi.grid != cfg.grid:
        raise GridMismatchError("state, increment and config must share one grid")
    p = cfg.params
    u = state.u.values
    rhs = u + cfg.dt * evaluate_f(u, p)
    if p.sigma != 0.0:
        rhs = rhs + p.sigma * evaluate_g(u, p) * xi.values
    stepper = build_stepper(cfg.grid, p.rho, cfg.dt)
    new = stepper.solve(rhs, u[0], u[-1])
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite values after step at t={state.t + cfg.dt:.6f}")
    return PathState(u=GridFunction(cfg.grid, new), t=state.t + cfg.dt, increments_consumed=state.increments_consumed + 1)


def step(state: PathState, cfg: SimConfig, sampler: NoiseSampler, rng: np.random.Generator):
    """Advance one step; returns (new_state, xi) so the phase tracker can reuse the increment."""
    xi = sampler.sample_increment(cfg.dt, rng)
    return step_with_increment(state, cfg, xi), xi


def step_count(t_end: float, dt: float) -> int:
    return max(0, math.ceil(t_end / dt - 1e-9))


def run_path(
    cfg: SimConfig,
    sampler: NoiseSampler,
    initial: PathState,
    *observers: Observer,
    rng: Optional[np.random.Generator] = None,
) -> PathState:
    """Iterate ``step`` until t_end or until an observer returns True."""
    if rng is None:
        rng = path_generator(cfg.seed, 0)
    state = initial
    for _ in range(step_count(cfg.t_end, cfg.dt)):
        state, xi = step(state, cfg, sampler, rng)
        stop = False
        for observer in observers:
            stop = bool(observer(state, xi)) or stop
        if stop:
            logger.debug("observer requested stop at t=%.4f", state.t)
            break
    return state


# ---------------- Observers ---------------- #

class StepCounter:
    def __init__(self):
        self.calls = 0

    def __call__(self, state: PathState, xi: GridFunction) -> None:
        self.calls += 1


class FrontDriftGuard:
    """Abort once the level-1/2 crossing is within ``widths`` kernel widths of an end."""

    def __init__(self, widths: float = 5.0):
        self.widths = widths

    def __call__(self, state: PathState, xi: GridFunction) -> None:
        position = front_position(state.u)
        margin = state.u.grid.half_length - abs(position)
        if margin < self.widths * KERNEL_WIDTH:
            raise FrontDriftError(f"front at x={position:.3f} within {margin:.3f} of the boundary at t={state.t:.4f}")


class SnapshotWriter:
    """Collects (t, x, U) rows every ``every`` steps; ``write`` emits one columnar file."""

    def __init__(self, every: int, initial: Optional[PathState] = None):
        if every < 1:
            raise ValueError("snapshot period must be >= 1")
        self.every = every
        self._steps = 0
        self._frames: List[PathState] = [initial] if initial is not None else []

    def __call__(self, state: PathState, xi: GridFunction) -> None:
        self._steps += 1
        if self._steps % self.every == 0:
            self._frames.append(state)

    @property
    def frames(self) -> List[PathState]:
        return list(self._frames)

    def write(self, path: Path) -> Path:
        if not self._frames:
            raise ValueError("no snapshots recorded")
        x = coordinates(self._frames[0].u.grid)
        t = np.concatenate([np.full(x.size, frame.t) for frame in self._frames])
        xs = np.tile(x, len(self._frames))
        u = np.concatenate([frame.u.values for frame in self._frames])
        return write_columns(path, {"t": t, "x": xs, "u": u}, {"schema": SCHEMA_SNAPSHOT, "every": self.every})


def strong_error_estimate(
    cfg: SimConfig,
    sampler: NoiseSampler,
    initial: PathState,
    rng: np.random.Generator,
) -> float:
    """
    H1 distance at t_end between a run with step dt and one with dt/2 on the same Brownian path.

    The coarse increment is the sum of the two fine increments.
    """
    fine_cfg = cfg.model_copy(update={"dt": 0.5 * cfg.dt})
    coarse, fine = initial, initial
    for _ in range(step_count(cfg.t_end, cfg.dt)):
        first = sampler.sample_increment(fine_cfg.dt, rng)
        second = sampler.sample_increment(fine_cfg.dt, rng)
        fine = step_with_increment(step_with_increment(fine, fine_cfg, first), fine_cfg, second)
        coarse = step_with_increment(coarse, cfg, first + second)
    return float(np.sqrt(norm_h1_sq(coarse.u - fine.u)))


def sup_distance_to_translates(u: GridFunction, profile: GridFunction) -> float:
    """min over d of sup |u - profile(. - d)|, searched around the displacement of the level-1/2 crossing."""
    guess = front_position(u) - front_position(profile)

    def distance(d: float) -> float:
        return float(np.max(np.abs(u.values - shift(profile, -d).values)))

    result = minimize_scalar(distance, bounds=(guess - 0.5, guess + 0.5), method="bounded", options={"xatol": 1e-8})
    return min(float(result.fun), distance(guess))
