"""Uniform-grid function algebra on [-L, L].

Every other module works with :class:`GridFunction`. Inner products use the
trapezoid rule, derivatives are second-order finite differences and the
Gaussian convolution carries the physical ``dx`` weight.
"""
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import ndimage, signal

from core.errors import GridMismatchError, ShiftRangeError
from schemas.config import GridSpec

Kernel = Callable[[np.ndarray], np.ndarray]


def gaussian_kernel(r: np.ndarray) -> np.ndarray:
    """Noise covariance kernel q(r) = exp(-r^2)."""
    return np.exp(-np.square(r))


def coordinates(grid: GridSpec) -> np.ndarray:
    return np.linspace(-grid.half_length, grid.half_length, grid.points)


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    weights = np.full(grid.points, grid.spacing)
    weights[0] = weights[-1] = 0.5 * grid.spacing
    return weights


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.points,):
            raise ValueError(f"expected {self.grid.points} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: GridSpec, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(grid, fn(coordinates(grid)))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "GridFunction":
        return cls(grid, np.zeros(grid.points))

    @classmethod
    def constant(cls, grid: GridSpec, value: float) -> "GridFunction":
        return cls(grid, np.full(grid.points, float(value)))

    @property
    def x(self) -> np.ndarray:
        return coordinates(self.grid)

    def _other_values(self, other: Union["GridFunction", float]) -> Union[np.ndarray, float]:
        if isinstance(other, GridFunction):
            check_same_grid(self, other)
            return other.values
        return float(other)

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._other_values(other))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._other_values(other))

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._other_values(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


def check_same_grid(u: GridFunction, v: GridFunction) -> None:
    if u.grid != v.grid:
        raise GridMismatchError(f"grid mismatch: {u.grid} vs {v.grid}")


# ---------------- Quadrature ---------------- #

def inner_l2(u: GridFunction, v: GridFunction) -> float:
    check_same_grid(u, v)
    return float(np.dot(trapezoid_weights(u.grid), u.values * v.values))


def norm_l2_sq(u: GridFunction) -> float:
    return inner_l2(u, u)


def norm_l2(u: GridFunction) -> float:
    return float(np.sqrt(norm_l2_sq(u)))


def norm_h1_sq(u: GridFunction) -> float:
    return norm_l2_sq(u) + norm_l2_sq(derivative(u))


def norm_h1(u: GridFunction) -> float:
    return float(np.sqrt(norm_h1_sq(u)))


# ---------------- Differences ---------------- #

def derivative_values(values: np.ndarray, dx: float) -> np.ndarray:
    return np.gradient(values, dx, edge_order=2, axis=-1)


def second_derivative_values(values: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(values)
    out[..., 1:-1] = (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / dx**2
    out[..., 0] = (2.0 * values[..., 0] - 5.0 * values[..., 1] + 4.0 * values[..., 2] - values[..., 3]) / dx**2
    out[..., -1] = (2.0 * values[..., -1] - 5.0 * values[..., -2] + 4.0 * values[..., -3] - values[..., -4]) / dx**2
    return out


def derivative(u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, derivative_values(u.values, u.grid.spacing))


def second_derivative(u: GridFunction) -> GridFunction:
    return GridFunction(u.grid, second_derivative_values(u.values, u.grid.spacing))


# ---------------- Translation ---------------- #

def shift_values(values: np.ndarray, delta: float, grid: GridSpec) -> np.ndarray:
    if abs(delta) >= 0.5 * grid.half_length:
        raise ShiftRangeError(f"shift {delta:.4f} exceeds half the half-length {0.5 * grid.half_length:.4f}")
    if delta == 0.0:
        return np.array(values, dtype=float)
    return ndimage.shift(values, -delta / grid.spacing, order=3, mode="nearest")


def shift(u: GridFunction, delta: float) -> GridFunction:
    """Return x -> u(x + delta); nodes pushed past an end take the end value."""
    return GridFunction(u.grid, shift_values(u.values, delta, u.grid))


# ---------------- Convolution ---------------- #

def _kernel_samples(grid: GridSpec, kernel: Kernel) -> np.ndarray:
    offsets = np.arange(-(grid.points - 1), grid.points) * grid.spacing
    return kernel(offsets)


def convolve_kernel_values(values: np.ndarray, grid: GridSpec, kernel: Kernel = gaussian_kernel) -> np.ndarray:
    n = grid.points
    full = signal.fftconvolve(values, _kernel_samples(grid, kernel), mode="full")
    return full[n - 1 : 2 * n - 1] * grid.spacing


def convolve_gaussian(u: GridFunction, kernel: Kernel = gaussian_kernel) -> GridFunction:
    """[Qu](x_i) = sum_j q(x_i - x_j) u_j dx."""
    return GridFunction(u.grid, convolve_kernel_values(u.values, u.grid, kernel))


def convolution_matrix(grid: GridSpec, kernel: Kernel = gaussian_kernel) -> np.ndarray:
    x = coordinates(grid)
    return kernel(np.subtract.outer(x, x)) * grid.spacing


def convolve_gaussian_direct(u: GridFunction, kernel: Kernel = gaussian_kernel) -> GridFunction:
    return GridFunction(u.grid, convolution_matrix(u.grid, kernel) @ u.values)
