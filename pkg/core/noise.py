"""Q-Wiener increments with covariance kernel exp(-(x - y)^2) by circulant embedding.

Normalization: E[xi(x_i) xi(x_j)] = dt q(x_i - x_j), so the pointwise variance per unit
time is q(0) = 1. Applying Q to a grid function carries the physical dx weight
(see ``core.grid.convolve_gaussian``); the trace used in Hilbert-Schmidt norms follows
the same convention, i.e. sum_x h(x)^2 q(0) dx.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from core.errors import CovarianceEmbeddingError, GridMismatchError
from core.grid import GridFunction, Kernel, convolve_gaussian, gaussian_kernel, inner_l2, norm_l2_sq
from schemas.config import GridSpec

logger = logging.getLogger(__name__)

CLIPPED_MASS_LIMIT = 1e-8


@dataclass(frozen=True, eq=False)
class NoiseSampler:
    grid: GridSpec
    spectral_factor: np.ndarray
    pad_factor: int
    clipped_mass: float
    kernel: Kernel = field(default=gaussian_kernel)

    @property
    def embedding_size(self) -> int:
        return self.pad_factor * self.grid.points

    def sample_batch(self, dt: float, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Raw increment values, shape (n,) or (size, n)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        m = self.embedding_size
        shape = (m,) if size is None else (size, m)
        normals = rng.standard_normal(shape)
        field_values = np.fft.irfft(self.spectral_factor * np.fft.rfft(normals, axis=-1), n=m, axis=-1)
        return np.sqrt(dt) * field_values[..., : self.grid.points]

    def sample_increment(self, dt: float, rng: np.random.Generator) -> GridFunction:
        return GridFunction(self.grid, self.sample_batch(dt, rng))


def build_sampler(grid: GridSpec, pad_factor: int = 2, kernel: Kernel = gaussian_kernel) -> NoiseSampler:
    """
    Embed the kernel on a periodic grid of pad_factor * n points and factor its spectrum.

    Negative eigenvalues of the embedding are clipped to zero; their share of the total
    spectral mass is reported and must stay below ``CLIPPED_MASS_LIMIT``.
    """
    if pad_factor < 2:
        raise ValueError("pad_factor must be >= 2")
    m = pad_factor * grid.points
    k = np.arange(m)
    wrapped = np.minimum(k, m - k) * grid.spacing
    eigenvalues = np.fft.fft(kernel(wrapped)).real
    negative = eigenvalues < 0.0
    clipped_mass = float(-eigenvalues[negative].sum() / np.abs(eigenvalues).sum())
    if clipped_mass > CLIPPED_MASS_LIMIT:
        raise CovarianceEmbeddingError(
            f"circulant embedding clipped {clipped_mass:.2e} of the spectral mass; increase pad_factor or L"
        )
    if negative.any():
        logger.warning("clipped %d negative embedding eigenvalues (mass %.2e)", int(negative.sum()), clipped_mass)
    factor = np.sqrt(np.clip(eigenvalues[: m // 2 + 1], 0.0, None))
    return NoiseSampler(grid=grid, spectral_factor=factor, pad_factor=pad_factor, clipped_mass=clipped_mass, kernel=kernel)


def sample_increment(s: NoiseSampler, dt: float, rng: np.random.Generator) -> GridFunction:
    return s.sample_increment(dt, rng)


def hs_norm_sq_of_multiplier(h: GridFunction, s: NoiseSampler, psi: Optional[GridFunction] = None) -> float:
    """
    Squared Hilbert-Schmidt norm of noise maps built from the multiplier h.

    Without ``psi``: w -> h w composed with sqrt(Q), trace sum_x h^2 q(0) dx.
    With ``psi``: the rank-one functional w -> <h w, psi>, value <h Q(h psi), psi>.
    """
    if h.grid != s.grid:
        raise GridMismatchError("multiplier and sampler live on different grids")
    if psi is None:
        return float(s.kernel(np.zeros(1))[0]) * norm_l2_sq(h)
    weighted = h * psi
    return inner_l2(h * convolve_gaussian(weighted, s.kernel), psi)
