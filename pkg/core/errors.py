"""Exception hierarchy for the simulator.

Service code raises these; ``main.py`` is the only place that turns them into
process exit codes.
"""
from typing import Sequence


class NagumoError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(NagumoError, ValueError):
    """Configuration failed validation before any computation started."""


class NumericalError(NagumoError, RuntimeError):
    """A numerical procedure failed."""


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual_history: Sequence[float] = ()):
        self.residual_history = tuple(float(r) for r in residual_history)
        if self.residual_history:
            message = f"{message} (final residual {self.residual_history[-1]:.3e})"
        super().__init__(message)


class SpectralError(NumericalError):
    """The discretized linearization has no usable spectral gap."""


class CovarianceEmbeddingError(NumericalError):
    """Circulant embedding lost too much covariance mass to clipping."""


class BlowUpError(NumericalError):
    """A time step produced non-finite values."""


class QuadratureError(NumericalError):
    """Adaptive quadrature did not converge."""


class GridMismatchError(NagumoError, ValueError):
    """Two grid functions live on different grids."""


class ShiftRangeError(NagumoError, ValueError):
    """Requested translation is too large for the truncated domain."""


class NonMonotoneMetricError(NagumoError, ValueError):
    """The covering sweep requires d(s, t) to be non-decreasing in t >= s."""


class WaveLostError(NumericalError):
    """The phase pairing <d_x U, psi_tw(. - gamma)> fell below the guard."""

    def __init__(self, pairing: float, threshold: float, t: float | None = None):
        self.pairing = pairing
        self.threshold = threshold
        self.t = t
        where = "" if t is None else f" at t={t:.4f}"
        super().__init__(f"wave lost{where}: pairing {pairing:.3e} below guard {threshold:.3e}")


class FrontDriftError(NumericalError):
    """The tracked front came too close to the truncation boundary."""


class PartialEnsembleError(NagumoError):
    """Some ensemble paths failed; results were still written."""

    def __init__(self, failed: int, total: int):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} paths failed")


class ScalingFitError(NagumoError, ValueError):
    """Too few non-degenerate exit probabilities for the scaling regression."""
