import logging
import math
from typing import List, Literal, Optional, Tuple

from pydantic import Field, field_validator, model_validator

from schemas.common import ConfigBase

logger = logging.getLogger(__name__)


class NagumoParams(ConfigBase):
    """Coefficients of dU = [rho U_xx + f(U)] dt + sigma g(U) dW^Q."""
    rho: float = Field(1.0, gt=0, description="Diffusion coefficient.")
    a: float = Field(0.25, gt=0, lt=1, description="Detuning of the bistable cubic u(1-u)(u-a).")
    sigma: float = Field(0.0, ge=0, description="Noise intensity.")
    chi_plateau: Tuple[float, float] = Field((-1.0, 2.0), description="Interval where the cut-off equals 1.")
    chi_support: Tuple[float, float] = Field((-2.0, 3.0), description="Interval outside which the cut-off vanishes.")

    @model_validator(mode="after")
    def check_cutoff(self):
        lo, hi = self.chi_plateau
        s_lo, s_hi = self.chi_support
        if not (math.isfinite(s_lo) and math.isfinite(s_hi)):
            raise ValueError("chi_support must be bounded")
        if not (s_lo < lo < hi < s_hi):
            raise ValueError("chi_plateau must lie strictly inside chi_support")
        return self

    def with_sigma(self, sigma: float) -> "NagumoParams":
        return self.model_copy(update={"sigma": sigma})


class GridSpec(ConfigBase):
    half_length: float = Field(20.0, gt=0, description="Domain is [-L, L].")
    points: int = Field(512, ge=16, description="Number of grid nodes, boundaries included.")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_length / (self.points - 1)


class SimConfig(ConfigBase):
    params: NagumoParams = Field(default_factory=NagumoParams)
    grid: GridSpec = Field(default_factory=GridSpec)
    dt: float = Field(0.005, gt=0)
    t_end: float = Field(10.0, ge=0)
    seed: int = Field(0, ge=0, lt=2**64, description="Seed of the single-path random stream.")
    scheme: Literal["semi-implicit"] = "semi-implicit"

    @model_validator(mode="after")
    def warn_coarse_step(self):
        if self.dt > self.grid.spacing:
            logger.warning("dt=%g exceeds dx=%g; accuracy guideline dt <= dx breached", self.dt, self.grid.spacing)
        return self


class ExitConfig(ConfigBase):
    eta: float = Field(0.01, gt=0, description="Exit threshold on N(t).")
    epsilon: Optional[float] = Field(None, gt=0, description="Discount rate; defaults to beta/2 once beta is known.")
    sigma_list: List[float] = Field(default_factory=lambda: [0.08, 0.10, 0.12, 0.14])
    t_horizon: float = Field(20.0, ge=2)
    n_paths: int = Field(400, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**63)
    eta_guard: float = Field(0.1, gt=0, description="Upper bound admitted for eta.")
    initial: Literal["exact_wave", "perturbed_wave"] = "exact_wave"
    amplitude: float = 0.0
    mode: int = Field(1, ge=1)
    pad_factor: int = Field(2, ge=2)
    sim: SimConfig = Field(default_factory=SimConfig)

    @field_validator("sigma_list")
    @classmethod
    def check_sigmas(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("sigma_list must not be empty")
        if any(s < 0 for s in value):
            raise ValueError("sigma values must be non-negative")
        return value

    @model_validator(mode="after")
    def check_eta(self):
        if self.eta >= self.eta_guard:
            raise ValueError(f"eta={self.eta} must stay below the guard {self.eta_guard}")
        return self


class GrowthExperimentConfig(ConfigBase):
    horizons: List[float] = Field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])
    dt: float = Field(0.1, gt=0)
    n_paths: int = Field(2000, ge=100)
    seed: int = Field(0, ge=0, lt=2**63)
    process: Literal["scalar_ou", "semigroup_convolution"] = "scalar_ou"
    chunk_size: int = Field(100, ge=1, description="Paths per independently seeded chunk.")
    params: NagumoParams = Field(default_factory=NagumoParams)
    grid: GridSpec = Field(default_factory=lambda: GridSpec(half_length=20.0, points=256))
    pad_factor: int = Field(2, ge=2)

    @field_validator("horizons")
    @classmethod
    def check_horizons(cls, value: List[float]) -> List[float]:
        if len(set(value)) < 3:
            raise ValueError("at least 3 distinct horizons are needed for the growth fit")
        if any(t2 <= t1 for t1, t2 in zip(value, value[1:])):
            raise ValueError("horizons must be strictly increasing")
        if value[0] < 2:
            raise ValueError("every horizon must be >= 2")
        return value


# ---------------- CLI run configurations ---------------- #

class WaveRunConfig(ConfigBase):
    params: NagumoParams = Field(default_factory=NagumoParams)
    grid: GridSpec = Field(default_factory=GridSpec)
    sigmas: List[float] = Field(default_factory=list, description="Noise levels for stochastic waves.")
    sigma_max: float = Field(0.5, gt=0)
    extrapolate: bool = Field(False, description="Also report the Richardson-extrapolated speed.")

    @model_validator(mode="after")
    def check_sigmas(self):
        for s in self.sigmas:
            if s < 0 or s > self.sigma_max:
                raise ValueError(f"sigma={s} outside [0, {self.sigma_max}]")
        return self


class SimulateRunConfig(ConfigBase):
    sim: SimConfig = Field(default_factory=SimConfig)
    initial: Literal["exact_wave", "perturbed_wave"] = "exact_wave"
    amplitude: float = 0.0
    mode: int = Field(1, ge=1)
    epsilon: Optional[float] = Field(None, gt=0)
    pad_factor: int = Field(2, ge=2)
    snapshot_every: int = Field(0, ge=0, description="Snapshot period in steps; 0 disables snapshots.")


class ChainingRunConfig(ConfigBase):
    growth: GrowthExperimentConfig = Field(default_factory=GrowthExperimentConfig)
    metric_horizons: List[float] = Field(default_factory=lambda: [2.0, 10.0, 100.0, 1000.0])
    metric_nus: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0])

    @field_validator("metric_horizons")
    @classmethod
    def check_metric_horizons(cls, value: List[float]) -> List[float]:
        if any(t < 1 for t in value):
            raise ValueError("metric horizons must be >= 1")
        return value

    @field_validator("metric_horizons", "metric_nus")
    @classmethod
    def check_positive(cls, value: List[float]) -> List[float]:
        if not value or any(v <= 0 for v in value):
            raise ValueError("entries must be positive")
        return value
