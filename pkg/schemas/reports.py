from typing import Any, Dict, List, Optional, Tuple

from pydantic import Field, model_validator

from schemas.common import (
    SCHEMA_EXIT,
    SCHEMA_FIT,
    SCHEMA_GROWTH,
    SCHEMA_MANIFEST,
    SCHEMA_METRIC,
    SCHEMA_WAVE,
    ConfigBase,
    ReportBase,
)


class PathOutcome(ConfigBase):
    """Result of one tracked Monte Carlo path."""
    path_index: int
    sigma: float
    exited: bool = False
    exit_time: Optional[float] = None
    wave_lost: bool = False
    left_domain: bool = Field(False, description="Phase or front reached the edge of the computational domain.")
    error: Optional[str] = Field(None, description="Numerical failure message; the path is excluded from counts.")
    final_n: float = 0.0
    max_n: float = 0.0
    steps: int = 0


class SigmaExitRecord(ConfigBase):
    sigma: float
    path_count: int = Field(..., ge=0, description="Paths that completed without numerical failure.")
    exit_count: int = Field(..., ge=0)
    wave_lost_count: int = Field(0, ge=0)
    failed_count: int = Field(0, ge=0)
    left_domain_count: int = Field(0, ge=0, description="Failed paths whose phase or front left the domain.")
    p_hat: Optional[float] = Field(..., ge=0, le=1, description="None when no path completed.")
    wilson_interval: Tuple[float, float]
    exit_times: List[float] = Field(default_factory=list, description="Sorted observed exit times.")
    exit_time_quantiles: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_counts(self):
        if self.exit_count > self.path_count:
            raise ValueError("exit_count cannot exceed path_count")
        if self.left_domain_count > self.failed_count:
            raise ValueError("left_domain_count cannot exceed failed_count")
        return self


class ExitResult(ReportBase):
    schema_tag: str = SCHEMA_EXIT
    eta: float
    epsilon: float
    t_horizon: float
    master_seed: int
    n_paths: int
    records: List[SigmaExitRecord]

    @model_validator(mode="after")
    def check_times(self):
        for record in self.records:
            if any(t > self.t_horizon for t in record.exit_times):
                raise ValueError("exit times must not exceed the horizon")
        return self


class ScalingFitReport(ReportBase):
    schema_tag: str = SCHEMA_FIT
    eta: float
    t_horizon: float
    slope: float = Field(..., description="Fitted rate kappa in -ln p = kappa x + intercept.")
    intercept: float
    r_squared: float
    sigmas_used: List[float]
    x_values: List[float]
    neg_log_p: List[float]
    excluded: List[str] = Field(default_factory=list, description="Notes on sigma values left out of the fit.")
    monotone_in_sigma: bool
    bound_consistent: Dict[str, bool] = Field(default_factory=dict)


class SweepPoint(ConfigBase):
    sigma: float
    speed: float
    profile_h1_distance: float
    speed_distance: float
    residual: float
    iterations: int


class WaveReport(ReportBase):
    schema_tag: str = SCHEMA_WAVE
    params: Dict[str, Any]
    grid: Dict[str, Any]
    speed: float
    residual: float
    iterations: int
    residual_history: List[float]
    speed_extrapolated: Optional[float] = Field(None, description="Richardson combination of the dx and dx/2 solves.")
    beta: float
    neutral_eigenvalue: float
    second_eigenvalue: float
    psi_normalization: float
    adjoint_residual: float
    sweep: List[SweepPoint] = Field(default_factory=list)
    profile_slope: Optional[float] = None
    speed_slope: Optional[float] = None


class FitSummary(ConfigBase):
    slope: float
    intercept: float
    r_squared: float
    aic: float


class GrowthReport(ReportBase):
    schema_tag: str = SCHEMA_GROWTH
    process: str
    horizons: List[float]
    n_paths: int
    dt: float
    seed: int
    mean_sup: List[float]
    stderr_sup: List[float]
    log_fit: FitSummary
    linear_fit: FitSummary
    preferred: str = Field(..., description="'log' or 'linear', whichever has the lower AIC.")


class CoveringRow(ConfigBase):
    horizon: float
    nu: float
    covering_number: int
    upper_bound: float


class DudleyRow(ConfigBase):
    horizon: float
    d_max: float
    ou_integral: float
    holder_integral: float
    holder_closed_form: float


class MetricReport(ReportBase):
    schema_tag: str = SCHEMA_METRIC
    coverings: List[CoveringRow]
    dudley: List[DudleyRow]


class OutputFile(ConfigBase):
    path: str
    sha256: str


class RunManifest(ReportBase):
    schema_tag: str = SCHEMA_MANIFEST
    subcommand: str
    config: Dict[str, Any]
    master_seed: Optional[int] = None
    version: str
    workers: int
    outputs: List[OutputFile] = Field(default_factory=list)
    wall_clock_seconds: float
