"""
probscale - Pydantic Models
Validated records shared by the services and the CLI.
"""
from typing import Callable, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import DEFAULT_DELTA, DEFAULT_EPSILON, LEMMA_CONSTANT, TRUNCATION_M


# ============================================================================
# Probability levels and sample specs
# ============================================================================

class ProbabilityLevels(BaseModel):
    """Accuracy epsilon and confidence delta, both strictly inside (0, 1)"""
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(gt=0.0, lt=1.0)
    delta: float = Field(gt=0.0, lt=1.0)


SpecRule = Literal["explicit-constant", "exact-binomial", "family", "max", "explicit", "manual"]


class SampleSpec(BaseModel):
    """Number of calibration samples N and discard rank r"""
    model_config = ConfigDict(frozen=True)

    n_samples: int = Field(ge=1)
    discard_rank: int = Field(ge=1)
    rule: SpecRule = "manual"
    levels: Optional[ProbabilityLevels] = None
    n_family: int = Field(default=1, ge=1)
    constant: Optional[float] = None

    @model_validator(mode="after")
    def _rank_within_samples(self):
        if self.discard_rank > self.n_samples:
            raise ValueError(
                f"discard_rank r={self.discard_rank} exceeds n_samples N={self.n_samples}"
            )
        return self


class BinomialQuery(BaseModel):
    """Arguments of B(k; n, p)"""
    model_config = ConfigDict(frozen=True)

    k: int = Field(ge=0)
    n: int = Field(ge=0)
    p: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _k_within_n(self):
        if self.k > self.n:
            raise ValueError(f"k={self.k} exceeds n={self.n}")
        return self


# ============================================================================
# Data
# ============================================================================

class Dataset(BaseModel):
    """Observations (x, y): X has shape (n, n_x), y has shape (n,).

    `source` records provenance (e.g. "synthetic:seed=3:stream=calibration"
    or "csv:/path/data.csv") so reports can refuse overlapping data.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    X: np.ndarray
    y: np.ndarray
    source: Optional[str] = None

    @field_validator("X", mode="before")
    @classmethod
    def _as_matrix(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError(f"X must be 1-D or 2-D, got shape {arr.shape}")
        return arr

    @field_validator("y", mode="before")
    @classmethod
    def _as_vector(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {arr.shape}")
        return arr

    @model_validator(mode="after")
    def _consistent(self):
        if self.y.shape[0] == 0:
            raise ValueError("dataset is empty")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite entries")
        return self

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    def subset(self, indices) -> "Dataset":
        """Rows at `indices`, provenance kept"""
        idx = np.asarray(indices)
        return Dataset(X=self.X[idx], y=self.y[idx], source=self.source)


# Batch handles: f(X (n, n_x)) -> (n,)
PredictorHandle = Callable[[np.ndarray], np.ndarray]
SigmaHandle = Callable[[np.ndarray], np.ndarray]


class FamilyMember(BaseModel):
    """One (T_j, sigma_j) pair of a finite family"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    predictor: Callable
    sigma: Callable
    label: str = ""


# ============================================================================
# Calibration results
# ============================================================================

class FixedBound(BaseModel):
    """Output of the fixed-size calibration: |y - T(x)| <= rho"""
    rho: float = Field(ge=0.0)
    spec: SampleSpec
    levels: Optional[ProbabilityLevels] = None


class ScaledBound(BaseModel):
    """Output of the conditioned calibration: |y - T(x)| <= gamma_bar * sigma(x)"""
    gamma_bar: float = Field(ge=0.0)
    spec: SampleSpec
    levels: Optional[ProbabilityLevels] = None


class FamilyCalibration(BaseModel):
    """Per-member scaling factors and the selected member"""
    gamma_bars: List[float]
    selected_index: int = Field(ge=0)
    criterion_values: List[float]
    spec: SampleSpec
    levels: ProbabilityLevels
    labels: List[str] = []

    @model_validator(mode="after")
    def _selection_consistent(self):
        n = len(self.gamma_bars)
        if n == 0 or len(self.criterion_values) != n:
            raise ValueError("gamma_bars and criterion_values must be nonempty and equally long")
        if any(g < 0 for g in self.gamma_bars):
            raise ValueError("gamma_bars must be nonnegative")
        if self.selected_index >= n:
            raise ValueError(f"selected_index {self.selected_index} out of range for {n} members")
        best = min(self.criterion_values)
        first_best = self.criterion_values.index(best)
        if self.selected_index != first_best:
            raise ValueError("selected_index must be the first minimizer of criterion_values")
        return self

    @property
    def selected_gamma_bar(self) -> float:
        return self.gamma_bars[self.selected_index]


class ViolationReport(BaseModel):
    """Empirical violation count of a bound on held-out data"""
    total: int = Field(ge=1)
    violations: int = Field(ge=0)
    ratio: float = Field(ge=0.0, le=1.0)
    mean_bound_width: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _ratio_exact(self):
        if self.violations > self.total:
            raise ValueError("violations exceed total")
        if self.ratio != self.violations / self.total:
            raise ValueError("ratio must equal violations / total")
        return self

    @classmethod
    def from_counts(cls, total: int, violations: int, mean_bound_width: float) -> "ViolationReport":
        return cls(
            total=total,
            violations=violations,
            ratio=violations / total,
            mean_bound_width=mean_bound_width,
        )


# ============================================================================
# Kernel pipeline
# ============================================================================

class KernelConfig(BaseModel):
    """k(a, b) = amplitude * exp(-||a - b||^2 / lengthscale_sq)"""
    model_config = ConfigDict(frozen=True)

    amplitude: float = Field(default=50.0, gt=0.0)
    lengthscale_sq: float = Field(default=0.2, gt=0.0)


WeightNorm = Literal["euclidean", "manhattan", "chebyshev"]


class WeightConfig(BaseModel):
    """Gamma(x, z) = exp(-lambda * ||x - z||)"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(default=1.0, gt=0.0, alias="lambda")
    norm: WeightNorm = "euclidean"


class PrimalConfig(BaseModel):
    """Explicit regressor phi and regularizer Sigma_theta (SPD)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    feature_map: Callable
    regularizer: np.ndarray

    @field_validator("regularizer", mode="before")
    @classmethod
    def _spd(cls, v):
        arr = np.atleast_2d(np.asarray(v, dtype=float))
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"regularizer must be square, got {arr.shape}")
        if not np.allclose(arr, arr.T):
            raise ValueError("regularizer must be symmetric")
        try:
            np.linalg.cholesky(arr)
        except np.linalg.LinAlgError:
            raise ValueError("regularizer must be positive definite")
        return arr

    @classmethod
    def ridge(cls, feature_map: Callable, n_theta: int, tau: float = 1.0) -> "PrimalConfig":
        """Sigma_theta = tau * I"""
        if tau <= 0:
            raise ValueError("tau must be positive")
        return cls(feature_map=feature_map, regularizer=tau * np.eye(n_theta))


class LocalFit(BaseModel):
    """Locally weighted fit at one query point.

    `neighbors` holds the training indices used when the fit was truncated;
    local_estimates then refer to those rows only.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    prediction: float
    local_estimates: np.ndarray
    query: np.ndarray
    neighbors: Optional[np.ndarray] = None


ResidualMode = Literal["local", "fixed-T"]


# ============================================================================
# Synthetic benchmark
# ============================================================================

class ExampleConfig(BaseModel):
    """y = (10 + n1) x + 10 sin(4x) + 5 + n2, x ~ U[x_low, x_high]"""
    model_config = ConfigDict(frozen=True)

    x_low: float = -2.5
    x_high: float = 2.5
    slope_noise_var: float = Field(default=7.0, gt=0.0)
    additive_noise_var: float = Field(default=3.0, gt=0.0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _interval(self):
        if not self.x_low < self.x_high:
            raise ValueError("x_low must be smaller than x_high")
        return self


class CoverageConfig(BaseModel):
    """Monte-Carlo check of the 1 - delta guarantee"""
    repetitions: int = Field(default=200, ge=1)
    levels: ProbabilityLevels
    validation_size: int = Field(default=10_000, ge=1000)
    constant: float = LEMMA_CONSTANT
    spec: Optional[SampleSpec] = None
    conditioned: bool = False
    example: ExampleConfig = ExampleConfig()


class CoverageReport(BaseModel):
    """Outcome of repeated independent calibrations"""
    failure_fraction: float = Field(ge=0.0, le=1.0)
    failures: int
    repetitions: int
    violation_ratios: List[float]
    calibrated_values: List[float]
    margin: float
    threshold: float
    n_samples: int
    discard_rank: int
    conditioned: bool


# ============================================================================
# Experiment config (JSON file for the CLI)
# ============================================================================

class TruncationConfig(BaseModel):
    """Cap m on the per-query neighborhood; None keeps every point above the weight tolerance"""
    m: Optional[int] = Field(default=TRUNCATION_M, ge=1)


class ExperimentConfig(BaseModel):
    """Keys accepted by `--config`; CLI flags override them"""
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    epsilon: float = Field(default=DEFAULT_EPSILON, gt=0.0, lt=1.0)
    delta: float = Field(default=DEFAULT_DELTA, gt=0.0, lt=1.0)
    constant: Union[Literal["rounded", "exact"], float] = "rounded"
    seed: int = Field(default=0, ge=0)
    data: Optional[str] = None
    train_data: Optional[str] = None
    training_size: int = Field(default=2065, ge=1)
    kernel: KernelConfig = KernelConfig()
    weight: WeightConfig = WeightConfig()
    truncation: TruncationConfig = TruncationConfig()
    residual_mode: ResidualMode = "local"
    lambdas: List[float] = [float(k) for k in range(1, 11)]
    output: Optional[str] = None

    @property
    def levels(self) -> ProbabilityLevels:
        return ProbabilityLevels(epsilon=self.epsilon, delta=self.delta)
