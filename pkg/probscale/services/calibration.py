"""
Calibration Service - Probabilistic scaling of prediction errors

- calibrate_fixed:       rho = r-th largest |y_i - T(x_i)|
- calibrate_conditioned: gamma_bar = r-th largest |y_i - T(x_i)| / sigma(x_i)
- calibrate_family:      one gamma_bar per (T_j, sigma_j) on a shared sample,
                         spec validated against delta / n_F, best member selected
- markov_bound / gaussian_quantile_bound: baselines for a known sigma(x)
- evaluate_violation:    empirical violation ratio on held-out data

The calibration sample must be i.i.d. and disjoint from the data used to
build the predictor. The library cannot check provenance; the CLI does.
"""
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from ..errors import ContractError, DomainError, EvaluationError
from ..models import (
    Dataset,
    FamilyCalibration,
    FamilyMember,
    FixedBound,
    PredictorHandle,
    ProbabilityLevels,
    SampleSpec,
    ScaledBound,
    SigmaHandle,
    ViolationReport,
)
from .order_statistics import generalized_max
from .sample_complexity import validate_spec

BoundHandle = Callable[[np.ndarray], np.ndarray]


# ============================================================================
# Handle evaluation
# ============================================================================

def evaluate_predictor(predictor: PredictorHandle, X: np.ndarray) -> np.ndarray:
    """T(X) as a finite (n,) vector"""
    values = np.asarray(predictor(X), dtype=float).reshape(-1)
    if values.shape[0] != X.shape[0]:
        raise EvaluationError(f"predictor returned {values.shape[0]} values for {X.shape[0]} inputs")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise EvaluationError("predictor returned a non-finite value", index=int(bad[0]))
    return values


def evaluate_sigma(sigma: SigmaHandle, X: np.ndarray) -> np.ndarray:
    """sigma(X) as a strictly positive finite (n,) vector"""
    values = np.asarray(sigma(X), dtype=float).reshape(-1)
    if values.shape[0] != X.shape[0]:
        raise EvaluationError(f"sigma returned {values.shape[0]} values for {X.shape[0]} inputs")
    bad = np.flatnonzero(~(np.isfinite(values) & (values > 0)))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"sigma must be positive and finite, got {values[i]!r}", index=i)
    return values


def absolute_residuals(predictor: PredictorHandle, data: Dataset) -> np.ndarray:
    """q_i = |y_i - T(x_i)|"""
    return np.abs(data.y - evaluate_predictor(predictor, data.X))


def _check_size(data: Dataset, spec: SampleSpec) -> None:
    if len(data) != spec.n_samples:
        raise ContractError(
            f"calibration data has {len(data)} observations but the spec requires N={spec.n_samples}"
        )


def _levels_of(spec: SampleSpec, levels: Optional[ProbabilityLevels]) -> Optional[ProbabilityLevels]:
    return levels if levels is not None else spec.levels


# ============================================================================
# Calibration
# ============================================================================

def calibrate_fixed(
    predictor: PredictorHandle,
    data: Dataset,
    spec: SampleSpec,
    levels: Optional[ProbabilityLevels] = None
) -> FixedBound:
    """Fixed-size bound: rho = r-th largest absolute residual.

    Args:
        predictor: Batch predictor T
        data: Exactly spec.n_samples i.i.d. observations, disjoint from training data
        spec: (N, r)
        levels: Levels for the report (defaults to spec.levels)

    Returns:
        FixedBound with Pr{|y - T(x)| > rho} <= eps, with confidence 1 - delta

    Raises:
        ContractError: len(data) != N
        EvaluationError: non-finite residual
    """
    _check_size(data, spec)
    rho = generalized_max(absolute_residuals(predictor, data), spec.discard_rank)
    return FixedBound(rho=rho, spec=spec, levels=_levels_of(spec, levels))


def calibrate_conditioned(
    predictor: PredictorHandle,
    sigma: SigmaHandle,
    data: Dataset,
    spec: SampleSpec,
    levels: Optional[ProbabilityLevels] = None
) -> ScaledBound:
    """Conditioned bound: gamma_bar = r-th largest |y_i - T(x_i)| / sigma(x_i).

    The per-query bound is gamma_bar * sigma(x). Multiplying sigma by xi > 0
    divides gamma_bar by exactly xi and leaves the bound unchanged.

    Raises:
        ContractError: len(data) != N
        EvaluationError: sigma(x_i) <= 0, naming index i
    """
    _check_size(data, spec)
    scores = absolute_residuals(predictor, data) / evaluate_sigma(sigma, data.X)
    gamma_bar = generalized_max(scores, spec.discard_rank)
    return ScaledBound(gamma_bar=gamma_bar, spec=spec, levels=_levels_of(spec, levels))


def _as_member(entry: Union[FamilyMember, Tuple[Callable, Callable]], index: int) -> FamilyMember:
    if isinstance(entry, FamilyMember):
        return entry
    predictor, sigma = entry
    return FamilyMember(predictor=predictor, sigma=sigma, label=f"member-{index}")


def calibrate_family(
    family: Sequence[Union[FamilyMember, Tuple[Callable, Callable]]],
    data: Dataset,
    levels: ProbabilityLevels,
    spec: SampleSpec,
    selection_data: Optional[Dataset] = None
) -> FamilyCalibration:
    """Calibrate every member on one shared sample and pick the sharpest.

    gamma_bars[j] is the conditioned calibration of member j. The selection
    criterion sum_i gamma_bars[j] * sigma_j(x_i) runs over the calibration
    inputs, or over `selection_data` inputs when given. Ties go to the
    smallest index. The guarantee holds for every member simultaneously, so
    selection does not weaken it.

    Raises:
        ContractError: spec fails B(r-1; N, eps) <= delta / n_F, or len(data) != N
        DomainError: empty family
    """
    members = [_as_member(entry, j) for j, entry in enumerate(family)]
    n_family = len(members)
    if n_family == 0:
        raise DomainError("family is empty")
    if not validate_spec(spec, levels, n_family):
        raise ContractError(
            f"spec N={spec.n_samples}, r={spec.discard_rank} does not satisfy "
            f"B(r-1; N, eps) <= delta/{n_family}; the family guarantee would be void"
        )
    _check_size(data, spec)

    selection_X = selection_data.X if selection_data is not None else data.X
    gamma_bars: List[float] = []
    criterion_values: List[float] = []
    for member in members:
        scaled = calibrate_conditioned(member.predictor, member.sigma, data, spec, levels)
        sigma_sel = evaluate_sigma(member.sigma, selection_X)
        gamma_bars.append(scaled.gamma_bar)
        criterion_values.append(float(np.sum(scaled.gamma_bar * sigma_sel)))

    # np.argmin returns the first minimizer
    selected = int(np.argmin(np.asarray(criterion_values)))
    return FamilyCalibration(
        gamma_bars=gamma_bars,
        selected_index=selected,
        criterion_values=criterion_values,
        spec=spec,
        levels=levels,
        labels=[m.label for m in members],
    )


# ============================================================================
# Baseline bounds (sigma known)
# ============================================================================

def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")


def markov_bound(sigma_value: float, epsilon: float) -> float:
    """sigma / sqrt(eps): Markov on (y - T(x))^2 gives Pr{|y-T(x)| >= bound} <= eps"""
    _check_epsilon(epsilon)
    return sigma_value / math.sqrt(epsilon)


def gaussian_quantile(epsilon: float) -> float:
    """gamma_eps with Pr{|Z| > gamma_eps} = eps for Z ~ N(0, 1); 1.959964 at 0.05"""
    _check_epsilon(epsilon)
    return float(norm.isf(epsilon / 2.0))


def gaussian_quantile_bound(sigma_value: float, epsilon: float) -> float:
    """gamma_eps * sigma, the sharp bound for Gaussian errors"""
    return gaussian_quantile(epsilon) * sigma_value


# ============================================================================
# Bound handles and violation measurement
# ============================================================================

def fixed_bound_fn(rho: float) -> BoundHandle:
    """x -> rho"""
    return lambda X: np.full(np.asarray(X).shape[0], float(rho))


def scaled_bound_fn(gamma_bar: float, sigma: SigmaHandle) -> BoundHandle:
    """x -> gamma_bar * sigma(x)"""
    return lambda X: float(gamma_bar) * evaluate_sigma(sigma, np.asarray(X))


def evaluate_violation(bound: BoundHandle, predictor: PredictorHandle, data: Dataset) -> ViolationReport:
    """Count observations with |y - T(x)| > bound(x).

    Strict inequality: a residual exactly on the bound is covered.
    mean_bound_width is the mean half-width bound(x); +inf bounds report inf.
    """
    widths = np.asarray(bound(data.X), dtype=float).reshape(-1)
    if widths.shape[0] != len(data):
        raise EvaluationError(f"bound returned {widths.shape[0]} values for {len(data)} inputs")
    if np.any(np.isnan(widths)) or np.any(widths < 0):
        raise EvaluationError("bound must be nonnegative", index=int(np.flatnonzero(~(widths >= 0))[0]))
    residuals = absolute_residuals(predictor, data)
    violations = int(np.count_nonzero(residuals > widths))
    return ViolationReport.from_counts(
        total=len(data),
        violations=violations,
        mean_bound_width=float(np.mean(widths)),
    )
