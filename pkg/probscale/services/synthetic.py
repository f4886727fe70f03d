"""
Synthetic Benchmark - Running example and coverage experiment

    y = (10 + n1) x + 10 sin(4x) + 5 + n2,   x ~ U[-2.5, 2.5],
    n1 ~ N(0, 7), n2 ~ N(0, 3)

Given x, y - T(x) is N(0, 7x^2 + 3) for the oracle T(x) = 10x + 10 sin(4x) + 5,
so the exact bound at level eps is gamma_eps * sqrt(7x^2 + 3).

Random streams: numpy Generator(Philox) keyed by SeedSequence(seed, spawn_key=(stream_id,)).
Named streams training=0, calibration=1, validation=2; coverage repetition k
uses ids 100 + 2k (calibration) and 101 + 2k (validation). Distinct ids give
independent, non-overlapping streams. Gaussian draws go through the inverse
normal CDF so every stream consumes a fixed number of uniforms per sample.
"""
import math
from typing import Union

import numpy as np
from scipy.special import ndtri

from ..models import CoverageConfig, CoverageReport, Dataset, ExampleConfig
from .calibration import (
    BoundHandle,
    calibrate_conditioned,
    calibrate_fixed,
    evaluate_violation,
    fixed_bound_fn,
    gaussian_quantile,
    gaussian_quantile_bound,
    scaled_bound_fn,
)
from .sample_complexity import min_samples_lemma

STREAM_IDS = {"training": 0, "calibration": 1, "validation": 2}
COVERAGE_STREAM_BASE = 100

Stream = Union[str, int]

_DEFAULT_EXAMPLE = ExampleConfig()


def stream_id(stream: Stream) -> int:
    if isinstance(stream, str):
        if stream not in STREAM_IDS:
            raise ValueError(f"unknown stream {stream!r}; expected one of {sorted(STREAM_IDS)}")
        return STREAM_IDS[stream]
    return int(stream)


def make_rng(seed: int, stream: Stream) -> np.random.Generator:
    """Philox generator for one (seed, stream) pair"""
    sequence = np.random.SeedSequence(seed, spawn_key=(stream_id(stream),))
    return np.random.Generator(np.random.Philox(sequence))


def open_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniforms in the open interval (0, 1) on a 2^-53 grid"""
    return (rng.integers(0, 2 ** 53, size=size, dtype=np.int64) + 0.5) / 2.0 ** 53


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """N(0, 1) draws by inverse CDF"""
    return ndtri(open_uniform(rng, size))


def generative_model(x, n1, n2):
    """y = (10 + n1) x + 10 sin(4x) + 5 + n2"""
    return (10.0 + n1) * x + 10.0 * np.sin(4.0 * x) + 5.0 + n2


def sample_example(count: int, cfg: ExampleConfig = _DEFAULT_EXAMPLE, stream: Stream = "calibration") -> Dataset:
    """count i.i.d. draws of (x, y) from one named stream.

    Draw order within a stream: count uniforms for x, then count for n1,
    then count for n2.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = make_rng(cfg.seed, stream)
    x = cfg.x_low + (cfg.x_high - cfg.x_low) * open_uniform(rng, count)
    n1 = math.sqrt(cfg.slope_noise_var) * standard_normal(rng, count)
    n2 = math.sqrt(cfg.additive_noise_var) * standard_normal(rng, count)
    return Dataset(
        X=x.reshape(-1, 1),
        y=generative_model(x, n1, n2),
        source=f"synthetic:seed={cfg.seed}:stream={stream}",
    )


def _first_column(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X.reshape(X.shape[0], -1)[:, 0] if X.ndim > 1 else X


def oracle_predictor():
    """T(x) = 10x + 10 sin(4x) + 5 as a batch handle"""
    def predictor(X):
        x = _first_column(X)
        return 10.0 * x + 10.0 * np.sin(4.0 * x) + 5.0
    return predictor


def exact_sigma(x, cfg: ExampleConfig = _DEFAULT_EXAMPLE):
    """sqrt(7x^2 + 3): conditional std of y - T(x)"""
    x = np.asarray(x, dtype=float)
    value = np.sqrt(cfg.slope_noise_var * x ** 2 + cfg.additive_noise_var)
    return float(value) if value.ndim == 0 else value


def exact_sigma_handle(cfg: ExampleConfig = _DEFAULT_EXAMPLE):
    """exact_sigma as a batch handle"""
    return lambda X: exact_sigma(_first_column(X), cfg)


def exact_bound(x, epsilon: float, cfg: ExampleConfig = _DEFAULT_EXAMPLE):
    """gamma_eps * sqrt(7x^2 + 3); about 1.96 sqrt(7x^2 + 3) at eps = 0.05"""
    return gaussian_quantile_bound(exact_sigma(x, cfg), epsilon)


def exact_bound_fn(epsilon: float, cfg: ExampleConfig = _DEFAULT_EXAMPLE) -> BoundHandle:
    """exact_bound as a batch handle"""
    gamma = gaussian_quantile(epsilon)
    return lambda X: gamma * exact_sigma(_first_column(X), cfg)


# ============================================================================
# Coverage experiment
# ============================================================================

def coverage_margin(epsilon: float, validation_size: int) -> float:
    """3-sigma allowance for the noise of a measured violation ratio"""
    return 3.0 * math.sqrt(epsilon / validation_size)


def run_coverage_experiment(cfg: CoverageConfig) -> CoverageReport:
    """Repeat calibrate-then-validate on fresh, independent streams.

    A run fails when its measured violation ratio exceeds
    eps + 3 sqrt(eps / validation_size). By the 1 - delta guarantee the
    failure fraction should not exceed delta beyond Monte-Carlo noise.
    """
    levels = cfg.levels
    spec = cfg.spec if cfg.spec is not None else min_samples_lemma(levels, cfg.constant)
    margin = coverage_margin(levels.epsilon, cfg.validation_size)
    threshold = levels.epsilon + margin
    predictor = oracle_predictor()
    sigma = exact_sigma_handle(cfg.example)

    ratios = []
    values = []
    failures = 0
    for k in range(cfg.repetitions):
        calibration = sample_example(spec.n_samples, cfg.example, stream=COVERAGE_STREAM_BASE + 2 * k)
        validation = sample_example(cfg.validation_size, cfg.example, stream=COVERAGE_STREAM_BASE + 2 * k + 1)

        if cfg.conditioned:
            scaled = calibrate_conditioned(predictor, sigma, calibration, spec, levels)
            bound = scaled_bound_fn(scaled.gamma_bar, sigma)
            values.append(scaled.gamma_bar)
        else:
            fixed = calibrate_fixed(predictor, calibration, spec, levels)
            bound = fixed_bound_fn(fixed.rho)
            values.append(fixed.rho)

        report = evaluate_violation(bound, predictor, validation)
        ratios.append(report.ratio)
        failures += int(report.ratio > threshold)

    return CoverageReport(
        failure_fraction=failures / cfg.repetitions,
        failures=failures,
        repetitions=cfg.repetitions,
        violation_ratios=ratios,
        calibrated_values=values,
        margin=margin,
        threshold=threshold,
        n_samples=spec.n_samples,
        discard_rank=spec.discard_rank,
        conditioned=cfg.conditioned,
    )
