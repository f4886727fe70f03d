"""probscale - probabilistic error bounds for black-box predictors via probabilistic scaling"""
from .models import ProbabilityLevels, SampleSpec, Dataset
from .services.sample_complexity import (
    binomial_tail,
    min_samples_max,
    min_samples_explicit,
    min_samples_lemma,
    min_samples_exact,
    min_samples_family,
    validate_spec,
)
from .services.order_statistics import generalized_max
from .services.calibration import (
    calibrate_fixed,
    calibrate_conditioned,
    calibrate_family,
    markov_bound,
    gaussian_quantile_bound,
    evaluate_violation,
)

__version__ = "0.1.0"
