"""
Sample Complexity - How many calibration samples are enough
Computes (N, r) pairs with B(r-1; N, eps) <= delta, the condition under which
the r-th largest of N i.i.d. scores bounds a fresh score with probability
at least 1 - eps, with confidence 1 - delta.

Rules:
- max:      r = 1, N = ceil(ln(1/delta) / eps)
- explicit: given r, smallest N with eps*N >= r-1 + ln(1/delta) + sqrt(2(r-1) ln(1/delta))
- lemma:    N = ceil(c/eps * ln(1/delta)), r = floor(eps*N/2), c >= (1+sqrt(3))^2
- exact:    given r, smallest N with B(r-1; N, eps) <= delta (binary search)
- family:   lemma with delta replaced by delta / n_family
"""
import math
from typing import Dict, List

import numpy as np
from pydantic import ValidationError
from scipy.special import gammaln, logsumexp

from ..config import EXACT_LEMMA_CONSTANT, LEMMA_CONSTANT
from ..errors import DomainError, InfeasibleSpecError, NumericalError
from ..models import BinomialQuery, ProbabilityLevels, SampleSpec

# Slack for ceil/floor of products like (1/0.5) * ln(e) that are exact integers
_INT_TOL = 1e-9


def _ceil(value: float) -> int:
    return int(math.ceil(value - _INT_TOL * max(1.0, abs(value))))


def _floor(value: float) -> int:
    return int(math.floor(value + _INT_TOL * max(1.0, abs(value))))


# ============================================================================
# Binomial tail
# ============================================================================

def log_binomial_tail(k: int, n: int, p: float) -> float:
    """log B(k; n, p), summed in log space with log-gamma coefficients"""
    try:
        BinomialQuery(k=k, n=n, p=p)
    except ValidationError as e:
        raise DomainError(f"invalid binomial query (k={k}, n={n}, p={p}): {e.errors()[0]['msg']}")

    if k == n or p == 0.0:
        return 0.0
    if p == 1.0:
        return -math.inf  # k < n here
    if k == 0:
        return n * math.log1p(-p)

    i = np.arange(k + 1, dtype=float)
    log_terms = (
        gammaln(n + 1.0) - gammaln(i + 1.0) - gammaln(n - i + 1.0)
        + i * math.log(p) + (n - i) * math.log1p(-p)
    )
    return float(min(0.0, logsumexp(log_terms)))


def binomial_tail(k: int, n: int, p: float) -> float:
    """B(k; n, p) = sum_{i=0}^{k} C(n, i) p^i (1-p)^(n-i).

    Args:
        k: Upper summation index, 0 <= k <= n
        n: Number of trials
        p: Success probability in [0, 1]

    Returns:
        The cumulative probability, accurate to >= 6 significant digits
        down to tails far below 1e-6 at n ~ 1e4.

    Raises:
        DomainError: k or p out of range
    """
    if k == 0 and 0.0 <= p <= 1.0 and n >= 0:
        # exact power keeps (1-p)^N == delta boundaries bit-exact
        return (1.0 - p) ** n
    return math.exp(log_binomial_tail(k, n, p))


# ============================================================================
# Sample-size rules
# ============================================================================

def _check_rank(r: int) -> None:
    if r < 1:
        raise DomainError(f"discard rank r must be >= 1, got {r}")


def min_samples_max(levels: ProbabilityLevels) -> int:
    """N = ceil(ln(1/delta) / eps) for the plain maximum (r = 1)"""
    return _ceil(math.log(1.0 / levels.delta) / levels.epsilon)


def min_samples_explicit(levels: ProbabilityLevels, r: int) -> int:
    """Smallest N with eps*N >= r-1 + ln(1/delta) + sqrt(2 (r-1) ln(1/delta))"""
    _check_rank(r)
    log_inv_delta = math.log(1.0 / levels.delta)
    rhs = (r - 1) + log_inv_delta + math.sqrt(2.0 * (r - 1) * log_inv_delta)
    return max(r, _ceil(rhs / levels.epsilon))


def min_samples_lemma(levels: ProbabilityLevels, constant: float = LEMMA_CONSTANT) -> SampleSpec:
    """N = ceil(constant/eps * ln(1/delta)) and r = floor(eps*N/2).

    Args:
        levels: Probability levels
        constant: Multiplier, at least (1+sqrt(3))^2; 7.47 is the printed value

    Returns:
        Validated SampleSpec (rule "explicit-constant")

    Raises:
        DomainError: constant below (1+sqrt(3))^2
        InfeasibleSpecError: eps, delta so large that r = 0
    """
    return _lemma_spec(levels, levels.delta, constant, n_family=1, rule="explicit-constant")


def min_samples_family(
    levels: ProbabilityLevels,
    n_family: int,
    constant: float = LEMMA_CONSTANT
) -> SampleSpec:
    """Lemma rule with delta split over a family of n_family members"""
    if n_family < 1:
        raise DomainError(f"n_family must be >= 1, got {n_family}")
    rule = "family" if n_family > 1 else "explicit-constant"
    return _lemma_spec(levels, levels.delta / n_family, constant, n_family=n_family, rule=rule)


def _lemma_spec(levels, delta_eff: float, constant: float, n_family: int, rule: str) -> SampleSpec:
    # float roundoff of the exact constant itself must pass
    if constant < EXACT_LEMMA_CONSTANT * (1.0 - 1e-12):
        raise DomainError(
            f"constant {constant} is below (1+sqrt(3))^2 = {EXACT_LEMMA_CONSTANT:.6f}; "
            "the sample-size guarantee does not hold"
        )

    n = _ceil(constant / levels.epsilon * math.log(1.0 / delta_eff))
    r = _floor(levels.epsilon * n / 2.0)
    if r < 1:
        raise InfeasibleSpecError(
            f"eps={levels.epsilon}, delta={levels.delta} give N={n} and r=0; "
            "pass r explicitly (explicit or exact rule)"
        )

    spec = SampleSpec(
        n_samples=n, discard_rank=r, rule=rule,
        levels=levels, n_family=n_family, constant=constant
    )
    if not validate_spec(spec, levels, n_family):
        raise NumericalError(f"lemma spec N={n}, r={r} failed the binomial check")
    return spec


def min_samples_exact(levels: ProbabilityLevels, r: int) -> int:
    """Smallest N >= r with B(r-1; N, eps) <= delta.

    B(r-1; N, eps) is nonincreasing in N, so binary search between r and the
    explicit bound (which always satisfies the condition).
    """
    _check_rank(r)

    def ok(n: int) -> bool:
        return binomial_tail(r - 1, n, levels.epsilon) <= levels.delta

    hi = min_samples_explicit(levels, r)
    while not ok(hi):
        # explicit bound is sufficient in exact arithmetic; guard against roundoff anyway
        hi *= 2
    if ok(r):
        return r

    lo = r  # invariant: ok(lo) is False, ok(hi) is True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def exact_spec(levels: ProbabilityLevels, r: int, n_family: int = 1) -> SampleSpec:
    """SampleSpec from min_samples_exact, optionally with delta split over a family"""
    split = ProbabilityLevels(epsilon=levels.epsilon, delta=levels.delta / n_family)
    n = min_samples_exact(split, r)
    return SampleSpec(n_samples=n, discard_rank=r, rule="exact-binomial", levels=levels, n_family=n_family)


def explicit_spec(levels: ProbabilityLevels, r: int, n_family: int = 1) -> SampleSpec:
    """SampleSpec from min_samples_explicit"""
    split = ProbabilityLevels(epsilon=levels.epsilon, delta=levels.delta / n_family)
    n = min_samples_explicit(split, r)
    return SampleSpec(n_samples=n, discard_rank=r, rule="explicit", levels=levels, n_family=n_family)


def max_spec(levels: ProbabilityLevels, n_family: int = 1) -> SampleSpec:
    """SampleSpec for the plain maximum (r = 1)"""
    split = ProbabilityLevels(epsilon=levels.epsilon, delta=levels.delta / n_family)
    n = min_samples_max(split)
    return SampleSpec(n_samples=n, discard_rank=1, rule="max", levels=levels, n_family=n_family)


def validate_spec(spec: SampleSpec, levels: ProbabilityLevels, n_family: int = 1) -> bool:
    """True iff B(r-1; N, eps) <= delta / n_family"""
    if n_family < 1:
        raise DomainError(f"n_family must be >= 1, got {n_family}")
    tail = binomial_tail(spec.discard_rank - 1, spec.n_samples, levels.epsilon)
    return tail <= levels.delta / n_family


def sample_size_table(levels: ProbabilityLevels, max_rank: int, n_family: int = 1) -> List[Dict[str, float]]:
    """N under the explicit and exact rules for r = 1..max_rank.

    Returns:
        List of {r, n_explicit, n_exact, tail_exact} rows
    """
    _check_rank(max_rank)
    split = ProbabilityLevels(epsilon=levels.epsilon, delta=levels.delta / n_family)
    rows = []
    for r in range(1, max_rank + 1):
        n_exact = min_samples_exact(split, r)
        rows.append({
            "r": r,
            "n_explicit": min_samples_explicit(split, r),
            "n_exact": n_exact,
            "tail_exact": binomial_tail(r - 1, n_exact, levels.epsilon),
        })
    return rows
