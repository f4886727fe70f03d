"""
Order Statistics - Generalized maximum
The r-th largest element of a finite score multiset, counted with
multiplicity: r = 1 is the maximum, r = N the minimum.
"""
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from ..errors import DomainError, EvaluationError


class ScoreCollection(BaseModel):
    """Immutable snapshot of N >= 1 finite scores.

    EvaluationError is not a ValueError, so it leaves the validator unwrapped.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _finite_vector(cls, v):
        arr = np.array(v, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("score collection is empty")
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise EvaluationError("non-finite score", index=int(bad[0]))
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return int(self.values.size)


def as_scores(values: Union[ScoreCollection, Sequence[float], np.ndarray]) -> ScoreCollection:
    """Wrap raw values, passing an existing collection through.

    Raises:
        EvaluationError: some value is NaN or infinite
    """
    if isinstance(values, ScoreCollection):
        return values
    return ScoreCollection(values=values)


def generalized_max(scores: Union[ScoreCollection, Sequence[float], np.ndarray], r: int) -> float:
    """r-th largest score (duplicates counted with multiplicity).

    Uses np.partition (introselect), expected O(N).

    Args:
        scores: Score collection or raw finite values
        r: Rank, 1 <= r <= N

    Returns:
        Element at index r-1 of the descending sort

    Raises:
        DomainError: r out of range
        EvaluationError: a score is non-finite
    """
    collection = as_scores(scores)
    n = len(collection)
    if not 1 <= r <= n:
        raise DomainError(f"rank r={r} outside [1, {n}]")
    # r-th largest is the (n - r)-th smallest, 0-based
    kth = n - r
    return float(np.partition(collection.values, kth)[kth])
