"""
Kernel Predictor - Locally weighted kernel ridge regression + Parzen sigma

For a query x the predictor minimizes
    J(theta; x) = theta' Sigma theta + sum_i Gamma(x, x_i) (y_i - theta' phi(x_i))^2
with Gamma(x, z) = exp(-lambda ||x - z||). The central estimate is
T(x) = theta_c(x)' phi(x) and the local estimates are y_hat_i(x) = theta_c(x)' phi(x_i).

Two equivalent solvers:
- primal: explicit phi and Sigma, normal equations
- dual:   kernel k(a, b) = phi(a)' Sigma^-1 phi(b), solved as
          (W^1/2 K W^1/2 + I) beta = W^1/2 y,  alpha = W^1/2 beta

sigma(x) is the Parzen average of squared residuals weighted by Gamma(x, x_i).
W depends on x, so every query is a fresh solve. The neighborhood of a query
drops training points whose Gamma is below TRUNCATION_WEIGHT_TOL times the
largest one, optionally capped at the m heaviest.

Batches go through the eigendecomposition K = F F' (numerical rank r):
    theta = (I + F' W F)^-1 F' W y,  alpha = W (y - F theta),  y_hat = F theta
which is the dual solve rewritten with the Woodbury identity, r x r per query.
"""
import warnings
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from scipy.spatial.distance import cdist
from sklearn.metrics.pairwise import rbf_kernel as _sk_rbf_kernel

from ..config import SIGMA_FLOOR, TRUNCATION_M, TRUNCATION_WEIGHT_TOL
from ..errors import DomainError, NumericalError
from ..models import (
    Dataset,
    FamilyMember,
    KernelConfig,
    LocalFit,
    PrimalConfig,
    ResidualMode,
    WeightConfig,
)

# Gram-matrix function: (A (n, d), B (m, d)) -> (n, m)
KernelFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
KernelSpec = Union[KernelConfig, KernelFunction]


# WeightConfig.norm -> scipy metric name; cdist subtracts coordinates directly,
# so Gamma(a, a) is exactly 1
_CDIST_METRIC = {"euclidean": "euclidean", "manhattan": "cityblock", "chebyshev": "chebyshev"}


class ParzenEstimate(NamedTuple):
    sigma: float
    fallback: bool  # True when all weights underflowed and the plain mean was used


# ============================================================================
# Weights and kernels
# ============================================================================

def _vector(a) -> np.ndarray:
    return np.atleast_1d(np.asarray(a, dtype=float)).reshape(-1)


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DomainError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")


def exp_weight(a, b, cfg: WeightConfig) -> float:
    """Gamma(a, b) = exp(-lambda ||a - b||), in (0, 1]"""
    a, b = _vector(a), _vector(b)
    _check_dims(a, b)
    return float(weight_vector(a, b.reshape(1, -1), cfg)[0])


def weight_vector(query, X: np.ndarray, cfg: WeightConfig) -> np.ndarray:
    """Gamma(query, x_i) for every row of X"""
    q = _vector(query).reshape(1, -1)
    _check_dims(q, X)
    distances = cdist(q, np.atleast_2d(X), metric=_CDIST_METRIC[cfg.norm])[0]
    return np.exp(-cfg.lam * distances)


def rbf_kernel(a, b, cfg: KernelConfig) -> float:
    """amplitude * exp(-||a - b||^2 / lengthscale_sq)"""
    a, b = _vector(a), _vector(b)
    _check_dims(a, b)
    return float(kernel_matrix(a.reshape(1, -1), b.reshape(1, -1), cfg)[0, 0])


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Gram block k(A_i, B_j) for an RBF config or any kernel function"""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    _check_dims(A, B)
    if isinstance(kernel, KernelConfig):
        K = kernel.amplitude * _sk_rbf_kernel(A, B, gamma=1.0 / kernel.lengthscale_sq)
    else:
        K = np.asarray(kernel(A, B), dtype=float)
    if A is B:
        K = 0.5 * (K + K.T)
    return K


# ============================================================================
# Local fits
# ============================================================================

def _neighborhood(
    weights: np.ndarray,
    truncation: Optional[int],
    weight_tol: float = TRUNCATION_WEIGHT_TOL
) -> Optional[np.ndarray]:
    """Sorted indices of the kept training points, or None when all are kept.

    Points with weight below weight_tol * max(weights) are dropped; `truncation`
    then caps the rest at the m largest weights.
    """
    if truncation is not None and truncation < 1:
        raise DomainError(f"truncation must be >= 1, got {truncation}")
    count = int(np.count_nonzero(weights >= weight_tol * np.max(weights)))
    if truncation is not None:
        count = min(count, truncation)
    if count >= weights.shape[0]:
        return None
    idx = np.argpartition(-weights, count - 1)[:count]
    return np.sort(idx)


def _spd_solve(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        factor = cho_factor(A, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        raise NumericalError(f"{what} is not positive definite", condition=float(np.linalg.cond(A)))
    return cho_solve(factor, b)


def fit_local_dual(
    train: Dataset,
    kernel: KernelSpec,
    weight: WeightConfig,
    query,
    truncation: Optional[int] = None,
    gram: Optional[np.ndarray] = None,
    weight_tol: float = TRUNCATION_WEIGHT_TOL
) -> LocalFit:
    """Weighted kernel ridge fit at `query`, kernel-trick form.

    Args:
        train: M training observations
        kernel: RBF config or Gram-matrix function
        weight: Gamma config
        query: Query point x
        truncation: Cap on the neighborhood size (None = no cap)
        gram: Precomputed M x M Gram matrix of train.X, shared across queries
        weight_tol: Relative Gamma below which training points are dropped

    Returns:
        LocalFit with T(x) and y_hat_i(x) for the training points used

    Raises:
        NumericalError: the stabilized system is not SPD
    """
    q = _vector(query)
    _check_dims(q, train.X)
    weights = weight_vector(q, train.X, weight)
    idx = _neighborhood(weights, truncation, weight_tol)

    if idx is None:
        Xs, ys, ws = train.X, train.y, weights
        K = gram if gram is not None else kernel_matrix(train.X, train.X, kernel)
    else:
        Xs, ys, ws = train.X[idx], train.y[idx], weights[idx]
        K = gram[np.ix_(idx, idx)] if gram is not None else kernel_matrix(Xs, Xs, kernel)

    sw = np.sqrt(ws)
    system = sw[:, None] * K * sw[None, :] + np.eye(ys.shape[0])
    beta = _spd_solve(system, sw * ys, "weighted kernel system")
    alpha = sw * beta

    k_query = kernel_matrix(q.reshape(1, -1), Xs, kernel)[0]
    return LocalFit(
        prediction=float(k_query @ alpha),
        local_estimates=K @ alpha,
        query=q,
        neighbors=idx,
    )


def fit_local_primal(train: Dataset, primal: PrimalConfig, weight: WeightConfig, query) -> LocalFit:
    """Weighted ridge fit at `query` from explicit features.

    theta_c solves (Sigma + sum_i Gamma_i phi_i phi_i') theta = sum_i Gamma_i y_i phi_i.
    """
    q = _vector(query)
    _check_dims(q, train.X)
    Phi = np.vstack([_vector(primal.feature_map(x)) for x in train.X])
    if Phi.shape[1] != primal.regularizer.shape[0]:
        raise DomainError(
            f"feature map has {Phi.shape[1]} components but regularizer is {primal.regularizer.shape[0]}x"
            f"{primal.regularizer.shape[0]}"
        )
    weights = weight_vector(q, train.X, weight)
    normal = primal.regularizer + Phi.T @ (weights[:, None] * Phi)
    theta = _spd_solve(normal, Phi.T @ (weights * train.y), "normal matrix")
    return LocalFit(
        prediction=float(_vector(primal.feature_map(q)) @ theta),
        local_estimates=Phi @ theta,
        query=q,
    )


def primal_kernel(primal: PrimalConfig) -> KernelFunction:
    """k(a, b) = phi(a)' Sigma^-1 phi(b), the kernel matching a primal config"""
    inv_reg = np.linalg.inv(primal.regularizer)

    def kernel(A: np.ndarray, B: np.ndarray) -> np.ndarray:
        PA = np.vstack([_vector(primal.feature_map(a)) for a in A])
        PB = np.vstack([_vector(primal.feature_map(b)) for b in B])
        return PA @ inv_reg @ PB.T

    return kernel


# ============================================================================
# Parzen sigma
# ============================================================================

def parzen_from_weights(residuals, weights, floor: float = SIGMA_FLOOR) -> ParzenEstimate:
    """sqrt(sum r_i^2 w_i / sum w_i), floored at `floor`.

    Falls back to the unweighted root mean square when the weights sum to 0.
    """
    r = _vector(residuals)
    w = _vector(weights)
    if r.shape != w.shape:
        raise DomainError(f"{r.shape[0]} residuals but {w.shape[0]} weights")
    total = float(np.sum(w))
    fallback = not (np.isfinite(total) and total > 0.0)
    if fallback:
        warnings.warn("all Parzen weights underflowed; using the unweighted mean", RuntimeWarning)
        variance = float(np.mean(r ** 2))
    else:
        variance = float(np.sum(r ** 2 * w) / total)
    return ParzenEstimate(sigma=max(float(np.sqrt(variance)), floor), fallback=fallback)


def parzen_sigma(
    train: Dataset,
    residuals_at_query,
    weight: WeightConfig,
    query,
    floor: float = SIGMA_FLOOR,
    neighbors: Optional[np.ndarray] = None
) -> float:
    """Parzen estimate of sigma(query) from residuals of the training points.

    Args:
        train: M training observations (only X is used)
        residuals_at_query: y_i - T(x_i) (fixed-T) or y_i - y_hat_i(query) (local)
        weight: Gamma config
        query: Query point
        floor: Positivity floor
        neighbors: Restrict to these training rows (residuals then match them)
    """
    X = train.X if neighbors is None else train.X[neighbors]
    return parzen_from_weights(residuals_at_query, weight_vector(query, X, weight), floor).sigma




# ============================================================================
# Model and family
# ============================================================================

# Largest F (x) F table (floats) for the batched solve; beyond it queries use fit_local_dual
_SPECTRAL_MAX_ENTRIES = 25_000_000
_QUERY_CHUNK = 256


def _chunks(n: int):
    for start in range(0, n, _QUERY_CHUNK):
        yield slice(start, min(start + _QUERY_CHUNK, n))


class SpectralGram:
    """Training Gram matrix and a factor F with F F' = K to numerical rank.

    Eigenvalues at or below max_eig * M * eps (the numpy matrix_rank cutoff)
    are dropped; the stabilized system adds at least I, so they do not move
    the solve. One instance is shared by every member of a lambda family.
    """

    def __init__(self, gram: np.ndarray):
        self.gram = gram
        self._factor: Optional[np.ndarray] = None
        self._outer: Optional[np.ndarray] = None

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            evals, evecs = eigh(self.gram)
            top = float(evals[-1])
            eps = np.finfo(float).eps
            if not top > 0.0 or evals[0] < -np.sqrt(eps) * top:
                raise NumericalError("training Gram matrix is not positive semidefinite")
            keep = evals > top * self.gram.shape[0] * eps
            self._factor = evecs[:, keep] * np.sqrt(evals[keep])
        return self._factor

    @property
    def rank(self) -> int:
        return self.factor.shape[1]

    @property
    def usable(self) -> bool:
        return self.gram.shape[0] * self.rank ** 2 <= _SPECTRAL_MAX_ENTRIES

    def outer(self) -> np.ndarray:
        """F_i F_i' per training row, flattened to (M, r*r); W @ outer stacks F' W F"""
        if self._outer is None:
            F = self.factor
            self._outer = (F[:, :, None] * F[:, None, :]).reshape(F.shape[0], -1)
        return self._outer


class LocalKernelModel:
    """T(x) and sigma(x) from one training set, one kernel and one lambda.

    `predict` and `sigma` are batch handles; both come from the same local
    fits, so the last evaluated batch is cached.
    """

    def __init__(
        self,
        train: Dataset,
        kernel: KernelSpec,
        weight: WeightConfig,
        truncation: Optional[int] = TRUNCATION_M,
        residual_mode: ResidualMode = "local",
        sigma_floor: float = SIGMA_FLOOR,
        gram: Optional[np.ndarray] = None,
        spectral: Optional[SpectralGram] = None,
        weight_tol: float = TRUNCATION_WEIGHT_TOL
    ):
        if residual_mode not in ("local", "fixed-T"):
            raise DomainError(f"unknown residual_mode {residual_mode!r}")
        if truncation is not None and truncation < 1:
            raise DomainError(f"truncation must be >= 1, got {truncation}")
        if spectral is None:
            spectral = SpectralGram(gram if gram is not None else kernel_matrix(train.X, train.X, kernel))
        self.train = train
        self.kernel = kernel
        self.weight = weight
        self.truncation = truncation
        self.residual_mode = residual_mode
        self.sigma_floor = sigma_floor
        self.weight_tol = weight_tol
        self.spectral = spectral
        self.gram = spectral.gram
        self.fallback_count = 0
        self._train_predictions: Optional[np.ndarray] = None
        self._cache_key: Optional[bytes] = None
        self._cache_value: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def fit_at(self, query) -> LocalFit:
        return fit_local_dual(
            self.train, self.kernel, self.weight, query, self.truncation, self.gram, self.weight_tol
        )

    def query_weights(self, X: np.ndarray) -> np.ndarray:
        """Gamma(x, x_i) per query row, zero outside that query's neighborhood"""
        X = np.atleast_2d(X)
        _check_dims(X, self.train.X)
        W = np.exp(-self.weight.lam * cdist(X, self.train.X, metric=_CDIST_METRIC[self.weight.norm]))
        for row in W:
            idx = _neighborhood(row, self.truncation, self.weight_tol)
            if idx is not None:
                kept = row[idx]
                row[:] = 0.0
                row[idx] = kept
        return W

    def _solve(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(T(X), W, y_hat) for one chunk; W and y_hat are (queries, M)"""
        W = self.query_weights(X)
        y = self.train.y
        if not self.spectral.usable:
            predictions = np.empty(X.shape[0])
            local = np.zeros_like(W)
            for i, x in enumerate(X):
                fit = self.fit_at(x)
                predictions[i] = fit.prediction
                local[i, slice(None) if fit.neighbors is None else fit.neighbors] = fit.local_estimates
            return predictions, W, local

        F = self.spectral.factor
        r = F.shape[1]
        system = (W @ self.spectral.outer()).reshape(-1, r, r) + np.eye(r)
        try:
            theta = np.linalg.solve(system, ((W * y) @ F)[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise NumericalError("weighted spectral system is singular")
        local = theta @ F.T
        alpha = W * (y - local)
        predictions = np.einsum("bm,bm->b", kernel_matrix(X, self.train.X, self.kernel), alpha)
        return predictions, W, local

    def train_predictions(self) -> np.ndarray:
        """T(x_i) at every training point (needed by fixed-T residuals)"""
        if self._train_predictions is None:
            X = self.train.X
            self._train_predictions = np.concatenate([self._solve(X[rows])[0] for rows in _chunks(X.shape[0])])
        return self._train_predictions

    def _parzen(self, residuals: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Row-wise parzen_from_weights"""
        totals = W.sum(axis=1)
        fallback = ~(np.isfinite(totals) & (totals > 0.0))
        weighted = np.einsum("bm,bm->b", W, residuals ** 2) / np.where(fallback, 1.0, totals)
        variance = np.where(fallback, np.mean(residuals ** 2, axis=1), weighted)
        if fallback.any():
            warnings.warn("all Parzen weights underflowed; using the unweighted mean", RuntimeWarning)
            self.fallback_count += int(np.count_nonzero(fallback))
        return np.maximum(np.sqrt(variance), self.sigma_floor)

    def evaluate(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(T(X), sigma(X)) for a batch"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        key = X.tobytes() + str(X.shape).encode()
        if key == self._cache_key:
            return self._cache_value

        predictions, sigmas = [], []
        for rows in _chunks(X.shape[0]):
            T, W, local = self._solve(X[rows])
            if self.residual_mode == "local":
                residuals = self.train.y - local
            else:
                residuals = np.broadcast_to(self.train.y - self.train_predictions(), W.shape)
            predictions.append(T)
            sigmas.append(self._parzen(residuals, W))

        self._cache_key = key
        self._cache_value = (np.concatenate(predictions), np.concatenate(sigmas))
        return self._cache_value

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X)[0]

    def sigma(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X)[1]


def build_family(
    train: Dataset,
    kernel: KernelSpec,
    lambdas: Sequence[float],
    residual_mode: ResidualMode = "local",
    truncation: Optional[int] = TRUNCATION_M,
    norm: str = "euclidean",
    sigma_floor: float = SIGMA_FLOOR
) -> List[FamilyMember]:
    """One (T_j, sigma_j) member per lambda, sharing the training Gram matrix
    and its eigendecomposition.

    Raises:
        DomainError: empty, nonpositive or repeated lambdas
    """
    lams = [float(lam) for lam in lambdas]
    if not lams:
        raise DomainError("lambda list is empty")
    if len(set(lams)) != len(lams):
        raise DomainError(f"lambda values must be distinct, got {lams}")
    if any(lam <= 0 for lam in lams):
        raise DomainError(f"lambda values must be positive, got {lams}")

    spectral = SpectralGram(kernel_matrix(train.X, train.X, kernel))
    members = []
    for lam in lams:
        model = LocalKernelModel(
            train, kernel, WeightConfig(lam=lam, norm=norm),
            truncation=truncation, residual_mode=residual_mode,
            sigma_floor=sigma_floor, spectral=spectral,
        )
        members.append(FamilyMember(predictor=model.predict, sigma=model.sigma, label=f"lambda={lam:g}"))
    return members


def family_models(members: Sequence[FamilyMember]) -> Dict[str, LocalKernelModel]:
    """Label -> underlying model, for members produced by build_family"""
    return {m.label: m.predictor.__self__ for m in members}
