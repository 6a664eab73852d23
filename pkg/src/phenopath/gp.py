"""Gaussian-process regression with a Matérn 3/2 kernel and per-sample noise.

Points are ``(n, d)`` float arrays of (already scaled) feature vectors. The
covariance between two training samples is the Matérn kernel plus a white-noise
term that is non-zero only on the diagonal, where it carries that sample's own
measurement variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import InvalidInputError, NumericalError

SQRT3 = math.sqrt(3.0)
LOG_2PI = math.log(2.0 * math.pi)
LOG_2PIE = math.log(2.0 * math.pi * math.e)

JITTER_RELATIVE = 1e-8
JITTER_GROWTH = 10.0
JITTER_RETRIES = 4


class FitWarning(UserWarning):
    """Hyperparameter fitting could not improve on the initial parameters."""


@dataclass(frozen=True)
class FeatureVector:
    """Raw inputs describing one plot."""

    location: tuple[float, float]
    vegetation_index: float
    leaf_angle_density: float

    def __post_init__(self):
        values = (*self.location, self.vegetation_index, self.leaf_angle_density)
        if len(self.location) != 2 or not all(math.isfinite(v) for v in values):
            raise InvalidInputError(f"non-finite or malformed feature vector {values!r}")

    def as_array(self) -> np.ndarray:
        return np.array([*self.location, self.vegetation_index, self.leaf_angle_density], dtype=float)


@dataclass(frozen=True)
class KernelParams:
    output_scale: float
    length_scales: tuple[float, ...]
    smoothness: float = 1.5

    def __post_init__(self):
        object.__setattr__(self, "output_scale", float(self.output_scale))
        object.__setattr__(self, "length_scales", tuple(float(l) for l in np.atleast_1d(self.length_scales)))
        if not (math.isfinite(self.output_scale) and self.output_scale > 0):
            raise InvalidInputError(f"output_scale must be positive, got {self.output_scale}")
        if not self.length_scales or not all(math.isfinite(l) and l > 0 for l in self.length_scales):
            raise InvalidInputError(f"length_scales must be positive, got {self.length_scales}")
        if self.smoothness != 1.5:
            raise InvalidInputError("only the nu = 1.5 Matérn kernel is supported")

    @property
    def dim(self) -> int:
        return len(self.length_scales)

    @property
    def variance(self) -> float:
        return self.output_scale**2

    def to_log(self) -> np.ndarray:
        return np.log([self.output_scale, *self.length_scales])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), tuple(np.exp(theta[1:])))


@dataclass(frozen=True)
class NoiseModel:
    """Measurement standard deviations for stopped and moving readings."""

    static_std: float
    mobile_std: float

    def __post_init__(self):
        if not (self.static_std > 0 and self.mobile_std > 0):
            raise InvalidInputError(
                f"noise standard deviations must be positive, got "
                f"static={self.static_std}, mobile={self.mobile_std}"
            )
        if self.static_std > self.mobile_std:
            raise InvalidInputError("mobile readings cannot be more accurate than static ones")

    @property
    def static_var(self) -> float:
        return self.static_std**2

    @property
    def mobile_var(self) -> float:
        return self.mobile_std**2

    @classmethod
    def from_ratio(cls, static_std: float, k: float) -> "NoiseModel":
        return cls(static_std, k * static_std)


def _as_points(x, dim=None) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :] if pts.size else pts.reshape(0, dim or 0)
    if pts.ndim != 2:
        raise InvalidInputError(f"points must be a 2-D array, got shape {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise InvalidInputError(f"expected {dim} feature dimensions, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points contain non-finite values")
    return pts


@dataclass(frozen=True, eq=False)
class TrainingSet:
    points: np.ndarray
    targets: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size == 0 else pts[None, :]
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        s2 = np.asarray(self.noise_variances, dtype=float).reshape(-1)
        if not (len(pts) == len(y) == len(s2)):
            raise InvalidInputError(
                f"points, targets and noise variances differ in length: {len(pts)}, {len(y)}, {len(s2)}"
            )
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(y)) and np.all(np.isfinite(s2))):
            raise InvalidInputError("training set contains non-finite values")
        if np.any(s2 <= 0):
            raise InvalidInputError("noise variances must be positive")
        if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidInputError("training set contains duplicate feature vectors")
        for name, arr in (("points", pts), ("targets", y), ("noise_variances", s2)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.targets)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "TrainingSet":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0))

    def check_noise_bound(self, noise: NoiseModel) -> None:
        upper = max(noise.static_var, noise.mobile_var)
        if np.any(self.noise_variances > upper * (1 + 1e-12)):
            raise InvalidInputError("a noise variance exceeds the largest single-source variance")

    def centered(self) -> tuple["TrainingSet", float]:
        """Targets minus their mean, and that mean."""
        if len(self) == 0:
            return self, 0.0
        offset = math.fsum(self.targets) / len(self)
        return TrainingSet(self.points, self.targets - offset, self.noise_variances), offset


@dataclass(frozen=True, eq=False)
class PosteriorDistribution:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _matern_from_r(r, variance):
    s = SQRT3 * r
    return variance * (1.0 + s) * np.exp(-s)


def matern_cov(a, b, params: KernelParams) -> float:
    """Matérn nu=3/2 covariance between two feature vectors."""
    a = np.asarray(a.as_array() if isinstance(a, FeatureVector) else a, dtype=float)
    b = np.asarray(b.as_array() if isinstance(b, FeatureVector) else b, dtype=float)
    if a.shape != (params.dim,) or b.shape != (params.dim,):
        raise InvalidInputError(f"feature vectors must have {params.dim} components")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("non-finite feature vector")
    u = (a - b) / np.asarray(params.length_scales)
    r = math.sqrt(float(np.sum(u * u)))
    return float(_matern_from_r(r, params.variance))


def _scaled_sq_diffs(X, Y, params):
    ls = np.asarray(params.length_scales)
    u = (X[:, None, :] - Y[None, :, :]) / ls
    return u * u


def matern_matrix(X, Y, params: KernelParams) -> np.ndarray:
    X = _as_points(X, params.dim)
    Y = _as_points(Y, params.dim)
    r = np.sqrt(_scaled_sq_diffs(X, Y, params).sum(axis=-1))
    return _matern_from_r(r, params.variance)


def white_noise_cov(i: int, j: int, train: TrainingSet) -> float:
    n = len(train)
    if not (0 <= i < n and 0 <= j < n):
        raise InvalidInputError(f"sample index out of range: ({i}, {j}) for {n} samples")
    return float(train.noise_variances[i]) if i == j else 0.0


def combined_cov_matrix(rows, cols, params: KernelParams, train_noise=None) -> np.ndarray:
    """Matérn covariance plus white noise on the diagonal of a train-train block.

    ``train_noise`` may only be given when ``rows`` and ``cols`` are the same
    sample list.
    """
    X = _as_points(rows, params.dim)
    Y = _as_points(cols, params.dim)
    K = matern_matrix(X, Y, params)
    if train_noise is not None:
        noise = np.asarray(train_noise, dtype=float).reshape(-1)
        if X.shape != Y.shape or not np.array_equal(X, Y):
            raise InvalidInputError("white noise applies only to a block of a sample list with itself")
        if len(noise) != len(X):
            raise InvalidInputError(f"{len(noise)} noise variances for {len(X)} samples")
        K = K + np.diag(noise)
    return K


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------


def jittered_cholesky(K: np.ndarray, start_with_jitter: bool = True) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter * I`` and the jitter used.

    The jitter starts at ``1e-8 * mean(diag K)`` and grows tenfold on each
    failure, at most four times. With ``start_with_jitter=False`` a plain
    factorization is attempted first.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    base = JITTER_RELATIVE * float(np.mean(np.diag(K)))
    if not math.isfinite(base) or base <= 0:
        base = JITTER_RELATIVE
    schedule = [base * JITTER_GROWTH**k for k in range(JITTER_RETRIES + 1)]
    if not start_with_jitter:
        schedule.insert(0, 0.0)
    eye = np.eye(n)
    for jitter in schedule:
        try:
            L = linalg.cholesky(K + jitter * eye, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        return L, jitter
    raise NumericalError("covariance matrix is not positive definite", schedule)


def _logdet_from_chol(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy of a multivariate normal with covariance ``cov``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    k = cov.shape[0]
    if k == 0:
        return 0.0
    L, _ = jittered_cholesky(cov, start_with_jitter=False)
    return 0.5 * (k * LOG_2PIE + _logdet_from_chol(L))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GPModel:
    """A fitted GP: hyperparameters, training data and its factorization.

    ``mean_offset`` is a constant prior mean added back to every prediction;
    training targets are regressed after subtracting it.
    """

    params: KernelParams
    train: TrainingSet
    mean_offset: float = 0.0
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False)

    def __post_init__(self):
        if len(self.train) and self.train.dim != self.params.dim:
            raise InvalidInputError(
                f"training points have {self.train.dim} dims, kernel expects {self.params.dim}"
            )
        if len(self.train):
            K = combined_cov_matrix(self.train.points, self.train.points, self.params, self.train.noise_variances)
            L, jitter = jittered_cholesky(K)
            alpha = linalg.cho_solve((L, True), self.train.targets - self.mean_offset)
        else:
            L, jitter, alpha = np.zeros((0, 0)), 0.0, np.zeros(0)
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "jitter", jitter)

    @classmethod
    def prior(cls, params: KernelParams, mean_offset: float = 0.0) -> "GPModel":
        return cls(params, TrainingSet.empty(params.dim), mean_offset)

    @classmethod
    def centered(cls, train: TrainingSet, params: KernelParams) -> "GPModel":
        """Model whose prior mean is the mean of the observed targets."""
        offset = math.fsum(train.targets) / len(train) if len(train) else 0.0
        return cls(params, train, offset)

    def with_params(self, params: KernelParams) -> "GPModel":
        return GPModel(params, self.train, self.mean_offset)

    def posterior(self, query) -> PosteriorDistribution:
        return posterior(self, query)

    def predict_mean(self, query) -> np.ndarray:
        Q = _as_points(query, self.params.dim)
        if len(self.train) == 0:
            return np.full(len(Q), self.mean_offset)
        return self.mean_offset + matern_matrix(Q, self.train.points, self.params) @ self.alpha

    def conditional_covariance(self, query, extra_points=None, extra_noise=None) -> np.ndarray:
        """Latent covariance of ``query`` given the training set plus extra noisy samples.

        Extra samples contribute only through their locations and noise
        variances; no target values are needed for a covariance.
        """
        Q = _as_points(query, self.params.dim)
        cond = self.train.points
        noise = self.train.noise_variances
        if extra_points is not None and len(extra_points):
            extra = _as_points(extra_points, self.params.dim)
            cond = np.vstack([cond, extra])
            noise = np.concatenate([noise, np.broadcast_to(np.asarray(extra_noise, dtype=float), (len(extra),))])
            L, _ = jittered_cholesky(combined_cov_matrix(cond, cond, self.params, noise))
        else:
            L = self.chol
        Kqq = matern_matrix(Q, Q, self.params)
        if len(cond) == 0:
            return Kqq
        V = linalg.solve_triangular(L, matern_matrix(cond, Q, self.params), lower=True)
        cov = Kqq - V.T @ V
        return 0.5 * (cov + cov.T)

    def entropy(self, set_a, noise=None) -> float:
        return entropy(self, set_a, noise)


def posterior(model: GPModel, query) -> PosteriorDistribution:
    """Posterior of the latent function at ``query`` given the model's data."""
    Q = _as_points(query, model.params.dim)
    if len(Q) == 0:
        raise InvalidInputError("query set is empty")
    mean = model.predict_mean(Q)
    cov = model.conditional_covariance(Q)
    return PosteriorDistribution(mean, cov)


def entropy(model: GPModel, set_a, noise=None) -> float:
    """Entropy of ``set_a`` conditioned on the model's training set.

    ``noise`` (scalar or one value per point) is added to the diagonal of the
    conditional covariance, giving the entropy of noisy observations rather
    than of the latent values.
    """
    A = _as_points(set_a, model.params.dim)
    if len(A) == 0:
        raise InvalidInputError("entropy of an empty set")
    if len(model.train):
        same = (A[:, None, :] == model.train.points[None, :, :]).all(axis=-1)
        if same.any():
            raise InvalidInputError("entropy set overlaps the conditioning set")
    cov = model.conditional_covariance(A)
    if noise is not None:
        cov = cov + np.diag(np.broadcast_to(np.asarray(noise, dtype=float), (len(A),)))
    return gaussian_entropy(cov)


# ---------------------------------------------------------------------------
# likelihood and fitting
# ---------------------------------------------------------------------------


def _lml_and_grad(train: TrainingSet, params: KernelParams, with_grad: bool = True):
    X, y = train.points, train.targets
    n = len(y)
    sq = _scaled_sq_diffs(X, X, params)
    r = np.sqrt(sq.sum(axis=-1))
    decay = np.exp(-SQRT3 * r)
    Km = params.variance * (1.0 + SQRT3 * r) * decay
    K = Km + np.diag(train.noise_variances)
    L, jitter = jittered_cholesky(K)
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * float(y @ alpha) - 0.5 * _logdet_from_chol(L) - 0.5 * n * LOG_2PI
    if not with_grad:
        return lml, None
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    grad = np.empty(1 + params.dim)
    # jitter scales with mean(diag K), whose output-scale derivative is 2 sigma^2
    jitter_ratio = jitter / float(np.mean(np.diag(K)))
    grad[0] = 0.5 * float(np.sum(W * (2.0 * Km))) + 0.5 * float(np.trace(W)) * jitter_ratio * 2.0 * params.variance
    common = 3.0 * params.variance * decay
    for j in range(params.dim):
        grad[1 + j] = 0.5 * float(np.sum(W * (common * sq[:, :, j])))
    return lml, grad


def log_marginal_likelihood(train: TrainingSet, params: KernelParams) -> float:
    if len(train) == 0:
        raise InvalidInputError("log marginal likelihood of an empty training set")
    return _lml_and_grad(train, params, with_grad=False)[0]


def log_marginal_likelihood_grad(train: TrainingSet, params: KernelParams) -> np.ndarray:
    """Gradient with respect to ``log(output_scale), log(length_scales)``."""
    return _lml_and_grad(train, params)[1]


@dataclass(frozen=True)
class FitSettings:
    restarts: int = 4
    max_iter: int = 100
    output_scale_bounds: tuple[float, float] = (1e-3, 1e4)
    length_scale_bounds: tuple[float, float] = (1e-2, 1e2)
    seed: int = 0
    # groups of feature dimensions whose length scales are fitted as one value
    tied: tuple[tuple[int, ...], ...] = ((0, 1),)


def _tie_matrix(dim, tied):
    """Map from free log-parameters to ``[log sigma, log l_1..l_d]``."""
    groups, seen = [], set()
    for group in tied:
        group = tuple(g for g in group if g < dim)
        if len(group) > 1:
            groups.append(group)
            seen.update(group)
    groups += [(j,) for j in range(dim) if j not in seen]
    groups.sort()
    A = np.zeros((1 + dim, 1 + len(groups)))
    A[0, 0] = 1.0
    for k, group in enumerate(groups):
        for j in group:
            A[1 + j, 1 + k] = 1.0
    return A


def fit_hyperparameters(train: TrainingSet, init: KernelParams, config: FitSettings = FitSettings()) -> KernelParams:
    """Maximize the log marginal likelihood in log-parameter space.

    The first start is ``init`` itself (tied length scales replaced by their
    geometric mean); further restarts perturb it with a generator seeded from
    ``config.seed``, so results never depend on any simulation stream.
    Returns ``init`` and warns when no start improves on it.
    """
    if len(train) < 2:
        raise InvalidInputError("need at least two samples to fit hyperparameters")
    A = _tie_matrix(init.dim, config.tied)
    lo = np.log([config.output_scale_bounds[0]] + [config.length_scale_bounds[0]] * (A.shape[1] - 1))
    hi = np.log([config.output_scale_bounds[1]] + [config.length_scale_bounds[1]] * (A.shape[1] - 1))
    bounds = list(zip(lo, hi))

    def objective(z):
        try:
            lml, grad = _lml_and_grad(train, KernelParams.from_log(A @ z))
        except NumericalError:
            return np.inf, np.zeros_like(z)
        return -lml, -(A.T @ grad)

    base_lml = log_marginal_likelihood(train, init)
    z0 = np.linalg.lstsq(A, init.to_log(), rcond=None)[0]
    rng = np.random.default_rng(config.seed)
    starts = [np.clip(z0, lo, hi)]
    for _ in range(max(config.restarts, 1) - 1):
        starts.append(np.clip(z0 + rng.normal(0.0, 1.0, z0.shape), lo, hi))

    best_z, best_lml = None, base_lml
    for start in starts:
        res = optimize.minimize(
            objective, start, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": config.max_iter}
        )
        if np.isfinite(res.fun) and -res.fun > best_lml:
            best_z, best_lml = res.x, -res.fun
    if best_z is None:
        warnings.warn("hyperparameter fit did not improve on the initial parameters", FitWarning, stacklevel=2)
        return init
    return KernelParams.from_log(A @ best_z)
