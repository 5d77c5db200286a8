"""Gaussian-process regression: observations, posterior over batches, empirical Bayes fit."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize

from . import _kernels
from .errors import DimensionMismatch, InsufficientData, NotPositiveDefinite, OutOfBounds
from .kernel import MeanFunction, SeKernelParams, gram, gram_grad_params
from .linalg import DEFAULT_JITTER, cho_solve, cholesky_derivative, cholesky_jittered, logdet_from_factor

#: Fixed observation-noise variance added to the training Gram matrix.
DEFAULT_NUGGET = 1e-4

_LOG_2PI = np.log(2.0 * np.pi)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Evaluated points inside a box.

    Build with :meth:`create`, which validates bounds and drops exact
    duplicate points (the first occurrence is kept).
    """

    bounds: np.ndarray
    points: np.ndarray
    values: np.ndarray

    @classmethod
    def create(cls, bounds, points=None, values=None, bounds_tol=1e-12) -> "ObservationSet":
        bounds = _readonly(np.atleast_2d(bounds))
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise DimensionMismatch(f"bounds must have shape (d, 2), got {bounds.shape}")
        if np.any(bounds[:, 1] <= bounds[:, 0]):
            raise ValueError("every bound interval needs lo < hi")
        d = bounds.shape[0]
        points = np.zeros((0, d)) if points is None else np.asarray(points, dtype=float).reshape(-1, d)
        values = np.zeros(0) if values is None else np.asarray(values, dtype=float).reshape(-1)
        if points.shape[0] != values.shape[0]:
            raise DimensionMismatch(f"{points.shape[0]} points but {values.shape[0]} values")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(values))):
            raise ValueError("observations must be finite")
        slack = bounds_tol * (bounds[:, 1] - bounds[:, 0])
        if np.any(points < bounds[:, 0] - slack) or np.any(points > bounds[:, 1] + slack):
            raise OutOfBounds("observed point outside the box")
        keep = []
        for i in range(points.shape[0]):
            if not any(np.array_equal(points[i], points[j]) for j in keep):
                keep.append(i)
        return cls(bounds, _readonly(points[keep]), _readonly(values[keep]))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.bounds[:, 1] - self.bounds[:, 0]

    def incumbent(self, mean: Optional[MeanFunction] = None) -> float:
        """Best (lowest) observed value; the prior mean constant when nothing is observed."""
        if self.n == 0:
            return (mean or MeanFunction()).constant
        return float(self.values.min())

    def extend(self, points, values) -> "ObservationSet":
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return ObservationSet.create(
            self.bounds,
            np.vstack([self.points, points]),
            np.concatenate([self.values, np.asarray(values, dtype=float).reshape(-1)]),
        )


@dataclass(frozen=True, eq=False)
class GpModel:
    observations: ObservationSet
    kernel: SeKernelParams
    mean: MeanFunction
    nugget: float
    train_factor: np.ndarray
    alpha: np.ndarray
    train_jitter: float = 0.0

    @classmethod
    def build(cls, observations, kernel, mean=None, nugget=DEFAULT_NUGGET, jitter_policy=DEFAULT_JITTER):
        mean = mean or MeanFunction()
        if kernel.dim != observations.dim:
            raise DimensionMismatch("kernel dimension does not match observations")
        X, y = observations.points, observations.values
        K = gram(kernel, X) + nugget * np.eye(observations.n)
        L, delta = cholesky_jittered(K, jitter_policy) if observations.n else (np.zeros((0, 0)), 0.0)
        alpha = cho_solve(L, y - mean(X)) if observations.n else np.zeros(0)
        return cls(observations, kernel, mean, float(nugget), _readonly(L), _readonly(alpha), delta)

    def with_observations(self, observations) -> "GpModel":
        """Same hyperparameters, new conditioning set."""
        return GpModel.build(observations, self.kernel, self.mean, self.nugget)

    @property
    def dim(self) -> int:
        return self.observations.dim

    @property
    def incumbent(self) -> float:
        return self.observations.incumbent(self.mean)


@dataclass(frozen=True, eq=False)
class PosteriorBatch:
    """Posterior of ``f`` at a batch, optionally with coordinate partials.

    ``dmean``, ``dcov`` and ``dchol`` are indexed by flattened coordinate
    ``(m - deriv_first) * d + k`` for points ``m >= deriv_first``.
    """

    X: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    jitter: float
    deriv_first: int = 0
    dmean: Optional[np.ndarray] = field(default=None, repr=False)
    dcov: Optional[np.ndarray] = field(default=None, repr=False)
    dchol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def q(self) -> int:
        return self.X.shape[0]

    @property
    def has_derivatives(self) -> bool:
        return self.dmean is not None


def posterior_moments(model: GpModel, X, with_derivatives=False, deriv_first=0):
    """Posterior mean and covariance (and their coordinate partials) without factorising."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"batch has dimension {X.shape[1]}, model has {model.dim}")
    q, d = X.shape
    if q < 1:
        raise DimensionMismatch("batch must contain at least one point")
    if not 0 <= deriv_first <= q:
        raise ValueError("deriv_first out of range")
    P = (q - deriv_first) * d if with_derivatives else 0
    mu = np.empty(q)
    cov = np.empty((q, q))
    dmu = np.empty((P, q))
    dcov = np.empty((P, q, q))
    obs = model.observations
    _kernels.posterior(
        np.ascontiguousarray(obs.points),
        np.ascontiguousarray(model.train_factor),
        np.ascontiguousarray(model.alpha),
        model.kernel.signal_variance,
        1.0 / model.kernel.length_scales**2,
        model.mean.constant,
        X,
        deriv_first,
        mu,
        cov,
        dmu,
        dcov,
    )
    return X, mu, cov, dmu, dcov


def posterior_batch(model: GpModel, X, with_derivatives=True, deriv_first=0, jitter_policy=DEFAULT_JITTER):
    """Posterior of ``f(X)`` given the model's observations.

    When ``with_derivatives`` is set, partials of the mean, covariance and
    its Cholesky factor with respect to every coordinate of points
    ``deriv_first, ..., q - 1`` are included.
    """
    X, mu, cov, dmu, dcov = posterior_moments(model, X, with_derivatives, deriv_first)
    L, delta = cholesky_jittered(cov, jitter_policy)
    if with_derivatives:
        dL = cholesky_derivative(L, dcov) if dcov.shape[0] else np.empty_like(dcov)
        return PosteriorBatch(X, mu, cov, L, delta, deriv_first, dmu, dcov, dL)
    return PosteriorBatch(X, mu, cov, L, delta, deriv_first)


# ---------------------------------------------------------------------------
# Empirical Bayes
# ---------------------------------------------------------------------------


def log_marginal_likelihood(obs: ObservationSet, params: SeKernelParams, nugget=DEFAULT_NUGGET, mean=None):
    """Log marginal likelihood and its gradient w.r.t. log-hyperparameters."""
    mean = mean or MeanFunction()
    n = obs.n
    K, dK = gram_grad_params(params, obs.points)
    L, _ = cholesky_jittered(K + nugget * np.eye(n))
    r = obs.values - mean(obs.points)
    alpha = cho_solve(L, r)
    value = -0.5 * r @ alpha - 0.5 * logdet_from_factor(L) - 0.5 * n * _LOG_2PI
    Kinv = cho_solve(L, np.eye(n))
    inner = np.outer(alpha, alpha) - Kinv
    grad = 0.5 * np.einsum("ij,pji->p", inner, dK)
    return float(value), grad


def hyperparameter_bounds(obs: ObservationSet) -> np.ndarray:
    """Box on ``[log sigma^2, log l_1, ..., log l_d]`` used by the fit."""
    var = float(np.var(obs.values)) if obs.n else 1.0
    rows = [[np.log(1e-6 * var + 1e-12), np.log(100.0 * var + 1e-6)]]
    for w in obs.widths:
        rows.append([np.log(1e-2 * w), np.log(10.0 * w)])
    return np.array(rows)


def default_hyperparameters(obs: ObservationSet) -> SeKernelParams:
    """Data-free fallback used when there are too few points to fit."""
    if obs.n >= 2 and np.var(obs.values) > 0:
        sv = float(np.var(obs.values))
    else:
        sv = 1.0
    return SeKernelParams(sv, 0.25 * obs.widths)


def fit_hyperparameters(
    obs: ObservationSet,
    restarts: int = 4,
    seed: int = 0,
    nugget=DEFAULT_NUGGET,
    mean=None,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> SeKernelParams:
    """Maximise the log marginal likelihood over a box of log-hyperparameters.

    The first start sits at a data-driven default; the remaining
    ``restarts - 1`` starts are uniform in the box.  Each run is a
    bounded quasi-Newton ascent with line search.
    """
    if obs.n < 2:
        raise InsufficientData(f"need at least 2 observations to fit, have {obs.n}")
    mean = mean or MeanFunction()
    box = hyperparameter_bounds(obs)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6870,)))
    r = obs.values - mean(obs.points)
    theta0 = np.concatenate([[np.log(max(np.mean(r**2), 1e-12))], np.log(0.3 * obs.widths)])
    starts = [np.clip(theta0, box[:, 0], box[:, 1])]
    for _ in range(max(restarts, 1) - 1):
        starts.append(rng.uniform(box[:, 0], box[:, 1]))

    def objective(theta):
        try:
            v, g = log_marginal_likelihood(obs, SeKernelParams.from_log(theta), nugget, mean)
        except NotPositiveDefinite:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(v):
            return 1e25, np.zeros_like(theta)
        return -v, -g

    best_theta, best_val = None, np.inf
    for start in starts:
        res = scipy.optimize.minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=box,
            options={"maxiter": max_iter, "gtol": gtol},
        )
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    return SeKernelParams.from_log(np.clip(best_theta, box[:, 0], box[:, 1]))
