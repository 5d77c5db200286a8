"""Squared-exponential covariance with ARD length scales, and a constant mean."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch


@dataclass(frozen=True)
class SeKernelParams:
    signal_variance: float
    length_scales: np.ndarray = field(repr=True)

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not self.signal_variance > 0 or not np.all(ls > 0):
            raise ValueError("kernel hyperparameters must be strictly positive")

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]

    def to_log(self) -> np.ndarray:
        """``[log sigma^2, log l_1, ..., log l_d]``."""
        return np.concatenate([[np.log(self.signal_variance)], np.log(self.length_scales)])

    @classmethod
    def from_log(cls, theta) -> "SeKernelParams":
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), np.exp(theta[1:]))

    def __eq__(self, other):
        if not isinstance(other, SeKernelParams):
            return NotImplemented
        return self.signal_variance == other.signal_variance and np.array_equal(
            self.length_scales, other.length_scales
        )

    def __hash__(self):
        return hash((self.signal_variance, self.length_scales.tobytes()))


@dataclass(frozen=True)
class MeanFunction:
    constant: float = 0.0

    def __call__(self, X):
        X = np.atleast_2d(X)
        return np.full(X.shape[0], self.constant)


def _check_pair(params, x, xp):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != (params.dim,) or xp.shape != (params.dim,):
        raise DimensionMismatch(
            f"points of shape {x.shape} and {xp.shape} for a {params.dim}-d kernel"
        )
    return x, xp


def k_eval(params: SeKernelParams, x, xp) -> float:
    x, xp = _check_pair(params, x, xp)
    r2 = np.sum(((x - xp) / params.length_scales) ** 2)
    return float(params.signal_variance * np.exp(-0.5 * r2))


def k_grad_x(params: SeKernelParams, x, xp) -> np.ndarray:
    """Gradient of ``k(x, x')`` with respect to the first argument."""
    x, xp = _check_pair(params, x, xp)
    return -(x - xp) / params.length_scales**2 * k_eval(params, x, xp)


def k_grad_params(params: SeKernelParams, x, xp) -> np.ndarray:
    """Gradient w.r.t. ``[log sigma^2, log l_1, ..., log l_d]``."""
    x, xp = _check_pair(params, x, xp)
    k = k_eval(params, x, xp)
    return np.concatenate([[k], k * (x - xp) ** 2 / params.length_scales**2])


def gram(params: SeKernelParams, A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != params.dim or B.shape[1] != params.dim:
        raise DimensionMismatch("point dimension does not match kernel dimension")
    diff = (A[:, None, :] - B[None, :, :]) / params.length_scales
    return params.signal_variance * np.exp(-0.5 * np.sum(diff**2, axis=-1))


def gram_grad_params(params: SeKernelParams, A) -> tuple[np.ndarray, np.ndarray]:
    """Gram matrix of ``A`` and its derivatives, shape ``(d + 1, n, n)``, w.r.t. log-parameters."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sq = ((A[:, None, :] - A[None, :, :]) / params.length_scales) ** 2
    K = params.signal_variance * np.exp(-0.5 * np.sum(sq, axis=-1))
    dK = np.empty((params.dim + 1,) + K.shape)
    dK[0] = K
    dK[1:] = np.moveaxis(sq, -1, 0) * K
    return K, dK
