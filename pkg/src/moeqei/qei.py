"""Monte-Carlo q-EI, its pathwise (IPA) gradient, and deterministic oracles.

With ``f(X) = mu + L Z`` the improvement is ``max_i (m + C Z)_i`` where
``m = (0, f* - mu)`` and ``C = (0; -L)``: row 0 stands for "no improvement".
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from . import _kernels, rng
from .errors import DimensionMismatch, NonPositiveSigma, UnsupportedDimension
from .gp import PosteriorBatch

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _psi(u):
    # E[(u + Z)^+] for standard normal Z.
    return u * ndtr(u) + norm_pdf(u)


@dataclass(frozen=True, eq=False)
class ImprovementTransform:
    m: np.ndarray
    C: np.ndarray
    pending: int = 0
    dim: int = 0
    dm: Optional[np.ndarray] = field(default=None, repr=False)
    dC: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def q(self) -> int:
        return self.C.shape[1]

    @property
    def has_derivatives(self) -> bool:
        return self.dm is not None


def transform_from_moments(mu, L, f_star, dmu=None, dL=None, pending=0, dim=0) -> ImprovementTransform:
    """Build the transform directly from a mean vector and Cholesky factor."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    q = mu.shape[0]
    if L.shape != (q, q):
        raise DimensionMismatch(f"factor shape {L.shape} does not match {q} means")
    m = np.zeros(q + 1)
    m[1:] = f_star - mu
    C = np.zeros((q + 1, q))
    C[1:] = -L
    dm = dC = None
    if dmu is not None:
        P = dmu.shape[0]
        dm = np.zeros((P, q + 1))
        dm[:, 1:] = -dmu
        dC = np.zeros((P, q + 1, q))
        dC[:, 1:] = -dL
    return ImprovementTransform(m, C, pending, dim, dm, dC)


def build_transform(post: PosteriorBatch, f_star: float, pending_count: int = 0) -> ImprovementTransform:
    """Improvement transform of a posterior batch whose first ``pending_count`` points are pending.

    Derivative blocks cover only the coordinates of the non-pending points.
    """
    q, d = post.X.shape
    p = int(pending_count)
    if not 0 <= p < q:
        raise DimensionMismatch(f"pending count {p} must be in [0, {q})")
    if not post.has_derivatives:
        return transform_from_moments(post.mean, post.chol, f_star, pending=p, dim=d)
    if post.deriv_first > p:
        raise DimensionMismatch("posterior lacks derivatives for some non-pending points")
    start = (p - post.deriv_first) * d
    return transform_from_moments(
        post.mean, post.chol, f_star, post.dmean[start:], post.dchol[start:], pending=p, dim=d
    )


@dataclass(frozen=True, eq=False)
class GradientSample:
    value: float
    grad: np.ndarray
    argmax: int


@dataclass(frozen=True)
class QeiEstimate:
    mean: float
    std_error: float
    samples: int


def sample_h_and_grad(t: ImprovementTransform, Z) -> GradientSample:
    """``h(X, Z)`` and its pathwise gradient for one normal vector ``Z``.

    The argmax ties to the lowest index; with ``argmax == 0`` the gradient is zero.
    """
    Z = np.ascontiguousarray(np.asarray(Z, dtype=float).reshape(1, t.q))
    vals = np.empty(1)
    arg = np.empty(1, dtype=np.int64)
    if t.has_derivatives:
        P = t.dm.shape[0]
        grads = np.empty((1, P))
        _kernels.h_grad(t.m, t.C, t.dm, t.dC, Z, vals, grads, arg)
        grad = grads[0].reshape(t.q - t.pending, t.dim)
    else:
        _kernels.h_grad(t.m, t.C, np.zeros((0, t.q + 1)), np.zeros((0, t.q + 1, t.q)), Z, vals, np.empty((1, 0)), arg)
        grad = np.zeros((t.q - t.pending, t.dim))
    return GradientSample(float(vals[0]), grad, int(arg[0]))


def _estimate_from_sums(total, total_sq, n):
    mean = total / n
    if n < 2:
        return QeiEstimate(float(mean), float("nan"), n)
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    return QeiEstimate(float(mean), float(math.sqrt(var / n)), n)


def estimate_qei_many(transforms, N: int, seed: int, key=()) -> list:
    """q-EI estimates for several same-size batches on common random numbers."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if not transforms:
        return []
    q = transforms[0].q
    if any(t.q != q for t in transforms):
        raise DimensionMismatch("common random numbers need equal batch sizes")
    gen = rng.stream(seed, rng.ESTIMATE, *key)
    sums = np.zeros(len(transforms))
    sqs = np.zeros(len(transforms))
    buf = None
    for Z in rng.normal_chunks(gen, N, q):
        if buf is None or buf.shape[0] != Z.shape[0]:
            buf = np.empty(Z.shape[0])
        for i, t in enumerate(transforms):
            _kernels.h_values(t.m, t.C, Z, buf)
            sums[i] += buf.sum()
            sqs[i] += buf @ buf
    if N == 1:
        warnings.warn("standard error is undefined for a single sample", RuntimeWarning, stacklevel=2)
    return [_estimate_from_sums(s, s2, N) for s, s2 in zip(sums, sqs)]


def estimate_qei(t: ImprovementTransform, N: int, seed: int, key=()) -> QeiEstimate:
    """Monte-Carlo q-EI from ``N`` seeded standard-normal draws."""
    return estimate_qei_many([t], N, seed, key)[0]


def gradient_samples(t: ImprovementTransform, Z):
    """Per-sample values ``(M,)``, gradients ``(M, P)`` and argmax indices for draws ``Z``."""
    if not t.has_derivatives:
        raise ValueError("transform was built without derivatives")
    Z = np.ascontiguousarray(Z, dtype=float)
    M = Z.shape[0]
    vals = np.empty(M)
    grads = np.empty((M, t.dm.shape[0]))
    arg = np.empty(M, dtype=np.int64)
    _kernels.h_grad(t.m, t.C, t.dm, t.dC, Z, vals, grads, arg)
    return vals, grads, arg


def estimate_gradient(t: ImprovementTransform, M: int, seed: int, key=(), return_se=False):
    """Average of ``M`` pathwise gradient samples, shape ``(q - p, d)``.

    With ``return_se`` the per-coordinate standard errors are returned too.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    Z = rng.normals(rng.stream(seed, rng.GRADIENT, *key), (M, t.q))
    _, grads, _ = gradient_samples(t, Z)
    shape = (t.q - t.pending, t.dim)
    G = grads.mean(axis=0).reshape(shape)
    if not return_se:
        return G
    se = grads.std(axis=0, ddof=1).reshape(shape) / math.sqrt(M) if M > 1 else np.full(shape, np.nan)
    return G, se


# ---------------------------------------------------------------------------
# Closed forms and quadrature
# ---------------------------------------------------------------------------


def closed_form_ei_1(mu: float, sigma: float, f_star: float) -> float:
    """Expected improvement below ``f_star`` of a single normal ``N(mu, sigma^2)``."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    z = (f_star - mu) / sigma
    return float((f_star - mu) * ndtr(z) + sigma * norm_pdf(z))


def closed_form_ei_1_grad(mu: float, sigma: float, f_star: float):
    """Partials of :func:`closed_form_ei_1` with respect to ``mu`` and ``sigma``."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    z = (f_star - mu) / sigma
    return float(-ndtr(z)), float(norm_pdf(z))


_TRUNCATION = 8.5


def _gl_pieces(splits, n):
    """Composite Gauss-Legendre rule on ``[-T, T]`` broken at each row of ``splits`` (paths x breakpoints)."""
    x, w = np.polynomial.legendre.leggauss(n)
    splits = np.where(np.isfinite(splits), splits, _TRUNCATION)
    cuts = np.sort(np.clip(splits, -_TRUNCATION, _TRUNCATION), axis=1)
    npath = cuts.shape[0]
    edges = np.hstack([np.full((npath, 1), -_TRUNCATION), cuts, np.full((npath, 1), _TRUNCATION)])
    a, b = edges[:, :-1, None], edges[:, 1:, None]
    half = 0.5 * (b - a)
    nodes = (a + half * (x + 1.0)).reshape(npath, -1)
    weights = (half * w).reshape(npath, -1) * norm_pdf(nodes)
    return nodes, weights


def _integrate(m, C, nodes_per_dim, final, split_at):
    # Nested quadrature over z_1..z_{q-1}; row k of the affine map depends on
    # z_1..z_k only, so row k is fully known once z_k is fixed.  Each level is
    # broken where a row (this one or a later one, with later coordinates at
    # 0) crosses the running threshold or the current row, so every panel is
    # smooth or nearly so; the last coordinate is integrated in closed form.
    q = C.shape[1]
    off = np.tile(m[1:], (1, 1))  # paths x rows
    state = np.full(1, final.initial)
    weight = np.ones(1)
    for k in range(q - 1):
        slopes = C[k + 1 :, k]
        base = off[:, k:]
        thresh = split_at(state)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            cuts = [(thresh - base) / slopes]
            if q - k > 1:
                cuts.append((base[:, :1] - base[:, 1:]) / (slopes[1:] - slopes[0]))
        nodes, w = _gl_pieces(np.hstack(cuts), nodes_per_dim)
        nn = nodes.shape[1]
        z = nodes.reshape(-1)
        rep_off = np.repeat(off, nn, axis=0) + np.outer(z, C[1:, k])
        row_val = rep_off[:, k]
        state = final.step(np.repeat(state, nn), row_val)
        weight = np.repeat(weight, nn) * w.reshape(-1)
        off = rep_off
    return float(np.sum(weight * final.last(state, off[:, q - 1], -C[q, q - 1])))


class _MaxIntegrand:
    initial = 0.0

    @staticmethod
    def step(state, row_val):
        return np.maximum(state, row_val)

    @staticmethod
    def last(state, offset, scale):
        # E[max(state, offset - scale * Z)]
        if scale <= 0.0:
            return np.maximum(state, offset)
        return state + scale * _psi((offset - state) / scale)


class _NoImprovementIntegrand:
    # state is 1 while every row so far is <= 0, else 0
    initial = 1.0

    @staticmethod
    def step(state, row_val):
        return state * (row_val <= 0.0)

    @staticmethod
    def last(state, offset, scale):
        if scale <= 0.0:
            return state * (offset <= 0.0)
        return state * ndtr(-offset / scale)


def _check_oracle(t, nodes_per_dim):
    if t.q > 3:
        raise UnsupportedDimension(f"quadrature oracle supports q <= 3, got q = {t.q}")
    if nodes_per_dim < 20:
        raise ValueError("nodes_per_dim must be >= 20")


def quadrature_qei(t: ImprovementTransform, nodes_per_dim: int = 50) -> float:
    """Deterministic q-EI for ``q <= 3``.

    Gauss quadrature in the first ``q - 1`` normal coordinates, split at the
    kink of the running maximum so each panel is smooth, with the last
    coordinate integrated exactly.  The domain is truncated at +-8.5.
    """
    _check_oracle(t, nodes_per_dim)
    return _integrate(t.m, t.C, nodes_per_dim, _MaxIntegrand, lambda s: s)


def quadrature_no_improvement(t: ImprovementTransform, nodes_per_dim: int = 50) -> float:
    """Probability that no batch point improves on the incumbent (argmax index 0)."""
    _check_oracle(t, nodes_per_dim)
    return _integrate(t.m, t.C, nodes_per_dim, _NoImprovementIntegrand, lambda s: np.zeros_like(s))
