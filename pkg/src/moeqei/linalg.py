"""Dense symmetric linear algebra used by the GP and q-EI code."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import DimensionMismatch, NotPositiveDefinite, SingularFactor


@dataclass(frozen=True)
class JitterPolicy:
    """Diagonal jitter escalation, relative to ``trace(A) / n``.

    The first attempt is unjittered; subsequent attempts use
    ``base * scale``, multiplied by ``factor`` per retry up to ``cap * scale``.
    """

    base: float = 1e-10
    factor: float = 10.0
    cap: float = 1e-2


DEFAULT_JITTER = JitterPolicy()


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def cholesky_jittered(A, jitter_policy=DEFAULT_JITTER):
    """Lower Cholesky factor of ``A + delta I`` and the ``delta`` that was needed.

    Raises
    ------
    NotPositiveDefinite
        If the factorisation fails even at the largest jitter.
    """
    A = _as_square(A)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if A.shape[0] == 0:
        return np.zeros((0, 0)), 0.0
    out = np.empty_like(A)
    delta = _kernels.chol_jitter(
        np.ascontiguousarray(A), out, jitter_policy.base, jitter_policy.factor, jitter_policy.cap
    )
    if delta < 0.0:
        raise NotPositiveDefinite(
            f"Cholesky failed for {A.shape[0]}x{A.shape[0]} matrix at maximum jitter"
        )
    return out, float(delta)


def cholesky(A, jitter_policy=DEFAULT_JITTER):
    return cholesky_jittered(A, jitter_policy)[0]


def cholesky_derivative(L, dA):
    """Directional derivative of the Cholesky factor.

    Given ``L L^T = A`` and a symmetric perturbation direction ``dA``,
    returns the lower-triangular ``dL`` with ``dL L^T + L dL^T = dA``.
    A stack of directions with shape ``(P, n, n)`` is also accepted.
    """
    L = _as_square(L, "L")
    dA = np.asarray(dA, dtype=float)
    n = L.shape[0]
    if dA.shape[-2:] != (n, n) or dA.ndim not in (2, 3):
        raise DimensionMismatch(f"dA shape {dA.shape} does not match factor of size {n}")
    out = np.empty_like(dA)
    if dA.ndim == 2:
        _kernels.chol_deriv(np.ascontiguousarray(L), np.ascontiguousarray(dA), out)
    else:
        _kernels.chol_deriv_many(np.ascontiguousarray(L), np.ascontiguousarray(dA), out)
    return out


def solve_triangular(L, b, side="lower"):
    """Solve ``L x = b`` (``side="lower"``) or ``L^T x = b`` (``side="upper_t"``)."""
    L = _as_square(L, "L")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise DimensionMismatch(f"rhs length {b.shape[0]} != factor size {L.shape[0]}")
    if side not in ("lower", "upper_t"):
        raise ValueError(f"unknown side {side!r}")
    diag = np.diag(L)
    if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
        raise SingularFactor("triangular factor has a zero or non-finite diagonal")
    return scipy.linalg.solve_triangular(L, b, lower=True, trans=0 if side == "lower" else 1)


def cho_solve(L, b):
    """Solve ``(L L^T) x = b``."""
    return solve_triangular(L, solve_triangular(L, b, "lower"), "upper_t")


def logdet_from_factor(L):
    L = np.asarray(L, dtype=float)
    return float(2.0 * np.sum(np.log(np.diag(L))))
