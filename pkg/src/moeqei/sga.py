"""Multistart projected stochastic gradient ascent on q-EI with Polyak-Ruppert averaging."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels, rng
from .errors import RepairFailed
from .gp import GpModel, posterior_moments
from .linalg import DEFAULT_JITTER, NotPositiveDefinite
from .qei import QeiEstimate, build_transform, estimate_qei_many, gradient_samples, transform_from_moments

logger = logging.getLogger(__name__)

MAX_REPAIR_ROUNDS = 100


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Box for each new point plus a minimum separation ``r`` from anchors and each other."""

    bounds: np.ndarray
    r: float = 1e-5
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        object.__setattr__(self, "bounds", bounds)
        anchors = np.asarray(self.anchors, dtype=float).reshape(-1, bounds.shape[0])
        object.__setattr__(self, "anchors", anchors)
        if self.r < 0:
            raise ValueError("separation r must be >= 0")

    @classmethod
    def for_model(cls, model: GpModel, r=1e-5, pending=None):
        anchors = [model.observations.points]
        if pending is not None and len(pending):
            anchors.append(np.asarray(pending, dtype=float).reshape(-1, model.dim))
        return cls(model.observations.bounds, r, np.vstack(anchors))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def violations(self, X):
        """Indices of new points that sit too close to an anchor or an earlier new point."""
        bad = []
        if self.r <= 0:
            return bad
        for i in range(X.shape[0]):
            if self.anchors.shape[0] and np.min(np.linalg.norm(self.anchors - X[i], axis=1)) < self.r:
                bad.append(i)
            elif i and np.min(np.linalg.norm(X[:i] - X[i], axis=1)) < self.r:
                bad.append(i)
        return bad

    def contains(self, X, tol=0.0) -> bool:
        X = np.atleast_2d(X)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        if np.any(X < lo - tol) or np.any(X > hi + tol):
            return False
        return not self.violations(X)


def project(X, H: FeasibleSet, seed: int = 0, key=()) -> np.ndarray:
    """Clamp to the box, then jitter points that violate the separation constraints.

    Each offending point is moved by ``2 r`` in a pseudo-random direction
    keyed by (point index, repair round) and re-clamped.
    """
    lo, hi = H.bounds[:, 0], H.bounds[:, 1]
    X = np.clip(np.array(X, dtype=float, copy=True), lo, hi)
    for rnd in range(MAX_REPAIR_ROUNDS):
        bad = H.violations(X)
        if not bad:
            return X
        for i in bad:
            u = rng.normals(rng.stream(seed, rng.REPAIR, *key, i, rnd), H.dim)
            X[i] = np.clip(X[i] + 2.0 * H.r * u / np.linalg.norm(u), lo, hi)
    if H.violations(X):
        raise RepairFailed(f"separation r={H.r} could not be met after {MAX_REPAIR_ROUNDS} rounds")
    return X


def latin_hypercube(count: int, box, seed) -> np.ndarray:
    """One point per equal-width stratum in each dimension, strata matched by seeded permutations."""
    if count < 1:
        raise ValueError("count must be >= 1")
    box = np.atleast_2d(np.asarray(box, dtype=float))
    gen = seed if isinstance(seed, np.random.Generator) else rng.stream(seed, rng.START)
    D = box.shape[0]
    u = np.empty((count, D))
    for k in range(D):
        u[:, k] = (gen.permutation(count) + gen.random(count)) / count
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


@dataclass(frozen=True)
class SgaConfig:
    """Constants of the multistart ascent.

    ``R=None`` means ``max(n, 4)`` restarts for a model with ``n`` observations.
    """

    R: Optional[int] = None
    T: int = 100
    M: int = 1000
    N: int = 1_000_000
    a: float = 1.0
    gamma: float = 0.7
    r: float = 1e-5
    eps_fallback: float = 0.0
    L_fallback: int = 100
    seed: int = 0
    threads: int = 1
    allow_any_gamma: bool = False
    normalize: bool = True

    def __post_init__(self):
        for name in ("T", "M", "N", "L_fallback", "threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.R is not None and self.R < 1:
            raise ValueError("R must be >= 1")
        if self.allow_any_gamma:
            if not 0.0 < self.gamma <= 1.0:
                raise ValueError("gamma must lie in (0, 1]")
        elif not 0.5 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0.5, 1) for almost-sure convergence; set allow_any_gamma to override")
        if self.a <= 0:
            raise ValueError("stepsize scale a must be positive")
        if self.r < 0:
            raise ValueError("r must be >= 0")

    def restarts_for(self, n: int) -> int:
        return self.R if self.R is not None else max(n, 4)

    def stepsize(self, t: int) -> float:
        return self.a / (t + 1) ** self.gamma

    def with_(self, **changes) -> "SgaConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SgaTrace:
    qei: np.ndarray
    grad_norm: np.ndarray
    iterates: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Proposal:
    batch: np.ndarray
    estimated_qei: QeiEstimate
    restart_index: int
    diagnostics: dict = field(default_factory=dict)


def _transform_at(model, pending, X, with_derivatives=True):
    p = pending.shape[0]
    full = np.vstack([pending, X]) if p else X
    _, mu, cov, dmu, dcov = posterior_moments(model, full, with_derivatives, p)
    L = np.empty_like(cov)
    delta = _kernels.chol_jitter(cov, L, DEFAULT_JITTER.base, DEFAULT_JITTER.factor, DEFAULT_JITTER.cap)
    if delta < 0:
        raise NotPositiveDefinite("batch posterior covariance is not positive definite at maximum jitter")
    if not with_derivatives:
        return transform_from_moments(mu, L, model.incumbent, pending=p, dim=model.dim)
    dL = np.empty_like(dcov)
    _kernels.chol_deriv_many(L, dcov, dL)
    return transform_from_moments(mu, L, model.incumbent, dmu, dL, pending=p, dim=model.dim)


def qei_transform(model: GpModel, X, pending=None, with_derivatives=False):
    """Improvement transform of ``pending + X`` under ``model`` (derivatives w.r.t. ``X`` only)."""
    pending = _as_pending(pending, model.dim)
    return _transform_at(model, pending, np.atleast_2d(np.asarray(X, dtype=float)), with_derivatives)


def _as_pending(pending, d):
    if pending is None:
        return np.zeros((0, d))
    return np.asarray(pending, dtype=float).reshape(-1, d)


def ascent_scales(model: GpModel, H: FeasibleSet, cfg: SgaConfig):
    """``(widths, y_scale)`` defining the coordinates the ascent works in.

    With ``cfg.normalize`` the ascent runs on the unit cube with q-EI measured
    in prior standard deviations; otherwise in raw units.
    """
    if not cfg.normalize:
        return np.ones(H.dim), 1.0
    return H.bounds[:, 1] - H.bounds[:, 0], float(np.sqrt(model.kernel.signal_variance))


def ascent_direction(G, widths, y_scale):
    """Step direction in raw coordinates for a raw-coordinate gradient ``G``."""
    return G * widths**2 / y_scale


def stationarity(G, X, H: FeasibleSet, widths=None, y_scale=1.0, step=1.0) -> float:
    """Norm of the projected-gradient mapping ``(clip(u + step * G_u) - u) / step``.

    ``u`` and ``G_u`` are the point and gradient in the ascent coordinates;
    the mapping vanishes exactly at stationary points of the box-constrained problem.
    """
    widths = np.ones(H.dim) if widths is None else widths
    lo, hi = H.bounds[:, 0], H.bounds[:, 1]
    u = (np.asarray(X, dtype=float) - lo) / widths
    Gu = np.asarray(G, dtype=float) * widths / y_scale
    umax = (hi - lo) / widths
    moved = np.clip(u + step * Gu, 0.0, umax)
    return float(np.linalg.norm(moved - u) / step)


def gradient_estimate(model, X, cfg: SgaConfig, key, pending=None, M=None):
    """Averaged pathwise gradient at ``X`` and the mean of the sampled improvements."""
    pending = _as_pending(pending, model.dim)
    t = _transform_at(model, pending, X)
    M = M or cfg.M
    Z = rng.normals(rng.stream(cfg.seed, rng.GRADIENT, *key), (M, t.q))
    vals, grads, _ = gradient_samples(t, Z)
    return grads.mean(axis=0).reshape(X.shape), float(vals.mean())


def sga_run(model: GpModel, H: FeasibleSet, X0, cfg: SgaConfig, restart_id=0, pending=None, key=(), keep_iterates=False):
    """One projected SGA run from ``X0``; returns the projected Polyak-Ruppert average and a trace."""
    pending = _as_pending(pending, model.dim)
    widths, y_scale = ascent_scales(model, H, cfg)
    X = np.array(X0, dtype=float, copy=True)
    total = X.copy()
    qeis = np.empty(cfg.T)
    norms = np.empty(cfg.T)
    its = [X.copy()] if keep_iterates else None
    for t in range(cfg.T):
        G, h = gradient_estimate(model, X, cfg, (*key, restart_id, t), pending)
        qeis[t] = h
        norms[t] = stationarity(G, X, H, widths, y_scale)
        X = project(X + cfg.stepsize(t) * ascent_direction(G, widths, y_scale), H, cfg.seed, (*key, restart_id, t))
        total += X
        if keep_iterates:
            its.append(X.copy())
    avg = project(total / (cfg.T + 1), H, cfg.seed, (*key, restart_id, cfg.T))
    return avg, SgaTrace(qeis, norms, np.array(its) if keep_iterates else None)


def _canonical(X):
    return X[np.lexsort(X.T[::-1])]


def count_unique(batches, widths, tol=1e-4) -> int:
    """Distinct batches up to permutation of their points, at relative tolerance ``tol``."""
    reps = []
    for X in batches:
        c = _canonical(X / widths)
        if not any(np.max(np.abs(c - r)) <= tol for r in reps):
            reps.append(c)
    return len(reps)


def _map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def propose_batch(model: GpModel, H: FeasibleSet, q: int, pending=None, cfg: SgaConfig = SgaConfig(), key=()) -> Proposal:
    """Choose ``q - p`` new points by multistart SGA on q-EI (``p`` pending points are held fixed)."""
    pending = _as_pending(pending, model.dim)
    p = pending.shape[0]
    if not 0 <= p < q:
        raise ValueError(f"need 0 <= p < q, got p={p}, q={q}")
    qn, d = q - p, model.dim
    R = cfg.restarts_for(model.observations.n)
    box = np.tile(H.bounds, (qn, 1))
    starts = latin_hypercube(R, box, rng.stream(cfg.seed, rng.START, *key)).reshape(R, qn, d)
    starts = [project(s, H, cfg.seed, (rng.START, *key, i)) for i, s in enumerate(starts)]

    def run(i):
        return sga_run(model, H, starts[i], cfg, i, pending, key)

    results = _map(run, list(range(R)), cfg.threads)
    cands = [avg for avg, _ in results]
    transforms = [_transform_at(model, pending, X, with_derivatives=False) for X in cands]
    est = estimate_qei_many(transforms, cfg.N, cfg.seed, key)
    best = int(np.argmax([e.mean for e in est]))
    chosen, chosen_est, used_fallback = cands[best], est[best], False

    if cfg.eps_fallback > 0 and chosen_est.mean <= cfg.eps_fallback:
        extra = latin_hypercube(cfg.L_fallback, box, rng.stream(cfg.seed, rng.FALLBACK, *key))
        extra = [project(x.reshape(qn, d), H, cfg.seed, (rng.FALLBACK, *key, i)) for i, x in enumerate(extra)]
        all_cands = cands + extra
        est = estimate_qei_many(transforms + [_transform_at(model, pending, X, False) for X in extra], cfg.N, cfg.seed, key)
        best = int(np.argmax([e.mean for e in est]))
        chosen, chosen_est, used_fallback = all_cands[best], est[best], True

    widths, y_scale = ascent_scales(model, H, cfg)

    def final_norm(i):
        G, _ = gradient_estimate(model, cands[i], cfg, (rng.DIAGNOSTIC, *key, i), pending, M=10 * cfg.M)
        return stationarity(G, cands[i], H, widths, y_scale)

    diagnostics = {
        "restarts": R,
        "unique_solutions": count_unique(cands, H.bounds[:, 1] - H.bounds[:, 0]),
        "final_grad_norms": [float(v) for v in _map(final_norm, list(range(R)), cfg.threads)],
        "restart_qei": [e.mean for e in est[:R]],
        "fallback_used": used_fallback,
    }
    logger.debug("proposal from restart %d, qei=%.6g", best, chosen_est.mean)
    return Proposal(chosen, chosen_est, best, diagnostics)
