"""Batch-selection policies and the outer optimisation loop."""

import logging
import time

import numpy as np

from . import rng
from .errors import UnsupportedPending
from .gp import GpModel, ObservationSet, default_hyperparameters, fit_hyperparameters
from .qei import estimate_qei_many
from .sga import FeasibleSet, Proposal, SgaConfig, latin_hypercube, project, propose_batch, qei_transform
from .testbed import ExperimentTrace, IterationRecord, TestFunction, evaluate, regret

logger = logging.getLogger(__name__)

POLICIES = ("moe_qei", "ego", "cl_min", "cl_max", "cl_mix")

_CL_KEY = {"cl_min": 1, "cl_max": 2}


def normalize_policy(name: str) -> str:
    key = name.lower().replace("-", "_")
    if key not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; choose from {POLICIES}")
    return key


def _constant_liar(model: GpModel, q: int, variant: str, cfg: SgaConfig, key=()):
    obs = model.observations
    if obs.n:
        liar = float(obs.values.min() if variant == "cl_min" else obs.values.max())
    else:
        liar = model.mean.constant
    chosen = np.zeros((0, model.dim))
    current = model
    for j in range(q):
        H = FeasibleSet(obs.bounds, cfg.r, np.vstack([obs.points, chosen]))
        prop = propose_batch(current, H, 1, None, cfg, key=(*key, _CL_KEY[variant], j))
        chosen = np.vstack([chosen, prop.batch])
        # liar points enter the conditioning set only; hyperparameters stay frozen
        current = model.with_observations(obs.extend(chosen, np.full(chosen.shape[0], liar)))
    return chosen, liar


def suggest(policy: str, model: GpModel, q: int, pending=None, cfg: SgaConfig = SgaConfig(), key=()) -> Proposal:
    """Next batch of ``q - p`` points under the named policy."""
    policy = normalize_policy(policy)
    pending = np.zeros((0, model.dim)) if pending is None else np.asarray(pending, dtype=float).reshape(-1, model.dim)
    p = pending.shape[0]
    if q < 1 or p >= q:
        raise ValueError(f"need q >= 1 and p < q, got q={q}, p={p}")
    if policy == "ego" and q != 1:
        raise ValueError("ego selects one point at a time; use q=1")
    if policy in ("moe_qei", "ego"):
        H = FeasibleSet.for_model(model, cfg.r, pending)
        return propose_batch(model, H, q, pending, cfg, key)
    if p:
        raise UnsupportedPending("Constant Liar policies do not support pending points")
    variants = ["cl_min", "cl_max"] if policy == "cl_mix" else [policy]
    batches, liars = [], []
    for v in variants:
        b, liar = _constant_liar(model, q, v, cfg, key)
        batches.append(b)
        liars.append(liar)
    est = estimate_qei_many([qei_transform(model, b) for b in batches], cfg.N, cfg.seed, (rng.POLICY, *key))
    # ties go to the first variant (CL-min)
    best = int(np.argmax([e.mean for e in est]))
    diagnostics = {
        "variants": variants,
        "liar_values": liars,
        "variant_qei": [e.mean for e in est],
        "chosen_variant": variants[best],
    }
    return Proposal(batches[best], est[best], best, diagnostics)


def _fit(obs: ObservationSet, seed: int, restarts: int):
    if obs.n < 2:
        return default_hyperparameters(obs)
    return fit_hyperparameters(obs, restarts=restarts, seed=seed)


def _guard_duplicates(batch, obs: ObservationSet, r: float, seed: int, key):
    if r <= 0 or obs.n == 0:
        return batch
    H = FeasibleSet(obs.bounds, r, obs.points)
    if H.violations(batch):
        logger.info("suggested point within r of an observation; repairing before evaluation")
        return project(batch, H, seed, key)
    return batch


def initial_design(fn: TestFunction, seed: int, count=None):
    count = count or 2 * fn.dim + 2
    X = latin_hypercube(count, fn.bounds, rng.stream(seed, rng.INIT))
    y = np.array([evaluate(fn, x) for x in X])
    return ObservationSet.create(fn.bounds, X, y)


def run_outer_loop(fn: TestFunction, policy: str, q: int, iterations: int, cfg: SgaConfig = SgaConfig(), seed: int = 0, fit_restarts: int = 2) -> ExperimentTrace:
    """Initial LHS design of ``2d + 2`` points, then ``iterations`` rounds of suggest / evaluate / refit."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    policy = normalize_policy(policy)
    obs = initial_design(fn, seed)
    kernel = _fit(obs, rng.derive_seed(seed, rng.HYPER, 0), fit_restarts)
    best = float(obs.values.min())
    trace = ExperimentTrace(policy, fn.name, q, seed, best, regret(best, fn.f_true_min))
    start = time.perf_counter()
    for it in range(1, iterations + 1):
        model = GpModel.build(obs, kernel)
        icfg = cfg.with_(seed=rng.derive_seed(seed, rng.POLICY, it))
        prop = suggest(policy, model, q, None, icfg)
        batch = _guard_duplicates(prop.batch, obs, cfg.r, icfg.seed, (it,))
        values = np.array([evaluate(fn, x) for x in batch])
        obs = obs.extend(batch, values)
        kernel = _fit(obs, rng.derive_seed(seed, rng.HYPER, it), fit_restarts)
        best = min(best, float(values.min()))
        trace.records.append(
            IterationRecord(it, batch, values, best, regret(best, fn.f_true_min), 1000.0 * (time.perf_counter() - start))
        )
    return trace


def run_async_demo(fn: TestFunction, q: int, completions_schedule, cfg: SgaConfig = SgaConfig(), seed: int = 0, fit_restarts: int = 2) -> ExperimentTrace:
    """Simulated asynchronous run: whenever one evaluation completes, pick one new point with ``q - 1`` pending.

    ``completions_schedule`` lists, per decision, the slot in the current
    pending list whose evaluation finishes next.  An integer ``k`` means
    ``k`` decisions completing in first-in-first-out order.
    """
    if q < 2:
        raise ValueError("asynchronous operation needs q >= 2")
    schedule = [0] * completions_schedule if isinstance(completions_schedule, int) else list(completions_schedule)
    obs = initial_design(fn, seed)
    kernel = _fit(obs, rng.derive_seed(seed, rng.HYPER, 0), fit_restarts)
    best = float(obs.values.min())
    trace = ExperimentTrace("moe_qei_async", fn.name, q, seed, best, regret(best, fn.f_true_min))
    start = time.perf_counter()
    model = GpModel.build(obs, kernel)
    first = suggest("moe_qei", model, q, None, cfg.with_(seed=rng.derive_seed(seed, rng.POLICY, 0)))
    pending = [x for x in first.batch]
    for it, slot in enumerate(schedule, start=1):
        if not 0 <= slot < len(pending):
            raise ValueError(f"completion slot {slot} out of range for {len(pending)} pending points")
        done = pending.pop(slot)
        value = evaluate(fn, done)
        obs = obs.extend(done, [value])
        kernel = _fit(obs, rng.derive_seed(seed, rng.HYPER, it), fit_restarts)
        model = GpModel.build(obs, kernel)
        still = np.array(pending).reshape(-1, fn.dim)
        icfg = cfg.with_(seed=rng.derive_seed(seed, rng.POLICY, it))
        prop = suggest("moe_qei", model, q, still, icfg)
        new = _guard_duplicates(prop.batch, obs, cfg.r, icfg.seed, (it,))
        pending.append(new[0])
        best = min(best, value)
        trace.records.append(
            IterationRecord(
                it,
                new,
                np.array([value]),
                best,
                regret(best, fn.f_true_min),
                1000.0 * (time.perf_counter() - start),
                pending=still,
            )
        )
    return trace
