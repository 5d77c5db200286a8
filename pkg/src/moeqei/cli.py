"""Command-line entry point: ``moeqei {suggest,run,qei,gradcheck}``.

Exit codes: 0 ok, 1 check failed, 2 usage or malformed input, 3 numerical failure.
"""

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import io, rng
from .errors import (
    DimensionMismatch,
    InsufficientData,
    NonPositiveSigma,
    NotPositiveDefinite,
    OutOfBounds,
    RepairFailed,
    SingularFactor,
    UnsupportedDimension,
    UnsupportedPending,
)
from .gp import GpModel, ObservationSet, default_hyperparameters, fit_hyperparameters
from .kernel import SeKernelParams, gram
from .policy import POLICIES, normalize_policy, suggest
from .qei import estimate_gradient, estimate_qei, quadrature_qei
from .sga import SgaConfig, latin_hypercube, qei_transform
from .testbed import FUNCTIONS, get_function, run_replicated

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

GRADCHECK_ABS_TOL = 1e-6


class UsageError(Exception):
    pass


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("QEI_THREADS", "")
    try:
        return max(int(env), 1) if env else 1
    except ValueError:
        raise UsageError(f"QEI_THREADS must be an integer, got {env!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _add_sga_flags(p):
    d = SgaConfig()
    p.add_argument("--R", type=_positive_int, default=None, help="restarts (default max(n, 4))")
    p.add_argument("--T", type=_positive_int, default=d.T, help="ascent steps per restart")
    p.add_argument("--M", type=_positive_int, default=d.M, help="samples per gradient estimate")
    p.add_argument("--N", type=_positive_int, default=d.N, help="samples per q-EI estimate")
    p.add_argument("--a", type=float, default=d.a, help="stepsize scale")
    p.add_argument("--gamma", type=float, default=d.gamma, help="stepsize decay exponent")
    p.add_argument("--r", type=float, default=d.r, help="minimum separation between points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None, help="worker cap (env QEI_THREADS)")


def _config(args) -> SgaConfig:
    try:
        return SgaConfig(R=args.R, T=args.T, M=args.M, N=args.N, a=args.a, gamma=args.gamma, r=args.r, seed=args.seed, threads=_threads(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _parse_hypers(text, dim) -> SeKernelParams:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError("--hypers expects comma-separated numbers: signal_variance,l_1,...,l_d") from None
    if len(vals) != dim + 1:
        raise UsageError(f"--hypers needs {dim + 1} values (signal variance then {dim} length scales)")
    try:
        return SeKernelParams(vals[0], np.array(vals[1:]))
    except ValueError as exc:
        raise UsageError(f"--hypers: {exc}") from None


def _model(obs: ObservationSet, hypers, seed) -> GpModel:
    if hypers is not None:
        kernel = _parse_hypers(hypers, obs.dim)
    elif obs.n >= 2:
        kernel = fit_hyperparameters(obs, seed=rng.derive_seed(seed, rng.HYPER))
    else:
        kernel = default_hyperparameters(obs)
    return GpModel.build(obs, kernel)


def cmd_suggest(args) -> int:
    hist = io.read_history(args.history)
    if args.q < 1:
        raise UsageError("--q must be >= 1")
    p = hist.pending.shape[0]
    if p >= args.q:
        raise UsageError(f"history has {p} pending points; --q must exceed that")
    cfg = _config(args)
    model = _model(hist.observations(), args.hypers, args.seed)
    pending = hist.pending if p else None
    prop = suggest("moe_qei", model, args.q, pending, cfg)
    text = io.proposal_file(prop, cfg, args.seed).dumps()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    fn = get_function(args.function)
    try:
        policy = normalize_policy(args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if policy == "ego" and args.q != 1:
        raise UsageError("ego runs with --q 1")
    cfg = _config(args)
    table = run_replicated(fn, policy, args.q, args.iters, args.reps, args.seed, cfg.with_(threads=1), workers=cfg.threads, fit_restarts=args.fit_restarts)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        io.write_results(out, table.traces, timing=not args.no_timing)
    finally:
        if args.out:
            out.close()
    if args.summary:
        with open(args.summary, "w", newline="") as fh:
            io.write_summary(fh, table, policy, fn.name, args.q)
    return EXIT_OK


def cmd_qei(args) -> int:
    hist = io.read_history(args.history)
    X = io.read_points(args.points, hist.dim)
    try:
        io.check_batch(X, hist.bounds)
    except OutOfBounds as exc:
        raise UsageError(f"points: {exc}") from None
    model = _model(hist.observations(), args.hypers, args.seed)
    p = hist.pending.shape[0]
    t = qei_transform(model, X, hist.pending if p else None)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = estimate_qei(t, args.N, args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"q: {t.q}")
    print(f"qei: {est.mean:.10g}")
    if np.isnan(est.std_error):
        print("std_error: undefined (single sample)")
    else:
        print(f"std_error: {est.std_error:.10g}")
    print(f"samples: {est.samples}")
    if args.oracle:
        ref = quadrature_qei(t, args.nodes)
        print(f"oracle: {ref:.10g}")
        print(f"discrepancy: {abs(est.mean - ref):.3g}")
    return EXIT_OK


def random_desk_model(d: int, seed: int, n=None) -> GpModel:
    """GP on the unit cube conditioned on ``2d + 2`` LHS points with values drawn from its own prior."""
    gen = rng.stream(seed, rng.DIAGNOSTIC, 0)
    n = n or 2 * d + 2
    bounds = np.array([[0.0, 1.0]] * d)
    X = latin_hypercube(n, bounds, gen)
    kernel = SeKernelParams(1.0, gen.uniform(0.2, 0.6, d))
    K = gram(kernel, X) + 1e-4 * np.eye(n)
    y = np.linalg.cholesky(K) @ rng.normals(gen, n)
    return GpModel.build(ObservationSet.create(bounds, X, y), kernel)


def gradcheck_trial(d, q, seed, M, nodes=50, h=1e-4):
    """Compare the averaged pathwise gradient against central differences of the quadrature oracle.

    Returns ``(passed, max |error| / SE)``.
    """
    model = random_desk_model(d, seed)
    gen = rng.stream(seed, rng.DIAGNOSTIC, 1)
    # redraw batches whose q-EI is negligible: their gradients are zero to every digit
    for _ in range(100):
        X = gen.uniform(0.05, 0.95, (q, d))
        if quadrature_qei(qei_transform(model, X), nodes) >= 1e-3:
            break
    t = qei_transform(model, X, with_derivatives=True)
    G, se = estimate_gradient(t, M, seed, (rng.DIAGNOSTIC, 2), return_se=True)
    fd = np.empty_like(G)
    for i in range(q):
        for k in range(d):
            Xp, Xm = X.copy(), X.copy()
            Xp[i, k] += h
            Xm[i, k] -= h
            fd[i, k] = (quadrature_qei(qei_transform(model, Xp), nodes) - quadrature_qei(qei_transform(model, Xm), nodes)) / (2 * h)
    err = np.abs(G - fd)
    # a point that is never the argmax in M draws gets an exactly-zero column
    # (SE 0) while its true partial is tiny but nonzero; 1e-6 covers that floor
    ok = err <= 3.0 * se + GRADCHECK_ABS_TOL
    ratio = float(np.max(err[se > 0] / se[se > 0], initial=0.0))
    return bool(np.all(ok)), ratio


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.q > 3:
        raise UnsupportedDimension(f"quadrature oracle supports q <= 3, got q = {args.q}")
    if args.q < 1 or args.d < 1:
        raise UsageError("--q and --d must be >= 1")
    passed = 0
    for trial in range(args.trials):
        ok, ratio = gradcheck_trial(args.d, args.q, rng.derive_seed(args.seed, trial), args.M, args.nodes, args.h)
        passed += ok
        print(f"trial {trial}: {'pass' if ok else 'FAIL'} (max |err|/SE = {ratio:.2f})")
    frac = passed / args.trials
    print(f"{passed}/{args.trials} trials within 3 SE ({frac:.0%}; need 90%)")
    return EXIT_OK if frac >= 0.9 else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moeqei", description="Parallel Bayesian optimisation by stochastic gradient ascent on q-EI.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("suggest", help="propose the next batch from a history file")
    p.add_argument("--history", required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--hypers", help="fixed kernel: signal_variance,l_1,...,l_d")
    p.add_argument("--out")
    _add_sga_flags(p)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("run", help="benchmark a policy on a test function")
    p.add_argument("--function", required=True, choices=sorted(FUNCTIONS))
    p.add_argument("--policy", required=True, help="one of " + ", ".join(x.replace("_", "-") for x in POLICIES))
    p.add_argument("--q", type=_positive_int, required=True)
    p.add_argument("--iters", type=_positive_int, required=True)
    p.add_argument("--reps", type=_positive_int, default=1)
    p.add_argument("--summary", help="write per-iteration mean log10 regret with 95%% CI here")
    p.add_argument("--out", help="results CSV (default stdout)")
    p.add_argument("--fit-restarts", type=_positive_int, default=2)
    p.add_argument("--no-timing", action="store_true", help="write elapsed_ms as 0 so reruns are byte-identical")
    _add_sga_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("qei", help="estimate q-EI of a batch")
    p.add_argument("--history", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--N", type=_positive_int, default=SgaConfig().N)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hypers")
    p.add_argument("--oracle", action="store_true", help="also evaluate the quadrature oracle (q <= 3)")
    p.add_argument("--nodes", type=int, default=50)
    p.set_defaults(func=cmd_qei)

    p = sub.add_parser("gradcheck", help="check pathwise gradients against the quadrature oracle")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--M", type=_positive_int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--h", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, io.FormatError, UnsupportedDimension, UnsupportedPending, DimensionMismatch, OutOfBounds, InsufficientData) as exc:
        print(f"moeqei {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefinite, SingularFactor, NonPositiveSigma, RepairFailed, FloatingPointError) as exc:
        print(f"moeqei {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, KeyError, ValueError) as exc:
        print(f"moeqei {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
