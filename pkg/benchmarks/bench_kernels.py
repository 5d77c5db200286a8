"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Numba timings exclude the first (compiling) call.  With numba disabled
through MOEQEI_DISABLE_NUMBA both columns time the numpy code.
"""

import argparse
import time

import numpy as np

from moeqei import _kernels, rng
from moeqei._accel import use_numba
from moeqei.gp import GpModel, ObservationSet, posterior_moments
from moeqei.kernel import SeKernelParams
from moeqei.sga import qei_transform


def _model(n, d, seed=0):
    gen = rng.stream(seed, 0)
    X = gen.uniform(0, 1, (n, d))
    y = np.sin(6 * X).sum(axis=1)
    return GpModel.build(ObservationSet.create(np.array([[0.0, 1.0]] * d), X, y), SeKernelParams(1.0, np.full(d, 0.3)))


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(n=40, d=4, q=4, M=1000):
    model = _model(n, d)
    X = rng.stream(1, 0).uniform(0, 1, (q, d))
    t = qei_transform(model, X, with_derivatives=True)
    Z = rng.normals(rng.stream(2, 0), (M, q))
    P = t.dm.shape[0]
    vals, grads, arg = np.empty(M), np.empty((M, P)), np.empty(M, dtype=np.int64)
    Zbig = rng.normals(rng.stream(3, 0), (100_000, q))
    hbuf = np.empty(Zbig.shape[0])
    obs = model.observations
    post_args = (
        np.ascontiguousarray(obs.points),
        np.ascontiguousarray(model.train_factor),
        np.ascontiguousarray(model.alpha),
        model.kernel.signal_variance,
        1.0 / model.kernel.length_scales**2,
        0.0,
        X,
        0,
    )
    _, _, cov, _, dcov = posterior_moments(model, X, True)
    L = np.linalg.cholesky(cov)
    dL = np.empty_like(dcov)
    K = np.ascontiguousarray(model.train_factor @ model.train_factor.T)
    Kout = np.empty_like(K)

    def post(impl):
        return lambda: impl(*post_args, np.empty(q), np.empty((q, q)), np.empty((P, q)), np.empty((P, q, q)))

    return {
        f"posterior+partials (n={n}, q={q}, d={d})": (post(_kernels.posterior_nb), post(_kernels.posterior_np)),
        f"cholesky (n={n})": (lambda: _kernels.chol_factor_nb(K, Kout), lambda: _kernels.chol_factor_np(K, Kout)),
        f"cholesky derivative x{P} (q={q})": (
            lambda: _kernels.chol_deriv_many_nb(L, dcov, dL),
            lambda: _kernels.chol_deriv_many_np(L, dcov, dL),
        ),
        f"h + IPA gradient (M={M})": (
            lambda: _kernels.h_grad_nb(t.m, t.C, t.dm, t.dC, Z, vals, grads, arg),
            lambda: _kernels.h_grad_np(t.m, t.C, t.dm, t.dC, Z, vals, grads, arg),
        ),
        "h values (N=1e5)": (
            lambda: _kernels.h_values_nb(t.m, t.C, Zbig, hbuf),
            lambda: _kernels.h_values_np(t.m, t.C, Zbig, hbuf),
        ),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"numba enabled: {use_numba()}")
    print(f"{'kernel':44s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (fast, slow) in cases().items():
        fast()  # compile
        tf = _best_of(fast, args.repeat)
        ts = _best_of(slow, args.repeat)
        print(f"{name:44s} {1e3 * tf:10.3f} {1e3 * ts:10.3f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
