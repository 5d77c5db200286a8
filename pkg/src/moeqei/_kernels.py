"""Hot numeric kernels with numba and pure-numpy implementations.

Every public name here dispatches to the ``*_nb`` (numba) or ``*_np``
(numpy) variant depending on :func:`moeqei._accel.use_numba`.  Both
variants are always importable so tests and the benchmark can compare them.

Conventions shared by the kernels:

* Derivative coordinates are flattened point-major: coordinate ``(m, k)``
  of the batch lives at index ``(m - first) * d + k`` where ``first`` is the
  index of the first differentiated point (pending points come first and are
  never differentiated).
* Improvement transforms carry a leading zero row, so ``m`` has length
  ``q + 1`` and ``C`` has shape ``(q + 1, q)``.
"""

import numpy as np
from scipy.linalg import solve_triangular

from ._accel import njit, use_numba

# ---------------------------------------------------------------------------
# Cholesky factorisation of small dense matrices
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def chol_factor_nb(A, out):
    n = A.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.0
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        ljj = np.sqrt(s)
        out[j, j] = ljj
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / ljj
    return True


def chol_factor_np(A, out):
    try:
        out[...] = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(out) > 0.0))


@njit(cache=True, nogil=True)
def chol_jitter_nb(A, out, base, factor, cap):
    """Factor ``A + delta I`` with escalating ``delta``; returns ``delta`` or -1."""
    n = A.shape[0]
    if chol_factor_nb(A, out):
        return 0.0
    tr = 0.0
    for i in range(n):
        tr += A[i, i]
    scale = tr / n
    if not scale > 0.0:
        return -1.0
    delta = base * scale
    limit = cap * scale * (1.0 + 1e-12)
    B = A.copy()
    while delta <= limit:
        for i in range(n):
            B[i, i] = A[i, i] + delta
        if chol_factor_nb(B, out):
            return delta
        delta *= factor
    return -1.0


def chol_jitter_np(A, out, base, factor, cap):
    if chol_factor_np(A, out):
        return 0.0
    n = A.shape[0]
    scale = np.trace(A) / n
    if not scale > 0.0:
        return -1.0
    delta = base * scale
    limit = cap * scale * (1.0 + 1e-12)
    eye = np.eye(n)
    while delta <= limit:
        if chol_factor_np(A + delta * eye, out):
            return delta
        delta *= factor
    return -1.0


# ---------------------------------------------------------------------------
# Forward-mode Cholesky derivative
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def chol_deriv_nb(L, dA, out):
    # Differentiates the column-by-column factorisation loop.
    n = L.shape[0]
    for i in range(n):
        for j in range(n):
            out[i, j] = 0.0
    for j in range(n):
        s = dA[j, j]
        for k in range(j):
            s -= 2.0 * L[j, k] * out[j, k]
        out[j, j] = 0.5 * s / L[j, j]
        for i in range(j + 1, n):
            s = dA[i, j] - L[i, j] * out[j, j]
            for k in range(j):
                s -= out[i, k] * L[j, k] + L[i, k] * out[j, k]
            out[i, j] = s / L[j, j]


@njit(cache=True, nogil=True)
def chol_deriv_many_nb(L, dA, out):
    for p in range(dA.shape[0]):
        chol_deriv_nb(L, dA[p], out[p])


def chol_deriv_many_np(L, dA, out):
    # dL = L * Phi(L^-1 dA L^-T), Phi keeps the strict lower triangle and
    # halves the diagonal.
    n = L.shape[0]
    Linv = solve_triangular(L, np.eye(n), lower=True)
    inner = Linv @ dA @ Linv.T
    phi = np.tril(inner, -1)
    idx = np.arange(n)
    phi[..., idx, idx] = 0.5 * inner[..., idx, idx]
    out[...] = L @ phi


def chol_deriv_np(L, dA, out):
    chol_deriv_many_np(L, dA[None], out[None])


# ---------------------------------------------------------------------------
# GP posterior over a batch, with derivatives w.r.t. batch coordinates
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _forward_solve(L, b, out):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def posterior_nb(Xtr, Ltr, alpha, sig2, inv_ls2, mean0, X, first, mu, cov, dmu, dcov):
    q, d = X.shape
    n = Xtr.shape[0]
    Kxt = np.empty((q, n))
    V = np.empty((q, n))
    Kxx = np.empty((q, q))
    for i in range(q):
        for l in range(n):
            s = 0.0
            for k in range(d):
                diff = X[i, k] - Xtr[l, k]
                s += diff * diff * inv_ls2[k]
            Kxt[i, l] = sig2 * np.exp(-0.5 * s)
        for j in range(q):
            s = 0.0
            for k in range(d):
                diff = X[i, k] - X[j, k]
                s += diff * diff * inv_ls2[k]
            Kxx[i, j] = sig2 * np.exp(-0.5 * s)
        if n > 0:
            _forward_solve(Ltr, Kxt[i], V[i])
    for i in range(q):
        s = mean0
        for l in range(n):
            s += Kxt[i, l] * alpha[l]
        mu[i] = s
    for i in range(q):
        for j in range(i + 1):
            s = Kxx[i, j]
            for l in range(n):
                s -= V[i, l] * V[j, l]
            cov[i, j] = s
            cov[j, i] = s
    if dmu.shape[0] == 0:
        return
    dk = np.empty(n)
    w = np.empty(n)
    for a in range(dmu.shape[0]):
        for i in range(q):
            dmu[a, i] = 0.0
            for j in range(q):
                dcov[a, i, j] = 0.0
    for m in range(first, q):
        for k in range(d):
            a = (m - first) * d + k
            s = 0.0
            for l in range(n):
                dk[l] = -(X[m, k] - Xtr[l, k]) * inv_ls2[k] * Kxt[m, l]
                s += dk[l] * alpha[l]
            dmu[a, m] = s
            if n > 0:
                _forward_solve(Ltr, dk, w)
            for j in range(q):
                r = -(X[m, k] - X[j, k]) * inv_ls2[k] * Kxx[m, j]
                for l in range(n):
                    r -= w[l] * V[j, l]
                dcov[a, m, j] += r
                dcov[a, j, m] += r


def posterior_np(Xtr, Ltr, alpha, sig2, inv_ls2, mean0, X, first, mu, cov, dmu, dcov):
    q, d = X.shape
    n = Xtr.shape[0]
    diff_t = X[:, None, :] - Xtr[None, :, :]
    Kxt = sig2 * np.exp(-0.5 * np.einsum("ilk,k->il", diff_t**2, inv_ls2))
    diff_x = X[:, None, :] - X[None, :, :]
    Kxx = sig2 * np.exp(-0.5 * np.einsum("ijk,k->ij", diff_x**2, inv_ls2))
    if n > 0:
        V = solve_triangular(Ltr, Kxt.T, lower=True).T
    else:
        V = np.zeros((q, 0))
    mu[...] = mean0 + Kxt @ alpha
    c = Kxx - V @ V.T
    cov[...] = np.tril(c) + np.tril(c, -1).T
    if dmu.shape[0] == 0:
        return
    pts = np.arange(first, q)
    nd = len(pts)
    # dk[m, k, l] = d k(x_m, xtr_l) / d x_mk
    dk = -diff_t[pts].transpose(0, 2, 1) * inv_ls2[None, :, None] * Kxt[pts][:, None, :]
    dmu[...] = 0.0
    dcov[...] = 0.0
    idx = np.arange(nd * d)
    dmu[idx, np.repeat(pts, d)] = (dk @ alpha).reshape(-1)
    if n > 0:
        W = solve_triangular(Ltr, dk.reshape(nd * d, n).T, lower=True).T
    else:
        W = np.zeros((nd * d, 0))
    dkx = -diff_x[pts].transpose(0, 2, 1) * inv_ls2[None, :, None] * Kxx[pts][:, None, :]
    R = dkx.reshape(nd * d, q) - W @ V.T
    rows = np.repeat(pts, d)
    dcov[idx, rows, :] += R
    dcov[idx, :, rows] += R


# ---------------------------------------------------------------------------
# Monte-Carlo samples of h(X, Z) and its pathwise gradient
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def h_values_nb(m, C, Z, out):
    q1 = m.shape[0]
    q = C.shape[1]
    for s in range(Z.shape[0]):
        best = 0.0
        for i in range(1, q1):
            y = m[i]
            for j in range(q):
                y += C[i, j] * Z[s, j]
            if y > best:
                best = y
        out[s] = best


def h_values_np(m, C, Z, out):
    Y = m[1:] + Z @ C[1:].T
    np.maximum(Y.max(axis=1), 0.0, out=out)


@njit(cache=True, nogil=True)
def h_grad_nb(m, C, dm, dC, Z, vals, grads, arg):
    q1 = m.shape[0]
    q = C.shape[1]
    P = dm.shape[0]
    for s in range(Z.shape[0]):
        best = 0.0
        ibest = 0
        for i in range(1, q1):
            y = m[i]
            for j in range(q):
                y += C[i, j] * Z[s, j]
            if y > best:
                best = y
                ibest = i
        vals[s] = best
        arg[s] = ibest
        if ibest == 0:
            for a in range(P):
                grads[s, a] = 0.0
        else:
            for a in range(P):
                g = dm[a, ibest]
                for j in range(q):
                    g += dC[a, ibest, j] * Z[s, j]
                grads[s, a] = g


def h_grad_np(m, C, dm, dC, Z, vals, grads, arg):
    Y = m[None, :] + Z @ C.T  # row 0 is identically zero
    Y[:, 0] = 0.0
    # argmax returns the lowest maximising index
    ib = np.argmax(Y, axis=1)
    arg[...] = ib
    vals[...] = Y[np.arange(Z.shape[0]), ib]
    G = dm[:, ib].T + np.einsum("apj,sj->sap", dC, Z)[np.arange(Z.shape[0]), :, ib]
    G[ib == 0] = 0.0
    grads[...] = G


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

if use_numba():
    chol_factor = chol_factor_nb
    chol_jitter = chol_jitter_nb
    chol_deriv = chol_deriv_nb
    chol_deriv_many = chol_deriv_many_nb
    posterior = posterior_nb
    h_values = h_values_nb
    h_grad = h_grad_nb
else:
    chol_factor = chol_factor_np
    chol_jitter = chol_jitter_np
    chol_deriv = chol_deriv_np
    chol_deriv_many = chol_deriv_many_np
    posterior = posterior_np
    h_values = h_values_np
    h_grad = h_grad_np
