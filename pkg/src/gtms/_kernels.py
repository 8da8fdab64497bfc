"""Compiled per-configuration transfer-matrix contractions.

Inputs are prepared by ``amplitude.Evaluator``.  For a configuration ``k``
and block ``j`` the angle is split as ``phi = theta[k, j, mu] + X[j, mu, al, be]``
where ``theta`` carries the physical-spin dependence and ``X`` the bias and
hidden-deep terms, so ``2 cosh(phi) = e^theta e^X + e^-theta e^-X`` needs no
transcendental calls per matrix entry.  Blocks whose entries leave the
double range are recomputed in log space.

The trace is ``tr(T_1 ... T_NT C)`` with closure ``C = 1`` (periodic) or
``C = e_0 1^T`` (open: the last block does not depend on its column index).
Matrices are kept scaled to unit max-norm (``max |Re|, |Im|``) with the
scale accumulated as a logarithm.
"""

import cmath
import math

import numba as nb
import numpy as np

_HUGE = 1e300
_TINY = 1e-300


@nb.njit(cache=True)
def _exp_pair(t):
    r = math.exp(t.real)
    c = math.cos(t.imag)
    s = math.sin(t.imag)
    return complex(r * c, r * s), complex(c / r, -s / r)


@nb.njit(cache=True)
def _norm(z):
    return max(abs(z.real), abs(z.imag))


@nb.njit(cache=True)
def _log2cosh(z):
    if z.real >= 0.0:
        return z + cmath.log(1.0 + cmath.exp(-2.0 * z))
    return -z + cmath.log(1.0 + cmath.exp(2.0 * z))


@nb.njit(cache=True)
def _block_log_fallback(k, j, theta, X, logA, T):
    chi = T.shape[0]
    m = theta.shape[2]
    lmax = -np.inf
    for al in range(chi):
        for be in range(chi):
            s = logA[j, al]
            for mu in range(m):
                s += _log2cosh(theta[k, j, mu] + X[j, mu, al, be])
            T[al, be] = s
            if s.real > lmax:
                lmax = s.real
    if lmax == -np.inf:
        T[:, :] = 0.0
        return -np.inf
    for al in range(chi):
        for be in range(chi):
            T[al, be] = cmath.exp(T[al, be] - lmax)
    return lmax


@nb.njit(cache=True)
def _scale_down(T, vmax):
    inv = 1.0 / vmax
    for al in range(T.shape[0]):
        for be in range(T.shape[1]):
            T[al, be] *= inv


@nb.njit(cache=True)
def _fill_block(k, j, theta, X, Ep, Em, logA, A, eth, emth, T):
    """Scaled transfer matrix of block ``j``; returns ln of the scale factor."""
    chi = T.shape[0]
    m = theta.shape[2]
    for mu in range(m):
        eth[mu], emth[mu] = _exp_pair(theta[k, j, mu])
    vmax = 0.0
    total = 0.0
    for al in range(chi):
        for be in range(chi):
            p = A[j, al]
            for mu in range(m):
                p *= eth[mu] * Ep[j, mu, al, be] + emth[mu] * Em[j, mu, al, be]
            T[al, be] = p
            a = _norm(p)
            total += a
            if a > vmax:
                vmax = a
    if total < _HUGE and vmax > _TINY:
        _scale_down(T, vmax)
        return math.log(vmax)
    return _block_log_fallback(k, j, theta, X, logA, T)


@nb.njit(cache=True)
def _fill_block_with_sinh(k, j, theta, X, Ep, Em, logA, A, eth, emth, f, g, pf, sf, T, S):
    """As ``_fill_block`` and also ``S[mu] = T * tanh(phi_mu)`` on the same scale,
    computed as a leave-one-out product so zeros of cosh are harmless."""
    chi = T.shape[0]
    m = theta.shape[2]
    for mu in range(m):
        eth[mu], emth[mu] = _exp_pair(theta[k, j, mu])
    vmax = 0.0
    total = 0.0
    for al in range(chi):
        for be in range(chi):
            for mu in range(m):
                u = eth[mu] * Ep[j, mu, al, be]
                v = emth[mu] * Em[j, mu, al, be]
                f[mu] = u + v
                g[mu] = u - v
            pf[0] = A[j, al]
            for mu in range(m):
                pf[mu + 1] = pf[mu] * f[mu]
            sf[m] = 1.0
            for mu in range(m - 1, -1, -1):
                sf[mu] = sf[mu + 1] * f[mu]
            T[al, be] = pf[m]
            for mu in range(m):
                S[mu, al, be] = pf[mu] * g[mu] * sf[mu + 1]
            a = _norm(pf[m])
            total += a
            if a > vmax:
                vmax = a
    if total < _HUGE and vmax > _TINY:
        inv = 1.0 / vmax
        for al in range(chi):
            for be in range(chi):
                T[al, be] *= inv
                for mu in range(m):
                    S[mu, al, be] *= inv
        return math.log(vmax)
    scale = _block_log_fallback(k, j, theta, X, logA, T)
    for al in range(chi):
        for be in range(chi):
            for mu in range(m):
                S[mu, al, be] = T[al, be] * cmath.tanh(theta[k, j, mu] + X[j, mu, al, be])
    return scale


@nb.njit(cache=True)
def _matmul_norm(A, B, out):
    """``out = A @ B``; returns the max-norm of the product."""
    n = A.shape[0]
    inner = A.shape[1]
    p = B.shape[1]
    vmax = 0.0
    for i in range(n):
        for j in range(p):
            s = 0j
            for q in range(inner):
                s += A[i, q] * B[q, j]
            out[i, j] = s
            a = _norm(s)
            if a > vmax:
                vmax = a
    return vmax


@nb.njit(cache=True)
def _trace_product(A, B):
    s = 0j
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            s += A[i, j] * B[j, i]
    return s


@nb.njit(cache=True)
def log_psi_kernel(theta, X, Ep, Em, logA, A, closure, out):
    """ln tr(prod_j T_j(sigma_k) C) for every configuration ``k``."""
    B, NT, m = theta.shape
    chi = A.shape[1]
    T = np.empty((chi, chi), dtype=np.complex128)
    M = np.empty((chi, chi), dtype=np.complex128)
    tmp = np.empty((chi, chi), dtype=np.complex128)
    eth = np.empty(m, dtype=np.complex128)
    emth = np.empty(m, dtype=np.complex128)
    for k in range(B):
        log_total = 0.0
        zero = False
        for j in range(NT):
            s = _fill_block(k, j, theta, X, Ep, Em, logA, A, eth, emth, T)
            if s == -np.inf:
                zero = True
                break
            log_total += s
            if j == 0:
                M[:, :] = T
                continue
            vmax = _matmul_norm(M, T, tmp)
            if vmax == 0.0:
                zero = True
                break
            _scale_down(tmp, vmax)
            log_total += math.log(vmax)
            M, tmp = tmp, M
        if zero:
            out[k] = complex(-np.inf, 0.0)
            continue
        tr = _trace_product(M, closure)
        if tr == 0:
            out[k] = complex(-np.inf, 0.0)
        else:
            out[k] = log_total + cmath.log(tr)


@nb.njit(cache=True)
def _mark_zero(k, out, db, da, dwt, dwh):
    out[k] = complex(-np.inf, 0.0)
    db[k] = np.nan
    da[k] = np.nan
    dwt[k] = np.nan
    dwh[k] = np.nan


@nb.njit(cache=True)
def log_psi_grad_kernel(theta, X, Ep, Em, logA, A, closure, D, out, db, da, dwt, dwh):
    """Log amplitudes and d ln tr / d{b, a, w_tilde, w_hat} via prefix/suffix products."""
    B, NT, m = theta.shape
    chi = A.shape[1]
    n = D.shape[1]
    Ts = np.empty((NT, chi, chi), dtype=np.complex128)
    Ss = np.empty((NT, m, chi, chi), dtype=np.complex128)
    ls = np.empty(NT)
    P = np.empty((NT, chi, chi), dtype=np.complex128)
    lp = np.empty(NT)
    Q = np.empty((NT, chi, chi), dtype=np.complex128)
    lq = np.empty(NT)
    env = np.empty((chi, chi), dtype=np.complex128)
    eth = np.empty(m, dtype=np.complex128)
    emth = np.empty(m, dtype=np.complex128)
    f = np.empty(m, dtype=np.complex128)
    g = np.empty(m, dtype=np.complex128)
    pf = np.empty(m + 1, dtype=np.complex128)
    sf = np.empty(m + 1, dtype=np.complex128)
    for k in range(B):
        zero = False
        for j in range(NT):
            ls[j] = _fill_block_with_sinh(k, j, theta, X, Ep, Em, logA, A, eth, emth,
                                          f, g, pf, sf, Ts[j], Ss[j])
            if ls[j] == -np.inf:
                zero = True
        if zero:
            _mark_zero(k, out, db, da, dwt, dwh)
            continue
        # prefixes P[j] = T_0 ... T_{j-1}
        for a_ in range(chi):
            for b_ in range(chi):
                P[0, a_, b_] = 1.0 if a_ == b_ else 0.0
        lp[0] = 0.0
        for j in range(1, NT):
            vmax = _matmul_norm(P[j - 1], Ts[j - 1], P[j])
            if vmax > 0.0:
                _scale_down(P[j], vmax)
                lp[j] = lp[j - 1] + ls[j - 1] + math.log(vmax)
            else:
                lp[j] = -np.inf
        # suffixes Q[j] = T_{j+1} ... T_{NT-1} C
        Q[NT - 1, :, :] = closure
        lq[NT - 1] = 0.0
        for j in range(NT - 2, -1, -1):
            vmax = _matmul_norm(Ts[j + 1], Q[j + 1], Q[j])
            if vmax > 0.0:
                _scale_down(Q[j], vmax)
                lq[j] = lq[j + 1] + ls[j + 1] + math.log(vmax)
            else:
                lq[j] = -np.inf
        _matmul_norm(Ts[0], Q[0], env)
        full = 0j
        for a_ in range(chi):
            full += env[a_, a_]
        if full == 0:
            _mark_zero(k, out, db, da, dwt, dwh)
            continue
        lfull = ls[0] + lq[0]
        out[k] = lfull + cmath.log(full)
        for j in range(NT):
            # env[be, al] = (Q_j P_j)[be, al] is the environment of T_j[al, be]
            _matmul_norm(Q[j], P[j], env)
            factor = math.exp(lp[j] + ls[j] + lq[j] - lfull) / full
            for nu in range(n):
                da[k, j, nu] = 0.0
            for mu in range(m):
                db[k, j, mu] = 0.0
                for nu in range(n):
                    dwt[k, j, mu, nu] = 0.0
                    dwh[k, j, mu, nu] = 0.0
            for al in range(chi):
                for be in range(chi):
                    G = env[be, al] * factor
                    GT = G * Ts[j, al, be]
                    for nu in range(n):
                        da[k, j, nu] += GT * D[al, nu]
                    for mu in range(m):
                        GS = G * Ss[j, mu, al, be]
                        db[k, j, mu] += GS
                        for nu in range(n):
                            dwt[k, j, mu, nu] += GS * D[al, nu]
                            dwh[k, j, mu, nu] += GS * D[be, nu]
