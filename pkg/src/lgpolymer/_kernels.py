"""Compiled log-domain kernels.

All lattices are indexed ``[i, j]`` with ``i`` the horizontal coordinate.
A "full" weight array has shape (m+1, n+1) and holds ``log Y_{i,j}``; its
``[0, 0]`` entry is never read by the forward recursions (no weight at the
starting corner).  ``-inf`` weights block a site.
"""
import math

import numba as nb
import numpy as np

from .randenv import _log_gamma

NEG_INF = -np.inf


@nb.njit(nogil=True, cache=True, inline="always")
def lse2(a, b):
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


@nb.njit(nogil=True, cache=True)
def forward_full(w):
    """log Z_{(0,0),(i,j)} for every site of the grid ``w``."""
    m = w.shape[0] - 1
    n = w.shape[1] - 1
    z = np.empty((m + 1, n + 1))
    z[0, 0] = 0.0
    for j in range(1, n + 1):
        z[0, j] = z[0, j - 1] + w[0, j]
    for i in range(1, m + 1):
        z[i, 0] = z[i - 1, 0] + w[i, 0]
        for j in range(1, n + 1):
            z[i, j] = w[i, j] + lse2(z[i - 1, j], z[i, j - 1])
    return z


@nb.njit(nogil=True, cache=True)
def reverse_full(w):
    """log Z^box_{(i,j),(m,n)} (starting weight included) for every site."""
    m = w.shape[0] - 1
    n = w.shape[1] - 1
    r = np.empty((m + 1, n + 1))
    r[m, n] = w[m, n]
    for j in range(n - 1, -1, -1):
        r[m, j] = r[m, j + 1] + w[m, j]
    for i in range(m - 1, -1, -1):
        r[i, n] = r[i + 1, n] + w[i, n]
        for j in range(n - 1, -1, -1):
            r[i, j] = w[i, j] + lse2(r[i + 1, j], r[i, j + 1])
    return r


@nb.njit(nogil=True, cache=True)
def crossing_log_weights(w, level):
    """Unnormalized log Q{path crosses (i, level) -> (i, level+1)}, i = 0..m.

    Only the forward half below the level and the reverse half above it are
    computed.
    """
    m = w.shape[0] - 1
    n = w.shape[1] - 1
    lo = np.empty(level + 1)
    # forward over columns j <= level, rolling in i
    lo[0] = 0.0
    for j in range(1, level + 1):
        lo[j] = lo[j - 1] + w[0, j]
    fwd = np.empty(m + 1)
    fwd[0] = lo[level]
    for i in range(1, m + 1):
        lo[0] = lo[0] + w[i, 0]
        for j in range(1, level + 1):
            lo[j] = w[i, j] + lse2(lo[j], lo[j - 1])
        fwd[i] = lo[level]
    # reverse over columns j >= level + 1, rolling in i downward
    k = n - level
    hi = np.empty(k)
    hi[k - 1] = w[m, n]
    for jj in range(k - 2, -1, -1):
        hi[jj] = hi[jj + 1] + w[m, level + 1 + jj]
    out = np.empty(m + 1)
    out[m] = fwd[m] + hi[0]
    for i in range(m - 1, -1, -1):
        hi[k - 1] = hi[k - 1] + w[i, n]
        for jj in range(k - 2, -1, -1):
            hi[jj] = w[i, level + 1 + jj] + lse2(hi[jj], hi[jj + 1])
        out[i] = fwd[i] + hi[0]
    return out


@nb.njit(nogil=True, cache=True)
def _draw_neg_log_gamma(gen, shape, count):
    out = np.empty(count)
    for k in range(count):
        out[k] = -_log_gamma(gen, shape)
    return out


@nb.njit(nogil=True, cache=True)
def fused_boundary_logz(gen, m, n, theta, mu):
    """log Z_{m,n} drawing the environment on the fly (O(n) memory).

    Consumes the stream exactly as ``build_env`` does.
    """
    u0 = _draw_neg_log_gamma(gen, theta, m)
    v0 = _draw_neg_log_gamma(gen, mu - theta, n)
    z = np.empty(n + 1)
    z[0] = 0.0
    for j in range(1, n + 1):
        z[j] = z[j - 1] + v0[j - 1]
    for i in range(1, m + 1):
        z[0] += u0[i - 1]
        for j in range(1, n + 1):
            z[j] = -_log_gamma(gen, mu) + lse2(z[j], z[j - 1])
    return z[n]


@nb.njit(nogil=True, cache=True)
def fused_bulk_logz(gen, m, n, mu):
    """log Z_{(1,1),(m,n)} drawing bulk weights on the fly.

    Consumes the stream exactly as ``build_bulk_env`` does; Y_{1,1} is drawn
    but unused.
    """
    z = np.empty(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            y = -_log_gamma(gen, mu)
            if i == 1:
                z[j] = 0.0 if j == 1 else z[j - 1] + y
            elif j == 1:
                z[1] = z[1] + y
            else:
                z[j] = y + lse2(z[j], z[j - 1])
    return z[n]


@nb.njit(nogil=True, cache=True)
def fused_boundary_antidiagonal(gen, big_n, theta, mu):
    """log Z_{l, N-l} for l = 0..N with boundary weights on the triangle.

    Draw order: U_{i,0} (i=1..N), V_{0,j} (j=1..N), then Y_{i,j} for
    i = 1..N-1 and j = 1..N-i.
    """
    u0 = _draw_neg_log_gamma(gen, theta, big_n)
    v0 = _draw_neg_log_gamma(gen, mu - theta, big_n)
    z = np.empty(big_n + 1)
    out = np.empty(big_n + 1)
    z[0] = 0.0
    for j in range(1, big_n + 1):
        z[j] = z[j - 1] + v0[j - 1]
    out[0] = z[big_n]
    for i in range(1, big_n + 1):
        z[0] += u0[i - 1]
        for j in range(1, big_n - i + 1):
            z[j] = -_log_gamma(gen, mu) + lse2(z[j], z[j - 1])
        out[i] = z[big_n - i]
    return out


@nb.njit(nogil=True, cache=True)
def fused_bulk_antidiagonal(gen, big_n, mu):
    """log Z_{(1,1),(k, N-k)} for k = 1..N-1 (returned at index k-1).

    Draw order: Y_{i,j} for i = 1..N-1 and j = 1..N-i.
    """
    z = np.empty(big_n)
    out = np.empty(big_n - 1)
    for i in range(1, big_n):
        for j in range(1, big_n - i + 1):
            y = -_log_gamma(gen, mu)
            if i == 1:
                z[j] = 0.0 if j == 1 else z[j - 1] + y
            elif j == 1:
                z[1] = z[1] + y
            else:
                z[j] = y + lse2(z[j], z[j - 1])
        out[i - 1] = z[big_n - i]
    return out


@nb.njit(nogil=True, cache=True)
def sample_backward_steps(logz, oi, oj, gen, count):
    """Polymer paths ending at the far corner, sampled backward.

    Returns ``(count, L)`` int8 steps in forward order, 0 = east, 1 = north,
    for paths from ``(oi, oj)`` to ``(m, n)``.
    """
    m = logz.shape[0] - 1
    n = logz.shape[1] - 1
    length = (m - oi) + (n - oj)
    steps = np.empty((count, length), dtype=np.int8)
    for c in range(count):
        i = m
        j = n
        for k in range(length - 1, -1, -1):
            if i == oi:
                steps[c, k] = 1
                j -= 1
            elif j == oj:
                steps[c, k] = 0
                i -= 1
            else:
                a = logz[i - 1, j]
                b = logz[i, j - 1]
                p_east = math.exp(a - lse2(a, b))
                if gen.random() < p_east:
                    steps[c, k] = 0
                    i -= 1
                else:
                    steps[c, k] = 1
                    j -= 1
    return steps


@nb.njit(nogil=True, cache=True)
def sample_dual_steps(logz, gen, count):
    """Forward Markov sampling of the dual measure from (0, 0)."""
    m = logz.shape[0] - 1
    n = logz.shape[1] - 1
    length = m + n
    steps = np.empty((count, length), dtype=np.int8)
    for c in range(count):
        i = 0
        j = 0
        for k in range(length):
            if j == n:
                steps[c, k] = 0
                i += 1
            elif i == m:
                steps[c, k] = 1
                j += 1
            else:
                # pi*(x, x+e1) = Z_{x+e1}^-1 / (Z_{x+e1}^-1 + Z_{x+e2}^-1)
                a = -logz[i + 1, j]
                b = -logz[i, j + 1]
                p_east = math.exp(a - lse2(a, b))
                if gen.random() < p_east:
                    steps[c, k] = 0
                    i += 1
                else:
                    steps[c, k] = 1
                    j += 1
    return steps
