"""Exact partition-function lattices in log space.

Forward lattices hold ``log Z_{(k,l),(i,j)}`` (starting weight excluded),
reverse lattices hold ``log Z^box_{(i,j),(m,n)}`` (starting weight included).
Ratio fields, dual weights and the reversed system are derived from a forward
lattice without further randomness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .randenv import Environment, _read_array, _read_header, _write_container

__all__ = [
    "LogZLattice",
    "ReverseLattice",
    "DualWeights",
    "forward_logZ",
    "bulk_logZ",
    "reverse_logW",
    "ratio_fields",
    "dual_weights",
    "star_lattice",
    "star_environment",
    "total_logZ",
    "restricted_logZ",
    "dump_lattice",
    "load_lattice",
]

LATTICE_MAGIC = b"LGPZ"


@dataclass(frozen=True)
class LogZLattice:
    """Forward field ``logz[i, j] = log Z_{origin,(i,j)}``.

    Sites not reachable from ``origin`` carry ``-inf``.
    """

    m: int
    n: int
    logz: np.ndarray
    origin: tuple[int, int] = (0, 0)

    @property
    def log_partition(self) -> float:
        return float(self.logz[self.m, self.n])


@dataclass(frozen=True)
class ReverseLattice:
    """``logw[i, j] = log Z^box_{(i,j),(m,n)}``."""

    m: int
    n: int
    logw: np.ndarray


@dataclass(frozen=True)
class DualWeights:
    """``logx[i, j] = log X_{i,j}``.

    Interior values (i < m, j < n) come from ``1/X_{i,j} = 1/U_{i+1,j} +
    1/V_{i,j+1}``; on the north edge ``X_{i,n} = U_{i+1,n}``, on the east edge
    ``X_{m,j} = V_{m,j+1}``.  The corner ``[m, n]`` is undefined (nan).
    """

    m: int
    n: int
    logx: np.ndarray


def _forward_wavefront(w: np.ndarray) -> np.ndarray:
    # anti-diagonal sweep; each diagonal depends only on the previous one
    m, n = w.shape[0] - 1, w.shape[1] - 1
    z = np.empty_like(w)
    z[0, 0] = 0.0
    z[1:, 0] = np.cumsum(w[1:, 0])
    z[0, 1:] = np.cumsum(w[0, 1:])
    for d in range(2, m + n + 1):
        i = np.arange(max(1, d - n), min(m, d - 1) + 1)
        if i.size == 0:
            continue
        j = d - i
        z[i, j] = w[i, j] + np.logaddexp(z[i - 1, j], z[i, j - 1])
    return z


def forward_logZ(env: Environment, wavefront: bool = False) -> LogZLattice:
    """Forward lattice of the model with boundary weights, ``logz[0,0] = 0``."""
    if not env.has_boundary:
        raise ValueError("forward_logZ needs boundary weights; use bulk_logZ")
    w = env.full_log_weights()
    z = _forward_wavefront(w) if wavefront else _kernels.forward_full(w)
    return LogZLattice(env.m, env.n, z)


def bulk_logZ(env: Environment, start: tuple[int, int] = (1, 1)) -> LogZLattice:
    """``log Z_{start,(i,j)}`` using bulk weights only.

    The weight at ``start`` is excluded, as is everything on the axes.
    """
    k, l = start
    if not (1 <= k <= env.m and 1 <= l <= env.n):
        raise ValueError(f"start {start} outside the bulk of the rectangle")
    z = np.full((env.m + 1, env.n + 1), -np.inf)
    z[k:, l:] = _kernels.forward_full(np.ascontiguousarray(env.log_y[k - 1:, l - 1:]))
    return LogZLattice(env.m, env.n, z, origin=(k, l))


def reverse_logW(env: Environment, endpoint: tuple[int, int] | None = None) -> ReverseLattice:
    """Reverse lattice towards the far corner of ``env``.

    Boundary weights enter as ``Y_{i,0} = U_{i,0}``, ``Y_{0,j} = V_{0,j}`` and
    ``Y_{0,0} = 1``, so ``logw[0, 0] = log Z_{m,n}``.
    """
    if endpoint is not None and tuple(endpoint) != (env.m, env.n):
        raise ValueError("endpoint must be the far corner (m, n) of the environment")
    return ReverseLattice(env.m, env.n, _kernels.reverse_full(env.full_log_weights()))


def ratio_fields(lat: LogZLattice) -> tuple[np.ndarray, np.ndarray]:
    """``log U_{i,j} = log Z_{i,j} - log Z_{i-1,j}`` and the vertical analogue.

    Undefined entries (``i = 0`` for U, ``j = 0`` for V) are nan.
    """
    z = lat.logz
    log_u = np.full_like(z, np.nan)
    log_v = np.full_like(z, np.nan)
    log_u[1:, :] = z[1:, :] - z[:-1, :]
    log_v[:, 1:] = z[:, 1:] - z[:, :-1]
    return log_u, log_v


def dual_weights(lat: LogZLattice, env: Environment | None = None) -> DualWeights:
    """Dual weights from the ratio fields of ``lat`` (``env`` is not needed)."""
    log_u, log_v = ratio_fields(lat)
    m, n = lat.m, lat.n
    logx = np.full((m + 1, n + 1), np.nan)
    logx[:m, :n] = -np.logaddexp(-log_u[1:, :n], -log_v[:m, 1:])
    logx[:m, n] = log_u[1:, n]
    logx[m, :n] = log_v[m, 1:]
    return DualWeights(m, n, logx)


def star_lattice(lat: LogZLattice) -> LogZLattice:
    """Reversed partition functions ``Z*_{i,j} = Z_{m,n} / Z_{m-i,n-j}``."""
    z = lat.logz
    return LogZLattice(lat.m, lat.n, z[-1, -1] - z[::-1, ::-1])


def star_environment(lat: LogZLattice, env: Environment | None = None) -> Environment:
    """The reversed environment (U*, V*, Y*) read off a forward lattice.

    ``U*_{i,0} = U_{m-i+1,n}``, ``V*_{0,j} = V_{m,n-j+1}`` and
    ``Y*_{i,j} = X_{m-i,n-j}``.  Running :func:`forward_logZ` on it reproduces
    :func:`star_lattice`.
    """
    m, n = lat.m, lat.n
    log_u, log_v = ratio_fields(lat)
    logx = dual_weights(lat).logx
    log_u0 = log_u[m:0:-1, n].copy()
    log_v0 = log_v[m, n:0:-1].copy()
    log_y = logx[m - 1::-1, n - 1::-1].copy() if m and n else np.empty((m, n))
    src = env
    return Environment(
        m=m, n=n, log_u0=log_u0, log_v0=log_v0, log_y=log_y, has_boundary=True,
        mu=src.mu if src is not None else math.nan,
        params=src.params if src is not None else None,
        seed=src.seed if src is not None else 0,
        stream_id=src.stream_id if src is not None else 0,
    )


def total_logZ(env: Environment, mode: str = "boundary", N: int | None = None) -> float:
    """Free-endpoint partition function over the line ``i + j = N``.

    ``mode="bulk"``: ``log sum_{k=1}^{N-1} Z_{(1,1),(k,N-k)}`` (needs
    ``m, n >= N - 1``, default ``N = min(m, n) + 1``).
    ``mode="boundary"``: ``log sum_{l=0}^{N} Z_{l,N-l}`` (needs ``m, n >= N``,
    default ``N = min(m, n)``).
    """
    if mode == "bulk":
        N = min(env.m, env.n) + 1 if N is None else N
        if N < 2 or N - 1 > min(env.m, env.n):
            raise ValueError("environment does not cover the triangle")
        z = bulk_logZ(env).logz
        k = np.arange(1, N)
        return float(np.logaddexp.reduce(z[k, N - k]))
    if mode == "boundary":
        N = min(env.m, env.n) if N is None else N
        if N < 1 or N > min(env.m, env.n):
            raise ValueError("environment does not cover the triangle")
        z = forward_logZ(env).logz
        l = np.arange(0, N + 1)
        return float(np.logaddexp.reduce(z[l, N - l]))
    raise ValueError(f"unknown mode {mode!r}")


def restricted_logZ(env: Environment, rev: ReverseLattice, axis: str, lo: int = 1, hi: int | None = None) -> float:
    """``log Z_{m,n}(lo <= xi <= hi)`` from the exit decomposition.

    ``axis`` is ``"x"`` (exit along the horizontal axis) or ``"y"``.  Returns
    ``-inf`` for an empty range.
    """
    if axis == "x":
        pre, tail, top = np.cumsum(env.log_u0), rev.logw[1:, 1] if env.n else None, env.m
    elif axis == "y":
        pre, tail, top = np.cumsum(env.log_v0), rev.logw[1, 1:] if env.m else None, env.n
    else:
        raise ValueError("axis must be 'x' or 'y'")
    hi = top if hi is None else min(hi, top)
    lo = max(lo, 1)
    if hi < lo:
        return -np.inf
    if tail is None:
        # single row or column: the only path exits at the far end
        return float(pre[-1]) if lo <= top <= hi else -np.inf
    terms = pre[lo - 1:hi] + tail[lo - 1:hi]
    return float(np.logaddexp.reduce(terms))


def dump_lattice(lat: LogZLattice, path, env: Environment | None = None) -> None:
    """Write ``logz`` in the ``LGPZ`` container (same header as ``LGPE``)."""
    theta = env.params.theta if env is not None and env.params is not None else math.nan
    mu = env.mu if env is not None else math.nan
    seed = env.seed if env is not None else 0
    stream = env.stream_id if env is not None else 0
    flags = (lat.origin[0] << 1) | (lat.origin[1] << 33)
    with open(path, "wb") as fh:
        _write_container(fh, LATTICE_MAGIC, lat.m, lat.n, flags, seed, stream, theta, mu, (lat.logz,))


def load_lattice(path) -> LogZLattice:
    with open(path, "rb") as fh:
        m, n, flags, _seed, _stream, _theta, _mu = _read_header(fh, LATTICE_MAGIC)
        logz = _read_array(fh, (m + 1) * (n + 1), (m + 1, n + 1))
    origin = ((flags >> 1) & 0xFFFFFFFF, (flags >> 33) & 0x7FFFFFFF)
    return LogZLattice(m, n, logz, origin=origin)

