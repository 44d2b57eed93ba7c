"""Reproducible log-gamma random environments.

Every replica draws from its own Philox stream keyed by ``(master_seed,
stream_id)``, so environments are a pure function of those two integers and
never depend on how replicas are scheduled across workers.  Weights are kept
as logarithms throughout: ``1/Gamma(theta)`` overflows for small ``theta``.

Draw order inside one environment is fixed: horizontal boundary
``log U_{i,0}`` (i = 1..m), vertical boundary ``log V_{0,j}`` (j = 1..n), then
bulk ``log Y_{i,j}`` row by row with ``i`` outer.  The fused kernels in
:mod:`lgpolymer._kernels` rely on this order.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from .specfun import ModelParams

__all__ = [
    "RngStream",
    "Environment",
    "sample_gamma",
    "sample_log_gamma",
    "build_env",
    "build_bulk_env",
    "perturb_boundary_ordered",
    "sub_environment",
    "dump_env",
    "load_env",
]

_MASK64 = (1 << 64) - 1
ENV_MAGIC = b"LGPE"
FORMAT_VERSION = 1
# magic, version, m, n, flags, seed, stream_id, theta, mu
_HEADER = struct.Struct("<4sIQQQQQdd")
FLAG_BOUNDARY = 1


class RngStream:
    """Counter-based random stream owned by a single replica.

    Wraps a numpy Philox generator whose 128-bit key is the pair
    ``(master_seed, stream_id)``.  Not safe to share between threads.
    """

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    @property
    def counter(self) -> np.ndarray:
        return self.generator.bit_generator.state["state"]["counter"].copy()

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


@nb.njit(nogil=True, cache=True)
def _log_gamma_ge1(gen, d, c):
    # Marsaglia-Tsang squeeze/accept; returns log of a Gamma(d + 1/3) variate
    while True:
        x = gen.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = 1.0 - gen.random()
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return math.log(d) + math.log(v)
        lv = math.log(v)
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + lv):
            return math.log(d) + lv


@nb.njit(nogil=True, cache=True)
def _log_gamma(gen, shape):
    if shape >= 1.0:
        d = shape - 1.0 / 3.0
        return _log_gamma_ge1(gen, d, 1.0 / math.sqrt(9.0 * d))
    d = shape + 1.0 - 1.0 / 3.0
    g = _log_gamma_ge1(gen, d, 1.0 / math.sqrt(9.0 * d))
    # boosting: G_a = G_{a+1} * U^{1/a}, taken in log form
    return g + math.log(1.0 - gen.random()) / shape


@nb.njit(nogil=True, cache=True)
def _fill_log_gamma(gen, shape, out):
    flat = out.reshape(-1)
    for k in range(flat.size):
        flat[k] = _log_gamma(gen, shape)


@nb.njit(nogil=True, cache=True)
def _fill_neg_log_gamma(gen, shape, out):
    flat = out.reshape(-1)
    for k in range(flat.size):
        flat[k] = -_log_gamma(gen, shape)


def _check_shape(shape):
    shape = float(shape)
    if not (math.isfinite(shape) and shape > 0.0):
        raise ValueError(f"gamma shape must be positive, got {shape}")
    return shape


def sample_log_gamma(shape: float, rng: RngStream, size=None):
    """Logarithms of Gamma(shape, 1) variates (safe for tiny shapes)."""
    shape = _check_shape(shape)
    out = np.empty(() if size is None else size, dtype=np.float64)
    _fill_log_gamma(rng.generator, shape, out.reshape(-1))
    return float(out) if size is None else out


def sample_gamma(shape: float, rng: RngStream, size=None):
    """Gamma(shape, 1) variates.

    Squeeze-accept with a normal proposal for shape >= 1 and the boosting
    identity ``G_a = G_{a+1} U^{1/a}`` below 1.
    """
    res = sample_log_gamma(shape, rng, size)
    return math.exp(res) if size is None else np.exp(res)


@dataclass(frozen=True)
class Environment:
    """Log-weights of one realization of the random environment.

    ``log_u0[i-1] = log U_{i,0}``, ``log_v0[j-1] = log V_{0,j}`` and
    ``log_y[i-1, j-1] = log Y_{i,j}``.  No weight sits at the origin.  A bulk
    environment has empty boundary arrays and ``params`` set to ``None``.
    """

    m: int
    n: int
    log_u0: np.ndarray
    log_v0: np.ndarray
    log_y: np.ndarray
    has_boundary: bool
    mu: float
    params: ModelParams | None = None
    seed: int = 0
    stream_id: int = 0

    def full_log_weights(self) -> np.ndarray:
        """(m+1) x (n+1) array of log Y_{i,j} with the boundary folded in.

        The origin entry is 0 (weight 1).  For bulk environments the axes
        carry ``-inf`` so that no path may use them.
        """
        w = np.empty((self.m + 1, self.n + 1))
        w[0, 0] = 0.0
        if self.has_boundary:
            w[1:, 0] = self.log_u0
            w[0, 1:] = self.log_v0
        else:
            w[1:, 0] = -np.inf
            w[0, 1:] = -np.inf
        w[1:, 1:] = self.log_y
        return w

    def same_weights(self, other: "Environment") -> bool:
        return (
            self.m == other.m
            and self.n == other.n
            and self.has_boundary == other.has_boundary
            and np.array_equal(self.log_u0, other.log_u0)
            and np.array_equal(self.log_v0, other.log_v0)
            and np.array_equal(self.log_y, other.log_y)
        )


def build_env(m: int, n: int, params: ModelParams, rng: RngStream) -> Environment:
    """Environment with boundary weights.

    ``1/U_{i,0} ~ Gamma(theta)``, ``1/V_{0,j} ~ Gamma(mu - theta)`` and
    ``1/Y_{i,j} ~ Gamma(mu)``, all independent.  ``m`` or ``n`` may be zero
    (a single boundary row or column).
    """
    if m < 0 or n < 0 or m + n < 1:
        raise ValueError("need m, n >= 0 with m + n >= 1")
    theta, rho, mu = params.shapes
    gen = rng.generator
    log_u0 = np.empty(m)
    log_v0 = np.empty(n)
    log_y = np.empty((m, n))
    _fill_neg_log_gamma(gen, theta, log_u0)
    _fill_neg_log_gamma(gen, rho, log_v0)
    _fill_neg_log_gamma(gen, mu, log_y)
    return Environment(
        m=m, n=n, log_u0=log_u0, log_v0=log_v0, log_y=log_y, has_boundary=True,
        mu=mu, params=params, seed=rng.master_seed, stream_id=rng.stream_id,
    )


def build_bulk_env(m: int, n: int, mu: float, rng: RngStream) -> Environment:
    """Environment with i.i.d. bulk weights ``1/Y_{i,j} ~ Gamma(mu)`` only."""
    if m < 1 or n < 1:
        raise ValueError("need m, n >= 1")
    mu = _check_shape(mu)
    log_y = np.empty((m, n))
    _fill_neg_log_gamma(rng.generator, mu, log_y)
    return Environment(
        m=m, n=n, log_u0=np.empty(0), log_v0=np.empty(0), log_y=log_y,
        has_boundary=False, mu=mu, params=None, seed=rng.master_seed,
        stream_id=rng.stream_id,
    )


def sub_environment(env: Environment, m: int, n: int) -> Environment:
    """The same weights restricted to the rectangle [0, m] x [0, n]."""
    if not (0 <= m <= env.m and 0 <= n <= env.n):
        raise ValueError("sub-rectangle must lie inside the environment")
    if env.has_boundary:
        return replace(env, m=m, n=n, log_u0=env.log_u0[:m].copy(), log_v0=env.log_v0[:n].copy(),
                       log_y=env.log_y[:m, :n].copy())
    return replace(env, m=m, n=n, log_y=env.log_y[:m, :n].copy())


def perturb_boundary_ordered(env: Environment, delta: float) -> Environment:
    """Copy with ``U_{i,0}`` lowered and ``V_{0,j}`` raised by the factor e^delta.

    The result is the tilde system of the monotone coupling: smaller
    horizontal and larger vertical boundary weights, identical bulk.
    """
    if not env.has_boundary:
        raise ValueError("environment has no boundary")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return replace(env, log_u0=env.log_u0 - delta, log_v0=env.log_v0 + delta)


def _write_container(fh, magic, m, n, flags, seed, stream_id, theta, mu, arrays):
    fh.write(_HEADER.pack(magic, FORMAT_VERSION, m, n, flags, seed, stream_id, theta, mu))
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_header(fh, magic):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated header")
    got, version, m, n, flags, seed, stream_id, theta, mu = _HEADER.unpack(raw)
    if got != magic:
        raise ValueError(f"bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    return m, n, flags, seed, stream_id, theta, mu


def _read_array(fh, count, shape=None):
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError("truncated payload")
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a if shape is None else a.reshape(shape)


def dump_env(env: Environment, path) -> None:
    """Write the little-endian ``LGPE`` container (debugging aid)."""
    theta = env.params.theta if env.params is not None else math.nan
    with open(path, "wb") as fh:
        _write_container(
            fh, ENV_MAGIC, env.m, env.n, FLAG_BOUNDARY if env.has_boundary else 0,
            env.seed, env.stream_id, theta, env.mu, (env.log_u0, env.log_v0, env.log_y),
        )


def load_env(path) -> Environment:
    with open(path, "rb") as fh:
        m, n, flags, seed, stream_id, theta, mu = _read_header(fh, ENV_MAGIC)
        boundary = bool(flags & FLAG_BOUNDARY)
        log_u0 = _read_array(fh, m if boundary else 0)
        log_v0 = _read_array(fh, n if boundary else 0)
        log_y = _read_array(fh, m * n, (m, n))
    params = ModelParams(theta, mu) if boundary else None
    return Environment(
        m=m, n=n, log_u0=log_u0, log_v0=log_v0, log_y=log_y, has_boundary=boundary,
        mu=mu, params=params, seed=seed, stream_id=stream_id,
    )
