"""Quenched polymer measures: exact path samplers and exact exit/crossing laws.

Paths are stored as their points ``x_0, ..., x_L``.  Step codes used by the
compiled samplers are 0 for an east step ``(1, 0)`` and 1 for a north step
``(0, 1)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import DualWeights, LogZLattice, ReverseLattice
from .randenv import Environment, RngStream
from .specfun import phi

__all__ = [
    "NumericalFailure",
    "PolymerPath",
    "ExitDistribution",
    "CrossingDistribution",
    "PathFunctionals",
    "sample_path",
    "sample_paths",
    "sample_dual_path",
    "dual_path_log_probability",
    "dual_kernel",
    "exit_distribution",
    "exit_phi_expectation",
    "last_step_probability",
    "dual_exit_at_least",
    "last_run_at_least",
    "crossing_distribution",
    "path_functionals",
    "write_path_csv",
    "write_distribution_csv",
]

# renormalize probability vectors whose total is off by at most this much
NORMALIZATION_TOL = 1e-10


class NumericalFailure(ArithmeticError):
    """An exact law failed its normalization check (corrupted lattice)."""


@dataclass(frozen=True)
class PolymerPath:
    points: np.ndarray  # (L + 1, 2) ints

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise ValueError("points must have shape (L + 1, 2)")
        d = np.diff(pts, axis=0)
        if len(d) and not np.all((d.sum(axis=1) == 1) & (d.min(axis=1) == 0)):
            raise ValueError("path must use unit up-right steps only")

    @classmethod
    def from_steps(cls, steps, origin=(0, 0)) -> "PolymerPath":
        steps = np.asarray(steps, dtype=np.int64)
        pts = np.zeros((len(steps) + 1, 2), dtype=np.int64)
        pts[0] = origin
        pts[1:, 0] = origin[0] + np.cumsum(steps == 0)
        pts[1:, 1] = origin[1] + np.cumsum(steps == 1)
        return cls(pts)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points, axis=0)[:, 1].astype(np.int8)

    @property
    def origin(self) -> tuple[int, int]:
        return int(self.points[0, 0]), int(self.points[0, 1])

    @property
    def exit_x(self) -> int:
        """Number of initial east steps (steps taken along the bottom row)."""
        return _leading_run(self.steps, 0)

    @property
    def exit_y(self) -> int:
        return _leading_run(self.steps, 1)


def _leading_run(steps, code):
    other = np.flatnonzero(steps != code)
    return int(other[0]) if other.size else int(len(steps))


@dataclass(frozen=True)
class ExitDistribution:
    """``px[k-1] = Q(xi_x = k)`` for k = 1..m and ``py[l-1] = Q(xi_y = l)``."""

    px: np.ndarray
    py: np.ndarray

    @property
    def prob_x(self) -> float:
        return float(self.px.sum())


@dataclass(frozen=True)
class CrossingDistribution:
    """``pv[i]`` = Q(the path steps from (i, level) to (i, level + 1))."""

    level: int
    pv: np.ndarray

    def mean(self) -> float:
        return float(np.arange(len(self.pv)) @ self.pv)


@dataclass(frozen=True)
class PathFunctionals:
    """Left/rightmost points per row and bottom/topmost points per column.

    ``v[j - j0]`` and ``vbar[j - j0]`` are the smallest and largest ``i`` with
    ``(i, j)`` on the path, for j = j0..n; ``w``/``wbar`` are the transposed
    counterparts for i = i0..m, where ``(i0, j0)`` is the origin.
    """

    v: np.ndarray
    vbar: np.ndarray
    w: np.ndarray
    wbar: np.ndarray
    exit_x: int
    exit_y: int


def _normalize(logp: np.ndarray) -> np.ndarray:
    p = np.exp(logp)
    total = p.sum()
    if not abs(total - 1.0) <= NORMALIZATION_TOL:
        raise NumericalFailure(f"probabilities sum to {total!r}")
    return p / total


def sample_path(lat: LogZLattice, env: Environment | None, rng: RngStream) -> PolymerPath:
    """One path from the quenched polymer measure, sampled backward from (m, n).

    From ``(i, j)`` the previous point is ``(i-1, j)`` with probability
    ``Z_{i-1,j} / (Z_{i-1,j} + Z_{i,j-1})``; moves are forced on the origin's
    row and column.
    """
    steps = _kernels.sample_backward_steps(lat.logz, lat.origin[0], lat.origin[1], rng.generator, 1)
    return PolymerPath.from_steps(steps[0], lat.origin)


def sample_paths(lat: LogZLattice, rng: RngStream, count: int) -> np.ndarray:
    """``count`` independent paths as an int8 step array of shape (count, L)."""
    return _kernels.sample_backward_steps(lat.logz, lat.origin[0], lat.origin[1], rng.generator, int(count))


def dual_kernel(lat: LogZLattice) -> np.ndarray:
    """Probability of an east step of the dual chain at every site.

    ``pi*(x, x + e1) = Z_{x+e1}^{-1} / (Z_{x+e1}^{-1} + Z_{x+e2}^{-1})``, equal
    to 1 on the north edge and 0 on the east edge; nan at the corner.
    """
    z = lat.logz
    m, n = lat.m, lat.n
    p = np.full((m + 1, n + 1), np.nan)
    a = -z[1:, :n]
    b = -z[:m, 1:]
    p[:m, :n] = np.exp(a - np.logaddexp(a, b))
    p[:m, n] = 1.0
    p[m, :n] = 0.0
    return p


def sample_dual_path(dual: DualWeights | None, lat: LogZLattice, rng: RngStream) -> PolymerPath:
    """One path of the dual measure, sampled forward from the origin."""
    steps = _kernels.sample_dual_steps(lat.logz, rng.generator, 1)
    return PolymerPath.from_steps(steps[0])


def dual_path_log_probability(dual: DualWeights, lat: LogZLattice, path: PolymerPath) -> float:
    """``log Q*(path) = sum_{k=0}^{L-1} log X_{x_k} - log Z_{m,n}``.

    The product includes the dual weight at the origin and excludes the
    endpoint.
    """
    pts = path.points[:-1]
    return float(dual.logx[pts[:, 0], pts[:, 1]].sum() - lat.log_partition)


def exit_distribution(env: Environment, lat: LogZLattice, rev: ReverseLattice) -> ExitDistribution:
    """Exact quenched law of the exit point from the axes."""
    if not env.has_boundary:
        raise ValueError("exit points need a boundary environment")
    m, n = env.m, env.n
    logz = lat.log_partition
    if n == 0:
        px = np.zeros(m)
        px[-1] = 1.0
        return ExitDistribution(px, np.zeros(0))
    if m == 0:
        py = np.zeros(n)
        py[-1] = 1.0
        return ExitDistribution(np.zeros(0), py)
    lx = np.cumsum(env.log_u0) + rev.logw[1:, 1] - logz
    ly = np.cumsum(env.log_v0) + rev.logw[1, 1:] - logz
    p = _normalize(np.concatenate([lx, ly]))
    return ExitDistribution(p[:m], p[m:])


def exit_phi_expectation(env: Environment, exd: ExitDistribution, axis: str = "x") -> float:
    """Quenched mean of ``sum_{i <= xi} Phi(shape, 1/Y_i)`` along one axis.

    ``axis="x"`` uses the horizontal boundary with shape ``theta``;
    ``axis="y"`` uses the vertical one with shape ``mu - theta``.
    """
    theta, rho, _ = env.params.shapes
    if axis == "x":
        shape, logw, p = theta, env.log_u0, exd.px
    elif axis == "y":
        shape, logw, p = rho, env.log_v0, exd.py
    else:
        raise ValueError("axis must be 'x' or 'y'")
    if len(p) == 0:
        return 0.0
    prefix = np.cumsum(phi(shape, np.exp(-logw)))
    return float(p @ prefix)


def last_step_probability(lat: LogZLattice) -> float:
    """Quenched probability that the final step is east: ``U^{-1} / (U^{-1} + V^{-1})``."""
    z = lat.logz
    m, n = lat.m, lat.n
    if n == lat.origin[1]:
        return 1.0
    if m == lat.origin[0]:
        return 0.0
    a, b = z[m - 1, n], z[m, n - 1]
    return float(np.exp(a - np.logaddexp(a, b)))


def dual_exit_at_least(lat: LogZLattice, k: int) -> float:
    """Dual-measure probability that the first ``k`` steps are all east."""
    if k <= 0:
        return 1.0
    if k > lat.m:
        return 0.0
    z = lat.logz
    if lat.n == 0:
        return 1.0
    i = np.arange(k)
    a = -z[i + 1, 0]
    b = -z[i, 1]
    return float(np.exp(np.sum(a - np.logaddexp(a, b))))


def last_run_at_least(env: Environment, lat: LogZLattice, k: int) -> float:
    """Quenched probability that the last ``k`` steps are all east.

    Equals ``Z_{m-k,n} prod_{i=m-k+1}^{m} Y_{i,n} / Z_{m,n}``.
    """
    if k <= 0:
        return 1.0
    m, n = env.m, env.n
    if k > m:
        return 0.0
    w = env.full_log_weights()
    return float(np.exp(lat.logz[m - k, n] + w[m - k + 1:, n].sum() - lat.log_partition))


def crossing_distribution(level: int, lat: LogZLattice, rev: ReverseLattice) -> CrossingDistribution:
    """Exact law of the rightmost point ``vbar(level)`` of the path on row ``level``."""
    if not 0 <= level < lat.n:
        raise ValueError("need 0 <= level < n")
    lp = lat.logz[:, level] + rev.logw[:, level + 1] - lat.log_partition
    return CrossingDistribution(level, _normalize(lp))


def path_functionals(path: PolymerPath) -> PathFunctionals:
    pts = path.points
    i0, j0 = path.origin
    m, n = int(pts[-1, 0]), int(pts[-1, 1])
    v = np.full(n - j0 + 1, np.iinfo(np.int64).max)
    vbar = np.full(n - j0 + 1, -1)
    w = np.full(m - i0 + 1, np.iinfo(np.int64).max)
    wbar = np.full(m - i0 + 1, -1)
    np.minimum.at(v, pts[:, 1] - j0, pts[:, 0])
    np.maximum.at(vbar, pts[:, 1] - j0, pts[:, 0])
    np.minimum.at(w, pts[:, 0] - i0, pts[:, 1])
    np.maximum.at(wbar, pts[:, 0] - i0, pts[:, 1])
    return PathFunctionals(v, vbar, w, wbar, path.exit_x, path.exit_y)


def write_path_csv(path: PolymerPath, dest) -> None:
    with open(dest, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "i", "j"])
        for k, (i, j) in enumerate(path.points):
            wr.writerow([k, int(i), int(j)])


def write_distribution_csv(probs, dest, first_index: int = 0) -> None:
    with open(dest, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["index", "probability"])
        for k, p in enumerate(np.asarray(probs, dtype=float)):
            wr.writerow([k + first_index, repr(float(p))])
