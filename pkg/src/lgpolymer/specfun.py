"""Special functions and closed-form quantities of the log-gamma polymer.

Digamma and trigamma are evaluated by upward recurrence to x >= 10 followed
by the Stirling-type asymptotic series, which keeps the absolute error near
1e-14 on (0, 20] without lookup tables.  Everything accepts scalars or numpy
arrays unless noted otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "CharacteristicShape",
    "digamma",
    "trigamma",
    "phi",
    "phi_head",
    "phi_tail",
    "theta_char",
    "free_energy_pt",
    "mean_logZ",
    "char_rectangle",
    "g_boundary",
    "sigma2_boundary",
]

_SHIFT_TO = 10.0
# B_2k / (2k) for k = 1..5, highest order first (Horner in 1/x^2)
_DIGAMMA_COEFS = (1.0 / 132.0, -1.0 / 240.0, 1.0 / 252.0, -1.0 / 120.0, 1.0 / 12.0)
# B_2k for k = 1..5, highest order first
_TRIGAMMA_COEFS = (5.0 / 66.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 1.0 / 6.0)

_LAG_NODES, _LAG_WEIGHTS = np.polynomial.laguerre.laggauss(64)


@dataclass(frozen=True)
class ModelParams:
    """Boundary shape ``theta`` and bulk shape ``mu`` (gamma scale fixed to 1).

    Horizontal boundary weights have ``1/U ~ Gamma(theta)``, vertical ones
    ``1/V ~ Gamma(mu - theta)`` and bulk weights ``1/Y ~ Gamma(mu)``.
    """

    theta: float
    mu: float

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.mu)):
            raise ValueError("theta and mu must be finite")
        if not 0.0 < self.theta < self.mu:
            raise ValueError(f"need 0 < theta < mu, got theta={self.theta}, mu={self.mu}")

    @property
    def shapes(self) -> tuple[float, float, float]:
        """Gamma shapes of the (horizontal, vertical, bulk) weight families."""
        return self.theta, self.mu - self.theta, self.mu


@dataclass(frozen=True)
class CharacteristicShape:
    N: float
    m: int
    n: int
    gamma_dev: float

    def satisfies(self, params: ModelParams) -> bool:
        tol = self.gamma_dev * self.N ** (2.0 / 3.0)
        return (
            self.m >= 1
            and self.n >= 1
            and abs(self.m - self.N * float(trigamma(params.mu - params.theta))) <= tol
            and abs(self.n - self.N * float(trigamma(params.theta))) <= tol
        )


def _positive_array(x, name="x"):
    arr = np.array(x, dtype=float, copy=True)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError(f"{name} must be positive and finite")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def digamma(x):
    """psi_0(x) = d/dx log Gamma(x) for x > 0."""
    z = _positive_array(x)
    acc = np.zeros_like(z)
    small = z < _SHIFT_TO
    while np.any(small):
        acc[small] -= 1.0 / z[small]
        z[small] += 1.0
        small = z < _SHIFT_TO
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in _DIGAMMA_COEFS:
        series = series * inv2 + c
    res = acc + np.log(z) - 0.5 / z - series * inv2
    return _out(res, x)


def trigamma(x):
    """psi_1(x) = sum_k (x + k)^-2 for x > 0."""
    z = _positive_array(x)
    acc = np.zeros_like(z)
    small = z < _SHIFT_TO
    while np.any(small):
        acc[small] += 1.0 / (z[small] * z[small])
        z[small] += 1.0
        small = z < _SHIFT_TO
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in _TRIGAMMA_COEFS:
        series = series * inv2 + c
    res = acc + inv + 0.5 * inv2 + series * inv2 * inv
    return _out(res, x)


def phi_head(theta: float, x):
    """Phi(theta, x) from the integral over (0, x).

    With y = x t and t = exp(-v / theta) the integrand becomes smooth against
    the Laguerre weight e^{-v}.  For theta < 1 the saturating factor
    exp(x(1 - e^{-v/theta})) varies on a scale theta, so its constant limit is
    integrated in closed form and only the decaying remainder is sampled.
    """
    theta = float(_positive_array(theta, "theta"))
    xs = _positive_array(x)
    a = digamma(theta) - np.log(xs)[..., None]
    xv = xs[..., None]
    if theta < 1.0:
        rate = 1.0 + theta
        w = _LAG_NODES / rate
        h = (a + w) * np.expm1(-xv * np.exp(-w)) * np.exp(_LAG_NODES - theta * w)
        rest = (h @ _LAG_WEIGHTS) / rate
        res = np.exp(xs) * (a[..., 0] / theta + 1.0 / theta**2 + rest)
    else:
        v = _LAG_NODES
        f = (a + v / theta) * np.exp(-xv * np.expm1(-v / theta))
        res = (f @ _LAG_WEIGHTS) / theta
    return _out(res, x)


def phi_tail(theta: float, x):
    """Phi(theta, x) from the integral over (x, inf), substituting y = x + u.

    Accurate for x >= 1 and moderate theta (the factor (1 + u/x)^(theta-1) must
    be well resolved by 64 Laguerre nodes, fine for theta up to ~20).
    """
    theta = float(_positive_array(theta, "theta"))
    xs = _positive_array(x)
    xv = xs[..., None]
    u = _LAG_NODES
    f = (np.log(xv + u) - digamma(theta)) * np.exp((theta - 1.0) * np.log1p(u / xv)) / xv
    return _out(f @ _LAG_WEIGHTS, x)


def phi(theta: float, x):
    """Exit-variance kernel Phi(theta, x) > 0.

    Its expectation under ``x ~ Gamma(theta, 1)`` equals ``trigamma(theta)``.
    The head integral is used for ``x <= max(1, theta)`` and the tail
    integral beyond; no intermediate quantity carries the raw e^x factor of
    large x.
    """
    theta = float(_positive_array(theta, "theta"))
    xs = np.atleast_1d(_positive_array(x))
    out = np.empty_like(xs)
    head = xs <= max(1.0, theta)
    if np.any(head):
        out[head] = phi_head(theta, xs[head])
    if np.any(~head):
        out[~head] = phi_tail(theta, xs[~head])
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def theta_char(s: float, t: float, mu: float) -> float:
    """Unique theta in (0, mu) with trigamma(mu - theta) / trigamma(theta) = s / t."""
    for name, val in (("s", s), ("t", t), ("mu", mu)):
        if not (math.isfinite(val) and val > 0):
            raise ValueError(f"{name} must be positive and finite")
    if s == t:
        return 0.5 * mu

    def g(th):
        return trigamma(mu - th) * t - trigamma(th) * s

    eps = 1e-9 * mu
    lo, hi = eps, mu - eps
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    # pick the endpoint with the smaller residual
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


def free_energy_pt(s: float, t: float, mu: float) -> float:
    """Bulk point-to-point free energy f_{s,t}(mu)."""
    if s < 0 or t < 0 or mu <= 0 or (s == 0 and t == 0):
        raise ValueError("need s, t >= 0 (not both zero) and mu > 0")
    if s == 0 or t == 0:
        return -(s + t) * digamma(mu)
    th = theta_char(s, t, mu)
    return -(s * digamma(th) + t * digamma(mu - th))


def mean_logZ(m: int, n: int, params: ModelParams) -> float:
    """E log Z_{m,n} for the model with boundary weights."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be nonnegative")
    return -m * digamma(params.theta) - n * digamma(params.mu - params.theta)


def char_rectangle(N: float, params: ModelParams) -> CharacteristicShape:
    if N < 1:
        raise ValueError("N must be >= 1")
    m = max(1, math.floor(N * trigamma(params.mu - params.theta)))
    n = max(1, math.floor(N * trigamma(params.theta)))
    return CharacteristicShape(N=float(N), m=int(m), n=int(n), gamma_dev=1.0)


def g_boundary(theta: float, mu: float) -> float:
    """Free energy per step of the boundary model with free endpoint."""
    return max(-digamma(theta), -digamma(mu - theta))


def sigma2_boundary(theta: float, mu: float) -> float:
    return trigamma(theta) if theta <= 0.5 * mu else trigamma(mu - theta)
