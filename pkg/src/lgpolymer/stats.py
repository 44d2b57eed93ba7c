"""Monte Carlo summaries, goodness-of-fit tests and slope fits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

__all__ = [
    "Welford",
    "McSummary",
    "SlopeFit",
    "summarize",
    "welford_accumulate",
    "ks_test",
    "two_sample_ks",
    "ols_slope",
    "z_score",
]


class Welford:
    """Streaming count, mean and central moments up to order four.

    Uses the one-pass update of Terriberry's higher-moment extension; two
    accumulators can be merged.
    """

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.m3 = 0.0
        self.m4 = 0.0

    def add(self, x: float) -> None:
        n1 = self.n
        self.n += 1
        n = self.n
        delta = x - self.mean
        dn = delta / n
        dn2 = dn * dn
        term1 = delta * dn * n1
        self.mean += dn
        self.m4 += term1 * dn2 * (n * n - 3 * n + 3) + 6 * dn2 * self.m2 - 4 * dn * self.m3
        self.m3 += term1 * dn * (n - 2) - 3 * dn * self.m2
        self.m2 += term1

    def merge(self, other: "Welford") -> "Welford":
        out = Welford()
        na, nb = self.n, other.n
        n = na + nb
        if n == 0:
            return out
        d = other.mean - self.mean
        out.n = n
        out.mean = self.mean + d * nb / n
        out.m2 = self.m2 + other.m2 + d * d * na * nb / n
        out.m3 = (self.m3 + other.m3 + d**3 * na * nb * (na - nb) / n**2
                  + 3 * d * (na * other.m2 - nb * self.m2) / n)
        out.m4 = (self.m4 + other.m4
                  + d**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
                  + 6 * d * d * (na * na * other.m2 + nb * nb * self.m2) / n**2
                  + 4 * d * (na * other.m3 - nb * self.m3) / n)
        return out

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else math.nan

    def summary(self) -> "McSummary":
        n = self.n
        if n < 2:
            raise ValueError("need at least two samples")
        var = self.variance
        mu2, mu4 = self.m2 / n, self.m4 / n
        return McSummary(
            n_reps=n, mean=self.mean, variance=var,
            stderr_mean=math.sqrt(var / n),
            stderr_variance=math.sqrt(max(mu4 - mu2 * mu2, 0.0) / n),
        )


def welford_accumulate(values, acc: Welford | None = None) -> Welford:
    acc = Welford() if acc is None else acc
    for x in np.asarray(values, dtype=float).ravel():
        acc.add(float(x))
    return acc


@dataclass(frozen=True)
class McSummary:
    n_reps: int
    mean: float
    variance: float
    stderr_mean: float
    stderr_variance: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values) -> McSummary:
    """Summary of a stored sample; the variance stderr uses the fourth moment."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    mean = float(np.mean(x))
    d = x - mean
    mu2 = float(np.mean(d * d))
    mu4 = float(np.mean(d**4))
    var = mu2 * n / (n - 1)
    return McSummary(
        n_reps=n, mean=mean, variance=var,
        stderr_mean=math.sqrt(var / n),
        stderr_variance=math.sqrt(max(mu4 - mu2 * mu2, 0.0) / n),
    )


def z_score(estimate: float, target: float, stderr: float) -> float:
    if stderr <= 0:
        return 0.0 if estimate == target else math.inf
    return abs(estimate - target) / stderr


def ks_test(sample, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    res = sps.kstest(x, cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def two_sample_ks(a, b) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    res = sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


@dataclass(frozen=True)
class SlopeFit:
    xs: np.ndarray
    ys: np.ndarray
    slope: float
    intercept: float
    slope_stderr: float

    def to_dict(self) -> dict:
        return {
            "xs": [float(v) for v in self.xs],
            "ys": [float(v) for v in self.ys],
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
        }


def ols_slope(xs, ys) -> SlopeFit:
    """Least-squares line through (xs, ys); stderr from the residuals."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3 or xs.size != ys.size:
        raise ValueError("need at least three (x, y) pairs")
    if not np.all(np.diff(xs) > 0):
        raise ValueError("xs must be strictly increasing")
    fit = sps.linregress(xs, ys)
    return SlopeFit(xs, ys, float(fit.slope), float(fit.intercept), float(fit.stderr))
