"""Estimators used by the experiment drivers.

Small, deliberately standard toolbox: log-survival least squares for
tail decay, a chi-square goodness-of-fit for geometric counts, an
empirical moment generating function, and normal-approximation
confidence intervals for means and ratios of means.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import TbrwError, UndersampledError, UsageError

STRETCHED_EXPONENT = 0.125  # fixed comparison family: exp(-c * n**(1/8))
MIN_TAIL_SAMPLES = 500
MIN_SURVIVORS = 30
MIN_CI_SAMPLES = 30


class DegenerateFitError(TbrwError):
    """The data carry no usable variation for the requested fit."""


class TailFamily(enum.Enum):
    EXPONENTIAL = "exponential"
    STRETCHED = "stretched"

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self is TailFamily.EXPONENTIAL:
            return x
        return np.power(x, STRETCHED_EXPONENT)


@dataclass(frozen=True)
class TailFit:
    """Least-squares fit of ``log S(n) = intercept - rate * g(n)``."""

    family: TailFamily
    intercept: float
    rate: float
    r_squared: float
    fit_range: tuple[float, float]
    n_samples: int
    n_fit_points: int

    def predict_log_survival(self, x: np.ndarray) -> np.ndarray:
        return self.intercept - self.rate * self.family.transform(np.asarray(x, dtype=float))


def _survival_points(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sample values with their empirical survival #(X >= v)/N."""
    values, counts = np.unique(samples, return_counts=True)
    at_least = counts[::-1].cumsum()[::-1]
    return values.astype(float), at_least / len(samples)


def fit_tail(
    samples,
    family: TailFamily = TailFamily.EXPONENTIAL,
    *,
    min_samples: int = MIN_TAIL_SAMPLES,
    min_survivors: int = MIN_SURVIVORS,
) -> TailFit:
    """Fit one decay family to the upper tail of ``samples``.

    The fit window runs from the sample median up to the largest value
    still backed by at least ``min_survivors`` surviving samples, so
    every point of the regression has controlled relative error.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < min_samples:
        raise UndersampledError(f"tail fit needs >= {min_samples} samples, got {len(x)}")
    if np.any(x < 0):
        raise UsageError("tail fit expects non-negative samples")

    values, surv = _survival_points(x)
    n = len(x)
    survivors = surv * n
    med = float(np.median(x))
    keep = (values >= med) & (survivors >= min_survivors)
    if keep.sum() < 3:
        raise DegenerateFitError(
            f"only {int(keep.sum())} usable survival points between the median and the "
            f"{min_survivors}-survivor cutoff"
        )
    xs = family.transform(values[keep])
    ys = np.log(surv[keep])
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        raise DegenerateFitError("no variation across the fit window")
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = intercept + slope * xs
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    return TailFit(
        family=family,
        intercept=float(intercept),
        rate=float(-slope),
        r_squared=1.0 - ss_res / ss_tot,
        fit_range=(float(values[keep][0]), float(values[keep][-1])),
        n_samples=n,
        n_fit_points=int(keep.sum()),
    )


@dataclass(frozen=True)
class GeometricTest:
    """MLE + chi-square goodness of fit for counts on {0, 1, 2, ...}.

    ``theta_hat`` is ``1 / (1 + mean)``.  Bins are pooled from the
    right until every expected count reaches the threshold; the last
    bin aggregates the tail.  ``degenerate`` flags data (e.g. all
    zeros) that cannot support the test; then ``p_value`` is NaN.
    """

    theta_hat: float
    p_value: float
    statistic: float
    dof: int
    histogram: np.ndarray
    n_bins: int
    n_samples: int
    degenerate: bool


def geometric_gof(samples, *, min_expected: float = 5.0) -> GeometricTest:
    k = np.asarray(samples)
    if len(k) == 0:
        raise UsageError("no samples")
    if np.any(k < 0) or not np.issubdtype(k.dtype, np.integer):
        raise UsageError("geometric test expects non-negative integer counts")
    n = len(k)
    mean = float(k.mean())
    theta = 1.0 / (1.0 + mean)
    hist = np.bincount(k)

    if mean == 0.0:
        return GeometricTest(theta, float("nan"), float("nan"), 0, hist, 1, n, True)

    # interior bins 0..j-1 plus a pooled tail {>= j}; grow j while both
    # the last interior bin and the tail stay above the threshold
    j = 1
    while True:
        nxt = j + 1
        interior_ok = n * theta * (1.0 - theta) ** (nxt - 1) >= min_expected
        tail_ok = n * (1.0 - theta) ** nxt >= min_expected
        if interior_ok and tail_ok and nxt <= int(k.max()):
            j = nxt
        else:
            break
    if j < 2 or n * (1.0 - theta) ** j < min_expected:
        return GeometricTest(theta, float("nan"), float("nan"), 0, hist, j + 1, n, True)

    observed = np.array([np.sum(k == v) for v in range(j)] + [np.sum(k >= j)], dtype=float)
    expected = np.array([n * theta * (1.0 - theta) ** v for v in range(j)] + [n * (1.0 - theta) ** j])
    statistic = float(np.sum((observed - expected) ** 2 / expected))
    dof = (j + 1) - 1 - 1  # one parameter estimated from the data
    p_value = float(sps.chi2.sf(statistic, dof))
    return GeometricTest(theta, p_value, statistic, dof, hist, j + 1, n, False)


class MgfStatus(enum.Enum):
    OK = "ok"
    UNRELIABLE = "unreliable"  # at or beyond the fitted tail rate


@dataclass(frozen=True)
class MgfCurve:
    ts: np.ndarray
    values: np.ndarray
    statuses: list[MgfStatus]
    rate_used: float | None


def empirical_mgf(samples, ts, *, rate: float | None = None) -> MgfCurve:
    """Empirical E[exp(tX)] on a grid; exact 1 at t = 0.

    Beyond a supplied tail decay ``rate`` the true MGF may not exist
    and the empirical one is dominated by the largest samples, so those
    grid points are flagged UNRELIABLE rather than suppressed.
    """
    x = np.asarray(samples, dtype=float)
    if len(x) == 0:
        raise UsageError("no samples")
    t_arr = np.asarray(ts, dtype=float)
    values = np.empty(len(t_arr))
    statuses: list[MgfStatus] = []
    for i, t in enumerate(t_arr):
        values[i] = 1.0 if t == 0.0 else float(np.mean(np.exp(t * x)))
        bad = rate is not None and t >= rate
        statuses.append(MgfStatus.UNRELIABLE if bad else MgfStatus.OK)
    return MgfCurve(t_arr, values, statuses, rate)


@dataclass(frozen=True)
class MeanCI:
    """Sample mean with a normal-approximation 95% half-width."""

    mean: float
    half_width: float
    n: int

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    @classmethod
    def from_samples(cls, samples, *, z: float = 1.96, min_n: int = MIN_CI_SAMPLES) -> "MeanCI":
        x = np.asarray(samples, dtype=float)
        if len(x) < min_n:
            raise UndersampledError(f"mean CI needs >= {min_n} samples, got {len(x)}")
        half = float(z * x.std(ddof=1) / np.sqrt(len(x)))
        return cls(float(x.mean()), half, len(x))


@dataclass(frozen=True)
class RatioCI:
    """Delta-method CI for mean(numerator)/mean(denominator) on pairs."""

    value: float
    half_width: float
    n: int

    @property
    def low(self) -> float:
        return self.value - self.half_width

    @property
    def high(self) -> float:
        return self.value + self.half_width


def ratio_ci(numer, denom, *, z: float = 1.96, min_n: int = MIN_CI_SAMPLES) -> RatioCI:
    a = np.asarray(numer, dtype=float)
    b = np.asarray(denom, dtype=float)
    if len(a) != len(b):
        raise UsageError("paired samples required")
    if len(a) < min_n:
        raise UndersampledError(f"ratio CI needs >= {min_n} pairs, got {len(a)}")
    mb = float(b.mean())
    if mb == 0:
        raise UsageError("denominator mean is zero")
    r = float(a.mean()) / mb
    resid = a - r * b
    var = float(resid.var(ddof=1)) / (len(a) * mb * mb)
    return RatioCI(r, float(z * np.sqrt(var)), len(a))
