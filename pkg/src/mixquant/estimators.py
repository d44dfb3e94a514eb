"""Plug-in inference for a sample quantile of a dependent series.

The asymptotic variance of ``sqrt(n)(xi_hat - xi_p)`` is
``sigma2_inf(xi_p) / f(xi_p)^2``.  The density is estimated with a Gaussian
kernel (Silverman's rule by default) and the long-run variance of the
indicator series with a Bartlett lag window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mixquant.errors import DomainError, PlugInError
from mixquant.numeric_core import Edf, sample_quantile, std_normal_quantile
from mixquant.processes import ModelFacts, TimeSeries


def _values(sample) -> np.ndarray:
    if isinstance(sample, TimeSeries):
        return sample.values
    arr = np.asarray(sample, dtype=float)
    if arr.ndim != 1:
        raise DomainError("sample must be one-dimensional")
    return arr


def silverman_bandwidth(x) -> float:
    """``0.9 min(sd, iqr / 1.34) n^{-1/5}``; falls back to sd when the iqr is 0."""
    x = _values(x)
    if x.size < 2:
        raise DomainError("automatic bandwidth needs at least two observations")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DomainError("zero sample variance: automatic bandwidth undefined")
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde_at(sample, y: float, bandwidth="auto") -> float:
    """Gaussian kernel density estimate ``(nh)^-1 sum phi((y - X_i) / h)`` at ``y``."""
    x = _values(sample)
    h = silverman_bandwidth(x) if bandwidth == "auto" else float(bandwidth)
    if not h > 0:
        raise DomainError("bandwidth must be positive")
    u = (y - x) / h
    return float(np.exp(-0.5 * u * u).sum() / (x.size * h * math.sqrt(2.0 * math.pi)))


@dataclass(frozen=True)
class LongRunVariance:
    value: float
    lags: int
    raw: float
    clipped: bool


def auto_lags(n: int) -> int:
    return math.ceil(1.3 * n ** (1.0 / 3.0))


def bartlett_longrun_variance(z, lags: int) -> LongRunVariance:
    """``g_0 + 2 sum_{k=1}^{b} (1 - k / (b + 1)) g_k`` of the centered series ``z``.

    Autocovariances use the divisor n.  A negative estimate is clipped to 0
    and flagged.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    if lags < 0:
        raise DomainError("lags must be nonnegative")
    lags = min(lags, n - 1)
    zc = z - z.mean()
    terms = [float(zc @ zc) / n]
    for k in range(1, lags + 1):
        w = 1.0 - k / (lags + 1.0)
        terms.append(2.0 * w * float(zc[k:] @ zc[:-k]) / n)
    raw = math.fsum(terms)
    return LongRunVariance(max(raw, 0.0), lags, raw, raw < 0)


def indicator_longrun_variance(sample, y: float, bandwidth_lags="auto") -> LongRunVariance:
    """Bartlett estimate of the long-run variance of ``I(X_i <= y)``."""
    x = _values(sample)
    if x.size < 8:
        raise DomainError("need at least 8 observations")
    b = auto_lags(x.size) if bandwidth_lags == "auto" else int(bandwidth_lags)
    return bartlett_longrun_variance((x <= y).astype(float), b)


@dataclass(frozen=True)
class QuantileEstimate:
    point: float
    f_hat: float
    sigma2_hat: float
    tau2_hat: float
    ci_lo: float
    ci_hi: float
    level: float
    n: int
    method: str = "plug-in"

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)

    def covers(self, value: float) -> bool:
        return self.ci_lo <= value <= self.ci_hi


def estimate_quantile_ci(
    sample,
    p: float,
    level: float = 0.95,
    *,
    bandwidth="auto",
    lags="auto",
    facts: ModelFacts | None = None,
) -> QuantileEstimate:
    """Sample quantile with a normal-approximation confidence interval.

    Without ``facts`` the variance is the plug-in ``sigma2_hat / f_hat^2``.
    With ``facts`` the analytic truth is used instead and ``method`` reads
    ``"analytic"``; the two are never combined.
    """
    x = _values(sample)
    if not (0.0 < p < 1.0 and 0.0 < level < 1.0):
        raise DomainError("p and level must lie in (0, 1)")
    if x.size < 16:
        raise DomainError("need at least 16 observations")
    n = x.size
    point = sample_quantile(Edf.from_sample(x), p)
    if facts is not None:
        f_hat, sigma2 = facts.density_at_xi, facts.sigma2_inf
        method = "analytic"
    else:
        lrv = indicator_longrun_variance(x, point, lags)
        try:
            f_hat = kde_at(x, point, bandwidth)
        except DomainError as exc:
            raise PlugInError(
                "variance plug-in failed", {"reason": str(exc), "sigma2_raw": lrv.raw, "n": n, "point": point}
            ) from None
        sigma2 = lrv.value
        method = "plug-in"
        if not f_hat > 0 or lrv.clipped or not sigma2 > 0:
            raise PlugInError(
                "variance plug-in failed",
                {"f_hat": f_hat, "sigma2_raw": lrv.raw, "lags": lrv.lags, "n": n, "point": point},
            )
    tau2 = sigma2 / f_hat**2
    z = float(std_normal_quantile(0.5 + 0.5 * level))
    half = z * math.sqrt(tau2 / n)
    return QuantileEstimate(point, f_hat, sigma2, tau2, point - half, point + half, level, n, method)


def normalized_statistic(sample, facts: ModelFacts, p: float | None = None) -> float:
    """``sqrt(n) (xi_hat_n - xi_p) / tau_inf`` with the analytic ``xi_p`` and ``tau_inf``."""
    x = _values(sample)
    if not facts.tau2_inf > 0 or not math.isfinite(facts.tau2_inf):
        raise DomainError("facts.tau2_inf must be positive and finite")
    p = facts.p if p is None else p
    xi_hat = sample_quantile(Edf.from_sample(x), p)
    return math.sqrt(x.size) * (xi_hat - facts.xi_p) / math.sqrt(facts.tau2_inf)
