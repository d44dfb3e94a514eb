"""Deterministic numerical primitives.

Normal and bivariate normal distribution functions, binomial tails, the
empirical distribution function, the inf-definition sample quantile and
Kolmogorov distances against a normal law.  Every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from mixquant.errors import DomainError

RHO_LIMIT = 1.0 - 1e-12


def _finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _scalar_or_array(arr):
    return float(arr) if arr.ndim == 0 else arr


def std_normal_cdf(x):
    """Standard normal distribution function, scalar or elementwise."""
    arr = _finite(x)
    # ndtr evaluates through erfc in the lower tail, so there is no cancellation
    return _scalar_or_array(special.ndtr(arr))


def std_normal_pdf(x):
    arr = _finite(x)
    return _scalar_or_array(np.exp(-0.5 * arr * arr) / math.sqrt(2.0 * math.pi))


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("p must lie in (0, 1)")
    return _scalar_or_array(special.ndtri(arr))


def bivariate_normal_cdf(h: float, k: float, rho: float) -> float:
    """P(Z1 <= h, Z2 <= k) for a standard bivariate normal with correlation rho.

    Uses the one-dimensional representation obtained by integrating the
    density with respect to the correlation, under the substitution
    ``r = sin(theta)`` which removes the endpoint singularity::

        Phi2(h, k; rho) = Phi(h) Phi(k)
            + (2 pi)^-1 int_0^asin(rho) exp(-(h^2 - 2hk sin t + k^2) / (2 cos^2 t)) dt
    """
    h = float(_finite(h, "h"))
    k = float(_finite(k, "k"))
    rho = float(_finite(rho, "rho"))
    if abs(rho) > RHO_LIMIT:
        raise DomainError("|rho| must not exceed 1 - 1e-12; handle the comonotone limit analytically")
    base = std_normal_cdf(h) * std_normal_cdf(k)
    if rho == 0.0:
        return base
    hh = h * h + k * k
    hk = 2.0 * h * k

    def integrand(theta):
        c = math.cos(theta)
        return math.exp(-(hh - hk * math.sin(theta)) / (2.0 * c * c))

    val, _ = integrate.quad(integrand, 0.0, math.asin(rho), epsabs=1e-15, epsrel=1e-13, limit=200)
    out = base + val / (2.0 * math.pi)
    lo = max(0.0, std_normal_cdf(h) + std_normal_cdf(k) - 1.0)
    hi = min(std_normal_cdf(h), std_normal_cdf(k))
    return min(max(out, lo), hi)


def binomial_upper_tail(n: int, q, k0):
    """P(Bin(n, q) >= k0), via the regularized incomplete beta function.

    ``q`` and ``k0`` broadcast against each other.  ``k0 <= 0`` gives 1 and
    ``k0 >= n + 1`` gives 0.
    """
    if n < 0:
        raise DomainError("n must be nonnegative")
    q = np.asarray(q, dtype=float)
    k0 = np.asarray(k0)
    if np.any((q < 0.0) | (q > 1.0)) or np.any(np.isnan(q)):
        raise DomainError("q must lie in [0, 1]")
    q, k0 = np.broadcast_arrays(q, k0)
    out = np.empty(q.shape, dtype=float)
    full = k0 <= 0
    empty = k0 >= n + 1
    mid = ~(full | empty)
    out[full] = 1.0
    out[empty] = 0.0
    if np.any(mid):
        km = k0[mid].astype(float)
        # I_q(k0, n - k0 + 1) is exactly the upper binomial tail
        out[mid] = special.betainc(km, n - km + 1.0, q[mid])
    return _scalar_or_array(out)


def quantile_rank(n: int, p: float) -> int:
    """Smallest k with ``k / n >= p``; this is the rank ceil(n p) of the sample quantile.

    The comparison is made in floating point exactly as :func:`edf_eval`
    makes it, so ``p = 0.1, n = 10`` gives 1 and the duality between the
    quantile and the e.d.f. holds bit for bit.
    """
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    if n < 1:
        raise DomainError("n must be positive")
    k = max(1, min(n, math.ceil(n * p)))
    while k > 1 and (k - 1) / n >= p:
        k -= 1
    while k < n and k / n < p:
        k += 1
    return k


@dataclass(frozen=True)
class Edf:
    """Empirical distribution function of a finite sample."""

    sorted_sample: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.sorted_sample, dtype=float)
        if arr.ndim != 1 or arr.size < 1:
            raise DomainError("an Edf needs a one-dimensional sample of length >= 1")
        if np.any(np.diff(arr) < 0):
            raise DomainError("sorted_sample must be nondecreasing")
        object.__setattr__(self, "sorted_sample", arr)

    @classmethod
    def from_sample(cls, sample) -> Edf:
        return cls(np.sort(np.asarray(sample, dtype=float)))

    @property
    def n(self) -> int:
        return int(self.sorted_sample.size)

    def __call__(self, x):
        return edf_eval(self, x)


def edf_eval(edf: Edf, x):
    """Fraction of sample values ``<= x`` (right-continuous)."""
    counts = np.searchsorted(edf.sorted_sample, np.asarray(x, dtype=float), side="right")
    return _scalar_or_array(np.asarray(counts / edf.n))


def sample_quantile(edf: Edf, p: float) -> float:
    """inf{x : F_n(x) >= p}, i.e. the ceil(n p)-th order statistic."""
    return float(edf.sorted_sample[quantile_rank(edf.n, p) - 1])


@dataclass(frozen=True)
class GridCdf:
    """A distribution function tabulated on a strictly increasing grid."""

    xs: np.ndarray
    ps: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ps = np.asarray(self.ps, dtype=float)
        if xs.shape != ps.shape or xs.ndim != 1:
            raise DomainError("xs and ps must be one-dimensional and of equal length")
        if xs.size and np.any(np.diff(xs) <= 0):
            raise DomainError("xs must be strictly increasing")
        if ps.size and (np.any(np.diff(ps) < 0) or ps.min() < 0.0 or ps.max() > 1.0):
            raise DomainError("ps must be nondecreasing probabilities")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ps", ps)


def kolmogorov_distance(law: GridCdf, scale: float = 1.0) -> float:
    """max_i |ps_i - Phi(xs_i / scale)| over the grid.

    This is a lower bound for the supremum over the real line.  The gap is
    at most the larger of the two laws' increments between neighbouring
    grid points, so it vanishes as the grid is refined for a continuous law.
    """
    if law.xs.size == 0:
        raise DomainError("empty grid")
    if not scale > 0:
        raise DomainError("scale must be positive")
    return float(np.max(np.abs(law.ps - std_normal_cdf(law.xs / scale))))


def ecdf_kolmogorov_distance(values, cdf=std_normal_cdf) -> float:
    """Exact sup-distance between the empirical law of ``values`` and a continuous cdf."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DomainError("empty sample")
    r = v.size
    u = np.asarray(cdf(v), dtype=float)
    i = np.arange(1, r + 1)
    return float(max(np.max(i / r - u), np.max(u - (i - 1) / r)))


@dataclass(frozen=True)
class CountDistribution:
    """Probability mass function of an integer count on {0, ..., n}."""

    n: int
    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size != self.n + 1:
            raise DomainError("pmf must have n + 1 entries")
        if np.any(pmf < -1e-15):
            raise DomainError("pmf has negative entries")
        pmf = np.clip(pmf, 0.0, None)
        if abs(math.fsum(pmf) - 1.0) > 1e-12:
            raise DomainError(f"pmf sums to {math.fsum(pmf)!r}, not 1")
        object.__setattr__(self, "pmf", pmf)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.n + 1)

    def cdf(self) -> np.ndarray:
        return np.minimum(np.cumsum(self.pmf), 1.0)

    def mean(self) -> float:
        return math.fsum(self.pmf * self.support)

    def variance(self) -> float:
        m = self.mean()
        return math.fsum(self.pmf * (self.support - m) ** 2)

    def upper_tail(self, k0: int) -> float:
        """P(count >= k0)."""
        if k0 <= 0:
            return 1.0
        return math.fsum(self.pmf[k0:])


def lattice_kolmogorov_distance(pmf: CountDistribution, mu: float, sigma: float) -> float:
    """Exact sup_y |P(count <= y) - Phi((y - mu) / sigma)|.

    For an integer-valued law the supremum is attained at an atom, either
    at its value or as the left limit, so checking both sides of every atom
    is exact.
    """
    if not isinstance(pmf, CountDistribution):
        raise DomainError("pmf must be a CountDistribution")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    cdf = pmf.cdf()
    left = np.concatenate(([0.0], cdf[:-1]))
    phi = std_normal_cdf((pmf.support - mu) / sigma)
    return float(max(np.max(np.abs(cdf - phi)), np.max(np.abs(left - phi))))
