"""Exact finite-n laws used as ground truth.

* the i.i.d. sample-quantile law through the duality
  ``xi_hat_n <= y  <=>  F_n(y) >= p``;
* transfer-matrix dynamic programming for the indicator count
  ``sum_i I(X_i <= y)`` of a stationary finite-state chain, together with its
  characteristic function and cumulants;
* the conditional law of the middle state given both neighbours, which is
  what conditioning on all other coordinates reduces to for a Markov chain,
  and the degeneracy probability and conditional characteristic function
  built on it.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from mixquant.errors import DomainError, ResourceCapError
from mixquant.numeric_core import CountDistribution, binomial_upper_tail, quantile_rank
from mixquant.processes import FiniteMarkov

DEFAULT_MEMORY_CAP = 2 * 1024**3

__all__ = [
    "CfSample",
    "ConditionalLaw",
    "CountDistribution",
    "C5Result",
    "c5_probability",
    "conditional_cf_modulus",
    "conditional_law",
    "count_variance",
    "iid_quantile_cdf",
    "markov_cf",
    "markov_count_distribution",
    "markov_cumulants",
]


def iid_quantile_cdf(n: int, p: float, Fy):
    """P(xi_hat_n <= y) for an i.i.d. sample, given ``Fy = F(y)``.

    With the inf-definition of the sample quantile the event is exactly
    ``{#(X_i <= y) >= ceil(n p)}``.
    """
    if n < 1:
        raise DomainError("n must be positive")
    return binomial_upper_tail(n, Fy, quantile_rank(n, p))


def markov_count_distribution(chain: FiniteMarkov, y: float, n: int, memory_cap: int = DEFAULT_MEMORY_CAP) -> CountDistribution:
    """Exact law of ``sum_{i=1}^n I(X_i <= y)`` for the chain started at stationarity.

    The table ``a[s, c] = P(state_i = s, count_i = c)`` is pushed forward one
    step at a time; only the columns ``0..i`` can be nonzero after step i.
    """
    if n < 1:
        raise DomainError("n must be positive")
    S = chain.n_states
    if 3 * S * (n + 1) * 8 > memory_cap:
        raise ResourceCapError(f"count table for n={n}, S={S} exceeds the memory cap of {memory_cap} bytes")
    nu = chain.stationary
    hits = chain.values <= y
    PT = chain.transition.T.copy()
    a = np.zeros((S, n + 1))
    a[~hits, 0] = nu[~hits]
    a[hits, 1] = nu[hits]
    for i in range(1, n):
        width = i + 1
        b = PT @ a[:, :width]
        a[:, : width + 1] = 0.0
        a[~hits, :width] = b[~hits]
        a[hits, 1 : width + 1] = b[hits]
    return CountDistribution(n, a.sum(axis=0))


def count_variance(chain: FiniteMarkov, y: float, n: int) -> float:
    """Var(sum_{i=1}^n I(X_i <= y)) from the exact lag covariances.

    ``n gamma_0 + 2 sum_{k=1}^{n-1} (n - k) gamma_k`` with
    ``gamma_k = <hc, P^k hc>_nu``.
    """
    nu = chain.stationary
    h = chain.indicator(y)
    hc = h - nu @ h
    P = chain.transition
    total = [n * float((nu * hc) @ hc)]
    v = hc.copy()
    for k in range(1, n):
        v = P @ v
        total.append(2.0 * (n - k) * float((nu * hc) @ v))
    return math.fsum(total)


def _sigma_n(chain: FiniteMarkov, y: float, n: int) -> float:
    var = count_variance(chain, y, n)
    if not var > 1e-300:
        raise DomainError(f"degenerate indicator variance at y={y}")
    return math.sqrt(var / n)


@dataclass(frozen=True)
class CfSample:
    t: float
    value: complex
    n: int


def markov_cf(chain: FiniteMarkov, y: float, n: int, t: float) -> CfSample:
    """Characteristic function of ``S_n = n^-1/2 sum_i (I(X_i <= y) - F(y)) / sigma_n(y)``.

    ``sigma_n(y)^2 = n Var(F_n(y))``, so ``Var(S_n) = 1``.  The expectation is
    the product ``nu D (P D)^{n-1} 1`` with ``D = diag(exp(i t w_s / sqrt(n)))``.
    """
    sigma = _sigma_n(chain, y, n)
    w = (chain.indicator(y) - chain.cdf(y)) / sigma
    d = np.exp(1j * t * w / math.sqrt(n))
    v = chain.stationary * d
    P = chain.transition
    for _ in range(n - 1):
        v = (v @ P) * d
    value = complex(v.sum()) if t != 0.0 else 1.0 + 0.0j
    return CfSample(float(t), value, n)


def markov_cf_many(chain: FiniteMarkov, y: float, n: int, ts) -> np.ndarray:
    """Vectorized :func:`markov_cf` over an array of ``t`` values."""
    ts = np.asarray(ts, dtype=float)
    sigma = _sigma_n(chain, y, n)
    w = (chain.indicator(y) - chain.cdf(y)) / sigma
    d = np.exp(1j * np.outer(ts, w) / math.sqrt(n))
    v = chain.stationary[None, :] * d
    P = chain.transition
    for _ in range(n - 1):
        v = (v @ P) * d
    out = v.sum(axis=1)
    out[ts == 0.0] = 1.0
    return out


def cumulants_from_pmf(pmf: CountDistribution, scale: float, max_order: int = 5) -> np.ndarray:
    """Cumulants 1..max_order of ``(count - mean) / scale``."""
    k = pmf.support.astype(float)
    m = pmf.mean()
    x = (k - m) / scale
    mu = [0.0, 0.0] + [math.fsum(pmf.pmf * x**r) for r in range(2, max_order + 1)]
    mu[1] = math.fsum(pmf.pmf * x)
    # central-moment to cumulant relations up to order 5
    kappa = [0.0] * (max_order + 1)
    kappa[1] = mu[1]
    kappa[2] = mu[2]
    if max_order >= 3:
        kappa[3] = mu[3]
    if max_order >= 4:
        kappa[4] = mu[4] - 3.0 * mu[2] ** 2
    if max_order >= 5:
        kappa[5] = mu[5] - 10.0 * mu[3] * mu[2]
    return np.asarray(kappa[1:])


def markov_cumulants(chain: FiniteMarkov, y: float, n: int, max_order: int = 5) -> np.ndarray:
    """Cumulants chi_1..chi_max_order of the standardized sum ``S_n``.

    ``chi_1`` is zero and ``chi_2`` equals one by the standardization.
    """
    if not 2 <= max_order <= 5:
        raise DomainError("max_order must lie in 2..5")
    sigma = _sigma_n(chain, y, n)
    pmf = markov_count_distribution(chain, y, n)
    return cumulants_from_pmf(pmf, math.sqrt(n) * sigma, max_order)


# ---------------------------------------------------------------------------
# conditional law of the middle state


@dataclass(frozen=True, eq=False)
class ConditionalLaw:
    """Law of ``Y_0`` given ``(Y_-1, Y_1) = (a, c)``.

    ``weights[a, c] = P(Y_-1 = a, Y_1 = c)`` and ``pmf[a, c, b]`` is the
    conditional probability of ``Y_0 = b``; pairs of weight zero carry a zero
    pmf row.
    """

    weights: np.ndarray
    pmf: np.ndarray
    values: np.ndarray

    def given(self, y: float) -> np.ndarray:
        """``G[a, c] = P(value(Y_0) <= y | a, c)``."""
        return self.pmf[:, :, self.values <= y].sum(axis=2)

    def forced(self, y: float) -> np.ndarray:
        """Pairs whose conditional law has no mass above ``y`` (``G == 1`` exactly)."""
        above = self.pmf[:, :, self.values > y]
        return (self.weights > 0) & ~np.any(above > 0, axis=2)


def conditional_law(chain: FiniteMarkov) -> ConditionalLaw:
    P = chain.transition
    nu = chain.stationary
    joint = P[:, :, None] * P[None, :, :]  # joint[a, b, c] = P_ab P_bc
    joint = np.transpose(joint, (0, 2, 1))  # -> [a, c, b]
    two_step = joint.sum(axis=2)
    pmf = np.divide(joint, two_step[:, :, None], out=np.zeros_like(joint), where=two_step[:, :, None] > 0)
    weights = nu[:, None] * two_step
    return ConditionalLaw(weights, pmf, chain.values.copy())


@dataclass(frozen=True)
class C5Result:
    """Probability that the conditional law forces ``X_0 <= xi``.

    ``margin = p - g``; ``expected_G`` is E G_0(xi) and ``F_xi`` the
    marginal cdf, which must agree.
    """

    xi: float
    g: float
    p: float
    margin: float
    expected_G: float
    F_xi: float

    @property
    def identity_error(self) -> float:
        return abs(self.expected_G - self.F_xi)


def c5_probability(chain: FiniteMarkov, xi: float, p: float | None = None, law: ConditionalLaw | None = None) -> C5Result:
    """Exact ``g(xi) = P(G_0(xi) = 1)`` for a stationary finite chain.

    ``p`` defaults to ``F(xi)``.
    """
    law = law if law is not None else conditional_law(chain)
    g = math.fsum(law.weights[law.forced(xi)])
    eg = math.fsum((law.weights * law.given(xi)).ravel())
    F = chain.cdf(xi)
    p = F if p is None else p
    return C5Result(float(xi), g, p, p - g, eg, F)


def conditional_cf_modulus(chain: FiniteMarkov, y: float, t: float, law: ConditionalLaw | None = None) -> float:
    """``E |E(exp(i t I(X_0 <= y)) | neighbours)| = sum weight |G e^{it} + 1 - G|``."""
    law = law if law is not None else conditional_law(chain)
    G = law.given(y)
    vals = np.abs(G * cmath.exp(1j * t) + (1.0 - G))
    return math.fsum((law.weights * vals).ravel())
