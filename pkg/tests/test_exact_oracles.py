import cmath
import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enumerate_paths, markov_presets
from mixquant.errors import DomainError, ResourceCapError
from mixquant.exact_oracles import (
    c5_probability,
    conditional_cf_modulus,
    conditional_law,
    count_variance,
    iid_quantile_cdf,
    markov_cf,
    markov_cf_many,
    markov_count_distribution,
    markov_cumulants,
)
from mixquant.numeric_core import binomial_upper_tail, quantile_rank
from mixquant.processes import FiniteMarkov, model_facts, simulate_replicates

CHAINS = markov_presets()
FULL_SUPPORT = [name for name, c in CHAINS.items() if np.all(c.transition > 0)]
SMALL_CHAINS = [
    FiniteMarkov([[0.9, 0.1], [0.1, 0.9]], [0.0, 1.0]),
    FiniteMarkov([[0.3, 0.7], [0.6, 0.4]], [-1.0, 2.0]),
    CHAINS["markov_lazy3"],
    CHAINS["markov_forcing3"],
    CHAINS["markov_iid_rows3"],
]


def count_law_by_paths(chain, y, n):
    pmf = np.zeros(n + 1)
    for path, prob in enumerate_paths(chain, n):
        pmf[sum(chain.values[s] <= y for s in path)] += prob
    return pmf


class TestIidQuantileCdf:
    def test_examples(self):
        assert iid_quantile_cdf(3, 0.5, 0.5) == pytest.approx(0.5, abs=1e-15)
        assert iid_quantile_cdf(7, 0.3, 1.0) == 1.0
        assert iid_quantile_cdf(7, 0.3, 0.0) == 0.0

    def test_enumeration(self):
        for n in range(1, 6):
            for p in (0.1, 0.25, 0.5, 0.6, 0.9):
                k0 = math.ceil(n * p - 1e-12)
                for Fy in (0.0, 0.2, 0.5, 0.77, 1.0):
                    ref = 0.0
                    for bits in itertools.product((0, 1), repeat=n):
                        s = sum(bits)
                        # quantile <= y  iff  at least ceil(np) observations fall at or below y
                        if s / n >= p:
                            ref += Fy**s * (1 - Fy) ** (n - s)
                    assert iid_quantile_cdf(n, p, Fy) == pytest.approx(ref, abs=1e-14)
                    assert quantile_rank(n, p) == k0


class TestCountDistribution:
    def test_two_step_by_hand(self, sym2):
        pmf = markov_count_distribution(sym2, 0.5, 2).pmf
        np.testing.assert_allclose(pmf, [0.45, 0.1, 0.45], atol=1e-15)
        np.testing.assert_allclose(pmf, count_law_by_paths(sym2, 0.5, 2), atol=1e-15)

    @pytest.mark.parametrize("chain", SMALL_CHAINS, ids=range(len(SMALL_CHAINS)))
    def test_enumeration(self, chain):
        for n in range(1, 7):
            for y in chain.values:
                np.testing.assert_allclose(markov_count_distribution(chain, y, n).pmf, count_law_by_paths(chain, y, n), atol=1e-14)

    def test_iid_rows_binomial(self):
        chain = CHAINS["markov_iid_rows3"]
        for y in (0.0, 1.0):
            for n in (1, 10, 300):
                pmf = markov_count_distribution(chain, y, n).pmf
                k = np.arange(n + 1)
                upper = binomial_upper_tail(n, chain.cdf(y), k)
                np.testing.assert_allclose(pmf, upper - np.append(upper[1:], 0.0), atol=1e-12)

    def test_below_all_values(self, sym2):
        pmf = markov_count_distribution(sym2, -1.0, 9).pmf
        assert pmf[0] == 1.0 and pmf[1:].sum() == 0.0

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_invariants(self, name):
        chain = CHAINS[name]
        for y in chain.values:
            for n in (1, 17, 4096):
                d = markov_count_distribution(chain, y, n)
                assert abs(d.pmf.sum() - 1.0) <= 1e-12
                assert d.pmf.min() >= 0.0
                assert abs(d.mean() - n * chain.cdf(y)) <= 1e-9
                if n < 4096:
                    assert d.variance() == pytest.approx(count_variance(chain, y, n), abs=1e-9)

    def test_memory_cap(self, sym2):
        with pytest.raises(ResourceCapError):
            markov_count_distribution(sym2, 0.5, 10_000, memory_cap=1000)
        with pytest.raises(DomainError):
            markov_count_distribution(sym2, 0.5, 0)

    def test_duality_exhaustive(self):
        ps = (0.2, 0.5, 0.7, 0.9)
        for chain in SMALL_CHAINS:
            for n in range(1, 7):
                for p in ps:
                    k0 = quantile_rank(n, p)
                    for y in chain.values:
                        lhs = Fraction(0)
                        for path, prob in enumerate_paths(chain, n):
                            xs = sorted(chain.values[s] for s in path)
                            if xs[k0 - 1] <= y:
                                lhs += Fraction(prob)
                        rhs = markov_count_distribution(chain, y, n).pmf[k0:].sum()
                        assert float(lhs) == pytest.approx(rhs, abs=1e-14)

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_monte_carlo_bands(self, name):
        chain = CHAINS[name]
        n, R = 24, 100_000
        paths = simulate_replicates(chain, n, 2024, range(R))
        rng = np.random.default_rng(hash(name) % 2**32)
        for _ in range(20):
            y = rng.choice(chain.values)
            k = int(rng.integers(0, n + 1))
            q = min(1.0, max(0.0, markov_count_distribution(chain, y, n).pmf[k:].sum()))
            freq = np.mean((paths <= y).sum(axis=1) >= k)
            assert abs(freq - q) <= 4 * math.sqrt(q * (1 - q) / R) + 1e-12


class TestCharacteristicFunction:
    def test_zero(self, sym2):
        assert markov_cf(sym2, 0.5, 10, 0.0).value == 1.0

    def test_single_factor(self):
        chain = CHAINS["markov_iid_rows3"]
        nu, y = chain.stationary, 1.0
        F = chain.cdf(y)
        w = (chain.indicator(y) - F) / math.sqrt(F * (1 - F))
        for t in (0.3, -1.7, 4.0):
            direct = sum(nu[s] * cmath.exp(1j * t * w[s]) for s in range(3))
            assert abs(markov_cf(chain, y, 1, t).value - direct) <= 1e-14

    def test_against_pmf_fourier(self):
        rng = np.random.default_rng(99)
        chains = list(CHAINS.values())
        for _ in range(100):
            chain = chains[rng.integers(len(chains))]
            F = np.array([chain.cdf(v) for v in chain.values])
            y = float(rng.choice(chain.values[(F > 0) & (F < 1)]))
            n = int(rng.integers(1, 65))
            t = float(rng.uniform(-8, 8))
            d = markov_count_distribution(chain, y, n)
            scale = math.sqrt(count_variance(chain, y, n))
            x = (d.support - n * chain.cdf(y)) / scale
            ref = complex(np.sum(d.pmf * np.exp(1j * t * x)))
            assert abs(markov_cf(chain, y, n, t).value - ref) <= 1e-10

    def test_modulus_and_conjugate(self):
        chain = CHAINS["markov_lazy3"]
        ts = np.linspace(-20, 20, 81)
        h = markov_cf_many(chain, 1.0, 50, ts)
        assert np.all(np.abs(h) <= 1 + 1e-12)
        np.testing.assert_allclose(h[::-1], np.conj(h), atol=1e-14)
        for t, v in zip(ts[::10], h[::10]):
            assert v == pytest.approx(markov_cf(chain, 1.0, 50, t).value, abs=1e-13)

    def test_degenerate(self, sym2):
        with pytest.raises(DomainError):
            markov_cf(sym2, 5.0, 10, 1.0)


class TestCumulants:
    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_standardized(self, name):
        chain = CHAINS[name]
        for y in chain.values[:-1]:
            for n in (1, 2, 7, 64, 512):
                chi = markov_cumulants(chain, y, n, 5)
                assert abs(chi[1] - 1.0) <= 1e-10
                assert abs(chi[0]) <= 1e-10

    def test_symmetric_bernoulli(self):
        chain = FiniteMarkov([[0.5, 0.5], [0.5, 0.5]], [0.0, 1.0])
        for n in (1, 5, 100):
            assert abs(markov_cumulants(chain, 0.0, n, 3)[2]) <= 1e-10

    def test_three_steps_by_enumeration(self):
        chain = FiniteMarkov([[0.7, 0.3], [0.2, 0.8]], [0.0, 1.0])
        n, y = 3, 0.5
        pmf = count_law_by_paths(chain, y, n)
        k = np.arange(n + 1)
        m = float(pmf @ k)
        sd = math.sqrt(float(pmf @ (k - m) ** 2))
        mu = [float(pmf @ ((k - m) / sd) ** r) for r in range(6)]
        ref = [0.0, 1.0, mu[3], mu[4] - 3 * mu[2] ** 2, mu[5] - 10 * mu[3] * mu[2]]
        np.testing.assert_allclose(markov_cumulants(chain, y, n, 5), ref, atol=1e-12)

    def test_order_range(self, sym2):
        with pytest.raises(DomainError):
            markov_cumulants(sym2, 0.5, 4, 6)


class TestConditionalLaw:
    def test_iid_rows(self):
        chain = CHAINS["markov_iid_rows3"]
        law = conditional_law(chain)
        for a in range(3):
            for c in range(3):
                np.testing.assert_allclose(law.pmf[a, c], chain.stationary, atol=1e-15)

    def test_symmetric_pair(self, sym2):
        law = conditional_law(sym2)
        np.testing.assert_allclose(law.pmf[0, 0], [81 / 82, 1 / 82], atol=1e-15)

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_invariants(self, name):
        chain = CHAINS[name]
        law = conditional_law(chain)
        P = chain.transition
        assert abs(law.weights.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(law.weights, chain.stationary[:, None] * (P @ P), atol=1e-12)
        rows = law.pmf.sum(axis=2)
        assert np.all(np.abs(rows[law.weights > 0] - 1.0) <= 1e-12)
        assert np.all(rows[law.weights == 0] == 0.0)
        # Bayes consistency: mixing the conditional laws returns the marginal of Y_0
        np.testing.assert_allclose(np.einsum("ac,acb->b", law.weights, law.pmf), chain.stationary, atol=1e-12)


def forcing_value_by_hand():
    P = [[Fraction(1, 2), Fraction(1, 2), 0], [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)], [0, Fraction(1, 2), Fraction(1, 2)]]
    nu = [Fraction(1, 4), Fraction(1, 2), Fraction(1, 4)]
    g = Fraction(0)
    for a, c in itertools.product(range(3), repeat=2):
        two = sum(P[a][b] * P[b][c] for b in range(3))
        if two > 0 and P[a][2] * P[2][c] == 0:  # state 2 (value 2) unreachable between a and c
            g += nu[a] * two
    return g


class TestC5:
    def test_forcing_value(self, forcing3):
        g = forcing_value_by_hand()
        assert g == Fraction(13, 32)
        res = c5_probability(forcing3, 1.0)
        assert res.g == pytest.approx(float(g), abs=1e-12)
        assert res.F_xi == 0.75 and res.margin == pytest.approx(0.75 - 13 / 32)

    @pytest.mark.parametrize("name", FULL_SUPPORT)
    def test_full_support_zero(self, name):
        chain = CHAINS[name]
        for p in (0.1, 0.5, 0.9):
            xi = model_facts(chain, p).xi_p
            if xi < chain.values[-1]:
                assert c5_probability(chain, xi, p).g == 0.0

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_extremes_and_identity(self, name):
        chain = CHAINS[name]
        assert c5_probability(chain, chain.values[0] - 1).g == 0.0
        assert c5_probability(chain, chain.values[-1]).g == pytest.approx(1.0, abs=1e-12)
        for xi in chain.values:
            assert c5_probability(chain, xi).identity_error <= 1e-12

    @pytest.mark.parametrize("name", sorted(CHAINS))
    def test_monotone_right_continuous(self, name):
        chain = CHAINS[name]
        grid = np.sort(np.concatenate([chain.values - 0.5, chain.values, chain.values + 1e-9]))
        g = [c5_probability(chain, x).g for x in grid]
        assert all(b >= a - 1e-15 for a, b in zip(g, g[1:]))
        for v in chain.values:
            assert c5_probability(chain, v).g == c5_probability(chain, v + 1e-9).g
        # E G = F gives g(xi) <= F(xi); with a discrete marginal F(xi_p) can exceed p
        for p in (0.1, 0.3, 0.5, 0.75, 0.9):
            res = c5_probability(chain, model_facts(chain, p).xi_p, p)
            assert res.g <= res.F_xi + 1e-15
        for v in chain.values:
            F = chain.cdf(v)
            assert c5_probability(chain, model_facts(chain, F).xi_p if F < 1 else v).g <= F + 1e-15


class TestConditionalCfModulus:
    def test_zero(self, forcing3):
        assert conditional_cf_modulus(forcing3, 1.0, 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_constant_half(self):
        chain = FiniteMarkov([[0.5, 0.5], [0.5, 0.5]], [0.0, 1.0])
        for t in np.linspace(-math.pi, math.pi, 17):
            assert conditional_cf_modulus(chain, 0.0, t) == pytest.approx(abs(math.cos(t / 2)), abs=1e-14)

    def test_symmetric_chain_at_pi(self, sym2):
        # |1 - 2G| is 80/82 on the pairs (0,0) and (1,1), each of weight 0.41, and 0 elsewhere
        assert conditional_cf_modulus(sym2, 0.5, math.pi) == pytest.approx(0.82 * 80 / 82, abs=1e-14)
        assert 0.82 * 80 / 82 == pytest.approx(0.8)

    @settings(max_examples=100, deadline=None)
    @given(st.sampled_from(sorted(CHAINS)), st.floats(-10, 10))
    def test_range(self, name, t):
        chain = CHAINS[name]
        for y in chain.values:
            v = conditional_cf_modulus(chain, y, t)
            assert abs(math.cos(t / 2)) - 1e-12 <= v <= 1.0 + 1e-12
