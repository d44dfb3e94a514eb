"""Characteristic-function inequalities and cumulant expansions, evaluated exactly on finite-state chains."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from mixquant.errors import DomainError, PreconditionError
from mixquant.exact_oracles import (
    c5_probability,
    conditional_cf_modulus,
    conditional_law,
    markov_cf,
    markov_cf_many,
    markov_cumulants,
)
from mixquant.processes import FiniteMarkov, model_facts


def psi_modulus(a: float, t):
    """|a e^{it} + 1 - a| = sqrt(1 - 4 a (1 - a) sin^2(t / 2))."""
    if not 0.0 <= a <= 1.0:
        raise DomainError("a must lie in [0, 1]")
    s = np.sin(np.asarray(t, dtype=float) / 2.0)
    out = np.sqrt(np.clip(1.0 - 4.0 * a * (1.0 - a) * s * s, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Lemma33Report:
    """Margins of the conditional characteristic function bound.

    ``margins[j, i]`` is ``1 - (1 - |Psi_eps(t_i)|) delta_hat`` minus the
    exact ``E|E(exp(i t_i I(X_0 <= y_j)) | neighbours)|``.
    """

    epsilon: float
    delta_hat: float
    y_window: tuple[float, float]
    y_grid: np.ndarray
    t_grid: np.ndarray
    margins: np.ndarray
    a3_probability: np.ndarray
    g_xi: float
    p: float

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    def passed(self, tol: float = 1e-12) -> bool:
        return bool(self.min_margin >= -tol)

    def rows(self):
        for j, y in enumerate(self.y_grid):
            for i, t in enumerate(self.t_grid):
                yield {"y": float(y), "t": float(t), "margin": float(self.margins[j, i])}


def lemma33_check(
    chain: FiniteMarkov,
    p: float,
    epsilon: float = 0.05,
    window_halfwidth: float = math.inf,
    t_grid=None,
) -> Lemma33Report:
    """Check ``E|E(e^{itI(X_0<=y)}|C)| <= 1 - (1 - |Psi_eps(t)|) delta`` exactly.

    ``delta`` is taken as the smallest ``P(eps < G_0(y) < 1 - eps)`` over
    the state values ``y`` inside ``[xi_p - w, xi_p + w]`` with
    ``0 < F(y) < 1``.  Values with ``F(y)`` equal to 0 or 1 make ``G_0``
    degenerate and are skipped.
    """
    if not 0.0 < epsilon < 0.5:
        raise DomainError("epsilon must lie in (0, 1/2)")
    if t_grid is None:
        t_grid = np.linspace(-math.pi, math.pi, 64)
    t_grid = np.asarray(t_grid, dtype=float)
    facts = model_facts(chain, p)
    law = conditional_law(chain)
    c5 = c5_probability(chain, facts.xi_p, p, law)
    if not c5.g < p:
        raise PreconditionError(f"degeneracy hypothesis violated: g(xi_p) = {c5.g} >= p = {p}")
    lo, hi = facts.xi_p - window_halfwidth, facts.xi_p + window_halfwidth
    F = np.array([chain.cdf(v) for v in chain.values])
    inside = (chain.values >= lo) & (chain.values <= hi) & (F > 0) & (F < 1)
    y_grid = chain.values[inside]
    if y_grid.size == 0:
        raise PreconditionError("no nondegenerate state value inside the window")
    a3 = np.array([math.fsum(law.weights[(law.given(y) > epsilon) & (law.given(y) < 1 - epsilon)]) for y in y_grid])
    delta_hat = float(a3.min())
    if delta_hat <= 0:
        raise PreconditionError(f"P(eps < G < 1 - eps) vanishes in the window for eps={epsilon}; use a smaller epsilon")
    bound = 1.0 - (1.0 - psi_modulus(epsilon, t_grid)) * delta_hat
    margins = np.empty((y_grid.size, t_grid.size))
    for j, y in enumerate(y_grid):
        for i, t in enumerate(t_grid):
            margins[j, i] = bound[i] - conditional_cf_modulus(chain, y, t, law)
    return Lemma33Report(
        epsilon, delta_hat, (lo, hi), y_grid, t_grid, margins, a3, c5.g, p
    )


# ---------------------------------------------------------------------------
# cumulant expansion of log H_n


def window_bound(n: int) -> float:
    """Half-width ``sqrt(log n) (log log (n + 1))^{1/4}`` of the expansion window."""
    return math.sqrt(math.log(n)) * math.log(math.log(n + 1)) ** 0.25


def tracked_log_cf(cf, ts, max_halvings: int = 30):
    """Continuous logarithm of ``cf`` along the path from 0 to each ``t``.

    ``cf`` maps an array of t values to complex values.  Between
    successive evaluation points the phase must move by less than pi/2;
    otherwise the step is halved.  Returns the logs (NaN where |cf| vanished)
    in the order of ``ts``.
    """
    ts = np.asarray(ts, dtype=float)
    out = np.full(ts.shape, np.nan + 0j, dtype=complex)
    for sign in (1.0, -1.0):
        idx = np.flatnonzero(sign * ts > 0)
        targets = sorted(idx, key=lambda i: abs(ts[i]))
        t_prev, phase_prev = 0.0, 0.0
        for i in targets:
            goal = ts[i]
            step = goal - t_prev
            while True:
                t_next = t_prev + step
                val = complex(cf(np.array([t_next]))[0])
                if val == 0:
                    break
                arg = cmath.phase(val)
                jump = (arg - phase_prev + math.pi) % (2 * math.pi) - math.pi
                if abs(jump) > math.pi / 2 and max_halvings:
                    step /= 2.0
                    max_halvings -= 1
                    continue
                phase_prev = phase_prev + jump
                t_prev = t_next
                if t_prev == goal:
                    out[i] = complex(math.log(abs(val)), phase_prev)
                    break
                step = goal - t_prev
            if val == 0:
                break
    out[ts == 0.0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class CumulantReport:
    n: int
    t_grid: np.ndarray
    residuals: np.ndarray
    cumulants: np.ndarray
    dropped: tuple[float, ...] = ()

    @property
    def scaled(self) -> np.ndarray:
        return self.residuals * math.sqrt(self.n)


def taylor_residual(chain: FiniteMarkov, y: float, n_grid, t_grid, min_modulus: float = 1e-8) -> list[CumulantReport]:
    """``|log H_n(t) - sum_{r=2}^5 (it)^r chi_{r,n} / r!|`` for each n in ``n_grid``.

    Points where ``|H_n(t)| < min_modulus`` are dropped and listed in
    ``dropped``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    reports = []
    for n in n_grid:
        n = int(n)
        chi = markov_cumulants(chain, y, n, 5)
        H = markov_cf_many(chain, y, n, t_grid)
        keep = np.abs(H) >= min_modulus
        dropped = tuple(float(t) for t in t_grid[~keep])
        ts = t_grid[keep]
        logs = tracked_log_cf(lambda s: markov_cf_many(chain, y, n, s), ts)
        it = 1j * ts
        poly = sum(it**r / math.factorial(r) * chi[r - 1] for r in range(2, 6))
        resid = np.abs(logs - poly)
        resid[ts == 0.0] = 0.0
        reports.append(CumulantReport(n, ts, resid, chi, dropped))
    return reports


@dataclass(frozen=True, eq=False)
class EnvelopeReport:
    n: int
    t_grid: np.ndarray
    modulus: np.ndarray
    gaussian_ratio: np.ndarray


def cf_envelope(chain: FiniteMarkov, y: float, n: int, t_grid) -> EnvelopeReport:
    """Exact ``|H_n(t)|`` and its ratio to ``exp(-t^2 / 2)``; descriptive only."""
    t_grid = np.asarray(t_grid, dtype=float)
    mod = np.abs(markov_cf_many(chain, y, n, t_grid))
    if not np.all(mod <= 1.0 + 1e-12):
        raise AssertionError("characteristic function modulus exceeds one")
    with np.errstate(over="ignore"):
        ratio = mod * np.exp(t_grid**2 / 2.0)
    return EnvelopeReport(n, t_grid, mod, ratio)


__all__ = [
    "CumulantReport",
    "EnvelopeReport",
    "Lemma33Report",
    "cf_envelope",
    "lemma33_check",
    "markov_cf",
    "psi_modulus",
    "taylor_residual",
    "tracked_log_cf",
    "window_bound",
]
