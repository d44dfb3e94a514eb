"""Rate and coverage experiments, condition checks and report serialization.

Rate experiments measure

    Delta_n = sup_x |P(sqrt(n)(xi_hat_n - xi_p) <= x) - Phi(x / tau_inf)|

on a grid of sample sizes and fit the slope of ``log Delta_n`` against
``log n``; a slope near -1/2 is the Berry-Esseen rate.  Three modes exist:

``exact-iid``
    the quantile law of an i.i.d. sample is a binomial tail, evaluated on
    ``x in [-8 tau, 8 tau]`` (2001 points by default).  The omitted tails
    contribute less than ``Phi(-8) ~ 6e-16``.
``exact-markov``
    the law of the indicator count of a finite chain at a fixed level y is
    computed exactly and compared with its normal approximation at every
    lattice atom.
``mc``
    ``R`` replicates per n; replicate ``i`` at size ``n`` draws from the
    stream ``(master_seed, n, i)``.  Replicates are processed in fixed
    blocks, so reports are identical for any thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mixquant.errors import DomainError, ExperimentAborted, PlugInError, PreconditionError
from mixquant.estimators import estimate_quantile_ci
from mixquant.exact_oracles import c5_probability, count_variance, iid_quantile_cdf, markov_count_distribution
from mixquant.numeric_core import (
    ecdf_kolmogorov_distance,
    lattice_kolmogorov_distance,
    quantile_rank,
    std_normal_cdf,
)
from mixquant.processes import (
    DoeblinCopula,
    FiniteMarkov,
    GaussianMa,
    Iid,
    ProcessModel,
    dobrushin_coefficient,
    ma_spectral_density,
    model_facts,
    model_from_dict,
    model_to_dict,
    simulate_replicates,
    spectral_density_positivity_check,
    stationary_distribution,
)

MODES = ("exact-iid", "exact-markov", "mc")
_MODE_ALIASES = {"exact-markov-count": "exact-markov", "monte-carlo": "mc"}
BLOCK = 256


# ---------------------------------------------------------------------------
# slope fit


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float


def fit_loglog_slope(ns, deltas) -> SlopeFit:
    """Least-squares line through ``(log n, log Delta)``.

    The standard error uses ``n_points - 2`` degrees of freedom and is NaN
    for two points.
    """
    ns = np.asarray(ns, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if ns.size < 2 or ns.shape != deltas.shape:
        raise DomainError("need at least two (n, delta) pairs")
    if np.any(deltas <= 0) or np.any(ns <= 0):
        raise DomainError("all n and delta must be positive")
    x = np.log(ns)
    y = np.log(deltas)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise DomainError("n values must not all coincide")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    if ns.size == 2:
        return SlopeFit(slope, intercept, math.nan)
    resid = y - (intercept + slope * x)
    s2 = float(resid @ resid) / (ns.size - 2)
    return SlopeFit(slope, intercept, math.sqrt(s2 / sxx))


# ---------------------------------------------------------------------------
# configuration and reports


@dataclass(frozen=True)
class RateExperimentConfig:
    model: ProcessModel
    p: float
    mode: str
    n_grid: tuple[int, ...]
    replicates: int = 5000
    master_seed: int = 0
    x_range: float = 8.0
    x_points: int = 2001
    y: float | None = None
    threads: int = 1

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        if mode not in MODES:
            raise DomainError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        grid = tuple(int(n) for n in self.n_grid)
        if len(grid) < 2:
            raise DomainError("n_grid needs at least two sizes")
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise DomainError("n_grid must be strictly increasing positive integers")
        object.__setattr__(self, "n_grid", grid)
        if not 0.0 < self.p < 1.0:
            raise DomainError("p must lie in (0, 1)")
        if mode == "mc" and self.replicates < 100:
            raise DomainError("Monte Carlo mode needs at least 100 replicates")
        if self.x_points < 2 or not self.x_range > 0:
            raise DomainError("x grid needs a positive range and at least two points")
        if self.threads < 1:
            raise DomainError("threads must be positive")


@dataclass(frozen=True)
class RateReport:
    mode: str
    ns: tuple[int, ...]
    deltas: tuple[float, ...]
    slope: float
    intercept: float
    stderr: float
    seed: int = 0
    replicates: int = 0
    x_range: float = 8.0
    x_points: int = 2001
    model: dict = field(default_factory=dict)
    p: float = math.nan
    notes: tuple[str, ...] = ()

    @property
    def sqrt_n_deltas(self) -> tuple[float, ...]:
        return tuple(math.sqrt(n) * d for n, d in zip(self.ns, self.deltas))

    @property
    def sqrt_n_ratio(self) -> float:
        s = self.sqrt_n_deltas
        return max(s) / min(s)

    def __eq__(self, other):
        if not isinstance(other, RateReport):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)

    __hash__ = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ns"] = list(self.ns)
        d["deltas"] = list(self.deltas)
        d["notes"] = list(self.notes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RateReport:
        d = dict(d)
        d["ns"] = tuple(int(n) for n in d["ns"])
        d["deltas"] = tuple(float(x) for x in d["deltas"])
        d["notes"] = tuple(d.get("notes", ()))
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> RateReport:
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "n", "delta", "sqrt_n_delta", "seed"])
        for n, d, s in zip(self.ns, self.deltas, self.sqrt_n_deltas):
            w.writerow([self.mode, n, repr(d), repr(s), self.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> RateReport:
        """Rebuild the per-n rows and refit the slope; metadata not in the CSV keeps defaults."""
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DomainError("empty rate CSV")
        ns = tuple(int(r["n"]) for r in rows)
        deltas = tuple(float(r["delta"]) for r in rows)
        fit = fit_loglog_slope(ns, deltas)
        return cls(rows[0]["mode"], ns, deltas, fit.slope, fit.intercept, fit.stderr, seed=int(rows[0]["seed"]))

    def csv_view(self) -> RateReport:
        """The report restricted to what the CSV format carries."""
        return RateReport(self.mode, self.ns, self.deltas, self.slope, self.intercept, self.stderr, seed=self.seed)


def _report(config: RateExperimentConfig, deltas, notes=()) -> RateReport:
    fit = fit_loglog_slope(config.n_grid, deltas)
    return RateReport(
        mode=config.mode,
        ns=config.n_grid,
        deltas=tuple(float(d) for d in deltas),
        slope=fit.slope,
        intercept=fit.intercept,
        stderr=fit.stderr,
        seed=config.master_seed if config.mode == "mc" else 0,
        replicates=config.replicates if config.mode == "mc" else 0,
        x_range=config.x_range,
        x_points=config.x_points,
        model=model_to_dict(config.model),
        p=config.p,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# rate experiments


def iid_delta(model: Iid, p: float, n: int, x_range: float = 8.0, x_points: int = 2001) -> float:
    facts = model_facts(model, p)
    if not facts.c1_holds:
        raise PreconditionError("tau_inf is undefined for this model and p")
    tau = math.sqrt(facts.tau2_inf)
    x = np.linspace(-x_range * tau, x_range * tau, x_points)
    Fy = np.clip(np.asarray(model.marginal.cdf(facts.xi_p + x / math.sqrt(n))), 0.0, 1.0)
    law = iid_quantile_cdf(n, p, Fy)
    return float(np.max(np.abs(law - std_normal_cdf(x / tau))))


def run_rate_exact_iid(config: RateExperimentConfig) -> RateReport:
    if config.mode != "exact-iid":
        raise DomainError("config mode must be exact-iid")
    if not isinstance(config.model, Iid):
        raise PreconditionError("exact-iid mode needs an Iid model")
    deltas = [iid_delta(config.model, config.p, n, config.x_range, config.x_points) for n in config.n_grid]
    return _report(config, deltas, [f"x grid: [-{config.x_range} tau, {config.x_range} tau], {config.x_points} points"])


def default_level(chain: FiniteMarkov, p: float) -> float:
    """Midpoint of the gap just above the p-quantile of the state values."""
    xi = model_facts(chain, p).xi_p
    vals = chain.values
    i = int(np.searchsorted(vals, xi))
    if i + 1 >= vals.size:
        raise PreconditionError("the p-quantile is the largest state value; no gap above it")
    return 0.5 * (vals[i] + vals[i + 1])


def markov_delta(chain: FiniteMarkov, y: float, n: int) -> float:
    pmf = markov_count_distribution(chain, y, n)
    sd = math.sqrt(count_variance(chain, y, n))
    return lattice_kolmogorov_distance(pmf, n * chain.cdf(y), sd)


def run_rate_exact_markov(config: RateExperimentConfig) -> RateReport:
    if config.mode != "exact-markov":
        raise DomainError("config mode must be exact-markov")
    chain = config.model
    if not isinstance(chain, FiniteMarkov):
        raise PreconditionError("exact-markov mode needs a FiniteMarkov model")
    delta = dobrushin_coefficient(chain.transition)
    if not delta < 1:
        raise PreconditionError(f"Dobrushin coefficient is {delta}; need < 1")
    y = config.y if config.y is not None else default_level(chain, config.p)
    deltas = [markov_delta(chain, y, n) for n in config.n_grid]
    return _report(config, deltas, [f"level y = {y!r}"])


def _blocks(R: int):
    return [range(s, min(s + BLOCK, R)) for s in range(0, R, BLOCK)]


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def mc_statistics(model: ProcessModel, p: float, n: int, replicates: int, master_seed: int, threads: int = 1) -> np.ndarray:
    """Normalized statistics of ``replicates`` independent samples, in replicate order."""
    facts = model_facts(model, p)
    if not facts.c1_holds or not math.isfinite(facts.tau2_inf):
        raise PreconditionError("analytic tau_inf unavailable for this model")
    k = quantile_rank(n, p)
    scale = math.sqrt(n) / math.sqrt(facts.tau2_inf)

    def work(block):
        X = simulate_replicates(model, n, master_seed, block)
        q = np.partition(X, k - 1, axis=1)[:, k - 1]
        return scale * (q - facts.xi_p)

    return np.concatenate(_parallel_map(work, _blocks(replicates), threads))


def run_rate_monte_carlo(config: RateExperimentConfig) -> RateReport:
    if config.mode != "mc":
        raise DomainError("config mode must be mc")
    deltas = []
    for n in config.n_grid:
        stats = mc_statistics(config.model, config.p, n, config.replicates, config.master_seed, config.threads)
        deltas.append(ecdf_kolmogorov_distance(stats))
    floor = 1.0 / math.sqrt(config.replicates)
    return _report(config, deltas, [f"Monte Carlo noise floor ~ {floor:.4g} on each delta"])


def run_rate(config: RateExperimentConfig) -> RateReport:
    return {
        "exact-iid": run_rate_exact_iid,
        "exact-markov": run_rate_exact_markov,
        "mc": run_rate_monte_carlo,
    }[config.mode](config)


# ---------------------------------------------------------------------------
# coverage


@dataclass(frozen=True)
class CoverageConfig:
    model: ProcessModel
    p: float
    n: int
    replicates: int
    level: float = 0.95
    master_seed: int = 0
    threads: int = 1
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.p < 1.0 and 0.0 < self.level < 1.0):
            raise DomainError("p and level must lie in (0, 1)")
        if self.replicates < 1 or self.n < 16:
            raise DomainError("need replicates >= 1 and n >= 16")


@dataclass(frozen=True)
class CoverageReport:
    level: float
    n: int
    R: int
    covered: int
    width_mean: float
    width_median: float
    failures: int = 0

    @property
    def coverage(self) -> float:
        """Fraction of replicates whose interval contains xi_p; failed plug-ins count as misses."""
        return self.covered / self.R

    @property
    def stderr(self) -> float:
        c = self.coverage
        return math.sqrt(c * (1.0 - c) / self.R)

    def to_json(self) -> str:
        d = asdict(self)
        d["coverage"] = self.coverage
        d["stderr"] = self.stderr
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> CoverageReport:
        d = json.loads(text)
        d.pop("coverage", None)
        d.pop("stderr", None)
        return cls(**d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "n", "R", "covered", "width_mean", "width_median", "failures"])
        w.writerow([repr(self.level), self.n, self.R, self.covered, repr(self.width_mean), repr(self.width_median), self.failures])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> CoverageReport:
        (r,) = list(csv.DictReader(io.StringIO(text)))
        return cls(
            float(r["level"]),
            int(r["n"]),
            int(r["R"]),
            int(r["covered"]),
            float(r["width_mean"]),
            float(r["width_median"]),
            int(r.get("failures") or 0),
        )


def run_coverage(config: CoverageConfig) -> CoverageReport:
    """Coverage of plug-in intervals for ``xi_p`` over independent replicates."""
    xi = model_facts(config.model, config.p).xi_p

    def work(block):
        X = simulate_replicates(config.model, config.n, config.master_seed, block)
        out = []
        for row in X:
            try:
                est = estimate_quantile_ci(row, config.p, config.level)
            except PlugInError as exc:
                out.append((None, exc.diagnostics))
                continue
            out.append((est.covers(xi), est.ci_hi - est.ci_lo))
        return out

    results = [r for chunk in _parallel_map(work, _blocks(config.replicates), config.threads) for r in chunk]
    failed = [r[1] for r in results if r[0] is None]
    if len(failed) > config.max_failure_rate * config.replicates:
        raise ExperimentAborted(
            f"plug-in failed in {len(failed)} of {config.replicates} replicates; first diagnostics: {failed[0]}"
        )
    ok = [r for r in results if r[0] is not None]
    widths = np.array([w for _, w in ok]) if ok else np.array([math.nan])
    return CoverageReport(
        level=config.level,
        n=config.n,
        R=config.replicates,
        covered=sum(1 for c, _ in ok if c),
        width_mean=math.fsum(widths) / widths.size,
        width_median=float(np.median(widths)),
        failures=len(failed),
    )


# ---------------------------------------------------------------------------
# regularity conditions


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str  # PASS, FAIL or INFO
    detail: str
    value: float | None = None


@dataclass(frozen=True)
class ConditionReport:
    model: dict
    p: float
    verdicts: tuple[Verdict, ...]

    @property
    def passed(self) -> bool:
        return all(v.status != "FAIL" for v in self.verdicts)

    def get(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_json(self) -> str:
        return json.dumps(
            {"model": self.model, "p": self.p, "passed": self.passed, "verdicts": [asdict(v) for v in self.verdicts]},
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "status", "value", "detail"])
        for v in self.verdicts:
            w.writerow([v.name, v.status, "" if v.value is None else repr(v.value), v.detail])
        return buf.getvalue()


def _geometric_power(P: np.ndarray) -> int | None:
    """Smallest k <= S^2 with Dobrushin(P^k) < 1, or None."""
    S = P.shape[0]
    Q = P.copy()
    for k in range(1, S * S + 1):
        if dobrushin_coefficient(Q) < 1.0:
            return k
        Q = Q @ P
    return None


def _markov_verdicts(chain: FiniteMarkov, p: float) -> list[Verdict]:
    P = chain.transition
    d = dobrushin_coefficient(P)
    out = [
        Verdict("C1", "FAIL", "discrete marginal: F has no density at its quantile"),
        Verdict(
            "dobrushin",
            "PASS" if d < 1 else "FAIL",
            "max total-variation distance between transition rows",
            d,
        ),
    ]
    try:
        stationary_distribution(P)
    except DomainError as exc:
        out += [
            Verdict("C2", "FAIL", str(exc)),
            Verdict("C3", "PASS", "beta(n) = 0: X_i is a function of Y_i"),
            Verdict("C4", "PASS", "first-order Markov"),
            Verdict("C5", "FAIL", str(exc)),
        ]
        return out
    k = _geometric_power(P)
    if k is None:
        out.append(Verdict("C2", "FAIL", "no power of P with Dobrushin coefficient < 1 (periodic chain)"))
    else:
        rate = dobrushin_coefficient(np.linalg.matrix_power(P, k)) ** (1.0 / k)
        out.append(Verdict("C2", "PASS", f"geometric mixing: alpha(n) <= min(1/4, {rate:.6g}^(n - {k - 1})), faster than any polynomial", rate))
    out.append(Verdict("C3", "PASS", "beta(n) = 0: X_i is a function of Y_i"))
    out.append(Verdict("C4", "PASS", "first-order Markov: conditioning beyond the neighbours adds nothing"))
    xi = model_facts(chain, p).xi_p
    c5 = c5_probability(chain, xi, p)
    out.append(
        Verdict(
            "C5",
            "PASS" if c5.g < p else "FAIL",
            f"exact P(G_0(xi_p) = 1) = {c5.g!r} at xi_p = {xi!r}; margin p - g = {c5.margin!r}",
            c5.g,
        )
    )
    return out


def check_conditions(model: ProcessModel, p: float) -> ConditionReport:
    """Per-condition verdicts with the reasoning behind each."""
    if isinstance(model, FiniteMarkov):
        return ConditionReport(model_to_dict(model), p, tuple(_markov_verdicts(model, p)))
    facts = model_facts(model, p)
    out = [
        Verdict(
            "C1",
            "PASS" if facts.c1_holds else "FAIL",
            f"f(xi_p) = {facts.density_at_xi!r}, sigma2_inf(xi_p) = {facts.sigma2_inf!r}",
            facts.density_at_xi,
        )
    ]
    if isinstance(model, Iid):
        out.append(Verdict("C2", "PASS", "independent: alpha(n) = 0 for n >= 1", 0.0))
        out.append(Verdict("C4", "PASS", "independent"))
        c5_detail = "G_0(xi_p) = p almost surely"
    elif isinstance(model, GaussianMa):
        out.append(Verdict("C2", "PASS", f"{model.order}-dependent: alpha(n) = 0 for n > {model.order}", 0.0))
        spec = spectral_density_positivity_check(ma_spectral_density(model.theta))
        out.append(
            Verdict(
                "spectral",
                "INFO",
                "moving-average density |theta(e^{i lambda})|^2 / (2 pi): polynomial factor times the constant 1/(2 pi) > 0; "
                f"grid minimum of the full density {spec.minimum:.6g} at lambda = {spec.argmin:.6g}",
                spec.minimum,
            )
        )
        out.append(Verdict("C4", "PASS", "Gaussian series with polynomial spectral factor"))
        c5_detail = "conditional law of the latent Gaussian coordinate is nondegenerate normal, so G_0(xi_p) is in (0, 1) a.s."
    elif isinstance(model, DoeblinCopula):
        rho = model.retain
        out.append(Verdict("dobrushin", "PASS", "regeneration bounds the coefficient by retain", rho))
        out.append(Verdict("C2", "PASS", f"geometric mixing: alpha(n) <= min(1/4, {rho!r}^n)", rho))
        out.append(Verdict("C4", "PASS", "first-order Markov"))
        lo, hi = (1 - rho) * p, 1 - (1 - rho) * (1 - p)
        c5_detail = f"regeneration keeps G_0(xi_p) inside [{lo!r}, {hi!r}], so P(G_0 = 1) = 0"
    else:
        raise DomainError(f"unknown model {model!r}")
    out.insert(2, Verdict("C3", "PASS", "beta(n) = 0: X_i is a function of its own latent coordinate", 0.0))
    out.append(Verdict("C5", "PASS", f"{c5_detail}; margin p - 0 = {p!r}", 0.0))
    return ConditionReport(model_to_dict(model), p, tuple(out))


# ---------------------------------------------------------------------------
# config files and plotting


def config_from_dict(d: dict) -> RateExperimentConfig:
    d = dict(d)
    d["model"] = model_from_dict(d["model"])
    d["n_grid"] = tuple(d["n_grid"])
    return RateExperimentConfig(**d)


def write_rate_svg(report: RateReport, path: str | Path, width: int = 480, height: int = 360) -> None:
    """Log-log plot of Delta_n with the fitted line."""
    pad = 50
    lx = np.log10(np.asarray(report.ns, dtype=float))
    ly = np.log10(np.asarray(report.deltas, dtype=float))
    fit_y = (report.intercept + report.slope * np.log(np.asarray(report.ns, float))) / math.log(10)
    x0, x1 = lx.min() - 0.05, lx.max() + 0.05
    allv = np.concatenate([ly, fit_y])
    y0, y1 = allv.min() - 0.1, allv.max() + 0.1

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#444"/>',
        f'<polyline fill="none" stroke="#c33" stroke-dasharray="4 3" points="'
        + " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(lx, fit_y))
        + '"/>',
    ]
    for a, b in zip(lx, ly):
        parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3.5" fill="#236"/>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle">log10 n</text>')
    parts.append(f'<text x="14" y="{height / 2:.0f}" transform="rotate(-90 14 {height / 2:.0f})" text-anchor="middle">log10 delta</text>')
    parts.append(
        f'<text x="{pad}" y="{pad - 12}">{report.mode}: slope {report.slope:.3f} (se {report.stderr:.3f})</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
