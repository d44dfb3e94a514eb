"""Stationary process models with their analytic ground truth.

Four model families are provided:

``Iid``
    independent draws from a marginal law.
``GaussianMa``
    a Gaussian moving average of order m (hence m-dependent) mapped to the
    marginal law through ``F^-1(Phi(.))``.
``DoeblinCopula``
    a continuous-state Markov chain that, at each step, regenerates from the
    marginal with probability ``1 - retain`` and otherwise takes a Gaussian
    copula AR(1) step with latent correlation ``latent_corr``.  Its
    Dobrushin coefficient is at most ``retain``.
``FiniteMarkov``
    a finite-state chain emitting ``values[state]``.

Randomness comes from the counter-based Philox generator.  A stream is
keyed by a tuple of unsigned integers fed to :class:`numpy.random.SeedSequence`:
``simulate(model, n, seed)`` uses the key ``(seed,)`` and replicate ``i`` of a
batch of length-``n`` series uses ``(master_seed, n, i)``.  Every replicate
owns its stream, so results never depend on how replicates are scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np
from scipy.sparse import csgraph

from mixquant.errors import DomainError
from mixquant.numeric_core import (
    RHO_LIMIT,
    bivariate_normal_cdf,
    std_normal_cdf,
    std_normal_quantile,
)

SCHEMA_VERSION = 1
_UINT64 = 2**64


# ---------------------------------------------------------------------------
# marginal laws


@dataclass(frozen=True)
class MarginalLaw:
    """Continuous marginal law with closed-form cdf, density and quantile.

    ``family`` is ``"std_normal"``, ``"uniform"`` (on (0, 1)) or
    ``"heavy_tail"``: a symmetric law with ``F(x) = 1 - (1 + x)^-nu / 2`` for
    ``x >= 0``, whose tails decay with index ``nu = tail_index``.
    """

    family: str = "std_normal"
    tail_index: float | None = None

    def __post_init__(self):
        if self.family not in ("std_normal", "uniform", "heavy_tail"):
            raise DomainError(f"unknown marginal family {self.family!r}")
        if self.family == "heavy_tail":
            if self.tail_index is None or not self.tail_index > 0:
                raise DomainError("heavy_tail marginal needs tail_index > 0")
        elif self.tail_index is not None:
            raise DomainError(f"tail_index is only meaningful for heavy_tail, not {self.family}")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "std_normal":
            out = std_normal_cdf(x)
        elif self.family == "uniform":
            out = np.clip(x, 0.0, 1.0)
        else:
            tail = 0.5 * (1.0 + np.abs(x)) ** (-self.tail_index)
            out = np.where(x < 0, tail, 1.0 - tail)
        return out if np.ndim(out) else float(out)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "std_normal":
            out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        elif self.family == "uniform":
            out = np.where((x >= 0.0) & (x <= 1.0), 1.0, 0.0)
        else:
            nu = self.tail_index
            out = 0.5 * nu * (1.0 + np.abs(x)) ** (-nu - 1.0)
        return out if np.ndim(out) else float(out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0.0) | (u >= 1.0)):
            raise DomainError("quantile argument must lie in (0, 1)")
        if self.family == "std_normal":
            out = std_normal_quantile(u)
        elif self.family == "uniform":
            out = u
        else:
            nu = self.tail_index
            lower = 1.0 - (2.0 * u) ** (-1.0 / nu)
            upper = (2.0 * (1.0 - u)) ** (-1.0 / nu) - 1.0
            out = np.where(u < 0.5, lower, upper)
        return out if np.ndim(out) else float(out)

    def from_latent(self, w):
        """Map latent standard normals through ``F^-1(Phi(w))``."""
        w = np.asarray(w, dtype=float)
        if self.family == "std_normal":
            return w.copy()
        u = std_normal_cdf(w)
        # Phi saturates for |w| > ~8.3; keep u inside (0, 1)
        u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        return np.asarray(self.quantile(u))

    def to_spec(self):
        if self.family == "heavy_tail":
            return {"family": "heavy_tail", "tail_index": self.tail_index}
        return self.family


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class Iid:
    marginal: MarginalLaw = field(default_factory=MarginalLaw)

    kind = "iid"


@dataclass(frozen=True)
class GaussianMa:
    """Gaussian MA(m) latent series; ``theta`` is rescaled to unit norm."""

    theta: tuple[float, ...]
    marginal: MarginalLaw = field(default_factory=MarginalLaw)

    kind = "gaussian_ma"

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size == 0 or not np.all(np.isfinite(theta)):
            raise DomainError("theta must be a nonempty finite sequence")
        norm = math.sqrt(math.fsum(theta * theta))
        if norm == 0:
            raise DomainError("theta must not vanish")
        # already-normalized input is kept as is so spec round trips are exact
        if abs(norm - 1.0) > 4 * np.finfo(float).eps:
            theta = theta / norm
        object.__setattr__(self, "theta", tuple(float(t) for t in theta))

    @property
    def order(self) -> int:
        return len(self.theta) - 1

    def latent_autocorrelation(self, k: int) -> float:
        th = self.theta
        k = abs(k)
        if k > self.order:
            return 0.0
        return math.fsum(th[j] * th[j + k] for j in range(len(th) - k))


@dataclass(frozen=True)
class DoeblinCopula:
    marginal: MarginalLaw = field(default_factory=MarginalLaw)
    retain: float = 0.6
    latent_corr: float = 0.7

    kind = "doeblin_copula"

    def __post_init__(self):
        if not 0.0 <= self.retain < 1.0:
            raise DomainError("retain must lie in [0, 1)")
        if not -1.0 < self.latent_corr < 1.0:
            raise DomainError("latent_corr must lie in (-1, 1)")


@dataclass(frozen=True, eq=False)
class FiniteMarkov:
    """Finite-state chain with row-stochastic ``transition`` and emitted ``values``."""

    transition: np.ndarray
    values: np.ndarray

    kind = "finite_markov"

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        v = np.array(self.values, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
            raise DomainError("transition must be a square matrix")
        if v.shape != (P.shape[0],):
            raise DomainError("values must have one entry per state")
        _check_stochastic(P)
        if np.any(np.diff(v) <= 0):
            raise DomainError("values must be strictly increasing")
        P.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "values", v)

    @property
    def n_states(self) -> int:
        return self.values.size

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.transition)

    def indicator(self, y: float) -> np.ndarray:
        """0/1 vector of states whose value is ``<= y``."""
        return (self.values <= y).astype(float)

    def cdf(self, y: float) -> float:
        if y >= self.values[-1]:
            return 1.0  # exact, whatever the rounding in sum(nu)
        return math.fsum(self.stationary * self.indicator(y))

    def __eq__(self, other):
        if not isinstance(other, FiniteMarkov):
            return NotImplemented
        return np.array_equal(self.transition, other.transition) and np.array_equal(
            self.values, other.values
        )

    __hash__ = None


ProcessModel = Union[Iid, GaussianMa, DoeblinCopula, FiniteMarkov]


def _check_stochastic(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise DomainError("transition entries must be finite and nonnegative")
    rows = P.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > 1e-12):
        raise DomainError(f"transition rows must sum to 1 (got {rows.tolist()})")


# ---------------------------------------------------------------------------
# Markov chain facts


def dobrushin_coefficient(P) -> float:
    """Largest total-variation distance between two rows of ``P``."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DomainError("P must be square")
    _check_stochastic(P)
    diffs = np.abs(P[:, None, :] - P[None, :, :]).sum(axis=2)
    return float(min(1.0, 0.5 * diffs.max()))


def _closed_classes(P: np.ndarray) -> list[list[int]]:
    ncomp, labels = csgraph.connected_components(P > 0, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        outside = np.flatnonzero(labels != c)
        if not np.any(P[np.ix_(members, outside)] > 0):
            closed.append(members.tolist())
    return closed


def stationary_distribution(P) -> np.ndarray:
    """Stationary law of an irreducible chain (Grassmann-Taksar-Heyman elimination).

    GTH uses no subtractions, so the result is accurate to a few ulps even
    for nearly decomposable chains.
    """
    P = np.array(P, dtype=float)
    _check_stochastic(P)
    S = P.shape[0]
    closed = _closed_classes(P)
    if len(closed) > 1 or (closed and len(closed[0]) < S):
        raise DomainError(f"chain is reducible; closed class of states {closed[0]}")
    A = P.copy()
    for k in range(S - 1, 0, -1):
        s = A[k, :k].sum()
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(S)
    pi[0] = 1.0
    for k in range(1, S):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / math.fsum(pi)


def markov_indicator_longrun_variance(P, nu, h) -> float:
    """Sum over all lags of Cov(h(Y_0), h(Y_k)) for a stationary finite chain.

    Uses the fundamental matrix ``Z = (I - P + 1 nu)^-1``:
    ``sigma^2 = 2 <hc, Z hc>_nu - <hc, hc>_nu`` with ``hc = h - nu.h``.
    """
    P = np.asarray(P, dtype=float)
    nu = np.asarray(nu, dtype=float)
    h = np.asarray(h, dtype=float)
    hc = h - nu @ h
    S = P.shape[0]
    Z = np.linalg.solve(np.eye(S) - P + np.outer(np.ones(S), nu), hc)
    return float(2.0 * (nu * hc) @ Z - (nu * hc) @ hc)


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True, eq=False)
class TimeSeries:
    values: np.ndarray
    model_id: str
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise DomainError("a TimeSeries needs at least one value")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def stream_rng(*key: int) -> np.random.Generator:
    """Philox generator for the stream identified by ``key``."""
    for k in key:
        if not 0 <= int(k) < _UINT64:
            raise DomainError("stream keys must be unsigned 64-bit integers")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


def model_id(model: ProcessModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))


def _generate(model: ProcessModel, n: int, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    R = len(rngs)
    if isinstance(model, Iid):
        u = np.stack([g.random(n) for g in rngs]) if R else np.empty((0, n))
        # Generator.random is on [0, 1); reflect the single excluded endpoint
        u = np.where(u == 0.0, 0.5 * np.finfo(float).tiny, u)
        if model.marginal.family == "std_normal":
            return np.asarray(std_normal_quantile(u))
        return np.asarray(model.marginal.quantile(u))
    if isinstance(model, GaussianMa):
        m = model.order
        eps = np.stack([g.standard_normal(n + m) for g in rngs])
        theta = np.asarray(model.theta)
        w = np.zeros((R, n))
        for j, th in enumerate(theta):
            # Y_t = sum_j theta_j eps_{t - j}; eps is shifted by m so t - j >= -m
            w += th * eps[:, m - j : m - j + n]
        return model.marginal.from_latent(w)
    if isinstance(model, DoeblinCopula):
        draws = [(g.standard_normal(n), g.random(n)) for g in rngs]
        z = np.stack([d[0] for d in draws])
        fresh = np.stack([d[1] for d in draws]) >= model.retain
        a = model.latent_corr
        c = math.sqrt(1.0 - a * a)
        w = np.empty((R, n))
        w[:, 0] = z[:, 0]
        for t in range(1, n):
            w[:, t] = np.where(fresh[:, t], z[:, t], a * w[:, t - 1] + c * z[:, t])
        return model.marginal.from_latent(w)
    if isinstance(model, FiniteMarkov):
        u = np.stack([g.random(n) for g in rngs])
        cum_nu = np.cumsum(model.stationary)
        cum_P = np.cumsum(model.transition, axis=1)
        S = model.n_states
        states = np.empty((R, n), dtype=np.intp)
        states[:, 0] = np.minimum((u[:, 0, None] >= cum_nu[None, :]).sum(axis=1), S - 1)
        for t in range(1, n):
            rows = cum_P[states[:, t - 1]]
            states[:, t] = np.minimum((u[:, t, None] >= rows).sum(axis=1), S - 1)
        return model.values[states]
    raise DomainError(f"unknown model {model!r}")


def simulate(model: ProcessModel, n: int, seed: int) -> TimeSeries:
    """Stationary sample path of length ``n`` drawn from the stream ``(seed,)``."""
    if n < 1:
        raise DomainError("n must be positive")
    values = _generate(model, n, [stream_rng(seed)])[0]
    return TimeSeries(values, model_id(model), int(seed))


def simulate_replicates(model: ProcessModel, n: int, master_seed: int, indices) -> np.ndarray:
    """Rows are replicates; row ``j`` uses the stream ``(master_seed, n, indices[j])``."""
    if n < 1:
        raise DomainError("n must be positive")
    rngs = [stream_rng(master_seed, n, int(i)) for i in indices]
    if not rngs:
        return np.empty((0, n))
    return _generate(model, n, rngs)


# ---------------------------------------------------------------------------
# analytic facts


@dataclass(frozen=True)
class ModelFacts:
    """Analytic truth for a model at probability level ``p``.

    ``mixing_rate`` is ``delta`` in ``alpha(n) <= min(1/4, delta^n)`` and
    ``m_dependence`` the order m after which ``alpha`` vanishes (None when
    the model is not m-dependent).  ``beta`` is identically zero because
    every observation is exactly measurable with respect to its own latent
    coordinate.
    """

    p: float
    xi_p: float
    density_at_xi: float
    sigma2_inf: float
    tau2_inf: float
    c1_holds: bool
    c5_holds: bool
    mixing_rate: float
    m_dependence: int | None = None
    notes: tuple[str, ...] = ()

    def alpha_bound(self, n: int) -> float:
        if self.m_dependence is not None and n > self.m_dependence:
            return 0.0
        if self.m_dependence is not None:
            return 0.25
        return min(0.25, self.mixing_rate**n)

    def beta_bound(self, n: int) -> float:
        return 0.0


def _phi2_diag(z: float, r: float, p: float) -> float:
    if r >= RHO_LIMIT:
        return p
    if r <= -RHO_LIMIT:
        return max(0.0, 2.0 * p - 1.0)
    return bivariate_normal_cdf(z, z, r)


def model_facts(model: ProcessModel, p: float) -> ModelFacts:
    """Exact quantile, density, long-run indicator variance and mixing bound."""
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie in (0, 1)")
    if isinstance(model, FiniteMarkov):
        return _finite_markov_facts(model, p)

    marginal = model.marginal
    xi = float(marginal.quantile(p))
    dens = float(marginal.pdf(xi))
    z = float(std_normal_quantile(p))
    base = p * (1.0 - p)
    notes = []
    if isinstance(model, Iid):
        sigma2 = base
        m_dep, rate = 0, 0.0
        notes.append("independent: all indicator covariances vanish")
    elif isinstance(model, GaussianMa):
        terms = [
            _phi2_diag(z, model.latent_autocorrelation(k), p) - p * p
            for k in range(1, model.order + 1)
        ]
        sigma2 = base + 2.0 * math.fsum(terms)
        m_dep, rate = model.order, 0.0
        notes.append(f"{model.order}-dependent Gaussian subordinated series")
    elif isinstance(model, DoeblinCopula):
        rho, a = model.retain, model.latent_corr
        terms = []
        for k in range(1, 10_001):
            weight = rho**k
            if weight < 1e-14:
                break
            term = weight * (_phi2_diag(z, a**k, p) - p * p)
            terms.append(term)
            if abs(term) < 1e-14:
                break
        sigma2 = base + 2.0 * math.fsum(terms)
        m_dep, rate = None, rho
        notes.append("regeneration with probability 1 - retain bounds the Dobrushin coefficient by retain")
    else:
        raise DomainError(f"unknown model {model!r}")

    c1 = dens > 0.0 and sigma2 > 0.0
    tau2 = sigma2 / dens**2 if dens > 0 else math.inf
    if not c1:
        notes.append("density vanishes at the quantile")
    return ModelFacts(
        p=p,
        xi_p=xi,
        density_at_xi=dens,
        sigma2_inf=sigma2,
        tau2_inf=tau2,
        c1_holds=c1,
        # the conditional law of the latent coordinate given all others is
        # nondegenerate, so G_0(xi_p) lies strictly inside (0, 1) almost surely
        c5_holds=True,
        mixing_rate=rate,
        m_dependence=m_dep,
        notes=tuple(notes),
    )


def _finite_markov_facts(model: FiniteMarkov, p: float) -> ModelFacts:
    nu = model.stationary
    cum = np.cumsum(nu)
    idx = int(np.searchsorted(cum, p - 1e-15))
    idx = min(idx, model.n_states - 1)
    xi = float(model.values[idx])
    h = model.indicator(xi)
    sigma2 = markov_indicator_longrun_variance(model.transition, nu, h)

    from mixquant.exact_oracles import c5_probability

    g = c5_probability(model, xi, p).g
    return ModelFacts(
        p=p,
        xi_p=xi,
        density_at_xi=math.nan,
        sigma2_inf=sigma2,
        tau2_inf=math.nan,
        c1_holds=False,
        c5_holds=g < p,
        mixing_rate=dobrushin_coefficient(model.transition),
        m_dependence=None,
        notes=("discrete marginal: F is not differentiable at its quantile",),
    )


# ---------------------------------------------------------------------------
# spectral density positivity


@dataclass(frozen=True)
class SpectralCheck:
    minimum: float
    argmin: float
    grid_size: int
    passed: bool


def spectral_density_positivity_check(f_lambda: Callable[[np.ndarray], np.ndarray], grid_size: int = 4096) -> SpectralCheck:
    """Minimum of a spectral density over an equispaced grid on (-pi, pi].

    The grid contains ``pi`` and, for even ``grid_size``, ``0``.
    """
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    lam = -math.pi + 2.0 * math.pi * np.arange(1, grid_size + 1) / grid_size
    vals = np.asarray(f_lambda(lam), dtype=float)
    if vals.shape != lam.shape:
        vals = np.broadcast_to(vals, lam.shape)
    if not np.all(np.isfinite(vals)):
        raise DomainError("spectral density is not finite on the grid")
    i = int(np.argmin(vals))
    return SpectralCheck(float(vals[i]), float(lam[i]), grid_size, bool(vals[i] > 0))


def ma_spectral_density(theta) -> Callable[[np.ndarray], np.ndarray]:
    """Spectral density |sum_j theta_j e^{-ij lambda}|^2 / (2 pi) of an MA filter."""
    theta = np.asarray(theta, dtype=float)

    def f(lam):
        lam = np.asarray(lam, dtype=float)
        z = np.exp(-1j * np.outer(lam, np.arange(theta.size))) @ theta
        return np.abs(z) ** 2 / (2.0 * math.pi)

    return f


# ---------------------------------------------------------------------------
# model specification files


_MODEL_FIELDS = {
    "iid": {"marginal"},
    "gaussian_ma": {"marginal", "theta"},
    "doeblin_copula": {"marginal", "retain", "latent_corr"},
    "finite_markov": {"transition", "values"},
}
_COMMON_FIELDS = {"model", "schema_version", "name", "description"}


def _marginal_from_spec(spec) -> MarginalLaw:
    if spec is None:
        return MarginalLaw()
    if isinstance(spec, str):
        return MarginalLaw(spec)
    if isinstance(spec, dict):
        unknown = set(spec) - {"family", "tail_index"}
        if unknown:
            raise DomainError(f"unknown marginal fields {sorted(unknown)}")
        return MarginalLaw(spec.get("family", "std_normal"), spec.get("tail_index"))
    raise DomainError(f"cannot read marginal {spec!r}")


def model_from_dict(spec: dict) -> ProcessModel:
    """Build a model from its JSON document, rejecting unknown fields."""
    if not isinstance(spec, dict) or "model" not in spec:
        raise DomainError("model spec must be an object with a 'model' field")
    kind = spec["model"]
    if kind not in _MODEL_FIELDS:
        raise DomainError(f"unknown model kind {kind!r}")
    version = spec.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise DomainError(f"unsupported schema_version {version!r}")
    unknown = set(spec) - _MODEL_FIELDS[kind] - _COMMON_FIELDS
    if unknown:
        raise DomainError(f"unknown fields for {kind}: {sorted(unknown)}")
    try:
        if kind == "iid":
            return Iid(_marginal_from_spec(spec.get("marginal")))
        if kind == "gaussian_ma":
            return GaussianMa(tuple(spec["theta"]), _marginal_from_spec(spec.get("marginal")))
        if kind == "doeblin_copula":
            return DoeblinCopula(
                _marginal_from_spec(spec.get("marginal")),
                float(spec["retain"]),
                float(spec["latent_corr"]),
            )
        return FiniteMarkov(np.asarray(spec["transition"], float), np.asarray(spec["values"], float))
    except KeyError as exc:
        raise DomainError(f"missing field {exc.args[0]!r} for {kind}") from None


def model_to_dict(model: ProcessModel) -> dict:
    out = {"model": model.kind, "schema_version": SCHEMA_VERSION}
    if isinstance(model, FiniteMarkov):
        out["transition"] = model.transition.tolist()
        out["values"] = model.values.tolist()
        return out
    out["marginal"] = model.marginal.to_spec()
    if isinstance(model, GaussianMa):
        out["theta"] = list(model.theta)
    elif isinstance(model, DoeblinCopula):
        out["retain"] = model.retain
        out["latent_corr"] = model.latent_corr
    return out


def list_presets() -> list[str]:
    root = resources.files("mixquant") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_model(source: str | Path) -> ProcessModel:
    """Load a model from a JSON file path or a shipped preset name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        name = str(source).removeprefix("preset:")
        res = resources.files("mixquant") / "presets" / f"{name}.json"
        if not res.is_file():
            raise DomainError(f"no model file or preset named {source!r}")
        text = res.read_text(encoding="utf-8")
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed model file: {exc}") from None
    return model_from_dict(spec)
