"""Monte Carlo evaluation of the Gaussian-field formula.

For a coupling matrix ``g`` with field covariance ``C`` (see
:mod:`babylon.gaussfield`)::

    log Z = log E exp( sum_i log cosh(h_i + sqrt(beta) X_i) ) - beta/2 * sum_ij |g_ij|

with ``X ~ N(0, C)``.  Writing ``X = L z`` the expectation is an integral
over ``z ~ N(0, I)``.  It is estimated with either the plain field law
(``proposal="prior"``, sampled through the factor or constructively) or
a Laplace mixture fitted to the integrand (``proposal="laplace"``), which
stays efficient at ``beta`` of order one.

Conditionally on ``X`` the spins are independent with means
``tanh(h_i + sqrt(beta) X_i)``, which gives the observables as
self-normalised ratios of the same weights.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .couplings import CouplingMatrix, sign_split
from .errors import NumericalError
from .gaussfield import (
    FieldFactor,
    build_covariance,
    constructive_normals,
    edge_incidence,
    factorize,
    factorized_normals,
)
from .oracle import field_vector
from .proposal import (
    SymmetricMixture,
    adapt_weights,
    find_modes,
    laplace_mixture,
    logcosh,
    standard_log_density,
)

PROPOSALS = ("laplace", "prior", "constructive")
LOW_ESS = 10.0
LOG2 = math.log(2.0)


@dataclass
class EstimateResult:
    value: float
    std_error: float
    samples: int
    seed: int
    elapsed: float
    ess: float = float("nan")
    bias: float = 0.0
    bootstrap_se: float | None = None
    proposal: str = "prior"
    antithetic: bool = True
    beta: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObservableEstimate:
    magnetizations: np.ndarray
    magnetization_se: np.ndarray
    correlations: np.ndarray
    correlation_se: np.ndarray
    ess: float
    samples: int
    seed: int
    elapsed: float
    low_ess: bool = False

    def to_dict(self) -> dict:
        return {
            "magnetizations": self.magnetizations.tolist(),
            "magnetization_se": self.magnetization_se.tolist(),
            "correlations": self.correlations.tolist(),
            "correlation_se": self.correlation_se.tolist(),
            "ess": self.ess,
            "samples": self.samples,
            "seed": self.seed,
            "elapsed": self.elapsed,
            "low_ess": self.low_ess,
        }


# -- field sources ---------------------------------------------------------------
#
# A source turns (seed, block, size) into ``size`` base draws: field samples
# ``x`` (size x n) and the log importance ratio ``log p(z) - log q(z)`` of
# each.  Every source is symmetric, so ``(-x, same ratio)`` is the antithetic
# partner.


class PriorFactorized:
    name = "prior"

    def __init__(self, factor: FieldFactor):
        self.factor = factor

    def draw(self, seed, block, size):
        if self.factor.rank == 0:
            return np.zeros((size, self.factor.n)), None
        return factorized_normals(self.factor.rank, seed, block, size) @ self.factor.l.T, None


class PriorConstructive:
    name = "constructive"

    def __init__(self, g: CouplingMatrix):
        self.n = g.n
        self.incidence = edge_incidence(sign_split(g))

    def draw(self, seed, block, size):
        if self.incidence.num_edges == 0:
            return np.zeros((size, self.n)), None
        xi = constructive_normals(self.incidence.num_edges, seed, block, size)
        return np.asarray(self.incidence.matrix @ xi.T).T / math.sqrt(2.0), None


class LaplaceSource:
    name = "laplace"

    def __init__(self, factor: FieldFactor, mixture: SymmetricMixture):
        self.factor = factor
        self.mixture = mixture

    def draw(self, seed, block, size):
        gen = _rng.generator(seed, _rng.PROPOSAL_DRAWS, block)
        z = self.mixture.draw(gen, size)
        log_ratio = standard_log_density(z) - self.mixture.log_density(z)
        return z @ self.factor.l.T, log_ratio


def fit_laplace(
    factor: FieldFactor,
    beta,
    h,
    seed,
    starts=128,
    max_modes=48,
    inflation=1.2,
    pilot=32768,
):
    """Laplace mixture for ``exp(-|z|^2/2 + sum_i log cosh(h_i + sqrt(beta) (L z)_i))``.

    Modes are searched from ``sqrt(beta) L^T s`` for random spin vectors
    ``s``: given the spins, the field is Gaussian around that point.
    Component covariances are inflated by ``inflation**2`` and the weights
    re-estimated once from an independent pilot sample.
    """
    l = factor.l
    sb = math.sqrt(beta)

    def neg(z):
        a = h + sb * (l @ z)
        return 0.5 * z @ z - float(np.sum(logcosh(a))), z - sb * (l.T @ np.tanh(a))

    def hess(z):
        a = h + sb * (l @ z)
        d = 1.0 / np.cosh(np.minimum(np.abs(a), 350.0)) ** 2
        return np.eye(l.shape[1]) - beta * (l.T * d) @ l

    def log_integrand(z):
        return standard_log_density(z) + np.sum(logcosh(h + sb * (z @ l.T)), axis=1)

    gen = _rng.generator(seed, _rng.PROPOSAL_STARTS, 0)
    spins = np.where(gen.random((starts, l.shape[0])) < 0.5, -1.0, 1.0)
    z0 = [sb * (l.T @ np.tanh(h))] + [sb * (l.T @ s) for s in spins]
    mixture = laplace_mixture(find_modes(neg, hess, z0), max_modes=max_modes).inflated(inflation)
    if pilot:
        mixture = adapt_weights(mixture, log_integrand, _rng.generator(seed, _rng.PROPOSAL_STARTS, 1), pilot)
    return mixture


def make_source(g: CouplingMatrix, beta, h, seed, proposal="laplace", factor=None, **laplace_kw):
    if proposal not in PROPOSALS:
        raise ValueError(f"proposal must be one of {PROPOSALS}")
    if factor is None:
        factor = factorize(build_covariance(g))
    if beta == 0 or factor.rank == 0:
        # the integrand does not depend on the field: every source is exact
        proposal = "prior" if proposal == "laplace" else proposal
    if proposal == "prior":
        return PriorFactorized(factor)
    if proposal == "constructive":
        return PriorConstructive(g)
    return LaplaceSource(factor, fit_laplace(factor, beta, h, seed, **laplace_kw))


# -- per-block evaluation --------------------------------------------------------


def _unit_layout(samples, antithetic):
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if antithetic:
        if samples % 2:
            raise ValueError("antithetic sampling needs an even number of samples")
        return samples // 2, 2
    return samples, 1


def _block_weights(source, seed, block, units, per_unit, beta, h):
    """Per-sample log weights ``S + log p - log q`` and spin means, shaped (units, k, ...)."""
    x, log_ratio = source.draw(seed, block, units)
    sb = math.sqrt(beta)
    a = h + sb * x
    if per_unit == 2:
        a = np.stack([a, h - sb * x], axis=1)
    else:
        a = a[:, None, :]
    lw = np.sum(logcosh(a), axis=-1)
    if log_ratio is not None:
        lw = lw + log_ratio[:, None]
    return lw, a


def _unit_log_weights(lw):
    if lw.shape[1] == 1:
        return lw[:, 0]
    return np.logaddexp(lw[:, 0], lw[:, 1]) - LOG2


def _map_blocks(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _log_weights(g, beta, h, samples, seed, antithetic, source, jobs):
    units, per_unit = _unit_layout(samples, antithetic)
    layout = _rng.blocks(units, _rng.BLOCK_SIZE // per_unit)

    def fn(item):
        b, _, size = item
        lw, _ = _block_weights(source, seed, b, size, per_unit, beta, h)
        return _unit_log_weights(lw)

    return np.concatenate(_map_blocks(fn, layout, jobs))


def summarize_log_weights(unit_lw, seed=0, bootstrap=0):
    """Log of the mean weight with delta-method error, jackknife bias and ESS."""
    unit_lw = np.asarray(unit_lw, dtype=np.float64)
    top = np.max(unit_lw)
    if not np.isfinite(top):
        raise NumericalError("all importance weights vanish or are non-finite")
    w = np.exp(unit_lw - top)
    u = w.size
    total = float(np.sum(w))
    mean = total / u
    value = top + math.log(mean)
    if u > 1:
        se = float(np.std(w, ddof=1)) / (math.sqrt(u) * mean)
    else:
        se = float("inf")
    ess = total**2 / float(np.sum(w * w))
    frac = w / total
    if np.max(frac) < 1.0 - 1e-12 and u > 1:
        loo = np.log1p(-frac) + math.log(u / (u - 1.0))
        bias = (u - 1.0) * float(np.mean(loo))
    else:
        bias = float("nan")
    boot = None
    if bootstrap:
        gen = _rng.generator(seed, _rng.BOOTSTRAP, 0)
        reps = np.empty(int(bootstrap))
        for b in range(reps.size):
            idx = gen.integers(0, u, size=u)
            reps[b] = math.log(np.mean(w[idx]))
        boot = float(np.std(reps, ddof=1)) if reps.size > 1 else 0.0
    return value, se, ess, bias, boot


def formula_free_energy(
    g: CouplingMatrix,
    beta: float,
    h=0.0,
    samples: int = 100_000,
    seed: int = 0,
    *,
    antithetic: bool = True,
    proposal: str = "laplace",
    bootstrap: int = 0,
    jobs: int = 1,
    source=None,
) -> EstimateResult:
    """Estimate ``n f_n`` from the Gaussian-field formula."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    start = time.perf_counter()
    h = field_vector(h, g.n)
    if source is None:
        source = make_source(g, beta, h, seed, proposal)
    unit_lw = _log_weights(g, beta, h, samples, seed, antithetic, source, jobs)
    log_mean, se, ess, bias, boot = summarize_log_weights(unit_lw, seed, bootstrap)
    value = log_mean - 0.5 * beta * g.abs_sum()
    if not math.isfinite(value):
        raise NumericalError("formula estimate is not finite")
    return EstimateResult(
        value=value,
        std_error=se,
        samples=samples,
        seed=seed,
        elapsed=time.perf_counter() - start,
        ess=ess,
        bias=bias,
        bootstrap_se=boot,
        proposal=source.name,
        antithetic=antithetic,
        beta=float(beta),
    )


# -- observables -------------------------------------------------------------------


class _RatioAccumulator:
    """Streaming self-normalised ratio ``sum A / sum B`` with its delta-method variance.

    Each block is summarised around its own weight maximum and ratio, and
    blocks are merged exactly: for the global ratio ``mu``,
    ``sum (A - mu B)^2 = R + 2 (mu_b - mu) C + (mu_b - mu)^2 Q``.
    """

    def __init__(self, top, sum_b, sum_a, resid, cross, sum_bb):
        self.top, self.sum_b, self.sum_a = top, sum_b, sum_a
        self.resid, self.cross, self.sum_bb = resid, cross, sum_bb

    @classmethod
    def from_units(cls, log_b, a_over_b):
        """``log_b``: log unit weights; ``a_over_b``: per-unit weighted means (units x ...)."""
        top = float(np.max(log_b))
        b = np.exp(log_b - top)
        shape = (-1,) + (1,) * (a_over_b.ndim - 1)
        bb = b.reshape(shape)
        a = a_over_b * bb
        sum_b = float(np.sum(b))
        sum_a = np.sum(a, axis=0)
        mu = sum_a / sum_b
        d = a - mu * bb
        return cls(top, sum_b, sum_a, np.sum(d * d, axis=0), np.sum(d * bb, axis=0), float(np.sum(b * b)))

    @staticmethod
    def merge(parts):
        top = max(p.top for p in parts)
        scales = [math.exp(p.top - top) for p in parts]
        sum_b = sum(s * p.sum_b for s, p in zip(scales, parts))
        sum_a = sum(s * p.sum_a for s, p in zip(scales, parts))
        mu = sum_a / sum_b
        resid = 0.0
        for s, p in zip(scales, parts):
            mu_b = p.sum_a / p.sum_b
            dm = mu_b - mu
            resid = resid + s * s * (p.resid + 2.0 * dm * p.cross + dm * dm * p.sum_bb)
        ess = sum_b**2 / sum(s * s * p.sum_bb for s, p in zip(scales, parts))
        return mu, np.sqrt(np.maximum(resid, 0.0)) / sum_b, ess


def formula_observables(
    g: CouplingMatrix,
    beta: float,
    h=0.0,
    samples: int = 100_000,
    seed: int = 0,
    *,
    antithetic: bool = True,
    proposal: str = "laplace",
    jobs: int = 1,
    source=None,
) -> ObservableEstimate:
    """Magnetizations and pair correlations as weighted ``tanh`` averages."""
    start = time.perf_counter()
    n = g.n
    h = field_vector(h, n)
    if source is None:
        source = make_source(g, beta, h, seed, proposal)
    units, per_unit = _unit_layout(samples, antithetic)
    layout = _rng.blocks(units, _rng.BLOCK_SIZE // per_unit)
    iu = np.triu_indices(n, 1)

    def fn(item):
        b, _, size = item
        lw, a = _block_weights(source, seed, b, size, per_unit, beta, h)
        t = np.sign(a) * np.tanh(np.abs(a))
        unit_lw = _unit_log_weights(lw)
        # within-unit weights relative to the unit's own mean weight
        rel = np.exp(lw - unit_lw[:, None]) / per_unit
        mag = np.einsum("uk,uki->ui", rel, t)
        corr = np.einsum("uk,uki,ukj->uij", rel, t, t)[:, iu[0], iu[1]]
        return (
            _RatioAccumulator.from_units(unit_lw, mag),
            _RatioAccumulator.from_units(unit_lw, corr),
        )

    parts = _map_blocks(fn, layout, jobs)
    mag, mag_se, ess = _RatioAccumulator.merge([p[0] for p in parts])
    pair, pair_se, _ = _RatioAccumulator.merge([p[1] for p in parts])
    corr = np.eye(n)
    corr_se = np.zeros((n, n))
    corr[iu] = pair
    corr[iu[::-1]] = pair
    corr_se[iu] = pair_se
    corr_se[iu[::-1]] = pair_se
    return ObservableEstimate(
        magnetizations=np.asarray(mag, dtype=float).reshape(n),
        magnetization_se=np.asarray(mag_se, dtype=float).reshape(n),
        correlations=corr,
        correlation_se=corr_se,
        ess=float(ess),
        samples=samples,
        seed=seed,
        elapsed=time.perf_counter() - start,
        low_ess=bool(ess < LOW_ESS),
    )


def sweep(
    g: CouplingMatrix,
    beta_grid,
    h=0.0,
    samples: int = 100_000,
    seed: int = 0,
    *,
    antithetic: bool = True,
    proposal: str = "laplace",
    bootstrap: int = 0,
    jobs: int = 1,
) -> list:
    """One estimate per ``beta``; all points share the seed, hence the base draws."""
    grid = np.asarray(beta_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("beta grid must be a non-empty vector")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must be strictly increasing")
    factor = factorize(build_covariance(g))
    hv = field_vector(h, g.n)
    out = []
    for beta in grid.tolist():
        source = make_source(g, beta, hv, seed, proposal, factor=factor)
        out.append(
            formula_free_energy(
                g, beta, hv, samples, seed, antithetic=antithetic, bootstrap=bootstrap, jobs=jobs, source=source
            )
        )
    return out
