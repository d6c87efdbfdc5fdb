"""Three-spin interactions reduced to a two-body problem plus a field.

For ``g > 0`` the term ``beta g s_i s_j s_k`` equals
``beta g [(s_i + s_j s_k)^2 / 2 - 1]`` and, after a Gaussian linearisation,
``E exp(sqrt(beta g) x (s_i + s_j s_k)) * exp(-beta g)``; negative couplings
use ``s_i - s_j s_k`` instead.  Conditionally on the auxiliary normals
``x`` every triple leaves a field on its first site and a coupling between
the other two, so the remaining spin sum is an ordinary two-body partition
function which is solved exactly by enumeration.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .couplings import CouplingMatrix, _as_text, _content_lines, _parse_header, _parse_index, _parse_value
from .errors import CouplingParseError, NumericalError, ValidationError
from .estimator import EstimateResult, summarize_log_weights
from .oracle import (
    LOG2,
    _check_cap,
    all_configurations,
    exact_free_energy,
    exact_free_energy_batch,
    field_vector,
)
from .proposal import adapt_weights, find_modes, laplace_mixture, standard_log_density

BATCH_LIMIT = 16


@dataclass(frozen=True, eq=False)
class ThreeBodyCouplings:
    """Sparse couplings ``g_ijk`` on strictly increasing triples."""

    n: int
    triples: np.ndarray  # k x 3
    values: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        tri = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if tri.shape[0] != vals.size:
            raise ValidationError("one value per triple required")
        if tri.size:
            if np.any(tri[:, 0] >= tri[:, 1]) or np.any(tri[:, 1] >= tri[:, 2]):
                raise ValidationError("triples must satisfy i < j < k")
            if tri.min() < 0 or tri.max() >= self.n:
                raise ValidationError("triple index out of range")
            if not np.all(np.isfinite(vals)):
                raise ValidationError("couplings must be finite")
        keep = vals != 0.0
        tri, vals = tri[keep], vals[keep]
        order = np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0]))
        tri, vals = tri[order], vals[order]
        if tri.shape[0] > 1 and np.any(np.all(tri[1:] == tri[:-1], axis=1)):
            raise ValidationError("duplicate triple")
        tri.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "triples", tri)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(cls, n: int) -> "ThreeBodyCouplings":
        return cls(n, np.empty((0, 3), dtype=np.int64), np.empty(0))

    @property
    def size(self) -> int:
        return self.values.size

    def abs_sum(self) -> float:
        return math.fsum(np.abs(self.values).tolist())

    def hamiltonian(self, sigma) -> np.ndarray:
        s = np.asarray(sigma, dtype=np.float64)
        t = self.triples
        return np.sum(self.values * s[..., t[:, 0]] * s[..., t[:, 1]] * s[..., t[:, 2]], axis=-1)


def generate_pspin3(n: int, seed: int, density: float = 1.0, scale: float | None = None) -> ThreeBodyCouplings:
    """Centered Gaussian couplings on a random subset of triples.

    Each of the ``C(n, 3)`` triples is kept with probability ``density``.
    The default standard deviation ``sqrt(3)/n`` gives ``Var H ~ n/2`` on the
    full tensor, the same scale as the SK normalisation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    scale = math.sqrt(3.0) / n if scale is None else scale
    i, j, k = np.array(
        [(a, b, c) for a in range(n) for b in range(a + 1, n) for c in range(b + 1, n)], dtype=np.int64
    ).reshape(-1, 3).T
    gen = _rng.generator(seed, _rng.PSPIN_TENSOR, 0)
    keep = gen.random(i.size) < density
    vals = gen.standard_normal(i.size) * scale
    return ThreeBodyCouplings(n, np.stack([i, j, k], axis=1)[keep], vals[keep])


def load_pspin3(source) -> ThreeBodyCouplings:
    """Parse ``n`` followed by ``i j k value`` lines with ``i < j < k``."""
    lines = _content_lines(_as_text(source))
    n = _parse_header(lines)
    seen = {}
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != 4:
            raise CouplingParseError(f"expected 'i j k value', got {line!r}", lineno)
        key = tuple(_parse_index(p, n, lineno) for p in parts[:3])
        if not key[0] < key[1] < key[2]:
            raise CouplingParseError(f"indices must satisfy i < j < k, got {key}", lineno)
        if key in seen:
            raise ValidationError(f"line {lineno}: duplicate triple {key}")
        seen[key] = _parse_value(parts[3], lineno)
    if not seen:
        return ThreeBodyCouplings.empty(n)
    keys = sorted(seen)
    return ThreeBodyCouplings(n, np.array(keys), np.array([seen[k] for k in keys]))


def read_pspin3(path) -> ThreeBodyCouplings:
    return load_pspin3(Path(path).read_bytes())


def dump_pspin3(t: ThreeBodyCouplings) -> str:
    buf = io.StringIO()
    buf.write(f"{t.n}\n")
    for (i, j, k), v in zip(t.triples.tolist(), t.values.tolist()):
        buf.write(f"{i} {j} {k} {v!r}\n")
    return buf.getvalue()


def babylonian_triple(si, sj, sk):
    """``((si + sj sk)^2/2 - 1, (si - sj sk)^2/2 - 1)`` = ``(si sj sk, -si sj sk)``."""
    if not all(abs(s) == 1 for s in (si, sj, sk)):
        raise ValidationError("spins must be +1 or -1")
    return 0.5 * (si + sj * sk) ** 2 - 1, 0.5 * (si - sj * sk) ** 2 - 1


# -- reduction ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReducedInstance:
    """Two-body problem at inverse temperature 1 left after one linearisation.

    ``log Z_3 = log E_x[ Z_2(effective_pair, effective_field + h) ] + constant``
    where ``Z_2`` is the normalised two-body partition function.
    """

    effective_pair: CouplingMatrix
    effective_field: np.ndarray
    constant: float


@dataclass(frozen=True, eq=False)
class _Structure:
    """Fixed linear maps from the per-triple auxiliary normals."""

    n: int
    first: np.ndarray  # site receiving the field of each triple
    pairs: np.ndarray  # unique (j, k) pairs, E x 2
    pair_of: np.ndarray  # triple -> row of ``pairs``
    coef: np.ndarray  # sqrt(beta |g|)
    sign: np.ndarray  # sign of g
    constant: float

    def fields(self, x):
        out = np.zeros((x.shape[0], self.n))
        np.add.at(out.T, self.first, (x * self.coef).T)
        return out

    def couplings(self, x):
        out = np.zeros((x.shape[0], self.pairs.shape[0]))
        np.add.at(out.T, self.pair_of, (x * (self.coef * self.sign)).T)
        return out


def _structure(t: ThreeBodyCouplings, beta: float) -> _Structure:
    tri = t.triples
    pairs, pair_of = np.unique(tri[:, 1:], axis=0, return_inverse=True)
    return _Structure(
        n=t.n,
        first=tri[:, 0].copy(),
        pairs=pairs.reshape(-1, 2),
        pair_of=np.asarray(pair_of).reshape(-1),
        coef=np.sqrt(beta * np.abs(t.values)),
        sign=np.sign(t.values),
        constant=-beta * t.abs_sum(),
    )


def aux_normals(t: ThreeBodyCouplings, seed: int, block: int, size: int) -> np.ndarray:
    """``size x T`` auxiliary normals; column ``t`` is the one matching the sign of ``g_t``.

    Two normals are drawn per triple (one for each sign part); only the one
    whose coupling part is nonzero enters.
    """
    raw = _rng.generator(seed, _rng.PSPIN_AUX, block).standard_normal((size, t.size, 2))
    return np.where(t.values > 0, raw[:, :, 0], raw[:, :, 1])


def reduce_with_normals(t: ThreeBodyCouplings, beta: float, x) -> ReducedInstance:
    s = _structure(t, beta)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    field = s.fields(x)[0]
    pair = CouplingMatrix(t.n, s.pairs[:, 0], s.pairs[:, 1], s.couplings(x)[0]) if t.size else CouplingMatrix.zeros(t.n)
    return ReducedInstance(pair, field, s.constant)


def reduce_one_level(t: ThreeBodyCouplings, beta: float, aux_sample_seed: int, aux_index: int) -> ReducedInstance:
    """Reduction at auxiliary draw ``aux_index`` of the prior stream for ``aux_sample_seed``."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    block, offset = divmod(int(aux_index), _rng.BLOCK_SIZE)
    x = aux_normals(t, aux_sample_seed, block, offset + 1)[offset]
    return reduce_with_normals(t, beta, x)


def hs_integrand_log(t: ThreeBodyCouplings, beta: float, x, h=0.0) -> float:
    """``log 2^-n sum_s exp(sum_t c_t x_t (s_i +- s_j s_k) + h.s)`` evaluated triple by triple."""
    n = t.n
    _check_cap(n, None)
    s = all_configurations(n)
    hv = field_vector(h, n)
    tri = t.triples
    coef = np.sqrt(beta * np.abs(t.values)) * np.asarray(x)
    sign = np.sign(t.values)
    expo = s @ hv
    for q in range(t.size):
        i, j, k = tri[q]
        expo = expo + coef[q] * (s[:, i] + sign[q] * s[:, j] * s[:, k])
    return float(logsumexp(expo) - n * LOG2)


# -- nested estimator -------------------------------------------------------------


class _OuterIntegrand:
    """``log Z_2`` as a function of the auxiliary normals, by enumeration."""

    def __init__(self, st: _Structure, h):
        self.st = st
        self.h = h
        self.batch = st.n <= BATCH_LIMIT
        if self.batch:
            s = all_configurations(st.n)
            # features F[c, t] so that the exponent is F @ x + h.s
            tau = s[:, st.pairs[st.pair_of, 0]] * s[:, st.pairs[st.pair_of, 1]] if st.pair_of.size else np.zeros((s.shape[0], 0))
            self.features = st.coef * (s[:, st.first] + st.sign * tau)
            self.base = s @ h

    def __call__(self, x):
        st = self.st
        if self.batch:
            return exact_free_energy_batch(st.n, st.pairs, st.couplings(x), st.fields(x) + self.h, cap=BATCH_LIMIT)
        out = np.empty(x.shape[0])
        fields = st.fields(x)
        pairs = st.couplings(x)
        for d in range(x.shape[0]):
            g = CouplingMatrix(st.n, st.pairs[:, 0], st.pairs[:, 1], pairs[d])
            out[d] = exact_free_energy(g, 1.0, fields[d] + self.h)
        return out

    def gibbs(self, x):
        expo = self.features @ x + self.base
        logz = logsumexp(expo)
        p = np.exp(expo - logz)
        return float(logz - self.st.n * LOG2), p

    def neg_log(self, x):
        logz, p = self.gibbs(x)
        return 0.5 * x @ x - logz, x - p @ self.features

    def hessian(self, x):
        _, p = self.gibbs(x)
        mean = p @ self.features
        cov = (self.features * p[:, None]).T @ self.features - np.outer(mean, mean)
        return np.eye(x.size) - cov


class _AuxSource:
    def __init__(self, t, mixture=None):
        self.t = t
        self.mixture = mixture
        self.name = "prior" if mixture is None else "laplace"

    def draw(self, seed, block, size):
        if self.mixture is None:
            return aux_normals(self.t, seed, block, size), None
        gen = _rng.generator(seed, _rng.PSPIN_PROPOSAL, block)
        x = self.mixture.draw(gen, size)
        return x, standard_log_density(x) - self.mixture.log_density(x)


def _fit_outer(integrand: _OuterIntegrand, seed, starts=64, max_modes=24, inflation=1.2, pilot=16384):
    gen = _rng.generator(seed, _rng.PSPIN_STARTS, 0)
    configs = np.where(gen.random((starts, integrand.st.n)) < 0.5, 0, 1)
    rows = configs @ (1 << np.arange(integrand.st.n))
    x0 = [np.zeros(integrand.features.shape[1])] + [integrand.features[r] for r in rows]
    modes = find_modes(integrand.neg_log, integrand.hessian, x0)
    mixture = laplace_mixture(modes, max_modes=max_modes).inflated(inflation)

    def log_integrand(x):
        return standard_log_density(x) + integrand(x)

    return adapt_weights(mixture, log_integrand, _rng.generator(seed, _rng.PSPIN_STARTS, 1), pilot)


def nested_free_energy(
    t: ThreeBodyCouplings,
    beta: float,
    h=0.0,
    outer_samples: int = 100_000,
    seed: int = 0,
    *,
    antithetic: bool = True,
    proposal: str = "laplace",
    bootstrap: int = 0,
    cap: int | None = None,
) -> EstimateResult:
    """Three-spin free energy: Monte Carlo over auxiliary normals, exact inner sums."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if outer_samples < 2:
        raise ValueError("outer_samples must be >= 2")
    if proposal not in ("laplace", "prior"):
        raise ValueError("proposal must be 'laplace' or 'prior'")
    _check_cap(t.n, cap)
    start = time.perf_counter()
    hv = field_vector(h, t.n)
    st = _structure(t, beta)
    integrand = _OuterIntegrand(st, hv)
    if beta == 0 or t.size == 0 or proposal == "prior" or not integrand.batch:
        source = _AuxSource(t)
    else:
        source = _AuxSource(t, _fit_outer(integrand, seed))
    per_unit = 2 if antithetic else 1
    if antithetic and outer_samples % 2:
        raise ValueError("antithetic sampling needs an even number of samples")
    units = outer_samples // per_unit
    chunks = []
    for b, _, size in _rng.blocks(units, _rng.BLOCK_SIZE // per_unit):
        x, log_ratio = source.draw(seed, b, size)
        lw = integrand(x)
        if antithetic:
            lw = np.stack([lw, integrand(-x)], axis=1)
        else:
            lw = lw[:, None]
        if log_ratio is not None:
            lw = lw + log_ratio[:, None]
        chunks.append(lw[:, 0] if per_unit == 1 else np.logaddexp(lw[:, 0], lw[:, 1]) - LOG2)
    log_mean, se, ess, bias, boot = summarize_log_weights(np.concatenate(chunks), seed, bootstrap)
    value = log_mean + st.constant
    if not math.isfinite(value):
        raise NumericalError("nested estimate is not finite")
    return EstimateResult(
        value=value,
        std_error=se,
        samples=outer_samples,
        seed=seed,
        elapsed=time.perf_counter() - start,
        ess=ess,
        bias=bias,
        bootstrap_se=boot,
        proposal=source.name,
        antithetic=antithetic,
        beta=float(beta),
    )
