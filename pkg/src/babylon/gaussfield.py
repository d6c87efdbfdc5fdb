"""The Gaussian field whose log-cosh functional gives the free energy.

Its covariance is the coupling matrix with the diagonal replaced by the row
sums of ``|g|``.  Two samplers are provided: one through a factor of that
covariance, and one that builds the field from independent per-edge normals
exactly as the Hubbard-Stratonovich linearisation produces it.  They must
agree in distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import rng as _rng
from .couplings import CouplingMatrix, SignSplit
from .errors import NotPSDError

PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    n: int
    c: np.ndarray


@dataclass(frozen=True, eq=False)
class FieldFactor:
    """``l @ l.T`` approximates the covariance; ``l`` is ``n x rank``."""

    l: np.ndarray
    rank: int
    method: str

    @property
    def n(self) -> int:
        return self.l.shape[0]


def build_covariance(g: CouplingMatrix) -> CovarianceSpec:
    c = np.array(g.dense, dtype=np.float64)
    np.fill_diagonal(c, g.row_abs_sums())
    c.setflags(write=False)
    return CovarianceSpec(g.n, c)


def factorize(cov: CovarianceSpec, tol: float = PSD_TOL) -> FieldFactor:
    """Cholesky when the covariance is comfortably positive definite.

    Singular covariances (e.g. a ferromagnet on a bipartite graph) fall back
    to an eigendecomposition with eigenvalues in ``[-tol*dmax, tol*dmax]``
    clamped to zero; the factor then has the numerical rank.
    """
    c = np.asarray(cov.c, dtype=np.float64)
    n = c.shape[0]
    dmax = float(np.max(np.diag(c))) if n else 0.0
    if dmax == 0.0:
        return FieldFactor(np.zeros((n, 0)), 0, "zero")
    try:
        l = np.linalg.cholesky(c)
        pivots = np.diag(l) ** 2
        if pivots.min() > 1e-8 * dmax:
            return FieldFactor(l, n, "cholesky")
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(c)
    if w[0] < -tol * dmax:
        raise NotPSDError(f"covariance has eigenvalue {w[0]:.3e} below -{tol:g}*max-diagonal")
    keep = w > tol * dmax
    l = v[:, keep] * np.sqrt(w[keep])
    return FieldFactor(np.ascontiguousarray(l), int(keep.sum()), "eigh")


def _count_check(count):
    if count < 1:
        raise ValueError("count must be >= 1")


def factorized_normals(rank, seed, block, size):
    """Standard normals behind block ``block`` of the factorized stream."""
    return _rng.generator(seed, _rng.FIELD_FACTORIZED, block).standard_normal((size, rank))


def iter_factorized(f: FieldFactor, count: int, seed: int):
    """Yield ``(start, samples)`` blocks of ``l @ z`` with ``z ~ N(0, I_rank)``."""
    _count_check(count)
    for b, start, size in _rng.blocks(count):
        if f.rank == 0:
            yield start, np.zeros((size, f.n))
        else:
            yield start, factorized_normals(f.rank, seed, b, size) @ f.l.T


def sample_field_factorized(f: FieldFactor, count: int, seed: int) -> np.ndarray:
    """``count x n`` array of field samples; row ``m`` depends only on ``(seed, m)``."""
    return np.concatenate([x for _, x in iter_factorized(f, count, seed)], axis=0)


@dataclass(frozen=True, eq=False)
class EdgeIncidence:
    """Ordered-pair form of the constructive sampler.

    Column ``e`` carries the normal of ordered pair ``(i_e, j_e)``.  A
    positive coupling adds ``sqrt(g+)`` to both ``Z_i`` (row sum) and ``Z_j``
    (column sum); a negative one adds ``sqrt(g-)`` to ``Z_i`` and subtracts it
    from ``Z_j``.
    """

    n: int
    matrix: sp.csr_matrix  # n x num_ordered_edges

    @property
    def num_edges(self) -> int:
        return self.matrix.shape[1]


def edge_incidence(split: SignSplit) -> EdgeIncidence:
    n = split.n
    pi, pj = np.nonzero(split.plus)
    mi, mj = np.nonzero(split.minus)
    sp_ = np.sqrt(split.plus[pi, pj])
    sm = np.sqrt(split.minus[mi, mj])
    ep = pi.size
    em = mi.size
    cols_p = np.arange(ep)
    cols_m = ep + np.arange(em)
    r = np.concatenate([pi, pj, mi, mj])
    c = np.concatenate([cols_p, cols_p, cols_m, cols_m])
    v = np.concatenate([sp_, sp_, sm, -sm])
    m = sp.csr_matrix((v, (r, c)), shape=(n, ep + em))
    return EdgeIncidence(n, m)


def constructive_normals(num_edges, seed, block, size):
    return _rng.generator(seed, _rng.FIELD_CONSTRUCTIVE, block).standard_normal((size, num_edges))


def iter_constructive(split: SignSplit, count: int, seed: int):
    """Yield ``(start, samples)`` blocks of ``X_i = Z_i / sqrt(2)``."""
    _count_check(count)
    inc = edge_incidence(split)
    for b, start, size in _rng.blocks(count):
        if inc.num_edges == 0:
            yield start, np.zeros((size, split.n))
            continue
        xi = constructive_normals(inc.num_edges, seed, b, size)
        z = np.asarray(inc.matrix @ xi.T).T
        yield start, z / np.sqrt(2.0)


def sample_field_constructive(split: SignSplit, count: int, seed: int) -> np.ndarray:
    return np.concatenate([x for _, x in iter_constructive(split, count, seed)], axis=0)


def covariance_standard_errors(samples: np.ndarray, cov: np.ndarray | None = None):
    """Empirical covariance (mean known to be zero) and its entrywise standard error.

    The standard error of ``mean(x_i x_j)`` is estimated from the sample
    variance of the products.
    """
    x = np.asarray(samples)
    m = x.shape[0]
    emp = x.T @ x / m
    sq = (x * x).T @ (x * x) / m
    var = np.maximum(sq - emp**2, 0.0)
    return emp, np.sqrt(var / m)
