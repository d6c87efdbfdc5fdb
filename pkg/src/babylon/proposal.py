"""Symmetric Gaussian-mixture importance proposals built from Laplace fits.

The integrands handled here have the form ``N(z; 0, I) * exp(phi(z))`` and
are sharply multimodal once ``beta`` is of order one: plain sampling from
``N(0, I)`` then almost never visits the regions that carry the mass.  The
proposal places one Gaussian at each local maximum of the log-integrand,
with the inverse Hessian as covariance, and mixes in the prior as a
defensive component.

Every component is paired with its mirror image, so the density satisfies
``q(z) == q(-z)`` bit for bit.  That keeps antithetic pairs ``(z, -z)``
valid and makes their weights identical whenever the integrand is even.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def logcosh(x):
    """``log cosh x`` without overflow; exactly even in ``x``."""
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True, eq=False)
class SymmetricMixture:
    """``q(z) = sum_k w_k [N(z; mu_k, S_k) + N(z; -mu_k, S_k)] / 2``.

    ``prec_chol[k] @ prec_chol[k].T`` is the precision of component ``k`` and
    ``cov_chol[k]`` the lower Cholesky factor of its covariance.
    """

    means: np.ndarray  # K x r
    prec_chol: np.ndarray  # K x r x r
    cov_chol: np.ndarray  # K x r x r
    log_weights: np.ndarray  # K, normalised

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def size(self) -> int:
        return self.means.shape[0]

    @classmethod
    def standard(cls, dim: int) -> "SymmetricMixture":
        eye = np.eye(dim)[None]
        return cls(np.zeros((1, dim)), eye.copy(), eye.copy(), np.zeros(1))

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` points; consumes a fixed amount of randomness."""
        u = gen.random(size)
        eps = gen.standard_normal((size, self.dim))
        flip = gen.random(size) < 0.5
        cum = np.cumsum(np.exp(self.log_weights))
        comp = np.minimum(np.searchsorted(cum / cum[-1], u, side="right"), self.size - 1)
        z = np.empty((size, self.dim))
        for k in range(self.size):
            sel = comp == k
            if np.any(sel):
                z[sel] = self.means[k] + eps[sel] @ self.cov_chol[k].T
        z[flip] = -z[flip]
        return z

    @property
    def _packed(self):
        # (r, K*r) stacked precision factors, projected means and constants
        cached = self.__dict__.get("_packed_cache")
        if cached is None:
            r = self.dim
            u_all = np.concatenate(list(self.prec_chol), axis=1)
            c = np.einsum("kr,krs->ks", self.means, self.prec_chol)
            logdet = 2.0 * np.sum(np.log(np.diagonal(self.prec_chol, axis1=1, axis2=2)), axis=1)
            const = 0.5 * logdet - r * HALF_LOG_2PI - 0.5 * np.sum(c * c, axis=1)
            cached = (u_all, c, const)
            object.__setattr__(self, "_packed_cache", cached)
        return cached

    def component_log_densities(self, z: np.ndarray) -> np.ndarray:
        """``m x K`` matrix of ``log w_k + log q_k(z)`` for the mirrored components."""
        z = np.atleast_2d(z)
        m, r = z.shape
        u_all, c, const = self._packed
        out = np.empty((m, self.size))
        step = max(1, (1 << 21) // max(1, self.size * r))
        for a in range(0, m, step):
            proj = (z[a : a + step] @ u_all).reshape(-1, self.size, r)
            quad = np.sum(proj * proj, axis=2)
            dot = np.einsum("mkr,kr->mk", proj, c)
            out[a : a + step] = self.log_weights + const - 0.5 * quad + logcosh(dot)
        return out

    def log_density(self, z: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_densities(z), axis=1)

    def inflated(self, tau: float) -> "SymmetricMixture":
        """Same mixture with every component covariance scaled by ``tau**2``."""
        return SymmetricMixture(self.means, self.prec_chol / tau, self.cov_chol * tau, self.log_weights)

    def reweighted(self, log_weights) -> "SymmetricMixture":
        lw = np.asarray(log_weights, dtype=np.float64)
        return SymmetricMixture(self.means, self.prec_chol, self.cov_chol, lw - logsumexp(lw))


def standard_log_density(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return -0.5 * np.sum(z * z, axis=1) - z.shape[1] * HALF_LOG_2PI


@dataclass(frozen=True)
class Mode:
    z: np.ndarray
    log_integrand: float  # phi(z) - |z|^2/2
    hessian: np.ndarray  # of -log integrand


def find_modes(neg_log_integrand, hessian, starts, tol=1e-5):
    """Local maxima of the integrand reached from ``starts``, deduplicated up to sign."""
    modes = []
    for z0 in starts:
        res = minimize(neg_log_integrand, np.asarray(z0, dtype=np.float64), jac=True, method="L-BFGS-B")
        z = res.x
        scale = tol * (1.0 + np.linalg.norm(z))
        if any(
            np.linalg.norm(z - m.z) < scale or np.linalg.norm(z + m.z) < scale for m in modes
        ):
            continue
        modes.append(Mode(z, -float(res.fun), hessian(z)))
    return modes


def laplace_mixture(modes, max_modes=12, defensive=0.1, min_curvature=0.05, window=30.0):
    """Mixture over the heaviest modes plus a ``N(0, I)`` defensive component."""
    if not modes:
        raise ValueError("no modes supplied")
    dim = modes[0].z.size
    fits = []
    for m in modes:
        h = 0.5 * (m.hessian + m.hessian.T)
        w, v = np.linalg.eigh(h)
        w = np.maximum(w, min_curvature)
        h = (v * w) @ v.T
        fits.append((m.log_integrand - 0.5 * np.sum(np.log(w)), m.z, h))
    fits.sort(key=lambda f: -f[0])
    best = fits[0][0]
    fits = [f for f in fits[:max_modes] if f[0] > best - window]
    lw = np.array([f[0] for f in fits])
    lw = lw - logsumexp(lw) + math.log1p(-defensive)
    means = [f[1] for f in fits] + [np.zeros(dim)]
    precs = [f[2] for f in fits] + [np.eye(dim)]
    prec_chol = np.array([np.linalg.cholesky(p) for p in precs])
    cov_chol = np.array([np.linalg.cholesky(np.linalg.inv(p)) for p in precs])
    log_weights = np.append(lw, math.log(defensive))
    return SymmetricMixture(np.array(means), prec_chol, cov_chol, log_weights)


def adapt_weights(mixture, log_integrand, gen, pilot=32768, floor=0.1, defensive=0.05):
    """One round of weight adaptation from a pilot sample.

    Component ``k`` receives the share of the pilot's importance mass it is
    responsible for.  A uniform floor keeps every component alive and the
    last (defensive) component keeps at least ``defensive`` weight.  The
    pilot must use randomness independent of the main run.
    """
    z = mixture.draw(gen, pilot)
    comp = mixture.component_log_densities(z)
    log_q = logsumexp(comp, axis=1)
    log_w = log_integrand(z) - log_q
    share = logsumexp(comp - log_q[:, None] + log_w[:, None], axis=0)
    share = share - logsumexp(share)
    k = mixture.size
    lw = np.logaddexp(share + math.log1p(-floor), math.log(floor / k))
    lw[-1] = max(lw[-1], math.log(defensive))
    return mixture.reweighted(lw)
