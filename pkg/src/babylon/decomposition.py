"""Square completion of the two-body Hamiltonian.

For Ising spins ``s_i s_j = (s_i + s_j)^2 / 2 - 1`` and
``-s_i s_j = (s_i - s_j)^2 / 2 - 1``.  Applied to the positive and negative
parts of ``g`` this rewrites the full double sum ``sum_ij g_ij s_i s_j`` as a
sum of nonnegative squares plus the spin-independent constant
``G = -sum_ij |g_ij|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .couplings import CouplingMatrix, SignSplit, sign_split
from .errors import ValidationError

COMPENSATED_ABOVE = 1024


def as_spins(sigma, n=None) -> np.ndarray:
    """Validate a spin configuration (or a stack of them) and return floats."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim not in (1, 2):
        raise ValidationError("spin configuration must be a vector or a 2-d stack")
    if not np.all(np.abs(s) == 1.0):
        raise ValidationError("spins must be exactly +1 or -1")
    if n is not None and s.shape[-1] != n:
        raise ValidationError(f"expected {n} spins, got {s.shape[-1]}")
    return s


def _total(terms) -> float:
    terms = np.asarray(terms).ravel()
    if terms.size > COMPENSATED_ABOVE:
        return math.fsum(terms.tolist())
    return float(np.sum(terms))


@dataclass(frozen=True, eq=False)
class DecomposedHamiltonian:
    split: SignSplit
    g_const: float
    n: int


def constant_g(split: SignSplit) -> float:
    """``G = -sum_ij (g+_ij + g-_ij)`` over all ordered pairs."""
    return -_total(split.plus + split.minus)


def decompose(g: CouplingMatrix) -> DecomposedHamiltonian:
    split = sign_split(g)
    return DecomposedHamiltonian(split, constant_g(split), g.n)


def hamiltonian_raw(g: CouplingMatrix, sigma) -> float | np.ndarray:
    """``H(s) = sum_{i<j} g_ij s_i s_j``; accepts a single config or a stack."""
    s = as_spins(sigma, g.n)
    prods = g.vals * s[..., g.rows] * s[..., g.cols]
    if s.ndim == 1:
        return _total(prods)
    return prods.sum(axis=-1)


def hamiltonian_decomposed(d: DecomposedHamiltonian, sigma) -> float:
    """``H(s)`` rebuilt from the squares: half of the full double-sum form."""
    s = as_spins(sigma, d.n)
    if s.ndim != 1:
        return np.array([hamiltonian_decomposed(d, row) for row in s])
    plus_sq = (s[:, None] + s[None, :]) ** 2
    minus_sq = (s[:, None] - s[None, :]) ** 2
    squares = 0.5 * _total(d.split.plus * plus_sq) + 0.5 * _total(d.split.minus * minus_sq)
    return 0.5 * (squares + d.g_const)


def square_terms(d: DecomposedHamiltonian, sigma):
    """Per-pair terms ``g+_ij (s_i+s_j)^2`` and ``g-_ij (s_i-s_j)^2``."""
    s = as_spins(sigma, d.n)
    return (
        d.split.plus * (s[:, None] + s[None, :]) ** 2,
        d.split.minus * (s[:, None] - s[None, :]) ** 2,
    )


def babylonian_pair(si, sj):
    """``((si+sj)^2/2 - 1, (si-sj)^2/2 - 1)``, i.e. ``(si*sj, -si*sj)``."""
    as_spins([si, sj])
    return 0.5 * (si + sj) ** 2 - 1, 0.5 * (si - sj) ** 2 - 1
