"""Exact free energies and Gibbs observables by enumerating all 2^n spins.

Configurations are visited in Gray-code order, so each step flips one spin
and the energy is updated in O(degree).  Weights are accumulated in log space
with a running maximum.  The walk can be cut into contiguous segments that
run on separate threads and are merged afterwards.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np
from scipy.special import logsumexp

from .couplings import CouplingMatrix
from .errors import EnumerationCapError, NumericalError, ValidationError

DEFAULT_CAP = 24
LOG2 = math.log(2.0)


def enumeration_cap() -> int:
    value = os.environ.get("BABYLON_ENUM_CAP")
    return int(value) if value else DEFAULT_CAP


def _check_cap(n, cap):
    cap = enumeration_cap() if cap is None else cap
    if n > cap:
        raise EnumerationCapError(
            f"exact enumeration of {n} spins exceeds the cap of {cap}; "
            "use the Monte Carlo estimator instead (or raise BABYLON_ENUM_CAP)"
        )


def field_vector(h, n) -> np.ndarray:
    """Broadcast a scalar field to ``n`` sites, or validate a per-site vector."""
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValidationError(f"field has shape {arr.shape}, expected ({n},)")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("field must be finite")
    return arr.copy()


def _check_beta(beta):
    if not (beta >= 0 and math.isfinite(beta)):
        raise ValueError("beta must be a finite nonnegative number")


def _adjacency(g: CouplingMatrix):
    sp = g.to_sparse()
    sp.sort_indices()
    return sp.indptr.astype(np.int64), sp.indices.astype(np.int64), sp.data.astype(np.float64)


@numba.njit(cache=True, nogil=True)
def _ctz(x):
    k = 0
    while (x & 1) == 0:
        x >>= 1
        k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _gray_config(t, n):
    code = t ^ (t >> 1)
    s = np.empty(n)
    for i in range(n):
        s[i] = -1.0 if (code >> i) & 1 else 1.0
    return s


@numba.njit(cache=True, nogil=True)
def _pair_energy(s, indptr, indices, data, beta, h):
    n = s.size
    e_h = 0.0
    e_j = 0.0
    for i in range(n):
        e_h += h[i] * s[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j > i:
                e_j += data[p] * s[i] * s[j]
    return beta * e_j + e_h


@numba.njit(cache=True, nogil=True)
def _pair_segment(n, indptr, indices, data, beta, h, start, stop, mode, checkpoints):
    # mode: 0 = partition function only, 1 = + magnetizations, 2 = + correlations
    s = _gray_config(start, n)
    e = _pair_energy(s, indptr, indices, data, beta, h)
    top = e
    total = 1.0
    mag = np.zeros(n)
    corr = np.zeros((n, n))
    recorded = np.empty(checkpoints.size)
    c = 0
    while c < checkpoints.size and checkpoints[c] < start:
        c += 1
    t = start
    while True:
        while c < checkpoints.size and checkpoints[c] == t:
            recorded[c] = e
            c += 1
        if t > start:
            if e > top:
                scale = math.exp(top - e)
                total *= scale
                if mode >= 1:
                    mag *= scale
                if mode == 2:
                    corr *= scale
                top = e
            w = math.exp(e - top)
            total += w
        else:
            w = 1.0
        if mode >= 1:
            for i in range(n):
                mag[i] += w * s[i]
        if mode == 2:
            for i in range(n):
                wi = w * s[i]
                for j in range(i + 1, n):
                    corr[i, j] += wi * s[j]
        t += 1
        if t >= stop:
            break
        k = _ctz(t)
        local = 0.0
        for p in range(indptr[k], indptr[k + 1]):
            local += data[p] * s[indices[p]]
        e += -2.0 * s[k] * (beta * local + h[k])
        s[k] = -s[k]
    return top, total, mag, corr, recorded


@numba.njit(cache=True, nogil=True)
def _triple_energy(s, ti, tj, tk, tv, beta, h):
    e = 0.0
    for i in range(s.size):
        e += h[i] * s[i]
    e3 = 0.0
    for t in range(tv.size):
        e3 += tv[t] * s[ti[t]] * s[tj[t]] * s[tk[t]]
    return beta * e3 + e


@numba.njit(cache=True, nogil=True)
def _triple_segment(n, ti, tj, tk, tv, site_ptr, site_idx, beta, h, start, stop):
    s = _gray_config(start, n)
    e = _triple_energy(s, ti, tj, tk, tv, beta, h)
    top = e
    total = 1.0
    t = start + 1
    while t < stop:
        k = _ctz(t)
        local = 0.0
        for p in range(site_ptr[k], site_ptr[k + 1]):
            q = site_idx[p]
            local += tv[q] * s[ti[q]] * s[tj[q]] * s[tk[q]]
        e += -2.0 * (beta * local + h[k] * s[k])
        s[k] = -s[k]
        if e > top:
            total *= math.exp(top - e)
            top = e
        total += math.exp(e - top)
        t += 1
    return top, total


def _segments(n, jobs):
    size = 1 << n
    jobs = max(1, min(int(jobs), size))
    edges = [size * k // jobs for k in range(jobs + 1)]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run(fn, segments, jobs):
    if len(segments) == 1 or jobs <= 1:
        return [fn(a, b) for a, b in segments]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda ab: fn(*ab), segments))


def _merge(parts, n):
    tops = np.array([p[0] for p in parts])
    top = tops.max()
    scales = np.exp(tops - top)
    total = sum(p[1] * s for p, s in zip(parts, scales))
    log_z = top + math.log(total) - n * LOG2
    if not math.isfinite(log_z):
        raise NumericalError("enumeration produced a non-finite free energy")
    return log_z, scales, total


def _pair_walk(g, beta, h, jobs, cap, mode, checkpoints=None):
    _check_beta(beta)
    n = g.n
    _check_cap(n, cap)
    h = field_vector(h, n)
    indptr, indices, data = _adjacency(g)
    cps = np.asarray([] if checkpoints is None else checkpoints, dtype=np.int64)

    def fn(a, b):
        return _pair_segment(n, indptr, indices, data, float(beta), h, a, b, mode, cps)

    parts = _run(fn, _segments(n, jobs), jobs)
    return parts


def exact_free_energy(g: CouplingMatrix, beta: float, h=0.0, jobs: int = 1, cap: int | None = None) -> float:
    """``log( 2^-n sum_s exp(beta H(s) + h.s) )`` by full enumeration."""
    parts = _pair_walk(g, beta, h, jobs, cap, 0)
    return _merge(parts, g.n)[0]


def exact_solution(g: CouplingMatrix, beta: float, h=0.0, jobs: int = 1, cap: int | None = None):
    """Free energy, magnetizations and correlations from one Gray-code pass."""
    n = g.n
    parts = _pair_walk(g, beta, h, jobs, cap, 2)
    log_z, scales, total = _merge(parts, n)
    mag = sum(p[2] * s for p, s in zip(parts, scales)) / total
    upper = sum(p[3] * s for p, s in zip(parts, scales)) / total
    corr = upper + upper.T
    np.fill_diagonal(corr, 1.0)
    return log_z, mag, corr


def exact_observables(g: CouplingMatrix, beta: float, h=0.0, jobs: int = 1, cap: int | None = None):
    """``(<s_i>, <s_i s_j>)`` under the Gibbs weight ``exp(beta H + h.s)``."""
    _, mag, corr = exact_solution(g, beta, h, jobs, cap)
    return mag, corr


def gray_checkpoint_energies(g: CouplingMatrix, beta: float, h, steps, jobs: int = 1) -> np.ndarray:
    """Incrementally updated exponent ``beta H + h.s`` at the given Gray steps."""
    steps = np.asarray(steps, dtype=np.int64)
    order = np.argsort(steps)
    parts = _pair_walk(g, beta, h, jobs, None, 0, steps[order])
    segs = _segments(g.n, jobs)
    out = np.empty(steps.size)
    sorted_steps = steps[order]
    for (a, b), part in zip(segs, parts):
        sel = (sorted_steps >= a) & (sorted_steps < b)
        out[order[sel]] = part[4][sel]
    return out


def gray_configuration(step: int, n: int) -> np.ndarray:
    return _gray_config(int(step), int(n))


def all_configurations(n: int) -> np.ndarray:
    """``2^n x n`` table of spins in binary order (bit ``i`` set means ``s_i = -1``)."""
    idx = np.arange(1 << n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n)) & 1
    return 1.0 - 2.0 * bits


def exact_free_energy_batch(n: int, pairs, couplings, fields, cap: int = 16) -> np.ndarray:
    """Many two-body instances sharing one edge set, at inverse temperature 1.

    Row ``d`` returns ``log 2^-n sum_s exp(sum_e J[d,e] s_a s_b + F[d].s)``
    where ``pairs[e] = (a, b)``.  Used for the inner problems of the nested
    three-spin estimator, whose pair structure is fixed.
    """
    if n > cap:
        raise EnumerationCapError(f"batch enumeration limited to {cap} spins")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    couplings = np.atleast_2d(np.asarray(couplings, dtype=np.float64))
    fields = np.atleast_2d(np.asarray(fields, dtype=np.float64))
    s = all_configurations(n)
    prods = s[:, pairs[:, 0]] * s[:, pairs[:, 1]]
    out = np.empty(fields.shape[0])
    chunk = max(1, (1 << 21) >> n)
    for a in range(0, fields.shape[0], chunk):
        expo = fields[a : a + chunk] @ s.T
        if pairs.shape[0]:
            expo += couplings[a : a + chunk] @ prods.T
        out[a : a + chunk] = logsumexp(expo, axis=1) - n * LOG2
    return out


def _triple_arrays(t):
    tri = np.asarray(t.triples, dtype=np.int64).reshape(-1, 3)
    vals = np.asarray(t.values, dtype=np.float64)
    return tri[:, 0].copy(), tri[:, 1].copy(), tri[:, 2].copy(), vals


def exact_free_energy_pspin3(t, beta: float, h=0.0, jobs: int = 1, cap: int | None = None) -> float:
    """Enumeration oracle for ``H = sum_{i<j<k} g_ijk s_i s_j s_k``.

    ``t`` needs ``n``, ``triples`` (``k x 3``) and ``values`` attributes.
    """
    _check_beta(beta)
    n = t.n
    _check_cap(n, cap)
    h = field_vector(h, n)
    ti, tj, tk, tv = _triple_arrays(t)
    owner = np.concatenate([ti, tj, tk])
    which = np.concatenate([np.arange(tv.size)] * 3)
    order = np.argsort(owner, kind="stable")
    site_idx = which[order].astype(np.int64)
    site_ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(site_ptr, owner + 1, 1)
    site_ptr = np.cumsum(site_ptr)

    def fn(a, b):
        return _triple_segment(n, ti, tj, tk, tv, site_ptr, site_idx, float(beta), h, a, b)

    parts = _run(fn, _segments(n, jobs), jobs)
    return _merge(parts, n)[0]
