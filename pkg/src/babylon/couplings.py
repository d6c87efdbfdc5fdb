"""Coupling matrices: generation, validation, sign split and text I/O.

A coupling matrix is stored canonically as its upper-triangular edge list
``(rows, cols, vals)`` with ``rows < cols``, sorted by ``(i, j)`` and free of
zeros.  The dense symmetric form is built from it on demand, which makes the
symmetry and the zero diagonal hold bit for bit.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import rng as _rng
from .errors import CouplingParseError, ValidationError

DENSE_LIMIT = 4096

MODEL_KINDS = ("sk", "ea_lattice", "hopfield", "file")
BOUNDARIES = ("free", "periodic")


def _readonly(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric, zero-diagonal coupling matrix ``g`` over ``n`` spins."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be >= 1")
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=np.float64)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValidationError("edge arrays must be 1-d and of equal length")
        if rows.size:
            if np.any(rows >= cols):
                raise ValidationError("edges must satisfy i < j (diagonal must be zero)")
            if rows.min() < 0 or cols.max() >= self.n:
                raise ValidationError("edge index out of range")
            if not np.all(np.isfinite(vals)):
                raise ValidationError("couplings must be finite")
        keep = vals != 0.0
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            same = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if np.any(same):
                raise ValidationError("duplicate edge in edge list")
        object.__setattr__(self, "rows", _readonly(rows, np.int64))
        object.__setattr__(self, "cols", _readonly(cols, np.int64))
        object.__setattr__(self, "vals", _readonly(vals, np.float64))

    @classmethod
    def from_dense(cls, a) -> "CouplingMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("coupling matrix must be square")
        if not np.all(np.isfinite(a)):
            raise ValidationError("couplings must be finite")
        if np.any(np.diag(a) != 0.0):
            raise ValidationError("diagonal of the coupling matrix must be zero")
        if not np.array_equal(a, a.T):
            raise ValidationError("coupling matrix must be symmetric")
        i, j = np.nonzero(np.triu(a, 1))
        return cls(a.shape[0], i, j, a[i, j])

    @classmethod
    def zeros(cls, n: int) -> "CouplingMatrix":
        empty = np.empty(0)
        return cls(n, empty, empty, empty)

    @cached_property
    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        a[self.rows, self.cols] = self.vals
        a[self.cols, self.rows] = self.vals
        a.setflags(write=False)
        return a

    @property
    def entries(self) -> np.ndarray:
        return self.dense

    def to_sparse(self) -> sp.csr_matrix:
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        v = np.concatenate([self.vals, self.vals])
        return sp.csr_matrix((v, (r, c)), shape=(self.n, self.n))

    @property
    def num_edges(self) -> int:
        return int(self.rows.size)

    def abs_sum(self) -> float:
        """Sum of ``|g_ij|`` over all ordered pairs ``(i, j)``."""
        return 2.0 * math.fsum(np.abs(self.vals).tolist())

    def row_abs_sums(self) -> np.ndarray:
        out = np.zeros(self.n)
        a = np.abs(self.vals)
        np.add.at(out, self.rows, a)
        np.add.at(out, self.cols, a)
        return out

    def tobytes(self) -> bytes:
        return b"".join(
            [np.int64(self.n).tobytes(), self.rows.tobytes(), self.cols.tobytes(), self.vals.tobytes()]
        )

    def __eq__(self, other):
        if not isinstance(other, CouplingMatrix):
            return NotImplemented
        return self.tobytes() == other.tobytes()

    def __hash__(self):
        return hash(self.tobytes())

    def __repr__(self):
        return f"CouplingMatrix(n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True, eq=False)
class SignSplit:
    """Entrywise nonnegative parts with ``g = plus - minus``."""

    plus: np.ndarray
    minus: np.ndarray

    @property
    def n(self) -> int:
        return self.plus.shape[0]


def sign_split(g: CouplingMatrix) -> SignSplit:
    a = g.dense
    plus = np.maximum(a, 0.0)
    minus = np.maximum(-a, 0.0)
    plus.setflags(write=False)
    minus.setflags(write=False)
    return SignSplit(plus, minus)


# -- generators ---------------------------------------------------------------


def generate_sk(n: int, seed: int) -> CouplingMatrix:
    """SK disorder: independent ``N(0, 1/n)`` couplings on every pair.

    Row ``i`` draws its entries ``j > i`` from its own stream, so entry
    ``(i, j)`` is a function of ``(seed, i, j)`` alone.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    scale = 1.0 / math.sqrt(n)
    rows, cols, vals = [], [], []
    for i in range(n - 1):
        draws = _rng.generator(seed, _rng.SK, i).standard_normal(n - 1 - i) * scale
        rows.append(np.full(n - 1 - i, i))
        cols.append(np.arange(i + 1, n))
        vals.append(draws)
    if not rows:
        return CouplingMatrix.zeros(n)
    return CouplingMatrix(n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def lattice_edges(dims, boundary="free"):
    """Nearest-neighbour edges of a hypercubic lattice, row-major site order.

    Returns ``(site, direction, neighbour)`` arrays.  Periodic wraparound is
    added only along axes of length >= 3; for length 2 the wrap edge is the
    same pair as the forward edge.
    """
    dims = [int(d) for d in dims]
    if not dims:
        raise ValueError("dims must be non-empty")
    if any(d < 1 for d in dims):
        raise ValueError("lattice dimensions must be positive")
    if boundary not in BOUNDARIES:
        raise ValueError(f"boundary must be one of {BOUNDARIES}")
    n = int(np.prod(dims))
    coords = np.array(np.unravel_index(np.arange(n), dims)).T
    sites, dirs, nbrs = [], [], []
    for axis, length in enumerate(dims):
        c = coords.copy()
        c[:, axis] += 1
        inside = c[:, axis] < length
        if boundary == "periodic" and length >= 3:
            c[:, axis] %= length
            inside = np.ones(n, dtype=bool)
        idx = np.nonzero(inside)[0]
        sites.append(idx)
        dirs.append(np.full(idx.size, axis))
        nbrs.append(np.ravel_multi_index(c[idx].T, dims))
    return np.concatenate(sites), np.concatenate(dirs), np.concatenate(nbrs)


def generate_ea(dims, boundary: str = "free", seed: int = 0) -> CouplingMatrix:
    """Edwards-Anderson couplings: standard normals on lattice edges.

    The coupling on the edge leaving site ``s`` along ``axis`` is entry
    ``axis`` of the stream for ``s``, so free and periodic lattices share the
    couplings of their common edges.
    """
    site, axis, nbr = lattice_edges(dims, boundary)
    n = int(np.prod([int(d) for d in dims]))
    ndim = len(dims)
    vals = np.empty(site.size)
    for s in np.unique(site):
        draws = _rng.generator(seed, _rng.EA, int(s)).standard_normal(ndim)
        sel = site == s
        vals[sel] = draws[axis[sel]]
    i = np.minimum(site, nbr)
    j = np.maximum(site, nbr)
    return CouplingMatrix(n, i, j, vals)


def hopfield_from_patterns(patterns) -> CouplingMatrix:
    """``g_ij = (1/n) sum_mu xi_i^mu xi_j^mu`` for ``i != j``; diagonal zero."""
    xi = np.asarray(patterns, dtype=np.float64)
    if xi.ndim == 1:
        xi = xi[None, :]
    if not np.all(np.abs(xi) == 1.0):
        raise ValidationError("patterns must be +-1")
    n = xi.shape[1]
    a = xi.T @ xi / n
    np.fill_diagonal(a, 0.0)
    i, j = np.triu_indices(n, 1)
    return CouplingMatrix(n, i, j, a[i, j])


def hopfield_patterns(n: int, p: int, seed: int) -> np.ndarray:
    """``p x n`` matrix of uniform +-1 patterns; column ``i`` drawn from site ``i``'s stream."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be >= 1")
    cols = [
        np.where(_rng.generator(seed, _rng.HOPFIELD, i).integers(0, 2, size=p) == 1, 1.0, -1.0)
        for i in range(n)
    ]
    return np.stack(cols, axis=1)


def generate_hopfield(n: int, p: int, seed: int) -> CouplingMatrix:
    return hopfield_from_patterns(hopfield_patterns(n, p, seed))


# -- model specs ----------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    seed: int = 0
    n: int | None = None
    dims: tuple = ()
    boundary: str = "free"
    p: int | None = None
    path: str | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "sk" and (self.n is None or self.n < 1):
            raise ValueError("sk model requires n >= 1")
        if self.kind == "ea_lattice":
            if not self.dims:
                raise ValueError("ea_lattice model requires dims")
            size = int(np.prod(self.dims))
            if self.n is not None and self.n != size:
                raise ValueError(f"n={self.n} inconsistent with dims {self.dims}")
            if self.boundary not in BOUNDARIES:
                raise ValueError(f"boundary must be one of {BOUNDARIES}")
        if self.kind == "hopfield" and (self.n is None or self.p is None or self.n < 1 or self.p < 1):
            raise ValueError("hopfield model requires n >= 1 and p >= 1")
        if self.kind == "file" and not self.path:
            raise ValueError("file model requires a path")

    def build(self) -> CouplingMatrix:
        if self.kind == "sk":
            return generate_sk(self.n, self.seed)
        if self.kind == "ea_lattice":
            return generate_ea(self.dims, self.boundary, self.seed)
        if self.kind == "hopfield":
            return generate_hopfield(self.n, self.p, self.seed)
        return read_couplings(self.path)


# -- text format ------------------------------------------------------------------


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _as_text(source):
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_header(lines):
    try:
        lineno, line = next(lines)
    except StopIteration:
        raise CouplingParseError("missing header line with n") from None
    try:
        n = int(line)
    except ValueError:
        raise CouplingParseError(f"expected integer n, got {line!r}", lineno) from None
    if n < 1:
        raise CouplingParseError("n must be >= 1", lineno)
    return n


def _parse_value(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise CouplingParseError(f"bad value {tok!r}", lineno) from None
    if not math.isfinite(v):
        raise CouplingParseError(f"non-finite value {tok!r}", lineno)
    return v


def _parse_index(tok, n, lineno):
    try:
        k = int(tok)
    except ValueError:
        raise CouplingParseError(f"bad index {tok!r}", lineno) from None
    if not 0 <= k < n:
        raise CouplingParseError(f"index {k} out of range for n={n}", lineno)
    return k


def load_couplings(source) -> CouplingMatrix:
    """Parse the text coupling format from bytes, str or a file object."""
    lines = _content_lines(_as_text(source))
    n = _parse_header(lines)
    seen = {}
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != 3:
            raise CouplingParseError(f"expected 'i j value', got {line!r}", lineno)
        i = _parse_index(parts[0], n, lineno)
        j = _parse_index(parts[1], n, lineno)
        v = _parse_value(parts[2], lineno)
        if i == j:
            if v != 0.0:
                raise ValidationError(f"line {lineno}: nonzero diagonal entry ({i},{i})")
            continue
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != v:
            raise ValidationError(
                f"line {lineno}: conflicting values for pair {key}: {seen[key]} vs {v}"
            )
        seen[key] = v
    if not seen:
        return CouplingMatrix.zeros(n)
    keys = sorted(seen)
    return CouplingMatrix(
        n,
        np.array([k[0] for k in keys]),
        np.array([k[1] for k in keys]),
        np.array([seen[k] for k in keys]),
    )


def read_couplings(path) -> CouplingMatrix:
    return load_couplings(Path(path).read_bytes())


def dump_couplings(g: CouplingMatrix, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"{g.n}\n")
    for i, j, v in zip(g.rows.tolist(), g.cols.tolist(), g.vals.tolist()):
        buf.write(f"{i} {j} {v!r}\n")
    return buf.getvalue()


def write_couplings(g: CouplingMatrix, path, header: str | None = None) -> None:
    Path(path).write_text(dump_couplings(g, header))


def clamp_spins(g: CouplingMatrix, fixed: dict, h=0.0, beta: float = 1.0):
    """Fix some spins and fold their couplings into fields on the free sites.

    ``fixed`` maps site -> +-1.  Returns ``(g_free, h_free, shift, free_sites)``
    such that, for every free configuration ``s``,
    ``beta H(s, fixed) + h.(s, fixed) == beta H_free(s) + h_free.s + shift``.
    This is how fixed boundary conditions of a lattice enter as a local field.
    """
    n = g.n
    hv = np.full(n, float(h)) if np.ndim(h) == 0 else np.asarray(h, dtype=np.float64)
    spin = np.zeros(n)
    for site, value in fixed.items():
        if value not in (1, -1):
            raise ValidationError("fixed spins must be +1 or -1")
        spin[int(site)] = value
    free = np.nonzero(spin == 0)[0]
    if free.size == 0:
        raise ValidationError("at least one spin must remain free")
    index = -np.ones(n, dtype=np.int64)
    index[free] = np.arange(free.size)
    h_free = hv[free].copy()
    shift = float(np.sum(hv * spin))
    rows, cols, vals = [], [], []
    for i, j, v in zip(g.rows.tolist(), g.cols.tolist(), g.vals.tolist()):
        fi, fj = spin[i] == 0, spin[j] == 0
        if fi and fj:
            rows.append(index[i])
            cols.append(index[j])
            vals.append(v)
        elif fi:
            h_free[index[i]] += beta * v * spin[j]
        elif fj:
            h_free[index[j]] += beta * v * spin[i]
        else:
            shift += beta * v * spin[i] * spin[j]
    g_free = CouplingMatrix(free.size, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals))
    return g_free, h_free, shift, free
