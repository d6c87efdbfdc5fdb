import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from babylon import CouplingMatrix, generate_ea, generate_hopfield, generate_sk, load_couplings, sign_split
from babylon.couplings import ModelSpec, clamp_spins, dump_couplings, lattice_edges
from babylon.decomposition import hamiltonian_raw
from babylon.errors import CouplingParseError, ValidationError
from babylon.oracle import all_configurations


def test_sk_shape_and_scale():
    g = generate_sk(200, 3)
    assert g.num_edges == 200 * 199 // 2
    d = g.dense
    assert np.allclose(d, d.T) and np.all(np.diag(d) == 0)
    # entries ~ N(0, 1/n)
    assert abs(np.var(g.vals) * 200 - 1.0) < 0.05


def test_sk_deterministic_and_prefix_free():
    assert generate_sk(10, 5) == generate_sk(10, 5)
    assert generate_sk(10, 5) != generate_sk(10, 6)


def test_sk_single_spin():
    g = generate_sk(1, 0)
    assert g.n == 1 and g.num_edges == 0


def test_ea_edge_counts():
    assert generate_ea((3, 3), "free", 0).num_edges == 12
    assert generate_ea((3, 3), "periodic", 0).num_edges == 18
    # length-2 axes do not wrap onto an existing bond
    src, axis, dst = lattice_edges((2, 3), "periodic")
    assert src.size == 3 + 6 and generate_ea((2, 3), "periodic", 0).num_edges == 9


def test_ea_unit_variance():
    g = generate_ea((40, 40), "periodic", 1)
    assert abs(np.var(g.vals) - 1.0) < 0.05


def test_hopfield_matches_patterns():
    from babylon.couplings import hopfield_patterns

    xi = hopfield_patterns(7, 3, 2)
    g = generate_hopfield(7, 3, 2)
    expect = xi.T @ xi / 7.0
    np.fill_diagonal(expect, 0.0)
    assert np.allclose(g.dense, expect)


def test_dense_roundtrip_and_validation():
    a = np.array([[0, 1.5, 0], [1.5, 0, -2], [0, -2, 0]])
    g = CouplingMatrix.from_dense(a)
    assert g.num_edges == 2
    assert np.array_equal(g.dense, a)
    with pytest.raises(ValidationError):
        CouplingMatrix.from_dense(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValidationError):
        CouplingMatrix.from_dense(np.array([[1.0, 0], [0, 0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(0, 10**6))
def test_sign_split_roundtrip(n, seed):
    g = generate_sk(n, seed)
    s = sign_split(g)
    assert np.all(s.plus >= 0) and np.all(s.minus >= 0)
    assert np.all(s.plus * s.minus == 0)
    assert np.array_equal(s.plus - s.minus, g.dense)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 10**6))
def test_text_roundtrip_bitwise(n, seed):
    g = generate_sk(n, seed)
    back = load_couplings(dump_couplings(g, "x"))
    assert back == g
    assert back.tobytes() == g.tobytes()


def test_load_accepts_bytes_streams_and_comments():
    text = b"# header\n3\n0 1 0.5  # trailing\n\n2 1 -1\n"
    g = load_couplings(io.BytesIO(text))
    assert g.n == 3 and g.dense[1, 2] == -1 and g.dense[0, 1] == 0.5


@pytest.mark.parametrize(
    "text, line",
    [("3\n0 1 abc\n", 2), ("3\n0 5 1.0\n", 2), ("3\n0 1\n", 2), ("x\n", 1), ("3\n0 1 nan\n", 2)],
)
def test_parse_errors_carry_line(text, line):
    with pytest.raises(CouplingParseError) as exc:
        load_couplings(text)
    assert exc.value.line == line


def test_conflicting_duplicate_and_diagonal():
    with pytest.raises(ValidationError):
        load_couplings("3\n0 1 1.0\n1 0 2.0\n")
    with pytest.raises(ValidationError):
        load_couplings("3\n1 1 1.0\n")
    assert load_couplings("3\n0 1 1.0\n1 0 1.0\n").num_edges == 1


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("file")
    with pytest.raises(ValueError):
        ModelSpec("sk")
    assert ModelSpec("ea_lattice", dims=(3, 3)).build().num_edges == 12


def test_clamp_spins_matches_full_energy(rng):
    g = generate_sk(7, 4)
    h = rng.normal(size=7)
    fixed = {0: 1, 4: -1}
    g_free, h_free, shift, free = clamp_spins(g, fixed, h, beta=0.6)
    for s_free in all_configurations(g_free.n):
        s = np.zeros(7)
        s[free] = s_free
        s[0], s[4] = 1, -1
        full = 0.6 * hamiltonian_raw(g, s) + h @ s
        part = 0.6 * hamiltonian_raw(g_free, s_free) + h_free @ s_free + shift
        assert abs(full - part) < 1e-12
