import numpy as np
import pytest

from babylon import CouplingMatrix, build_covariance, factorize, generate_sk, sample_field_constructive, sample_field_factorized, sign_split
from babylon.errors import NotPSDError
from babylon.gaussfield import CovarianceSpec, covariance_standard_errors
from babylon.verify import ferromagnetic_chain


def test_covariance_structure(sk6):
    c = build_covariance(sk6).c
    d = sk6.dense
    assert np.allclose(np.diag(c), np.abs(d).sum(axis=1))
    off = ~np.eye(6, dtype=bool)
    assert np.array_equal(c[off], d[off])
    assert np.min(np.linalg.eigvalsh(c)) > -1e-12


def test_factor_reconstructs(sk6):
    cov = build_covariance(sk6)
    f = factorize(cov)
    assert f.method == "cholesky"
    assert np.max(np.abs(f.l @ f.l.T - cov.c)) < 1e-12


def test_singular_chain_uses_eigh():
    cov = build_covariance(ferromagnetic_chain(8))
    f = factorize(cov)
    assert f.method == "eigh" and f.rank == 7
    dmax = np.max(np.diag(cov.c))
    assert np.max(np.abs(f.l @ f.l.T - cov.c)) <= 1e-8 * dmax


def test_zero_couplings_rank_zero():
    f = factorize(build_covariance(CouplingMatrix.zeros(4)))
    assert f.rank == 0
    x = sample_field_factorized(f, 5, 0)
    assert x.shape == (5, 4) and np.all(x == 0)


def test_not_psd_raises():
    c = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPSDError):
        factorize(CovarianceSpec(2, c))


def test_samplers_deterministic_and_prefix_stable(sk6):
    f = factorize(build_covariance(sk6))
    a = sample_field_factorized(f, 20_000, 3)
    b = sample_field_factorized(f, 10_000, 3)
    assert np.array_equal(a[:10_000], b)
    c = sample_field_constructive(sign_split(sk6), 20_000, 3)
    d = sample_field_constructive(sign_split(sk6), 20_000, 3)
    assert np.array_equal(c, d)


def test_both_samplers_match_covariance(sk6):
    cov = build_covariance(sk6).c
    for x in (
        sample_field_factorized(factorize(build_covariance(sk6)), 200_000, 9),
        sample_field_constructive(sign_split(sk6), 200_000, 9),
    ):
        emp, se = covariance_standard_errors(x)
        assert np.all(np.abs(emp - cov) <= 4.5 * se)
