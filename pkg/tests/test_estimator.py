import math

import numpy as np
import pytest

from babylon import CouplingMatrix, exact_free_energy, exact_observables, formula_free_energy, formula_observables, generate_sk, sweep
from babylon.estimator import summarize_log_weights
from babylon.proposal import SymmetricMixture, logcosh
from babylon.verify import ferromagnetic_chain


def z_score(est, exact):
    return abs(est.value - exact) / est.std_error


@pytest.mark.parametrize("proposal", ["laplace", "prior", "constructive"])
def test_agrees_with_oracle(proposal):
    g = generate_sk(6, 8)
    est = formula_free_energy(g, 0.5, 0.2, 200_000, 4, proposal=proposal)
    assert z_score(est, exact_free_energy(g, 0.5, 0.2)) < 4


def test_strong_coupling_uses_laplace():
    g = generate_sk(10, 1)
    est = formula_free_energy(g, 1.0, 0.3, 200_000, 2)
    assert est.proposal == "laplace"
    assert z_score(est, exact_free_energy(g, 1.0, 0.3)) < 4
    assert est.ess > 1000


def test_singular_covariance():
    g = ferromagnetic_chain(8)
    est = formula_free_energy(g, 1.0, 0.0, 200_000, 5)
    assert z_score(est, 7 * math.log(math.cosh(1.0))) < 4


def test_beta_zero_exact():
    g = generate_sk(5, 0)
    est = formula_free_energy(g, 0.0, 0.4, 1000, 0)
    assert est.std_error == 0.0
    assert est.value == pytest.approx(5 * math.log(math.cosh(0.4)), abs=1e-13)


def test_no_couplings_exact():
    est = formula_free_energy(CouplingMatrix.zeros(3), 1.0, 0.5, 100, 0)
    assert est.std_error == 0.0 and est.value == pytest.approx(3 * math.log(math.cosh(0.5)))


def test_deterministic_across_jobs():
    g = generate_sk(7, 3)
    a = formula_free_energy(g, 0.8, 0.1, 40_000, 9, jobs=1)
    b = formula_free_energy(g, 0.8, 0.1, 40_000, 9, jobs=4)
    assert a.value == b.value and a.std_error == b.std_error and a.ess == b.ess


def test_antithetic_validation():
    g = generate_sk(3, 0)
    with pytest.raises(ValueError):
        formula_free_energy(g, 0.5, 0.0, 1001, 0)
    with pytest.raises(ValueError):
        formula_free_energy(g, -0.1, 0.0, 1000, 0)
    formula_free_energy(g, 0.5, 0.0, 1001, 0, antithetic=False)


def test_observables_match_oracle():
    g = generate_sk(6, 12)
    est = formula_observables(g, 0.7, 0.3, 200_000, 1)
    mag, corr = exact_observables(g, 0.7, 0.3)
    assert np.all(np.abs(est.magnetizations - mag) <= 4.5 * est.magnetization_se)
    iu = np.triu_indices(6, 1)
    assert np.all(np.abs(est.correlations - corr)[iu] <= 4.5 * est.correlation_se[iu])
    assert np.all(np.diag(est.correlations) == 1.0)


def test_observables_zero_field_exact_zero():
    est = formula_observables(generate_sk(5, 2), 0.9, 0.0, 20_000, 3)
    assert np.all(est.magnetizations == 0.0)


def test_sweep_common_numbers_and_validation():
    g = generate_sk(6, 4)
    rows = sweep(g, [0.0, 0.5, 1.0], 0.1, 20_000, 7)
    assert rows[0].std_error == 0.0
    assert rows[1].value == formula_free_energy(g, 0.5, 0.1, 20_000, 7).value
    with pytest.raises(ValueError):
        sweep(g, [0.5, 0.5], 0.1, 100, 0)


def test_summary_of_equal_weights():
    value, se, ess, bias, _ = summarize_log_weights(np.full(100, 2.0))
    assert value == pytest.approx(2.0) and se == 0.0 and ess == pytest.approx(100.0)


def test_mixture_density_symmetric(rng):
    m = SymmetricMixture(
        np.array([[1.0, -0.5], [0.0, 0.0]]),
        np.array([np.eye(2) * 2, np.eye(2)]),
        np.array([np.eye(2) / 2, np.eye(2)]),
        np.log([0.7, 0.3]),
    )
    z = rng.normal(size=(50, 2))
    assert np.array_equal(m.log_density(z), m.log_density(-z))
    assert np.array_equal(logcosh(z), logcosh(-z))
