import math

import numpy as np
import pytest

from babylon import CouplingMatrix, exact_free_energy, exact_observables, generate_sk
from babylon.decomposition import hamiltonian_raw
from babylon.errors import EnumerationCapError
from babylon.oracle import all_configurations, exact_free_energy_batch, gray_checkpoint_energies, gray_configuration


def brute(g, beta, h):
    s = all_configurations(g.n)
    e = beta * hamiltonian_raw(g, s) + s @ np.broadcast_to(h, g.n)
    w = np.exp(e - e.max())
    z = w.sum()
    return e.max() + math.log(z) - g.n * math.log(2), (w @ s) / z, (s.T * w) @ s / z


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_matches_brute_force(n, rng):
    g = generate_sk(n, n)
    h = rng.normal(size=n) * 0.4
    lz, mag, corr = brute(g, 0.9, h)
    assert exact_free_energy(g, 0.9, h) == pytest.approx(lz, abs=1e-12)
    m, c = exact_observables(g, 0.9, h)
    assert np.allclose(m, mag, atol=1e-12) and np.allclose(c, corr, atol=1e-12)


def test_closed_forms():
    g = CouplingMatrix(2, [0], [1], [0.8])
    assert exact_free_energy(g, 0.5, 0.0) == pytest.approx(math.log(math.cosh(0.4)), abs=1e-14)
    assert exact_free_energy(generate_sk(7, 1), 0.0, 0.3) == pytest.approx(7 * math.log(math.cosh(0.3)), abs=1e-13)


def test_workers_agree():
    g = generate_sk(15, 2)
    vals = [exact_free_energy(g, 0.7, 0.1, jobs=j) for j in (1, 2, 8)]
    assert max(abs(v - vals[0]) for v in vals) <= 1e-12 * abs(vals[0])


def test_cap(monkeypatch):
    with pytest.raises(EnumerationCapError):
        exact_free_energy(generate_sk(10, 0), 1.0, cap=8)
    monkeypatch.setenv("BABYLON_ENUM_CAP", "5")
    with pytest.raises(EnumerationCapError):
        exact_free_energy(generate_sk(6, 0), 1.0)


def test_gray_checkpoints():
    g = generate_sk(14, 6)
    h = np.linspace(-0.3, 0.3, 14)
    steps = np.random.default_rng(0).integers(0, 1 << 14, size=1000)
    got = gray_checkpoint_energies(g, 0.8, h, steps, jobs=4)
    for t, e in zip(steps, got):
        s = gray_configuration(int(t), 14)
        assert abs(e - (0.8 * hamiltonian_raw(g, s) + h @ s)) <= 1e-9


def test_batch_matches_single(rng):
    n = 5
    pairs = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    couplings = rng.normal(size=(3, len(pairs)))
    fields = rng.normal(size=(3, n))
    out = exact_free_energy_batch(n, pairs, couplings, fields)
    for k in range(3):
        g = CouplingMatrix(n, pairs[:, 0], pairs[:, 1], couplings[k])
        assert out[k] == pytest.approx(exact_free_energy(g, 1.0, fields[k]), abs=1e-12)


def test_convex_in_beta():
    g = generate_sk(8, 3)
    betas = np.linspace(0, 2, 21)
    f = np.array([exact_free_energy(g, b, 0.2) for b in betas])
    assert np.all(np.diff(f, 2) >= -1e-12)
