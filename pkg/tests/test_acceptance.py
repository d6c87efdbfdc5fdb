"""Acceptance criteria 1-9 at full size.

Each test prints one ``[PASS]``/``[FAIL]`` line.  Run on its own with
``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
"""

import json
import sys

import pytest

from babylon import verify as V
from babylon.cli import main
from babylon.couplings import write_couplings
from babylon.pspin import dump_pspin3, generate_pspin3

SEED = 0


def report(capsys, number, result):
    line = f"criterion {number}: {result.line()}"
    with capsys.disabled():
        print("\n" + line)
    return result.passed


def test_criterion_1_formula_exactness(capsys):
    res = V.formula_exactness(instances=100, samples=10**6, seed=SEED, n_max=12)
    ns = {r["n"] for r in res.detail["rows"]}
    assert ns == set(range(2, 13))
    assert report(capsys, 1, res), res.detail


def test_criterion_1_mutation_is_detected(capsys):
    res = V.formula_exactness(instances=20, samples=10**5, seed=SEED, mutate_constant=True)
    assert not res.passed


def test_criterion_2_decomposition_identity(capsys):
    assert report(capsys, 2, V.decomposition_identity(instances=20, n_max=12, seed=SEED))


def test_criterion_3_covariance(capsys):
    assert report(capsys, 3, V.covariance_check(instances=10, n_max=6, samples=10**6, seed=SEED))


def test_criterion_4_singular_chain(capsys):
    res = V.singular_chain(n=8, samples=10**6, seed=SEED)
    assert res.detail["rank"] < 8
    assert report(capsys, 4, res), res.detail


def test_criterion_5_ea(capsys):
    res = V.ea_generalization(seeds=10, samples=10**6, seed=SEED)
    assert report(capsys, 5, res), res.detail


def test_criterion_6_observables(capsys):
    assert report(capsys, 6, V.observables_check(instances=20, n_max=10, samples=10**6, seed=SEED))


def test_criterion_7_pspin(capsys):
    res = V.pspin_check(instances=10, n_max=8, samples=10**5, seed=SEED)
    assert report(capsys, 7, res), res.detail


def test_criterion_8_limits(capsys):
    assert report(capsys, 8, V.limiting_forms(samples=10**6, seed=SEED))


def _cli(capsys, argv):
    assert main([str(a) for a in argv]) == 0
    out = capsys.readouterr().out
    return out


def _strip_timing(text):
    try:
        d = json.loads(text)
    except ValueError:
        return text
    d.pop("elapsed", None)
    return d


def test_criterion_9_determinism(capsys, tmp_path):
    from babylon import generate_sk

    g_path = tmp_path / "g.txt"
    write_couplings(generate_sk(9, 4), g_path)
    t_path = tmp_path / "t.txt"
    t_path.write_text(dump_pspin3(generate_pspin3(6, 1)))
    commands = [
        ["gen", "--model", "sk", "--n", 9, "--seed", 4, "--out", tmp_path / "gen.txt"],
        ["exact", "--couplings", g_path, "--beta", 0.8, "--h", 0.1],
        ["estimate", "--couplings", g_path, "--beta", 0.8, "--h", 0.1, "--seed", 3, "--samples", 50000, "--bootstrap", 20],
        ["observables", "--couplings", g_path, "--beta", 0.8, "--h", 0.1, "--seed", 3, "--samples", 50000],
        ["sweep", "--couplings", g_path, "--beta-min", 0.2, "--beta-max", 1.0, "--steps", 3, "--seed", 3, "--samples", 20000],
        ["pspin3", "--couplings", t_path, "--beta", 0.7, "--seed", 3, "--samples", 20000],
    ]
    identical = True
    for argv in commands:
        a = _strip_timing(_cli(capsys, argv))
        b = _strip_timing(_cli(capsys, argv))
        identical &= a == b
    # thread count does not change Monte Carlo output
    base = ["estimate", "--couplings", g_path, "--beta", 0.8, "--seed", 3, "--samples", 50000]
    identical &= _strip_timing(_cli(capsys, base + ["--jobs", 1])) == _strip_timing(_cli(capsys, base + ["--jobs", 4]))
    workers = V.oracle_worker_consistency(n=18, seed=SEED, jobs=(1, 2, 8))
    res = V.SuiteResult(
        "determinism", bool(identical and workers.passed), {"repeat_identical": bool(identical), **workers.detail}
    )
    assert report(capsys, 9, res), res.detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
