import csv
import io
import json
import math

import numpy as np
import pytest

from babylon import exact_free_energy, formula_free_energy, generate_sk, write_couplings
from babylon.cli import main
from babylon.oracle import exact_solution


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sk8(tmp_path):
    path = tmp_path / "sk8.txt"
    write_couplings(generate_sk(8, 1), path)
    return path


def test_gen_sk_and_sidecar(tmp_path, capsys):
    out = tmp_path / "g.txt"
    code, _, _ = run(capsys, "gen", "--model", "sk", "--n", 8, "--seed", 1, "--out", out)
    assert code == 0
    edges = [l for l in out.read_text().splitlines() if l and not l.startswith("#")][1:]
    assert len(edges) == 28
    meta = json.loads((tmp_path / "g.txt.json").read_text())
    assert meta["kind"] == "sk" and meta["seed"] == 1 and "generator_version" in meta


def test_gen_ea_edges(tmp_path, capsys):
    out = tmp_path / "ea.txt"
    assert run(capsys, "gen", "--model", "ea", "--dims", "3,3", "--boundary", "free", "--out", out)[0] == 0
    assert len([l for l in out.read_text().splitlines() if l and not l.startswith("#")]) == 1 + 12


def test_gen_file_without_path_is_usage_error(tmp_path, capsys):
    assert run(capsys, "gen", "--model", "file", "--out", tmp_path / "x")[0] == 2


def test_exact_single_spin(tmp_path, capsys):
    path = tmp_path / "one.txt"
    path.write_text("1\n")
    code, out, _ = run(capsys, "exact", "--couplings", path, "--beta", 1, "--h", 0.5)
    assert code == 0
    assert json.loads(out)["free_energy"] == pytest.approx(math.log(math.cosh(0.5)), abs=1e-15)


def test_exact_beta_zero_and_thin_wrapper(sk8, capsys):
    _, out, _ = run(capsys, "exact", "--couplings", sk8, "--beta", 0, "--h", 0.2)
    assert json.loads(out)["free_energy"] == pytest.approx(8 * math.log(math.cosh(0.2)), abs=1e-13)
    _, out, _ = run(capsys, "exact", "--couplings", sk8, "--beta", 0.7, "--h", 0.1, "--jobs", 2)
    rep = json.loads(out)
    lz, mag, corr = exact_solution(generate_sk(8, 1), 0.7, 0.1, jobs=2)
    assert rep["free_energy"] == lz and rep["magnetizations"] == mag.tolist() and rep["correlations"] == corr.tolist()


def test_exact_cap_refusal(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("BABYLON_ENUM_CAP", "6")
    path = tmp_path / "g.txt"
    write_couplings(generate_sk(8, 0), path)
    code, _, err = run(capsys, "exact", "--couplings", path)
    assert code == 3 and "estimate" in err


def test_bad_coupling_file(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("3\n0 1 zz\n")
    code, _, err = run(capsys, "exact", "--couplings", path)
    assert code == 3 and "line 2" in err


def test_per_site_field_file(sk8, tmp_path, capsys):
    hfile = tmp_path / "h.txt"
    h = np.linspace(-0.2, 0.3, 8)
    hfile.write_text("\n".join(repr(float(v)) for v in h))
    _, out, _ = run(capsys, "exact", "--couplings", sk8, "--beta", 0.5, "--h", hfile)
    assert json.loads(out)["free_energy"] == exact_free_energy(generate_sk(8, 1), 0.5, h)


def test_estimate_beta_zero(sk8, capsys):
    _, out, _ = run(capsys, "estimate", "--couplings", sk8, "--beta", 0, "--h", 0.3, "--seed", 1, "--samples", 100)
    rep = json.loads(out)
    assert rep["std_error"] == 0.0 and rep["value"] == pytest.approx(8 * math.log(math.cosh(0.3)), abs=1e-13)


def test_estimate_reproducible_and_wraps_library(sk8, capsys):
    argv = ["estimate", "--couplings", sk8, "--beta", 0.6, "--h", 0.1, "--seed", 5, "--samples", 20000]
    a = json.loads(run(capsys, *argv)[1])
    b = json.loads(run(capsys, *argv, "--jobs", 3)[1])
    a.pop("elapsed"), b.pop("elapsed")
    assert a == b
    lib = formula_free_energy(generate_sk(8, 1), 0.6, 0.1, 20000, 5)
    assert a["value"] == lib.value and a["std_error"] == lib.std_error


def test_estimate_matches_exact_at_full_size(sk8, capsys):
    est = json.loads(run(capsys, "estimate", "--couplings", sk8, "--beta", 1, "--h", 0.3, "--seed", 2, "--samples", 10**6)[1])
    exact = json.loads(run(capsys, "exact", "--couplings", sk8, "--beta", 1, "--h", 0.3)[1])
    assert abs(est["value"] - exact["free_energy"]) <= 3 * est["std_error"]


def test_generated_seed_is_reported(sk8, capsys):
    rep = json.loads(run(capsys, "estimate", "--couplings", sk8, "--beta", 0.3, "--samples", 1000)[1])
    assert isinstance(rep["seed"], int)


def test_usage_errors(sk8, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--couplings", str(sk8), "--samples", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--couplings", str(sk8), "--antithetic", "maybe"])
    assert exc.value.code == 2
    assert run(capsys, "estimate")[0] == 2
    assert run(capsys, "verify", "--trials", 0)[0] == 2


def test_antithetic_needs_even_samples(sk8, capsys):
    assert run(capsys, "estimate", "--couplings", sk8, "--samples", 101, "--seed", 0)[0] == 3
    assert run(capsys, "estimate", "--couplings", sk8, "--samples", 101, "--seed", 0, "--antithetic", "off")[0] == 0


def test_observables_zero_field(sk8, capsys):
    rep = json.loads(run(capsys, "observables", "--couplings", sk8, "--beta", 0.5, "--seed", 1, "--samples", 10000)[1])
    assert all(m == 0.0 for m in rep["magnetizations"])


def _rows(text):
    return list(csv.DictReader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#")))))


def test_sweep_single_point(sk8, capsys):
    _, out, _ = run(capsys, "sweep", "--couplings", sk8, "--beta-min", 0, "--beta-max", 0, "--steps", 1, "--h", 0.4, "--seed", 1)
    rows = _rows(out)
    assert len(rows) == 1
    assert float(rows[0]["f_per_site"]) == pytest.approx(math.log(math.cosh(0.4)), abs=1e-14)
    assert list(rows[0]) == ["beta", "f_per_site", "std_error", "ess"]


def test_sweep_against_oracle_and_repeatable(tmp_path, capsys):
    g = generate_sk(10, 3)
    path = tmp_path / "g.txt"
    write_couplings(g, path)
    argv = ["sweep", "--couplings", path, "--beta-min", 0.2, "--beta-max", 1.0, "--steps", 5, "--h", 0.1, "--seed", 4, "--samples", 100000]
    out_a = run(capsys, *argv)[1]
    assert out_a == run(capsys, *argv)[1]
    for r in _rows(out_a):
        exact = exact_free_energy(g, float(r["beta"]), 0.1) / 10
        assert abs(float(r["f_per_site"]) - exact) <= 3 * float(r["std_error"])


def test_pspin3_command(tmp_path, capsys):
    path = tmp_path / "t.txt"
    assert run(capsys, "gen", "--model", "pspin3", "--n", 6, "--density", 0.5, "--seed", 2, "--out", path)[0] == 0
    rep = json.loads(run(capsys, "pspin3", "--couplings", path, "--beta", 0.8, "--seed", 1, "--samples", 20000, "--exact")[1])
    assert abs(rep["value"] - rep["exact"]) <= 4 * rep["std_error"]


def test_verify_default_passes(capsys):
    code, out, _ = run(capsys, "verify", "--seed", 0)
    assert code == 0, out
    assert out.count("[PASS]") == 5


def test_verify_sign_flip_is_caught(capsys):
    code, out, _ = run(capsys, "verify", "--seed", 0, "--trials", 5, "--samples", 20000, "--inject-sign-flip")
    assert code == 5
    assert "[FAIL] formula exactness" in out
