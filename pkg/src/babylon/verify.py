"""Verification suites comparing every route against enumeration.

Each suite returns a :class:`SuiteResult`.  The CLI ``verify`` command runs
them at reduced size; the acceptance tests run them at full size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .couplings import CouplingMatrix, generate_ea, generate_sk
from .decomposition import decompose, hamiltonian_decomposed, hamiltonian_raw
from .estimator import formula_free_energy, formula_observables
from .gaussfield import (
    build_covariance,
    covariance_standard_errors,
    factorize,
    sample_field_constructive,
    sample_field_factorized,
)
from .couplings import sign_split
from .oracle import all_configurations, exact_free_energy, exact_observables, exact_free_energy_pspin3
from .pspin import aux_normals, generate_pspin3, hs_integrand_log, nested_free_energy, reduce_with_normals

BETAS = (0.25, 0.5, 1.0)
FIELDS = (0.0, 0.3)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_fmt(v)}" for k, v in self.detail.items() if not isinstance(v, list))
        return f"[{status}] {self.name}: {info}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _instance_rng(seed, name):
    return np.random.default_rng([int(seed) & _rng.SEED_MASK, sum(map(ord, name))])


def formula_vs_oracle(cases, samples, mutate_constant=False, min_fraction=0.95, pooled_limit=1.0, name="formula vs oracle"):
    """``cases`` yields ``(g, beta, h, seed)``; counts agreement within 3 standard errors.

    ``mutate_constant`` flips the sign of the ``beta/2 sum|g|`` term, which
    must make the suite fail.
    """
    devs, ses, rows = [], [], []
    for g, beta, h, seed in cases:
        est = formula_free_energy(g, beta, h, samples, seed)
        value = est.value
        if mutate_constant:
            value += beta * g.abs_sum()
        exact = exact_free_energy(g, beta, h)
        devs.append(value - exact)
        ses.append(est.std_error)
        rows.append({"n": g.n, "beta": beta, "h": h, "dev": value - exact, "se": est.std_error})
    devs = np.array(devs)
    ses = np.array(ses)
    within = np.abs(devs) <= 3.0 * ses
    # exact cases (zero error) must match to rounding
    exact_ok = (ses > 0) | (np.abs(devs) <= 1e-10)
    within = within | ((ses == 0) & exact_ok)
    # pooled SE in the pooled-variance sense: sqrt of the mean variance
    pooled = math.sqrt(float(np.mean(ses**2)))
    mean_dev = float(np.mean(devs))
    mean_ratio = abs(mean_dev) / pooled if pooled > 0 else (0.0 if abs(mean_dev) < 1e-10 else math.inf)
    # same deviation in units of the standard error of the mean, for reference
    mean_z = mean_ratio * math.sqrt(len(devs)) if pooled > 0 else mean_ratio
    need = math.ceil(min_fraction * len(devs) - 1e-9)
    passed = int(within.sum()) >= need and mean_ratio <= pooled_limit
    return SuiteResult(
        name,
        passed,
        {
            "cases": len(devs),
            "within_3se": int(within.sum()),
            "required": need,
            "mean_dev_over_pooled_se": mean_ratio,
            "mean_dev_z": mean_z,
            "max_abs_z": float(np.max(np.abs(devs[ses > 0]) / ses[ses > 0])) if np.any(ses > 0) else 0.0,
            "rows": rows,
        },
    )


def sk_cases(instances, seed, n_min=2, n_max=12, betas=BETAS, fields=FIELDS):
    span = n_max - n_min + 1
    for k in range(instances):
        n = n_min + k % span
        beta = betas[(k // span) % len(betas)]
        h = fields[(k // (span * len(betas))) % len(fields)]
        yield generate_sk(n, seed * 1_000_003 + k), beta, h, seed + k


def formula_exactness(instances=100, samples=10**6, seed=0, n_max=12, mutate_constant=False):
    return formula_vs_oracle(
        sk_cases(instances, seed, n_max=n_max), samples, mutate_constant, name="formula exactness (SK)"
    )


def decomposition_identity(instances=20, n_max=12, seed=0):
    rng = _instance_rng(seed, "decomposition")
    worst = 0.0
    ok = True
    for k in range(instances):
        n = int(rng.integers(2, n_max + 1))
        g = generate_sk(n, seed * 7919 + k)
        d = decompose(g)
        configs = all_configurations(n)
        raw = hamiltonian_raw(g, configs)
        dec = hamiltonian_decomposed(d, configs)
        tol = 1e-10 * (1.0 + g.abs_sum())
        err = float(np.max(np.abs(raw - dec)))
        worst = max(worst, err / tol)
        ok &= err <= tol
    return SuiteResult("decomposition identity", bool(ok), {"instances": instances, "worst_err_over_tol": worst})


def covariance_check(instances=10, n_max=6, samples=10**6, seed=0):
    rng = _instance_rng(seed, "covariance")
    worst_f = worst_c = worst_pair = 0.0
    for k in range(instances):
        n = int(rng.integers(2, n_max + 1))
        g = generate_sk(n, seed * 104729 + k)
        cov = build_covariance(g)
        xf = sample_field_factorized(factorize(cov), samples, seed + k)
        xc = sample_field_constructive(sign_split(g), samples, seed + k)
        ef, sf = covariance_standard_errors(xf)
        ec, sc = covariance_standard_errors(xc)
        worst_f = max(worst_f, _max_z(ef - cov.c, sf))
        worst_c = max(worst_c, _max_z(ec - cov.c, sc))
        worst_pair = max(worst_pair, _max_z(ef - ec, np.sqrt(sf**2 + sc**2)))
    passed = worst_f <= 4.0 and worst_c <= 4.0 and worst_pair <= 6.0
    return SuiteResult(
        "covariance check",
        passed,
        {"instances": instances, "max_z_factorized": worst_f, "max_z_constructive": worst_c, "max_z_between": worst_pair},
    )


def _max_z(diff, se):
    diff = np.asarray(diff)
    se = np.asarray(se)
    zero = se == 0
    if np.any(np.abs(diff[zero]) > 1e-12):
        return math.inf
    return float(np.max(np.abs(diff[~zero]) / se[~zero])) if np.any(~zero) else 0.0


def ferromagnetic_chain(n=8, coupling=1.0):
    i = np.arange(n - 1)
    return CouplingMatrix(n, i, i + 1, np.full(n - 1, coupling))


def singular_chain(n=8, samples=10**6, seed=0, coupling=1.0, repeats=4):
    g = ferromagnetic_chain(n, coupling)
    cov = build_covariance(g)
    f = factorize(cov)
    dmax = float(np.max(np.diag(cov.c)))
    err = float(np.max(np.abs(f.l @ f.l.T - cov.c)))
    grid = [(b, h) for _ in range(repeats) for b in BETAS for h in FIELDS]
    cases = [(g, b, h, seed + k) for k, (b, h) in enumerate(grid)]
    agreement = formula_vs_oracle(cases, samples, name="chain formula")
    passed = err <= 1e-8 * dmax and agreement.passed
    return SuiteResult(
        "singular ferromagnetic chain",
        passed,
        {
            "n": n,
            "rank": f.rank,
            "recon_err_over_dmax": err / dmax,
            "within_3se": agreement.detail["within_3se"],
            "cases": agreement.detail["cases"],
            "mean_dev_over_pooled_se": agreement.detail["mean_dev_over_pooled_se"],
        },
    )


def ea_generalization(seeds=10, samples=10**6, seed=0, dims=(3, 3)):
    cases = []
    for k in range(seeds):
        beta = BETAS[k % len(BETAS)]
        h = FIELDS[(k // len(BETAS)) % len(FIELDS)]
        cases.append((generate_ea(dims, "free", seed * 31 + k), beta, h, seed + k))
    res = formula_vs_oracle(cases, samples, min_fraction=0.9, pooled_limit=math.inf, name="EA 3x3 free")
    res.name = "EA generalization"
    return res


def observables_check(instances=20, n_max=10, samples=10**6, seed=0):
    """Every magnetization and pair correlation within 3 SE of enumeration."""
    total = 0
    bad = 0
    worst = 0.0
    antithetic_zero = True
    for k in range(instances):
        n = 2 + k % (n_max - 1)
        beta = BETAS[k % len(BETAS)]
        h = FIELDS[(k // len(BETAS)) % len(FIELDS)]
        g = generate_sk(n, seed * 15485863 + k)
        est = formula_observables(g, beta, h, samples, seed + k)
        mag, corr = exact_observables(g, beta, h)
        iu = np.triu_indices(n, 1)
        diffs = np.concatenate([est.magnetizations - mag, (est.correlations - corr)[iu]])
        ses = np.concatenate([est.magnetization_se, est.correlation_se[iu]])
        z = np.where(ses > 0, np.abs(diffs) / np.where(ses > 0, ses, 1.0), np.where(np.abs(diffs) < 1e-12, 0.0, np.inf))
        total += z.size
        bad += int(np.sum(z > 3.0))
        worst = max(worst, float(np.max(z)))
        if h == 0.0:
            antithetic_zero &= bool(np.all(est.magnetizations == 0.0))
    passed = bad == 0 and antithetic_zero
    return SuiteResult(
        "observables",
        passed,
        {"comparisons": total, "beyond_3se": bad, "max_z": worst, "h0_magnetizations_exactly_zero": antithetic_zero},
    )


def pspin_check(instances=10, n_max=8, samples=10**5, seed=0, identity_instances=5, density=None):
    """``density=None`` alternates sparse (0.5) and complete tensors."""
    rows = []
    ok = True
    for k in range(instances):
        n = 4 + k % (n_max - 3)
        beta = (0.5, 1.0)[k % 2]
        h = (0.0, 0.2)[(k // 2) % 2]
        dens = (0.5, 1.0)[(k // 4) % 2] if density is None else density
        t = generate_pspin3(n, seed * 613 + k, density=dens)
        est = nested_free_energy(t, beta, h, samples, seed + k)
        exact = exact_free_energy_pspin3(t, beta, h)
        dev = est.value - exact
        good = abs(dev) <= 3 * est.std_error if est.std_error > 0 else abs(dev) < 1e-10
        ok &= good
        rows.append({"n": n, "triples": t.size, "beta": beta, "h": h, "z": dev / est.std_error if est.std_error else 0.0})
    worst_identity = 0.0
    for k in range(identity_instances):
        n = 3 + k % 4
        t = generate_pspin3(n, seed * 911 + k, density=1.0)
        x = aux_normals(t, seed + k, 0, 1)[0]
        red = reduce_with_normals(t, 0.8, x)
        lhs = exact_free_energy(red.effective_pair, 1.0, red.effective_field + 0.1)
        rhs = hs_integrand_log(t, 0.8, x, 0.1)
        worst_identity = max(worst_identity, abs(lhs - rhs))
    ok &= worst_identity <= 1e-9
    max_z = max(abs(r["z"]) for r in rows) if rows else 0.0
    return SuiteResult(
        "3-spin nested",
        bool(ok),
        {"instances": instances, "max_abs_z": max_z, "identity_max_err": worst_identity, "rows": rows},
    )


def limiting_forms(samples=10**6, seed=0, couplings=(0.3, -0.7, 1.2), betas=BETAS):
    ok = True
    worst_beta0 = 0.0
    for k, n in enumerate((1, 3, 6, 10)):
        g = generate_sk(n, seed + k)
        h = 0.1 * (k + 1)
        est = formula_free_energy(g, 0.0, h, samples, seed + k)
        target = n * math.log(math.cosh(h))
        worst_beta0 = max(worst_beta0, abs(est.value - target))
        ok &= est.std_error == 0.0 and abs(est.value - target) <= 1e-12 * max(1.0, abs(target))
    zs = []
    for k, (gv, beta) in enumerate((gv, b) for gv in couplings for b in betas):
        g = CouplingMatrix(2, [0], [1], [gv])
        exact = exact_free_energy(g, beta, 0.0)
        est = formula_free_energy(g, beta, 0.0, samples, seed + k)
        z = abs(est.value - exact) / est.std_error
        zs.append(z)
        ok &= z <= 3.0 and abs(exact - math.log(math.cosh(beta * gv))) <= 1e-12
    return SuiteResult(
        "limiting closed forms", bool(ok), {"beta0_max_err": worst_beta0, "two_spin_max_z": max(zs)}
    )


def oracle_worker_consistency(n=16, seed=0, jobs=(1, 2, 8)):
    g = generate_sk(n, seed)
    values = [exact_free_energy(g, 0.8, 0.2, jobs=j) for j in jobs]
    mag = [exact_observables(g, 0.8, 0.2, jobs=j)[0] for j in jobs]
    rel = max(abs(v - values[0]) / abs(values[0]) for v in values)
    mag_err = max(float(np.max(np.abs(m - mag[0]))) for m in mag)
    passed = rel <= 1e-12 and mag_err <= 1e-12
    return SuiteResult("oracle worker consistency", passed, {"max_rel_diff": rel, "max_mag_diff": mag_err})


def estimator_determinism(seed=0, samples=50_000):
    g = generate_sk(8, seed)
    a = formula_free_energy(g, 0.7, 0.1, samples, seed, jobs=1)
    b = formula_free_energy(g, 0.7, 0.1, samples, seed, jobs=3)
    c = formula_free_energy(g, 0.7, 0.1, samples, seed, jobs=1)
    passed = a.value == b.value == c.value and a.std_error == b.std_error == c.std_error
    return SuiteResult("estimator determinism", passed, {"value": a.value})
