"""Command-line front end.

Every subcommand is a thin wrapper over a library call; reports are JSON
(or CSV for sweeps) and all randomness flows from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, verify
from .couplings import ModelSpec, read_couplings, write_couplings
from .errors import EnumerationCapError, NumericalError, ValidationError
from .estimator import PROPOSALS, formula_free_energy, formula_observables, sweep
from .oracle import exact_solution, field_vector
from .pspin import dump_pspin3, generate_pspin3, nested_free_energy, read_pspin3
from .rng import fresh_seed

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4, 5

MODEL_ALIASES = {"sk": "sk", "ea": "ea_lattice", "ea_lattice": "ea_lattice", "hopfield": "hopfield", "file": "file"}


class UsageError(Exception):
    pass


# -- argument helpers --------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a finite non-negative number, got {text}")
    return v


def _dims(text):
    try:
        dims = tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lattice dims {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad lattice dims {text!r}")
    return dims


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def read_field(spec, n):
    """``--h`` is a number or the path of a file with one value per site."""
    try:
        return field_vector(float(spec), n)
    except ValueError:
        pass
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"--h: {spec!r} is neither a number nor a file")
    vals = np.array([float(t) for t in path.read_text().split()], dtype=np.float64)
    return field_vector(vals, n)


def _field_report(h):
    return float(h[0]) if h.size and np.all(h == h[0]) else h.tolist()


def _seed(args):
    return fresh_seed() if args.seed is None else args.seed


def _couplings(args):
    if not args.couplings:
        raise UsageError("--couplings is required")
    return read_couplings(args.couplings)


def _emit(args, text):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in columns])
    return buf.getvalue()


# -- commands ----------------------------------------------------------------------


def cmd_gen(args):
    kind = MODEL_ALIASES.get(args.model, args.model)
    if args.model == "pspin3":
        if args.n is None:
            raise UsageError("pspin3 generation requires --n")
        t = generate_pspin3(args.n, args.seed, density=args.density)
        text = dump_pspin3(t)
        meta = {"kind": "pspin3", "seed": args.seed, "n": args.n, "density": args.density, "triples": t.size}
    else:
        if kind not in MODEL_ALIASES.values():
            raise UsageError(f"unknown model {args.model!r}")
        if kind == "file" and not args.path:
            raise UsageError("model 'file' requires --path")
        if kind == "sk" and args.n is None:
            raise UsageError("model 'sk' requires --n")
        if kind == "ea_lattice" and not args.dims:
            raise UsageError("model 'ea' requires --dims")
        if kind == "hopfield" and (args.n is None or args.p is None):
            raise UsageError("model 'hopfield' requires --n and --p")
        spec = ModelSpec(kind, args.seed, args.n, args.dims or (), args.boundary, args.p, args.path)
        g = spec.build()
        text = None
        meta = {
            "kind": kind,
            "seed": args.seed,
            "n": g.n,
            "dims": list(spec.dims),
            "boundary": spec.boundary if kind == "ea_lattice" else None,
            "p": spec.p,
            "path": spec.path,
            "edges": g.num_edges,
        }
    meta["generator_version"] = __version__
    if not args.out:
        raise UsageError("gen requires --out")
    out = Path(args.out)
    if text is None:
        write_couplings(g, out, header=f"{kind} seed={args.seed}")
    else:
        out.write_text(text)
    Path(str(out) + ".json").write_text(_json(meta))
    sys.stdout.write(_json({"out": str(out), "metadata": str(out) + ".json", **meta}))
    return EXIT_OK


def cmd_exact(args):
    g = _couplings(args)
    h = read_field(args.h, g.n)
    log_z, mag, corr = exact_solution(g, args.beta, h, jobs=args.jobs)
    report = {
        "n": g.n,
        "beta": args.beta,
        "h": _field_report(h),
        "free_energy": log_z,
        "free_energy_per_site": log_z / g.n,
        "magnetizations": mag.tolist(),
        "correlations": corr.tolist(),
    }
    if args.format == "csv":
        rows = [{"site": i, "magnetization": float(m)} for i, m in enumerate(mag)]
        text = f"# free_energy={log_z!r}\n" + _csv(rows, ["site", "magnetization"])
    else:
        text = _json(report)
    _emit(args, text)
    return EXIT_OK


def _estimate_report(g, res, h, extra=None):
    d = res.to_dict()
    d.pop("extras", None)
    d["n"] = g.n
    d["h"] = _field_report(h)
    d["free_energy_per_site"] = res.value / g.n
    if extra:
        d.update(extra)
    return d


def cmd_estimate(args):
    g = _couplings(args)
    h = read_field(args.h, g.n)
    seed = _seed(args)
    res = formula_free_energy(
        g,
        args.beta,
        h,
        args.samples,
        seed,
        antithetic=args.antithetic,
        proposal=args.proposal,
        bootstrap=args.bootstrap,
        jobs=args.jobs,
    )
    report = _estimate_report(g, res, h)
    if args.format == "csv":
        cols = ["n", "beta", "value", "free_energy_per_site", "std_error", "ess", "bias", "samples", "seed"]
        text = _csv([report], cols)
    else:
        text = _json(report)
    _emit(args, text)
    return EXIT_OK


def cmd_observables(args):
    g = _couplings(args)
    h = read_field(args.h, g.n)
    seed = _seed(args)
    res = formula_observables(
        g, args.beta, h, args.samples, seed, antithetic=args.antithetic, proposal=args.proposal, jobs=args.jobs
    )
    report = res.to_dict()
    report.update({"n": g.n, "beta": args.beta, "h": _field_report(h)})
    if args.format == "csv":
        rows = [
            {"site": i, "magnetization": float(m), "std_error": float(s)}
            for i, (m, s) in enumerate(zip(res.magnetizations, res.magnetization_se))
        ]
        text = _csv(rows, ["site", "magnetization", "std_error"])
    else:
        text = _json(report)
    _emit(args, text)
    return EXIT_OK


def cmd_sweep(args):
    g = _couplings(args)
    h = read_field(args.h, g.n)
    seed = _seed(args)
    if args.beta_max < args.beta_min:
        raise UsageError("--beta-max must be >= --beta-min")
    if args.steps > 1 and args.beta_max == args.beta_min:
        raise UsageError("several steps need --beta-max > --beta-min")
    grid = np.linspace(args.beta_min, args.beta_max, args.steps)
    results = sweep(
        g, grid, h, args.samples, seed, antithetic=args.antithetic, proposal=args.proposal, jobs=args.jobs
    )
    rows = [
        {"beta": r.beta, "f_per_site": r.value / g.n, "std_error": r.std_error / g.n, "ess": r.ess}
        for r in results
    ]
    if args.format == "json":
        text = _json({"n": g.n, "h": _field_report(h), "seed": seed, "samples": args.samples, "rows": rows})
    else:
        text = f"# seed={seed}\n" + _csv(rows, ["beta", "f_per_site", "std_error", "ess"])
    _emit(args, text)
    return EXIT_OK


def cmd_pspin3(args):
    if args.couplings:
        t = read_pspin3(args.couplings)
    elif args.n is not None:
        t = generate_pspin3(args.n, args.model_seed, density=args.density)
    else:
        raise UsageError("pspin3 needs --couplings or --n")
    seed = _seed(args)
    res = nested_free_energy(
        t,
        args.beta,
        args.h,
        args.samples,
        seed,
        antithetic=args.antithetic,
        proposal=args.proposal if args.proposal != "constructive" else "prior",
        bootstrap=args.bootstrap,
    )
    report = res.to_dict()
    report.pop("extras", None)
    report.update({"n": t.n, "triples": t.size, "h": args.h, "free_energy_per_site": res.value / t.n})
    if args.exact:
        from .oracle import exact_free_energy_pspin3

        report["exact"] = exact_free_energy_pspin3(t, args.beta, args.h)
    _emit(args, _json(report))
    return EXIT_OK


def cmd_verify(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = 0 if args.seed is None else args.seed
    suites = [
        verify.decomposition_identity(instances=args.trials, n_max=10, seed=seed),
        verify.covariance_check(instances=min(args.trials, 10), samples=args.samples, seed=seed),
        verify.formula_exactness(
            instances=args.trials, samples=args.samples, seed=seed, n_max=10, mutate_constant=args.inject_sign_flip
        ),
        verify.limiting_forms(samples=args.samples, seed=seed),
        verify.oracle_worker_consistency(n=14, seed=seed),
    ]
    lines = [s.line() for s in suites]
    failed = [s.name for s in suites if not s.passed]
    report = {
        "seed": seed,
        "trials": args.trials,
        "samples": args.samples,
        "suites": [{"name": s.name, "passed": s.passed, **{k: v for k, v in s.detail.items() if k != "rows"}} for s in suites],
        "failed": failed,
    }
    if args.format == "json":
        _emit(args, _json(report))
    else:
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_VERIFY if failed else EXIT_OK


# -- parser ------------------------------------------------------------------------


def _add_common(p, samples=True, field=True, default_format="json"):
    p.add_argument("--couplings", help="coupling file")
    p.add_argument("--beta", type=_nonneg_float, default=1.0)
    if field:
        p.add_argument("--h", default="0", help="uniform field or a file of per-site fields")
    if samples:
        p.add_argument("--samples", type=_positive_int, default=100_000)
        p.add_argument("--seed", type=_nonneg_int, default=None, help="omitted: a fresh seed is generated and reported")
        p.add_argument("--antithetic", type=_on_off, default=True, metavar="on|off")
        p.add_argument("--proposal", choices=PROPOSALS, default="laplace")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default=default_format)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="babylon", description="Exact Gaussian-field free energies of Ising systems")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a coupling file and metadata sidecar")
    p.add_argument("--model", default="sk", help="sk, ea, hopfield, file or pspin3")
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--dims", type=_dims)
    p.add_argument("--boundary", choices=("free", "periodic"), default="free")
    p.add_argument("--p", type=_positive_int)
    p.add_argument("--path", help="source file for model 'file'")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("exact", help="free energy and observables by enumeration")
    _add_common(p, samples=False)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("estimate", help="Monte Carlo free energy from the Gaussian-field formula")
    _add_common(p)
    p.add_argument("--bootstrap", type=_nonneg_int, default=0, metavar="RESAMPLES")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("observables", help="Monte Carlo magnetizations and correlations")
    _add_common(p)
    p.set_defaults(func=cmd_observables)

    p = sub.add_parser("sweep", help="free energy per site over a beta grid (CSV)")
    _add_common(p, default_format="csv")
    p.add_argument("--beta-min", type=_nonneg_float, default=0.0)
    p.add_argument("--beta-max", type=_nonneg_float, default=1.0)
    p.add_argument("--steps", type=_positive_int, default=11)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pspin3", help="three-spin free energy by nested reduction")
    _add_common(p, field=False)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--n", type=_positive_int, help="generate a random instance instead of reading one")
    p.add_argument("--model-seed", type=_nonneg_int, default=0)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--bootstrap", type=_nonneg_int, default=0, metavar="RESAMPLES")
    p.add_argument("--exact", action="store_true", help="also report the enumerated value")
    p.set_defaults(func=cmd_pspin3)

    p = sub.add_parser("verify", help="run the verification suites")
    p.add_argument("--seed", type=_nonneg_int, default=None)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--samples", type=_positive_int, default=100_000)
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"), default="csv", help="csv prints one line per suite")
    p.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"babylon {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EnumerationCapError as exc:
        print(f"error: {exc}; use 'babylon estimate' for larger systems", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
