"""Command-line front end.

Subcommands: ``fit`` and ``ci`` ingest plain numeric CSV pairs (A, B) and
emit JSON; ``simulate`` runs a study spec; ``clt-check`` runs the
cross-moment normality check; ``report`` renders a saved study report to a
CSV summary plus figures.

Exit codes: 0 success, 1 user or validation error, 2 mathematical failure
(no finite solution, singular covariance).  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys

import numpy as np

from . import report as report_mod
from .errors import (
    EivTlsError,
    NegativeVarianceError,
    NoSolutionError,
    SingularShapeError,
    SingularVAError,
)
from .inference import (
    confidence_ellipsoid,
    direction_covariance_normal,
    direction_covariance_sandwich,
    estimate_nuisances,
)
from .model import validate_dataset
from .simulation import SimStudySpec, clt_check_blocks, matrix_payload, run_study
from .tls import solve_tls

SCHEMA_VERSION = "1"
SEED_ENV_VAR = "EIV_TLS_SEED"

_MATH_FAILURES = (NoSolutionError, SingularShapeError, SingularVAError, NegativeVarianceError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit code 1 for usage mistakes, matching the validation-error contract
    def error(self, message):
        raise _UsageError(message)


def _info(args, message: str) -> None:
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


def _read_csv(path: str, header: bool) -> np.ndarray:
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2, dtype=float)
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise _UsageError(f"{path} is not plain numeric CSV: {exc}") from exc
    if arr.size == 0:
        raise _UsageError(f"{path} contains no data rows")
    return arr


def _load_pair(a_path: str, b_path: str, header: bool):
    a = _read_csv(a_path, header)
    b = _read_csv(b_path, header)
    if a.shape[0] != b.shape[0]:
        raise _UsageError(
            f"row counts differ: {a_path} has {a.shape[0]} rows, {b_path} has {b.shape[0]} rows"
        )
    return validate_dataset(a, b)


def _write_json(doc: dict, path: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    with open(path, "w") as handle:
        handle.write(text + "\n")


def _parse_direction(text: str) -> np.ndarray:
    try:
        u = np.array([float(tok) for tok in text.split(",")])
    except ValueError:
        raise _UsageError(f"direction {text!r} is not a comma-separated list of reals") from None
    return u


def cmd_fit(args) -> int:
    data = _load_pair(args.a_csv, args.b_csv, args.header)
    _info(args, f"read m={data.dims.m} observations (n={data.dims.n}, d={data.dims.d})")
    fit = solve_tls(data)
    _info(args, f"fit converged={fit.converged} after {fit.iterations} refinement step(s)")
    nuis = estimate_nuisances(data, fit)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit-result",
        "m": data.dims.m,
        "n": data.dims.n,
        "d": data.dims.d,
        "x_hat": matrix_payload(fit.x_hat),
        "q_value": fit.q_value,
        "score_norm": fit.score_norm,
        "sigma2_hat": nuis.error_variance,
        "va_hat": matrix_payload(nuis.design_moment),
        "va_hat_pd": nuis.design_moment_pd,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "warnings": list(fit.warnings),
    }
    _write_json(doc, args.out_json)
    return 0


def cmd_ci(args) -> int:
    data = _load_pair(args.a_csv, args.b_csv, args.header)
    _info(args, f"read m={data.dims.m} observations (n={data.dims.n}, d={data.dims.d})")
    u = _parse_direction(args.u)
    fit = solve_tls(data)
    nuis = estimate_nuisances(data, fit)
    warnings_out = list(fit.warnings)
    if args.method == "analytic":
        if not args.assume_normal:
            raise _UsageError(
                "the analytic covariance is only valid under normal errors; "
                "pass --assume-normal to acknowledge, or use --method sandwich"
            )
        warnings_out.append(
            "analytic covariance assumes normal errors; coverage is not "
            "guaranteed under other error laws"
        )
        cov = direction_covariance_normal(fit.x_hat, nuis.design_moment, nuis.error_variance, u)
    else:
        cov = direction_covariance_sandwich(data, fit, nuis.design_moment, u)
    ell = confidence_ellipsoid(fit, cov, data.dims.m, args.level)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "ci-result",
        "m": data.dims.m,
        "df": data.dims.n,
        "u": [float(v) for v in cov.u],
        "level": ell.level,
        "method": cov.method,
        "center": [float(v) for v in ell.center],
        "shape": matrix_payload(ell.shape),
        "radius2": ell.radius2,
        "warnings": warnings_out,
    }
    if data.dims.n == 1:
        lo, hi = ell.interval()
        doc["lo"] = lo
        doc["hi"] = hi
    _write_json(doc, args.out_json)
    return 0


def _load_spec(args) -> SimStudySpec:
    if args.default_spec:
        if args.spec_json is not None:
            raise _UsageError("give either a spec file or --default-spec, not both")
        payload = (
            importlib.resources.files("eivtls").joinpath("data/default_study.json").read_text()
        )
        raw = json.loads(payload)
    else:
        if args.spec_json is None:
            raise _UsageError("a spec file is required (or pass --default-spec)")
        try:
            with open(args.spec_json) as handle:
                raw = json.load(handle)
        except OSError as exc:
            raise _UsageError(f"cannot read {args.spec_json}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise _UsageError(f"{args.spec_json} is not valid JSON: {exc}") from exc
    return SimStudySpec.from_dict(raw)


def _resolve_seed(args, spec: SimStudySpec) -> SimStudySpec:
    # precedence: --seed flag > EIV_TLS_SEED env > spec file
    if args.seed is not None:
        return spec.with_base_seed(args.seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return spec.with_base_seed(int(env))
        except ValueError:
            raise _UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return spec


def cmd_simulate(args) -> int:
    spec = _resolve_seed(args, _load_spec(args))
    _info(args, f"running {spec.reps} replication(s) per m over schedule {list(spec.m_schedule)}")
    study = run_study(spec)
    doc = study.to_dict()
    _write_json(doc, args.out_json)
    if args.csv_summary:
        report_mod.write_csv_summary(doc, args.csv_summary)
    return 0


def cmd_clt_check(args) -> int:
    spec = _resolve_seed(args, _load_spec(args))
    _info(args, f"checking block sums at m={args.m} over {args.reps} replication(s)")
    doc = clt_check_blocks(spec, args.m, args.reps)
    _write_json(doc, args.out_json)
    return 0


def cmd_report(args) -> int:
    try:
        with open(args.report_json) as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise _UsageError(f"cannot read {args.report_json}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _UsageError(f"{args.report_json} is not valid JSON: {exc}") from exc
    if doc.get("kind") != "sim-study-report":
        raise _UsageError(f"{args.report_json} is not a simulation study report")
    outdir = args.outdir
    os.makedirs(outdir, exist_ok=True)
    report_mod.write_csv_summary(doc, os.path.join(outdir, "summary.csv"))
    made = report_mod.render_figures(doc, outdir)
    print(f"wrote {outdir}/summary.csv and {len(made)} figure(s)", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eivtls", description="Total least squares for errors-in-variables data")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit X from CSV pair and write a JSON result")
    fit.add_argument("a_csv")
    fit.add_argument("b_csv")
    fit.add_argument("out_json")
    fit.add_argument("--header", action="store_true", help="skip one header line in each CSV")
    fit.set_defaults(func=cmd_fit)

    ci = sub.add_parser("ci", help="confidence ellipsoid for X u")
    ci.add_argument("a_csv")
    ci.add_argument("b_csv")
    ci.add_argument("out_json")
    ci.add_argument("--u", required=True, help="direction, comma-separated reals of length d")
    ci.add_argument("--level", type=float, default=0.95)
    ci.add_argument("--method", choices=("sandwich", "analytic"), default="sandwich")
    ci.add_argument(
        "--assume-normal",
        action="store_true",
        help="acknowledge the normal-errors assumption required by --method analytic",
    )
    ci.add_argument("--header", action="store_true")
    ci.set_defaults(func=cmd_ci)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study spec")
    sim.add_argument("spec_json", nargs="?")
    sim.add_argument("out_json")
    sim.add_argument("--default-spec", action="store_true", help="use the bundled smoke-scale spec")
    sim.add_argument("--csv-summary", metavar="PATH", help="also write a one-row-per-m CSV summary")
    sim.add_argument("--seed", type=int, help=f"override base_seed (beats {SEED_ENV_VAR} and the spec)")
    sim.set_defaults(func=cmd_simulate)

    clt = sub.add_parser("clt-check", help="normality check of normalized cross-moment sums")
    clt.add_argument("spec_json", nargs="?")
    clt.add_argument("out_json")
    clt.add_argument("--m", type=int, required=True)
    clt.add_argument("--reps", type=int, required=True)
    clt.add_argument("--default-spec", action="store_true")
    clt.add_argument("--seed", type=int)
    clt.set_defaults(func=cmd_clt_check)

    rep = sub.add_parser("report", help="render a study report to CSV summary plus figures")
    rep.add_argument("report_json")
    rep.add_argument("--outdir", required=True)
    rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _MATH_FAILURES as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EivTlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
