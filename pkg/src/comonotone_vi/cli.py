"""Command-line front end.

Exit codes:
  0  success
  1  malformed input (bad arguments, unreadable or invalid files)
  2  regime rejection (parameters outside an admissible regime, singular resolvent)
  3  divergence (the run tripped the overflow guard; the trace is still written)
  4  solver failure (SDP not solved to tolerance, eigen-solver failure)
  5  check failed (certificate, bound or interpolation check did not pass)

Operator specs have the form ``name:key=value,...`` (angles in radians):
  pp-worst-case:rho=R,gamma=G,N=N    worst-case rotation for the proximal point method
  neg-scaling:rho=R[,dim=D]          F(x) = -x/rho
  rotation:theta=T,L=A               F(x) = A * rotation(T) x   (alias: alpha for L)
  scaling:L=A[,dim=D]                F(x) = A x
  linear-file:path=FILE              operator JSON {"dim", "matrix", "gain", "kind"}
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bounds, formats, interpolation, operators, pep, sdp, solvers

EXIT_OK, EXIT_MALFORMED, EXIT_REGIME, EXIT_DIVERGED, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4, 5
JOBS_ENV = "COMONOTONE_VI_JOBS"


class Malformed(ValueError):
    pass


def _f(v) -> str:
    return formats.fmt(v)


def parse_op_spec(text: str) -> operators.LinearOperator:
    name, _, rest = text.partition(":")
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq or not key:
                raise Malformed(f"operator parameter {item!r} is not key=value")
            params[key.strip()] = val.strip()

    def num(key, default=None, cast=float):
        if key not in params:
            if default is None:
                raise Malformed(f"operator {name!r} needs parameter {key!r}")
            return default
        try:
            return cast(params[key])
        except ValueError as exc:
            raise Malformed(f"operator parameter {key}={params[key]!r} is not a number") from exc

    if name == "pp-worst-case":
        return operators.make_pp_worst_case(num("rho"), num("gamma"), num("N", cast=int))
    if name == "neg-scaling":
        return operators.make_negative_scaling(num("rho"), num("dim", 1, int))
    if name == "rotation":
        gain = num("L", num("alpha", 1.0)) if "L" in params or "alpha" in params else 1.0
        return operators.make_scaled_rotation(num("theta"), gain)
    if name == "scaling":
        return operators.make_scaling(num("L"), num("dim", 1, int))
    if name == "linear-file":
        if "path" not in params:
            raise Malformed("linear-file needs path=FILE")
        return operators.operator_from_dict(_load_json(params["path"]))
    raise Malformed(f"unknown operator {name!r}")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise Malformed(f"cannot read {path}: {exc}") from exc


def _vector(text, dim=None):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise Malformed(f"cannot parse vector {text!r}") from exc
    return operators.as_point(vals, dim)


def _emit(args, text):
    out = getattr(args, "out", None)
    if out == "-":
        sys.stdout.write(text)
    elif out:
        formats.write_atomic(out, text)


def _jobs(value):
    if value is not None:
        return value
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise Malformed(f"{JOBS_ENV}={env!r} is not an integer") from exc
    return 1


# -- run -------------------------------------------------------------------------------

def _steps(args):
    g1 = args.gamma1 if args.gamma1 is not None else args.gamma
    if g1 is None:
        raise Malformed("a stepsize is required (--gamma or --gamma1)")
    g2 = args.gamma2 if args.gamma2 is not None else g1
    return solvers.StepSizes(g1, g2)


def cmd_run(args) -> int:
    op = parse_op_spec(args.op)
    steps = _steps(args)
    x0 = _vector(args.x0, op.dim) if args.x0 else np.eye(op.dim)[0]
    ref = _vector(args.reference, op.dim) if args.reference else np.zeros(op.dim)
    trace = solvers.run(args.method, op, x0, steps, args.N, reference=ref)

    ok, cert = operators.certify_comonotone(op, 0.0)
    rho = args.rho if args.rho is not None else cert.tight_rho
    L = args.L if args.L is not None else cert.lipschitz
    regime = bounds.stepsize_admissible(args.method, steps.gamma1, steps.gamma2, rho, L)
    reports = []
    if not trace.diverged and math.isfinite(rho):
        for kind in regime.guarantees:
            spec = bounds.BoundSpec(args.method, kind, rho, steps.gamma1, steps.gamma2, L, None, None)
            reports.append(bounds.check_trace(trace, spec, ref))
        if args.method == "pp" and op.kind == "pp-worst-case" and regime.guarantees:
            n = int(op.params["N"])
            spec = bounds.BoundSpec("pp", "lower_bound", op.params["rho"], steps.gamma1, None, None, None, n)
            reports.append(bounds.check_trace(trace, spec, ref))

    res = solvers.residual_series(trace)
    print(f"method={trace.method} steps={trace.N} diverged={_f(trace.diverged)}")
    print(f"final sq_norm_F={_f(res['sq_norm_F'][-1])}")
    if op.kind == "pp-worst-case" and args.method == "pp":
        alpha, _ = operators.pp_worst_case_params(op.params["rho"], op.params["gamma"], op.params["N"])
        n = int(op.params["N"])
        if trace.N == n + 1:
            closed = alpha**2 * (n / (n + 1)) ** (n + 1) * float(x0 @ x0)
            print(f"closed form sq_norm_F={_f(closed)}")
    print(f"rho={_f(rho)} L={_f(L)} guarantees={','.join(regime.guarantees) or 'none'}")
    if regime.counterexample:
        print(f"counter-example regime: {regime.counterexample}")
    for rep in reports:
        print(f"bound {rep.kind} ({rep.unit}): satisfied={_f(rep.satisfied)} first_violation={rep.first_violation()}")
    if trace.diverged:
        print(f"diverged at step {trace.failure['step']}: {trace.failure['reason']}", file=sys.stderr)

    if args.format == "csv":
        text = formats.csv_text(solvers.TRACE_CSV_COLUMNS, solvers.residuals_csv_rows(trace))
    else:
        payload = solvers.trace_to_dict(trace)
        payload["operator"] = operators.operator_to_dict(op)
        payload["regime"] = regime.to_dict()
        payload["bounds"] = [bounds.report_to_dict(r) for r in reports]
        text = formats.json_text(payload)
    _emit(args, text)
    return EXIT_DIVERGED if trace.diverged else EXIT_OK


# -- pep -------------------------------------------------------------------------------

def _pep_job(task):
    N, gamma, rho, R, tol, max_iter, heuristic, compare = task
    spec = pep.PepSpec(N, gamma, rho, R)
    result = pep.solve_pp_pep(spec, tol=tol, max_iter=max_iter)
    analysis, final = None, result
    if heuristic and result.gram.optimal:
        final = pep.trace_heuristic(spec, result.value, tol=tol)
        final.value = result.value
        if final.reconstructed is not None:
            analysis = pep.analyze_trajectory(final)
    payload = pep.result_to_dict(final, analysis)
    payload["solver_status"] = result.gram.status.value
    payload["heuristic_status"] = final.gram.status.value if heuristic else None
    if compare:
        payload["comparison"] = pep.compare_with_analytic(spec, tol, result)
    return payload


def cmd_pep(args) -> int:
    rho, R = args.rho, args.R
    for gamma in args.gamma:
        for N in args.N:
            pep.PepSpec(N, gamma, rho, R)
            if args.compare_analytic:
                n_min = bounds.pp_lower_min_N(gamma, rho)
                if N < n_min:
                    raise bounds.RegimeError(
                        f"analytic comparison needs N >= max(rho^2/(gamma*(gamma-2*rho)), 1) = {_f(n_min)}, got N={N}"
                    )
    tasks = [
        (N, gamma, rho, R, args.tol, args.max_iter, args.trace_heuristic, args.compare_analytic)
        for gamma in args.gamma
        for N in args.N
    ]
    jobs = _jobs(args.jobs)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_pep_job, tasks))
    else:
        results = [_pep_job(t) for t in tasks]

    rows = []
    for task, payload in zip(tasks, results):
        N, gamma = task[0], task[1]
        spec = pep.PepSpec(N, gamma, rho, R)
        try:
            analytic = pep.analytic_value(spec)
        except bounds.RegimeError:
            analytic = math.nan
        ratio = payload["value"] / analytic if analytic == analytic else math.nan
        rows.append([N, gamma, rho, payload["value"], analytic, ratio, payload["rank"]])
        print(
            f"N={N} gamma={_f(gamma)} rho={_f(rho)} pep_value={_f(payload['value'])} "
            f"analytic_value={_f(analytic)} ratio={_f(ratio)} rank={payload['rank']} status={payload['solver_status']}"
        )
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            name = f"pep_N{N}_gamma{_f(gamma)}_rho{_f(rho)}.json"
            formats.write_atomic(os.path.join(args.out_dir, name), formats.json_text(payload))

    if args.format == "csv":
        _emit(args, formats.csv_text(pep.SWEEP_CSV_COLUMNS, rows))
    else:
        _emit(args, formats.json_text(results[0] if len(results) == 1 else results))
    if any(p["solver_status"] != sdp.Status.OPTIMAL.value for p in results):
        print("SDP solver did not reach the requested tolerance", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# -- bounds ----------------------------------------------------------------------------

def cmd_bounds(args) -> int:
    g1 = args.gamma1 if args.gamma1 is not None else args.gamma
    if g1 is None:
        raise Malformed("a stepsize is required (--gamma or --gamma1)")
    g2 = args.gamma2 if args.gamma2 is not None else g1
    if args.trace:
        trace = solvers.trace_from_dict(_load_json(args.trace))
        kind = args.kind or "last_iterate"
        spec = bounds.BoundSpec(args.method, kind, args.rho, g1, g2, args.L, args.R, args.N)
        rep = bounds.check_trace(trace, spec)
        print(
            f"bound {kind} ({rep.unit}) in_regime={_f(rep.in_regime)} satisfied={_f(rep.satisfied)} "
            f"first_violation={rep.first_violation()}"
        )
        if args.format == "csv":
            _emit(args, formats.csv_text(bounds.REPORT_CSV_COLUMNS, bounds.report_csv_rows(rep)))
        else:
            _emit(args, formats.json_text(bounds.report_to_dict(rep)))
        return EXIT_OK if rep.satisfied else EXIT_CHECK

    if args.N is None:
        raise Malformed("--N is required to evaluate a bound")
    R = 1.0 if args.R is None else args.R
    regime = bounds.stepsize_admissible(args.method, g1, g2, args.rho, args.L)
    kinds = [args.kind] if args.kind else {"pp": bounds.PP_KINDS, "eg": bounds.EG_KINDS, "og": bounds.OG_KINDS}[args.method]
    values = {}
    for kind in kinds:
        try:
            values[kind] = bounds.bound_value(args.method, kind, g1, g2, args.rho, args.L, R, args.N)
        except bounds.RegimeError as exc:
            print(f"{kind}: not applicable: {exc}")
            continue
        print(f"{kind} ({bounds.bound_unit(args.method, kind)}): {_f(values[kind])}")
    if args.method == "eg" and {"last_iterate", "last_iterate_refined"} <= values.keys():
        best = min(("last_iterate", "last_iterate_refined"), key=values.get)
        print(f"tighter last-iterate bound: {best} = {_f(values[best])}")
    if regime.counterexample:
        print(f"counter-example regime: {regime.counterexample}")
    payload = {"method": args.method, "N": args.N, "R": R, "values": values, "regime": regime.to_dict()}
    _emit(args, formats.json_text(payload))
    return EXIT_OK if values else EXIT_REGIME


# -- certify ---------------------------------------------------------------------------

def cmd_certify(args) -> int:
    if args.what == "lemma-c8":
        out = bounds.lemma_c8_matrix_certificate()
        print(f"lambda_max(M + D/100) = {_f(out['max_eigenvalue'])}")
        print(f"exact rational check = {_f(out['exact'])}")
        passed = out["holds"]
    elif args.what in ("eg-counterexample", "og-counterexample"):
        for name in ("L", "gamma1", "gamma2"):
            if getattr(args, name) is None:
                raise Malformed(f"--{name} is required")
        out = bounds.counterexample_certificates(args.what[:2], args.L, args.gamma1, args.gamma2)
        print(f"operator = {out['operator']}")
        print(f"{out['quantity_name']} = {_f(out['spectral_quantity'])}")
        print(f"spectral radius = {_f(out['spectral_radius'])}")
        print(f"expansive={_f(out['expansive'])} diverges={_f(out['diverges'])}")
        passed = out["diverges"]
    elif args.what == "comonotone":
        if args.op is None or args.rho is None:
            raise Malformed("--op and --rho are required")
        op = parse_op_spec(args.op)
        passed, cert = operators.certify_comonotone(op, args.rho, args.tol)
        print(f"rho = {_f(args.rho)}, smallest admissible rho = {_f(cert.tight_rho)}")
        print(f"spectral test = {_f(cert.spectral_ok)}, exact test = {_f(cert.exact_ok)}, L = {_f(cert.lipschitz)}")
        out = {
            "rho": cert.rho,
            "tight_rho": cert.tight_rho,
            "spectral_rho": cert.spectral_rho,
            "lipschitz": cert.lipschitz,
            "spectral_ok": cert.spectral_ok,
            "exact_ok": cert.exact_ok,
            "normal": cert.normal,
            "spectrum": [[v.real, v.imag] for v in cert.spectrum],
        }
    else:
        raise Malformed(f"unknown certificate {args.what!r}")
    print("pass" if passed else "fail")
    _emit(args, formats.json_text({"what": args.what, "pass": passed, **out}))
    return EXIT_OK if passed else EXIT_CHECK


# -- interpolate -----------------------------------------------------------------------

def cmd_interpolate(args) -> int:
    if bool(args.dataset) == bool(args.trace):
        raise Malformed("give exactly one of --dataset or --trace")
    if args.dataset:
        ds = interpolation.dataset_from_dict(_load_json(args.dataset))
    else:
        tr = solvers.trace_from_dict(_load_json(args.trace))
        ds = interpolation.dataset_from_trace(tr, reference=tr.reference)
    rep = interpolation.check_interpolable(ds, args.rho, args.tol)
    print(f"pairs={len(ds)} rho={_f(args.rho)} min_slack={_f(rep.min_slack)} violations={len(rep.violations)}")
    print("interpolable" if rep.ok else "not interpolable")
    if args.shift:
        formats.write_atomic(args.shift, formats.json_text(interpolation.dataset_to_dict(interpolation.shift_to_monotone(ds, args.rho))))
    payload = {"ok": rep.ok, "rho": rep.rho, "tol": rep.tol, "min_slack": rep.min_slack,
               "violations": [list(v) for v in rep.violations]}
    _emit(args, formats.json_text(payload))
    return EXIT_OK if rep.ok else EXIT_CHECK


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="comonotone-vi",
        description="Proximal point, extragradient and optimistic gradient on rho-negative comonotone operators.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common_out(sp, formats_=("json", "csv")):
        sp.add_argument("--out", help="output file ('-' for stdout)")
        sp.add_argument("--format", choices=formats_, default="json")

    r = sub.add_parser("run", help="run a method and check the applicable bounds")
    r.add_argument("--method", choices=solvers.METHODS, required=True)
    r.add_argument("--op", required=True, help="operator spec, e.g. rotation:theta=2.0944,L=1")
    r.add_argument("--x0", help="comma-separated start point (default: first unit vector)")
    r.add_argument("--reference", help="comma-separated solution x* (default: origin)")
    r.add_argument("--gamma", type=float)
    r.add_argument("--gamma1", type=float)
    r.add_argument("--gamma2", type=float)
    r.add_argument("--N", type=int, default=200)
    r.add_argument("--rho", type=float, help="comonotonicity parameter for bounds (default: certified)")
    r.add_argument("--L", type=float, help="Lipschitz constant for bounds (default: computed)")
    common_out(r)
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("pep", help="solve the worst-case SDP for the proximal point method")
    q.add_argument("--N", type=int, nargs="+", required=True)
    q.add_argument("--gamma", type=float, nargs="+", required=True)
    q.add_argument("--rho", type=float, required=True)
    q.add_argument("--R", type=float, default=1.0)
    q.add_argument("--trace-heuristic", action="store_true")
    q.add_argument("--compare-analytic", action="store_true")
    q.add_argument("--tol", type=float, default=sdp.DEFAULT_TOL)
    q.add_argument("--max-iter", type=int, default=sdp.DEFAULT_MAX_ITER)
    q.add_argument("--jobs", type=int, help=f"parallel jobs (default: ${JOBS_ENV} or 1)")
    q.add_argument("--out-dir", help="also write one JSON result per job here")
    common_out(q)
    q.set_defaults(func=cmd_pep)

    b = sub.add_parser("bounds", help="evaluate a bound or check a trace against it")
    b.add_argument("--method", choices=solvers.METHODS, required=True)
    b.add_argument("--kind")
    b.add_argument("--gamma", type=float)
    b.add_argument("--gamma1", type=float)
    b.add_argument("--gamma2", type=float)
    b.add_argument("--rho", type=float, required=True)
    b.add_argument("--L", type=float)
    b.add_argument("--R", type=float)
    b.add_argument("--N", type=int)
    b.add_argument("--trace", help="trace JSON written by 'run'")
    common_out(b)
    b.set_defaults(func=cmd_bounds)

    c = sub.add_parser("certify", help="verify a certificate")
    c.add_argument("what", choices=("lemma-c8", "eg-counterexample", "og-counterexample", "comonotone"))
    c.add_argument("--L", type=float)
    c.add_argument("--gamma1", type=float)
    c.add_argument("--gamma2", type=float)
    c.add_argument("--op")
    c.add_argument("--rho", type=float)
    c.add_argument("--tol", type=float, default=operators.CERT_TOL)
    common_out(c, ("json",))
    c.set_defaults(func=cmd_certify)

    i = sub.add_parser("interpolate", help="check extendability of a finite dataset")
    i.add_argument("--dataset")
    i.add_argument("--trace")
    i.add_argument("--rho", type=float, required=True)
    i.add_argument("--tol", type=float, default=interpolation.INTERP_TOL)
    i.add_argument("--shift", help="write the monotone-shifted dataset here")
    common_out(i, ("json",))
    i.set_defaults(func=cmd_interpolate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_MALFORMED if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (bounds.RegimeError, operators.PreconditionError, operators.SingularResolvent) as exc:
        print(f"regime rejected: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (sdp.EigenFailure, operators.CertificationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (Malformed, ValueError, KeyError, TypeError) as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
