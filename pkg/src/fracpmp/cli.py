"""Command-line entry point.

    fracpmp <group> <command> --problem FILE [--out DIR] [--grid-n N] [--tol X] [--quiet]

Every command writes ``result.csv`` and ``report.json`` into ``--out``.
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import warnings

import numpy as np

from .errors import NumericalError, ValidationError
from .exprlang import parse
from .fde import control_system, solve_forward, volterra_residual
from .fracops import (LEFT, build_plan, caputo_derivative, duality_residual, gronwall_bound,
                      ibp_residual, rl_derivative)
from .grid import SampledFn, write_csv
from .kernel import (constant_family, dual_identity_residuals, dual_kernel, rl_family,
                     semigroup_check, tempered_family)
from .pmp import Candidate, check_pmp, oc_problem, solve_ocp
from .problem import Problem, load_problem, sampled
from .variational import IsoProblem, cov_problem, el_residual, pmp_reduction_residual, solve_isoperimetric

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

COMMANDS = {
    "op": ("apply", "check-duality", "check-ibp", "gronwall"),
    "kernel": ("dual", "semigroup"),
    "solve": ("fde", "ocp", "iso"),
    "check": ("pmp", "el"),
}

TASK_FOR = {
    ("op", "apply"): "operator", ("op", "check-duality"): "operator",
    ("op", "check-ibp"): "operator", ("op", "gronwall"): "gronwall",
    ("kernel", "dual"): "dual", ("kernel", "semigroup"): "semigroup",
    ("solve", "fde"): "fde", ("solve", "ocp"): "ocp", ("solve", "iso"): "iso",
    ("check", "pmp"): "candidate", ("check", "el"): "cov",
}


class Output:
    def __init__(self, columns, names, report):
        self.columns = columns
        self.names = names
        self.report = report


def _tol(args, prob: Problem, key: str, default: float) -> float:
    return float(args.tol) if args.tol is not None else float(prob.get(key, default))


def _names(prefix: str, k: int) -> list[str]:
    return [f"{prefix}{i}" for i in range(1, k + 1)]


def _family(name: str, section: dict, K):
    if name == "rl":
        return rl_family
    if name == "tempered":
        return tempered_family(float(section.get("lambda", 1.0)))
    if name == "kernel":
        return constant_family(K.coeffs)
    raise ValidationError(f"unknown kernel family {name!r}")


# -- op ------------------------------------------------------------------------------

def _op_functions(prob: Problem):
    x = sampled(prob, prob.require("function"), 1, "function")
    y = sampled(prob, prob.get("weight_function", "1"), 1, "weight_function")
    return x, y


def cmd_op_apply(prob: Problem, args) -> Output:
    x, _ = _op_functions(prob)
    op = prob.get("operation", "integral")
    side = prob.get("side", LEFT)
    K, G = prob.kernel, prob.grid
    report = {"operation": op, "side": side}
    if op == "integral":
        plan = build_plan(K, G, side, prob.get("order"))
        out = plan.apply(x)
        report.update(order=plan.order, truncation=plan.truncation, tail_estimate=plan.tail_estimate)
    elif op == "caputo":
        out = caputo_derivative(K, G, side, x)
    elif op == "rl":
        out = rl_derivative(K, G, side, x)
    else:
        raise ValidationError(f"unknown operation {op!r}")
    v = out.column(0)
    report.update(value_at_a=float(v[0]), value_at_b=float(v[-1]))
    return Output([G.nodes, v], ["t", "v1"], report)


def cmd_op_duality(prob: Problem, args) -> Output:
    x, y = _op_functions(prob)
    K, G = prob.kernel, prob.grid
    res = duality_residual(K, G, prob.get("order"), x, y)
    left = build_plan(K, G, "left", prob.get("order")).apply(y).column(0)
    right = build_plan(K, G, "right", prob.get("order")).apply(x).column(0)
    return Output([G.nodes, x.column(0), y.column(0), left, right],
                  ["t", "x", "y", "left_integral_y", "right_integral_x"],
                  {"duality_residual": res})


def cmd_op_ibp(prob: Problem, args) -> Output:
    x, y = _op_functions(prob)
    res = ibp_residual(prob.kernel, prob.grid, x, y)
    return Output([prob.grid.nodes, x.column(0), y.column(0)], ["t", "x", "y"],
                  {"ibp_residual": res})


def cmd_op_gronwall(prob: Problem, args) -> Output:
    K, G = prob.kernel, prob.grid
    a = sampled(prob, prob.require("a_expr"), 1, "a_expr")
    g = sampled(prob, prob.require("g_expr"), 1, "g_expr")
    fam = prob.get("family")
    family = _family(fam, prob.section, K) if fam else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = gronwall_bound(K, G, a, g, int(prob.require("k_max")), family,
                             prob.get("composition", "series"))
    report = {"terms_used": res.terms_used, "tail_estimate": res.tail_estimate,
              "semigroup_ok": res.semigroup_ok, "bound_at_b": float(res.bound.column(0)[-1]),
              "warnings": [str(w.message) for w in caught]}
    return Output([G.nodes, res.bound.column(0)], ["t", "bound"], report)


# -- kernel --------------------------------------------------------------------------

def cmd_kernel_dual(prob: Problem, args) -> Output:
    K = prob.kernel
    n_terms = prob.get("n_terms")
    Kbar = dual_kernel(K, None if n_terms is None else int(n_terms))
    raw = dual_identity_residuals(K, Kbar)
    scaled = dual_identity_residuals(K, Kbar, scaled=True)
    m = Kbar.length
    a = np.pad(K.a, (0, max(0, m - K.length)))[:m]
    report = {"n_terms": m, "dual_alpha": Kbar.alpha,
              "max_identity_residual": float(np.max(np.abs(raw))),
              "max_scaled_identity_residual": float(np.max(np.abs(scaled)))}
    return Output([np.arange(m), a, Kbar.a], ["n", "a", "abar"], report)


def cmd_kernel_semigroup(prob: Problem, args) -> Output:
    K = prob.kernel
    family = _family(prob.get("family", "rl"), prob.section, K)
    alpha2 = float(prob.get("alpha2", K.alpha))
    k_max = int(prob.get("k_max", 10))
    rep = semigroup_check(family, K.alpha, alpha2, K.beta, k_max,
                          tol=_tol(args, prob, "tol", 1e-12), variant=prob.get("variant", "printed"))
    res = np.asarray(rep.residuals, dtype=float)
    report = {"passed": rep.passed, "first_failure": rep.first_failure(),
              "max_residual": float(np.max(np.abs(res)))}
    return Output([np.arange(len(res)), res], ["k", "residual"], report)


# -- solve -----------------------------------------------------------------------------

def _system(prob: Problem):
    x0 = [float(v) for v in np.atleast_1d(prob.require("x0"))]
    m = int(prob.get("n_controls", 1))
    return control_system(list(prob.require("dynamics")), x0, m, prob.kernel, prob.grid)


def cmd_solve_fde(prob: Problem, args) -> Output:
    sys_ = _system(prob)
    u = sampled(prob, prob.get("control", ["0"] * sys_.n_controls), sys_.n_controls, "control")
    x = solve_forward(sys_, u, tol=_tol(args, prob, "tol", 1e-12), max_iter=int(prob.get("max_iter", 100)))
    res = float(np.max(volterra_residual(sys_, x, u)))
    G = prob.grid
    return Output([G.nodes, *x.values.T], ["t", *_names("x", sys_.n_states)],
                  {"dynamics_res": res, "x_at_b": x.values[-1].tolist()})


def _candidate_columns(G, c: Candidate, n: int, m: int):
    cols = [G.nodes, *c.x.values.T, *c.u.values.T, *c.lam.values.T]
    names = ["t", *_names("x", n), *_names("u", m), *_names("lambda", n)]
    return cols, names


def cmd_solve_ocp(prob: Problem, args) -> Output:
    sys_ = _system(prob)
    p = oc_problem(sys_, prob.require("lagrangian"))
    solver = prob.get("solver", {})
    u0 = sampled(prob, solver.get("u0", ["0"] * sys_.n_controls), sys_.n_controls, "u0")
    tol = float(args.tol) if args.tol is not None else float(solver.get("tol", 1e-6))
    res = solve_ocp(p, u0, step=float(solver.get("step", 0.5)), tol=tol,
                    max_iter=int(solver.get("max_iter", 500)))
    rep = check_pmp(p, res.candidate).as_dict()
    rep.update(converged=res.converged, iterations=res.iterations,
               history=[{"J": J, "opt_res": o} for J, o in res.history])
    cols, names = _candidate_columns(prob.grid, res.candidate, sys_.n_states, sys_.n_controls)
    return Output(cols, names, rep)


def _cov(prob: Problem):
    return cov_problem(prob.require("lagrangian"), prob.kernel, prob.grid,
                       prob.require("xa"), prob.require("xb"))


def cmd_solve_iso(prob: Problem, args) -> Output:
    base = _cov(prob)
    y = parse(prob.require("constraint"), base.dims)
    p = IsoProblem(base, y, float(prob.require("l")))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = solve_isoperimetric(p, prob.require("bracket"), tol=_tol(args, prob, "tol", 1e-8),
                                  inner_tol=float(prob.get("inner_tol", 1e-8)),
                                  step=float(prob.get("step", 0.5)))
    report = dict(res.report)
    report["warnings"] = [str(w.message) for w in caught]
    G = prob.grid
    return Output([G.nodes, *res.x.values.T, *res.u.values.T],
                  ["t", *_names("x", base.n), *_names("u", base.n)], report)


# -- check --------------------------------------------------------------------------------

def cmd_check_pmp(prob: Problem, args) -> Output:
    sys_ = _system(prob)
    p = oc_problem(sys_, prob.require("lagrangian"))
    n, m = sys_.n_states, sys_.n_controls
    x = sampled(prob, prob.require("x"), n, "x")
    u = sampled(prob, prob.require("u"), m, "u")
    lam = sampled(prob, prob.get("lambda", ["0"] * n), n, "lambda")
    c = Candidate(x, u, lam, int(prob.get("lambda0", 1)))
    rep = check_pmp(p, c).as_dict()
    cols, names = _candidate_columns(prob.grid, c, n, m)
    return Output(cols, names, rep)


def cmd_check_el(prob: Problem, args) -> Output:
    p = _cov(prob)
    x = sampled(prob, prob.require("x"), p.n, "x")
    el = el_residual(p, x).values
    red = pmp_reduction_residual(p, x).values
    report = {"el_res": float(np.max(np.abs(el))), "reduction_res": float(np.max(np.abs(red))),
              "equivalence_gap": float(np.max(np.abs(el - red)))}
    return Output([prob.grid.nodes, *el.T, *red.T],
                  ["t", *_names("el", p.n), *_names("reduced", p.n)], report)


HANDLERS = {
    ("op", "apply"): cmd_op_apply, ("op", "check-duality"): cmd_op_duality,
    ("op", "check-ibp"): cmd_op_ibp, ("op", "gronwall"): cmd_op_gronwall,
    ("kernel", "dual"): cmd_kernel_dual, ("kernel", "semigroup"): cmd_kernel_semigroup,
    ("solve", "fde"): cmd_solve_fde, ("solve", "ocp"): cmd_solve_ocp, ("solve", "iso"): cmd_solve_iso,
    ("check", "pmp"): cmd_check_pmp, ("check", "el"): cmd_check_el,
}


# -- plumbing --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracpmp", description=__doc__.splitlines()[0])
    groups = parser.add_subparsers(dest="group", required=True)
    for group, commands in COMMANDS.items():
        gp = groups.add_parser(group)
        sub = gp.add_subparsers(dest="command", required=True)
        for name in commands:
            cp = sub.add_parser(name)
            cp.add_argument("--problem", required=True, help="problem JSON (or a bundled fixture name)")
            cp.add_argument("--out", default=".", help="output directory")
            cp.add_argument("--grid-n", type=int, default=None, help="override the grid size")
            cp.add_argument("--tol", type=float, default=None, help="override the task tolerance")
            cp.add_argument("--quiet", action="store_true")
    return parser


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _dump(path: str, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _fail(code: int, kind: str, exc: Exception, out_dir: str | None, header: dict) -> int:
    err = {"error": kind, "message": str(exc), "exit_code": code}
    if isinstance(exc, NumericalError):
        err.update(exc.details())
    sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
    if out_dir is not None and code == EXIT_NUMERICAL:
        try:
            _dump(os.path.join(out_dir, "report.json"), {**header, **err, "metadata": _metadata()})
        except OSError:
            pass
    return code


def _metadata() -> dict:
    return {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat()}


def run(group: str, command: str, problem_file: str, out_dir: str = ".", grid_n: int | None = None,
        tol: float | None = None, quiet: bool = True) -> int:
    args = argparse.Namespace(group=group, command=command, problem=problem_file, out=out_dir,
                              grid_n=grid_n, tol=tol, quiet=quiet)
    return _run(args)


def _run(args) -> int:
    key = (args.group, args.command)
    header = {"command": f"{args.group} {args.command}"}
    out_dir = None
    try:
        if key not in HANDLERS:
            raise ValidationError(f"unknown command {' '.join(key)}")
        prob = load_problem(args.problem, args.grid_n)
        want = TASK_FOR[key]
        if prob.task != want:
            raise ValidationError(f"'{header['command']}' needs a '{want}' section, found '{prob.task}'")
        os.makedirs(args.out, exist_ok=True)
        out_dir = args.out
        result = HANDLERS[key](prob, args)
        write_csv(os.path.join(out_dir, "result.csv"), result.columns, result.names)
        report = {**header, **result.report, "grid_n": prob.grid.n, "metadata": _metadata()}
        _dump(os.path.join(out_dir, "report.json"), report)
    except ValidationError as exc:
        return _fail(EXIT_INVALID, "validation", exc, out_dir, header)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc, out_dir, header)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc, out_dir, header)
    if not args.quiet:
        summary = {k: v for k, v in result.report.items() if isinstance(v, (int, float, bool))}
        print(json.dumps({"command": header["command"], **summary}, sort_keys=True,
                         default=_json_default))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
