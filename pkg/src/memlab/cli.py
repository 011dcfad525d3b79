"""Command-line front end: ``memlab <subcommand> --problem FILE --out DIR``.

Exit codes: 0 success or passing verdict, 1 failing verdict, 2 usage or
configuration error. A JSON report is written in every case where the
problem file could be read.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import analysis, experiments
from .config import RunSettings, load_settings
from .errors import (Blowup, ConfigError, HypothesisUnmet, InvalidParameter, MemlabError,
                     MonotonicityViolated, NoCompatibleData, NoContraction, NoSupersolution,
                     RegimeMismatch, SearchFailed)
from .greens import NeumannHeatKernel, dump_kernel_table, picard_solve
from .problem import InitialData
from .runio import RunDirectory
from .solver import solve

log = logging.getLogger("memlab")

OK, FAIL, USAGE = 0, 1, 2
SUBCOMMANDS = ("solve", "picard", "verify", "compare", "sweep", "nonuniq", "unique", "converge",
               "greens-check")
# errors that mean "the request does not fit the problem" rather than "the check failed"
USAGE_ERRORS = (ConfigError, InvalidParameter, RegimeMismatch, HypothesisUnmet, NoCompatibleData)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--problem", help="INI problem file")
        sp.add_argument("--out", default="runs", help="root directory for run outputs")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a problem-file entry (repeatable)")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        sp.add_argument("--stamp", help="fixed run-directory suffix instead of a timestamp")
        if name == "greens-check":
            sp.add_argument("--dump", action="store_true", help="also write the kernel table CSV")
    return ap


# ---------------------------------------------------------------------------
# subcommands: each returns (exit code, report dict)


def cmd_solve(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    try:
        traj = solve(problem, cfg)
        code = OK if traj.status == "completed" else FAIL
    except Blowup as exc:
        traj, code = exc.trajectory, FAIL
    run.add_trajectory("trajectory.csv", traj)
    mass = traj.mass()
    report = {**traj.summary(), "mass_initial": mass[0], "mass_final": mass[-1],
              "params": problem.params.as_dict()}
    if problem.params.a == 0 and problem.params.b == 0 and problem.kernel.is_zero:
        report["mass_drift"] = float(np.max(np.abs(mass - mass[0])))
    return code, report


def cmd_picard(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.picard()
    try:
        res = picard_solve(problem, cfg)
    except NoContraction as exc:
        return FAIL, {"converged": False, "error": str(exc), "increments": exc.increments}
    rows = np.column_stack([np.repeat(res.t, res.x.size), np.tile(res.x, res.t.size), res.u.ravel()])
    run.add_table("picard.csv", ["t", "x", "u"], rows)
    report = res.summary()
    report["ratios"] = res.ratios().tolist()
    return (OK if res.converged else FAIL), report


def cmd_verify(st: RunSettings, run: RunDirectory, args):
    problem = st.problem()
    prm = problem.params
    kind = st.get("experiment", "candidate", "exp_super")
    T_guess = st.getfloat("experiment", "T_guess", 1.0)
    want = "super"
    scale_floor = 1.0
    initial = None
    t = None
    if kind == "exp_super":
        spec = analysis.build_exp_supersolution(problem, T_guess=T_guess)
    elif kind == "tgamma_sub":
        spec = analysis.build_tgamma_subsolution(prm)
        end = min(spec.window[1], 1e-3)
        spec = replace(spec, window=(0.0, end))
        want, scale_floor, initial = "sub", 0.0, np.zeros(problem.domain.N)
        t = np.linspace(0.0, end, 101)
    elif kind == "constant_sub":
        spec = analysis.build_constant_subsolution(st.getfloat("experiment", "eps", 0.1),
                                                   st.getfloat("experiment", "tau", 0.5), prm)
        want = "sub"
    elif kind == "boundary_layer_sub":
        want = "sub"
        try:
            spec = analysis.build_boundary_layer_subsolution(problem, T_guess=T_guess)
        except SearchFailed as exc:
            return FAIL, {"candidate": kind, "search_failed": True, "best": exc.best}
        return OK, {"candidate": kind, "verdict": "subsolution", "params": spec.params}
    elif kind == "zero":
        spec = analysis.constant_spec(0.0, (0.0, st.solver().T_final))
        want = "both"
    else:
        raise ConfigError(f"[experiment] candidate: unknown {kind!r}")
    rep = analysis.check_candidate(spec, problem, t=t, initial=initial, scale_floor=scale_floor)
    ok = {"super": rep.is_super, "sub": rep.is_sub, "both": rep.verdict == "both"}[want]
    return (OK if ok else FAIL), {"candidate": kind, "params": spec.params, "window": spec.window,
                                  **rep.as_dict()}


def cmd_compare(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    lo_shift = st.getfloat("compare", "lower_shift", 0.0)
    hi_shift = st.getfloat("compare", "upper_shift", 0.5)
    tol = st.getfloat("compare", "tolerance", 1e-6)
    base = np.asarray(problem.initial.values)
    runs = {}
    for name, shift in (("lower", lo_shift), ("upper", hi_shift)):
        pr = problem.with_initial(InitialData(base + shift, problem.domain))
        runs[name] = solve(pr, cfg)
        run.add_trajectory(f"{name}.csv", runs[name])
    lo, hi = runs["lower"], runs["upper"]
    order = analysis.compare(analysis.trajectory_spec(lo), analysis.trajectory_spec(hi),
                             lo.x, lo.times, tolerance=tol, params=problem.params)
    M = float(max(lo.values.max(), hi.values.max()))
    w_plus = analysis.positive_part_integral(lo.values - hi.values, lo.x)
    gr = analysis.gronwall_bound(lo.times, w_plus, M, problem.params, 0.0, cfg.T_final, problem.domain)
    ok = order.ordered and gr.holds
    return (OK if ok else FAIL), {"ordering": order.as_dict(), "gronwall": gr.as_dict(),
                                  "lower_shift": lo_shift, "upper_shift": hi_shift}


def cmd_sweep(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    ladder = st.getlist("experiment", "ladder", list(experiments.DEFAULT_LADDER))
    workers = st.getint("experiment", "workers", 1)
    try:
        res = experiments.maximal_solution_sweep(problem, ladder, cfg, workers=workers)
    except MonotonicityViolated as exc:
        return FAIL, {"monotone": False, "error": str(exc), "location": exc.location}
    for e, tr in zip(res.ladder, res.trajectories):
        run.add_trajectory(f"rung_{e:.6g}.csv", tr)
    rows = np.column_stack([np.repeat(res.times, res.x.size), np.tile(res.x, res.times.size),
                            res.limit.ravel()])
    run.add_table("limit.csv", ["t", "x", "u"], rows)
    return OK, {"monotone": True, **res.summary()}


def cmd_nonuniq(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    if not problem.initial.is_zero:
        raise ConfigError("nonuniq needs zero initial data ([initial] kind = zero)")
    ladder = st.getlist("experiment", "ladder", list(experiments.NONUNIQ_LADDER))
    rep = experiments.nonuniqueness_demo(problem, cfg, ladder)
    ok = rep["nonunique"]
    dom = rep.get("dominance")
    if dom is None or not dom["limit"]["ordered"]:
        ok = False
    ode = rep.get("ode_oracle")
    if ode is not None and ode["relative_difference"] > 0.05:
        ok = False
    rows = np.column_stack([rep["x"], rep["zero_profile"], rep["u_M_profile"]])
    run.add_table("profiles.csv", ["x", "u_zero", "u_M"], rows)
    return (OK if ok else FAIL), rep


def cmd_unique(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    delta0 = st.getfloat("experiment", "delta0", 1e-6)
    rep = experiments.uniqueness_probe(problem, delta0, cfg)
    rows = np.column_stack([rep["times"], rep["divergence"], rep["envelope"]])
    run.add_table("divergence.csv", ["t", "divergence", "envelope"], rows)
    ok = rep["within_envelope"] and rep["l1_gronwall"]["holds"]
    return (OK if ok else FAIL), rep


def cmd_converge(st: RunSettings, run: RunDirectory, args):
    problem, cfg = st.problem(), st.solver()
    levels = st.levels()
    exact_expr = st.get("experiment", "exact")
    exact = None
    if exact_expr:
        from .config import compile_expression
        f = compile_expression(exact_expr, ("x", "t"))
        exact = lambda x, t: f(x, t)  # noqa: E731
    L = problem.domain.L

    def factory(N):
        from .problem import Domain1D, Problem
        dom = Domain1D(L, N)
        sub = load_settings(args.problem, args.set + [f"domain.N={N}"])
        return Problem(problem.params, dom, problem.kernel, sub.initial(problem.params, dom, problem.kernel))

    rep = experiments.convergence_study(factory, levels, cfg, exact)
    rows = [(r["N"], r["h"], r["dt"], r["error"], np.nan if r["order"] is None else r["order"])
            for r in rep["levels"]]
    run.add_table("convergence.csv", ["N", "h", "dt", "error", "order"], rows)
    need = st.getfloat("experiment", "min_order")
    ok = need is None or (rep["min_order"] is not None and rep["min_order"] >= need)
    return (OK if ok else FAIL), rep


def cmd_greens_check(st: RunSettings, run: RunDirectory, args):
    L = st.getfloat("domain", "L", 1.0)
    n = st.getint("greens", "samples", 100)
    N = st.getint("greens", "N", 20001)
    kern = NeumannHeatKernel(L)
    rng = np.random.default_rng(args.seed)
    y = np.linspace(0.0, L, N)
    w = np.full(N, y[1] - y[0])
    w[0] = w[-1] = 0.5 * w[1]
    worst = {"integral": 0.0, "negativity": 0.0, "symmetry": 0.0}
    for _ in range(n):
        x = rng.uniform(0.0, L)
        t = 10.0 ** rng.uniform(-3.0, 0.5)
        g = kern(x, y, t)
        integral = float(g @ w)
        worst["integral"] = max(worst["integral"], abs(integral - 1.0))
        worst["negativity"] = max(worst["negativity"], float(-g.min()))
        yy = rng.uniform(0.0, L)
        worst["symmetry"] = max(worst["symmetry"], abs(float(kern(x, yy, t)) - float(kern(yy, x, t))))
    ok = worst["integral"] <= 1e-8 and worst["negativity"] <= 1e-12 and worst["symmetry"] <= 1e-12
    if args.dump:
        times = st.getlist("greens", "times", [1e-3, 1e-2, 1e-1])
        dump_kernel_table(kern, np.linspace(0.0, L, 21), times, run.path / "kernel.csv")
        run.artifacts.append({"file": "kernel.csv", "kind": "table_csv"})
    return (OK if ok else FAIL), {"samples": n, "seed": args.seed, "worst": worst,
                                  "t_switch": kern.t_switch}


HANDLERS = {
    "solve": cmd_solve, "picard": cmd_picard, "verify": cmd_verify, "compare": cmd_compare,
    "sweep": cmd_sweep, "nonuniq": cmd_nonuniq, "unique": cmd_unique, "converge": cmd_converge,
    "greens-check": cmd_greens_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        st = load_settings(args.problem, args.set)
    except ConfigError as exc:
        print(f"memlab: {exc}", file=sys.stderr)
        return USAGE
    rd = RunDirectory(args.out, args.command, args.stamp)
    try:
        code, report = HANDLERS[args.command](st, rd, args)
    except USAGE_ERRORS as exc:
        code, report = USAGE, {"error": type(exc).__name__, "message": str(exc)}
        print(f"memlab: {type(exc).__name__}: {exc}", file=sys.stderr)
    except (NoSupersolution, MemlabError) as exc:
        code, report = FAIL, {"error": type(exc).__name__, "message": str(exc)}
        print(f"memlab: {type(exc).__name__}: {exc}", file=sys.stderr)
    report = {"command": args.command, "exit_code": code, "seed": args.seed, **report}
    rd.add_json("report.json", report)
    out = rd.close()
    print(out)
    return code


def main() -> None:
    sys.exit(run())
