"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Reference values come from independent oracles evaluated here (mpmath closed
forms, direct arithmetic) rather than from the package under test.
"""
import filecmp
import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest

from memlab import analysis as an
from memlab import experiments as ex
from memlab.cli import run
from memlab.greens import NeumannHeatKernel, PicardConfig, picard_solve
from memlab.problem import (BoundaryKernel, Domain1D, InitialData, ModelParams, Problem,
                            make_compatible_initial, make_params)
from memlab.solver import SolverConfig, solve

SEED = 20240611

# u'' + u' - u = 0, u(0) = 1, u'(0) = -1, evaluated in 30 digits
mpmath.mp.dps = 30
_R1, _R2 = (-1 + mpmath.sqrt(5)) / 2, (-1 - mpmath.sqrt(5)) / 2
_B = (-1 - _R1) / (_R2 - _R1)


def ode_exact(t):
    return np.array([float((1 - _B) * mpmath.e ** (_R1 * s) + _B * mpmath.e ** (_R2 * s))
                     for s in np.atleast_1d(t)])


def heat_exact(x, t):
    return 1 + 0.5 * np.exp(-np.pi ** 2 * t) * np.cos(np.pi * x)


def test_01_kernel_identities(criterion):
    kern = NeumannHeatKernel(1.0)
    rng = np.random.default_rng(SEED)
    y = np.linspace(0, 1, 20001)
    w = np.full(y.size, y[1] - y[0])
    w[[0, -1]] *= 0.5
    worst_int = worst_neg = worst_sym = 0.0
    for _ in range(100):
        x = rng.uniform(0, 1)
        t = 10 ** rng.uniform(-3, 0.5)
        g = kern(x, y, t)
        worst_int = max(worst_int, abs(float(g @ w) - 1))
        worst_neg = max(worst_neg, float(-g.min()))
        y2 = rng.uniform(0, 1)
        worst_sym = max(worst_sym, abs(float(kern(x, y2, t)) - float(kern(y2, x, t))))
    ok = worst_int <= 1e-8 and worst_neg <= 1e-12 and worst_sym <= 1e-12
    criterion(1, ok, f"max|int G - 1|={worst_int:.1e}, min G>={-worst_neg:.1e}, asym={worst_sym:.1e}")


def test_02_heat_mode(criterion):
    prm = make_params(a=0, b=0)

    def run_level(N, dt):
        dom = Domain1D(1.0, N)
        u0 = InitialData.from_function(lambda x: heat_exact(x, 0.0), dom)
        tr = solve(Problem(prm, dom, initial=u0), SolverConfig(dt=dt, T_final=0.1, snapshot_stride=10**9))
        return float(np.max(np.abs(tr.final - heat_exact(dom.x, 0.1))))

    err = run_level(201, 1e-4)
    # dt ~ h^2 keeps the first-order time error below the spatial one
    errs = [run_level(N, (1.0 / (N - 1)) ** 2) for N in (51, 101, 201)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    ok = err <= 2e-3 and min(orders) >= 1.8
    criterion(2, ok, f"Linf={err:.2e} at N=201 dt=1e-4; orders {orders[0]:.2f}, {orders[1]:.2f}")


def test_03_ode_closed_form(criterion):
    exact1 = float(ode_exact(1.0)[0])
    dom = Domain1D(1.0, 51)
    pr = Problem(ModelParams(1, 1, 0, 1, 1, 1), dom, initial=InitialData.constant(1.0, dom))
    tr = solve(pr, SolverConfig(dt=1e-4, T_final=1.0, snapshot_stride=10**9))
    rel = abs(tr.final.mean() / exact1 - 1)
    rel_printed = abs(tr.final.mean() / 0.65629 - 1)
    pr2 = Problem(pr.params, Domain1D(1.0, 101), initial=InitialData.constant(1.0, Domain1D(1.0, 101)))
    res = picard_solve(pr2, PicardConfig(N_g=101, M_g=201, T=0.5))
    perr = float(np.max(np.abs(res.u - ode_exact(res.t)[:, None])))
    ok = rel <= 1e-3 and rel_printed <= 1e-3 and res.converged and perr <= 5e-3
    criterion(3, ok, f"solver rel err {rel:.1e} (exact {exact1:.7f}); Picard sup err {perr:.1e} "
                     f"in {res.iterations} iterations")


@pytest.mark.parametrize("prm,kappa", [
    (ModelParams(1, 1, 1, 1, 1, 1), 0.1),
    (ModelParams(1, 1, 1.5, 1, 2, 2), 0.5),
])
def test_04_cross_solver(criterion, prm, kappa):
    dom = Domain1D(1.0, 101)
    k = BoundaryKernel.constant(kappa)
    pr = Problem(prm, dom, k, make_compatible_initial(1.0, k, prm, dom))
    res = picard_solve(pr, PicardConfig(N_g=101, M_g=201, T=0.5))
    tr = solve(pr, SolverConfig(dt=1e-4, T_final=0.5, snapshot_stride=25))
    diff = float(np.max(np.abs(res.u - tr.values)))
    criterion(4, res.converged and diff <= 5e-3,
              f"k={kappa:g} (p,q,m,l)=({prm.p:g},{prm.q:g},{prm.m:g},{prm.l:g}): sup diff {diff:.1e}")


def _preset(name):
    dom = Domain1D(1.0, 41)
    if name == "constant":
        prm = ModelParams(1, 1, 1, 1, 1, 1)
        return Problem(prm, dom, initial=InitialData.constant(1.0, dom))
    if name == "sublinear-zero":
        return Problem(ModelParams(1, 1, 0.2, 0.2, 0.8, 1), dom)
    prm = ModelParams(1, 1, 1.5, 1, 2, 1)
    k = BoundaryKernel.constant(0.2)
    return Problem(prm, dom, k, make_compatible_initial(0.5, k, prm, dom))


@pytest.mark.parametrize("name", ["constant", "sublinear-zero", "boundary-kernel"])
def test_05_eps_monotonicity(criterion, name):
    res = ex.maximal_solution_sweep(_preset(name), ex.DEFAULT_LADDER,
                                    SolverConfig(dt=1e-4, T_final=0.5, snapshot_stride=50), strict=False)
    mono = res.monotonicity
    criterion(5, mono["violations"] == 0 and len(res.ladder) == 5,
              f"{name}: {mono['violations']} violations, worst excess {mono['worst']['excess']:.1e}")


def test_06_comparison_principle(criterion):
    rng = np.random.default_rng(SEED)
    dom = Domain1D(1.0, 41)
    cfg = SolverConfig(dt=1e-4, T_final=0.3, snapshot_stride=20)
    fails, worst_excess, worst_margin = 0, -np.inf, np.inf
    for _ in range(20):
        prm = ModelParams(a=rng.uniform(0.2, 2), b=rng.uniform(0.2, 2), p=rng.uniform(1, 2.5),
                          q=rng.uniform(1, 2.5), m=rng.uniform(0.5, 2.5), l=rng.uniform(1, 2.5))
        k = BoundaryKernel.constant(rng.uniform(0, 0.3))
        u0 = make_compatible_initial(rng.uniform(0.2, 1.0), k, prm, dom)
        lo = solve(Problem(prm, dom, k, u0), cfg)
        hi = solve(Problem(prm, dom, k, InitialData(u0.values + 0.5, dom)), cfg)
        order = an.compare(an.trajectory_spec(lo), an.trajectory_spec(hi), dom.x, lo.times,
                           tolerance=1e-6, params=prm)
        M = float(max(lo.values.max(), hi.values.max()))
        gr = an.gronwall_bound(lo.times, an.positive_part_integral(lo.values - hi.values, dom.x),
                               M, prm, 0.0, cfg.T_final, dom)
        fails += (not order.ordered) or (not gr.holds) or lo.clamp_events or hi.clamp_events
        worst_excess = max(worst_excess, order.max_excess)
        worst_margin = min(worst_margin, gr.min_margin)
    criterion(6, fails == 0, f"20 draws: {fails} failures, max(lower-upper)={worst_excess:.2e}, "
                             f"min Gronwall margin={worst_margin:.1e}")


def test_07_constructions(criterion):
    dom = Domain1D(1.0, 101)
    pr = Problem(ModelParams(1, 1, 0.2, 0.2, 1, 1), dom, initial=InitialData.constant(1.5, dom))
    sup = an.build_exp_supersolution(pr)
    rep_sup = an.check_candidate(sup, pr)

    tg = ModelParams(1, 1, 0.2, 0.2, 0.8, 1)
    sub = an.build_tgamma_subsolution(tg)
    sub = replace(sub, window=(0.0, 1e-3))
    d21 = Domain1D(1.0, 21)
    rep_sub = an.check_candidate(sub, Problem(tg, d21), t=np.linspace(0, 1e-3, 101),
                                 initial=np.zeros(d21.N), scale_floor=0.0)
    t = 1e-3
    spot_oracle = 4 * t ** 3 - t ** 2.6 / 1.8 + t ** 3.2
    spot = float(an.tgamma_residual(t, sub.params["gamma"], tg))

    eps1 = an.constant_sub_level(0.1, 0.5, ModelParams(1, 1, 0.2, 1, 0.8, 1))
    eps1_oracle = min(0.1, 0.05 ** (1 / 0.6))
    ok = (rep_sup.is_super and sup.params["alpha"] == pytest.approx(5.0)
          and sub.params["gamma"] == pytest.approx(4.0) and rep_sub.is_sub
          and rep_sub.stats()["interior"]["max"] <= 0
          and spot == pytest.approx(spot_oracle, rel=1e-12) and spot == pytest.approx(-4.55e-9, rel=1e-3)
          and abs(eps1 - 0.006786) <= 1e-6 and eps1 == pytest.approx(eps1_oracle, rel=1e-14))
    criterion(7, ok, f"exp_super {rep_sup.verdict} (alpha={sup.params['alpha']:g}, "
                     f"T={sup.params['T_valid']:g}); t^4 {rep_sub.verdict}, spot {spot:.4e}; eps1={eps1:.6f}")


def test_08_positivity(criterion):
    dom = Domain1D(1.0, 101)
    prm = ModelParams(1, 1, 1, 1, 1, 1)
    u0 = InitialData.from_function(lambda x: 0.1 * np.maximum(0, 1 - np.abs(x - 0.5) / 0.25) ** 2, dom)
    tr = solve(Problem(prm, dom, initial=u0), SolverConfig(dt=1e-4, T_final=0.5, snapshot_stride=10))
    rep = an.positivity_check(tr, prm, u0, t_min=0.01, t_max=0.5)
    mn = float(rep.minima.min())
    criterion(8, rep.positive and rep.hypothesis is not None and tr.clamp_events == 0,
              f"min over nodes, t in [0.01, 0.5]: {mn:.3e}")


def test_09_nonuniqueness_tgamma(criterion):
    prm = ModelParams(1, 1, 0.2, 0.2, 0.8, 1)
    pr = Problem(prm, Domain1D(1.0, 21))
    rep = ex.nonuniqueness_demo(pr, SolverConfig(dt=1e-4, T_final=1.0))
    ode = rep["ode_oracle"]
    u1 = rep["u_M_final_sup"]
    ok = (rep["zero_solution"]["verdict"] == "both" and rep["u_M_final_min"] >= 0.01
          and ode["relative_difference"] <= 0.05 and rep["dominance"]["limit"]["ordered"]
          and rep["subsolution"]["gamma"] == pytest.approx(4.0))
    criterion(9, ok, f"zero solution verified; u_M(1)={u1:.5f} ({rep['sweep']['limit_tag']}), "
                     f"ODE limit {ode['limit']:.5f}, rel diff {ode['relative_difference']:.1e}; "
                     f"t^4 dominated (max excess {rep['dominance']['limit']['max_excess']:.1e})")


def test_10_nonuniqueness_boundary(criterion):
    prm = ModelParams(1, 1, 1, 1, 1, 0.5)
    pr = Problem(prm, Domain1D(1.0, 201), BoundaryKernel.constant(1.0))
    rep = ex.nonuniqueness_demo(pr, SolverConfig(dt=1e-5, T_final=0.05, snapshot_stride=10))
    sub = rep["subsolution"]
    if sub.get("search_failed"):
        criterion(10, "best" in sub, f"SearchFailed reported with least-violating {sub['best']}")
        return
    dom_ok = rep["dominance"]["limit"]["ordered"]
    criterion(10, dom_ok and rep["zero_solution"]["verdict"] == "both",
              f"subsolution A={sub['A']:g} xi0={sub['xi0']:g} T0={sub['T0']:g}; "
              f"u_M ({rep['sweep']['limit_tag']}) dominates: {dom_ok}; sup u_M(T)={rep['u_M_final_sup']:.3e}")


def test_11_determinism(criterion, tmp_path):
    prm = ModelParams(1, 1, 1.5, 1, 2, 1)
    dom = Domain1D(1.0, 41)
    k = BoundaryKernel.constant(0.2)
    pr = Problem(prm, dom, k, make_compatible_initial(0.5, k, prm, dom))
    cfg = SolverConfig(dt=1e-3, T_final=0.2, snapshot_stride=10)
    solve(pr, cfg).write_csv(tmp_path / "a.csv")
    solve(pr, cfg).write_csv(tmp_path / "b.csv")
    same_solver = filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)

    outs = []
    for tag in ("x", "y"):
        run(["greens-check", "--out", str(tmp_path), "--seed", "7", "--dump", "--stamp", tag,
             "--set", "greens.samples=5"])
        run(["sweep", "--out", str(tmp_path), "--seed", "7", "--stamp", tag,
             "--set", "initial.kind=constant", "--set", "initial.level=1", "--set", "domain.N=21",
             "--set", "solver.dt=1e-3", "--set", "solver.T_final=0.1", "--set", "experiment.ladder=0.1,0.01"])
        outs.append(tag)
    pairs = [("greens-check-x/kernel.csv", "greens-check-y/kernel.csv"),
             ("sweep-x/limit.csv", "sweep-y/limit.csv"),
             ("sweep-x/rung_0.01.csv", "sweep-y/rung_0.01.csv")]
    same_cli = all(filecmp.cmp(tmp_path / a, tmp_path / b, shallow=False) for a, b in pairs)
    criterion(11, same_solver and same_cli,
              f"solver CSV identical: {same_solver}; CLI CSVs identical: {same_cli}")
