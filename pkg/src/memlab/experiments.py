"""End-to-end studies: epsilon sweeps, (non)uniqueness, oracles and convergence."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import analysis
from .errors import (HypothesisUnmet, InvalidParameter, MonotonicityViolated, NegativeState,
                     RegimeMismatch, SearchFailed)
from .problem import (InitialData, ModelParams, Problem, build_epsilon_initial)
from .solver import SolverConfig, Trajectory, solve

DEFAULT_LADDER = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
# limits from zero data converge slowly in eps; go deep instead of extrapolating
NONUNIQ_LADDER = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
MONOTONE_TOL = 1e-6
CONVERGED_TOL = 1e-4


# ---------------------------------------------------------------------------
# independent scalar oracle


@dataclass
class OdeSolution:
    t: np.ndarray
    u: np.ndarray
    I: np.ndarray
    method: str

    def at(self, t: float) -> float:
        return float(np.interp(t, self.t, self.u))


def ode_closed_form(params: ModelParams, c0: float, eps: float, t) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution of u' = a I - b u + b eps, I' = u (the p=0, q=1, m=1 case).

    Differentiating gives u'' + b u' - a u = 0 with u(0) = c0,
    u'(0) = -b c0 + b eps.
    """
    a, b = params.a, params.b
    t = np.asarray(t, float)
    disc = math.sqrt(b * b + 4 * a)
    r1, r2 = 0.5 * (-b + disc), 0.5 * (-b - disc)
    du0 = -b * c0 + b * eps ** params.m
    B = (du0 - r1 * c0) / (r2 - r1)
    A = c0 - B
    u = A * np.exp(r1 * t) + B * np.exp(r2 * t)
    du = A * r1 * np.exp(r1 * t) + B * r2 * np.exp(r2 * t)
    I = (du + b * u - b * eps ** params.m) / a if a > 0 else np.zeros_like(t)
    return u, I


def ode_oracle(params: ModelParams, c0: float, eps: float, T: float, dt: float = 1e-5,
               stride: int = 10) -> OdeSolution:
    """High-accuracy trajectory of the spatially constant, zero-kernel reduction.

    Integrates u' = a u^p I - b u^m + b eps^m, I' = u^q with classical RK4,
    or uses the closed form when (p, q, m) = (0, 1, 1).
    """
    if c0 < 0:
        raise InvalidParameter("c0", c0, "must be >= 0")
    dt = min(dt, 1e-5)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / n
    t = np.linspace(0.0, T, n + 1)[::stride]
    if t[-1] != T:
        t = np.append(t, T)
    if params.p == 0 and params.q == 1 and params.m == 1 and params.a > 0:
        u, I = ode_closed_form(params, c0, eps, t)
        return OdeSolution(t, u, I, "closed_form")

    a, b, p, q, m = params.a, params.b, params.p, params.q, params.m
    src = b * eps ** m if eps > 0 else 0.0

    def f(u, I):
        if u < 0:
            raise NegativeState(f"oracle state {u:.3e} < 0; reduce dt")
        return a * u ** p * I - b * u ** m + src, u ** q

    u, I = float(c0), 0.0
    us, Is = [u], [I]
    for k in range(1, n + 1):
        k1u, k1i = f(u, I)
        k2u, k2i = f(u + 0.5 * dt * k1u, I + 0.5 * dt * k1i)
        k3u, k3i = f(u + 0.5 * dt * k2u, I + 0.5 * dt * k2i)
        k4u, k4i = f(u + dt * k3u, I + dt * k3i)
        u += dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        I += dt / 6.0 * (k1i + 2 * k2i + 2 * k3i + k4i)
        if u < 0:
            raise NegativeState(f"oracle state {u:.3e} < 0 at t={k * dt:.6g}")
        if k % stride == 0 or k == n:
            us.append(u)
            Is.append(I)
    return OdeSolution(t, np.array(us), np.array(Is), "rk4")


# ---------------------------------------------------------------------------
# epsilon sweep


def extrapolate_in_eps(ladder: Sequence[float], values: Sequence[np.ndarray]) -> tuple[np.ndarray, str]:
    """Richardson-type estimate of the eps -> 0 limit from the last rungs.

    Models ``u(eps) = u_M + C eps^r``. With three rungs the exponent r is
    fitted from the sup-norm of successive differences; otherwise r = 1.
    """
    e = np.asarray(ladder, float)
    v = [np.asarray(x, float) for x in values]
    r = 1.0
    if len(v) >= 3:
        d1 = float(np.max(np.abs(v[-3] - v[-2])))
        d2 = float(np.max(np.abs(v[-2] - v[-1])))
        e1, e2, e3 = e[-3:]
        if d1 > 0 and d2 > 0:
            target = d1 / d2

            def g(rr):
                return (e1 ** rr - e2 ** rr) / (e2 ** rr - e3 ** rr) - target
            lo, hi = 1e-3, 4.0
            if g(lo) * g(hi) < 0:
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if g(lo) * g(mid) <= 0:
                        hi = mid
                    else:
                        lo = mid
                r = 0.5 * (lo + hi)
    e2, e3 = e[-2], e[-1]
    limit = v[-1] - (v[-2] - v[-1]) * e3 ** r / (e2 ** r - e3 ** r)
    return np.maximum(limit, 0.0), f"richardson(r={r:.4g})"


def sweep_limit(ladder, values) -> tuple[np.ndarray, str, float]:
    """Limit field, its tag and the sup difference between the last two rungs.

    Rungs decrease as eps shrinks, so a "last-iterate" limit bounds the true
    limit from above.
    """
    if len(values) == 1:
        return np.asarray(values[-1]), "last-iterate", math.inf
    agreement = float(np.max(np.abs(np.asarray(values[-1]) - np.asarray(values[-2]))))
    if agreement < CONVERGED_TOL:
        return np.asarray(values[-1]), "last-iterate", agreement
    limit, tag = extrapolate_in_eps(ladder, values)
    return limit, tag, agreement


@dataclass
class SweepResult:
    ladder: tuple
    trajectories: list
    monotonicity: dict
    limit: np.ndarray
    limit_tag: str
    agreement: float
    times: np.ndarray = field(default=None)
    x: np.ndarray = field(default=None)

    def limit_at(self, t: float) -> np.ndarray:
        return self.limit[int(np.argmin(np.abs(self.times - t)))]

    def limit_spec(self) -> analysis.SubSuperSpec:
        return analysis.numeric_spec(self.times, self.x, self.limit)

    def summary(self) -> dict:
        return {
            "ladder": list(self.ladder),
            "monotonicity": self.monotonicity,
            "limit_tag": self.limit_tag,
            "agreement_last_two": self.agreement,
            "limit_final_max": float(self.limit[-1].max()),
            "limit_final_min": float(self.limit[-1].min()),
            "rungs": [{"epsilon": e, **tr.summary()} for e, tr in zip(self.ladder, self.trajectories)],
        }


def _check_ladder(ladder):
    e = np.asarray(ladder, float)
    if e.size == 0 or np.any(e <= 0) or np.any(e >= 1) or np.any(np.diff(e) >= 0):
        raise InvalidParameter("ladder", list(ladder), "must be strictly decreasing inside (0, 1)")


def maximal_solution_sweep(problem: Problem, ladder: Sequence[float] = DEFAULT_LADDER,
                           cfg: Optional[SolverConfig] = None, workers: int = 1,
                           strict: bool = True) -> SweepResult:
    """Solve the regularized problem for each eps and pass to the limit."""
    _check_ladder(ladder)
    cfg = cfg or SolverConfig()

    def run(eps):
        u0e = build_epsilon_initial(problem.initial, eps, problem.kernel, problem.params)
        return solve(problem.with_initial(u0e), replace(cfg, epsilon=eps))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            trajs = list(pool.map(run, ladder))
    else:
        trajs = [run(e) for e in ladder]

    times = trajs[0].times
    worst = {"excess": -math.inf}
    violations = 0
    for j in range(len(trajs) - 1):
        hi, lo = trajs[j], trajs[j + 1]
        if hi.times.shape != lo.times.shape or not np.allclose(hi.times, lo.times):
            raise MonotonicityViolated("rungs do not share snapshot times")
        excess = lo.values - hi.values
        bad = excess > MONOTONE_TOL
        violations += int(np.count_nonzero(bad))
        i, k = np.unravel_index(int(np.argmax(excess)), excess.shape)
        if excess[i, k] > worst["excess"]:
            worst = {"excess": float(excess[i, k]), "t": float(times[i]), "x": float(lo.x[k]),
                     "rung": j + 1}
    mono = {"violations": violations, "tolerance": MONOTONE_TOL, "worst": worst,
            "ordered": violations == 0}
    if violations and strict:
        raise MonotonicityViolated(f"{violations} points with u_eps(j+1) > u_eps(j) + {MONOTONE_TOL:g}",
                                   location=worst)
    limit, tag, agreement = sweep_limit(ladder, [tr.values for tr in trajs])
    return SweepResult(tuple(ladder), trajs, mono, limit, tag, agreement, times, trajs[0].x)


def ode_sweep_limit(params: ModelParams, ladder: Sequence[float], T: float, c0: float = 0.0,
                    dt: float = 1e-5) -> tuple[float, str, list]:
    """Same limit procedure as the PDE sweep, applied to the scalar oracle at t = T."""
    finals = [np.array([ode_oracle(params, c0 + e, e, T, dt).u[-1]]) for e in ladder]
    limit, tag, _ = sweep_limit(ladder, finals)
    return float(limit[0]), tag, [float(f[0]) for f in finals]


# ---------------------------------------------------------------------------
# (non)uniqueness


def nonuniqueness_demo(problem: Problem, cfg: Optional[SolverConfig] = None,
                       ladder: Sequence[float] = NONUNIQ_LADDER, sub_tolerance: float = 1e-9) -> dict:
    """Exhibit two solutions from zero data: u = 0 and the maximal solution."""
    prm = problem.params
    dom = problem.domain
    cfg = cfg or SolverConfig(dt=1e-4, T_final=1.0, snapshot_stride=1)
    zero_problem = problem.with_initial(InitialData.constant(0.0, dom))
    if prm.nonuniq_tgamma:
        branch = "tgamma"
    elif prm.nonuniq_boundary and analysis.kernel_positive_at_boundary(problem.kernel, dom.L, 0.0) is not None:
        branch = "boundary"
    else:
        raise RegimeMismatch("need p + q < min(1, m), or l < min(1, m) with a kernel positive at the boundary")

    t_check = np.linspace(0.0, cfg.T_final, 51)
    zero_rep = analysis.check_candidate(analysis.constant_spec(0.0, (0.0, cfg.T_final)),
                                        zero_problem, t=t_check)

    sweep = maximal_solution_sweep(zero_problem, ladder, cfg)
    u_final = sweep.limit[-1]
    report = {
        "branch": branch,
        "zero_solution": {"verdict": zero_rep.verdict, "is_solution": zero_rep.verdict == "both"},
        "sweep": sweep.summary(),
        "u_M_final_sup": float(u_final.max()),
        "u_M_final_min": float(u_final.min()),
        "u_M_profile": u_final.tolist(),
        "zero_profile": np.zeros(dom.N).tolist(),
        "x": dom.x.tolist(),
        "T": cfg.T_final,
    }

    sub = None
    if branch == "tgamma":
        sub = analysis.build_tgamma_subsolution(prm)
        sub_window_end = min(sub.window[1], 1e-3)
        report["subsolution"] = {"kind": sub.kind, **sub.params}
    else:
        try:
            sub = analysis.build_boundary_layer_subsolution(zero_problem, T_guess=cfg.T_final)
            sub_window_end = sub.window[1]
            report["subsolution"] = {"kind": sub.kind, **sub.params}
        except SearchFailed as exc:
            report["subsolution"] = {"kind": "boundary_layer_sub", "search_failed": True, "best": exc.best}
    if sub is not None:
        t_dom = sweep.times[sweep.times <= sub_window_end + 1e-15]
        if t_dom.size < 2:
            t_dom = np.linspace(0.0, sub_window_end, 11)
        sub_trim = analysis.SubSuperSpec(sub.kind, (0.0, sub_window_end), sub.func, sub.params)
        dom_rep = analysis.compare(sub_trim, sweep.limit_spec(), dom.x, t_dom, tolerance=sub_tolerance)
        last = analysis.trajectory_spec(sweep.trajectories[-1])
        rung_rep = analysis.compare(sub_trim, last, dom.x, t_dom, tolerance=sub_tolerance, params=prm)
        report["dominance"] = {"limit": dom_rep.as_dict(), "last_rung": rung_rep.as_dict()}

    if problem.kernel.is_zero:
        spatial = float(np.max(np.ptp(sweep.limit, axis=1)))
        lim, tag, finals = ode_sweep_limit(prm, ladder, cfg.T_final)
        report["ode_oracle"] = {
            "limit": lim, "tag": tag, "rungs": finals,
            "pde_limit": float(u_final.mean()),
            "relative_difference": abs(float(u_final.mean()) - lim) / lim if lim > 0 else math.inf,
            "pde_spatial_spread": spatial,
        }
    report["nonunique"] = bool(report["zero_solution"]["is_solution"] and u_final.max() >= 10 * zero_rep.tolerances["interior"])
    return report


def uniqueness_hypothesis(params: ModelParams, u0: InitialData) -> Optional[str]:
    vals = np.asarray(u0.values)
    if params.uniqueness_regime and np.all(vals >= 0):
        return "min(p,q,l)>=1, nonnegative data"
    if np.all(vals > 0) and (params.m >= 1 or params.p < params.m < 1):
        return "positive data, m>=1 or p<m<1"
    return None


def uniqueness_probe(problem: Problem, delta0: float, cfg: Optional[SolverConfig] = None) -> dict:
    """Solve from u0 and u0 + delta0 and compare the divergence with the Gronwall envelope."""
    prm = problem.params
    hyp = uniqueness_hypothesis(prm, problem.initial)
    if hyp is None:
        raise HypothesisUnmet("no uniqueness hypothesis applies to these parameters and data")
    cfg = cfg or SolverConfig(dt=1e-4, T_final=0.5, snapshot_stride=50)
    base = solve(problem, cfg)
    pert = solve(problem.with_initial(InitialData(problem.initial.values + delta0, problem.domain)), cfg)
    diff = pert.values - base.values
    div = np.max(np.abs(diff), axis=1)
    M = float(max(base.values.max(), pert.values.max()))
    C = analysis.gronwall_constant(M, prm, cfg.T_final, problem.domain.boundary_measure)
    envelope = delta0 * np.exp(C * base.times)
    w_plus = analysis.positive_part_integral(diff, base.x)
    gr = analysis.gronwall_bound(base.times, w_plus, M, prm, 0.0, cfg.T_final, problem.domain)
    return {
        "hypothesis": hyp,
        "delta0": delta0,
        "divergence_final": float(div[-1]),
        "ratio_final": float(div[-1] / delta0) if delta0 > 0 else 0.0,
        "gronwall_constant": C,
        "M": M,
        "within_envelope": bool(np.all(div <= envelope * (1 + 1e-12) + 1e-15)),
        "l1_gronwall": gr.as_dict(),
        "identical": bool(np.array_equal(base.values, pert.values)),
        "times": base.times.tolist(),
        "divergence": div.tolist(),
        "envelope": envelope.tolist(),
    }


# ---------------------------------------------------------------------------
# convergence


def convergence_study(problem: Union[Problem, Callable[[int], Problem]], levels: Sequence[tuple],
                      cfg: SolverConfig, exact: Optional[Callable] = None) -> dict:
    """Errors at ``cfg.T_final`` per (N, dt) level and observed orders.

    ``problem`` may be a factory ``N -> Problem`` so each level samples its
    own initial data. Without ``exact`` the finest (last) level is the
    reference and coarse nodes must be nested in it.
    """
    if len(levels) < 3:
        raise InvalidParameter("levels", len(levels), "need at least 3 levels")
    finals = []
    for N, dt in levels:
        pr = problem(int(N)) if callable(problem) else _resample(problem, int(N))
        tr = solve(pr, replace(cfg, dt=float(dt), snapshot_stride=10**9))
        finals.append((tr.x, tr.final))
    errors = []
    for (x, u), (N, dt) in zip(finals, levels):
        if exact is not None:
            ref = np.asarray(exact(x, cfg.T_final), float) * np.ones_like(x)
        else:
            xf, uf = finals[-1]
            ref = np.interp(x, xf, uf)
        errors.append(float(np.max(np.abs(u - ref))))
    rows = []
    for i, (N, dt) in enumerate(levels):
        row = {"N": int(N), "h": levels_h(problem, N), "dt": float(dt), "error": errors[i], "order": None}
        if i > 0:
            e0, e1 = errors[i - 1], errors[i]
            h0, h1 = levels_h(problem, levels[i - 1][0]), row["h"]
            ref0, ref1 = (h0, h1) if h0 != h1 else (levels[i - 1][1], dt)
            if e0 > 0 and e1 > 0 and ref0 != ref1:
                row["order"] = math.log(e0 / e1) / math.log(ref0 / ref1)
        rows.append(row)
    if exact is None:
        rows[-1]["order"] = None
    orders = [r["order"] for r in rows if r["order"] is not None]
    return {"levels": rows, "reference": "exact" if exact is not None else "finest",
            "min_order": min(orders) if orders else None}


def levels_h(problem, N) -> float:
    L = problem(int(N)).domain.L if callable(problem) else problem.domain.L
    return L / (int(N) - 1)


def _resample(problem: Problem, N: int) -> Problem:
    if N == problem.domain.N:
        return problem
    from .problem import Domain1D
    dom = Domain1D(problem.domain.L, N)
    vals = np.interp(dom.x, problem.domain.x, problem.initial.values)
    return Problem(problem.params, dom, problem.kernel, InitialData(vals, dom))
