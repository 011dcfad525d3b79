"""Sub/supersolution constructors, residual checks, ordering and Gronwall checks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .errors import (HypothesisUnmet, NoSupersolution, RegimeMismatch, SearchFailed,
                     WindowEmpty)
from .problem import (BoundaryKernel, InitialData, ModelParams, Problem, normal_derivatives,
                      trapezoid_weights)

KINDS = ("exp_super", "tgamma_sub", "boundary_layer_sub", "constant_sub", "numeric")


@dataclass(frozen=True)
class SubSuperSpec:
    """A candidate function u(x, t) with its validity window.

    ``func(x, t)`` returns an array of shape (len(t), len(x)).
    ``memory_offset`` is the prehistory contribution int_0^{t_start} u^q
    used when the window does not start at 0.
    """

    kind: str
    window: tuple
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    memory_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown candidate kind {self.kind!r}")
        t0, t1 = self.window
        if not t1 > t0:
            raise WindowEmpty(f"empty window {self.window}")

    def evaluate(self, x, t) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, float))
        t = np.atleast_1d(np.asarray(t, float))
        return np.asarray(self.func(x, t), float).reshape(t.size, x.size)


def constant_spec(value: float, window=(0.0, 1.0), kind="numeric") -> SubSuperSpec:
    return SubSuperSpec(kind, tuple(window),
                        lambda x, t: np.full((t.size, x.size), float(value)),
                        {"value": float(value)})


def numeric_spec(times: np.ndarray, x: np.ndarray, values: np.ndarray) -> SubSuperSpec:
    """Wrap tabulated values (time, space), interpolated linearly in both variables."""
    times = np.asarray(times, float)
    xs = np.asarray(x, float)
    vals = np.asarray(values, float)

    def func(xq, tq):
        idx = np.clip(np.searchsorted(times, tq, side="right") - 1, 0, times.size - 2)
        t0, t1 = times[idx], times[idx + 1]
        wgt = np.clip((tq - t0) / (t1 - t0), 0.0, 1.0)[:, None]
        rows = (1 - wgt) * vals[idx] + wgt * vals[idx + 1]
        if xq.size == xs.size and np.allclose(xq, xs, rtol=0, atol=1e-14):
            return rows
        return np.array([np.interp(xq, xs, r) for r in rows])

    return SubSuperSpec("numeric", (float(times[0]), float(times[-1])), func,
                        {"snapshots": int(times.size)})


def trajectory_spec(traj) -> SubSuperSpec:
    return numeric_spec(traj.times, traj.x, traj.values)


# ---------------------------------------------------------------------------
# residuals


@dataclass
class ResidualReport:
    t: np.ndarray
    x: np.ndarray
    interior: np.ndarray        # (nt-1, nx-2), rows t[1:], interior nodes
    boundary: np.ndarray        # (nt-1, 2)
    initial: np.ndarray         # (nx,)
    tolerances: dict
    verdict: str

    @property
    def is_super(self) -> bool:
        return self.verdict in ("supersolution", "both")

    @property
    def is_sub(self) -> bool:
        return self.verdict in ("subsolution", "both")

    def stats(self) -> dict:
        out = {}
        for name in ("interior", "boundary", "initial"):
            arr = getattr(self, name)
            out[name] = {"min": float(arr.min()) if arr.size else 0.0,
                         "max": float(arr.max()) if arr.size else 0.0,
                         "tolerance": self.tolerances[name]}
        return out

    def worst(self, want: str = "sub") -> dict:
        """Location of the largest violation of the requested inequality."""
        sign = 1.0 if want == "sub" else -1.0
        best = {"field": None, "value": 0.0}
        fields = {
            "interior": (self.interior, lambda i, j: (self.t[1 + i], self.x[1 + j])),
            "boundary": (self.boundary, lambda i, j: (self.t[1 + i], self.x[0] if j == 0 else self.x[-1])),
            "initial": (self.initial[None, :], lambda i, j: (self.t[0], self.x[j])),
        }
        for name, (arr, loc) in fields.items():
            if arr.size == 0:
                continue
            excess = sign * arr - self.tolerances[name]
            i, j = np.unravel_index(int(np.argmax(excess)), arr.shape)
            if best["field"] is None or excess[i, j] > best["excess"]:
                t, x = loc(i, j)
                best = {"field": name, "value": float(arr[i, j]), "excess": float(excess[i, j]),
                        "t": float(t), "x": float(x)}
        return best

    def as_dict(self) -> dict:
        return {"schema_version": 1, "verdict": self.verdict, "fields": self.stats(),
                "worst_sub_violation": self.worst("sub"),
                "worst_super_violation": self.worst("super")}


def _pow(u, e):
    return np.power(np.maximum(u, 0.0), e)


def check_candidate(spec: SubSuperSpec, problem: Problem, x: Optional[np.ndarray] = None,
                    t: Optional[np.ndarray] = None, tolerance: float = 1e-4,
                    epsilon: float = 0.0, initial: Optional[np.ndarray] = None,
                    scale_floor: float = 1.0) -> ResidualReport:
    """Residuals of the three defining inequalities on a check grid.

    The interior residual is ``u_t - u_xx - a u^p I + b u^m - b eps^m`` with
    ``I`` accumulated from the candidate itself. Each field is judged against
    ``tolerance * max(scale_floor, field magnitude)``; pass ``scale_floor=0``
    for purely relative checks on small candidates.
    """
    prm = problem.params
    t0, t1 = spec.window
    x = problem.domain.x if x is None else np.asarray(x, float)
    if t is None:
        t = np.linspace(t0, t1, 101)
    t = np.asarray(t, float)
    tw = t[(t >= t0 - 1e-15) & (t <= t1 + 1e-15)]
    if tw.size < 3:
        raise WindowEmpty(f"check grid has {tw.size} points inside window {spec.window}")
    h = x[1] - x[0]
    U = spec.evaluate(x, tw)

    mem = spec.memory_offset + cumulative_trapezoid(_pow(U, prm.q), tw, axis=0, initial=0.0)
    u_t = np.gradient(U, tw, axis=0, edge_order=2)[1:, 1:-1]
    u_xx = (U[1:, 2:] - 2 * U[1:, 1:-1] + U[1:, :-2]) / (h * h)
    gain = prm.a * _pow(U, prm.p)[1:, 1:-1] * mem[1:, 1:-1]
    loss = prm.b * _pow(U, prm.m)[1:, 1:-1]
    reg = prm.b * epsilon ** prm.m if epsilon > 0 else 0.0
    interior = u_t - u_xx - gain + loss - reg
    int_scale = max(np.abs(u_t).max(), np.abs(u_xx).max(), np.abs(gain).max(), np.abs(loss).max(), reg)

    w = trapezoid_weights(x.size, h)
    bnd = np.empty((tw.size - 1, 2))
    bnd_scale = 0.0
    for i, (ti, row) in enumerate(zip(tw[1:], U[1:])):
        dl, dr = normal_derivatives(row, h)
        fl, fr = problem.kernel.integrate(_pow(row, prm.l), x, w, ti)
        bnd[i] = (dl - fl, dr - fr)
        bnd_scale = max(bnd_scale, abs(dl), abs(dr), fl, fr)

    if initial is None:
        initial = problem.initial.values
        if initial.size != x.size:
            initial = np.interp(x, problem.domain.x, initial)
    initial = np.asarray(initial, float)
    init = U[0] - initial
    init_scale = max(np.abs(U[0]).max(), np.abs(initial).max())

    # differencing roundoff floor, so exact-zero fields are not judged at 1e-30
    umax = float(np.abs(U).max())
    eps_m = np.finfo(float).eps
    floors = {"interior": 64 * eps_m * umax / (h * h), "boundary": 64 * eps_m * umax / h, "initial": 0.0}
    tols = {}
    for name, s in (("interior", int_scale), ("boundary", bnd_scale), ("initial", init_scale)):
        scale = max(scale_floor, s)
        tols[name] = max(tolerance * scale if scale > 0 else tolerance, floors[name])
    fields = {"interior": interior, "boundary": bnd, "initial": init}
    sup = all(f.min() >= -tols[n] for n, f in fields.items() if f.size)
    sub = all(f.max() <= tols[n] for n, f in fields.items() if f.size)
    verdict = "both" if sup and sub else "supersolution" if sup else "subsolution" if sub else "neither"
    return ResidualReport(tw, x, interior, bnd, init, tols, verdict)


# ---------------------------------------------------------------------------
# constructors


def exp_growth_rate(psi_min: float, psi_max: float, lap_over_psi: float, params: ModelParams) -> float:
    """alpha = max(1/q, a e sup psi^(p+q-1) + sup (psi''/psi))."""
    e = params.p + params.q - 1.0
    sup_pow = max(psi_min ** e, psi_max ** e)
    return max(1.0 / params.q, params.a * math.e * sup_pow + lap_over_psi)


def exp_valid_time(alpha: float, params: ModelParams) -> float:
    return min(1.0 / ((params.p + params.q) * alpha), 1.0 / alpha)


def build_exp_supersolution(problem: Problem, u0eps: Optional[InitialData] = None,
                            T_guess: float = 1.0, s_max: float = 1e6) -> SubSuperSpec:
    """w(x, t) = exp(alpha t) psi(x) with psi = C (1 + s (x/L - 1/2)^2).

    ``s`` is doubled from 1 until the outward slope ``C s / L`` dominates
    ``K max(1, e^(l-1)) int psi^l``, K being the sampled sup of the kernel.
    """
    prm = problem.params
    dom = problem.domain
    L = dom.L
    u0eps = u0eps or problem.initial
    C = max(float(np.max(u0eps.values)), 1.0)
    K = problem.kernel.sup(dom.x, T_guess)
    factor = K * max(1.0, math.exp(prm.l - 1.0))

    def integral(s):
        val, _ = quad(lambda y: (C * (1.0 + s * (y / L - 0.5) ** 2)) ** prm.l, 0.0, L)
        return val

    s = 1.0
    while C * s / L < factor * integral(s):
        s *= 2.0
        if s > s_max:
            raise NoSupersolution(f"no admissible slope s <= {s_max:g} (K={K:g}, l={prm.l:g})")
    lap_over_psi = 2.0 * s / (L * L)       # psi''/psi is largest where psi = C
    alpha = exp_growth_rate(C, C * (1.0 + 0.25 * s), lap_over_psi, prm)
    T_valid = min(exp_valid_time(alpha, prm), T_guess)

    def func(x, t):
        psi = C * (1.0 + s * (x / L - 0.5) ** 2)
        return np.exp(alpha * t)[:, None] * psi[None, :]

    return SubSuperSpec("exp_super", (0.0, T_valid), func,
                        {"C": C, "s": s, "alpha": alpha, "T_valid": T_valid, "K": K})


def tgamma_exponent_bound(params: ModelParams) -> float:
    pq = params.p + params.q
    return max(2.0 / (1.0 - pq), 1.0 / (params.m - pq))


def tgamma_terms(t, gamma: float, params: ModelParams):
    """(u_t, a u^p I, b u^m) for u = t^gamma, with I = t^(q gamma + 1)/(q gamma + 1)."""
    t = np.asarray(t, float)
    prm = params
    ut = gamma * t ** (gamma - 1.0)
    gain = prm.a * t ** ((prm.p + prm.q) * gamma + 1.0) / (prm.q * gamma + 1.0)
    loss = prm.b * t ** (prm.m * gamma)
    return ut, gain, loss


def tgamma_residual(t, gamma: float, params: ModelParams):
    ut, gain, loss = tgamma_terms(t, gamma, params)
    return ut - gain + loss


def build_tgamma_subsolution(params: ModelParams, safety: float = 1.2, margin: float = 0.1) -> SubSuperSpec:
    """u = t^gamma with gamma = safety * bound; window (0, tau_valid].

    ``tau_valid`` is the largest t (found by bisection in log t) for which
    ``u_t + b u^m <= (1 - margin) a u^p I``.
    """
    if not params.nonuniq_tgamma:
        raise RegimeMismatch(f"need p + q < min(1, m); got p+q={params.p + params.q:g}, m={params.m:g}")
    gamma = safety * tgamma_exponent_bound(params)

    def holds(t):
        ut, gain, loss = tgamma_terms(t, gamma, params)
        return ut + loss <= (1.0 - margin) * gain

    lo = 1e-3
    while not holds(lo):
        lo *= 0.1
        if lo < 1e-300:
            raise RegimeMismatch("no time window where the t^gamma inequality holds")
    hi = lo
    while holds(hi):
        hi *= 10.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    tau = lo
    return SubSuperSpec("tgamma_sub", (0.0, tau),
                        lambda x, t: np.repeat((t ** gamma)[:, None], x.size, axis=1),
                        {"gamma": gamma, "bound": tgamma_exponent_bound(params), "tau_valid": tau})


def constant_sub_level(eps: float, tau: float, params: ModelParams) -> float:
    return min(eps, (params.a * tau * eps ** params.q / params.b) ** (1.0 / (params.m - params.p)))


def build_constant_subsolution(eps: float, tau: float, params: ModelParams,
                               T0: Optional[float] = None) -> SubSuperSpec:
    """Constant level usable after time tau once the solution is known to exceed eps."""
    if not params.p < params.m < 1:
        raise RegimeMismatch(f"need p < m < 1; got p={params.p:g}, m={params.m:g}")
    if not (eps > 0 and tau > 0):
        raise RegimeMismatch("eps and tau must be positive")
    level = constant_sub_level(eps, tau, params)
    T0 = 2.0 * tau if T0 is None else T0
    spec = constant_spec(level, (tau, T0), kind="constant_sub")
    return SubSuperSpec("constant_sub", (tau, T0), spec.func,
                        {"eps1": level, "eps": eps, "tau": tau},
                        memory_offset=tau * eps ** params.q)


def boundary_layer_exponents(params: ModelParams) -> tuple[float, float]:
    """Midpoints of the admissible (alpha, beta) ranges; lower bound + 1 when unbounded."""
    l, m = params.l, params.m
    if m < 1:
        alpha = 0.5 * (1.0 / (1.0 - l) + 1.0 / (1.0 - m))
        beta = 0.5 * (2.0 + 2.0 / (1.0 - m))
    else:
        alpha = 1.0 / (1.0 - l) + 1.0
        beta = 3.0
    return alpha, beta


def kernel_positive_at_boundary(kernel: BoundaryKernel, L: float, t0: float,
                                samples: int = 41) -> Optional[float]:
    """Some boundary point y0 with k(x_b, y0, t0) > 0 at both ends, else None."""
    if kernel.is_zero:
        return None
    for y0 in (0.0, L):
        y = np.array([y0])
        if all(float(kernel(side, y, t0)[0]) > 0 for side in ("left", "right")):
            return y0
    return None


def boundary_layer_profile(A, xi0, alpha, beta, t0, L):
    def func(x, t):
        tau = np.maximum(t - t0, 0.0)[:, None]
        s = np.minimum(x, L - x)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(tau > 0, xi0 - s / np.sqrt(np.where(tau > 0, tau, 1.0)), 0.0)
        return np.where(tau > 0, A * tau ** alpha * np.maximum(z, 0.0) ** beta, 0.0)
    return func


def build_boundary_layer_subsolution(problem: Problem, t0: float = 0.0, T_guess: float = 1.0,
                                     check_nodes: int = 1601, check_times: int = 81,
                                     tolerance: float = 1e-2) -> SubSuperSpec:
    """Search (A, xi0, T0) for a verified boundary-layer subsolution.

    Candidates are tried from the largest amplitude down; each is accepted
    only if :func:`check_candidate` with a relative tolerance returns a
    subsolution verdict on (t0, t0 + T0].
    """
    prm = problem.params
    L = problem.domain.L
    if not prm.nonuniq_boundary:
        raise RegimeMismatch(f"need l < min(1, m); got l={prm.l:g}, m={prm.m:g}")
    if kernel_positive_at_boundary(problem.kernel, L, t0) is None:
        raise RegimeMismatch("kernel is not positive at a boundary point for both ends")
    alpha, beta = boundary_layer_exponents(prm)
    delta = 0.2 * L
    T_cap = min(T_guess - t0, delta * delta)
    x = np.linspace(0.0, L, check_nodes)
    zero = np.zeros_like(x)
    best = None
    for A, xi0, T0 in itertools.product(np.logspace(0, -4, 9), (1.0, 0.5, 0.2, 0.1),
                                         T_cap * np.array([1.0, 0.25, 0.0625])):
        func = boundary_layer_profile(A, xi0, alpha, beta, t0, L)
        spec = SubSuperSpec("boundary_layer_sub", (t0, t0 + T0), func,
                            {"A": float(A), "xi0": float(xi0), "T0": float(T0),
                             "alpha": alpha, "beta": beta, "t0": t0})
        t = np.linspace(t0, t0 + T0, check_times)
        rep = check_candidate(spec, problem, x, t, tolerance=tolerance, initial=zero, scale_floor=0.0)
        if rep.is_sub:
            return spec
        w = rep.worst("sub")
        if best is None or w["excess"] < best[1]["excess"]:
            best = (spec, w)
    raise SearchFailed("no verified boundary-layer subsolution in the search window",
                       best={"params": best[0].params, "worst": best[1]})


# ---------------------------------------------------------------------------
# ordering, Gronwall, positivity


@dataclass
class OrderingReport:
    ordered: bool
    violations: list
    max_excess: float
    tolerance: float
    n_points: int

    def as_dict(self) -> dict:
        return {"schema_version": 1, "ordered": self.ordered, "max_excess": self.max_excess,
                "tolerance": self.tolerance, "n_points": self.n_points,
                "n_violations": len(self.violations), "violations": self.violations[:50]}


def positivity_proviso_needed(params: ModelParams) -> bool:
    return min(params.q, params.l) < 1 or 0 < params.p < 1


def compare(lower: SubSuperSpec, upper: SubSuperSpec, x: np.ndarray, t: np.ndarray,
            tolerance: float = 1e-6, params: Optional[ModelParams] = None) -> OrderingReport:
    """Check lower <= upper + tolerance on the grid restricted to both windows."""
    t = np.asarray(t, float)
    lo = max(lower.window[0], upper.window[0])
    hi = min(lower.window[1], upper.window[1])
    tw = t[(t >= lo - 1e-15) & (t <= hi + 1e-15)]
    if tw.size == 0:
        raise WindowEmpty(f"windows {lower.window} and {upper.window} do not overlap on the grid")
    U_lo = lower.evaluate(x, tw)
    U_hi = upper.evaluate(x, tw)
    if params is not None and positivity_proviso_needed(params):
        if not (U_lo.min() > 0 or U_hi.min() > 0):
            raise HypothesisUnmet("neither candidate is bounded below by a positive constant")
    excess = U_lo - U_hi
    bad = np.argwhere(excess > tolerance)
    violations = [{"t": float(tw[i]), "x": float(x[j]), "excess": float(excess[i, j])} for i, j in bad]
    return OrderingReport(len(violations) == 0, violations, float(excess.max()), tolerance, excess.size)


def gronwall_constant(M: float, params: ModelParams, T0: float, boundary_measure: float = 2.0) -> float:
    prm = params
    return prm.a * (prm.p + prm.q) * M ** (prm.p + prm.q - 1.0) * T0 + prm.l * boundary_measure * M ** prm.l


@dataclass
class GronwallReport:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    constant: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.lhs <= self.rhs))

    @property
    def min_margin(self) -> float:
        return float(np.min(self.rhs - self.lhs))

    def as_dict(self) -> dict:
        return {"schema_version": 1, "holds": self.holds, "constant": self.constant,
                "min_margin": self.min_margin, "max_lhs": float(self.lhs.max())}


def positive_part_integral(diff: np.ndarray, x: np.ndarray) -> np.ndarray:
    """int (diff)_+ dx per row, trapezoid."""
    w = trapezoid_weights(x.size, x[1] - x[0])
    return np.maximum(diff, 0.0) @ w


def gronwall_bound(t: np.ndarray, w_plus: np.ndarray, M: float, params: ModelParams, eps: float,
                   T0: float, domain) -> GronwallReport:
    """Envelope (int w+(0) + eps^m b T0 |Omega|) exp(C t) with |boundary| = 2."""
    t = np.asarray(t, float)
    w_plus = np.asarray(w_plus, float)
    C = gronwall_constant(M, params, T0, domain.boundary_measure)
    reg = eps ** params.m * params.b * T0 * domain.measure if eps > 0 else 0.0
    rhs = (w_plus[0] + reg) * np.exp(C * t)
    return GronwallReport(t, w_plus, rhs, C)


@dataclass
class PositivityReport:
    hypothesis: Optional[str]
    times: np.ndarray
    minima: np.ndarray
    positive: bool

    def as_dict(self) -> dict:
        return {"schema_version": 1, "hypothesis": self.hypothesis, "positive": self.positive,
                "min_over_window": float(self.minima.min()) if self.minima.size else None}


def positivity_check(traj, params: ModelParams, u0: InitialData,
                     t_min: float = 0.0, t_max: Optional[float] = None) -> PositivityReport:
    """Minimum over all nodes per snapshot with t in (t_min, t_max].

    Raises :class:`HypothesisUnmet` when the exponents fall in neither
    branch (m >= 1, or p < m < 1). The data-side conditions are recorded in
    ``hypothesis`` and a failed one is reported as ``None``.
    """
    if not (params.m >= 1 or params.p < params.m < 1):
        raise HypothesisUnmet(f"positivity needs m >= 1 or p < m < 1 (p={params.p:g}, m={params.m:g})")
    vals = np.asarray(u0.values)
    if params.m >= 1 and np.any(vals > 0):
        hyp = "m>=1, u0 not identically zero"
    elif params.p < params.m < 1 and np.all(vals > 0):
        hyp = "p<m<1, u0 positive"
    else:
        hyp = None
    t_max = traj.times[-1] if t_max is None else t_max
    sel = (traj.times > t_min) & (traj.times <= t_max + 1e-12)
    if t_min > 0:
        sel |= np.isclose(traj.times, t_min)
    minima = traj.values[sel].min(axis=1)
    return PositivityReport(hyp, traj.times[sel], minima, bool(minima.size and np.all(minima > 0)))
