"""Method-of-lines IMEX solver with a Volterra memory accumulator.

Diffusion is advanced by backward Euler (tridiagonal solve); the reaction
``a u^p I - b u^m + b eps^m`` and the nonlocal boundary flux are frozen at the
start of the step. The flux enters through ghost nodes,

    u[-1] = u[1] + 2 h F_left,     u[N] = u[N-2] + 2 h F_right,

which with the outward-normal convention gives a second-order Neumann closure.
The memory I(x, t) = int_0^t u^q is accumulated by the trapezoid rule once the
new state is known.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import Blowup, InvalidParameter, NegativeState, StepRejected
from .problem import BoundaryKernel, Domain1D, ModelParams, Problem, compatibility_residual

log = logging.getLogger(__name__)

CLAMP_POLICIES = ("clamp_to_zero_and_count", "error_on_negative")
MIN_DT = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-4
    T_final: float = 1.0
    epsilon: float = 0.0
    clamp_policy: str = "clamp_to_zero_and_count"
    snapshot_stride: int = 1
    adaptive: bool = False
    blowup_cap: float = 1e8

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter("dt", self.dt, "must be > 0")
        if not self.T_final > 0:
            raise InvalidParameter("T_final", self.T_final, "must be > 0")
        if not 0 <= self.epsilon < 1:
            raise InvalidParameter("epsilon", self.epsilon, "must lie in [0, 1)")
        if self.clamp_policy not in CLAMP_POLICIES:
            raise InvalidParameter("clamp_policy", self.clamp_policy, f"one of {CLAMP_POLICIES}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise InvalidParameter("snapshot_stride", self.snapshot_stride, "must be >= 1")


@dataclass(frozen=True)
class MemoryState:
    """Per-node trapezoid accumulator of int_0^t u^q and the cached u^q."""

    I: np.ndarray
    uq: np.ndarray

    @classmethod
    def initial(cls, u0: np.ndarray, q: float) -> "MemoryState":
        return cls(np.zeros_like(u0, dtype=float), np.power(u0, q))


def memory_update(mem: MemoryState, u_prev: np.ndarray, u_new: np.ndarray, q: float, dt: float) -> MemoryState:
    if not dt > 0:
        raise InvalidParameter("dt", dt, "must be > 0")
    uq_prev = np.power(u_prev, q)
    uq_new = np.power(u_new, q)
    return MemoryState(mem.I + 0.5 * dt * (uq_prev + uq_new), uq_new)


def boundary_flux(u: np.ndarray, k: BoundaryKernel, t: float, params: ModelParams,
                  dom: Domain1D) -> tuple[float, float]:
    """Trapezoid values of int k(x_b, y, t) u(y)^l dy at the left and right ends."""
    return k.integrate(np.power(u, params.l), dom.x, dom.trapezoid_weights(), t)


def source_term(u: np.ndarray, I: np.ndarray, params: ModelParams, eps: float = 0.0) -> np.ndarray:
    s = params.a * np.power(u, params.p) * I - params.b * np.power(u, params.m)
    if eps > 0:
        s = s + params.b * eps ** params.m
    return s


def stability_dt(u: np.ndarray, I: np.ndarray, params: ModelParams) -> float:
    """Explicit-source step guard 0.1 / (b m U^(m-1) + a (p+q) U^(p+q-1) (1 + I_max))."""
    umax = float(np.max(u))
    if umax <= 0:
        return math.inf
    pq = params.p + params.q
    rate = params.b * params.m * umax ** (params.m - 1.0)
    rate += params.a * pq * umax ** (pq - 1.0) * (1.0 + float(np.max(I)))
    return math.inf if rate <= 0 else 0.1 / rate


def _implicit_matrix(n: int, h: float, dt: float) -> np.ndarray:
    """Banded storage of I - dt*A for the ghost-node Neumann Laplacian A."""
    r = dt / (h * h)
    ab = np.zeros((3, n))
    ab[0, 1:] = -r
    ab[0, 1] = -2.0 * r
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r
    ab[2, -2] = -2.0 * r
    return ab


@dataclass(frozen=True)
class SolverState:
    u: np.ndarray
    memory: MemoryState
    t: float
    clamp_events: int = 0
    dt_halvings: int = 0


def _advance(state: SolverState, dt: float, problem: Problem, eps: float) -> np.ndarray:
    dom = problem.domain
    u = state.u
    rhs = u + dt * source_term(u, state.memory.I, problem.params, eps)
    fl, fr = boundary_flux(u, problem.kernel, state.t, problem.params, dom)
    rhs[0] += 2.0 * dt * fl / dom.h
    rhs[-1] += 2.0 * dt * fr / dom.h
    return solve_banded((1, 1), _implicit_matrix(dom.N, dom.h, dt), rhs,
                        overwrite_b=True, check_finite=False)


def _accept(state: SolverState, u_new: np.ndarray, dt: float, q: float, **counters) -> SolverState:
    mem = memory_update(state.memory, state.u, u_new, q, dt)
    return replace(state, u=u_new, memory=mem, t=state.t + dt, **counters)


def step(state: SolverState, cfg: SolverConfig, problem: Problem, dt: Optional[float] = None) -> SolverState:
    """Advance by ``dt`` (default ``cfg.dt``); adaptive mode may sub-step."""
    dt = cfg.dt if dt is None else dt
    q = problem.params.q
    if not cfg.adaptive:
        u_new = _advance(state, dt, problem, cfg.epsilon)
        neg = u_new < 0
        clamps = state.clamp_events
        if np.any(neg):
            if cfg.clamp_policy == "error_on_negative":
                raise NegativeState(f"negative value {u_new.min():.3e} at t={state.t + dt:.6g}")
            clamps += int(np.count_nonzero(neg))
            u_new[neg] = 0.0
        return _accept(state, u_new, dt, q, clamp_events=clamps)

    remaining = dt
    sub = min(dt, stability_dt(state.u, state.memory.I, problem.params))
    halvings = state.dt_halvings
    # a guard reduction is counted in units of halvings
    if sub < dt:
        halvings += max(1, int(math.ceil(math.log2(dt / sub))))
    while remaining > 1e-15 * dt:
        h = min(sub, remaining)
        u_new = _advance(state, h, problem, cfg.epsilon)
        if np.any(u_new < 0):
            sub *= 0.5
            halvings += 1
            if sub < MIN_DT:
                raise StepRejected(f"dt fell below {MIN_DT} at t={state.t:.6g}")
            continue
        state = _accept(state, u_new, h, q, dt_halvings=halvings)
        remaining -= h
        sub = min(sub, stability_dt(state.u, state.memory.I, problem.params))
    return state


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray
    memory: np.ndarray
    x: np.ndarray
    clamp_events: int = 0
    dt_halvings: int = 0
    status: str = "completed"
    problem: Optional[Problem] = None
    config: Optional[SolverConfig] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.times, self.values, self.memory, self.x):
            arr.setflags(write=False)

    def at(self, t: float) -> np.ndarray:
        """Snapshot nearest to ``t``."""
        return self.values[int(np.argmin(np.abs(self.times - t)))]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def mass(self) -> np.ndarray:
        w = np.full(self.x.size, self.x[1] - self.x[0])
        w[0] = w[-1] = 0.5 * w[1]
        return self.values @ w

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "status": self.status,
            "clamp_events": self.clamp_events,
            "dt_halvings": self.dt_halvings,
            "snapshots": [
                {"t": float(t), "min": float(v.min()), "max": float(v.max())}
                for t, v in zip(self.times, self.values)
            ],
        }

    def write_csv(self, path) -> None:
        n_t, n_x = self.values.shape
        table = np.column_stack([
            np.repeat(self.times, n_x),
            np.tile(self.x, n_t),
            self.values.ravel(),
            self.memory.ravel(),
        ])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header="t,x,u,I", comments="")

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def solve(problem: Problem, cfg: SolverConfig) -> Trajectory:
    """Integrate from t = 0 to ``cfg.T_final``.

    With ``cfg.epsilon > 0`` the regularized problem (source ``+ b eps^m``) is
    solved and the initial data must already be lifted to >= eps.
    A step rejection ends the run early with ``status = "step_rejected"``;
    exceeding ``cfg.blowup_cap`` raises :class:`Blowup` carrying the partial run.
    """
    params, dom = problem.params, problem.domain
    u0 = np.array(problem.initial.values, dtype=float)
    if cfg.epsilon > 0:
        if u0.min() < cfg.epsilon * (1.0 - 1e-12):
            raise InvalidParameter("initial", float(u0.min()),
                                   "regularized runs need initial data >= epsilon")
    else:
        rep = compatibility_residual(problem.initial, problem.kernel, params, dom, tolerance=1e-4)
        if not rep.passed:
            log.warning("initial data violates the compatibility condition: %s", rep.as_dict())
    if not cfg.adaptive:
        guard = stability_dt(u0, np.zeros_like(u0), params)
        if cfg.dt > guard:
            log.warning("dt=%g exceeds the explicit source guard %g at t=0", cfg.dt, guard)

    n_steps = max(1, int(math.ceil(cfg.T_final / cfg.dt - 1e-9)))
    state = SolverState(u0, MemoryState.initial(u0, params.q), 0.0)
    times, snaps, mems = [0.0], [u0.copy()], [state.memory.I.copy()]
    status = "completed"

    def build(status):
        return Trajectory(np.array(times), np.array(snaps), np.array(mems), dom.x,
                          state.clamp_events, state.dt_halvings, status, problem, cfg)

    for n in range(1, n_steps + 1):
        t_target = min(n * cfg.dt, cfg.T_final)
        try:
            state = step(state, cfg, problem, t_target - state.t)
        except StepRejected:
            log.warning("step rejected at t=%g", state.t)
            status = "step_rejected"
            break
        # pin the clock to the nominal grid to avoid drift
        state = replace(state, t=t_target)
        if np.max(state.u) > cfg.blowup_cap:
            times.append(state.t)
            snaps.append(state.u.copy())
            mems.append(state.memory.I.copy())
            traj = build("blowup")
            raise Blowup(f"max u exceeded {cfg.blowup_cap:g} at t={state.t:.6g}", traj)
        if n % cfg.snapshot_stride == 0 or n == n_steps:
            times.append(state.t)
            snaps.append(state.u.copy())
            mems.append(state.memory.I.copy())
    else:
        status = "completed"
    if status == "step_rejected" and times[-1] != state.t:
        times.append(state.t)
        snaps.append(state.u.copy())
        mems.append(state.memory.I.copy())
    return build(status)
