"""Neumann heat kernel on [0, L] and the Picard map built on it.

Two representations of the kernel are used:

* cosine eigenexpansion
  ``G = 1/L + sum_j (2/L) exp(-(j pi / L)^2 t) cos(j pi x / L) cos(j pi y / L)``,
  accurate and cheap for moderate/large t;
* method of images, ``G = sum_n Phi(x - y + 2nL, t) + Phi(x + y + 2nL, t)``
  with the free-space heat kernel ``Phi``, used below ``t_switch``.

The Picard solver realizes the integral representation

    u(x,t) = int G(x,y;t) u0(y) dy
           + int_0^t int G(x,y;t-s) [a v^p int_0^s v^q + b (eps^m - u^m)] dy ds
           + sum_b int_0^t G(x, xi_b; t-s) int k(xi_b, y, s) v^l(y, s) dy ds

on a uniform space-time grid.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.special import erfc

from .errors import InvalidParameter, KernelEvalFailed, NoContraction, TimeTooSmall
from .problem import Problem, trapezoid_weights

log = logging.getLogger(__name__)

MIN_TIME = 1e-10


@dataclass(frozen=True)
class NeumannHeatKernel:
    L: float = 1.0
    tol: float = 1e-14
    K_max: int = 100_000
    n_images: int = 7
    t_switch: Optional[float] = None

    def __post_init__(self):
        if self.t_switch is None:
            object.__setattr__(self, "t_switch", 0.05 * (self.L / math.pi) ** 2)

    def n_modes(self, t: float) -> int:
        """Smallest mode count whose first dropped term is below ``tol``."""
        j = (self.L / math.pi) * math.sqrt(max(math.log(2.0 / (self.L * self.tol)), 0.0) / t)
        return min(int(math.ceil(j)) + 1, self.K_max)

    def eigen(self, x, y, t: float) -> np.ndarray:
        x = np.asarray(x, float)[..., None]
        y = np.asarray(y, float)[..., None]
        j = np.arange(1, self.n_modes(t) + 1)
        k = j * math.pi / self.L
        terms = np.exp(-k * k * t) * (np.cos(k * x) * np.cos(k * y))
        return 1.0 / self.L + (2.0 / self.L) * terms.sum(axis=-1)

    def images(self, x, y, t: float) -> np.ndarray:
        x = np.asarray(x, float)[..., None]
        y = np.asarray(y, float)[..., None]
        half = self.n_images // 2
        shifts = 2.0 * self.L * np.arange(-half, half + 1)
        c = 1.0 / math.sqrt(4.0 * math.pi * t)
        # |x - y| keeps G(x, y) and G(y, x) bitwise equal
        d1 = np.abs(x - y) + shifts
        d2 = x + y + shifts
        return c * (np.exp(-d1 * d1 / (4 * t)) + np.exp(-d2 * d2 / (4 * t))).sum(axis=-1)

    def __call__(self, x, y, t: float) -> np.ndarray:
        t = float(t)
        if not t >= MIN_TIME:
            raise TimeTooSmall(f"t={t:g} below {MIN_TIME:g}")
        out = self.images(x, y, t) if t < self.t_switch else self.eigen(x, y, t)
        if not np.all(np.isfinite(out)):
            raise KernelEvalFailed(f"non-finite kernel value at t={t:g}")
        return out

    def matrix(self, x: np.ndarray, t: float) -> np.ndarray:
        return self(x[:, None], x[None, :], t)

    def time_integral(self, x, xi: float, s: float) -> np.ndarray:
        """Exact ``int_0^s G(x, xi; r) dr`` from the image sum.

        Each free-space image integrates in closed form,
        ``int_0^s Phi(z, r) dr = sqrt(s/pi) exp(-z^2/4s) - |z|/2 erfc(|z|/(2 sqrt s))``,
        which removes the 1/sqrt(r) singularity at x = xi from the quadrature.
        """
        x = np.asarray(x, float)[..., None]
        if s <= 0:
            return np.zeros(x.shape[:-1])
        n = int(math.ceil((12.0 * math.sqrt(s) + 2.0 * self.L) / (2.0 * self.L))) + 1
        shifts = 2.0 * self.L * np.arange(-n, n + 1)
        total = 0.0
        for z in (x - xi + shifts, x + xi + shifts):
            az = np.abs(z)
            total = total + (math.sqrt(s / math.pi) * np.exp(-z * z / (4 * s))
                             - 0.5 * az * erfc(az / (2 * math.sqrt(s))))
        return np.asarray(total).sum(axis=-1)


def green_eval(kern: NeumannHeatKernel, x, y, t) -> np.ndarray:
    """Evaluate G(x, y; t); array ``t`` is handled elementwise."""
    if np.ndim(t) == 0:
        return kern(x, y, float(t))
    x, y, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(t, float))
    out = np.empty(t.shape)
    for idx in np.ndindex(t.shape):
        out[idx] = kern(x[idx], y[idx], t[idx])
    return out


def dump_kernel_table(kern: NeumannHeatKernel, x: np.ndarray, times, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "t", "G"])
        for t in times:
            g = kern.matrix(np.asarray(x, float), t)
            for i, xi in enumerate(x):
                for j, yj in enumerate(x):
                    w.writerow([repr(float(xi)), repr(float(yj)), repr(float(t)), repr(float(g[i, j]))])


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass(frozen=True)
class PicardConfig:
    N_g: int = 101
    M_g: int = 201
    T: float = 0.5
    max_iter: int = 200
    tol: float = 1e-8
    epsilon: float = 0.0
    stall_limit: int = 5

    def __post_init__(self):
        if self.N_g < 3 or self.M_g < 3:
            raise InvalidParameter("N_g/M_g", (self.N_g, self.M_g), "need at least 3 nodes")
        if not self.tol > 0:
            raise InvalidParameter("tol", self.tol, "must be > 0")
        if not self.T > 0:
            raise InvalidParameter("T", self.T, "must be > 0")

    @property
    def dt(self) -> float:
        return self.T / (self.M_g - 1)


@dataclass
class _Operators:
    """Kernel matrices reused across Picard sweeps (weights folded into y)."""

    x: np.ndarray
    t: np.ndarray
    w: np.ndarray
    lag: np.ndarray        # (M, N, N): lag[l] = G(x, y; l dt) * w(y), l >= 1
    half: np.ndarray       # G(x, y; dt/2) * w(y)
    bweights: np.ndarray   # (2, N, M-1): int over slice r of G(x, xi_b; s) ds


def build_operators(L: float, cfg: PicardConfig, kern: Optional[NeumannHeatKernel] = None) -> _Operators:
    kern = kern or NeumannHeatKernel(L)
    x = np.linspace(0.0, L, cfg.N_g)
    t = np.linspace(0.0, cfg.T, cfg.M_g)
    h, dt = x[1] - x[0], cfg.dt
    if math.sqrt(2 * 0.5 * dt) < 2 * h:
        log.warning("time step %.3g under-resolves the kernel on spacing %.3g", dt, h)
    w = trapezoid_weights(cfg.N_g, h)
    lag = np.zeros((cfg.M_g, cfg.N_g, cfg.N_g))
    for ell in range(1, cfg.M_g):
        lag[ell] = kern.matrix(x, ell * dt) * w
    half = kern.matrix(x, 0.5 * dt) * w
    bw = np.empty((2, cfg.N_g, cfg.M_g - 1))
    for b, xi in enumerate((0.0, L)):
        cum = np.stack([kern.time_integral(x, xi, r * dt) for r in range(cfg.M_g)], axis=1)
        bw[b] = np.diff(cum, axis=1)
    return _Operators(x, t, w, lag, half, bw)


def picard_apply(v: np.ndarray, u_prev: np.ndarray, problem: Problem, cfg: PicardConfig,
                 ops: Optional[_Operators] = None) -> np.ndarray:
    """One application of the integral map; arrays are (time, space)."""
    ops = ops or build_operators(problem.domain.L, cfg)
    # divergent iterates overflow; picard_solve reports them as NoContraction
    with np.errstate(over="ignore", invalid="ignore"):
        return _picard_terms(v, u_prev, problem, cfg, ops)


def _picard_terms(v, u_prev, problem, cfg, ops):
    prm = problem.params
    M, N = cfg.M_g, cfg.N_g
    dt = cfg.dt
    u0 = _initial_on(problem, ops.x)

    out = np.empty((M, N))
    out[0] = u0
    for n in range(1, M):
        out[n] = ops.lag[n] @ u0

    # interior source
    Iv = cumulative_trapezoid(np.power(v, prm.q), dx=dt, axis=0, initial=0.0)
    F = prm.a * np.power(v, prm.p) * Iv - prm.b * np.power(u_prev, prm.m)
    if cfg.epsilon > 0:
        F = F + prm.b * cfg.epsilon ** prm.m
    conv = np.zeros((M, N))
    for ell in range(1, M):
        conv[ell:] += F[: M - ell] @ ops.lag[ell].T
    interior = np.zeros((M, N))
    for n in range(1, M):
        if n >= 2:
            interior[n] = conv[n] - 0.5 * ops.lag[n] @ F[0] - 0.5 * ops.lag[1] @ F[n - 1]
        # last slice: kernel at half lag, source averaged
        interior[n] += ops.half @ (0.5 * (F[n - 1] + F[n]))
    out += dt * interior

    # boundary flux, product-integrated against the exact slice integrals of G
    if not problem.kernel.is_zero:
        vl = np.power(v, prm.l)
        phi = np.array([problem.kernel.integrate(vl[k], ops.x, ops.w, ops.t[k]) for k in range(M)])
        phi_avg = 0.5 * (phi[1:] + phi[:-1])          # (M-1, 2)
        for n in range(1, M):
            for b in range(2):
                out[n] += ops.bweights[b, :, :n][:, ::-1] @ phi_avg[:n, b]
    return out


def _initial_on(problem: Problem, x: np.ndarray) -> np.ndarray:
    dom = problem.domain
    vals = np.asarray(problem.initial.values)
    if dom.N == x.size:
        return vals.copy()
    return np.interp(x, dom.x, vals)


@dataclass
class PicardResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    increments: list = field(default_factory=list)
    converged: bool = False
    clamp_events: int = 0

    @property
    def iterations(self) -> int:
        return len(self.increments)

    def ratios(self) -> np.ndarray:
        inc = np.asarray(self.increments)
        return inc[1:] / inc[:-1] if inc.size > 1 else np.array([])

    def summary(self) -> dict:
        return {
            "schema_version": 1,
            "iterations": self.iterations,
            "converged": self.converged,
            "increments": [float(v) for v in self.increments],
            "clamp_events": self.clamp_events,
            "max_u": float(self.u.max()),
            "min_u": float(self.u.min()),
        }


def picard_solve(problem: Problem, cfg: PicardConfig, kern: Optional[NeumannHeatKernel] = None) -> PicardResult:
    """Iterate the integral map from the time-constant extension of the initial data."""
    ops = build_operators(problem.domain.L, cfg, kern)
    u = np.tile(_initial_on(problem, ops.x), (cfg.M_g, 1))
    increments: list[float] = []
    stalls = 0
    clamps = 0
    for _ in range(cfg.max_iter):
        new = picard_apply(u, u, problem, cfg, ops)
        neg = new < 0
        if np.any(neg):
            clamps += int(np.count_nonzero(neg))
            new[neg] = 0.0
        inc = float(np.max(np.abs(new - u)))
        if not math.isfinite(inc):
            raise NoContraction("iteration produced non-finite values", increments)
        if increments and inc >= increments[-1]:
            stalls += 1
        else:
            stalls = 0
        increments.append(inc)
        u = new
        if inc < cfg.tol:
            return PicardResult(ops.t, ops.x, u, increments, True, clamps)
        if stalls >= cfg.stall_limit:
            raise NoContraction(
                f"increments failed to decrease for {stalls} consecutive iterations "
                f"(last {inc:.3e}); T={cfg.T:g} is likely too large", increments)
    return PicardResult(ops.t, ops.x, u, increments, False, clamps)
