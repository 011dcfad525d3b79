"""Problem definition: parameters, interval domain, boundary kernel, initial data.

The model solved throughout the package is

    u_t = u_xx + a u^p \\int_0^t u^q dtau - b u^m          on (0, L) x (0, T)
    du/dnu = \\int_0^L k(x_b, y, t) u^l(y, t) dy          at x_b in {0, L}
    u(x, 0) = u0(x)

with the outward normal derivative du/dnu = -u_x at x = 0 and +u_x at x = L.
Powers follow the convention 0**0 = 1 and 0**p = 0 for p > 0, which is what
numpy does for nonnegative bases.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidParameter, NoCompatibleData

SIDES = ("left", "right")

#: corrector support as a fraction of L
CORRECTOR_FRACTION = 0.2


def _side_index(side) -> int:
    if side in (0, "left"):
        return 0
    if side in (1, "right"):
        return 1
    raise ValueError(f"unknown boundary side {side!r}")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class RegimeSummary:
    uniqueness_regime: bool
    nonuniq_tgamma: bool
    nonuniq_boundary: bool


@dataclass(frozen=True)
class ModelParams:
    a: float = 1.0
    b: float = 1.0
    p: float = 1.0
    q: float = 1.0
    m: float = 1.0
    l: float = 1.0

    def __post_init__(self):
        validate_params(self)

    @property
    def uniqueness_regime(self) -> bool:
        return min(self.p, self.q, self.l) >= 1

    @property
    def nonuniq_tgamma(self) -> bool:
        return self.p + self.q < min(1.0, self.m)

    @property
    def nonuniq_boundary(self) -> bool:
        return self.l < min(1.0, self.m)

    def regime(self) -> RegimeSummary:
        return RegimeSummary(self.uniqueness_regime, self.nonuniq_tgamma, self.nonuniq_boundary)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("a", "b", "p", "q", "m", "l")}


def validate_params(params: ModelParams) -> RegimeSummary:
    """Reject inadmissible coefficients and return the regime flags.

    ``a, b, q, m, l`` must be strictly positive and ``p`` nonnegative.
    ``a`` or ``b`` may be exactly zero only through :func:`ModelParams.reduced`,
    which the pure-diffusion test cases use.
    """
    for name in ("a", "b", "q", "m", "l"):
        v = getattr(params, name)
        if not np.isfinite(v) or v <= 0:
            if name in ("a", "b") and v == 0 and getattr(params, "_allow_zero", False):
                continue
            raise InvalidParameter(name, v, "must be > 0")
    if not np.isfinite(params.p) or params.p < 0:
        raise InvalidParameter("p", params.p, "must be >= 0")
    return RegimeSummary(
        min(params.p, params.q, params.l) >= 1,
        params.p + params.q < min(1.0, params.m),
        params.l < min(1.0, params.m),
    )


class ReducedParams(ModelParams):
    """ModelParams that additionally admits a = 0 and/or b = 0.

    The degenerate coefficients fall outside the admissible class of the
    model but are useful oracles (pure heat equation, pure decay).
    """

    _allow_zero = True


def make_params(a=1.0, b=1.0, p=1.0, q=1.0, m=1.0, l=1.0) -> ModelParams:
    """Build parameters, falling back to :class:`ReducedParams` when a or b is 0."""
    cls = ReducedParams if (a == 0 or b == 0) else ModelParams
    return cls(a=float(a), b=float(b), p=float(p), q=float(q), m=float(m), l=float(l))


# ---------------------------------------------------------------------------
# domain


@dataclass(frozen=True)
class Domain1D:
    L: float = 1.0
    N: int = 101

    def __post_init__(self):
        if not self.L > 0:
            raise InvalidParameter("L", self.L, "must be > 0")
        if int(self.N) != self.N or self.N < 3:
            raise InvalidParameter("N", self.N, "need at least 3 nodes")

    @property
    def h(self) -> float:
        return self.L / (self.N - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.N)

    @property
    def measure(self) -> float:
        return self.L

    @property
    def boundary_measure(self) -> float:
        # counting measure on {0, L}
        return 2.0

    def trapezoid_weights(self) -> np.ndarray:
        return trapezoid_weights(self.N, self.h)


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def normal_derivatives(values: np.ndarray, h: float) -> tuple[float, float]:
    """Second-order one-sided outward normal derivatives at both ends."""
    v = np.asarray(values, dtype=float)
    left = -(-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    right = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    return float(left), float(right)


# ---------------------------------------------------------------------------
# boundary kernel


@dataclass(frozen=True)
class BoundaryKernel:
    """Nonnegative kernel k(x_b, y, t) for x_b in {left, right}.

    Use the ``zero``, ``constant``, ``separable`` and ``tabulated``
    constructors rather than the raw initializer.
    """

    kind: str
    kappa: float = 0.0
    phi: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eta: Optional[Callable[[float], float]] = None
    tables: tuple = ()
    description: str = ""

    @classmethod
    def zero(cls) -> "BoundaryKernel":
        return cls(kind="zero")

    @classmethod
    def constant(cls, kappa: float) -> "BoundaryKernel":
        if kappa < 0:
            raise InvalidParameter("kappa", kappa, "kernel must be nonnegative")
        if kappa == 0:
            return cls.zero()
        return cls(kind="constant", kappa=float(kappa))

    @classmethod
    def separable(cls, kappa, phi, eta=None, description="") -> "BoundaryKernel":
        """k = kappa * phi(y) * eta(t); both factors must be nonnegative."""
        if kappa < 0:
            raise InvalidParameter("kappa", kappa, "kernel must be nonnegative")
        return cls(kind="separable", kappa=float(kappa), phi=phi,
                   eta=eta if eta is not None else (lambda t: 1.0), description=description)

    @classmethod
    def tabulated(cls, y, t, left, right) -> "BoundaryKernel":
        """Bilinear interpolation of values on a (y, t) grid, one table per side.

        ``left`` and ``right`` have shape (len(y), len(t)). Queries outside the
        table raise instead of extrapolating.
        """
        y = np.asarray(y, float)
        t = np.asarray(t, float)
        tables = []
        for name, vals in (("left", left), ("right", right)):
            vals = np.asarray(vals, float)
            if vals.shape != (y.size, t.size):
                raise InvalidParameter(f"table[{name}]", vals.shape, "expected (len(y), len(t))")
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise InvalidParameter(f"table[{name}]", "negative", "kernel must be nonnegative")
            if t.size == 1:
                # constant in time: duplicate so the interpolator is 2-D
                tt = np.array([t[0], np.inf])
                vals = np.repeat(vals, 2, axis=1)
            else:
                tt = t
            tables.append(RegularGridInterpolator((y, tt), vals, bounds_error=True))
        return cls(kind="tabulated", tables=tuple(tables))

    def __call__(self, side, y, t: float) -> np.ndarray:
        y = np.asarray(y, float)
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "constant":
            return np.full_like(y, self.kappa)
        if self.kind == "separable":
            vals = self.kappa * np.asarray(self.phi(y), float) * float(self.eta(t))
            vals = np.broadcast_to(vals, y.shape).astype(float)
            if np.any(vals < 0):
                raise InvalidParameter("kernel", "negative", "separable factors must be nonnegative")
            return vals
        if self.kind == "tabulated":
            interp = self.tables[_side_index(side)]
            pts = np.column_stack([y.ravel(), np.full(y.size, float(t))])
            try:
                return interp(pts).reshape(y.shape)
            except ValueError as exc:
                raise InvalidParameter("kernel", (float(y.min()), float(y.max()), t),
                                       "query outside tabulated range") from exc
        raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def sup(self, y: np.ndarray, t_max: float, n_t: int = 21) -> float:
        """Sampled supremum of k over both sides, the nodes ``y`` and [0, t_max]."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.kappa
        best = 0.0
        for t in np.linspace(0.0, t_max, n_t):
            for side in SIDES:
                best = max(best, float(np.max(self(side, y, t))))
        return best

    def integrate(self, u_pow_l: np.ndarray, y: np.ndarray, weights: np.ndarray, t: float) -> tuple[float, float]:
        """Composite-trapezoid values of int k(x_b, y, t) u^l dy at both ends."""
        if self.kind == "zero":
            return 0.0, 0.0
        if self.kind == "constant":
            v = self.kappa * float(weights @ u_pow_l)
            return v, v
        return (float(weights @ (self("left", y, t) * u_pow_l)),
                float(weights @ (self("right", y, t) * u_pow_l)))


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class CompatibilityReport:
    residual_left: float
    residual_right: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(abs(self.residual_left), abs(self.residual_right)) <= self.tolerance

    def as_dict(self) -> dict:
        return {"residual_left": self.residual_left, "residual_right": self.residual_right,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass(frozen=True)
class InitialData:
    values: np.ndarray
    domain: Domain1D
    #: corrector slopes (left, right) added on top of the base profile
    corrector_slopes: tuple = (0.0, 0.0)
    compatibility: Optional[CompatibilityReport] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.domain.N,):
            raise InvalidParameter("u0", v.shape, f"expected {self.domain.N} nodal values")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidParameter("u0", float(np.nanmin(v)), "initial data must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, f, domain: Domain1D) -> "InitialData":
        return cls(np.asarray(f(domain.x), float) * np.ones(domain.N), domain)

    @classmethod
    def constant(cls, c: float, domain: Domain1D) -> "InitialData":
        return cls(np.full(domain.N, float(c)), domain)

    @property
    def normal_derivatives(self) -> tuple[float, float]:
        return normal_derivatives(self.values, self.domain.h)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)


def compatibility_residual(u0: InitialData, k: BoundaryKernel, params: ModelParams,
                           dom: Optional[Domain1D] = None, quadrature: str = "trapezoid",
                           tolerance: float = 1e-10) -> CompatibilityReport:
    """Residual du0/dnu - int k(x_b, y, 0) u0^l dy at each end."""
    if quadrature != "trapezoid":
        raise ValueError(f"unsupported quadrature rule {quadrature!r}")
    dom = dom or u0.domain
    dl, dr = normal_derivatives(u0.values, dom.h)
    fl, fr = k.integrate(np.power(u0.values, params.l), dom.x, dom.trapezoid_weights(), 0.0)
    return CompatibilityReport(dl - fl, dr - fr, tolerance)


def corrector_profiles(dom: Domain1D) -> tuple[np.ndarray, np.ndarray]:
    """Cubic blends with unit outward slope at one end, C^2-flat at distance 0.2 L."""
    d = CORRECTOR_FRACTION * dom.L
    x = dom.x
    left = np.where(x < d, (d - x) ** 3 / (3.0 * d * d), 0.0)
    right = left[::-1].copy()
    return left, right


def _tune_slopes(base: np.ndarray, k: BoundaryKernel, params: ModelParams, dom: Domain1D,
                 tolerance: float, max_sweeps: int) -> tuple[np.ndarray, tuple[float, float], CompatibilityReport]:
    gl, gr = corrector_profiles(dom)
    h = dom.h
    # discrete normal derivative is linear; 2x2 map from slopes to derivative increments
    dmat = np.array([normal_derivatives(gl, h), normal_derivatives(gr, h)]).T
    d_base = np.array(normal_derivatives(base, h))
    w = dom.trapezoid_weights()
    x = dom.x
    s = np.zeros(2)
    for _ in range(max_sweeps):
        u = base + s[0] * gl + s[1] * gr
        if np.any(u < 0):
            break
        target = np.array(k.integrate(np.power(u, params.l), x, w, 0.0))
        s_new = np.linalg.solve(dmat, target - d_base)
        if not np.all(np.isfinite(s_new)) or np.max(np.abs(s_new)) > 1e12:
            break
        step = np.max(np.abs(s_new - s))
        s = s_new
        if step <= 1e-15 * max(1.0, np.max(np.abs(s))):
            break
    u = base + s[0] * gl + s[1] * gr
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise NoCompatibleData("corrector iteration produced invalid data")
    rep = compatibility_residual(InitialData(u, dom), k, params, dom, tolerance=tolerance)
    if not rep.passed:
        raise NoCompatibleData(
            f"corrector slopes did not converge in {max_sweeps} sweeps "
            f"(residuals {rep.residual_left:.3e}, {rep.residual_right:.3e})")
    return u, (float(s[0]), float(s[1])), rep


def make_compatible_initial(c: float, k: BoundaryKernel, params: ModelParams, dom: Domain1D,
                            tolerance: float = 1e-10, max_sweeps: int = 100) -> InitialData:
    """Level ``c`` plus endpoint correctors tuned until the compatibility residual vanishes."""
    if c < 0:
        raise InvalidParameter("c", c, "base level must be >= 0")
    base = np.full(dom.N, float(c))
    u, slopes, rep = _tune_slopes(base, k, params, dom, tolerance, max_sweeps)
    return InitialData(u, dom, slopes, rep)


def build_epsilon_initial(u0: InitialData, eps: float, k: BoundaryKernel, params: ModelParams,
                          tolerance: float = 1e-8, max_sweeps: int = 100) -> InitialData:
    """Lift compatible data to ``u0 + eps`` and re-tune the correctors.

    The returned profile is >= eps, nondecreasing in eps and tends to ``u0``
    uniformly as eps -> 0 (the corrector increments scale with the change
    of the boundary flux).
    """
    if not 0 < eps < 1:
        raise InvalidParameter("epsilon", eps, "must lie in (0, 1)")
    dom = u0.domain
    base = np.asarray(u0.values) + eps
    u, slopes, rep = _tune_slopes(base, k, params, dom, tolerance, max_sweeps)
    total = (u0.corrector_slopes[0] + slopes[0], u0.corrector_slopes[1] + slopes[1])
    return InitialData(u, dom, total, rep)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    params: ModelParams
    domain: Domain1D
    kernel: BoundaryKernel = field(default_factory=BoundaryKernel.zero)
    initial: Optional[InitialData] = None

    def __post_init__(self):
        if self.initial is None:
            object.__setattr__(self, "initial", InitialData.constant(0.0, self.domain))
        elif self.initial.domain != self.domain:
            raise InvalidParameter("initial", self.initial.domain, "domain mismatch")

    def with_initial(self, initial: InitialData) -> "Problem":
        return replace(self, initial=initial)

    def with_params(self, **changes) -> "Problem":
        merged = {**self.params.as_dict(), **changes}
        return replace(self, params=make_params(**merged))
