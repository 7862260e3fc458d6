"""Deterministic quantities attached to a TAP magnetisation vector.

For ``m`` in ``(-1, 1)^N`` with overlap ``Q = |m|^2 / N`` the conditioned
Hessian of the TAP free energy is ``P Z P + K(m)`` where ``P`` projects away
from ``m``, ``Z = beta J / sqrt(N) - D`` and

    D_i = 1/(1 - m_i^2) + 2 beta^2 (1 - Q)
    u   = atanh(m) - h + 2 beta^2 m (1 - Q)
    v   = u + 4 beta^2 Q m - D m
    x   = v - ((m, v) / |m|^2) m.

The annealed log-determinant is predicted as ``Upsilon + correction`` with a
variational leading term and a correction from the outlier eigenvalue.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import optimize

from .errors import DegenerateError, DomainError, PreconditionError, SolverError

PLEFKA_TIE = 1e-9
ZERO_V_TOL = 1e-13
PARALLEL_TOL = 1e-12
ORTHOGONAL_TOL = 1e-12

DegeneracyClass = Literal["zero_v", "parallel", "orthogonal", "generic"]


def stable_atanh(m: np.ndarray) -> np.ndarray:
    return 0.5 * (np.log1p(m) - np.log1p(-m))


@dataclass(frozen=True, eq=False)
class TapPoint:
    """A magnetisation vector together with every derived TAP quantity.

    Build instances with :func:`make_tap_point`.
    """

    m: np.ndarray
    beta: float
    h: float
    Q: float
    D_diag: np.ndarray
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    mv: float
    cls: DegeneracyClass
    norm_m: float = field(repr=False)
    norm_v: float = field(repr=False)
    norm_x: float = field(repr=False)

    @property
    def n(self) -> int:
        return self.m.size

    @property
    def degenerate(self) -> bool:
        return self.cls == "zero_v"


def v_coordinatewise(m, beta: float, h: float) -> np.ndarray:
    """``v_i = atanh m_i - h - m_i/(1 - m_i^2) + 4 beta^2 Q m_i``."""
    m = np.asarray(m, dtype=float)
    Q = float(m @ m) / m.size
    return stable_atanh(m) - h - m / ((1.0 - m) * (1.0 + m)) + 4.0 * beta**2 * Q * m


def _validate(m, beta):
    m = np.array(m, dtype=float).ravel()
    if m.size == 0:
        raise DomainError("m must be a non-empty vector")
    if not np.all(np.isfinite(m)):
        raise DomainError("m must be finite")
    bad = np.nonzero(np.abs(m) >= 1.0)[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"|m_{i}| = {abs(m[i]):.17g} is not below 1 (index {i})")
    if not np.any(m != 0):
        raise DomainError("m = 0 is excluded")
    if not (math.isfinite(beta) and beta > 0):
        raise DomainError("beta must be positive")
    return m


def make_tap_point(m, beta: float, h: float = 0.0) -> TapPoint:
    """Evaluate ``Q``, ``D``, ``u``, ``v``, ``x`` and the degeneracy class."""
    m = _validate(m, beta)
    if not math.isfinite(h):
        raise DomainError("h must be finite")
    n = m.size
    b2 = beta * beta
    mm = float(m @ m)
    Q = mm / n
    one_minus = (1.0 - m) * (1.0 + m)
    D = 1.0 / one_minus + 2.0 * b2 * (1.0 - Q)
    u = stable_atanh(m) - h + 2.0 * b2 * m * (1.0 - Q)
    Dm = D * m
    v = u + 4.0 * b2 * Q * m - Dm
    mv = float(m @ v)
    x = v - (mv / mm) * m
    x = x - (float(m @ x) / mm) * m
    norm_m = math.sqrt(mm)
    norm_v = float(np.linalg.norm(v))
    norm_x = float(np.linalg.norm(x))
    if norm_v <= ZERO_V_TOL * (1.0 + float(np.linalg.norm(Dm))):
        cls = "zero_v"
    elif norm_x <= PARALLEL_TOL * norm_v:
        cls = "parallel"
    elif abs(mv) <= ORTHOGONAL_TOL * norm_m * norm_v:
        cls = "orthogonal"
    else:
        cls = "generic"
    if cls in ("zero_v", "parallel"):
        x = np.zeros_like(m)
        norm_x = 0.0
    for arr in (m, D, u, v, x):
        arr.setflags(write=False)
    return TapPoint(m=m, beta=float(beta), h=float(h), Q=Q, D_diag=D, u=u, v=v, x=x,
                    mv=mv, cls=cls, norm_m=norm_m, norm_v=norm_v, norm_x=norm_x)


def tap_gradient(m, J: np.ndarray, beta: float, h: float = 0.0) -> np.ndarray:
    """Gradient ``beta J m / sqrt(N) + h - atanh(m) - 2 beta^2 m (1 - Q)``."""
    m = _validate(m, beta)
    n = m.size
    Q = float(m @ m) / n
    return beta * (J @ m) / math.sqrt(n) + h - stable_atanh(m) - 2.0 * beta**2 * m * (1.0 - Q)


def tap_hessian(m, J: np.ndarray, beta: float) -> np.ndarray:
    """Hessian ``beta J / sqrt(N) - D + (4 beta^2 / N) m m^T``."""
    m = _validate(m, beta)
    n = m.size
    Q = float(m @ m) / n
    D = 1.0 / ((1.0 - m) * (1.0 + m)) + 2.0 * beta**2 * (1.0 - Q)
    return beta * J / math.sqrt(n) - np.diag(D) + (4.0 * beta**2 / n) * np.outer(m, m)


def k_matrix(p: TapPoint) -> np.ndarray:
    """Low-rank part ``(m v^T + v m^T)/|m|^2 - (m, v) m m^T / |m|^4``."""
    mm = p.norm_m**2
    return (np.outer(p.m, p.v) + np.outer(p.v, p.m)) / mm - (p.mv / mm**2) * np.outer(p.m, p.m)


def plefka_lhs(p: TapPoint) -> float:
    """``(2 beta^2 / N) sum_i (1 - m_i^2)^2``; the Plefka condition is ``<= 1``."""
    om = (1.0 - p.m) * (1.0 + p.m)
    return 2.0 * p.beta**2 * float(om @ om) / p.n


def _shifted_diag(p: TapPoint, g: float) -> np.ndarray:
    args = p.D_diag - 2.0 * p.beta**2 * g
    bad = np.nonzero(args <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"D_{i} - 2 beta^2 g = {args[i]:.3e} is not positive (index {i})")
    return args


def variational_objective(p: TapPoint, g: float) -> float:
    """``R_N(g) = beta^2 g^2 + (1/N) sum_i log(D_i - 2 beta^2 g)``."""
    return p.beta**2 * g * g + float(np.mean(np.log(_shifted_diag(p, g))))


def fixed_point_map(p: TapPoint, g: float) -> float:
    """``F_N(g) = (1/N) sum_i 1/(D_i - 2 beta^2 g)``, so ``R_N' = 2 beta^2 (g - F_N)``."""
    return float(np.mean(1.0 / _shifted_diag(p, g)))


def first_pole(p: TapPoint) -> float:
    return float(p.D_diag.min()) / (2.0 * p.beta**2)


@dataclass(frozen=True)
class VariationalResult:
    g_star: float
    upsilon: float
    branch: Literal["boundary", "interior"]
    plefka_lhs: float


def solve_upsilon(p: TapPoint) -> VariationalResult:
    """Minimise ``R_N`` over ``g <= 1 - Q``.

    ``g = 1 - Q`` always solves ``g = F_N(g)``. Because ``g - F_N(g)`` is
    concave, the minimiser is that boundary point exactly when its slope
    there, ``1 - plefka_lhs``, is non-negative. Otherwise the minimiser is the
    other root, which lies in ``(0, 1 - Q)`` and is found with Brent's method.
    """
    lhs = plefka_lhs(p)
    g_b = 1.0 - p.Q
    if lhs <= 1.0 + PLEFKA_TIE:
        return VariationalResult(g_b, variational_objective(p, g_b), "boundary", lhs)

    def G(g):
        return g - fixed_point_map(p, g)

    lo = 0.0
    if G(lo) >= 0:
        raise SolverError("g - F_N(g) is not negative at g = 0",
                          {"g": [0.0], "R_prime": [2 * p.beta**2 * G(0.0)]})
    hi, delta = None, 1e-3 * g_b
    for _ in range(60):
        cand = g_b - delta
        if cand > lo and G(cand) > 0:
            hi = cand
            break
        delta *= 0.5
    if hi is None:
        grid = np.linspace(0.0, g_b, 9)
        raise SolverError("could not bracket the interior stationary point",
                          {"g": grid.tolist(),
                           "R_prime": [2 * p.beta**2 * G(float(g)) for g in grid]})
    g0 = optimize.brentq(G, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return VariationalResult(float(g0), variational_objective(p, g0), "interior", lhs)


def correction_argument(p: TapPoint) -> float:
    """``|v|^2/|m|^2 + |(m,v)|/|m|^2 - (m,v)^2/|m|^4`` in the cancellation-free form
    ``|x|^2/|m|^2 + |(m,v)|/|m|^2``."""
    mm = p.norm_m**2
    return p.norm_x**2 / mm + abs(p.mv) / mm


def correction_term(p: TapPoint) -> float:
    """Outlier correction ``(1/N) log(correction_argument)``.

    Raises
    ------
    DegenerateError
        When ``v = 0`` or the argument vanishes.
    """
    if p.cls == "zero_v":
        raise DegenerateError("v = 0: the conditioned Hessian is singular")
    arg = correction_argument(p)
    if not arg > 0:
        raise DegenerateError("correction argument is not positive")
    return math.log(arg) / p.n


def region_threshold(n: int, alpha: float) -> float:
    """``1 - exp(-alpha sqrt(N))`` computed without cancellation."""
    return -math.expm1(-alpha * math.sqrt(n))


def in_region(p: TapPoint, alpha: float) -> bool:
    thr = region_threshold(p.n, alpha)
    # allow two ulps so points built exactly on the boundary count as inside
    return float(np.max(np.abs(p.m))) <= thr + 2 * np.spacing(thr)


@dataclass(frozen=True)
class Prediction:
    upsilon: float
    correction: float
    total: float
    region: Literal["inside_L", "outside_L"]
    degenerate: bool
    g_star: float
    branch: str
    plefka_lhs: float
    cls: DegeneracyClass


def predict(p: TapPoint, alpha: float) -> Prediction:
    """Leading term plus correction for the annealed log-determinant.

    A degenerate point yields ``correction = total = -inf``.
    """
    if not (math.isfinite(alpha) and alpha > 0):
        raise DomainError("alpha must be positive")
    var = solve_upsilon(p)
    try:
        corr = correction_term(p)
        degenerate = False
    except DegenerateError:
        corr = -math.inf
        degenerate = True
    total = -math.inf if degenerate else var.upsilon + corr
    region = "inside_L" if in_region(p, alpha) else "outside_L"
    return Prediction(var.upsilon, corr, total, region, degenerate, var.g_star,
                      var.branch, var.plefka_lhs, p.cls)


def outside_bound(p: TapPoint) -> float:
    """Upper bound valid for every ``m``, inside the region or not."""
    om = (1.0 - p.m) * (1.0 + p.m)
    return (correction_term(p) + 2.0 * math.log(16.0 * p.beta * (1.0 + p.beta**2))
            - 17.0 / p.n * float(np.sum(np.log(om))))


@dataclass(frozen=True)
class BoundsReport:
    log_norm_v: float
    log_norm_v_bound: float
    log_d_op: float
    log_d_op_bound: float
    v_holds: bool
    d_holds: bool

    @property
    def holds(self) -> bool:
        return self.v_holds and self.d_holds

    @property
    def v_margin(self) -> float:
        return self.log_norm_v_bound - self.log_norm_v

    @property
    def d_margin(self) -> float:
        return self.log_d_op_bound - self.log_d_op


def bounds_check(p: TapPoint, alpha: float) -> BoundsReport:
    """Check ``|v| <= e^{3 alpha sqrt N}`` and ``|D|_op <= 2 e^{2 alpha sqrt N}``.

    Comparisons are made on a log scale so large ``N`` does not overflow.

    Raises
    ------
    PreconditionError
        If ``N <= (|h| + 3 + 4 beta^2) / alpha^2`` or ``m`` lies outside the region.
    """
    n0 = (abs(p.h) + 3.0 + 4.0 * p.beta**2) / alpha**2
    if not p.n > n0:
        raise PreconditionError(f"N = {p.n} must exceed {n0:.6g}")
    if not in_region(p, alpha):
        raise PreconditionError("m lies outside the region max|m_i| <= 1 - exp(-alpha sqrt N)")
    r = alpha * math.sqrt(p.n)
    lv = math.log(p.norm_v) if p.norm_v > 0 else -math.inf
    ld = math.log(float(np.max(np.abs(p.D_diag))))
    return BoundsReport(lv, 3 * r, ld, math.log(2.0) + 2 * r, lv <= 3 * r, ld <= math.log(2.0) + 2 * r)


def zero_v_uniform_value(beta: float) -> float:
    """Root ``t`` in (0, 1) of ``atanh t - t/(1 - t^2) + 4 beta^2 t^3 = 0``.

    With ``h = 0`` the uniform vector ``(t, ..., t)`` then has ``v = 0`` in any
    dimension. A root exists exactly when ``beta^2 > 1/6``.
    """
    if not beta**2 > 1.0 / 6.0:
        raise DomainError("a non-trivial uniform v = 0 point needs beta^2 > 1/6")

    def f(t):
        return float(stable_atanh(np.array(t))) - t / ((1 - t) * (1 + t)) + 4 * beta**2 * t**3

    lo = 1e-6
    while f(lo) <= 0:
        lo *= 10
        if lo > 0.5:
            raise SolverError("no sign change found for the v = 0 equation")
    hi = 1.0 - 1e-12
    return optimize.brentq(f, lo, hi, xtol=1e-17, rtol=4 * np.finfo(float).eps, maxiter=500)
