"""Atomic spectral measures and their free convolution with a semicircle law.

Conventions
-----------
The Stieltjes transform is taken in Herglotz form,
``m(z) = sum_j w_j / (lambda_j - z)``, which maps the upper half plane into
itself. For ``mu = nu boxplus sc(sigma2)`` the subordination equation reads

    m_mu(z) = m_nu(z + sigma2 * m_mu(z)).

On the real axis the boundary values are described exactly by a real
parametrisation: for each real ``a`` let ``s(a) >= 0`` solve
``sum_j w_j / ((lambda_j - a)^2 + s) = 1/sigma2`` (``s = 0`` when no solution
exists) and set ``psi(a) = a + sigma2 * sum_j w_j (a - lambda_j) / ((lambda_j - a)^2 + s)``.
Then ``psi`` is an increasing bijection of the real line, the boundary value of
``z + sigma2 m_mu(z)`` at ``x = psi(a)`` is ``a + i sqrt(s(a))`` and the density
is ``sqrt(s(a)) / (pi sigma2)``. Densities, supports, CDFs and the logarithmic
potential below are computed from this parametrisation; the epsilon-ladder
route of :func:`density_at` is kept as an independent check.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from . import kernels
from .errors import AccuracyError, ConvergenceError, InvalidInputError

DEFAULT_EPS_LADDER = (1e-2, 5e-3, 2.5e-3)


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Finite atomic probability measure.

    Locations are sorted and exact duplicates merged on construction.

    Parameters
    ----------
    locations, weights : array_like
        Atom positions and non-negative weights summing to one within 1e-12.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if loc.size == 0 or loc.shape != w.shape:
            raise InvalidInputError("atoms must be a non-empty list of (location, weight) pairs")
        if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(w))):
            raise InvalidInputError("atom locations and weights must be finite")
        if np.any(w < 0):
            raise InvalidInputError("atom weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"atom weights sum to {w.sum():.17g}, expected 1")
        uniq, inv = np.unique(loc, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        keep = merged > 0
        uniq, merged = uniq[keep], merged[keep]
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "locations", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def from_atoms(cls, atoms: Sequence[Sequence[float]]) -> "SpectralMeasure":
        arr = np.asarray(atoms, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidInputError("atoms must be pairs (location, weight)")
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def empirical(cls, values) -> "SpectralMeasure":
        """Uniform measure on ``values`` (an empirical spectral distribution)."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size == 0:
            raise InvalidInputError("empirical measure needs at least one value")
        return cls(values, np.full(values.size, 1.0 / values.size))

    @classmethod
    def point(cls, location: float = 0.0) -> "SpectralMeasure":
        return cls([location], [1.0])

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.locations.tolist(), self.weights.tolist()))

    def reflected(self) -> "SpectralMeasure":
        return SpectralMeasure(-self.locations, self.weights)

    def shifted(self, c: float) -> "SpectralMeasure":
        return SpectralMeasure(self.locations + c, self.weights)

    def to_json(self) -> str:
        pairs = ", ".join(f"[{l:.17g}, {w:.17g}]" for l, w in self.atoms)
        return '{"atoms": [' + pairs + "]}"

    @classmethod
    def from_json(cls, text: str) -> "SpectralMeasure":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"atoms file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict) or "atoms" not in data:
            raise InvalidInputError('atoms file must be an object with key "atoms"')
        return cls.from_atoms(data["atoms"])


def _as_upper(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("evaluation point must be finite")
    if np.any(z.imag <= 0):
        raise InvalidInputError("Stieltjes argument needs Im z > 0")
    return z


def stieltjes(nu: SpectralMeasure, z):
    """Herglotz-Stieltjes transform ``sum_j w_j / (lambda_j - z)``.

    Accepts a scalar or an array of points in the open upper half plane and
    returns a value of matching shape.
    """
    z = _as_upper(z)
    out = kernels.stieltjes(nu.locations, nu.weights, z.ravel())
    return out.reshape(z.shape)[()] if z.ndim else complex(out[0])


@dataclass(frozen=True, eq=False)
class FreeConvolution:
    """``base boxplus sc(sigma2)`` with cached boundary structure.

    The support and edge data are computed once on first use. The cache is
    idempotent, so concurrent first calls merely duplicate work.
    """

    base: SpectralMeasure
    sigma2: float
    fp_tol: float = 1e-13
    fp_max_iter: int = 20000

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidInputError("sigma2 must be positive and finite")
        if not (0 < self.fp_tol <= 1e-4):
            raise InvalidInputError("fp_tol must lie in (0, 1e-4]")
        if self.fp_max_iter < 1:
            raise InvalidInputError("fp_max_iter must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def density_bound(self) -> float:
        """Uniform bound ``1/(pi sigma)`` on the density."""
        return 1.0 / (math.pi * self.sigma)

    def _biane(self, a):
        return kernels.biane_map(self.base.locations, self.base.weights, self.sigma2, a)

    def _invert(self, x):
        return kernels.biane_invert(self.base.locations, self.base.weights, self.sigma2, x)

    @cached_property
    def _support_data(self):
        return _biane_support(self.base.locations, self.base.weights, self.sigma2)

    @property
    def _a_support(self) -> np.ndarray:
        return self._support_data[0]

    @property
    def _a_pieces(self) -> np.ndarray:
        """Support intervals cut at the minima of unsplit gaps, where the
        density dips sharply and quadrature rules need an endpoint."""
        iv, dips = self._support_data
        lo, hi = [], []
        for a, b in iv:
            cuts = dips[(dips > a) & (dips < b)]
            pts = np.concatenate([[a], cuts, [b]])
            lo.extend(pts[:-1])
            hi.extend(pts[1:])
        return np.column_stack([lo, hi])

    def support(self) -> list[tuple[float, float]]:
        """Disjoint closed intervals making up the support, left to right."""
        a_iv = self._a_support
        if a_iv.size == 0:
            return []
        x = self._edge_x(a_iv.ravel()).reshape(a_iv.shape)
        return [(float(lo), float(hi)) for lo, hi in x]

    def _edge_x(self, a):
        # at an edge s = 0, so psi(a) = a - sigma2 * m_nu(a)
        lam, w = self.base.locations, self.base.weights
        return a - self.sigma2 * (w / (lam[None, :] - a[:, None])).sum(axis=1)


def subordination(fc: FreeConvolution, z, m0=None):
    """Stieltjes transform of ``fc`` at ``z`` from the subordination fixed point.

    Parameters
    ----------
    fc : FreeConvolution
    z : complex or array_like
        Points with positive imaginary part.
    m0 : complex or array_like, optional
        Starting values in the upper half plane. Defaults to the transform of
        the base measure at ``z + i sigma``.

    Raises
    ------
    ConvergenceError
        If some point fails to reach ``fc.fp_tol``; ``residual`` is the worst
        residual seen.
    """
    z = _as_upper(z)
    flat = z.ravel()
    nu = fc.base
    if m0 is None:
        m0 = kernels.stieltjes(nu.locations, nu.weights, flat + 1j * fc.sigma)
    else:
        m0 = np.broadcast_to(np.asarray(m0, dtype=complex), z.shape).ravel()
        if np.any(m0.imag <= 0):
            raise InvalidInputError("starting value must lie in the upper half plane")
    m, res, _ = kernels.subordinate(nu.locations, nu.weights, fc.sigma2, flat, m0,
                                    fc.fp_tol, fc.fp_max_iter, 1e-3)
    # independent re-evaluation of the fixed-point residual
    check = np.abs(m - kernels.stieltjes(nu.locations, nu.weights, flat + fc.sigma2 * m))
    worst = float(np.max(np.maximum(res, check)))
    if not np.all(np.isfinite(m)) or worst > fc.fp_tol or np.any(m.imag <= 0):
        raise ConvergenceError(
            f"subordination did not converge (residual {worst:.3e} > {fc.fp_tol:.1e})",
            residual=worst)
    return m.reshape(z.shape)[()] if z.ndim else complex(m[0])


class DensityValue(NamedTuple):
    value: float
    stable: bool


def boundary_density(fc: FreeConvolution, x):
    """Exact density of ``fc`` at real ``x`` (scalar or array)."""
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)):
        raise InvalidInputError("density abscissa must be finite")
    a = fc._invert(x_arr.ravel())
    s = fc._biane(a)[0]
    p = np.minimum(np.sqrt(s) / (math.pi * fc.sigma2), fc.density_bound)
    return p.reshape(x_arr.shape)[()] if x_arr.ndim else float(p[0])


def density_at(fc: FreeConvolution, x: float,
               eps_ladder: Sequence[float] | None = DEFAULT_EPS_LADDER) -> DensityValue:
    """Density at ``x`` from ``Im m(x + i eps) / pi`` extrapolated to ``eps = 0``.

    The values along the ladder are combined by linear Richardson
    extrapolation of the two smallest steps. The result is flagged unstable
    (and a warning is issued) when the ladder values are not monotone or the
    two available extrapolations disagree by more than 1e-4 of the density
    bound. Passing ``eps_ladder=None`` returns the exact boundary value.
    """
    if not math.isfinite(x):
        raise InvalidInputError("density abscissa must be finite")
    if eps_ladder is None:
        return DensityValue(float(boundary_density(fc, x)), True)
    eps = np.asarray(eps_ladder, dtype=float)
    if eps.ndim != 1 or eps.size < 2 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise InvalidInputError("eps_ladder must be strictly decreasing positive values (at least two)")
    # warm start from the exact boundary solution at x
    a = fc._invert(np.array([x]))
    s = fc._biane(a)[0]
    omega0 = complex(a[0], math.sqrt(s[0]) + 1e-300)
    m_start = (omega0 - x) / fc.sigma2
    if m_start.imag <= 0:
        m_start = complex(m_start.real, 1e-8)
    m = subordination(fc, x + 1j * eps, m0=np.full(eps.size, m_start))
    vals = np.imag(m) / math.pi
    ratios = eps[:-1] / eps[1:]
    ex = (ratios * vals[1:] - vals[:-1]) / (ratios - 1.0)
    value = float(ex[-1])
    diffs = np.diff(vals)
    monotone = bool(np.all(diffs >= -1e-15) or np.all(diffs <= 1e-15))
    consistent = ex.size < 2 or abs(ex[-1] - ex[-2]) <= 1e-4 * fc.density_bound
    stable = monotone and consistent
    if not stable:
        warnings.warn(f"density extrapolation at x={x:.6g} is unstable", RuntimeWarning,
                      stacklevel=2)
    value = min(max(value, 0.0), fc.density_bound)
    return DensityValue(value, stable)


def _biane_support(lam: np.ndarray, w: np.ndarray, sigma2: float) -> np.ndarray:
    """Intervals in the ``a`` variable where ``sum w/(lam-a)^2 > 1/sigma2``.

    Returns the (k, 2) interval array and the minimisers of the gaps that do
    not split the support. Outer ends are found between the extreme
    atoms and one ``sigma`` beyond them; inside each gap between consecutive
    atoms the convex function is minimised through its monotone derivative and,
    when the minimum falls below ``1/sigma2``, the two crossings split the gap.
    """
    sigma = math.sqrt(sigma2)
    target = 1.0 / sigma2

    # midpoints can land on an atom when atoms are ulps apart; inf is then correct
    def f(a):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return (w / (lam[None, :] - a[:, None]) ** 2).sum(axis=1)

    def fprime(a):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            return 2.0 * (w / (lam[None, :] - a[:, None]) ** 3).sum(axis=1)

    def bisect(lo, hi, g, increasing, iters=200):
        lo, hi = lo.copy(), hi.copy()
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if np.all((mid == lo) | (mid == hi)):
                break
            gm = g(mid)
            up = gm > 0 if increasing else gm < 0
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        return 0.5 * (lo + hi)

    left = bisect(np.array([lam[0] - sigma]), np.array([lam[0]]),
                  lambda a: f(a) - target, increasing=True)[0]
    right = bisect(np.array([lam[-1]]), np.array([lam[-1] + sigma]),
                   lambda a: f(a) - target, increasing=False)[0]
    cuts = []
    dips = np.empty(0)
    if lam.size > 1:
        lo, hi = lam[:-1], lam[1:]
        amin = bisect(lo, hi, fprime, increasing=True)
        fmin = f(amin)
        split = np.nonzero(fmin < target)[0]
        if split.size:
            r1 = bisect(lo[split], amin[split], lambda a: f(a) - target, increasing=False)
            r2 = bisect(amin[split], hi[split], lambda a: f(a) - target, increasing=True)
            cuts = list(zip(r1, r2))
        dips = amin[fmin >= target]
    edges = [left]
    for r1, r2 in cuts:
        edges.extend([r1, r2])
    edges.append(right)
    return np.asarray(edges, dtype=float).reshape(-1, 2), dips


def _tanhsinh(fun, a, b, atol, rtol):
    res = integrate.tanhsinh(fun, a, b, atol=atol, rtol=rtol, maxlevel=14)
    return np.atleast_1d(res.integral), np.atleast_1d(res.error), np.atleast_1d(res.status)


def _density_jacobian(fc: FreeConvolution, a):
    """Density times dpsi/da, i.e. the push-forward density in the a variable."""
    s, psi, dpsi = fc._biane(a)
    return np.sqrt(s) * dpsi / (math.pi * fc.sigma2), psi


def total_mass(fc: FreeConvolution) -> float:
    """Quadrature of the density over the support (should equal one)."""
    a_iv = fc._a_pieces

    def fun(a):
        shape = a.shape
        val, _ = _density_jacobian(fc, a.ravel())
        return np.where(np.isfinite(val), val, 0.0).reshape(shape)

    vals, _, _ = _tanhsinh(fun, a_iv[:, 0], a_iv[:, 1], 1e-13, 1e-10)
    return float(vals.sum())


def log_potential(fc: FreeConvolution, atol: float = 1e-13, rtol: float = 1e-10) -> float:
    """``int log|x| mu(dx)`` for ``mu = fc``.

    Integrates ``log|psi(a)| * density * psi'(a)`` in the parametrisation
    variable with tanh-sinh quadrature, which handles the square-root
    behaviour at the support edges. When 0 lies in the support the interval
    containing it is split at ``psi^{-1}(0)`` so the logarithmic singularity
    sits at a quadrature endpoint.

    Raises
    ------
    AccuracyError
        If any sub-integral misses its tolerance.
    """
    a_iv = fc._a_pieces
    lo, hi = list(a_iv[:, 0]), list(a_iv[:, 1])
    a0 = float(fc._invert(np.array([0.0]))[0])
    for k in range(len(lo)):
        if lo[k] < a0 < hi[k]:
            lo.insert(k + 1, a0)
            hi.insert(k, a0)
            break
    lo_arr, hi_arr = np.asarray(lo), np.asarray(hi)

    def fun(a):
        shape = a.shape
        dens, psi = _density_jacobian(fc, a.ravel())
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.log(np.abs(psi)) * dens
        return np.where(np.isfinite(val), val, 0.0).reshape(shape)

    vals, errs, status = _tanhsinh(fun, lo_arr, hi_arr, atol, rtol)
    estimate = float(vals.sum())
    err = float(np.abs(errs).sum())
    # a piece that stops at the maximum level is acceptable when its error estimate is small
    if not math.isfinite(estimate) or err > 1e-9 * (1.0 + abs(estimate)):
        raise AccuracyError(f"log-potential quadrature missed its target (error {err:.2e})",
                            estimate=estimate, error=err)
    return estimate


def cdf(fc: FreeConvolution, nodes_per_interval: int = 2049):
    """Cumulative distribution function of ``fc`` as a vectorised callable.

    The CDF is tabulated in the parametrisation variable on a grid clustered
    at the support edges (``a = mid - half*cos(theta)``) and interpolated
    monotonically in ``x``.
    """
    a_iv = fc._a_support
    theta = np.linspace(0.0, math.pi, nodes_per_interval)
    xs, Fs = [], []
    acc = 0.0
    for lo, hi in a_iv:
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        a = mid - half * np.cos(theta)
        dens, psi = _density_jacobian(fc, a)
        dens = np.where(np.isfinite(dens), dens, 0.0)
        # integrate in theta: da = half*sin(theta) dtheta removes edge singularities
        g = dens * half * np.sin(theta)
        part = integrate.cumulative_simpson(g, x=theta, initial=0.0)
        psi[0], psi[-1] = fc._edge_x(np.array([lo, hi]))
        xs.append(psi)
        Fs.append(acc + part)
        acc += part[-1]
    x = np.concatenate(xs)
    F = np.maximum.accumulate(np.concatenate(Fs)) / acc
    x, idx = np.unique(x, return_index=True)
    F = F[idx]
    interp = PchipInterpolator(x, F, extrapolate=False)
    lo_x, hi_x = x[0], x[-1]

    def evaluate(t):
        t = np.asarray(t, dtype=float)
        out = interp(np.clip(t, lo_x, hi_x))
        out = np.where(t <= lo_x, 0.0, np.where(t >= hi_x, 1.0, out))
        return np.clip(out, 0.0, 1.0)

    return evaluate


def stieltjes_mass_integral(nu: SpectralMeasure, v: float, window: float) -> float:
    """``int_{-window}^{window} Im m(u + i v) du`` by adaptive quadrature.

    The substitution ``u = v sinh(t)`` turns the Lorentzian tails into
    exponentially decaying ones, and atom positions are passed as breakpoints.
    The limit as ``window -> infinity`` is ``pi``.
    """
    if not (math.isfinite(v) and v > 0):
        raise InvalidInputError("v must be positive")
    if not (math.isfinite(window) and window > 0):
        raise InvalidInputError("window must be positive")
    lam, w = nu.locations, nu.weights

    def integrand(t):
        u = v * math.sinh(t)
        im = float(np.sum(w * v / ((lam - u) ** 2 + v * v)))
        return im * v * math.cosh(t)

    t_max = math.asinh(window / v)
    pts = np.arcsinh(lam / v)
    pts = sorted(set(float(p) for p in pts if -t_max < p < t_max))
    edges = [-t_max] + pts + [t_max]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
        total += val
    return total
