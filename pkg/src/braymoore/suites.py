"""Named property suites run by ``braymoore verify``.

Each suite returns a :class:`SuiteResult`. Passing ``inject=True`` corrupts
the suite's input on purpose so that the failure path can be exercised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import harness, matrices, spectral, tap
from .matrices import SeededRng
from .spectral import FreeConvolution, SpectralMeasure

SEED = 0x5EED


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    checked: int
    failures: int
    detail: str


def _result(name, failures, checked, detail=""):
    return SuiteResult(name, failures == 0, checked, failures, detail)


def _random_measure(rng, k=None):
    k = int(rng.integers(1, 12)) if k is None else k
    w = rng.random(k) + 0.05
    return SpectralMeasure(rng.normal(scale=3.0, size=k), w / w.sum())


def suite_herglotz(inject=False, n=300):
    rng = np.random.default_rng(SEED)
    bad = 0
    for _ in range(n):
        nu = _random_measure(rng)
        z = complex(rng.normal(scale=4.0), 10 ** rng.uniform(-3, 1))
        m = spectral.stieltjes(nu, z)
        if inject:
            m = complex(m.real, -abs(m.imag))
        v = z.imag
        ok = m.imag > 0 and abs(m) <= 1.0 / v * (1 + 1e-12)
        d = np.abs(nu.locations - z) ** 2
        for p in (0, 1, 2):
            lhs = float(np.sum(nu.weights / d ** (1 + p / 2)))
            rhs = m.imag / v ** (p + 1)
            ok &= lhs <= rhs * (1 + 1e-10)
            if p == 0:
                ok &= abs(lhs - rhs) <= 1e-10 * rhs
        bad += not ok
    return _result("herglotz", bad, n)


def suite_mass(inject=False, n=20):
    rng = np.random.default_rng(SEED + 1)
    bad = 0
    for _ in range(n):
        nu = _random_measure(rng)
        v = 10 ** rng.uniform(-1, 0.5)
        vals = [spectral.stieltjes_mass_integral(nu, v, w) for w in (1.0, 10.0, 1e3, 1e7)]
        if inject:
            vals[-1] += 1.0
        ok = all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        ok &= vals[-1] <= math.pi + 1e-9 and abs(vals[-1] - math.pi) <= 1e-5
        bad += not ok
    return _result("mass", bad, n)


def suite_subordination(inject=False):
    rng = np.random.default_rng(SEED + 2)
    bad = 0
    n = 50
    for _ in range(n):
        nu = _random_measure(rng)
        fc = FreeConvolution(nu, 10 ** rng.uniform(-1, 1))
        z = complex(rng.normal(scale=4.0), 10 ** rng.uniform(-2, 1))
        m = spectral.subordination(fc, z)
        if inject:
            m += 1e-3
        r = abs(m - spectral.stieltjes(nu, z + fc.sigma2 * m))
        bad += not (r <= fc.fp_tol and m.imag > 0)
    golden = spectral.subordination(FreeConvolution(SpectralMeasure.point(0), 1.0), 2j)
    bad += abs(golden - 1j * (math.sqrt(2) - 1)) > 1e-12
    return _result("subordination", bad, n + 1)


def suite_density(inject=False):
    rng = np.random.default_rng(SEED + 3)
    bad = 0
    n = 20
    for _ in range(n):
        fc = FreeConvolution(_random_measure(rng), 10 ** rng.uniform(-1, 1))
        lo, hi = fc.support()[0][0], fc.support()[-1][1]
        xs = np.linspace(lo - 1, hi + 1, 201)
        p = spectral.boundary_density(fc, xs)
        if inject:
            p = p * 10
        bad += not (np.all(p >= 0) and p.max() <= fc.density_bound + 1e-6)
        bad += abs(spectral.total_mass(fc) - 1) > 1e-3
    d = spectral.density_at(FreeConvolution(SpectralMeasure.point(0), 2.0), 0.0)
    bad += abs(d.value - 1 / (math.pi * math.sqrt(2))) > 1e-4
    return _result("density", bad, 2 * n + 1)


def _random_point(rng, n=None):
    n = int(rng.integers(2, 65)) if n is None else n
    m = rng.uniform(-0.95, 0.95, n)
    return tap.make_tap_point(m, rng.uniform(0.2, 2.0), rng.normal())


def suite_tap(inject=False):
    rng = np.random.default_rng(SEED + 4)
    bad = 0
    n = 1000
    for _ in range(n):
        p = _random_point(rng)
        v2 = tap.v_coordinatewise(p.m, p.beta, p.h)
        if inject:
            v2 = v2 + 1e-6
        ok = np.linalg.norm(p.v - v2) <= 1e-12 * max(1.0, np.linalg.norm(p.v))
        ok &= abs(float(p.m @ p.x)) <= 1e-10 * p.norm_m * max(p.norm_x, 1e-300) or p.norm_x == 0
        bad += not ok
    return _result("tap", bad, n)


def suite_vardet(inject=False):
    rng = np.random.default_rng(SEED + 5)
    bad = 0
    n = 12
    worst = 0.0
    for k in range(n):
        p = _random_point(rng, [16, 64][k % 2])
        r = tap.solve_upsilon(p)
        lp = spectral.log_potential(
            FreeConvolution(SpectralMeasure.empirical(-p.D_diag), 2 * p.beta**2))
        if inject:
            lp += 1e-3
        err = abs(r.upsilon - lp)
        worst = max(worst, err)
        bad += err > 1e-4
    return _result("vardet", bad, n, f"max |upsilon - log_potential| = {worst:.2e}")


def suite_branch(inject=False):
    bad = 0
    n = 0
    for beta in np.linspace(0.2, 3.0, 29):
        for t in (0.1, 0.4, 0.7, 0.9):
            p = tap.make_tap_point(np.full(8, t), float(beta))
            r = tap.solve_upsilon(p)
            lhs = tap.plefka_lhs(p)
            n += 1
            if abs(lhs - 1) <= tap.PLEFKA_TIE:
                continue
            expect = "boundary" if lhs <= 1 else "interior"
            if inject:
                expect = "interior" if expect == "boundary" else "boundary"
            bad += r.branch != expect
            if r.branch == "interior":
                bad += abs(r.g_star - tap.fixed_point_map(p, r.g_star)) > 1e-10
    return _result("branch", bad, n)


def suite_conditional(inject=False):
    rng = np.random.default_rng(SEED + 6)
    bad = 0
    n = 200
    for i in range(n):
        p = _random_point(rng)
        H = matrices.conditional_hessian(p, SeededRng(SEED, i), check=False)
        if inject:
            H = H + 1e-6
        r = np.linalg.norm(H @ p.m - p.v)
        bad += r > 1e-10 * p.norm_v + 1e-12 * np.linalg.norm(H, 2) * p.norm_m
    t = tap.zero_v_uniform_value(1.2)
    p = tap.make_tap_point(np.full(32, t), 1.2)
    H = matrices.conditional_hessian(p, SeededRng(SEED, 0))
    lam = np.abs(np.linalg.eigvalsh(H))
    bad += lam.min() > 1e-9 * lam.max()
    return _result("conditional", bad, n + 1)


def suite_rotations(inject=False):
    rng = np.random.default_rng(SEED + 7)
    bad = 0
    n = 200
    for _ in range(n):
        k = int(rng.integers(3, 40))
        m = rng.normal(size=k)
        x = rng.normal(size=k)
        x -= (x @ m) / (m @ m) * m
        O = matrices.rotation_to_e1e2(m, x)
        if inject:
            O = O * 1.001
        e1 = np.zeros(k)
        e1[0] = np.linalg.norm(m)
        e2 = np.zeros(k)
        e2[1] = np.linalg.norm(x)
        ok = np.abs(O.T @ O - np.eye(k)).max() <= 1e-12
        ok &= np.linalg.norm(O @ m - e1) <= 1e-12 * np.linalg.norm(m)
        ok &= np.linalg.norm(O @ x - e2) <= 1e-12 * np.linalg.norm(x)
        bad += not ok
    return _result("rotations", bad, n)


def suite_schur(inject=False):
    rng = np.random.default_rng(SEED + 8)
    bad = 0
    n = 300
    worst = 0.0
    for i in range(n):
        p = _random_point(rng)
        if p.cls == "zero_v":
            continue
        z = matrices.build_z_parallel(p, SeededRng(SEED + 8, i))
        if inject:
            # pair the determinant of Y with the expansion of a perturbed block
            good = matrices.laplace_identity_check(p, z)
            z2 = z.copy()
            z2[0, 0] += 0.1
            other = matrices.laplace_identity_check(p, z2)
            top = max(good.lhs_log, other.rhs_log)
            a_ = good.lhs_sign * math.exp(good.lhs_log - top)
            b_ = other.rhs_sign * math.exp(other.rhs_log - top)
            bad += abs(a_ - b_) > 1e-10 * (abs(a_) + abs(b_))
            continue
        lap = matrices.laplace_identity_check(p, z).residual
        worst = max(worst, lap)
        bad += lap > 1e-10
        if p.mv != 0:
            sch = matrices.schur_identity_check(p, z)
            worst = max(worst, sch.residual)
            bad += sch.residual > 1e-10
    return _result("schur", bad, n, f"max relative residual {worst:.2e}")


def _goe_diag(rng, n, scale=1.0):
    J = matrices.sample_goe(n, SeededRng(int(rng.integers(1 << 62)), 0))
    return scale * J / math.sqrt(n) + np.diag(rng.uniform(-1.5, 1.5, n))


def suite_erstatz(inject=False, n=500):
    rng = np.random.default_rng(SEED + 9)
    bad = 0
    for _ in range(n):
        N = int(rng.integers(5, 65))
        k = int(rng.integers(1, max(2, N // 2)))
        A = _goe_diag(rng, N)
        u = rng.normal(size=(N, k))
        B = A + u @ np.diag(rng.normal(scale=2.0, size=k)) @ u.T / N
        rep = matrices.rank_perturbation_bound_check(A, B, k)
        bad += not (rep.holds and not inject)
    return _result("erstatz", bad, n)


def suite_minor(inject=False, n=500):
    rng = np.random.default_rng(SEED + 10)
    bad = 0
    for _ in range(n):
        N = int(rng.integers(5, 65))
        k = int(rng.integers(1, (N - 1) // 2 + 1))
        A = _goe_diag(rng, N)
        rep = matrices.minor_bound_check(A, k)
        bad += not (rep.holds and rep.holds_corrected and not inject)
    return _result("minor", bad, n)


def suite_determinism(inject=False):
    p = tap.make_tap_point(np.linspace(-0.5, 0.7, 16), 1.0, 0.1)
    r1 = harness.estimate_logdet(p, 8, 42, workers=1)
    r2 = harness.estimate_logdet(p, 8, 42 + int(inject), workers=2)
    same = r1.as_dict() == r2.as_dict()
    return _result("determinism", 0 if same else 1, 1)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "herglotz": suite_herglotz,
    "mass": suite_mass,
    "subordination": suite_subordination,
    "density": suite_density,
    "tap": suite_tap,
    "vardet": suite_vardet,
    "branch": suite_branch,
    "conditional": suite_conditional,
    "rotations": suite_rotations,
    "schur": suite_schur,
    "erstatz": suite_erstatz,
    "minor": suite_minor,
    "determinism": suite_determinism,
}


def run_suites(names=None, inject=(), sizes=None):
    """Run the named suites (all by default). ``sizes`` maps a suite name to
    its instance count, for the suites that take one."""
    names = list(SUITES) if not names else list(names)
    sizes = sizes or {}
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(", ".join(unknown))
    return [SUITES[n](inject=n in inject, **({"n": sizes[n]} if n in sizes else {}))
            for n in names]
