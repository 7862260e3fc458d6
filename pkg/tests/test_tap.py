import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braymoore import tap
from braymoore.errors import DegenerateError, DomainError, PreconditionError

points = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-0.97, 0.97), min_size=n, max_size=n).filter(
            lambda m: any(abs(v) > 1e-3 for v in m)),
        st.floats(0.1, 3.0),
        st.floats(-2.0, 2.0),
    )
).map(lambda a: tap.make_tap_point(np.array(a[0]), a[1], a[2]))


def brute_force_min(p, k=20001):
    g = np.linspace(-1.0, 1.0 - p.Q, k)
    vals = p.beta**2 * g**2 + np.mean(np.log(p.D_diag[None, :] - 2 * p.beta**2 * g[:, None]),
                                      axis=1)
    return float(vals.min())


class TestTapPoint:
    def test_uniform_half(self):
        p = tap.make_tap_point(np.full(2, 0.5), 1.0)
        assert p.Q == pytest.approx(0.25)
        np.testing.assert_allclose(p.D_diag, 1 / 0.75 + 2 * 0.75)
        assert p.cls == "parallel" and not p.norm_x

    def test_v_matches_coordinatewise(self, rng):
        for _ in range(50):
            m = rng.uniform(-0.99, 0.99, int(rng.integers(2, 50)))
            p = tap.make_tap_point(m, rng.uniform(0.1, 3), rng.normal())
            np.testing.assert_allclose(p.v, tap.v_coordinatewise(m, p.beta, p.h),
                                       rtol=1e-12, atol=1e-12)
            if p.norm_x:
                assert abs(p.m @ p.x) <= 1e-12 * p.norm_m * p.norm_x

    def test_arrays_frozen(self, uniform_point):
        with pytest.raises(ValueError):
            uniform_point.m[0] = 0.1

    @pytest.mark.parametrize("m,frag", [([0.2, 1.0, 0.3], "index 1"), ([0.1, -0.2, -1.5], "index 2"),
                                        ([0.0, 0.0], "m = 0"), ([], "non-empty"),
                                        ([0.1, math.nan], "finite")])
    def test_domain_errors(self, m, frag):
        with pytest.raises(DomainError, match=frag):
            tap.make_tap_point(m, 1.0)

    def test_bad_beta(self):
        with pytest.raises(DomainError):
            tap.make_tap_point([0.1], 0.0)

    def test_classes(self, rng):
        t = tap.zero_v_uniform_value(1.2)
        assert tap.make_tap_point(np.full(10, t), 1.2).cls == "zero_v"
        assert tap.make_tap_point(np.full(10, 0.3), 1.2).cls == "parallel"
        m = rng.uniform(0.1, 0.8, 12)
        v0 = tap.v_coordinatewise(m, 1.0, 0.0)
        h = float(m @ v0) / m.sum()
        assert tap.make_tap_point(m, 1.0, h).cls == "orthogonal"
        assert tap.make_tap_point(m, 1.0, h + 0.3).cls == "generic"

    def test_zero_v_value_requires_beta(self):
        with pytest.raises(DomainError):
            tap.zero_v_uniform_value(0.4)
        t = tap.zero_v_uniform_value(1.2)
        assert t == pytest.approx(0.92144802, abs=1e-8)


def test_hessian_is_gradient_jacobian(rng):
    n, beta, h = 7, 0.8, 0.3
    A = rng.normal(size=(n, n))
    J = (A + A.T) / math.sqrt(2)
    m = rng.uniform(-0.7, 0.7, n)
    H = tap.tap_hessian(m, J, beta)
    eps = 1e-6
    fd = np.column_stack([(tap.tap_gradient(m + eps * e, J, beta, h)
                           - tap.tap_gradient(m - eps * e, J, beta, h)) / (2 * eps)
                          for e in np.eye(n)])
    np.testing.assert_allclose(H, fd, atol=1e-7)


def test_k_matrix_acts_like_v(rng):
    p = tap.make_tap_point(rng.uniform(-0.9, 0.9, 20), 1.1, 0.2)
    K = tap.k_matrix(p)
    np.testing.assert_allclose(K @ p.m, p.v, atol=1e-12)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.matrix_rank(K) <= 2


class TestVariational:
    def test_boundary_golden(self):
        p = tap.make_tap_point(np.full(16, 0.8), 1.0)
        r = tap.solve_upsilon(p)
        assert r.branch == "boundary"
        assert r.g_star == pytest.approx(0.36, abs=1e-15)
        assert r.plefka_lhs == pytest.approx(2 * 0.36**2)

    def test_interior_golden(self):
        p = tap.make_tap_point(np.full(16, 0.1), 2.0)
        r = tap.solve_upsilon(p)
        assert r.branch == "interior"
        assert r.g_star == pytest.approx(0.12626, abs=1e-5)
        assert abs(r.g_star - tap.fixed_point_map(p, r.g_star)) <= 1e-14

    @settings(max_examples=80, deadline=None)
    @given(points)
    def test_minimum_matches_brute_force(self, p):
        r = tap.solve_upsilon(p)
        assert r.g_star <= 1 - p.Q + 1e-15
        assert r.upsilon <= brute_force_min(p) + 1e-9
        assert r.upsilon >= brute_force_min(p) - 1e-6
        expect = "boundary" if r.plefka_lhs <= 1 + tap.PLEFKA_TIE else "interior"
        assert r.branch == expect

    def test_shifted_diag_error_names_index(self, uniform_point):
        with pytest.raises(DomainError, match="index 0"):
            tap.variational_objective(uniform_point, 100.0)


class TestCorrection:
    @settings(max_examples=60, deadline=None)
    @given(points)
    def test_matches_naive_formula(self, p):
        if p.cls == "zero_v":
            return
        mm = p.norm_m**2
        naive = p.norm_v**2 / mm + abs(p.mv) / mm - p.mv**2 / mm**2
        assert tap.correction_argument(p) == pytest.approx(naive, rel=1e-6, abs=1e-12)

    def test_parallel_uses_mv_only(self):
        p = tap.make_tap_point(np.full(8, 0.3), 1.0)
        assert tap.correction_argument(p) == pytest.approx(abs(p.mv) / p.norm_m**2, rel=1e-14)

    def test_degenerate_prediction(self):
        t = tap.zero_v_uniform_value(1.2)
        p = tap.make_tap_point(np.full(32, t), 1.2)
        with pytest.raises(DegenerateError):
            tap.correction_term(p)
        pr = tap.predict(p, 1.0)
        assert pr.degenerate and pr.total == -math.inf and math.isfinite(pr.upsilon)

    def test_prediction_total(self, uniform_point):
        pr = tap.predict(uniform_point, 1.0)
        assert pr.total == pytest.approx(pr.upsilon + pr.correction, abs=1e-15)
        with pytest.raises(DomainError):
            tap.predict(uniform_point, 0.0)


class TestRegion:
    def test_threshold(self):
        assert tap.region_threshold(100, 1.0) == pytest.approx(1 - math.exp(-10), rel=1e-15)
        assert tap.region_threshold(10**6, 1.0) == 1.0

    def test_boundary_counts_inside(self):
        thr = tap.region_threshold(4, 0.5)
        p = tap.make_tap_point([thr, 0.1, 0.2, 0.3], 1.0)
        assert tap.in_region(p, 0.5)
        assert not tap.in_region(p, 0.4)
        assert tap.predict(p, 0.4).region == "outside_L"

    def test_bounds_check(self, rng):
        p = tap.make_tap_point(rng.uniform(-0.9, 0.9, 64), 0.7, 0.5)
        rep = tap.bounds_check(p, 1.0)
        assert rep.holds and rep.v_margin > 0 and rep.d_margin > 0
        with pytest.raises(PreconditionError, match="must exceed"):
            tap.bounds_check(tap.make_tap_point([0.1, 0.2], 0.7), 1.0)
        outside = tap.make_tap_point(np.r_[0.9999, np.full(63, 0.1)], 0.7)
        with pytest.raises(PreconditionError, match="outside"):
            tap.bounds_check(outside, 0.5)

    def test_outside_bound_finite(self, rng):
        p = tap.make_tap_point(rng.uniform(-0.99, 0.99, 30), 1.0)
        assert math.isfinite(tap.outside_bound(p))
