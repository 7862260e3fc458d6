import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from braymoore import matrices, tap
from braymoore.errors import DomainError, InvalidInputError, PreconditionError
from braymoore.matrices import EnsembleSpec, SeededRng


def leibniz_det(M):
    """Permutation expansion in exact rationals (small n only)."""
    n = len(M)
    fr = [[Fraction(float(v)) for v in row] for row in M]
    total = Fraction(0)
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        prod = Fraction(1)
        for i in range(n):
            prod *= fr[i][perm[i]]
        total += -prod if inv % 2 else prod
    return total


class TestRng:
    def test_mix64_matches_splitmix(self):
        # first SplitMix64 output from state 0 is mix64(0 + golden gamma)
        assert matrices.mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
        assert matrices.mix64(0) == 0

    def test_reproducible_and_independent_streams(self):
        a = SeededRng(7, 3).normal(100)
        b = SeededRng(7, 3).normal(100)
        c = SeededRng(7, 4).normal(100)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)

    def test_draw_counter_and_shape(self):
        r = SeededRng(1)
        z = r.normal((3, 5))
        assert z.shape == (3, 5) and r.draws == 16
        assert SeededRng(1).normal(7).shape == (7,)

    def test_normal_moments(self):
        z = SeededRng(123).normal(200000)
        assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01
        assert abs(np.mean(z**4) - 3) < 0.05

    def test_goe_variances(self):
        n = 60
        mats = [matrices.sample_goe(n, SeededRng(5, i)) for i in range(60)]
        off = np.concatenate([m[np.triu_indices(n, 1)] for m in mats])
        diag = np.concatenate([np.diag(m) for m in mats])
        assert np.allclose(mats[0], mats[0].T)
        assert off.var() == pytest.approx(1.0, abs=0.02)
        assert diag.var() == pytest.approx(2.0, abs=0.15)


class TestEnsemble:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            EnsembleSpec(1, 1.0, [0.0])
        with pytest.raises(InvalidInputError):
            EnsembleSpec(3, -1.0, np.zeros(3))
        with pytest.raises(InvalidInputError):
            EnsembleSpec(3, 1.0, np.zeros(2))
        with pytest.raises(InvalidInputError):
            EnsembleSpec(3, 1.0, np.zeros(3), lowrank_part=np.triu(np.ones((3, 3))))
        e = np.eye(4)[:, :1]
        with pytest.raises(InvalidInputError, match="declared rank"):
            EnsembleSpec(4, 1.0, np.zeros(4), lowrank_part=e @ e.T, lowrank_rank=2)
        with pytest.raises(InvalidInputError):
            EnsembleSpec(4, 1.0, np.zeros(4), projector_vectors=[[1, 0, 0, 0], [2, 0, 0, 0]])

    def test_projector(self):
        q = np.array([1.0, 1.0, 0.0, 0.0])
        spec = EnsembleSpec(4, 1.0, np.arange(4.0), projector_vectors=q)
        M = matrices.build_matrix(spec, SeededRng(0))
        np.testing.assert_allclose(M @ q, 0, atol=1e-13)
        np.testing.assert_allclose(M, M.T)


class TestRotations:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 30).flatmap(
        lambda n: st.lists(st.floats(-10, 10), min_size=n, max_size=n)))
    def test_rotation_to_e1(self, m):
        m = np.array(m)
        if np.linalg.norm(m) < 1e-6:
            return
        O = matrices.rotation_to_e1(m)
        np.testing.assert_allclose(O @ O.T, np.eye(m.size), atol=1e-12)
        target = np.zeros(m.size)
        target[0] = np.linalg.norm(m)
        np.testing.assert_allclose(O @ m, target, atol=1e-12 * np.linalg.norm(m))

    def test_axis_cases(self):
        assert np.array_equal(matrices.rotation_to_e1([2.0, 0, 0]), np.eye(3))
        O = matrices.rotation_to_e1([-2.0, 0, 0])
        np.testing.assert_allclose(O @ [-2.0, 0, 0], [2.0, 0, 0])
        with pytest.raises(DomainError):
            matrices.rotation_to_e1([0.0, 0.0])

    def test_e1e2_requires_orthogonal(self):
        with pytest.raises(DomainError):
            matrices.rotation_to_e1e2([1.0, 0, 0], [1.0, 1.0, 0])
        with pytest.raises(DomainError):
            matrices.rotation_to_e1e2([1.0, 0, 0], [0.0, 0, 0])


class TestDeterminants:
    @pytest.mark.parametrize("seed", range(5))
    def test_exact_det_matches_leibniz(self, seed):
        rng = np.random.default_rng(seed)
        n = 2 + seed % 4
        M = rng.normal(size=(n, n))
        assert matrices.exact_det(M) == leibniz_det(M)

    def test_exact_det_with_pivoting_and_singular(self):
        M = np.array([[0.0, 1.0, 2.0], [1.0, 0.5, 0.0], [3.0, 0.0, 1.0]])
        assert matrices.exact_det(M) == leibniz_det(M)
        assert matrices.exact_det(np.ones((3, 3))) == 0
        assert matrices.exact_det(np.zeros((0, 0))) == 1

    def test_logabsdet_against_exact(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 9))
            A = rng.normal(size=(n, n))
            M = A + A.T
            exact = matrices.exact_det(M)
            assert matrices.logabsdet(M) == pytest.approx(math.log(abs(exact)), abs=1e-10)

    def test_logabsdet_singular(self):
        assert matrices.logabsdet(np.diag([1.0, 0.0, 2.0])) == -math.inf
        assert matrices.logabsdet(np.zeros((0, 0))) == 0.0
        with pytest.raises(InvalidInputError):
            matrices.logabsdet(np.ones((2, 3)))


def _point(rng, n):
    return tap.make_tap_point(rng.uniform(-0.9, 0.9, n), rng.uniform(0.3, 2), rng.normal())


class TestConditional:
    def test_action_and_symmetry(self, rng):
        for i in range(30):
            p = _point(rng, int(rng.integers(2, 40)))
            H = matrices.conditional_hessian(p, SeededRng(1, i))
            np.testing.assert_allclose(H, H.T)
            assert np.linalg.norm(H @ p.m - p.v) <= 1e-10 * p.norm_v

    def test_deterministic_rotation_gives_y(self, rng):
        # with the random part switched off the rotated Hessian is exactly Y
        for _ in range(20):
            p = _point(rng, int(rng.integers(3, 30)))
            H = matrices.conditional_hessian(p, SeededRng(0), goe_scale=0.0)
            O = matrices._rotation_for(p)
            Z = matrices.build_z_parallel(p, SeededRng(0), goe_scale=0.0)
            np.testing.assert_allclose(O @ H @ O.T, matrices.y_matrix(p, Z), atol=1e-12)

    def test_zero_v_is_singular(self):
        t = tap.zero_v_uniform_value(1.5)
        p = tap.make_tap_point(np.full(40, t), 1.5)
        H = matrices.conditional_hessian(p, SeededRng(9))
        lam = np.abs(np.linalg.eigvalsh(H))
        assert lam.min() <= 1e-9 * lam.max()
        with pytest.raises(DomainError):
            matrices.y_matrix(p, np.zeros((39, 39)))

    def test_z_perp_dimensions(self, rng):
        p = _point(rng, 12)
        assert matrices.build_z_perp(p, SeededRng(0)).shape == (10, 10)
        par = tap.make_tap_point(np.full(5, 0.2), 1.0)
        with pytest.raises(DomainError):
            matrices.build_z_perp(par, SeededRng(0))


class TestIdentities:
    def test_laplace_exact(self, rng):
        p = _point(rng, 6)
        Z = matrices.build_z_parallel(p, SeededRng(3))
        Y = matrices.y_matrix(p, Z)
        lhs = matrices.exact_det(Y)
        c1 = Fraction(float(Y[0, 0]))
        c2 = Fraction(float(Y[0, 1])) ** 2
        rhs = c1 * matrices.exact_det(Z) - c2 * matrices.exact_det(Z[1:, 1:])
        assert lhs == rhs

    def test_residuals_small(self, rng):
        for i in range(100):
            p = _point(rng, int(rng.integers(2, 65)))
            Z = matrices.build_z_parallel(p, SeededRng(4, i))
            assert matrices.laplace_identity_check(p, Z).residual <= 1e-10
            assert matrices.schur_identity_check(p, Z).residual <= 1e-10

    def test_schur_needs_mv(self, rng):
        m = rng.uniform(0.1, 0.8, 8)
        v0 = tap.v_coordinatewise(m, 1.0, 0.0)
        p = tap.make_tap_point(m, 1.0, float(m @ v0) / m.sum())
        object.__setattr__(p, "mv", 0.0)
        with pytest.raises(PreconditionError):
            matrices.schur_identity_check(p, np.eye(7))

    def test_bad_zpar_shape(self, rng):
        with pytest.raises(InvalidInputError):
            matrices.y_matrix(_point(rng, 5), np.eye(3))


class TestInequalities:
    def test_rank_perturbation(self, rng):
        n = 20
        A = np.diag(rng.uniform(1, 3, n))
        u = rng.normal(size=(n, 2))
        rep = matrices.rank_perturbation_bound_check(A, A + u @ u.T, 2)
        assert rep.holds and rep.margin >= 0
        with pytest.raises(PreconditionError):
            matrices.rank_perturbation_bound_check(A, A + u @ u.T, 1)
        with pytest.raises(PreconditionError):
            matrices.rank_perturbation_bound_check(np.diag(np.r_[0.0, np.ones(n - 1)]), A, n)

    def test_minor_bound_stated_form_counterexample(self):
        # A = 100 I: lhs = k log 100 exceeds the stated bound 4 k log 2
        A = 100.0 * np.eye(10)
        rep = matrices.minor_bound_check(A, 2)
        assert rep.lhs == pytest.approx(2 * math.log(100.0))
        assert not rep.holds
        assert rep.holds_corrected

    def test_minor_bound_precondition(self):
        with pytest.raises(PreconditionError):
            matrices.minor_bound_check(np.eye(4), 2)


def test_matrix_csv_round_trip(tmp_path, rng):
    A = rng.normal(size=(5, 5))
    path = tmp_path / "m.csv"
    matrices.dump_matrix_csv(A, path)
    assert path.read_text().splitlines()[0] == "n=5 sym=1"
    np.testing.assert_array_equal(matrices.load_matrix_csv(path), A)
    path.write_text("bad\n1,2\n")
    with pytest.raises(InvalidInputError):
        matrices.load_matrix_csv(path)
