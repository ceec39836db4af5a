import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from spdelab.errors import DomainError, ShapeError
from spdelab.spectral import (HILBERT, ModalVector, SpectralOperator, audit_semigroup_bounds,
                              frac_power_apply, iota, load_spectrum_csv, make_example_operator,
                              semigroup_apply, semigroup_bound_constant, smoothing_defect_bound_check,
                              yosida_approx)


def op_of(*lam):
    return SpectralOperator(np.array(lam, dtype=float))


class TestSemigroup:
    def test_identity_at_zero(self):
        # trivial: S(0) = I
        np.testing.assert_array_equal(semigroup_apply(op_of(1, 2), 0.0, [1.0, 1.0]), [1.0, 1.0])

    def test_half_at_log_two(self):
        # trivial: exp(-ln 2) = 1/2
        np.testing.assert_allclose(semigroup_apply(op_of(1, 2), math.log(2), [1.0, 0.0]), [0.5, 0.0], rtol=1e-15)

    def test_per_mode_exponential(self, small_op):
        # derived: scalar exponential per mode
        expected = [math.exp(-0.3 * lam) for lam in (1, 4, 9)]
        np.testing.assert_allclose(semigroup_apply(small_op, 0.3, np.ones(3)), expected, rtol=1e-15)

    def test_negative_time_rejected(self, small_op):
        with pytest.raises(DomainError):
            semigroup_apply(small_op, -1e-3, np.ones(3))

    def test_mode_count_mismatch(self, small_op):
        with pytest.raises(ShapeError):
            semigroup_apply(small_op, 0.1, np.ones(4))

    def test_modal_vector_round_trip(self, small_op):
        v = semigroup_apply(small_op, 0.1, ModalVector([1.0, 0.0, 0.0]))
        assert isinstance(v, ModalVector)
        assert v.norm() == pytest.approx(math.exp(-0.1))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_semigroup_law(self, t, s, x):
        op = op_of(1, 4, 9)
        lhs = semigroup_apply(op, t + s, x)
        rhs = semigroup_apply(op, t, semigroup_apply(op, s, x))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-1, 1), st.floats(0, 3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_power_commutes_with_semigroup(self, theta, t, x):
        op = op_of(1, 4, 9)
        a = frac_power_apply(op, theta, semigroup_apply(op, t, x))
        b = semigroup_apply(op, t, frac_power_apply(op, theta, x))
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0, 5), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
    def test_decay_bound(self, t, x):
        op = op_of(1, 4, 9)
        assert np.linalg.norm(semigroup_apply(op, t, x)) <= math.exp(-t) * np.linalg.norm(x) * (1 + 1e-12) + 1e-300


class TestFractionalPower:
    def test_zero_power_is_identity(self, small_op):
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(frac_power_apply(small_op, 0.0, x), x)

    def test_square_root(self):
        assert frac_power_apply(op_of(4), 0.5, [3.0])[0] == pytest.approx(6.0)

    def test_inverse(self):
        assert frac_power_apply(op_of(2), -1.0, [1.0])[0] == pytest.approx(0.5)


class TestIota:
    def test_zero(self):
        assert semigroup_bound_constant(None, 0.0) == 1.0

    @pytest.mark.parametrize("theta", [1.0, 0.5, 0.2, 0.8])
    def test_matches_numerical_maximum(self, theta):
        # derived: maximize u^theta e^-u over u > 0 numerically
        res = minimize_scalar(lambda u: -(u ** theta) * math.exp(-u), bounds=(1e-9, 50), method="bounded",
                              options={"xatol": 1e-12})
        assert iota(theta) == pytest.approx(-res.fun, rel=1e-9)

    def test_known_values(self):
        assert iota(1.0) == pytest.approx(1 / math.e)
        assert iota(0.5) == pytest.approx(0.4289, abs=1e-4)

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            iota(-0.1)

    @settings(max_examples=80, deadline=None)
    @given(st.floats(0, 1), st.floats(1e-4, 10))
    def test_smoothing_bound(self, theta, t):
        op = make_example_operator("cable_neumann", 64)
        worst = np.max(op.eigenvalues ** theta * np.exp(-op.eigenvalues * t))
        assert worst <= iota(theta) * t ** -theta * (1 + 1e-12)


class TestDefect:
    def test_single_mode_small_time(self):
        rep = smoothing_defect_bound_check(op_of(3.0), 1.0, 2.0 ** -np.arange(1, 20), rng=0)
        assert rep.passed

    def test_spread_spectrum(self):
        rep = smoothing_defect_bound_check(op_of(1, 10, 100), 0.5, 2.0 ** -np.arange(0, 11), 20, rng=1)
        assert rep.passed and rep.checks == 11 * 20

    def test_zero_vector(self):
        rep = smoothing_defect_bound_check(op_of(1, 10), 1.0, [0.1], n_vectors=0)
        assert rep.max_ratio == 0.0

    def test_theta_out_of_range(self):
        with pytest.raises(DomainError):
            smoothing_defect_bound_check(op_of(1.0), 0.0, [0.1])


class TestAudit:
    def test_no_violations_and_fast(self):
        op = make_example_operator("cable_neumann", 64)
        start = time.perf_counter()
        rep = audit_semigroup_bounds(op, 10_000, seed=3)
        assert time.perf_counter() - start < 5.0
        assert rep.passed and rep.checks == 10_000
        assert max(rep.worst_ratio.values()) <= 1 + 1e-12


class TestYosida:
    def test_unit_eigenvalue(self):
        assert yosida_approx(op_of(1.0), 1).eigenvalues[0] == pytest.approx(0.5)
        assert yosida_approx(op_of(1.0), 10 ** 9).eigenvalues[0] == pytest.approx(1.0, rel=1e-8)

    def test_bad_index(self):
        with pytest.raises(DomainError):
            yosida_approx(op_of(1.0), 0)

    def test_converges_monotonically(self):
        op = op_of(1, 4, 9)
        x = 1.0 / np.arange(1, 4) ** 4
        times = np.linspace(0, 2, 41)
        errs = []
        for n in (1, 10, 100, 1000):
            approx = yosida_approx(op, n)
            errs.append(max(np.linalg.norm(approx.semigroup(t, x) - op.semigroup(t, x)) for t in times))
        assert all(a > b for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-2


class TestExamples:
    def test_cable_spectrum(self):
        # derived: Neumann eigenproblem on (0, pi) gives 1 + k^2
        op = make_example_operator("cable_neumann", 5)
        np.testing.assert_allclose(op.eigenvalues, [1, 2, 5, 10, 17])

    def test_cable_constant_mode(self):
        op = make_example_operator("cable_neumann", 4, length=2.0)
        _, _, basis = op.spatial_grid(65)
        np.testing.assert_allclose(basis[0], 1 / math.sqrt(2.0))
        assert op.eigenvalues[0] == 1.0

    def test_dirichlet(self):
        assert make_example_operator("dirichlet_divform", 3, b0=1.0).eigenvalues[0] == pytest.approx(2.0)

    def test_basis_is_orthonormal(self):
        for name in ("cable_neumann", "dirichlet_divform", "whole_line_truncated"):
            op = make_example_operator(name, 16)
            _, w, basis = op.spatial_grid(513)
            np.testing.assert_allclose((basis * w) @ basis.T, np.eye(16), atol=1e-10)

    def test_bad_length(self):
        with pytest.raises(DomainError):
            make_example_operator("cable_neumann", 4, length=0.0)

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            make_example_operator("torus", 4)

    def test_invalid_spectrum(self):
        with pytest.raises(DomainError):
            op_of(0.0, 1.0)
        with pytest.raises(DomainError):
            op_of(2.0, 1.0)

    def test_spectrum_csv(self, tmp_path):
        path = tmp_path / "spectrum.csv"
        path.write_text("index,eigenvalue\n2,4.0\n1,1.0\n3,9.0\n")
        op = load_spectrum_csv(path)
        np.testing.assert_array_equal(op.eigenvalues, [1.0, 4.0, 9.0])
        np.testing.assert_array_equal(op.modes, [1, 2, 3])


class TestNorms:
    def test_lp_two_matches_hilbert(self):
        op = make_example_operator("dirichlet_divform", 8)
        x = np.random.default_rng(0).standard_normal(8)
        assert op.lp(2.0, 1025).norm(x) == pytest.approx(HILBERT.norm(x), rel=1e-6)

    def test_lp_monotone_in_p(self):
        # derived: Lyapunov inequality on a domain of length pi
        op = make_example_operator("dirichlet_divform", 8)
        x = np.random.default_rng(1).standard_normal(8)
        n2 = op.lp(2.0, 1025).norm(x) / math.pi ** 0.5
        n4 = op.lp(4.0, 1025).norm(x) / math.pi ** 0.25
        assert n2 <= n4 * (1 + 1e-9)

    def test_mixing_flavors_rejected(self):
        op = make_example_operator("dirichlet_divform", 4)
        with pytest.raises(ShapeError):
            ModalVector(np.ones(4)) - ModalVector(np.ones(4), op.lp(4.0, 64))
