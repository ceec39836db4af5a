import math

import numpy as np
import pytest
from scipy.integrate import quad

from spdelab.bounds import rhs_h13_4
from spdelab.errors import ContractError, HypothesisError, ShapeError
from spdelab.function_spaces import WeightedHolderPath, graded_grid, make_forcing
from spdelab.linear import (InitialCondition, LinearProblem, LinearSPDESolver, deterministic_convolution,
                            mild_residual, solve_linear, stochastic_convolution, strict_residual,
                            uniqueness_probe)
from spdelab.noise import WienerIncrements, make_noise, make_noise_from_function
from spdelab.presets import build
from spdelab.regularity import linear_bound_data
from spdelab.spectral import SpectralOperator, make_example_operator

BETA, SIGMA = 0.4, 0.2


def constant_path(level, beta=BETA, sigma=SIGMA, modes=1):
    """F(s) = s^(beta-1) * level, kept as a formula."""
    grid = graded_grid(1.0, 8, 2.0, include_zero=False)
    reg = lambda t: np.full((np.size(t), modes), level)
    return WeightedHolderPath(grid, grid[:, None] ** (beta - 1) * level, beta, sigma, 1.0, regular_part=reg)


def homogeneous(op, mean):
    return LinearProblem(op, BETA, SIGMA, InitialCondition(np.asarray(mean, dtype=float)))


class TestDeterministicConvolution:
    def test_zero_forcing(self):
        op = SpectralOperator(np.array([1.0, 2.0]))
        assert not np.any(deterministic_convolution(op, None, graded_grid(1.0, 8)))

    def test_constant_forcing_closed_form(self):
        # unit beta makes the kernel plain: int_0^t e^-(t-s) c ds = c (1 - e^-t)
        op = SpectralOperator(np.array([1.0]))
        grid = graded_grid(1.0, 16, 2.0)
        f = WeightedHolderPath(grid[1:], np.full((16, 1), 3.0), 0.999999999, 0.2, 1.0,
                               regular_part=lambda t: np.full((np.size(t), 1), 3.0))
        got = deterministic_convolution(op, f, grid)[:, 0]
        np.testing.assert_allclose(got, 3.0 * (1 - np.exp(-grid)), rtol=1e-7, atol=1e-12)

    def test_singular_forcing_matches_adaptive_quadrature(self):
        op = SpectralOperator(np.array([1.0]))
        ref = quad(lambda s: math.exp(-(1 - s)), 0, 1, weight="alg", wvar=(BETA - 1, 0), epsabs=1e-14)[0]
        got = deterministic_convolution(op, constant_path(1.0), graded_grid(1.0, 32, 2.0))[-1, 0]
        assert got == pytest.approx(ref, rel=1e-4)

    def test_refinement_gains_factor(self):
        op = make_example_operator("cable_neumann", 8)
        grid = graded_grid(1.0, 32, 2.0)
        f = make_forcing("power_profile", grid[1:], np.ones(8), BETA, SIGMA, profile=lambda t: np.sin(4 * t))
        coarse = deterministic_convolution(op, f, grid)
        mid = deterministic_convolution(op, f, grid, refine=2)
        fine = deterministic_convolution(op, f, grid, refine=4)
        ref = fine + (fine - mid) / 3
        assert np.abs(coarse - ref).max() / np.abs(mid - ref).max() >= 1.8

    def test_sampled_forcing_must_cover_grid(self):
        op = SpectralOperator(np.array([1.0]))
        f = WeightedHolderPath([0.5, 1.0], np.ones((2, 1)), BETA, SIGMA)
        with pytest.raises(ShapeError):
            deterministic_convolution(op, f, np.linspace(0, 1, 5))


class TestStochasticConvolution:
    def test_zero_noise(self):
        op = SpectralOperator(np.array([1.0, 3.0]))
        inc = WienerIncrements.sample(np.linspace(0, 1, 5), 2, 3, seed=0)
        assert not np.any(stochastic_convolution(op, None, inc))

    def test_piecewise_closed_form_variance(self):
        # derived: sum_j g_j^2 (e^{-2lam(t-t_{j+1})} - e^{-2lam(t-t_j)}) / (2 lam)
        op = make_example_operator("cable_neumann", 3)
        grid = graded_grid(1.0, 16, 2.0)
        noise = make_noise(grid, np.array([1.0, 0.5, 0.25]), BETA, SIGMA, 0.8)
        inc = WienerIncrements.sample(grid, 3, 20_000, seed=1)
        paths = stochastic_convolution(op, noise, inc)
        lam = op.eigenvalues
        for i in (4, 10, 16):
            t = grid[i]
            expected = sum(np.sum(noise.levels[j] ** 2 * (np.exp(-2 * lam * (t - grid[j + 1]))
                                                          - np.exp(-2 * lam * (t - grid[j]))) / (2 * lam))
                           for j in range(i))
            sq = np.sum(paths[:, i] ** 2, axis=-1)
            assert abs(sq.mean() - expected) <= 3 * sq.std(ddof=1) / math.sqrt(sq.size)

    def test_unit_ou_variance(self):
        op = SpectralOperator(np.array([1.0]))
        grid = np.linspace(0, 1, 9)
        noise = make_noise_from_function(lambda t: np.ones((np.size(t), 1)), grid, 0.5, 0.2)
        end = stochastic_convolution(op, noise, WienerIncrements.sample(grid, 1, 20_000, seed=2))[:, -1, 0]
        expected = (1 - math.exp(-2)) / 2
        assert abs(end.var(ddof=1) - expected) <= 3 * expected * math.sqrt(2 / end.size)

    def test_generator_bound_from_module_constants(self):
        exp = build("cable-linear", modes=16)
        grid = graded_grid(1.0, 64, 2.0)
        sol = solve_linear(exp.problem, grid, 2000, seed=3, strict=True)
        data = linear_bound_data(exp.problem)
        lam = sol.op.eigenvalues
        sq = np.sum((sol.stochastic[:, 1:] * lam) ** 2, axis=-1)
        rhs = rhs_h13_4(data, grid[1:])
        assert np.all(sq.mean(axis=0) <= rhs + 3 * sq.std(axis=0, ddof=1) / math.sqrt(sq.shape[0]))

    def test_workers_do_not_change_result(self):
        exp = build("cable-linear", modes=8)
        grid = graded_grid(1.0, 16, 2.0)
        inc = WienerIncrements.sample(grid, 8, 12, seed=4)
        noise = exp.problem.noise.on_grid(grid)
        a = stochastic_convolution(exp.problem.op, noise, inc, workers=1)
        b = stochastic_convolution(exp.problem.op, noise, inc, workers=3)
        assert np.array_equal(a, b)


class TestSolve:
    def test_homogeneous_is_semigroup(self):
        op = SpectralOperator(np.array([1.0, 4.0]))
        grid = graded_grid(1.0, 8)
        sol = solve_linear(homogeneous(op, [1.0, -2.0]), grid, 2)
        np.testing.assert_array_equal(sol.x[0], np.exp(-np.outer(grid, op.eigenvalues)) * [1.0, -2.0])

    def test_linearity_on_shared_noise(self):
        exp = build("cable-linear", modes=8)
        p = exp.problem
        grid = graded_grid(1.0, 32, 2.0)
        inc = WienerIncrements.sample(grid, 8, 5, seed=5)
        full = solve_linear(p, grid, increments=inc).x
        parts = [
            LinearProblem(p.op, p.beta, p.sigma, p.xi, None, None, p.horizon),
            LinearProblem(p.op, p.beta, p.sigma, InitialCondition.zeros(8), p.f1, None, p.horizon),
            LinearProblem(p.op, p.beta, p.sigma, InitialCondition.zeros(8), None, p.noise, p.horizon),
        ]
        pieces = sum(solve_linear(q, grid, increments=inc).x for q in parts)
        np.testing.assert_allclose(full, pieces, rtol=1e-12, atol=1e-14)

    def test_single_mode_closed_forms(self):
        # derived: X(t) = e^-t xi + c(1 - e^-t) + OU with unit level, mean and variance checked
        op = SpectralOperator(np.array([1.0]))
        grid = np.linspace(0, 1, 65)
        f = WeightedHolderPath(grid[1:], np.full((64, 1), 2.0), 0.999999999, 0.2, 1.0,
                               regular_part=lambda t: np.full((np.size(t), 1), 2.0))
        noise = make_noise_from_function(lambda t: np.ones((np.size(t), 1)), grid, 0.4, 0.2)
        prob = LinearProblem(op, 0.4, 0.2, InitialCondition(np.array([1.5])), f, noise, 1.0)
        end = solve_linear(prob, grid, 20_000, seed=6).x[:, -1, 0]
        mean = 1.5 * math.exp(-1) + 2 * (1 - math.exp(-1))
        var = (1 - math.exp(-2)) / 2
        assert abs(end.mean() - mean) <= 3 * math.sqrt(var / end.size) + 1e-6
        assert abs(end.var(ddof=1) - var) <= 3 * var * math.sqrt(2 / end.size)

    def test_frac_paths_consistent(self):
        exp = build("cable-linear", modes=8)
        grid = graded_grid(1.0, 16)
        sol = solve_linear(exp.problem, grid, 3, theta_list=(0.4,))
        np.testing.assert_array_equal(sol.frac[0.4], sol.x * sol.op.eigenvalues ** 0.4)

    def test_strict_without_smoothing_rejected(self):
        exp = build("cable-mild-gb", modes=8)
        with pytest.raises(HypothesisError):
            solve_linear(exp.problem, graded_grid(1.0, 8), 2, strict=True)

    def test_beta_window(self):
        op = SpectralOperator(np.array([1.0]))
        prob = LinearProblem(op, 0.6, 0.2, InitialCondition(np.zeros(1)))
        with pytest.raises(HypothesisError):
            solve_linear(prob, graded_grid(1.0, 4), 1)

    def test_h12_7_at_fixed_times(self):
        from spdelab.bounds import rhs_h12_7
        exp = build("cable-linear", modes=16)
        grid = graded_grid(1.0, 64, 2.0)
        sol = solve_linear(exp.problem, grid, 2000, seed=7, strict=True)
        data = linear_bound_data(exp.problem)
        for t in (0.25, 0.5, 1.0):
            i = int(np.argmin(abs(grid - t)))
            sample = np.sum(sol.x[:, i] ** 2, axis=-1) + grid[i] ** 2 * np.sum(sol.ax[:, i] ** 2, axis=-1)
            assert sample.mean() <= rhs_h12_7(data, grid[i]) + 3 * sample.std(ddof=1) / math.sqrt(sample.size)


class TestResiduals:
    def test_zero_problem(self):
        op = SpectralOperator(np.array([1.0, 2.0]))
        sol = solve_linear(homogeneous(op, [0.0, 0.0]), graded_grid(1.0, 8), 2, strict=True)
        assert strict_residual(sol) == 0.0
        assert mild_residual(sol) == 0.0

    def test_homogeneous_single_mode(self):
        # derived: residual is the quadrature error of int lam e^{-lam s} ds
        op = SpectralOperator(np.array([1.0]))
        sol = solve_linear(homogeneous(op, [1.0]), graded_grid(1.0, 512, 2.0), 1, strict=True)
        assert strict_residual(sol) < 1e-3
        assert mild_residual(sol) < 1e-6

    def test_missing_generator(self):
        op = SpectralOperator(np.array([1.0]))
        sol = solve_linear(homogeneous(op, [1.0]), graded_grid(1.0, 8), 1)
        with pytest.raises(ContractError):
            strict_residual(sol)

    def test_cable_halving_ratio(self):
        exp = build("cable-linear")
        fine = graded_grid(1.0, 512, 3.0)
        from spdelab.noise import coarsen_increments
        inc = WienerIncrements.sample(fine, 32, 20, seed=8)
        coarse = coarsen_increments(inc, exp.problem.op.eigenvalues, 2)
        r_fine = strict_residual(solve_linear(exp.problem, fine, increments=inc, strict=True))
        r_coarse = strict_residual(solve_linear(exp.problem, coarse.grid, increments=coarse, strict=True))
        assert r_coarse / r_fine >= 1.8

    def test_fubini_identity_for_stochastic_part(self):
        exp = build("cable-linear", modes=8)
        p = exp.problem
        noise_only = LinearProblem(p.op, p.beta, p.sigma, InitialCondition.zeros(8), None, p.noise, p.horizon)
        res = [strict_residual(solve_linear(noise_only, graded_grid(1.0, n, 3.0), 20, seed=9, strict=True))
               for n in (128, 256)]
        assert res[1] < res[0] and res[1] < 0.05


class TestUniqueness:
    def test_homogeneous_gap_zero(self):
        op = SpectralOperator(np.array([1.0, 4.0]))
        rep = uniqueness_probe(homogeneous(op, [1.0, 1.0]), graded_grid(1.0, 16), 2)
        assert rep.gap == 0.0 and rep.passed

    def test_zero_problem(self):
        op = SpectralOperator(np.array([1.0]))
        rep = uniqueness_probe(homogeneous(op, [0.0]), graded_grid(1.0, 16), 2)
        assert rep.gap == 0.0 and rep.residual_first == 0.0

    def test_cable_gap_within_residuals(self):
        exp = build("cable-linear")
        rep = uniqueness_probe(exp.problem, graded_grid(1.0, 256, 3.0), 20, seed=10)
        assert rep.passed and rep.gap > 0


class TestEstimator:
    def test_fit_transform(self):
        exp = build("cable-linear", modes=8)
        est = LinearSPDESolver(n_steps=32, replicas=4, seed=1).fit(exp.problem)
        assert est.transform(0.5).shape == (4, 33, 8)
        assert est.strict_residual_ > 0
        mean, se = est.moment(0.0)
        assert mean.shape == (33,)
        assert est.get_params()["n_steps"] == 32

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            LinearSPDESolver().transform()

    def test_csv_export(self, tmp_path):
        exp = build("cable-linear", modes=4)
        sol = solve_linear(exp.problem, graded_grid(1.0, 4), 3)
        sol.write_csv(tmp_path / "s.csv", replicas=2)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "replica,time,mode,value" and len(lines) == 1 + 2 * 5 * 4
