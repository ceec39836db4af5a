import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdelab.errors import DomainError, InsufficientDataError, ShapeError
from spdelab.function_spaces import (WeightedHolderPath, embedding_check, graded_grid, holder_norm,
                                     make_forcing, read_path_csv, write_path_csv)

BETA, SIGMA = 0.4, 0.2


def brute_seminorm(times, values, beta, sigma):
    """Independent O(N^2) double loop over all pairs."""
    best = 0.0
    for i in range(times.size):
        for j in range(i):
            t, s = times[i], times[j]
            diff = math.sqrt(sum((a - b) ** 2 for a, b in zip(values[i], values[j])))
            best = max(best, s ** (1 - beta + sigma) * diff / (t - s) ** sigma)
    return best


def power_path(beta=BETA, sigma=SIGMA, n=40, scale=1.0):
    grid = graded_grid(1.0, n, 2.0, include_zero=False)
    return WeightedHolderPath(grid, scale * grid[:, None] ** (beta - 1) * np.array([[1.0, 0.0]]), beta, sigma)


class TestGrid:
    def test_graded_nodes(self):
        np.testing.assert_allclose(graded_grid(2.0, 4, 2.0), 2.0 * (np.arange(5) / 4) ** 2)

    def test_exclude_zero(self):
        assert graded_grid(1.0, 4, 2.0, include_zero=False)[0] == pytest.approx(1 / 16)

    def test_bad_arguments(self):
        with pytest.raises(DomainError):
            graded_grid(1.0, 0)


class TestHolderNorm:
    def test_zero_path(self):
        grid = graded_grid(1.0, 10, include_zero=False)
        rep = holder_norm(WeightedHolderPath(grid, np.zeros((10, 3)), BETA, SIGMA))
        assert rep.weighted_sup == rep.weighted_seminorm == rep.total == 0.0
        np.testing.assert_array_equal(rep.limit_estimate, 0.0)

    def test_pure_power_sup_is_one(self):
        rep = holder_norm(power_path())
        assert rep.weighted_sup == pytest.approx(1.0, rel=1e-12)

    def test_seminorm_matches_closed_form_pairs(self):
        # derived: |t^(b-1) - s^(b-1)| per pair, swept by an independent loop
        path = power_path(n=25)
        t = path.times
        best = max(t[j] ** (1 - BETA + SIGMA) * abs(t[i] ** (BETA - 1) - t[j] ** (BETA - 1)) / (t[i] - t[j]) ** SIGMA
                   for i in range(t.size) for j in range(i))
        assert holder_norm(path).weighted_seminorm == pytest.approx(best, rel=1e-12)

    def test_seminorm_matches_brute_force(self):
        rng = np.random.default_rng(0)
        grid = graded_grid(1.0, 20, 2.0, include_zero=False)
        vals = rng.standard_normal((20, 3))
        rep = holder_norm(WeightedHolderPath(grid, vals, BETA, SIGMA))
        assert rep.weighted_seminorm == pytest.approx(brute_seminorm(grid, vals, BETA, SIGMA), rel=1e-12)

    def test_membership_of_profile_paths(self):
        # the t^(b-1) f(t) recipe with sigma-Holder f vanishing at 0 lies in the space
        grid = graded_grid(1.0, 200, 2.0, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0, 0.5], BETA, SIGMA, profile=lambda t: t ** SIGMA)
        rep = holder_norm(f)
        assert np.isfinite(rep.total) and rep.total > 0

    def test_limit_extrapolation(self):
        # derived: t^(1-b) F(t) = t (1, 0.5) tends to 0 linearly, so quadratic extrapolation is exact
        grid = graded_grid(1.0, 50, 2.0, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0, 0.5], BETA, SIGMA, profile=lambda t: t)
        np.testing.assert_allclose(holder_norm(f).limit_estimate, 0.0, atol=1e-12)

    def test_pointwise_bounds(self):
        grid = graded_grid(1.0, 60, 2.0, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0, -2.0], BETA, SIGMA, profile=lambda t: np.sin(3 * t))
        total = holder_norm(f).total
        norms = f.norms()
        assert np.all(norms <= total * grid ** (BETA - 1) * (1 + 1e-12))
        for i in range(grid.size):
            for j in range(i):
                gap = np.linalg.norm(f.values[i] - f.values[j])
                assert gap <= total * (grid[i] - grid[j]) ** SIGMA * grid[j] ** (BETA - SIGMA - 1) * (1 + 1e-12)

    def test_nested_grids_monotone(self):
        fine = graded_grid(1.0, 64, 2.0, include_zero=False)
        f = make_forcing("power_profile", fine, [1.0], BETA, SIGMA, profile=lambda t: np.sqrt(t) * np.cos(5 * t))
        coarse = f.resample(fine[1::2])
        a, b = holder_norm(coarse), holder_norm(f)
        assert a.weighted_sup <= b.weighted_sup * (1 + 1e-12)
        assert a.weighted_seminorm <= b.weighted_seminorm * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-5, 5).filter(lambda c: c == 0 or abs(c) > 1e-100))
    def test_scaling(self, c):
        path = power_path(n=15)
        base = holder_norm(path).total
        assert holder_norm(path.scaled(c)).total == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)

    def test_too_few_nodes(self):
        with pytest.raises(InsufficientDataError):
            holder_norm(WeightedHolderPath([0.5, 1.0], np.ones((2, 1)), BETA, SIGMA))

    def test_modulus_table(self):
        rep = holder_norm(power_path(n=30))
        assert rep.modulus_times.size == 5 and np.all(rep.modulus_values >= 0)

    def test_invalid_exponents(self):
        with pytest.raises(DomainError):
            WeightedHolderPath([0.5, 1.0], np.ones((2, 1)), 0.2, 0.3)

    def test_nonincreasing_times(self):
        with pytest.raises(ShapeError):
            WeightedHolderPath([0.5, 0.5], np.ones((2, 1)), BETA, SIGMA)


class TestEmbedding:
    def test_zero_path(self):
        grid = graded_grid(1.0, 10, include_zero=False)
        rep = embedding_check(WeightedHolderPath(grid, np.zeros((10, 1)), BETA, SIGMA), 0.3)
        assert rep.norm_low.total == 0.0 and rep.norm_high.total == 0.0

    def test_power_path_finite_and_scaled(self):
        rep = embedding_check(power_path(), 0.3)
        assert rep.finite and rep.sup_bound_holds

    def test_long_horizon_scaling(self):
        grid = graded_grid(4.0, 50, 2.0, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0], BETA, SIGMA, profile=lambda t: t, horizon=4.0)
        rep = embedding_check(f, 0.25)
        assert rep.scale == pytest.approx(4.0 ** 0.15)
        assert rep.sup_bound_holds

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            embedding_check(power_path(), 0.1)


class TestForcing:
    def test_linear_profile(self):
        grid = graded_grid(1.0, 10, include_zero=False)
        f = make_forcing("power_profile", grid, [2.0, 1.0], BETA, SIGMA, profile=lambda t: t)
        np.testing.assert_allclose(f.values, grid[:, None] ** BETA * [2.0, 1.0], rtol=1e-14)

    def test_zero_profile(self):
        grid = graded_grid(1.0, 10, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0], BETA, SIGMA, profile=lambda t: 0 * t)
        assert not np.any(f.values)

    def test_capped_profile_finite(self):
        grid = graded_grid(1.0, 100, include_zero=False)
        f = make_forcing("power_profile", grid, [1.0], BETA, SIGMA,
                         profile=lambda t: np.minimum(t, 0.5) ** SIGMA)
        assert np.isfinite(holder_norm(f).total)

    def test_nonzero_at_origin_rejected(self):
        with pytest.raises(DomainError):
            make_forcing("power_profile", [0.5, 1.0], [1.0], BETA, SIGMA, profile=lambda t: 1 + t)

    def test_csv_round_trip(self, tmp_path):
        path = power_path(n=12)
        write_path_csv(path, tmp_path / "p.csv")
        back = read_path_csv(tmp_path / "p.csv", BETA, SIGMA)
        np.testing.assert_array_equal(back.times, path.times)
        np.testing.assert_array_equal(back.values, path.values)
