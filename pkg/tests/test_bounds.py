import dataclasses
import math

import numpy as np
import pytest

from pdmp_cdf import build_grid, catalog
from pdmp_cdf.bounds import (
    default_rate_grid,
    fixed_rate_sweep,
    optimal_rates_pointwise,
    solve_bounds,
    solve_min_cost_bounds,
)
from pdmp_cdf.cdf_solver import solve_cdf
from pdmp_cdf.errors import ConfigError
from pdmp_cdf.model import RateBounds, RateMatrix


@pytest.fixture(scope="module")
def ex4():
    spec = catalog.example4()
    grid = build_grid(spec, 5e-3, 5e-3, 1.0)
    return spec, grid


RB = RateBounds.uniform(2, 1.0, 4.0)


class TestPointwiseRates:
    def test_minimizer_drains_negative_gaps(self):
        rates = optimal_rates_pointwise(np.array([0.0, -0.3]), RB, "min", 0)
        assert rates[1] == 4.0

    def test_tie_at_zero_takes_upper(self):
        rates = optimal_rates_pointwise(np.array([0.0, 0.0]), RB, "min", 0)
        assert rates[1] == 4.0
        rates = optimal_rates_pointwise(np.array([0.0, 0.0]), RB, "max", 0)
        assert rates[1] == 4.0

    def test_maximizer_feeds_positive_gaps(self):
        rates = optimal_rates_pointwise(np.array([0.0, 0.3]), RB, "max", 0)
        assert rates[1] == 4.0
        rates = optimal_rates_pointwise(np.array([0.0, -0.3]), RB, "max", 0)
        assert rates[1] == 1.0


class TestBoundPair:
    def test_ordering_and_cdf_shape(self, ex4):
        spec, grid = ex4
        pair = solve_bounds(spec, grid)
        assert np.all(pair.lower.values <= pair.upper.values + 1e-12)
        for field in (pair.lower, pair.upper):
            assert field.values.min() >= 0.0
            assert field.values.max() <= 1.0 + 1e-12
            assert np.all(np.diff(field.values, axis=1) >= -1e-12)

    def test_exit_node_saturates(self, ex4):
        spec, grid = ex4
        pair = solve_bounds(spec, grid)
        assert np.all(pair.upper.values[:, :, grid.exit_mask] == 1.0)

    def test_degenerate_interval_collapses(self, ex4):
        spec, grid = ex4
        degenerate = dataclasses.replace(spec, rates=RateBounds.uniform(2, 2.0, 2.0))
        pair = solve_bounds(degenerate, grid)
        plain = solve_cdf(catalog.example1(), grid)
        assert np.abs(pair.lower.values - plain.values).max() <= 1e-12
        assert np.abs(pair.upper.values - plain.values).max() <= 1e-12

    def test_brackets_every_fixed_rate_solution(self, ex4):
        spec, grid = ex4
        pair = solve_bounds(spec, grid)
        for rm in default_rate_grid((1.0, 2.5, 4.0)):
            field = solve_cdf(spec, grid, rates=rm)
            assert (pair.lower.values - field.values).max() <= 1e-10
            assert (field.values - pair.upper.values).max() <= 1e-10

    def test_widening_interval_widens_bracket(self, ex4):
        spec, grid = ex4
        narrow = solve_bounds(dataclasses.replace(spec, rates=RateBounds.uniform(2, 1.5, 3.0)), grid)
        wide = solve_bounds(dataclasses.replace(spec, rates=RateBounds.uniform(2, 1.0, 4.0)), grid)
        assert (narrow.lower.values - wide.lower.values).min() >= -1e-12
        assert (wide.upper.values - narrow.upper.values).min() >= -1e-12


class TestMinCostBounds:
    def test_degenerate_interval_matches_plain(self, ex4):
        spec, grid = ex4
        from pdmp_cdf.cdf_solver import solve_min_cost
        degenerate = dataclasses.replace(spec, rates=RateBounds.uniform(2, 2.0, 2.0))
        mcb = solve_min_cost_bounds(degenerate, grid)
        plain = solve_min_cost(catalog.example1(), grid)
        assert np.abs(mcb.s0 - plain.s0).max() <= 1e-12
        assert np.abs(mcb.w0_upper - plain.w0).max() <= 1e-12
        assert np.abs(mcb.w0_lower - plain.w0).max() <= 1e-12

    def test_characteristic_closed_forms(self, ex4):
        # best case decays at the slowest rate, worst case at the fastest
        spec, grid = ex4
        mcb = solve_min_cost_bounds(spec, grid)
        k = round(0.75 / grid.dx[0])
        assert abs(mcb.w0_upper[0, k] - math.exp(-0.25)) < 0.01
        assert abs(mcb.w0_lower[0, k] - math.exp(-1.0)) < 0.01
        assert np.all(mcb.w0_lower <= mcb.w0_upper + 1e-12)


class TestFixedRateSweep:
    def test_single_matrix_equals_plain_solve(self, ex4):
        spec, grid = ex4
        rm = RateMatrix.uniform(2, 2.0)
        field = fixed_rate_sweep(spec, grid, [rm])[0]
        plain = solve_cdf(spec, grid, rates=rm)
        assert np.array_equal(field.values, plain.values)

    def test_default_grid_is_bracketed(self, ex4):
        spec, grid = ex4
        pair = solve_bounds(spec, grid)
        fields = fixed_rate_sweep(spec, grid, default_rate_grid())
        assert len(fields) == 16
        for field in fields:
            assert (pair.lower.values - field.values).max() <= 1e-10
            assert (field.values - pair.upper.values).max() <= 1e-10

    def test_swapped_rates_mirror(self, ex4):
        spec, grid = ex4
        fa = solve_cdf(spec, grid, rates=RateMatrix([[0, 1], [3, 0]]))
        fb = solve_cdf(spec, grid, rates=RateMatrix([[0, 3], [1, 0]]))
        assert np.abs(fa.values[0] - fb.values[1][:, ::-1]).max() <= 1e-12
        assert np.abs(fa.values[1] - fb.values[0][:, ::-1]).max() <= 1e-12

    def test_out_of_bounds_matrix_rejected(self, ex4):
        spec, grid = ex4
        with pytest.raises(ConfigError):
            fixed_rate_sweep(spec, grid, [RateMatrix.uniform(2, 5.0)])

    def test_parallel_matches_serial(self, ex4):
        spec, grid = ex4
        rms = default_rate_grid((1.0, 4.0))
        serial = fixed_rate_sweep(spec, grid, rms, max_workers=1)
        parallel = fixed_rate_sweep(spec, grid, rms, max_workers=4)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.values, b.values)
