import dataclasses
import math

import numpy as np
import pytest

from pdmp_cdf import build_grid, catalog
from pdmp_cdf.errors import ConfigError
from pdmp_cdf.model import (
    ExitSpec,
    ModeSpec,
    ProblemSpec,
    RateMatrix,
    ScalarField,
    VectorField,
)
from pdmp_cdf.simulate import (
    EmpiricalCdf,
    TrajectorySample,
    default_horizon,
    empirical_cdf,
    estimate_mean,
    run_batch,
    sample_trajectory,
    write_samples_csv,
)

EX1 = catalog.example1()


class TestSingleTrajectories:
    def test_forced_exit_without_switch(self):
        # find a stream whose first switch comes after 0.1 time units
        for idx in range(20):
            s = sample_trajectory(EX1, (np.array([0.9]), 0), seed=123, index=idx)
            if not s.switch_times or s.switch_times[0] > 0.1:
                break
        assert s.exited
        assert abs(s.cost - 0.1) < 1e-12
        assert abs(s.exit_point[0] - 1.0) < 1e-12

    def test_no_randomness_without_switching(self):
        spec = dataclasses.replace(EX1, rates=RateMatrix(np.zeros((2, 2))))
        costs = [sample_trajectory(spec, (np.array([0.3]), 0), seed=s).cost for s in range(5)]
        assert all(c == costs[0] for c in costs)
        assert costs[0] == pytest.approx(0.7, abs=1e-12)

    def test_seed_reproducibility_bitwise(self):
        a = sample_trajectory(EX1, (np.array([0.4]), 0), seed=9, index=2)
        b = sample_trajectory(EX1, (np.array([0.4]), 0), seed=9, index=2)
        assert a.cost == b.cost
        assert a.switch_times == b.switch_times
        assert a.modes == b.modes

    def test_matches_batch_row(self):
        batch = run_batch(EX1, (np.array([0.4]), 0), 6, seed=9, record=True)
        single = sample_trajectory(EX1, (np.array([0.4]), 0), seed=9, index=3)
        row = batch.samples[3]
        assert single.cost == row.cost
        assert single.switch_times == row.switch_times

    def test_switch_times_increase_and_costs_accumulate(self):
        s = sample_trajectory(EX1, (np.array([0.5]), 0), seed=1, index=0)
        assert all(a < b for a, b in zip(s.switch_times, s.switch_times[1:]))
        cps = s.cost_checkpoints
        assert all(a[1] <= b[1] for a, b in zip(cps, cps[1:]))


class TestBatchStatistics:
    def test_no_switch_probability(self):
        batch = run_batch(EX1, (np.array([0.75]), 0), 100000, seed=42)
        p = empirical_cdf(batch).evaluate(0.25 + 1e-12)
        target = math.exp(-0.5)
        assert abs(p - target) <= 3 * math.sqrt(target * (1 - target) / 100000)

    def test_all_exit_for_the_sailboat(self):
        batch = run_batch(EX1, (np.array([0.5]), 0), 20000, seed=3)
        assert batch.exited.all()
        assert not batch.escaped.any()

    def test_escape_through_closed_face(self):
        spec = ProblemSpec(dim=1, lo=EX1.lo, hi=EX1.hi,
                           exit_set=ExitSpec("faces", faces=("x_min",)),
                           modes=EX1.modes, rates=RateMatrix(np.zeros((2, 2))))
        batch = run_batch(spec, (np.array([0.5]), 0), 100, seed=0)
        assert batch.escaped.all()
        assert np.all(np.isinf(batch.costs))

    def test_mode_occupancy_matches_stationary_distribution(self):
        # immobile modes, asymmetric switching: fraction of time per mode
        # approaches the stationary law of the rate matrix
        rates = RateMatrix([[0.0, 3.0], [1.0, 0.0]])
        modes = tuple(
            ModeSpec(VectorField.constant([0.0]), ScalarField.constant(1.0),
                     ScalarField.constant(0.0)) for _ in range(2))
        spec = ProblemSpec(dim=1, lo=EX1.lo, hi=EX1.hi, exit_set=ExitSpec("none"),
                           modes=modes, rates=rates)
        batch = run_batch(spec, (np.array([0.5]), 0), 400, seed=11, horizon_cap=50.0)
        assert batch.censored.all()
        fractions = batch.occupancy[:, 0] / batch.occupancy.sum(axis=1)
        pi0 = 1.0 / (1.0 + 3.0)  # stationary mass of the faster-leaving mode
        se = fractions.std(ddof=1) / math.sqrt(fractions.size)
        assert abs(fractions.mean() - pi0) <= 3 * se

    def test_exact_exit_costs_for_piecewise_constant_dynamics(self):
        spec = dataclasses.replace(EX1, rates=RateMatrix(np.zeros((2, 2))))
        batch = run_batch(spec, (np.array([0.3]), 0), 50, seed=5)
        assert np.all(batch.costs == batch.costs[0])
        assert batch.costs[0] == (1.0 - 0.3) / 1.0

    def test_2d_starts(self):
        spec = catalog.example3()
        batch = run_batch(spec, (np.array([0.5, 0.5]), 2), 2000, seed=8)
        assert batch.exited.all()
        assert batch.costs.min() >= 0.5 - 1e-12  # at least the straight-line time


class TestTabulatedDynamics:
    def test_integrated_exit_time(self):
        # velocity tabulated as constant +1: same answer as the closed form
        spec_base = catalog.example1()
        grid = build_grid(spec_base, 0.01, 0.01, 1.0)
        vals = np.ones((grid.n_nodes, 1))
        modes = (
            ModeSpec(VectorField("tabulated", values=vals), ScalarField.constant(1.0),
                     ScalarField.constant(0.0)),
        )
        spec = ProblemSpec(dim=1, lo=spec_base.lo, hi=spec_base.hi,
                           exit_set=ExitSpec("boundary"), modes=modes,
                           rates=RateMatrix(np.zeros((1, 1))))
        s = sample_trajectory(spec, (np.array([0.4]), 0), seed=0, grid=grid)
        assert s.exited
        assert abs(s.cost - 0.6) < 1e-6


class TestEmpiricalCdf:
    def make(self, costs, n_total=None):
        costs = np.asarray(costs, dtype=float)
        return EmpiricalCdf(costs[np.isfinite(costs)], n_total or costs.size)

    def test_counting(self):
        f = self.make([1.0, 2.0, 2.0, 4.0])
        assert f.evaluate(2.0) == 0.75
        assert f.evaluate(0.5) == 0.0
        assert f.evaluate(4.0) == 1.0

    def test_censoring_rule(self):
        f = self.make([1.0, 1.0, 1.0, 1.0, math.inf])
        assert f.evaluate(1.0) == 0.8
        assert f.evaluate(1e9) == 0.8

    def test_dkw_band_value(self):
        f = EmpiricalCdf(np.zeros(1), 100000)
        assert f.dkw_epsilon(0.01) == pytest.approx(0.00514709, abs=1e-6)

    def test_right_continuous_step(self):
        f = self.make([1.0])
        assert f.evaluate(1.0 - 1e-12) == 0.0
        assert f.evaluate(1.0) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            empirical_cdf([])


class TestMeanEstimate:
    def test_two_samples(self):
        samples = [TrajectorySample(np.zeros(1), 0, cost=c, exited=True) for c in (1.0, 3.0)]
        mean, se = estimate_mean(samples)
        assert mean == 2.0
        assert se == pytest.approx(1.0)

    def test_constant_samples_zero_se(self):
        samples = [TrajectorySample(np.zeros(1), 0, cost=2.0, exited=True)] * 4
        mean, se = estimate_mean(samples)
        assert (mean, se) == (2.0, 0.0)

    def test_censored_rejected(self):
        samples = [TrajectorySample(np.zeros(1), 0, cost=math.inf, censored=True)]
        with pytest.raises(ConfigError):
            estimate_mean(samples)


class TestCsvDump:
    def test_row_shape(self, tmp_path):
        batch = run_batch(EX1, (np.array([0.4]), 0), 10, seed=1)
        path = tmp_path / "samples.csv"
        write_samples_csv(batch, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "sample,x0_0,mode0,exited,escaped,censored,cost,switches"
        assert len(lines) == 11


class TestHorizon:
    def test_default_scale(self):
        assert default_horizon(EX1) == pytest.approx(50.0)

    def test_immobile_needs_explicit_cap(self):
        modes = (ModeSpec(VectorField.constant([0.0]), ScalarField.constant(1.0),
                          ScalarField.constant(0.0)),)
        spec = ProblemSpec(dim=1, lo=EX1.lo, hi=EX1.hi, exit_set=ExitSpec("none"),
                           modes=modes, rates=RateMatrix(np.zeros((1, 1))))
        with pytest.raises(ConfigError):
            run_batch(spec, (np.array([0.5]), 0), 3, seed=0)
        batch = run_batch(spec, (np.array([0.5]), 0), 3, seed=0, horizon_cap=1.0)
        assert batch.censored.all()
