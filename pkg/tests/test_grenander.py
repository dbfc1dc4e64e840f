import math

import numpy as np
import pytest

from monodens import (
    BoundsAB,
    FitError,
    InfeasibleError,
    MonotoneHistogram,
    WeightedCells,
    brute_force_mle_oracle,
    compress,
    discretize_to_net,
    fit_constrained,
    fit_unconstrained,
    fit_unconstrained_floored,
    validate,
)
from monodens.experts import ExpertGridParams, validate_expert_membership
from monodens.evaluation import good_set_check, GoodSetParams, static_log_loss
from monodens.grenander import fit_log_likelihood

from conftest import draw_stream, random_linear, random_monotone_histogram


def maxmin_grenander_heights(cells: WeightedCells) -> np.ndarray:
    """Independent oracle: min-max slope formula for the antitonic fit."""
    counts, widths, _ = cells.cell_arrays()
    n = cells.n
    m = widths.size
    heights = np.empty(m)
    for j in range(m):
        best = math.inf
        for lo in range(j + 1):
            worst = -math.inf
            for hi in range(j, m):
                slope = counts[lo : hi + 1].sum() / widths[lo : hi + 1].sum()
                worst = max(worst, slope)
            best = min(best, worst)
        heights[j] = best / n
    return heights


class TestWeightedCells:
    def test_from_sample_merges_duplicates(self):
        cells = WeightedCells.from_sample([0.5, 0.2, 0.5])
        assert cells.values.tolist() == [0.2, 0.5]
        assert cells.counts.tolist() == [1.0, 2.0]
        assert cells.n == 3

    def test_rejects_bad_values(self):
        with pytest.raises(FitError):
            WeightedCells(np.array([0.0, 0.5]), np.array([1.0, 1.0]))
        with pytest.raises(FitError):
            WeightedCells(np.array([]), np.array([]))


class TestUnconstrained:
    def test_single_point(self):
        f = fit_unconstrained(WeightedCells.from_sample([0.5]))
        assert f.breakpoints.tolist() == [0.0, 0.5, 1.0]
        assert np.allclose(f.heights, [2.0, 0.0])

    def test_two_points_merge(self):
        f = fit_unconstrained(WeightedCells.from_sample([0.25, 0.5]))
        assert np.allclose(f.heights, [2.0, 2.0, 0.0])
        s = f.simplified()
        assert s.breakpoints.tolist() == [0.0, 0.5, 1.0]
        assert np.allclose(s.heights, [2.0, 0.0])

    def test_matches_maxmin_oracle(self, rng):
        for _ in range(10):
            xs = rng.random(rng.integers(2, 8))
            cells = WeightedCells.from_sample(xs)
            f = fit_unconstrained(cells)
            oracle = maxmin_grenander_heights(cells)
            assert np.max(np.abs(f.heights - oracle)) <= 1e-9

    def test_three_point_loss_matches_oracle(self):
        cells = WeightedCells.from_sample([0.2, 0.4, 0.9])
        f = fit_unconstrained(cells)
        oracle = maxmin_grenander_heights(cells)
        ll_fit = fit_log_likelihood(f, cells)
        counts, _, breaks = cells.cell_arrays()
        ll_oracle = float(np.sum(cells.counts * np.log(oracle[: cells.r])))
        assert ll_fit == pytest.approx(ll_oracle, abs=1e-9)

    def test_zero_after_largest_observation(self, rng):
        f = fit_unconstrained(WeightedCells.from_sample(rng.random(20) * 0.8))
        assert f.heights[-1] == 0.0


class TestConstrained:
    def test_single_point_kkt(self):
        # maximize theta1 s.t. 0.5 theta1 + 0.5 theta2 = 1, theta2 >= 0.5
        f = fit_constrained(WeightedCells.from_sample([0.5]), BoundsAB(0.5, 3.0))
        assert np.allclose(f.heights, [1.5, 0.5], atol=1e-9)

    def test_degenerate_bounds_give_uniform(self, rng):
        f = fit_constrained(WeightedCells.from_sample(rng.random(7)), BoundsAB(1.0, 1.0))
        assert np.allclose(f.heights, 1.0)

    def test_infeasible_bounds(self):
        cells = WeightedCells.from_sample([0.5])
        with pytest.raises(InfeasibleError):
            fit_constrained(cells, BoundsAB(1.2, 2.0))
        with pytest.raises(InfeasibleError):
            fit_constrained(cells, BoundsAB(0.2, 0.9))

    def test_unbounded_b_rejected(self):
        with pytest.raises(FitError):
            fit_constrained(WeightedCells.from_sample([0.5]), BoundsAB(0.5, math.inf))

    def test_three_points_vs_oracle(self):
        cells = WeightedCells.from_sample([0.2, 0.4, 0.9])
        bounds = BoundsAB(0.1, 5.0)
        f = fit_constrained(cells, bounds)
        oracle = brute_force_mle_oracle(cells, bounds, 60)
        ll_f = fit_log_likelihood(f, cells)
        ll_o = fit_log_likelihood(oracle, cells)
        step = (bounds.b - bounds.a) / 60
        assert ll_f >= ll_o - 1e-12
        assert ll_f <= ll_o + 2 * step

    def test_binding_upper_bound_fills_trailing_cell(self):
        # concentrated sample: theta1 pins at b and the empty trailing cell
        # absorbs the slack above a (normalization multiplier degenerates to 0)
        f = fit_constrained(WeightedCells.from_sample([0.15]), BoundsAB(0.25, 4.0))
        assert np.allclose(f.heights, [4.0, (1.0 - 0.6) / 0.85], atol=1e-12)

    def test_wide_bounds_match_unconstrained_loss(self, rng):
        xs = rng.random(50)
        cells = WeightedCells.from_sample(xs)
        wide = fit_constrained(cells, BoundsAB(1e-12, 1e9))
        free = fit_unconstrained(cells)
        assert fit_log_likelihood(wide, cells) == pytest.approx(
            fit_log_likelihood(free, cells), abs=1e-9
        )

    def test_validates_and_knots_at_order_statistics(self, rng):
        bounds = BoundsAB(0.2, 4.0)
        xs = draw_stream(rng, random_linear(rng), 40)
        cells = WeightedCells.from_sample(xs)
        f = fit_constrained(cells, bounds)
        assert validate(f, bounds, tol=1e-9).is_valid
        allowed = set(np.round(np.concatenate(([0.0], cells.values, [1.0])), 12))
        assert set(np.round(f.breakpoints, 12)) <= allowed

    def test_loss_optimality_over_random_members(self, rng):
        bounds = BoundsAB(0.3, 3.0)
        xs = draw_stream(rng, random_linear(rng), 60)
        cells = WeightedCells.from_sample(xs)
        f = fit_constrained(cells, bounds)
        best = fit_log_likelihood(f, cells)
        for _ in range(200):
            h = random_monotone_histogram(rng, bounds)
            assert best >= fit_log_likelihood(h, cells) - 1e-9

    def test_floored_fallback(self, rng):
        xs = rng.random(30) * 0.7
        f = fit_unconstrained_floored(WeightedCells.from_sample(xs), 0.05)
        assert f.heights[-1] > 0.0
        assert f.total_mass() == pytest.approx(1.0, abs=1e-12)


class TestOracle:
    def test_single_point_grid(self):
        cells = WeightedCells.from_sample([0.5])
        oracle = brute_force_mle_oracle(cells, BoundsAB(0.5, 3.0), 100)
        assert np.allclose(oracle.heights, [1.5, 0.5], atol=(3.0 - 0.5) / 100 * 2)

    def test_degenerate_bounds(self):
        cells = WeightedCells.from_sample([0.3, 0.6])
        oracle = brute_force_mle_oracle(cells, BoundsAB(1.0, 1.0), 10)
        assert np.allclose(oracle.heights, 1.0)

    def test_loss_contract_two_points(self):
        cells = WeightedCells.from_sample([0.25, 0.75])
        bounds = BoundsAB(0.2, 2.0)
        oracle = brute_force_mle_oracle(cells, bounds, 200)
        solver = fit_constrained(cells, bounds)
        step = (bounds.b - bounds.a) / 200
        # loss = -log-likelihood; the oracle can never beat the solver by
        # more than numerical slack, and must come within the grid step
        assert -fit_log_likelihood(oracle, cells) >= -fit_log_likelihood(solver, cells) - 2 * step

    def test_too_large_instance_rejected(self):
        cells = WeightedCells.from_sample(np.linspace(0.1, 0.7, 6))
        with pytest.raises(FitError):
            brute_force_mle_oracle(cells, BoundsAB(0.1, 5.0), 200)


class TestCompress:
    def test_uniform_fixed_point(self):
        u = MonotoneHistogram.uniform()
        h = compress(u, 3, BoundsAB(0.5, 2.0))
        assert h.breakpoints.tolist() == [0.0, 1.0]
        assert h.heights.tolist() == [1.0]

    def test_single_block_example(self):
        f = MonotoneHistogram([0.0, 0.25, 0.5, 1.0], [2.0, 1.0, 0.5])
        bounds = BoundsAB(0.5, 2.0)
        h = compress(f, 1, bounds)
        assert h.num_cells == 1
        assert np.allclose(h.heights, [1.0])
        grid = np.linspace(0.0, 0.999, 200)
        gap = np.abs(np.log(f.pdf(grid)) - np.log(h.pdf(grid)))
        assert np.max(gap) <= 2 * bounds.V / 1 + 1e-12

    def test_infinite_b_rejected(self):
        with pytest.raises(Exception):
            compress(MonotoneHistogram.uniform(), 2, BoundsAB(0.5, math.inf))

    @pytest.mark.parametrize("k", [2, 5])
    def test_block_guarantees_on_random_fits(self, rng, k):
        bounds = BoundsAB(0.1, 10.0)
        for _ in range(5):
            xs = draw_stream(rng, random_linear(rng), 50)
            f = fit_constrained(WeightedCells.from_sample(xs), bounds)
            h = compress(f, k, bounds)
            V = bounds.V
            assert h.num_cells <= k
            drops = -np.diff(np.log(h.heights))
            assert np.all(drops >= V / k - 1e-9)
            assert h.breakpoints[-2] <= f.breakpoints[-2] + 1e-15
            mids = 0.5 * (f.breakpoints[:-1] + f.breakpoints[1:])
            gap = np.abs(np.log(f.pdf(mids)) - np.log(h.pdf(mids)))
            assert np.max(gap) <= 2 * V / k + 1e-9
            n = len(xs)
            lf = static_log_loss(f, xs)
            lh = static_log_loss(h, xs)
            assert abs(lf - lh) <= 2 * n * V / k + 1e-9


class TestDiscretize:
    def _params(self, n, k, bounds):
        return ExpertGridParams(n=n, k=k, beta=3.0, bounds=bounds)

    def test_grid_fixed_point(self):
        # f already on both grids with the final height free
        bounds = BoundsAB(0.5, 2.0)
        params = ExpertGridParams(n=4, k=2, beta=3.0, bounds=bounds)
        t1 = 64 * params.delta_b  # 0.25 exactly on the grid
        theta1 = math.exp(math.log(0.5) + bounds.V * 256 * params.delta_b)  # top rung, = 2
        theta2 = (1.0 - theta1 * t1) / (1.0 - t1)
        f = MonotoneHistogram([0.0, t1, 1.0], [theta1, theta2])
        g = discretize_to_net(f, params, gamma=1.0)
        assert np.allclose(g.breakpoints, f.breakpoints)
        assert np.allclose(g.heights, f.heights)

    def test_left_rounds_breakpoint(self):
        bounds = BoundsAB(0.5, 2.0)
        params = ExpertGridParams(n=4, k=2, beta=3.0, bounds=bounds)
        delta = params.delta_b
        t1 = 0.3  # off-grid
        theta1 = 1.8
        theta2 = (1.0 - theta1 * t1) / (1.0 - t1)
        f = MonotoneHistogram([0.0, t1, 1.0], [theta1, theta2])
        g = discretize_to_net(f, params, gamma=1.0)
        assert g.breakpoints[1] == pytest.approx(math.floor(t1 / delta) * delta, abs=1e-15)
        assert validate_expert_membership(g, params).ok

    def test_precondition_errors_are_named(self):
        bounds = BoundsAB(0.5, 2.0)
        params = ExpertGridParams(n=4, k=2, beta=3.0, bounds=bounds)
        f3 = MonotoneHistogram([0.0, 0.2, 0.5, 1.0], [1.6, 1.0, 0.76], renormalize=True)
        with pytest.raises(FitError, match="bin count"):
            discretize_to_net(f3, params, gamma=1.0)
        flat = MonotoneHistogram([0.0, 0.3, 1.0], [1.05, 0.978571428571], renormalize=True)
        with pytest.raises(FitError, match="log-height drop"):
            discretize_to_net(flat, params, gamma=1.0)
        # k below V makes V/k >= 1
        tight = ExpertGridParams(n=4, k=1, beta=3.0, bounds=BoundsAB(0.1, 10.0))
        with pytest.raises(FitError, match="V/k"):
            discretize_to_net(MonotoneHistogram.uniform(), tight, gamma=1.0)

    def test_pipeline_loss_bound(self, rng):
        # compressed constrained fits on good-set streams, widened bounds
        n, k = 40, 4
        q = random_linear(rng)
        for _ in range(3):
            xs = draw_stream(rng, q, n)
            if not good_set_check(xs, n, GoodSetParams(3.0, 2.0)).is_member:
                continue
            a0, b0 = 0.5, 2.0
            fit = fit_constrained(WeightedCells.from_sample(xs), BoundsAB(a0, b0))
            V = math.log(b0 / a0) * k / (k - 1)
            bounds = BoundsAB(b0 * math.exp(-V), b0)
            comp = compress(fit, k, bounds)
            params = ExpertGridParams(n=n, k=k, beta=3.0, bounds=bounds)
            g = discretize_to_net(comp, params, gamma=2.0)
            assert validate_expert_membership(g, params).ok
            budget = n * params.delta_b * bounds.V + (k - 1) * bounds.V
            assert abs(static_log_loss(comp, xs) - static_log_loss(g, xs)) <= budget + 1e-9
