import math

import numpy as np
import pytest

from sigfbsde import oracle, sde

# frozen by two independent evaluations: the closed formula below and
# numerical integration of the terminal/minimum joint law
LOOKBACK_REFERENCE = 5.828175


class TestNormCdf:
    def test_symmetry_point(self):
        assert oracle.norm_cdf(0.0) == 0.5

    def test_reflection_identity(self, rng):
        for x in rng.uniform(-4.0, 4.0, size=20):
            assert abs(oracle.norm_cdf(-x) - (1.0 - oracle.norm_cdf(x))) < 1e-12

    def test_upper_quantile(self):
        assert abs(oracle.norm_cdf(1.959964) - 0.975) < 1e-6


class TestLookbackPrice:
    def test_at_the_money_reference_value(self):
        p = oracle.LookbackParams(10.0, 10.0, 0.01, 1.0, 1.0)
        assert abs(oracle.lookback_price(p) - LOOKBACK_REFERENCE) < 5e-4

    def test_zero_remaining_time_pays_intrinsic(self):
        p = oracle.LookbackParams(10.0, 7.0, 0.01, 1.0, 0.0)
        assert oracle.lookback_price(p) == 3.0

    def test_price_is_homogeneous_in_spot_and_minimum(self, rng):
        base = oracle.LookbackParams(10.0, 8.0, 0.05, 0.4, 0.7)
        value = oracle.lookback_price(base)
        for lam in rng.uniform(0.2, 5.0, size=10):
            scaled = oracle.LookbackParams(10.0 * lam, 8.0 * lam, 0.05, 0.4, 0.7)
            assert abs(oracle.lookback_price(scaled) - lam * value) < 1e-9 * lam

    def test_domain_violations_rejected(self):
        with pytest.raises(oracle.OracleDomainError):
            oracle.LookbackParams(10.0, 11.0, 0.01, 1.0, 1.0)
        with pytest.raises(oracle.OracleDomainError):
            oracle.LookbackParams(10.0, 10.0, 0.0, 1.0, 1.0)


class TestQuadraticSolution:
    def test_value_at_origin_is_dimension_thirds(self):
        assert abs(oracle.quadratic_pde_solution(0.0, np.zeros((1, 20)), 1.0)
                   - 20.0 / 3.0) < 1e-12
        assert abs(oracle.quadratic_pde_solution(0.0, np.zeros((1, 100)), 1.0)
                   - 100.0 / 3.0) < 1e-12

    def test_terminal_value_matches_payoff(self, rng):
        for _ in range(5):
            prefix = rng.standard_normal((41, 3))
            batch_states = prefix[None, :, :]
            grid = sde.GridSpec(1.0, 40, 4)
            pb = sde.PathBatch(batch_states, np.zeros((1, 40, 3)), grid, 0)
            payoff = sde.running_integral(pb, np.ones(3))[0, -1] ** 2
            value = oracle.quadratic_pde_solution(1.0, prefix, 1.0)
            assert abs(value - payoff) < 1e-10 * max(1.0, payoff)

    def test_time_domain_checked(self):
        with pytest.raises(oracle.OracleDomainError):
            oracle.quadratic_pde_solution(2.0, np.zeros((3, 1)), 1.0)


class TestAsianEuropeanMc:
    def test_zero_volatility_matches_deterministic_quadrature(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.0)
        grid = sde.GridSpec(1.0, 1000, 20)
        est, se = oracle.asian_european_mc(model, grid, 100.0,
                                           [1.0], 1000, seed=5)
        n, h = grid.n_fine, grid.h
        avg = 100.0 * ((1.0 + 0.05 * h) ** n - 1.0) / (n * 0.05 * h)
        expect = math.exp(-0.05) * (avg - 100.0)
        assert se <= 1e-8  # identical paths, variance is rounding noise
        assert abs(est - expect) < 1e-9
        # the left rule undershoots the continuous bound only slightly
        assert abs(est - 2.418) < 1e-2

    def test_zero_strike_recovers_discounted_average(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.15)
        grid = sde.GridSpec(1.0, 100, 10)
        est, se = oracle.asian_european_mc(model, grid, 0.0, [1.0],
                                           40_000, seed=6)
        expect = 100.0 * (1.0 - math.exp(-0.05)) / 0.05
        assert abs(est - expect) < 3.0 * se + 0.05

    def test_standard_error_halves_with_four_times_paths(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.15)
        grid = sde.GridSpec(1.0, 50, 10)
        _, se_small = oracle.asian_european_mc(model, grid, 100.0, [1.0],
                                               8_000, seed=7)
        _, se_big = oracle.asian_european_mc(model, grid, 100.0, [1.0],
                                             32_000, seed=7)
        ratio = se_small / se_big
        assert 1.6 <= ratio <= 2.4

    def test_path_floor_enforced(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.15)
        with pytest.raises(ValueError):
            oracle.asian_european_mc(model, sde.GridSpec(1.0, 10, 2),
                                     100.0, [1.0], 500, seed=0)


class TestJensenBound:
    def test_reference_parameters(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.15)
        assert abs(oracle.jensen_lower_bound(model, 100.0) - 2.418) < 1e-3

    def test_deep_out_of_the_money_is_zero(self):
        model = sde.ModelSpec.geometric(100.0, 0.05, 0.15)
        assert oracle.jensen_lower_bound(model, 150.0) == 0.0

    def test_zero_rate_limit(self):
        model = sde.ModelSpec.geometric(100.0, 0.0, 0.15)
        assert oracle.jensen_lower_bound(model, 40.0) == 60.0

    def test_geometric_model_required(self):
        with pytest.raises(oracle.OracleDomainError):
            oracle.jensen_lower_bound(sde.ModelSpec.arithmetic_unit(1.0), 0.5)


class TestBermudanDp:
    def test_zero_rate_increasing_payoffs_wait(self):
        assert oracle.bermudan_deterministic_dp([0.0, 1.0, 2.0, 3.0],
                                                0.0, 0.25) == 3.0

    def test_heavy_discounting_exercises_immediately(self):
        assert oracle.bermudan_deterministic_dp([5.0, 6.0, 7.0],
                                                1.9, 0.5) == 5.0

    def test_single_date_returns_terminal(self):
        assert oracle.bermudan_deterministic_dp([4.0], 0.05, 0.1) == 4.0
