import numpy as np
import pytest

from sigfbsde import net, oracle, sde, solver
from sigfbsde.sigcore import path_signature, time_augment


def constant_payoff_spec(method="forward", rate=0.1, n_coarse=1, n_fine=4,
                         x0=2.0, **kw):
    """Driftless zero-volatility model: the quadratic payoff is the constant
    (x0 * horizon)^2 while the driver still discounts at ``rate``."""
    defaults = dict(
        method=method,
        model=sde.ModelSpec.geometric(x0, 0.0, 0.0),
        grid=sde.GridSpec(1.0, n_fine, n_coarse),
        driver=solver.DriverKind("discount", rate),
        payoff=solver.PayoffKind("quadratic-integral"),
        depth=2, feature="signature", batch_size=8, iterations=1, seed=0)
    defaults.update(kw)
    return solver.ExperimentSpec(**defaults)


def lookback_spec(**kw):
    defaults = dict(
        method="forward",
        model=sde.ModelSpec.geometric(10.0, 0.01, 1.0),
        grid=sde.GridSpec(1.0, 100, 10),
        driver=solver.DriverKind("discount", 0.01),
        payoff=solver.PayoffKind("lookback"),
        depth=3, feature="signature", batch_size=64, iterations=50, seed=0)
    defaults.update(kw)
    return solver.ExperimentSpec(**defaults)


def amerasian_spec(**kw):
    defaults = dict(
        method="reflected",
        model=sde.ModelSpec.geometric(100.0, 0.05, 0.15),
        grid=sde.GridSpec(1.0, 100, 10),
        driver=solver.DriverKind("discount", 0.05),
        payoff=solver.PayoffKind("asian-basket-call", strike=100.0),
        depth=2, feature="signature", batch_size=64, iterations=5, seed=0)
    defaults.update(kw)
    return solver.ExperimentSpec(**defaults)


def force_constant_output(state, value):
    for params in state.nets:
        params.weights[-1][:] = 0.0
        params.biases[-1][:] = value


class TestSpecValidation:
    def test_reflected_needs_exercise_payoff(self):
        with pytest.raises(solver.SpecError):
            lookback_spec(method="reflected")

    def test_embedding_must_reduce_dimension(self):
        with pytest.raises(solver.SpecError):
            solver.ExperimentSpec(
                method="forward",
                model=sde.ModelSpec.arithmetic_unit(0.0, dim=3),
                grid=sde.GridSpec(1.0, 10, 5),
                driver=solver.DriverKind("zero"),
                payoff=solver.PayoffKind("quadratic-integral"),
                depth=2, embed_dim=3)

    def test_unknown_method_rejected(self):
        with pytest.raises(solver.SpecError):
            lookback_spec(method="sideways")


class TestFeatures:
    def test_first_feature_is_zero_for_every_path(self):
        spec = lookback_spec()
        state = solver.init_state(spec)
        batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, 5)
        features, cache = solver.features_for_batch(state, batch, spec)
        assert cache is None
        assert np.all(features[0] == 0.0)
        assert features.shape == (10, 64, spec.feature_width)

    def test_identity_embedding_reproduces_plain_features(self):
        spec = lookback_spec(batch_size=8)
        state = solver.init_state(spec)
        batch = sde.simulate_batch(spec.model, spec.grid, 8, 5)
        plain, _ = solver.features_for_batch(state, batch, spec)
        state.embedding = net.EmbeddingParams(np.eye(1), np.zeros(1))
        embedded, cache = solver.features_for_batch(state, batch, spec)
        assert cache is not None
        # block-combined and sequential scans associate differently
        np.testing.assert_allclose(embedded, plain, rtol=1e-9, atol=1e-12)

    def test_streamed_features_match_from_scratch_prefix(self):
        spec = lookback_spec(batch_size=4)
        state = solver.init_state(spec)
        batch = sde.simulate_batch(spec.model, spec.grid, 4, 5)
        features, _ = solver.features_for_batch(state, batch, spec)
        grid = spec.grid
        times = np.arange(grid.n_fine + 1) * grid.h
        for n in (1, 4, 9):
            for j in (0, 3):
                prefix = time_augment(times[:n * grid.fine_per_segment + 1],
                                      batch.states[j, :n * grid.fine_per_segment + 1])
                scratch = path_signature(prefix, spec.depth).flatten()
                np.testing.assert_allclose(features[n, j], scratch,
                                           rtol=1e-12, atol=1e-13)

    def test_log_features_width(self):
        spec = lookback_spec(feature="log-signature", batch_size=4)
        state = solver.init_state(spec)
        batch = sde.simulate_batch(spec.model, spec.grid, 4, 5)
        features, _ = solver.features_for_batch(state, batch, spec)
        assert features.shape[-1] == spec.feature_width == 5


class TestForwardIteration:
    def test_degenerate_loss_is_squared_distance(self):
        # one coarse step, zero approximators, constant payoff
        spec = constant_payoff_spec(y0_init=1.0)
        state = solver.init_state(spec)
        g = float((2.0 * 1.0) ** 2)  # constant path value 2, unit horizon
        _, loss, _ = solver.forward_iteration(state, spec, 7, update=False)
        expect = (1.0 * (1.0 + 0.1 * 1.0) - g) ** 2
        assert abs(loss - expect) < 1e-12

    def test_one_step_discounted_minimiser(self):
        spec = constant_payoff_spec(y0_init=3.0, iterations=4000)
        report = solver.train(spec)
        g = 4.0
        target = g / 1.1
        assert abs(report.final_estimate - target) < 5e-3

    def test_first_update_moves_towards_payoff(self):
        spec = constant_payoff_spec(y0_init=1.0)
        state = solver.init_state(spec)
        _, _, estimate = solver.forward_iteration(state, spec, 7)
        # gradient is negative (payoff above), Adam step is +lr
        assert abs(estimate - (1.0 + spec.learning_rate)) < 1e-6

    def test_martingale_preservation_with_fixed_nets(self):
        # zero driver: terminal mean equals the initial value within noise
        spec = solver.ExperimentSpec(
            method="forward",
            model=sde.ModelSpec.arithmetic_unit(0.0),
            grid=sde.GridSpec(1.0, 60, 6),
            driver=solver.DriverKind("zero"),
            payoff=solver.PayoffKind("quadratic-integral"),
            depth=2, batch_size=512, iterations=1, seed=2, y0_init=0.4)
        state = solver.init_state(spec)
        for n, params in enumerate(state.nets):
            state.nets[n] = net.init_mlp(params.spec, 100 + n, zero_output=False)
        batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, 31)
        features, _ = solver.features_for_batch(state, batch, spec)
        ys, _, _ = solver.forward_rollout(state, spec, batch, features)
        gains = ys[:, -1] - ys[:, 0]
        bound = 3.0 * gains.std(ddof=1) / np.sqrt(spec.batch_size)
        assert abs(gains.mean()) <= bound


class TestBackwardIteration:
    def test_zero_volatility_variance_is_exactly_zero(self):
        spec = constant_payoff_spec(method="backward", n_coarse=2, n_fine=8)
        state = solver.init_state(spec)
        _, loss, estimate = solver.backward_iteration(state, spec, 3)
        assert loss == 0.0
        # two explicit discount steps on the constant payoff 4
        assert abs(estimate - 4.0 * (1.0 - 0.05) ** 2) < 1e-12

    def test_unit_nets_telescope_terminal_value(self):
        # dX = dW, g = X_T, approximators pinned at one: the rolled-back
        # value cancels every increment and lands on x0 for every path
        model = sde.ModelSpec.arithmetic_unit(1.5)
        grid = sde.GridSpec(1.0, 40, 8)
        spec = solver.ExperimentSpec(
            method="backward", model=model, grid=grid,
            driver=solver.DriverKind("zero"),
            payoff=solver.PayoffKind("quadratic-integral"),
            depth=2, batch_size=32, iterations=1, seed=4)
        state = solver.init_state(spec)
        force_constant_output(state, 1.0)
        batch = sde.simulate_batch(model, grid, 32, 17)
        features, _ = solver.features_for_batch(state, batch, spec)
        _, coarse_incs = sde.coarsen(batch)
        y = batch.states[:, -1, 0].copy()
        for n in range(grid.n_coarse, 0, -1):
            y = y - coarse_incs[:, n - 1, 0]
        np.testing.assert_allclose(y, 1.5, rtol=0, atol=1e-12)

    def test_estimate_is_batch_mean(self):
        spec = amerasian_spec(method="backward")
        state = solver.init_state(spec)
        batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, 11)
        features, _ = solver.features_for_batch(state, batch, spec)
        ys, _, _, _ = solver.backward_rollout(state, spec, batch, features,
                                              reflect=False)
        _, _, estimate = solver.backward_iteration(state, spec, 11,
                                                   update=False)
        assert abs(estimate - ys[:, 0].mean()) < 1e-14


class TestReflectedIteration:
    def test_floor_holds_at_every_date(self):
        spec = amerasian_spec(iterations=3)
        state = solver.init_state(spec)
        for it in range(3):
            solver.reflected_iteration(state, spec, 100 + it)
        batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, 999)
        features, _ = solver.features_for_batch(state, batch, spec)
        ys, _, _, _ = solver.backward_rollout(state, spec, batch, features,
                                              reflect=True)
        exercise = spec.payoff.exercise_values(batch)
        assert np.min(ys - exercise) >= 0.0

    def test_zero_volatility_matches_dynamic_programming(self):
        spec = amerasian_spec(model=sde.ModelSpec.geometric(100.0, 0.05, 0.0))
        state = solver.init_state(spec)
        _, _, estimate = solver.reflected_iteration(state, spec, 55,
                                                    update=False)
        batch = sde.simulate_batch(spec.model, spec.grid, 1, 55)
        exercise = spec.payoff.exercise_values(batch)[0]
        dp = oracle.bermudan_deterministic_dp(exercise, 0.05, spec.grid.dt)
        assert abs(estimate - dp) < 1e-10


class TestTrain:
    def test_zero_iterations_reports_initial_estimate(self):
        spec = lookback_spec(iterations=0, y0_init=4.2)
        report = solver.train(spec)
        assert report.losses == [] and report.estimates == []
        assert report.final_estimate == 4.2

    def test_zero_iterations_backward_evaluates_once(self):
        spec = amerasian_spec(method="backward", iterations=0)
        report = solver.train(spec)
        assert report.iterations == 0
        assert np.isfinite(report.final_estimate)

    def test_degenerate_backward_stops_at_first_iteration(self):
        spec = constant_payoff_spec(method="backward", iterations=50,
                                    loss_margin=1e-30)
        report = solver.train(spec)
        assert report.iterations == 1
        assert report.losses[0] == 0.0

    def test_non_finite_loss_aborts_with_metadata(self):
        spec = lookback_spec(y0_init=1e200, iterations=3)
        with pytest.raises(solver.SolverAbort) as err:
            solver.train(spec)
        assert err.value.method == "forward"

    def test_training_is_reproducible(self):
        spec = lookback_spec(iterations=10, batch_size=16)
        a = solver.train(spec)
        b = solver.train(spec)
        assert a.estimates == b.estimates and a.losses == b.losses


class TestProbe:
    def test_classify_trend_labels(self):
        up = np.linspace(0.0, 1.0, 50)
        down = up[::-1]
        flat = np.full(50, 0.3)
        assert solver.classify_trend(up, 0.1) == "increase-guess"
        assert solver.classify_trend(down, 0.1) == "decrease-guess"
        assert solver.classify_trend(flat, 0.1) == "keep"

    def test_probe_flags_low_guess(self):
        spec = lookback_spec(batch_size=32)
        assert solver.probe_initial_y0(spec, 1.0, 40) == "increase-guess"

    def test_probe_flags_high_guess(self):
        spec = lookback_spec(batch_size=32)
        assert solver.probe_initial_y0(spec, 30.0, 40) == "decrease-guess"

    def test_probe_requires_forward_method(self):
        with pytest.raises(solver.SpecError):
            solver.probe_initial_y0(amerasian_spec(), 5.0, 10)


class TestAggregate:
    def test_identical_values_collapse_interval(self):
        reports = [solver.RunReport("forward", 0, final_estimate=5.0)
                   for _ in range(50)]
        summary = solver.aggregate_runs(reports)
        assert summary.mean == 5.0
        assert summary.ci_low == summary.ci_high == 5.0

    def test_two_point_mixture_mean(self):
        reports = [solver.RunReport("backward", i, final_estimate=v)
                   for i, v in enumerate([5.77] * 25 + [5.79] * 25)]
        summary = solver.aggregate_runs(reports)
        assert abs(summary.mean - 5.78) < 1e-12
        assert summary.ci_low < 5.78 < summary.ci_high

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            solver.aggregate_runs([])

    def test_single_run_degenerate_interval(self):
        summary = solver.aggregate_runs(
            [solver.RunReport("forward", 0, final_estimate=1.23)])
        assert summary.ci_low == summary.ci_high == 1.23
