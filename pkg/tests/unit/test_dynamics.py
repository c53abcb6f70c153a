"""
Unit tests for the GDA simulation engines.
"""

import dataclasses

import numpy as np
import pandas as pd
import pytest

from core.dynamics import (
    DiscriminatorState,
    EliminatedEngine,
    SimulationMode,
    TrajectoryStatus,
    discriminator_gradient,
    discriminator_hessian,
    equilibrium_residual,
    export_trajectory_csv,
    loss_eval,
    optimal_discriminator,
    simulate,
    step_eliminated,
    step_explicit,
    step_local,
)
from core.exceptions import SimulationDivergedError
from core.scenario import (
    build_scenario,
    equilibrium_points,
    partition_isolated,
    with_generated,
    with_overrides,
)


@pytest.mark.unit
class TestDiscriminatorState:
    def test_zero_state(self, rbf_1d):
        f = DiscriminatorState.zero(rbf_1d)
        assert f.size == 0
        assert f.norm_sq() == 0.0
        np.testing.assert_array_equal(f.evaluate([[0.0], [1.0]]), [0.0, 0.0])

    def test_plus_merges_coincident_centers(self, rbf_1d):
        f = DiscriminatorState.zero(rbf_1d).plus([[0.0], [0.0], [1.0]], [1.0, -0.8, 0.5])
        assert f.size == 2
        np.testing.assert_allclose(sorted(f.coefs), [0.2, 0.5])

    def test_plus_prunes_cancelled_terms(self, rbf_1d):
        f = DiscriminatorState.zero(rbf_1d).plus([[0.0], [0.0]], [1.0, -1.0])
        assert f.size == 0

    def test_norm_sq(self, rbf_1d):
        f = DiscriminatorState.zero(rbf_1d).plus([[0.0], [1.0]], [1.0, -1.0])
        assert f.norm_sq() == pytest.approx(2.0 - 2.0 * np.exp(-0.5))

    def test_hessian_of_single_term(self, rbf_2d):
        f = DiscriminatorState.zero(rbf_2d).plus([[0.0, 0.0]], [2.0])
        np.testing.assert_allclose(f.hessian([0.0, 0.0]), -2.0 * np.eye(2))


@pytest.mark.unit
class TestSteps:
    def test_generator_reads_old_discriminator(self, single_pair):
        f0 = DiscriminatorState.zero(single_pair.kernel)
        f1, X1 = step_explicit(f0, single_pair.generated.X, single_pair)
        np.testing.assert_array_equal(X1, single_pair.generated.X)
        assert f1.size == 2

    def test_first_step_coefficients(self, single_pair):
        f1, _ = step_explicit(DiscriminatorState.zero(single_pair.kernel),
                              single_pair.generated.X, single_pair)
        np.testing.assert_allclose(f1.coefs, [0.01, -0.008])

    def test_explicit_and_eliminated_agree(self, random_scenarios):
        for s in random_scenarios(5, seed=11):
            f, X = DiscriminatorState.zero(s.kernel), s.generated.X
            history = [X]
            for t in range(1, 60):
                f, X = step_explicit(f, X, s, t=t)
                history.append(step_eliminated(history, s))
                np.testing.assert_allclose(history[-1], X, atol=1e-10, rtol=0)

    def test_engine_matches_stateless_form(self, two_point_region):
        engine = EliminatedEngine(two_point_region, two_point_region.generated.X)
        history = [two_point_region.generated.X]
        for _ in range(40):
            history.append(step_eliminated(history, two_point_region))
            np.testing.assert_allclose(engine.step(), history[-1], atol=1e-12, rtol=0)

    def test_engine_discriminator_matches_explicit(self, single_pair):
        f, X = DiscriminatorState.zero(single_pair.kernel), single_pair.generated.X
        engine = EliminatedEngine(single_pair, X)
        for t in range(1, 30):
            f, X = step_explicit(f, X, single_pair, t=t)
            engine.step()
        grid = np.linspace(-1, 1, 7)[:, None]
        np.testing.assert_allclose(engine.discriminator().evaluate(grid), f.evaluate(grid), atol=1e-12)

    def test_eliminated_needs_history(self, single_pair):
        with pytest.raises(ValueError):
            step_eliminated([], single_pair)

    def test_exploding_discriminator_raises(self, single_pair):
        s = with_overrides(single_pair, eta_d=3.0, mu=1.0)
        f, X = DiscriminatorState.zero(s.kernel), s.generated.X
        with pytest.raises(SimulationDivergedError):
            for t in range(1, 2000):
                f, X = step_explicit(f, X, s, t=t)

    def test_local_step_on_single_region_is_explicit(self, single_pair):
        f0 = optimal_discriminator(single_pair)
        fa, Xa = step_explicit(f0, single_pair.generated.X, single_pair)
        fb, Xb = step_local(f0, single_pair.generated.X, 0, single_pair)
        np.testing.assert_array_equal(Xa, Xb)
        np.testing.assert_array_equal(fa.coefs, fb.coefs)


@pytest.mark.unit
class TestEquilibrium:
    def test_residual_zero_at_equilibrium(self, two_region_far):
        X_star = equilibrium_points(two_region_far, partition_isolated(two_region_far))
        assert equilibrium_residual(X_star, two_region_far) < 1e-12

    def test_residual_positive_off_equilibrium(self, single_pair):
        assert equilibrium_residual(single_pair.generated.X, single_pair) > 1e-3

    def test_optimal_discriminator_merges_to_single_term(self, single_pair):
        s = with_generated(single_pair, [[0.0]])
        f_star = optimal_discriminator(s)
        assert f_star.size == 1
        assert f_star.coefs[0] == pytest.approx(0.2)

    def test_optimal_discriminator_curvature_at_true_point(self, two_point_region):
        s = two_point_region
        f_star = optimal_discriminator(s, equilibrium_points(s, partition_isolated(s)))
        np.testing.assert_allclose(discriminator_gradient(f_star, [[0.0, 0.0]]), [[0.0, 0.0]], atol=1e-15)
        # Delta = 0.2, lambda = sigma = 1
        np.testing.assert_allclose(discriminator_hessian(f_star, [0.0, 0.0]), -0.2 * np.eye(2), atol=1e-12)

    def test_loss_at_optimum_is_half_mmd_over_lambda(self, two_point_region):
        from core.kernel import mmd_squared

        s = two_point_region
        f_star = optimal_discriminator(s)
        mmd = mmd_squared(s.kernel, s.real.X, s.real.w, s.generated.X, s.generated.w)
        assert loss_eval(f_star, s.generated.X, s) == pytest.approx(mmd / (2.0 * s.hyper.lam), rel=1e-12)

    def test_optimal_discriminator_is_stationary(self, two_point_region):
        s = two_point_region
        f_star = optimal_discriminator(s)
        best = loss_eval(f_star, s.generated.X, s)
        rng = np.random.default_rng(0)
        for _ in range(10):
            bumped = type(f_star)(f_star.kernel, f_star.centers,
                                  f_star.coefs + 1e-3 * rng.normal(size=f_star.size))
            assert loss_eval(bumped, s.generated.X, s) < best

    def test_fixed_point_does_not_drift(self, two_point_region):
        s = two_point_region
        X_star = equilibrium_points(s, partition_isolated(s))
        f = optimal_discriminator(s, X_star)
        X = X_star
        for t in range(1, 101):
            f_next, X_next = step_explicit(f, X, s, t=t)
            assert np.max(np.abs(X_next - X)) <= 1e-12
            grid = np.array([[0.0, 0.0], [0.5, -0.5]])
            assert np.max(np.abs(f_next.evaluate(grid) - f.evaluate(grid))) <= 1e-12
            f, X = f_next, X_next


@pytest.mark.unit
class TestSimulate:
    def test_record_stride_includes_last_step(self, single_pair):
        record = simulate(single_pair, 25, "explicit", record_every=10)
        assert record.times.tolist() == [0, 10, 20, 25]
        assert record.status == TrajectoryStatus.COMPLETED

    def test_modes_agree_on_single_region(self, single_pair):
        runs = [simulate(single_pair, 200, mode, record_every=50, with_loss=False) for mode in SimulationMode]
        for other in runs[1:]:
            np.testing.assert_allclose(other.final_points, runs[0].final_points, atol=1e-10)

    def test_far_regions_local_matches_full(self, two_region_far):
        full = simulate(two_region_far, 1000, "explicit", record_every=100, with_loss=False)
        local = simulate(two_region_far, 1000, "local", record_every=100, with_loss=False)
        for a, b in zip(full.steps, local.steps):
            np.testing.assert_allclose(a.points, b.points, atol=1e-8)

    def test_local_error_shrinks_with_kernel_floor(self):
        T = 200
        floors, gaps = [], []
        for L in (4.0, 5.0, 6.0):
            s = build_scenario([[0.0], [L]], [1.0, 1.0], [[0.2], [L - 0.3]], [0.8, 0.8],
                               width=1.0, eta_d=0.01, eta_g=0.01, lam=1.0)
            full = simulate(s, T, "explicit", with_loss=False)
            local = simulate(s, T, "local", with_loss=False)
            gaps.append(max(np.max(np.abs(a.points - b.points)) for a, b in zip(full.steps, local.steps)))
            floors.append(partition_isolated(s).kernel_floor)
        assert floors[0] > floors[1] > floors[2]
        assert gaps[0] > gaps[1] > gaps[2] > 0.0
        assert all(gap <= T * floor for gap, floor in zip(gaps, floors))

    def test_translation_moves_trajectory_rigidly(self, two_point_region):
        shift = np.array([3.0, -1.5])
        s = two_point_region
        moved = build_scenario(s.real.X + shift, s.real.w, s.generated.X + shift, s.generated.w,
                               width=s.sigma, eta_d=s.hyper.eta_d, eta_g=s.hyper.eta_g, lam=s.hyper.lam)
        base = simulate(s, 300, "explicit", record_every=50)
        shifted = simulate(moved, 300, "explicit", record_every=50)
        for a, b in zip(base.steps, shifted.steps):
            np.testing.assert_allclose(b.points - shift, a.points, atol=1e-10)
            assert b.loss == pytest.approx(a.loss, abs=1e-12)

    def test_record_is_immutable(self, single_pair):
        record = simulate(single_pair, 5)
        assert isinstance(record.steps, tuple)
        with pytest.raises(dataclasses.FrozenInstanceError):
            record.status = TrajectoryStatus.DIVERGED

    def test_near_regions_local_departs_from_full(self, two_region_near):
        full = simulate(two_region_near, 1000, "explicit", record_every=1000, with_loss=False)
        local = simulate(two_region_near, 1000, "local", record_every=1000, with_loss=False)
        assert np.max(np.abs(full.final_points - local.final_points)) > 1e-6

    def test_unstable_step_size_diverges(self, single_pair):
        s = with_overrides(single_pair, eta_d=3.0, mu=1.0)
        record = simulate(s, 5000, "explicit", record_every=100, with_loss=False)
        assert record.status == TrajectoryStatus.DIVERGED
        assert record.diverged_at is not None

    def test_strict_mode_raises_with_record(self, single_pair):
        s = with_overrides(single_pair, eta_d=3.0, mu=1.0)
        with pytest.raises(SimulationDivergedError) as exc:
            simulate(s, 5000, "explicit", record_every=100, with_loss=False, strict=True)
        assert exc.value.record.status == TrajectoryStatus.DIVERGED

    def test_loss_columns(self, single_pair):
        record = simulate(single_pair, 5, "explicit")
        assert record.steps[0].loss == 0.0
        assert record.steps[0].mmd_sq > 0.0
        assert all(np.isfinite(st.disc_norm_sq) for st in record.steps)

    def test_invalid_arguments(self, single_pair):
        with pytest.raises(ValueError):
            simulate(single_pair, 0)
        with pytest.raises(ValueError):
            simulate(single_pair, 10, record_every=0)
        with pytest.raises(ValueError):
            simulate(single_pair, 10, "eliminated", f0=optimal_discriminator(single_pair))

    def test_csv_export(self, two_point_region, tmp_output):
        record = simulate(two_point_region, 20, "explicit", record_every=5)
        path = export_trajectory_csv(record, tmp_output / "traj.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ['t', 'loss', 'disc_norm_sq', 'max_dist',
                                       'x_1_1', 'x_1_2', 'x_2_1', 'x_2_2', 'mmd_sq']
        assert frame['t'].tolist() == [0, 5, 10, 15, 20]
        assert frame['x_1_1'].iloc[0] == pytest.approx(0.1)

    def test_csv_is_deterministic(self, single_pair, tmp_output):
        a = export_trajectory_csv(simulate(single_pair, 30, record_every=3), tmp_output / "a.csv")
        b = export_trajectory_csv(simulate(single_pair, 30, record_every=3), tmp_output / "b.csv")
        assert a.read_bytes() == b.read_bytes()
