"""
Unit tests for the closed-form spectrum, bounds and phase classification.
"""

import math

import numpy as np
import pytest

from core.exceptions import LinearizationError, NonPositiveCoefficientError
from core.scenario import build_scenario, partition_isolated, with_overrides
from core.spectrum import (
    Branch,
    Dominance,
    Phase,
    classify_phase,
    delta_zero_pair,
    eigenvalues,
    exact_squared_magnitudes,
    exact_stability_bound,
    generator_rate,
    linearize,
    make_linearization,
    oscillation_gamma_range,
    oscillation_range_for,
    rho_set,
    saturation,
    small_lr_report,
    stability_iff,
    sufficient_stability,
)

SINGLE_PAIR_RHO_MAX = 0.9942233


@pytest.fixture
def pair_lin():
    """lambda = sigma = mu = 1, p = 1, pt = 0.8, one generated point."""
    return make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=0.8)


@pytest.mark.unit
class TestLinearize:
    def test_coefficients(self, single_pair):
        lin = linearize(single_pair, partition_isolated(single_pair), 0)
        assert lin.a == pytest.approx(1.0)
        assert lin.b == pytest.approx(0.16)
        assert lin.c == pytest.approx(0.8)
        assert lin.m == pytest.approx(0.58)
        assert lin.delta == pytest.approx(0.2)
        assert lin.n_gen == 1

    def test_narrow_width_coefficients(self, a_dominant):
        lin = linearize(a_dominant, partition_isolated(a_dominant), 0)
        assert lin.b == pytest.approx(64.0)
        assert lin.c == pytest.approx(320.0)
        assert lin.m == pytest.approx(32.5)

    def test_unequal_weights_rejected(self):
        s = build_scenario([[0.0]], [1.0], [[0.1], [-0.1]], [0.3, 0.5],
                           width=1.0, eta_d=0.01, eta_g=0.01, lam=1.0)
        with pytest.raises(LinearizationError):
            linearize(s, partition_isolated(s), 0)

    def test_translation_leaves_coefficients_unchanged(self, two_point_region):
        s = two_point_region
        shift = np.full(s.dimension, 7.25)
        moved = build_scenario(s.real.X + shift, s.real.w, s.generated.X + shift, s.generated.w,
                               width=s.sigma, eta_d=s.hyper.eta_d, eta_g=s.hyper.eta_g, lam=s.hyper.lam)
        base = linearize(s, partition_isolated(s), 0)
        shifted = linearize(moved, partition_isolated(moved), 0)
        for name in ("a", "b", "c", "m", "delta"):
            assert getattr(shifted, name) == pytest.approx(getattr(base, name), rel=1e-12)
        assert shifted.n_gen == base.n_gen

    def test_empty_region_rejected(self):
        s = build_scenario([[0.0], [10.0]], [1.0, 1.0], [[0.1]], [0.8],
                           width=1.0, eta_d=0.01, eta_g=0.01, lam=1.0)
        with pytest.raises(LinearizationError):
            linearize(s, partition_isolated(s), 1)


@pytest.mark.unit
class TestEigenvalues:
    def test_single_generated_point_has_no_b(self, pair_lin):
        labels = [nu.label for nu in eigenvalues(pair_lin)]
        assert labels == ["a", "c+", "c-"]

    def test_pair_is_complex_conjugate(self, pair_lin):
        nus = {nu.label: nu.value for nu in eigenvalues(pair_lin)}
        assert nus["c+"] == pytest.approx(complex(0.58, math.sqrt(0.8 - 0.58 ** 2)))
        assert nus["c-"] == pytest.approx(nus["c+"].conjugate())

    def test_multiplicities(self):
        lin = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=0.4, n_gen=2, dimension=2)
        mult = {nu.label: nu.multiplicity for nu in eigenvalues(lin)}
        assert mult == {"a": None, "b": 2, "c+": 2, "c-": 2}

    def test_balanced_region_pair(self):
        lin = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=1.0)
        plus, minus = delta_zero_pair(lin)
        nus = {nu.label: nu.value for nu in eigenvalues(lin)}
        assert plus == pytest.approx(nus["c+"])
        assert minus == pytest.approx(nus["c-"])

    def test_balanced_pair_requires_zero_gap(self, pair_lin):
        with pytest.raises(LinearizationError):
            delta_zero_pair(pair_lin)

    def test_second_point_only_adds_b(self):
        one = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=0.4, n_gen=1, delta=0.2)
        two = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=0.4, n_gen=2)
        assert two.delta == pytest.approx(one.delta)
        reduced = [(nu.label, nu.value) for nu in eigenvalues(two) if nu.label != "b"]
        expected = [(nu.label, nu.value) for nu in eigenvalues(one)]
        assert [label for label, _ in reduced] == [label for label, _ in expected]
        for (_, got), (_, want) in zip(reduced, expected):
            assert got == pytest.approx(want, rel=1e-12)


@pytest.mark.unit
class TestRhoSet:
    def test_single_pair_rates(self, pair_lin):
        report = rho_set(pair_lin, 0.01)
        assert report.rho_a == pytest.approx(0.99)
        assert report.rho_c == pytest.approx(SINGLE_PAIR_RHO_MAX, abs=5e-8)
        assert report.rho_max == pytest.approx(SINGLE_PAIR_RHO_MAX, abs=5e-8)
        assert report.dominant == Dominance.C
        assert report.complex_pair
        assert report.rho_b is None
        assert report.stable

    def test_generator_rate_ignores_ambient_mode(self):
        lin = make_linearization(lam=1.0, sigma=0.05, p_i=1.0, p_tilde=0.8)
        assert rho_set(lin, 0.01).dominant == Dominance.A
        rho_c = 1.0 - 0.01 * (32.5 - math.sqrt(32.5 ** 2 - 320.0))
        assert generator_rate(lin, 0.01) == pytest.approx(rho_c, rel=1e-12)

    def test_b_mode_present_with_two_points(self):
        lin = make_linearization(lam=1.0, sigma=0.05, p_i=1.0, p_tilde=0.4, n_gen=2)
        report = rho_set(lin, 0.01)
        # b = 0.08 / 0.0025 = 32
        assert report.rho_b == pytest.approx(abs(1.0 - 0.01 * 32.0))
        assert generator_rate(lin, 0.01) == pytest.approx(max(report.rho_b, report.rho_c))

    def test_b_dominant_region(self):
        lin = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=0.4, n_gen=2)
        nus = {nu.label: nu.value for nu in eigenvalues(lin)}
        assert nus["a"] == pytest.approx(1.0)
        assert nus["b"] == pytest.approx(0.08)
        assert nus["c+"] == pytest.approx(complex(0.54, 0.32924), abs=1e-5)
        assert nus["c-"] == pytest.approx(complex(0.54, -0.32924), abs=1e-5)

        report = rho_set(lin, 0.01)
        assert report.rho_max == pytest.approx(0.9992, abs=1e-12)
        assert report.dominant == Dominance.B
        assert report.complex_pair

        bound = stability_iff(lin)
        assert bound.bound == pytest.approx(2.0)
        assert bound.binding == "2/a"

    def test_non_positive_step_rejected(self, pair_lin):
        with pytest.raises(ValueError):
            rho_set(pair_lin, 0.0)


@pytest.mark.unit
class TestStability:
    def test_single_pair_bound(self, pair_lin):
        bound = stability_iff(pair_lin)
        assert bound.bound == pytest.approx(1.45)
        assert bound.binding == "(a+b)/c"
        assert bound.stable_for(0.01)
        assert not bound.stable_for(3.0)

    def test_large_lambda_binds_two_over_a(self):
        lin = make_linearization(lam=10.0, sigma=1.0, p_i=1.0, p_tilde=0.8)
        bound = stability_iff(lin)
        assert bound.binding == "2/a"
        assert bound.bound == pytest.approx(0.2)

    def test_two_over_b_only_with_several_points(self):
        lin = make_linearization(lam=0.01, sigma=0.05, p_i=1.0, p_tilde=0.4, n_gen=2)
        assert stability_iff(lin).binding == "2/b"

    def test_zero_gap_is_inapplicable(self):
        lin = make_linearization(lam=1.0, sigma=1.0, p_i=1.0, p_tilde=1.0)
        with pytest.raises(NonPositiveCoefficientError) as exc:
            stability_iff(lin)
        assert "Delta" in exc.value.cause

    def test_exact_bound_agrees_on_complex_branch(self, pair_lin):
        assert exact_stability_bound(pair_lin) == pytest.approx(stability_iff(pair_lin).bound)

    def test_exact_bound_can_be_tighter_on_real_branch(self):
        lin = make_linearization(lam=1.0, sigma=0.05, p_i=1.0, p_tilde=0.8)
        exact = exact_stability_bound(lin)
        assert exact < stability_iff(lin).bound
        assert rho_set(lin, 0.999 * exact).stable
        assert not rho_set(lin, 1.001 * exact).stable

    @pytest.mark.parametrize("n_gen", [2, 3])
    def test_bound_matches_spectral_radius(self, n_gen):
        rng = np.random.default_rng(11 + n_gen)
        checked = 0
        for _ in range(200):
            p = float(rng.uniform(0.2, 2.0))
            p_tilde = float(rng.uniform(0.05, 0.95)) * p / n_gen
            lin = make_linearization(lam=float(10.0 ** rng.uniform(-2, 1)),
                                     sigma=float(10.0 ** rng.uniform(-1.5, 1)),
                                     p_i=p, p_tilde=p_tilde, n_gen=n_gen,
                                     mu=float(10.0 ** rng.uniform(-1, 1)))
            bound = stability_iff(lin).bound
            assert exact_stability_bound(lin) == pytest.approx(bound, rel=1e-9)
            eta = bound * float(rng.uniform(0.2, 1.8))
            if abs(eta - bound) / bound < 1e-6:
                continue
            assert rho_set(lin, eta).stable == (eta < bound)
            checked += 1
        assert checked > 150

    def test_divergent_phase(self, pair_lin):
        phase, branch = classify_phase(pair_lin, 3.0)
        assert phase == Phase.DIVERGENT

    def test_sufficient_condition(self, single_pair):
        assert sufficient_stability(single_pair)
        assert not sufficient_stability(with_overrides(single_pair, eta_d=2.5, mu=1.0))


@pytest.mark.unit
class TestPhases:
    def test_single_pair_phase(self, pair_lin):
        assert classify_phase(pair_lin, 0.01) == (Phase.C_DOMINANT, Branch.COMPLEX)

    def test_narrow_width_phase(self):
        lin = make_linearization(lam=1.0, sigma=0.05, p_i=1.0, p_tilde=0.8)
        assert classify_phase(lin, 0.01) == (Phase.A_DOMINANT, Branch.REAL)

    def test_saturation(self, pair_lin):
        assert not saturation(pair_lin, 0.01)
        narrow = make_linearization(lam=1.0, sigma=0.05, p_i=1.0, p_tilde=0.8)
        assert saturation(narrow, 0.01)

    def test_saturation_boundary_is_strict(self):
        # a = b at sigma = 0.4 / lambda
        lin = make_linearization(lam=1.0, sigma=0.4, p_i=1.0, p_tilde=0.8)
        assert lin.a == pytest.approx(lin.b)
        assert not saturation(lin, 0.01)


@pytest.mark.unit
class TestSmallStep:
    def test_approximate_rate(self, pair_lin):
        approx = small_lr_report(pair_lin, 0.01)
        assert approx.approx_rate == pytest.approx(0.9968)
        assert approx.decays

    def test_matches_exact_magnitudes_for_tiny_steps(self):
        rng = np.random.default_rng(5)
        eta = 1e-4
        for _ in range(20):
            lam = 10 ** rng.uniform(-1, math.log10(5))
            sigma = 10 ** rng.uniform(math.log10(0.5), math.log10(5))
            lin = make_linearization(lam=lam, sigma=sigma, p_i=1.0, p_tilde=0.8, eta_d=eta)
            approx = small_lr_report(lin, eta)
            exact = exact_squared_magnitudes(lin, eta)
            assert abs(exact[0] - approx.mag_a_sq) <= 1e-6
            assert abs(exact[1] - approx.mag_b_sq) <= 1e-6
            assert abs(exact[2] - approx.mag_c_sq) <= 1e-6


@pytest.mark.unit
class TestOscillationRange:
    def test_single_pair_interval(self):
        rng_ = oscillation_gamma_range(lam=1.0, mu=1.0, p_tilde=0.8, p=1.0, delta=0.2)
        (lo, hi), = rng_.intervals
        assert lo == pytest.approx(0.34832, rel=1e-4)
        assert hi == pytest.approx(112.15, rel=1e-4)
        (s_lo, s_hi), = rng_.sigma_intervals()
        assert s_lo == pytest.approx(0.09442, rel=1e-3)
        assert s_hi == pytest.approx(1.6944, rel=1e-4)

    def test_consistent_with_complex_pair(self, pair_lin):
        assert oscillation_range_for(pair_lin).contains(1.0 / pair_lin.sigma ** 2)
        for sigma in np.logspace(-2, 1, 60):
            lin = make_linearization(lam=1.0, sigma=float(sigma), p_i=1.0, p_tilde=0.8)
            assert oscillation_range_for(lin).contains(1.0 / sigma ** 2) == rho_set(lin, 0.01).complex_pair

    @pytest.mark.parametrize("lam,mu,p_tilde,p,delta", [
        (1.0, 1.0, 0.8, 1.0, 0.2),
        (0.3, 2.0, 0.25, 1.5, 1.0),
        (5.0, 0.5, 0.1, 0.4, 0.05),
    ])
    def test_matches_closed_form_roots(self, lam, mu, p_tilde, p, delta):
        scale = lam * lam / (delta * delta * p_tilde * mu)
        spread = 2.0 * p * math.sqrt(1.0 - delta / p)
        (lo, hi), = oscillation_gamma_range(lam=lam, mu=mu, p_tilde=p_tilde, p=p, delta=delta).intervals
        assert lo == pytest.approx(scale * (2.0 * p - delta - spread), rel=1e-9)
        assert hi == pytest.approx(scale * (2.0 * p - delta + spread), rel=1e-9)

    def test_zero_gap_is_half_line(self):
        result = oscillation_gamma_range(lam=2.0, mu=1.0, p_tilde=1.0, p=1.0, delta=0.0)
        assert result.intervals == [(1.0, math.inf)]

    def test_gap_above_mass_is_empty(self):
        result = oscillation_gamma_range(lam=1.0, mu=1.0, p_tilde=0.8, p=1.0, delta=1.5)
        assert result.intervals == []
        assert result.diagnostic

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            oscillation_gamma_range(lam=0.0, mu=1.0, p_tilde=0.8, p=1.0, delta=0.2)
