import math
import warnings

import numpy as np
import pytest

from trimode.chaos import (
    LyapunovConfig,
    LyapunovEstimate,
    lyapunov_fundamental,
    lyapunov_map,
    lyapunov_reset,
    poincare_section,
)
from trimode.model import (
    CanonicalCoords,
    ClassicalState,
    EnergyShellSpec,
    ModelParams,
    canonical_to_zeta,
    mf_energy,
    mf_energy_canonical,
    solve_m_for_energy,
)

POLAR = ClassicalState(np.array([0, 1, 0], dtype=complex))
P_FREE = ModelParams(1.0, 1.0, 0.0, 100)
P_MIX = ModelParams(1.0, 1.0, 0.15, 100)
P_CHAOS = ModelParams(1.0, 1.0, 0.5, 100)

#: shortened averaging for unit tests; acceptance uses longer runs
FAST = LyapunovConfig(t_total=400.0, t_min=80.0)


def shell_state(rho0, theta_s, params, energy=1.005):
    m = solve_m_for_energy(rho0, theta_s, 0.0, energy, params)
    assert m is not None
    return canonical_to_zeta(CanonicalCoords(rho0, theta_s, m, 0.0))


def curve_distance(points, m, energy, params):
    """First-order distance of (rho0, theta_s) points from the H = E contour."""
    h = 1e-7
    gap = mf_energy_canonical(points[:, 0], points[:, 1], m, 0.0, params) - energy
    d_rho = (
        mf_energy_canonical(points[:, 0] + h, points[:, 1], m, 0.0, params)
        - mf_energy_canonical(points[:, 0] - h, points[:, 1], m, 0.0, params)
    ) / (2 * h)
    d_theta = (
        mf_energy_canonical(points[:, 0], points[:, 1] + h, m, 0.0, params)
        - mf_energy_canonical(points[:, 0], points[:, 1] - h, m, 0.0, params)
    ) / (2 * h)
    return np.abs(gap) / np.hypot(d_rho, d_theta)


class TestLyapunovConfig:
    def test_requires_enough_reset_intervals(self):
        with pytest.raises(ValueError):
            LyapunovConfig(t_min=95.0, t_total=100.0)

    def test_requires_small_separation(self):
        with pytest.raises(ValueError):
            LyapunovConfig(xi0=0.5)

    def test_estimate_agreement_helper(self):
        a = LyapunovEstimate(0.5, 0.01, "reset")
        b = LyapunovEstimate(0.52, 0.01, "fundamental")
        assert a.agrees_with(b)
        assert not a.agrees_with(LyapunovEstimate(0.9, 0.01, "reset"))


class TestPoincareSection:
    def test_fixed_point_warns_and_records_nothing(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            section = poincare_section([POLAR], 50.0, P_FREE)
        assert len(section.crossings[0]) == 0
        assert any("no section crossings" in str(w.message) for w in caught)

    def test_integrable_crossings_lie_on_the_conserved_contour(self):
        state = canonical_to_zeta(CanonicalCoords(0.3, 0.0, 0.1, 0.0))
        energy = mf_energy(state, P_FREE)
        section = poincare_section([state], 500.0, P_FREE)
        points = section.crossings[0]
        assert len(points) > 5
        assert section.max_theta_m_residual < 1e-8
        assert section.max_energy_residual < 1e-6
        assert curve_distance(points, 0.1, energy, P_FREE).max() < 1e-6

    def test_one_sided_sections_are_subsets(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        both = poincare_section([state], 300.0, P_CHAOS)
        up = poincare_section([state], 300.0, P_CHAOS, direction="positive")
        down = poincare_section([state], 300.0, P_CHAOS, direction="negative")
        assert len(up.crossings[0]) + len(down.crossings[0]) == len(both.crossings[0])
        assert 0 < len(up.crossings[0]) < len(both.crossings[0])

    def test_chaotic_section_spreads_over_area(self):
        regular = canonical_to_zeta(CanonicalCoords(0.3, 0.0, 0.1, 0.0))
        chaotic = shell_state(0.3, 2.5, P_CHAOS)
        sec_reg = poincare_section([regular], 2000.0, P_FREE)
        sec_cha = poincare_section([chaotic], 2000.0, P_CHAOS)
        assert sec_cha.occupancy_area() > 4.0 * sec_reg.occupancy_area()

    def test_common_energy_is_detected(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        section = poincare_section([state], 100.0, P_CHAOS)
        assert section.energy == pytest.approx(1.005, abs=1e-9)

    def test_unknown_direction_rejected(self):
        with pytest.raises(ValueError):
            poincare_section([POLAR], 10.0, P_FREE, direction="sideways")


class TestLyapunovEstimators:
    def test_integrable_point_has_tiny_exponent(self):
        state = shell_state(0.3, 2.5, P_FREE)
        est = lyapunov_reset(state, LyapunovConfig(t_total=600.0, t_min=100.0), P_FREE)
        assert abs(est.lam) < 0.02
        assert abs(est.lam) < 2.0 * est.std_error + 0.01

    def test_chaotic_point_has_positive_exponent(self):
        state = shell_state(0.2, -2 * math.pi / 3, P_MIX)
        est = lyapunov_reset(state, FAST, P_MIX)
        assert est.lam > 3.0 * est.std_error

    def test_stable_fixed_point_neighborhood(self):
        # perturb the polar state slightly; dynamics stays regular
        state = ClassicalState.from_unnormalized(np.array([1e-3, 1.0, -1e-3], dtype=complex))
        est = lyapunov_reset(state, FAST, P_FREE)
        assert est.lam < 2.0 * est.std_error

    def test_methods_agree_on_a_chaotic_point(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        reset = lyapunov_reset(state, FAST, P_CHAOS)
        tangent = lyapunov_fundamental(state, FAST, P_CHAOS)
        assert reset.lam > 0.1 and tangent.lam > 0.1
        assert reset.agrees_with(tangent)

    def test_fundamental_fixed_point(self):
        est = lyapunov_fundamental(POLAR, FAST, P_FREE)
        assert est.lam < 2.0 * est.std_error

    def test_seed_invariance_within_errors(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        a = lyapunov_reset(state, LyapunovConfig(t_total=300.0, t_min=60.0, seed=1), P_CHAOS)
        b = lyapunov_reset(state, LyapunovConfig(t_total=300.0, t_min=60.0, seed=2), P_CHAOS)
        assert a.agrees_with(b)

    def test_separation_scale_invariance(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        a = lyapunov_reset(state, LyapunovConfig(t_total=300.0, t_min=60.0, xi0=1e-8), P_CHAOS)
        b = lyapunov_reset(state, LyapunovConfig(t_total=300.0, t_min=60.0, xi0=5e-9), P_CHAOS)
        assert a.agrees_with(b)

    def test_chaotic_estimate_stable_under_doubling_time(self):
        state = shell_state(0.3, 2.5, P_CHAOS)
        a = lyapunov_fundamental(state, LyapunovConfig(t_total=300.0, t_min=60.0), P_CHAOS)
        b = lyapunov_fundamental(state, LyapunovConfig(t_total=600.0, t_min=60.0), P_CHAOS)
        assert a.lam > 0.0 and b.lam > 0.0
        assert a.agrees_with(b)


class TestLyapunovMap:
    def test_empty_map_when_energy_unreachable(self):
        shell = EnergyShellSpec(50.0, (4, 4))
        result = lyapunov_map(shell, FAST, P_FREE)
        assert not result.populated.any()
        assert result.estimate(0, 0) is None

    def test_integrable_shell_is_regular(self):
        shell = EnergyShellSpec(1.005, (6, 6))
        result = lyapunov_map(shell, LyapunovConfig(t_total=300.0, t_min=60.0), P_FREE)
        populated = result.populated
        assert populated.sum() > 3
        assert np.nanmax(np.abs(result.lam)) < 0.03

    def test_chaotic_shell_is_mostly_positive(self):
        shell = EnergyShellSpec(1.005, (6, 6))
        result = lyapunov_map(shell, LyapunovConfig(t_total=300.0, t_min=60.0), P_CHAOS)
        values = result.lam[result.populated]
        assert len(values) > 3
        assert (values > 0.1).mean() >= 0.8
        est = result.estimate(*np.argwhere(result.populated)[0])
        assert est is not None and est.method == "reset"

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            lyapunov_map(EnergyShellSpec(1.005, (4, 4)), FAST, P_FREE, method="qr")
