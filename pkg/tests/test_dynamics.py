import math

import numpy as np
import pytest

from trimode.dynamics import (
    IntegratorConfig,
    TrajectoryRecord,
    VariationalState,
    eom_rhs,
    integrate,
    integrate_ensemble,
    integrate_ensemble_variational,
    integrate_variational,
    jacobian_real,
    real_to_zeta,
    variational_rhs,
    zeta_to_real,
)
from trimode.model import (
    CanonicalCoords,
    ClassicalState,
    ModelParams,
    canonical_to_zeta,
    mf_energy_zeta_array,
)

from conftest import random_states

POLAR = ClassicalState(np.array([0, 1, 0], dtype=complex))


class TestEomRhs:
    def test_polar_state_is_a_fixed_point_without_drive(self):
        p = ModelParams(1.0, 1.0, 0.0, 100)
        assert np.allclose(eom_rhs(POLAR, p), 0.0)

    def test_drive_pumps_the_side_modes(self):
        p = ModelParams(1.0, 1.0, 0.4, 100)
        dz = eom_rhs(POLAR, p)
        assert dz[1] == pytest.approx(0.0)
        expected = -1j * p.r / math.sqrt(2.0)
        assert dz[0] == pytest.approx(expected)
        assert dz[2] == pytest.approx(expected)

    def test_norm_is_conserved_analytically(self, rng):
        p = ModelParams(1.0, 1.0, 0.7, 100)
        zetas = random_states(rng, 1000)
        from trimode.dynamics import _rhs_complex

        dz = _rhs_complex(zetas, p)
        norm_rate = np.sum((np.conj(zetas) * dz).real, axis=1)
        assert np.max(np.abs(norm_rate)) < 1e-14


class TestJacobian:
    def test_matches_central_finite_differences(self, rng):
        p = ModelParams(1.0, 1.0, 0.3, 100)
        from trimode.dynamics import _rhs_complex

        def f(y):
            return zeta_to_real(_rhs_complex(real_to_zeta(y), p))

        for zeta in random_states(rng, 5):
            y = zeta_to_real(zeta)
            jac = jacobian_real(zeta, p)
            fd = np.empty((6, 6))
            h = 1e-6
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                fd[:, j] = (f(y + e) - f(y - e)) / (2.0 * h)
            assert np.max(np.abs(jac - fd)) < 1e-6

    def test_flow_is_divergence_free(self, rng):
        p = ModelParams(1.0, 1.0, 0.5, 100)
        for zeta in random_states(rng, 5):
            assert abs(np.trace(jacobian_real(zeta, p))) < 1e-13

    def test_variational_rhs_at_fixed_point(self):
        p = ModelParams(1.0, 1.0, 0.0, 100)
        v = VariationalState.initial(POLAR)
        dy, dphi = variational_rhs(v, p)
        assert np.allclose(dy, 0.0)
        assert np.allclose(dphi, jacobian_real(POLAR.zeta, p))

    def test_fundamental_matrix_determinant_is_conserved(self, rng):
        # Hamiltonian flow in the real pairs is symplectic, so det Phi = 1;
        # checked on the integrable side where Phi stays well conditioned
        p = ModelParams(1.0, 1.0, 0.0, 100)
        zetas = random_states(rng, 10)
        _, phis = integrate_ensemble_variational(
            zetas, IntegratorConfig(), p, np.array([0.0, 100.0])
        )
        dets = np.linalg.det(phis[-1])
        assert np.max(np.abs(dets - 1.0)) < 1e-6

    def test_determinant_also_early_in_chaotic_flow(self, rng):
        p = ModelParams(1.0, 1.0, 0.5, 100)
        zetas = random_states(rng, 5)
        _, phis = integrate_ensemble_variational(
            zetas, IntegratorConfig(), p, np.array([0.0, 10.0])
        )
        dets = np.linalg.det(phis[-1])
        assert np.max(np.abs(dets - 1.0)) < 1e-6


class TestIntegrate:
    def test_fixed_point_stays_put(self):
        p = ModelParams(1.0, 1.0, 0.0, 100)
        record = integrate(POLAR, 100.0, IntegratorConfig(), p)
        assert np.max(np.abs(record.zetas - POLAR.zeta)) < 1e-10

    def test_magnetization_conserved_without_drive(self, rng):
        p = ModelParams(1.0, 1.0, 0.0, 100)
        zetas = random_states(rng, 5)
        out = integrate_ensemble(zetas, 1000.0, IntegratorConfig(), p, np.linspace(0, 1000, 201))
        m = np.abs(out[:, :, 0]) ** 2 - np.abs(out[:, :, 2]) ** 2
        assert np.max(np.abs(m - m[0])) < 1e-8

    @pytest.mark.parametrize("r", [0.0, 0.15, 0.5])
    def test_energy_drift_within_budget(self, rng, r):
        p = ModelParams(1.0, 1.0, r, 100)
        state = ClassicalState.from_unnormalized(random_states(rng, 1)[0])
        record = integrate(state, 1000.0, IntegratorConfig(), p, t_eval=np.linspace(0, 1000, 101))
        assert record.energy_drift < 1e-8
        assert record.norm_drift < 1e-8

    def test_time_reversal_returns_to_start(self, rng):
        p = ModelParams(1.0, 1.0, 0.5, 100)
        state = ClassicalState.from_unnormalized(random_states(rng, 1)[0])
        forward = integrate(state, 30.0, IntegratorConfig(), p, t_eval=[0.0, 30.0])
        turned = ClassicalState.from_unnormalized(forward.zetas[-1])
        back = integrate(turned, 30.0, IntegratorConfig(), p.reversed(), t_eval=[0.0, 30.0])
        assert np.max(np.abs(back.zetas[-1] - state.zeta)) < 1e-6

    def test_dense_output_available(self):
        p = ModelParams(1.0, 1.0, 0.1, 100)
        state = canonical_to_zeta(CanonicalCoords(0.4, 1.0, 0.1, 0.0))
        record = integrate(state, 5.0, IntegratorConfig(dense_output=True), p)
        mid = real_to_zeta(record.dense(2.5))
        assert abs(np.sum(np.abs(mid) ** 2) - 1.0) < 1e-9

    def test_ensemble_agrees_with_single_trajectory(self, rng):
        p = ModelParams(1.0, 1.0, 0.3, 100)
        zetas = random_states(rng, 3)
        t_eval = np.linspace(0.0, 20.0, 11)
        bundled = integrate_ensemble(zetas, 20.0, IntegratorConfig(), p, t_eval)
        for k in range(3):
            single = integrate(
                ClassicalState.from_unnormalized(zetas[k]), 20.0, IntegratorConfig(), p, t_eval=t_eval
            )
            assert np.max(np.abs(bundled[:, k, :] - single.zetas)) < 1e-8

    def test_variational_single_wrapper(self):
        p = ModelParams(1.0, 1.0, 0.2, 100)
        state = canonical_to_zeta(CanonicalCoords(0.4, 0.3, 0.1, 0.0))
        times, ys, phis = integrate_variational(state, 5.0, IntegratorConfig(), p)
        assert phis[0] == pytest.approx(np.eye(6))
        assert abs(np.linalg.det(phis[-1]) - 1.0) < 1e-8
        assert ys.shape == (2, 6)


class TestRecordValidation:
    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            TrajectoryRecord(
                times=np.array([0.0, 0.0]),
                zetas=np.zeros((2, 3), dtype=complex),
                energy_drift=0.0,
                norm_drift=0.0,
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)

    def test_energy_helper_broadcasts(self, rng):
        p = ModelParams(1.0, 1.0, 0.3, 100)
        zetas = random_states(rng, 4)
        energies = mf_energy_zeta_array(zetas, p)
        assert energies.shape == (4,)
