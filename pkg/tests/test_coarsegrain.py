import numpy as np
import pytest

from edpflow import (
    CoarseTrajectory,
    SolverConfig,
    State,
    SystemParams,
    Tilt,
    build_recovery_sequence,
    coarse_grain,
    coarse_grain_trajectory,
    coarse_params,
    energy,
    flux_dissipation,
    flux_equilibration_check,
    gce_residual,
    hat_energy,
    hat_flux_dissipation,
    manifold_split,
    mollify_in_time,
    reconstruct_from_coarse,
    shift_positive,
    slow_manifold_defect,
    solve_effective,
    stationary_measure,
    total_mass,
)
from edpflow.coarsegrain import optimal_coarse_flux

from conftest import cosine_tilt, positive_state


def reference_hat_trajectory(params, tilt, n=30, dt=1e-3, t_final=0.05, amp=0.4):
    x = (np.arange(n) + 0.5) / n
    cp = coarse_params(params, tilt)
    hat0 = cp.w_hat * (1 + amp * np.cos(np.pi * x))
    hat0 /= hat0.sum() / n
    return solve_effective(hat0, params, tilt, SolverConfig(dt, t_final))


class TestCoarseGrain:
    def test_uniform(self):
        assert np.allclose(coarse_grain(State(np.full((2, 5), 0.5))), 1.0)

    def test_stationary(self, params):
        tilt = cosine_tilt(8, [[0.3], [0.1]])
        w_v, _ = stationary_measure(params, tilt)
        cp = coarse_params(params, tilt)
        assert np.allclose(coarse_grain(State(w_v)), cp.w_hat)

    def test_mass_preserved(self, params, rng):
        st = positive_state(rng, 9)
        assert coarse_grain(st).sum() / 9 == pytest.approx(total_mass(st))


class TestCoarseParams:
    def test_mixed_coefficient_value(self, params):
        cp = coarse_params(params, Tilt.zero(6))
        assert np.allclose(cp.delta_hat, 1.25)

    def test_common_tilt(self):
        p = SystemParams((1.0, 2.0), 1.0, 3.0)
        tilt = cosine_tilt(10, [[0.7], [0.7]])
        cp = coarse_params(p, tilt)
        assert np.allclose(cp.delta_hat, 1.25)
        shift = cp.v_hat - tilt.v_cells[0]
        assert np.allclose(shift, shift[0])

    def test_equal_diffusion_any_tilt(self, rng):
        p = SystemParams((1.6, 1.6), 2.0, 5.0)
        tilt = cosine_tilt(10, [[0.4, -0.3], [0.8]])
        cp = coarse_params(p, tilt)
        assert np.allclose(cp.delta_hat, 1.6)

    def test_bounds_and_exponential_identity(self, rng):
        p = SystemParams((0.7, 2.3), 1.5, 0.8)
        for _ in range(10):
            coeffs = [list(rng.normal(0, 0.5, 2)), list(rng.normal(0, 0.5, 2))]
            tilt = cosine_tilt(12, coeffs)
            cp = coarse_params(p, tilt)
            assert np.all(cp.delta_hat >= min(p.delta) - 1e-14)
            assert np.all(cp.delta_hat <= max(p.delta) + 1e-14)
            lhs = np.exp(-cp.v_hat)
            rhs = (p.w[:, None] * np.exp(-tilt.v_cells)).sum(axis=0)
            assert np.allclose(lhs, rhs, rtol=1e-13)


class TestHatEnergy:
    def test_matches_two_species_energy_on_manifold(self, params, rng):
        tilt = cosine_tilt(14, [[0.5], [-0.2]])
        hat = rng.uniform(0.5, 1.5, 14)
        hat /= hat.sum() / 14
        st = State(manifold_split(hat, params, tilt))
        assert hat_energy(hat, params, tilt) == pytest.approx(
            energy(st, params, tilt), abs=1e-13
        )

    def test_rejects_negative(self, params):
        with pytest.raises(ValueError):
            hat_energy(np.array([-0.1, 2.1]), params, Tilt.zero(2))


class TestReconstruction:
    def test_requires_fluxes(self, params):
        hat = CoarseTrajectory(np.array([0.0, 0.1]), np.ones((2, 5)))
        with pytest.raises(ValueError, match="no fluxes"):
            reconstruct_from_coarse(hat, params, Tilt.zero(5))

    def test_rejects_broken_continuity(self, params):
        n = 5
        states = np.ones((2, n))
        states[1, 2] += 0.1  # mass appears from nowhere
        J = np.zeros((1, n + 1))
        hat = CoarseTrajectory(np.array([0.0, 0.1]), states, J)
        with pytest.raises(ValueError, match="continuity"):
            reconstruct_from_coarse(hat, params, Tilt.zero(n))

    def test_zero_tilt_constants(self, params):
        # delta=(1,2), rates (1,3): mobility fractions 0.6/0.4 and reaction
        # coefficient -0.15 against the coarse flux divergence
        hat = reference_hat_trajectory(params, Tilt.zero(40), n=40)
        rec = reconstruct_from_coarse(hat, params, Tilt.zero(40))
        J, b = rec.trajectory.fluxes.J, rec.trajectory.fluxes.b
        assert np.max(np.abs(J[:, 0] - 0.6 * hat.fluxes)) < 1e-12
        assert np.max(np.abs(J[:, 1] - 0.4 * hat.fluxes)) < 1e-12
        div = (hat.fluxes[:, 1:] - hat.fluxes[:, :-1]) * 40
        assert np.max(np.abs(b[:, 0] + 0.15 * div)) < 1e-12
        assert np.max(np.abs(b - rec.b_closed_form)) < 1e-12

    def test_gce_identically_zero(self, params):
        tilt = cosine_tilt(24, [[0.4], [-0.3]])
        hat = reference_hat_trajectory(params, tilt, n=24)
        rec = reconstruct_from_coarse(hat, params, tilt)
        assert np.max(np.abs(gce_residual(rec.trajectory))) == 0.0

    def test_output_on_slow_manifold(self, params):
        tilt = cosine_tilt(24, [[0.4], [-0.3]])
        hat = reference_hat_trajectory(params, tilt, n=24)
        rec = reconstruct_from_coarse(hat, params, tilt)
        assert slow_manifold_defect(rec.trajectory, params, tilt) < 1e-14

    def test_coarse_grain_is_left_inverse(self, params):
        tilt = cosine_tilt(24, [[0.4], [-0.3]])
        hat = reference_hat_trajectory(params, tilt, n=24)
        rec = reconstruct_from_coarse(hat, params, tilt)
        back = coarse_grain_trajectory(rec.trajectory)
        assert np.max(np.abs(back.states - hat.states)) < 1e-14

    def test_closed_form_reaction_flux_consistent_under_refinement(self, params):
        gaps = []
        for n in (20, 40):
            tilt = cosine_tilt(n, [[0.5], [-0.3]])
            hat = reference_hat_trajectory(params, tilt, n=n, dt=1e-3 * 20 / n)
            rec = reconstruct_from_coarse(hat, params, tilt)
            gaps.append(np.max(np.abs(rec.trajectory.fluxes.b - rec.b_closed_form)))
        assert gaps[1] < gaps[0] / 3.0  # second-order agreement


class TestFluxEquilibration:
    def test_lopsided_fluxes_positive_gap(self, params, rng):
        st = positive_state(rng, 10)
        j1 = np.zeros(11)
        j1[1:-1] = rng.normal(size=9)
        gap = flux_equilibration_check(st, j1, np.zeros(11), params, Tilt.zero(10))
        assert gap > 0

    def test_reconstructed_fluxes_equalize(self, params):
        hat = reference_hat_trajectory(params, Tilt.zero(30))
        rec = reconstruct_from_coarse(hat, params, Tilt.zero(30))
        m = rec.trajectory.n_times // 2
        gap = flux_equilibration_check(
            rec.trajectory.state(m),
            rec.trajectory.fluxes.J[m, 0],
            rec.trajectory.fluxes.J[m, 1],
            params,
            Tilt.zero(30),
        )
        assert abs(gap) < 1e-12

    def test_quadratic_homogeneity(self, params, rng):
        st = positive_state(rng, 8)
        j1 = np.zeros(9); j1[1:-1] = rng.normal(size=7)
        j2 = np.zeros(9); j2[1:-1] = rng.normal(size=7)
        g1 = flux_equilibration_check(st, j1, j2, params, Tilt.zero(8))
        g3 = flux_equilibration_check(st, 3 * j1, 3 * j2, params, Tilt.zero(8))
        assert g3 == pytest.approx(9 * g1, rel=1e-12)

    def test_requires_positive_densities(self, params):
        c = np.full((2, 4), 0.5); c[0, 1] = 0.0
        with pytest.raises(ValueError):
            flux_equilibration_check(State(c), np.zeros(5), np.zeros(5), params, Tilt.zero(4))


class TestPositiveShift:
    def test_lower_bound_and_mass(self, params, rng):
        n = 12
        states = rng.uniform(0.0, 2.0, (4, n))
        states /= states.sum(axis=1, keepdims=True) / n
        hat = CoarseTrajectory(0.1 * np.arange(4), states)
        for gamma in (1e-4, 0.01, 0.2, 0.5):
            shifted = shift_positive(hat, gamma)
            assert shifted.states.min() >= gamma - 1e-15
            assert np.max(np.abs(shifted.states.sum(axis=1) / n - 1.0)) < 1e-12

    def test_energy_control(self, params, rng):
        # energy of shifted states stays bounded by original + O(gamma)
        n = 16
        hat = rng.uniform(0.0, 2.0, n)
        hat /= hat.sum() / n
        tilt = cosine_tilt(n, [[0.3], [0.2]])
        base = hat_energy(hat, params, tilt)
        sup = -np.inf
        for gamma in np.linspace(1e-3, 0.5, 20):
            shifted = (hat + 2 * gamma) / (1 + 2 * gamma)
            val = hat_energy(shifted, params, tilt)
            sup = max(sup, val - 8.0 * gamma)
        assert np.isfinite(sup)
        assert sup <= base + 1e-12

    def test_preserves_continuity(self, params):
        hat = reference_hat_trajectory(params, Tilt.zero(20), n=20)
        shifted = shift_positive(hat, 0.3)
        dt = np.diff(shifted.times)[:, None]
        ce = (shifted.states[1:] - shifted.states[:-1]) / dt + (
            shifted.fluxes[:, 1:] - shifted.fluxes[:, :-1]
        ) * 20
        assert np.max(np.abs(ce)) < 1e-11


class TestMollification:
    def test_preserves_continuity_and_mass(self, params):
        hat = reference_hat_trajectory(params, Tilt.zero(20), n=20, t_final=0.04)
        sm = mollify_in_time(hat, half_width=0.006)
        dt = np.diff(sm.times)[:, None]
        ce = (sm.states[1:] - sm.states[:-1]) / dt + (sm.fluxes[:, 1:] - sm.fluxes[:, :-1]) * 20
        assert np.max(np.abs(ce)) < 1e-11
        assert np.max(np.abs(sm.states.sum(axis=1) / 20 - 1.0)) < 1e-12

    def test_tiny_width_is_noop(self, params):
        hat = reference_hat_trajectory(params, Tilt.zero(20), n=20, t_final=0.04)
        sm = mollify_in_time(hat, half_width=1e-9)
        assert sm is hat

    def test_smooths_rate(self, params):
        hat = reference_hat_trajectory(params, Tilt.zero(20), n=20, t_final=0.04)
        sm = mollify_in_time(hat, half_width=0.01)
        dt = np.diff(hat.times)[:, None]
        raw = np.max(np.abs((hat.states[1:] - hat.states[:-1]) / dt))
        smooth = np.max(np.abs((sm.states[1:] - sm.states[:-1]) / dt))
        assert smooth < raw


def test_optimal_coarse_flux_solves_continuity(rng):
    n = 14
    h = 1.0 / n
    w = rng.uniform(0.5, 2.0, n - 1)
    rate = rng.normal(size=n)
    rate -= rate.mean()
    J = optimal_coarse_flux(w, rate, h)
    assert J[0] == 0.0 and J[-1] == 0.0
    assert np.max(np.abs(rate + (J[1:] - J[:-1]) / h)) < 1e-11


class TestRecoverySequence:
    def test_shift_mollify_reconstruct_pipeline(self, params):
        tilt = Tilt.zero(30)
        hat = reference_hat_trajectory(params, tilt, n=30, t_final=0.05, amp=0.3)
        limit = reconstruct_from_coarse(hat, params, tilt).trajectory
        rec = build_recovery_sequence(limit, params, tilt, epsilon=1e-3)
        assert rec.gamma == pytest.approx(1e-3 ** 0.1)
        assert np.max(np.abs(gce_residual(rec.trajectory))) == 0.0
        assert total_mass(rec.trajectory.final_state) == pytest.approx(1.0, abs=1e-12)
        assert rec.trajectory.states.min() > 0

    def test_exchange_cost_trend(self, params):
        # the exchange-cost term of the scale-indexed trajectory decreases
        # monotonically; the coarse-level value has no exchange cost at all
        tilt = Tilt.zero(30)
        hat = reference_hat_trajectory(params, tilt, n=30, t_final=0.05, amp=0.3)
        limit = reconstruct_from_coarse(hat, params, tilt).trajectory
        d0 = hat_flux_dissipation(hat, params, tilt).total
        costs, gaps = [], []
        for eps in (1e-1, 1e-2, 1e-3):
            rec = build_recovery_sequence(limit, params, tilt, eps)
            bd = flux_dissipation(rec.trajectory, params, tilt, eps)
            costs.append(bd.vel_react)
            gaps.append(abs(bd.total - d0))
        assert costs[0] > costs[1] > costs[2]
        assert gaps[0] > gaps[1] > gaps[2]

    def test_limit_without_fluxes_gets_optimal_ones(self, params):
        tilt = Tilt.zero(20)
        hat = reference_hat_trajectory(params, tilt, n=20, t_final=0.03)
        limit_full = reconstruct_from_coarse(hat, params, tilt).trajectory
        from edpflow import Trajectory
        limit_bare = Trajectory(limit_full.times, limit_full.states)
        rec = build_recovery_sequence(limit_bare, params, tilt, epsilon=1e-2)
        assert np.max(np.abs(gce_residual(rec.trajectory))) == 0.0

    def test_off_manifold_limit_rejected(self, params, rng):
        from edpflow import Trajectory
        st = positive_state(rng, 12)
        traj = Trajectory(np.array([0.0, 0.1]), np.repeat(st.c[None], 2, axis=0))
        with pytest.raises(ValueError, match="off the slow manifold"):
            build_recovery_sequence(traj, params, Tilt.zero(12), epsilon=1e-2)
