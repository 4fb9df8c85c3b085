import numpy as np
import pytest

from edpflow import (
    IntegrationError,
    SolverConfig,
    SpatialGrid,
    State,
    SystemParams,
    Tilt,
    gce_residual,
    lagrange_multipliers,
    manifold_split,
    solve_effective,
    solve_eps_system,
    stationary_measure,
    total_mass,
)
from edpflow.coarsegrain import coarse_grain_trajectory, coarse_params
from edpflow.solver import central_first_derivative, central_second_derivative

from conftest import cosine_tilt


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(0.0, 1.0)
    with pytest.raises(ValueError):
        SolverConfig(0.5, 0.1)
    with pytest.raises(ValueError):
        SolverConfig(0.1, 1.0, scheme="rk4")
    cfg = SolverConfig(0.3, 1.0)
    assert cfg.n_steps == 3
    assert cfg.n_steps * cfg.dt_effective == pytest.approx(1.0)


@pytest.mark.parametrize("scheme", ["strang_exact_reaction", "strang_cn"])
def test_tilted_stationary_state_is_fixed(params, scheme):
    tilt = cosine_tilt(30, [[0.4], [-0.3, 0.1]])
    w_v, _ = stationary_measure(params, tilt)
    traj = solve_eps_system(State(w_v), params, tilt, SolverConfig(1e-3, 0.02, scheme))
    assert np.max(np.abs(traj.states - w_v[None])) < 1e-12


def test_uniform_manifold_equilibrium_is_fixed(params):
    n = 12
    c0 = State(np.tile(params.w[:, None], (1, n)))
    traj = solve_eps_system(c0, params, Tilt.zero(n), SolverConfig(1e-3, 0.02))
    assert np.max(np.abs(traj.states - c0.c[None])) < 1e-13


def test_equal_diffusion_sum_solves_heat_equation():
    # summing the two equations cancels the exchange for any epsilon
    n = 24
    grid = SpatialGrid(n)
    x = grid.cell_centers
    hat0 = 1 + 0.5 * np.cos(np.pi * x)
    cfg = SolverConfig(1e-3, 0.03)
    tilt = Tilt.zero(n)
    sums = []
    for eps in (1.0, 1e-4):
        p = SystemParams((1.4, 1.4), 1.0, 3.0, epsilon=eps)
        c0 = State(np.stack([0.7 * hat0, 0.3 * hat0]))
        traj = solve_eps_system(c0, p, tilt, cfg)
        sums.append(traj.states.sum(axis=1))
    heat = solve_effective(hat0, SystemParams((1.4, 1.4), 1.0, 3.0), tilt, cfg)
    for hat in sums:
        assert np.max(np.abs(hat - heat.states)) < 1e-12


@pytest.mark.parametrize("scheme", ["strang_exact_reaction", "imex_euler", "strang_cn"])
def test_mass_conservation_and_positivity(params, scheme, rng):
    n = 20
    tilt = cosine_tilt(n, [[0.3], [0.2]])
    c0 = rng.uniform(0.2, 1.0, (2, n))
    c0 = State(c0 / (c0.sum() / n))
    p = SystemParams(params.delta, params.alpha, params.beta, epsilon=1.0)
    traj = solve_eps_system(c0, p, tilt, SolverConfig(5e-4, 0.02, scheme))
    masses = traj.states.sum(axis=(1, 2)) / n
    assert np.max(np.abs(masses - 1.0)) < 1e-12
    assert traj.states.min() >= 0.0


@pytest.mark.parametrize("scheme", ["strang_exact_reaction", "imex_euler", "strang_cn"])
def test_solver_fluxes_satisfy_gce(params, scheme):
    n = 15
    tilt = cosine_tilt(n, [[0.25], [-0.15]])
    w_v, _ = stationary_measure(params, tilt)
    c0 = w_v * (1 + 0.3 * np.cos(np.pi * (np.arange(n) + 0.5) / n))
    c0 = State(c0 / (c0.sum() / n))
    p = SystemParams(params.delta, params.alpha, params.beta, epsilon=0.5)
    traj = solve_eps_system(c0, p, tilt, SolverConfig(1e-3, 0.01, scheme))
    assert np.max(np.abs(gce_residual(traj))) < 1e-10


def test_stiff_scale_costs_nothing(params):
    # exact exchange exponential: extreme scale separation stays stable
    n = 10
    p = SystemParams((1.0, 2.0), 1.0, 3.0, epsilon=1e-8)
    x = (np.arange(n) + 0.5) / n
    hat0 = 1 + 0.2 * np.cos(np.pi * x)
    c0 = State(np.stack([0.5 * hat0, 0.5 * hat0]))
    traj = solve_eps_system(c0, p, Tilt.zero(n), SolverConfig(1e-3, 0.01))
    assert np.all(np.isfinite(traj.states))
    assert traj.states.min() >= 0.0
    assert abs(total_mass(traj.final_state) - 1.0) < 1e-12


def test_imex_blowup_reports_step():
    p = SystemParams((1.0, 1.0), 1.0, 3.0, epsilon=1e-9)
    n = 6
    c0 = State(np.stack([np.full(n, 0.9), np.full(n, 0.1)]))
    with pytest.raises(IntegrationError) as err:
        solve_eps_system(c0, p, Tilt.zero(n), SolverConfig(1e-2, 0.1, "imex_euler"))
    assert err.value.step >= 0


def test_initial_mass_checked(params):
    c0 = State(np.full((2, 5), 0.9))
    with pytest.raises(ValueError, match="unit mass"):
        solve_eps_system(c0, params, Tilt.zero(5), SolverConfig(1e-3, 0.01))


def test_coarse_solution_approaches_effective_monotonically(params):
    # fixed smooth slow-manifold data: the L1 space-time distance between the
    # summed fast-slow solution and the effective solution shrinks with the scale
    n = 50
    grid = SpatialGrid(n)
    tilt = Tilt.zero(n)
    hat0 = 1 + 0.4 * np.cos(np.pi * grid.cell_centers)
    hat0 /= hat0.sum() / n
    cfg = SolverConfig(2e-4, 0.05)
    eff = solve_effective(hat0, params, tilt, cfg)
    dists = []
    for eps in (1e-1, 1e-2, 1e-3, 1e-4):
        p = SystemParams(params.delta, params.alpha, params.beta, epsilon=eps)
        c0 = State(manifold_split(hat0, p, tilt))
        traj = solve_eps_system(c0, p, tilt, cfg)
        hat = traj.states.sum(axis=1)
        dists.append(float(np.abs(hat - eff.states).mean()) * cfg.t_final)
    assert all(b < a for a, b in zip(dists, dists[1:]))


class TestEffectiveSolver:
    def test_pure_heat_for_zero_tilt(self, params):
        # mixing-weighted coefficient is constant: (3*1 + 1*2)/4
        n = 30
        cp = coarse_params(params, Tilt.zero(n))
        assert np.allclose(cp.delta_hat, 1.25)
        x = (np.arange(n) + 0.5) / n
        hat0 = 1 + 0.3 * np.cos(np.pi * x)
        traj = solve_effective(hat0, params, Tilt.zero(n), SolverConfig(1e-4, 0.02))
        # analytic single-mode decay of the heat problem with coefficient 1.25
        lam = 1.25 * (2 * n * np.sin(np.pi / (2 * n))) ** 2  # discrete mode eigenvalue
        mode0 = 2.0 / n * hat0 @ np.cos(np.pi * x)
        mode_T = 2.0 / n * traj.states[-1] @ np.cos(np.pi * x)
        assert mode_T == pytest.approx(mode0 * np.exp(-lam * 0.02), rel=2e-3)

    def test_common_tilt_keeps_each_coefficient(self):
        p = SystemParams((1.7, 1.7), 1.0, 3.0)
        tilt = cosine_tilt(14, [[0.5], [0.5]])
        cp = coarse_params(p, tilt)
        assert np.allclose(cp.delta_hat, 1.7)
        assert np.allclose(cp.v_hat - tilt.v_cells[0], cp.v_hat[0] - tilt.v_cells[0][0])

    def test_coarse_stationary_fixed(self, params):
        tilt = cosine_tilt(25, [[0.4], [-0.2]])
        cp = coarse_params(params, tilt)
        traj = solve_effective(cp.w_hat, params, tilt, SolverConfig(1e-3, 0.02))
        assert np.max(np.abs(traj.states - cp.w_hat[None])) < 1e-12

    def test_mass_conserved(self, params):
        tilt = cosine_tilt(25, [[0.4], [-0.2]])
        n = 25
        x = (np.arange(n) + 0.5) / n
        hat0 = 1 + 0.45 * np.cos(np.pi * x)
        hat0 /= hat0.sum() / n
        traj = solve_effective(hat0, params, tilt, SolverConfig(1e-3, 0.05))
        assert np.max(np.abs(traj.states.sum(axis=1) / n - 1.0)) < 1e-12
        assert np.max(np.abs(gce_coarse(traj))) < 1e-11


def gce_coarse(hat_traj):
    dt = np.diff(hat_traj.times)[:, None]
    n = hat_traj.n_cells
    return (hat_traj.states[1:] - hat_traj.states[:-1]) / dt + (
        hat_traj.fluxes[:, 1:] - hat_traj.fluxes[:, :-1]
    ) * n


class TestLagrangeMultipliers:
    def test_equal_rates_and_potentials_vanish(self):
        p = SystemParams((1.3, 1.3), 1.0, 3.0)
        tilt = cosine_tilt(12, [[0.4], [0.4]])
        n = 12
        x = (np.arange(n) + 0.5) / n
        lam1, lam2 = lagrange_multipliers(1 + 0.3 * np.cos(np.pi * x), p, tilt)
        assert np.max(np.abs(lam1)) < 1e-12
        assert np.max(np.abs(lam2)) < 1e-12

    def test_zero_tilt_closed_form(self, params):
        n = 18
        x = (np.arange(n) + 0.5) / n
        hat = 1 + 0.3 * np.cos(np.pi * x)
        lam1, lam2 = lagrange_multipliers(hat, params, Tilt.zero(n))
        w1, w2 = params.w
        dbar = params.delta[0] - params.delta[1]
        expected = -w1 * w2 * dbar * central_second_derivative(hat, 1.0 / n)
        assert np.allclose(lam1, expected, atol=1e-13)
        # cancellation is algebraically exact for constant tilts
        assert np.max(np.abs(lam1 + lam2)) < 1e-13

    def test_cancellation_refines_at_first_order(self, params):
        errs = []
        for n in (40, 80):
            tilt = cosine_tilt(n, [[0.5], [0.3, -0.1]])
            cp = coarse_params(params, tilt)
            hat = cp.w_hat * (1 + 0.4 * np.cos(np.pi * (np.arange(n) + 0.5) / n))
            hat /= hat.sum() / n
            traj = solve_effective(hat, params, tilt, SolverConfig(1e-3 * 40 / n, 0.02))
            lam1, lam2 = lagrange_multipliers(traj.states[-1], params, tilt)
            errs.append(np.max(np.abs(lam1 + lam2)))
        assert errs[1] < errs[0] / 1.8

    def test_constrained_system_residual_refines(self, params):
        # a posteriori check of the constrained evolution: the per-species
        # drift-diffusion operator plus the multiplier reproduces the rate
        errs = []
        for n in (40, 80):
            h = 1.0 / n
            tilt = cosine_tilt(n, [[0.4], [0.2]])
            cp = coarse_params(params, tilt)
            hat = cp.w_hat * (1 + 0.4 * np.cos(np.pi * (np.arange(n) + 0.5) / n))
            hat /= hat.sum() / n
            dt = 2e-5 * (40 / n) ** 2
            traj = solve_effective(hat, params, tilt, SolverConfig(dt, 400 * dt))
            m = traj.n_times // 2
            w_v, _ = stationary_measure(params, tilt)
            theta = w_v / w_v.sum(axis=0)
            c = theta[None] * traj.states[:, None, :]
            cdot = (c[m + 1] - c[m - 1]) / (2 * dt)
            grad_v = (tilt.v_faces[:, 1:] - tilt.v_faces[:, :-1]) / h
            lam1, lam2 = lagrange_multipliers(traj.states[m], params, tilt)
            res = []
            for j, lam in ((0, lam1), (1, lam2)):
                dj = params.delta[j]
                op = dj * (
                    central_second_derivative(c[m, j], h)
                    + central_first_derivative(c[m, j], h) * grad_v[j]
                    + c[m, j] * central_second_derivative(tilt.v_cells[j], h)
                )
                res.append(np.max(np.abs(cdot[j] - op - lam)[2:-2]))
            errs.append(max(res))
        assert errs[1] < errs[0] / 1.7
