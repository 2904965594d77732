#!/usr/bin/env python3
"""
Tests for the semi-implicit scheme: the Newton solve of the X system and
the M-matrix structure of the percentage and solubles systems.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.constitutive import ConstitutiveModel, ConstitutiveParams
from src.discretization import Scheme, step_context
from src.errors import ConfigurationError, NewtonConvergenceError, StepError
from src.explicit_scheme import step as explicit_step
from src.semi_implicit import (
    NewtonConfig,
    apply_t,
    newton_jacobian,
    newton_solve,
    percentage_system,
    secant_matrix,
    solubles_system,
    step,
)
from src.simulator import Simulator
from src.state import OmegaMonitor, tank_mass, xi_mass


@pytest.fixture(scope="module")
def model():
    return ConstitutiveModel(ConstitutiveParams())


@pytest.fixture
def compressed_profile(model):
    """Profile running from clear liquid into a compressed sediment."""
    return np.linspace(0.0, 0.9 * model.X_hat, 21)


@pytest.fixture
def simulator(cycle_scenario, fast_settings):
    return Simulator(cycle_scenario, fast_settings)


class TestOperators:

    @pytest.mark.unit
    def test_t_annihilates_constants(self):
        np.testing.assert_allclose(apply_t(np.ones(9)), 0.0)
        np.testing.assert_allclose(apply_t(np.ones((9, 2))), 0.0)

    @pytest.mark.unit
    def test_t_sums_to_zero(self):
        v = np.random.default_rng(5).normal(size=15)
        assert abs(apply_t(v).sum()) < 1e-12, "T conserves the sum"

    @pytest.mark.unit
    def test_jacobian_column_margin_is_one(self, model, compressed_profile):
        jac = newton_jacobian(compressed_profile, beta=1.0, mu=500.0, model=model)
        np.testing.assert_allclose(jac.column_dominance_margin(), 1.0, rtol=1e-12)
        assert np.all(jac.lower[1:] <= 0) and np.all(jac.upper[:-1] <= 0)

    @pytest.mark.unit
    def test_secant_rows_sum_to_one(self, model, compressed_profile):
        secant = secant_matrix(compressed_profile, beta=1.0, mu=500.0, model=model)
        np.testing.assert_allclose(secant.matvec(np.ones(compressed_profile.size)), 1.0, atol=1e-12)

    @pytest.mark.unit
    def test_secant_reproduces_nonlinear_system(self, model, compressed_profile):
        """M(X) X = X + β²μ T 𝒟(X)."""
        secant = secant_matrix(compressed_profile, beta=0.8, mu=300.0, model=model)
        expected = compressed_profile + 0.64 * 300.0 * apply_t(model.integrated_diffusion(compressed_profile))
        np.testing.assert_allclose(secant.matvec(compressed_profile), expected, rtol=1e-10, atol=1e-10)


class TestNewton:

    @pytest.mark.unit
    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            NewtonConfig(epsilon=0.0)
        with pytest.raises(ConfigurationError):
            NewtonConfig(max_iter=0)

    @pytest.mark.unit
    def test_solution_satisfies_system(self, model, compressed_profile):
        coef_beta, mu = 1.0, 800.0
        result = newton_solve(compressed_profile, compressed_profile, coef_beta, mu, model,
                              NewtonConfig(epsilon=1e-12))
        D = model.integrated_diffusion(np.clip(result.u, 0.0, model.X_hat))
        residual = result.u + mu * apply_t(D) - compressed_profile
        assert np.sum(np.abs(residual)) <= 1e-9 * np.sum(compressed_profile), \
            f"residual {np.sum(np.abs(residual)):.3e}"
        assert result.iterations >= 1
        np.testing.assert_allclose(result.X, result.u, atol=1e-8)

    @pytest.mark.unit
    def test_flux_form_conserves_sum(self, model, compressed_profile):
        result = newton_solve(compressed_profile, compressed_profile, 1.0, 800.0, model)
        assert result.X.sum() == pytest.approx(compressed_profile.sum(), rel=1e-13)

    @pytest.mark.unit
    def test_iteration_cap(self, model, compressed_profile):
        with pytest.raises(NewtonConvergenceError) as info:
            newton_solve(compressed_profile, compressed_profile, 1.0, 5000.0, model,
                         NewtonConfig(epsilon=1e-15, max_iter=1))
        assert info.value.iterations == 1
        assert isinstance(info.value, StepError)

    @pytest.mark.unit
    def test_zero_start_accepts_predictor(self, model):
        X_tilde = np.full(8, 2.0)
        result = newton_solve(X_tilde, np.zeros(8), 1.0, 100.0, model)
        assert result.iterations == 1
        np.testing.assert_allclose(result.X, X_tilde)


class TestImplicitSystems:

    @pytest.mark.unit
    def test_percentage_margin_equals_solids(self, simulator):
        grid = simulator.grid
        rng = np.random.default_rng(3)
        ctx = step_context(simulator.trajectory, grid, 0, 300.0, 5.0)
        X_new = rng.uniform(0.1, 20.0, grid.n_cells)
        Phi = rng.normal(scale=1e-3, size=grid.N + 4)
        system = percentage_system(X_new, Phi, ctx, grid)
        margin = system.column_dominance_margin()
        np.testing.assert_allclose(margin[1:-1], X_new[grid.tank][1:-1], rtol=1e-12)
        assert margin[0] >= X_new[1] - 1e-12 and margin[-1] >= X_new[grid.N + 1] - 1e-12

    @pytest.mark.unit
    def test_solubles_margin_is_one(self, simulator):
        grid = simulator.grid
        rng = np.random.default_rng(4)
        ctx = step_context(simulator.trajectory, grid, 3, 0.65 * 3600, 5.0)
        y = 1.0 / (1050.0 - rng.uniform(0.0, 30.0, grid.n_cells))
        theta = rng.normal(scale=1.0, size=grid.N + 4)
        system = solubles_system(y, theta, ctx, grid)
        np.testing.assert_allclose(system.column_dominance_margin()[1:-1], 1.0, rtol=1e-12)
        assert np.all(system.diag > 0)


class TestStep:

    @pytest.mark.unit
    def test_closed_settling_conserves_mass(self, closed_scenario, fast_settings):
        sim = Simulator(closed_scenario, fast_settings)
        stage = sim.scenario.schedule.stages[0]
        tau = sim.stage_tau(stage, Scheme.SEMI_IMPLICIT)
        state = sim.initial_state()
        before = tank_mass(state.X, sim.grid.delta_xi)
        monitor = OmegaMonitor(sim.constitutive.X_hat)
        iterations = 0
        for i in range(100):
            ctx = step_context(sim.trajectory, sim.grid, 0, i * tau, tau)
            result = step(state, sim.setup, ctx, NewtonConfig(), monitor)
            state = result.state
            iterations += result.newton_iterations
        after = tank_mass(state.X, sim.grid.delta_xi)
        assert abs(after - before) <= 1e-11 * before, f"mass drifted from {before:.15g} to {after:.15g}"
        assert iterations >= 100, "every step runs at least one Newton iteration"

    @pytest.mark.unit
    def test_larger_step_than_explicit(self, simulator):
        stage = simulator.scenario.schedule.stages[2]
        explicit = simulator.stage_tau(stage, Scheme.EXPLICIT)
        semi = simulator.stage_tau(stage, Scheme.SEMI_IMPLICIT)
        assert semi >= explicit, f"semi-implicit step {semi:.4g} s below explicit {explicit:.4g} s"

    @pytest.mark.unit
    @pytest.mark.parametrize("stage_index", [0, 2, 3, 4])
    def test_step_balance_matches_xi_mass(self, simulator, stage_index):
        sim = simulator
        stage = sim.scenario.schedule.stages[stage_index]
        tau = sim.stage_tau(stage, Scheme.SEMI_IMPLICIT)
        state = sim.initial_state()
        ctx = step_context(sim.trajectory, sim.grid, stage_index, stage.t_start + 0.5 * stage.duration, tau)
        result = step(state, sim.setup, ctx)
        dxi = sim.grid.delta_xi
        before = xi_mass(np.column_stack((state.X, state.S)), dxi)
        after = xi_mass(np.column_stack((result.state.X, result.state.S)), dxi)
        np.testing.assert_allclose(after - before, result.balance.change, rtol=1e-8, atol=1e-12,
                                   err_msg=f"stage {stage.name}")

    @pytest.mark.unit
    def test_percentages_stay_on_simplex(self, simulator):
        sim = simulator
        stage = sim.scenario.schedule.stages[0]
        tau = sim.stage_tau(stage, Scheme.SEMI_IMPLICIT)
        state = sim.initial_state()
        for i in range(20):
            ctx = step_context(sim.trajectory, sim.grid, 0, i * tau, tau)
            state = step(state, sim.setup, ctx).state
        occupied = state.X > 1e-10
        np.testing.assert_allclose(state.P[occupied].sum(axis=1), 1.0, atol=1e-10)

    @pytest.mark.unit
    @pytest.mark.parametrize("epsilon", [1e-1, 1e-4])
    def test_loose_tolerance_keeps_simplex_in_compression(self, closed_scenario, fast_settings, epsilon):
        """Σp = 1 must not depend on how far Newton is converged."""
        sim = Simulator(closed_scenario, fast_settings)
        grid = sim.grid
        X_hat = sim.constitutive.X_hat
        assert 0.9 * X_hat > sim.constitutive.params.X_c, "profile must reach the compression zone"
        state = sim.initial_state()
        state.X[grid.tank] = np.linspace(1.0, 0.9 * X_hat, grid.N + 1)
        stage = sim.scenario.schedule.stages[0]
        tau = sim.stage_tau(stage, Scheme.SEMI_IMPLICIT)
        ctx = step_context(sim.trajectory, grid, 0, 0.0, tau)

        result = step(state, sim.setup, ctx, NewtonConfig(epsilon=epsilon))
        X_new = result.state.X
        assert np.any(result.fluxes.J != 0.0), "diffusive flux must be active"

        system = percentage_system(X_new, result.fluxes.Phi, ctx, grid)
        margin = system.column_dominance_margin()
        np.testing.assert_allclose(margin[1:-1], X_new[grid.tank][1:-1], rtol=1e-12,
                                   err_msg=f"percentage margins at epsilon {epsilon:g}")

        occupied = X_new > 1e-12
        sums = result.state.P[occupied].sum(axis=1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12, \
            f"epsilon {epsilon:g}: |sum p - 1| = {np.max(np.abs(sums - 1.0)):.3e}"

    @pytest.mark.unit
    def test_matches_explicit_without_compression(self, closed_scenario, fast_settings):
        """Below X_c the diffusion vanishes and both X updates coincide."""
        sim = Simulator(closed_scenario, fast_settings)
        stage = sim.scenario.schedule.stages[0]
        tau = sim.stage_tau(stage, Scheme.EXPLICIT)
        state = sim.initial_state()
        ctx = step_context(sim.trajectory, sim.grid, 0, 0.0, tau)
        semi = step(state, sim.setup, ctx).state
        explicit = explicit_step(state, sim.setup, ctx).state
        np.testing.assert_allclose(semi.X, explicit.X, rtol=1e-14, atol=1e-15)
