#!/usr/bin/env python3
"""
Tests for the grid, numerical fluxes, κ and the CFL time steps.
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.biokinetics import ReactionBounds
from src.constitutive import ConstitutiveModel, ConstitutiveParams
from src.discretization import (
    CflConstants,
    FluxChoice,
    Grid,
    Scheme,
    assemble_fluxes,
    cfl_tau,
    check_sign_conditions,
    clamp_concentrations,
    engquist_osher,
    godunov,
    kappa,
    mixing_tau,
    snap_steps,
    step_context,
    upwind,
)
from src.errors import ConfigurationError, StepError
from src.scenario import build_trajectory
from tests.conftest import make_scenario, make_stage


@pytest.fixture(scope="module")
def model():
    return ConstitutiveModel(ConstitutiveParams())


@pytest.fixture
def trajectory():
    scenario = make_scenario(
        [
            make_stage(0.0, 0.5, name="settle"),
            make_stage(0.5, 0.6, Qf=400.0, Xf=5.0, name="fill"),
            make_stage(0.6, 0.7, Qe=800.0, name="draw"),
            make_stage(0.7, 0.8, Qu=40.0, name="idle"),
        ],
        z_bar_0=1.0,
    )
    return build_trajectory(scenario.schedule, scenario.geometry)


class TestGrid:

    @pytest.mark.unit
    def test_layout(self):
        grid = Grid(10)
        assert grid.n_cells == 13
        assert grid.delta_xi == pytest.approx(1.0 / 10.5)
        assert grid.xi_faces.size == 14
        assert grid.xi_faces[12] == 1.0, "last tank interface sits on the bottom"
        assert grid.xi_cells[1] == 0.0, "cell 0 is centred on the surface"
        np.testing.assert_allclose(grid.cell_weights[:3], [0.0, 0.5, 1.0])
        assert grid.cell_weights[-1] == 0.0
        assert grid.face_weights[1] == 0.0 and grid.face_weights[2] == 1.0 and grid.face_weights[12] == 0.0

    @pytest.mark.unit
    def test_slices(self):
        grid = Grid(6)
        X = np.arange(grid.n_cells)
        np.testing.assert_array_equal(X[grid.tank], np.arange(1, 8))
        np.testing.assert_array_equal(X[grid.interior], np.arange(2, 8))

    @pytest.mark.unit
    def test_too_few_cells(self):
        with pytest.raises(ConfigurationError):
            Grid(3)

    @pytest.mark.unit
    def test_enum_parsing(self):
        assert Scheme.parse("SI") is Scheme.SEMI_IMPLICIT
        assert Scheme.parse("semi_implicit") is Scheme.SEMI_IMPLICIT
        assert FluxChoice.parse("Godunov") is FluxChoice.GODUNOV
        with pytest.raises(ConfigurationError):
            FluxChoice.parse("roe")
        with pytest.raises(ConfigurationError):
            Scheme.parse("implicit")


class TestNumericalFluxes:

    @pytest.mark.unit
    @pytest.mark.parametrize("flux", [engquist_osher, godunov])
    def test_consistency(self, model, flux):
        X = np.linspace(0.0, model.X_hat, 101)
        np.testing.assert_allclose(flux(X, X, model), model.batch_flux(X), rtol=1e-12, atol=1e-16)

    @pytest.mark.unit
    @pytest.mark.parametrize("flux", [engquist_osher, godunov])
    def test_monotone(self, model, flux):
        """Nondecreasing in the upper value, nonincreasing in the lower."""
        rng = np.random.default_rng(3)
        u = rng.uniform(0.0, model.X_hat, 2000)
        v = rng.uniform(0.0, model.X_hat, 2000)
        h = 1e-3
        du = flux(np.minimum(u + h, model.X_hat), v, model) - flux(u, v, model)
        dv = flux(u, np.minimum(v + h, model.X_hat), model) - flux(u, v, model)
        assert du.min() >= -1e-15, f"flux decreases in u by {du.min():.3e}"
        assert dv.max() <= 1e-15, f"flux increases in v by {dv.max():.3e}"

    @pytest.mark.unit
    def test_fluxes_agree_below_peak(self, model):
        u = np.array([0.5, 1.0, 2.0])
        v = np.array([1.5, 0.2, 2.5])
        np.testing.assert_allclose(engquist_osher(u, v, model), godunov(u, v, model), rtol=1e-14)

    @pytest.mark.unit
    def test_godunov_spanning_peak(self, model):
        f_star = float(model.batch_flux(model.X_star))
        out = float(godunov(model.X_star + 2.0, model.X_star - 1.0, model))
        assert out == pytest.approx(f_star), "falling case across X* takes the peak value"

    @pytest.mark.unit
    def test_upwind(self):
        out = upwind(np.array([2.0, -3.0]), np.array([1.0, 1.0]), np.array([5.0, 5.0]))
        np.testing.assert_allclose(out, [2.0, -15.0])

    @pytest.mark.unit
    def test_clamp_counts(self):
        X, count = clamp_concentrations(np.array([-1.0, 1.0, 50.0, -1e-12]), 30.0)
        assert count == 2, f"Expected 2 clamped entries beyond the tolerance, got {count}"
        np.testing.assert_allclose(X, [0.0, 1.0, 30.0, 0.0])


class TestStepContext:

    @pytest.mark.unit
    def test_closed_stage(self, trajectory):
        grid = Grid(20)
        ctx = step_context(trajectory, grid, 0, 60.0, 1.0)
        assert np.all(ctx.q_tilde == 0.0), "closed stage has no bulk flow"
        assert np.all(kappa(ctx, grid) == 1.0), "closed stage has kappa = 1"
        assert ctx.lam == pytest.approx(1.0 / grid.delta_xi)
        assert ctx.mu == pytest.approx(1.0 / grid.delta_xi ** 2)

    @pytest.mark.unit
    def test_kappa_during_extraction(self, trajectory):
        grid = Grid(20)
        tau = 2.0
        ctx = step_context(trajectory, grid, 2, 0.65 * 3600, tau)
        k = kappa(ctx, grid)
        assert k[0] == pytest.approx(1.0 - tau * ctx.beta * (ctx.q_u + ctx.q_e))
        assert k[1] == 1.0
        assert k[5] == pytest.approx(1.0 + tau * ctx.beta * ctx.z_bar_prime)

    @pytest.mark.unit
    def test_kappa_during_feed(self, trajectory):
        grid = Grid(20)
        ctx = step_context(trajectory, grid, 1, 0.55 * 3600, 2.0)
        k = kappa(ctx, grid)
        assert k[0] == 1.0
        assert k[1] == pytest.approx(1.0 + ctx.tau * ctx.beta * ctx.q_f / 2)

    @pytest.mark.unit
    def test_bottom_face_carries_underflow(self, trajectory):
        grid = Grid(20)
        ctx = step_context(trajectory, grid, 3, 0.75 * 3600, 1.0)
        assert ctx.q_tilde[grid.N + 2] == pytest.approx(ctx.beta * ctx.q_u)
        assert ctx.q_tilde[grid.N + 3] >= 0, "underflow pipe carries mixture out of the tank"

    @pytest.mark.unit
    def test_sign_condition_violation(self, trajectory):
        grid = Grid(20)
        ctx = step_context(trajectory, grid, 2, 0.65 * 3600, 1.0)
        check_sign_conditions(ctx)
        q = ctx.q_tilde.copy()
        q[0] = 1e-3
        with pytest.raises(StepError):
            check_sign_conditions(replace(ctx, q_tilde=q))

    @pytest.mark.unit
    def test_closed_fluxes_conserve(self, trajectory, model):
        grid = Grid(20)
        ctx = step_context(trajectory, grid, 0, 60.0, 1.0)
        rng = np.random.default_rng(0)
        X = rng.uniform(0.0, model.X_hat, grid.n_cells)
        X[[0, -1]] = 0.0
        for choice in FluxChoice:
            fluxes = assemble_fluxes(X, ctx, grid, model, choice)
            assert fluxes.F[0] == fluxes.F[1] == 0.0, "no flux through the closed surface"
            assert fluxes.F[-1] == fluxes.F[-2] == 0.0, "no flux through the closed bottom"
            assert fluxes.J[1] == 0.0 and fluxes.J[grid.N + 2] == 0.0, "no compression through the walls"
            assert abs(np.diff(fluxes.Phi).sum()) < 1e-15


class TestTimeSteps:

    @pytest.fixture
    def constants(self, trajectory, model):
        bounds = ReactionBounds(1e-4, 1e-4, 1e-4)
        stage = trajectory.schedule.stages[1]
        return CflConstants.for_stage(stage, trajectory, model, bounds)

    @pytest.mark.unit
    def test_semi_implicit_step_is_larger(self, constants):
        dxi = 1.0 / 100.5
        explicit = cfl_tau(constants, dxi, Scheme.EXPLICIT)
        semi = cfl_tau(constants, dxi, Scheme.SEMI_IMPLICIT)
        assert semi > explicit > 0, f"semi-implicit {semi:.4g} s vs explicit {explicit:.4g} s"

    @pytest.mark.unit
    def test_explicit_step_shrinks_quadratically(self, constants):
        """For fine grids the explicit step scales like Δξ²."""
        coarse = cfl_tau(constants, 1.0 / 1000.5, Scheme.EXPLICIT)
        fine = cfl_tau(constants, 1.0 / 2000.5, Scheme.EXPLICIT)
        assert 3.5 < coarse / fine < 4.1, f"ratio {coarse / fine:.3f}"

    @pytest.mark.unit
    def test_safety_factor_scales_step(self, constants):
        dxi = 1.0 / 50.5
        assert cfl_tau(constants, dxi, safety=0.5) == pytest.approx(0.5 * cfl_tau(constants, dxi, safety=1.0))

    @pytest.mark.unit
    def test_degenerate_constants_rejected(self):
        zero = CflConstants(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1050.0, 30.0)
        with pytest.raises(ConfigurationError):
            cfl_tau(zero, 0.01)

    @pytest.mark.unit
    def test_mixing_step_capped(self):
        zero = CflConstants(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1050.0, 30.0)
        assert mixing_tau(zero, 3600.0) == pytest.approx(36.0)

    @pytest.mark.unit
    def test_snap_steps(self):
        assert snap_steps(100.0, 30.0) == (4, 25.0)
        assert snap_steps(90.0, 30.0) == (3, 30.0)
        assert snap_steps(1.0, 30.0) == (1, 1.0)
