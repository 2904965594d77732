#!/usr/bin/env python3
"""
Tests for completely mixed stages.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.biokinetics import ReactionModel
from src.constitutive import ConstitutiveModel
from src.discretization import Grid
from src.errors import StepError
from src.mixing_ode import average_profile, euler_mix_step, reallocate
from src.scenario import build_trajectory
from src.state import GridState, MixedState
from tests.conftest import FEED_P, make_scenario, make_stage


def reactions_for(scenario):
    model = ConstitutiveModel(scenario.constitutive)
    return ReactionModel(scenario.kinetics, model.X_hat, scenario.constitutive.c_conv)


@pytest.fixture
def grid():
    return Grid(16)


@pytest.fixture
def mixed_fill():
    """Completely mixed fill without reactions."""
    return make_scenario([make_stage(0.0, 0.2, kind="ODE", Qf=790.0, Xf=5.0, name="fill")], z_bar_0=1.5)


class TestAveraging:

    @pytest.mark.unit
    def test_uniform_profile_averages_to_itself(self, grid):
        X = np.full(grid.n_cells, 3.0)
        X[[0, -1]] = 7.0
        P = np.tile(FEED_P, (grid.n_cells, 1))
        S = np.tile(np.linspace(0.01, 0.06, 6), (grid.n_cells, 1))
        mixed = average_profile(GridState(10.0, X, P, S), grid, FEED_P)
        assert mixed.X == pytest.approx(3.0, rel=1e-13), "outlet cells do not count"
        np.testing.assert_allclose(mixed.S, np.linspace(0.01, 0.06, 6), rtol=1e-13)
        np.testing.assert_allclose(mixed.p, FEED_P, rtol=1e-12)
        assert mixed.t == 10.0

    @pytest.mark.unit
    def test_percentages_weighted_by_solids(self, grid):
        X = np.zeros(grid.n_cells)
        X[grid.tank] = np.linspace(1.0, 10.0, grid.N + 1)
        P = np.zeros((grid.n_cells, 6))
        P[:, 0] = 1.0
        P[grid.N // 2 + 1:, :] = 0.0
        P[grid.N // 2 + 1:, 1] = 1.0
        mixed = average_profile(GridState(0.0, X, P, np.zeros((grid.n_cells, 6))), grid, FEED_P)
        assert mixed.p.sum() == pytest.approx(1.0)
        assert mixed.p[1] > mixed.p[0], "the denser lower half dominates the mean percentages"

    @pytest.mark.unit
    def test_empty_tank_takes_fallback(self, grid):
        n = grid.n_cells
        state = GridState(0.0, np.zeros(n), np.full((n, 6), 1 / 6), np.zeros((n, 6)))
        mixed = average_profile(state, grid, FEED_P)
        assert mixed.X == 0.0
        np.testing.assert_allclose(mixed.p, FEED_P)

    @pytest.mark.unit
    def test_reallocate_round_trip(self, grid):
        mixed = MixedState(t=5.0, X=2.5, p=FEED_P, S=np.full(6, 0.02))
        state = reallocate(mixed, grid)
        assert state.X[0] == 0.0 and state.X[-1] == 0.0, "outlet cells start empty"
        again = average_profile(state, grid, FEED_P)
        assert again.X == pytest.approx(2.5, rel=1e-13)
        np.testing.assert_allclose(again.S, mixed.S, rtol=1e-13)
        np.testing.assert_allclose(again.p, mixed.p, rtol=1e-12)


class TestEulerStep:

    @pytest.mark.unit
    def test_feed_dilution(self, mixed_fill):
        trajectory = build_trajectory(mixed_fill.schedule, mixed_fill.geometry)
        stage = mixed_fill.schedule.stages[0]
        q_f, _, _ = trajectory.rates(stage)
        mixed = MixedState(t=0.0, X=2.0, p=FEED_P, S=np.zeros(6))
        tau = 10.0
        result = euler_mix_step(mixed, trajectory, 0, reactions_for(mixed_fill), tau)
        beta = float(trajectory.beta(0.0, 0))
        assert result.state.X == pytest.approx(2.0 + tau * beta * q_f * (5.0 - 2.0), rel=1e-13)
        np.testing.assert_allclose(result.state.S, tau * beta * q_f * np.asarray(stage.S_f), rtol=1e-13)
        np.testing.assert_allclose(result.state.p, FEED_P, rtol=1e-12)
        assert result.state.t == pytest.approx(tau)

    @pytest.mark.unit
    def test_balance_matches_change_of_means(self, mixed_fill):
        trajectory = build_trajectory(mixed_fill.schedule, mixed_fill.geometry)
        mixed = MixedState(t=100.0, X=2.4, p=FEED_P, S=np.full(6, 0.01))
        result = euler_mix_step(mixed, trajectory, 0, reactions_for(mixed_fill), 20.0)
        before = np.concatenate(([mixed.X], mixed.S))
        after = np.concatenate(([result.state.X], result.state.S))
        np.testing.assert_allclose(after - before, result.balance.change, rtol=1e-12, atol=1e-15)

    @pytest.mark.unit
    def test_reactions_change_composition(self, cycle_scenario):
        trajectory = build_trajectory(cycle_scenario.schedule, cycle_scenario.geometry)
        C0 = np.asarray(cycle_scenario.initial.C0)
        X0 = 0.75 * C0.sum()
        mixed = MixedState(t=0.25 * 3600, X=X0, p=0.75 * C0 / X0, S=np.asarray(cycle_scenario.initial.S0))
        result = euler_mix_step(mixed, trajectory, 1, reactions_for(cycle_scenario), 30.0)
        assert not np.allclose(result.state.S, mixed.S), "active kinetics must move the solubles"
        assert result.state.p.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.unit
    def test_pde_stage_rejected(self, cycle_scenario):
        trajectory = build_trajectory(cycle_scenario.schedule, cycle_scenario.geometry)
        mixed = MixedState(t=0.0, X=2.0, p=FEED_P, S=np.zeros(6))
        with pytest.raises(StepError):
            euler_mix_step(mixed, trajectory, 0, reactions_for(cycle_scenario), 1.0)
