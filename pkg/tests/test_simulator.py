#!/usr/bin/env python3
"""
Integration tests for the cycle simulator.

Tests include:
- Closed settling: conservation, invariant region, snapshots at requested times
- Short reactive cycle with both schemes: mass audit, stage report, outlets
- Error annotation with the failing time and stage
- Full-scale runs of the first bundled example
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import create_example_scenario
from src.discretization import Scheme
from src.errors import ConfigurationError, ReportError, StepError
from src.scenario import InitialCondition
from src.simulator import OUTLET_COLUMNS, PROFILE_COLUMNS, RunSettings, Simulator, run
from src.state import tank_mass
from tests.conftest import make_scenario, make_stage


@pytest.fixture
def closed_output(closed_scenario, fast_settings):
    return Simulator(closed_scenario, fast_settings).run(eval_times=[700.0])


class TestInitialState:

    @pytest.mark.unit
    def test_initial_solids(self, cycle_scenario, fast_settings):
        sim = Simulator(cycle_scenario, fast_settings)
        state = sim.initial_state()
        X0 = 0.75 * float(np.sum(cycle_scenario.initial.C0))
        np.testing.assert_allclose(state.X[sim.grid.tank], X0)
        assert state.X[0] == 0.0 and state.X[-1] == 0.0
        np.testing.assert_allclose(state.P.sum(axis=1), 1.0)

    @pytest.mark.unit
    def test_partial_initial_fill(self, fast_settings):
        scenario = make_scenario([make_stage(0.0, 0.1)], z_bar_0=0.0, z_from=1.5)
        sim = Simulator(scenario, fast_settings)
        state = sim.initial_state()
        tank = state.X[sim.grid.tank]
        assert tank[0] == 0.0 and tank[-1] > 0.0, "sludge only below z_from"

    @pytest.mark.unit
    def test_initial_solids_above_packing_rejected(self, fast_settings):
        scenario = make_scenario([make_stage(0.0, 0.1)])
        crowded = replace(scenario, initial=InitialCondition(z_from=1.0, C0=np.full(6, 10.0), S0=np.zeros(6)))
        with pytest.raises(ConfigurationError):
            Simulator(crowded, fast_settings).initial_state()

    @pytest.mark.unit
    def test_settings_validation(self, closed_scenario):
        with pytest.raises(ConfigurationError):
            Simulator(closed_scenario, RunSettings(cells=3))
        with pytest.raises(ConfigurationError):
            Simulator(closed_scenario, RunSettings(cells=10, cfl_safety=0.0))


class TestClosedSettling:

    @pytest.mark.integration
    def test_mass_conserved(self, closed_output):
        grid = closed_output.grid
        first = tank_mass(closed_output.snapshots[0].state.X, grid.delta_xi)
        last = tank_mass(closed_output.final_state.X, grid.delta_xi)
        assert abs(last - first) <= 1e-12 * first, f"tank mass {first:.15g} -> {last:.15g}"
        assert closed_output.diagnostics["mass_closure"] <= 1e-10

    @pytest.mark.integration
    def test_invariant_region_kept(self, closed_output):
        assert closed_output.diagnostics["max_omega_slack"] <= 1e-10
        X = closed_output.final_state.X
        assert X.min() >= 0.0

    @pytest.mark.integration
    def test_sediment_forms(self, closed_output):
        X = closed_output.final_state.X[closed_output.grid.tank]
        assert X[-1] > X[0], "solids accumulate towards the bottom"
        assert X[0] < 1e-3, "the surface clears"

    @pytest.mark.integration
    def test_eval_time_snapshot(self, closed_output):
        snap = closed_output.snapshot_at(700.0)
        assert snap.t == pytest.approx(700.0, abs=1e-9)
        assert closed_output.times[0] == 0.0
        assert closed_output.times[-1] == pytest.approx(1800.0)
        with pytest.raises(ReportError):
            closed_output.snapshot_at(701.5)

    @pytest.mark.integration
    def test_frames(self, closed_output):
        profiles = closed_output.profiles
        assert list(profiles.columns) == PROFILE_COLUMNS
        assert len(profiles) == len(closed_output.snapshots) * closed_output.grid.n_cells
        assert list(closed_output.outlets.columns) == OUTLET_COLUMNS
        assert (closed_output.outlets[["Xe", "Xu"]] == 0.0).all().all(), "closed tank discharges nothing"
        report = closed_output.stage_report
        assert len(report) == 1 and report.loc[0, "steps"] > 0
        assert closed_output.outlet_summary().empty


class TestCycle:

    @pytest.mark.integration
    @pytest.mark.parametrize("scheme", [Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT])
    def test_cycle_runs_clean(self, cycle_scenario, fast_settings, scheme):
        output = Simulator(cycle_scenario, fast_settings.with_updates(scheme=scheme)).run()
        diagnostics = output.diagnostics
        assert diagnostics["max_omega_slack"] <= 1e-10, f"{scheme.value}: {diagnostics['omega_maxima']}"
        assert diagnostics["mass_closure"] <= 1e-6, f"{scheme.value}: closure {diagnostics['mass_closure']:.3e}"
        closure = output.ledger.closure()
        assert closure.shape == (7,) and np.all(closure <= 1e-6), f"per component closure {closure}"

        report = output.stage_report
        assert list(report["name"]) == ["fill", "react", "settle", "draw", "idle"]
        assert report.loc[1, "model"] == "ODE"
        np.testing.assert_allclose(report["z_bar_end_m"].iloc[:-1].to_numpy(),
                                   report["z_bar_start_m"].iloc[1:].to_numpy(), atol=1e-12)
        if scheme is Scheme.SEMI_IMPLICIT:
            assert report.loc[0, "mean_newton_iterations"] >= 1.0
            assert np.isnan(report.loc[1, "mean_newton_iterations"])
        else:
            assert report["mean_newton_iterations"].isna().all()

    @pytest.mark.integration
    def test_outlets_and_summary(self, cycle_scenario, fast_settings):
        output = Simulator(cycle_scenario, fast_settings).run()
        outlets = output.outlets
        drawing = (outlets["t_s"] > 0.6 * 3600 + 1) & (outlets["t_s"] < 0.7 * 3600 - 1)
        idle = outlets["t_s"] > 0.7 * 3600 + 1
        assert (outlets.loc[idle, "Xe"] == 0.0).all(), "no effluent once the draw ends"
        assert (outlets.loc[drawing, "Xu"] == 0.0).all(), "no underflow during the draw"
        assert (outlets.loc[idle, "Xu"] > 0.0).any(), "idle pumps sludge out of the bottom"

        summary = output.outlet_summary()
        assert set(summary["outlet"]) == {"effluent", "underflow"}
        assert (summary["solids_discharged_kg"] >= 0).all()

        blanket = output.blanket_heights(threshold=1.0)
        assert len(blanket) == len(output.snapshots)
        assert blanket["height_m"].dropna().between(0.0, 3.0).all()

    @pytest.mark.integration
    def test_ledger_frame(self, cycle_scenario, fast_settings):
        output = Simulator(cycle_scenario, fast_settings).run()
        frame = output.ledger.to_frame()
        assert list(frame.index)[0] == "X"
        assert frame.loc["X", "inflow"] > 0, "the fill feeds solids"
        assert frame.loc["X", "outflow"] > 0, "draw and idle remove solids"
        assert "relative_closure" in frame.columns

    @pytest.mark.integration
    def test_convenience_wrapper(self, closed_scenario, fast_settings):
        output = run(closed_scenario, N=12, scheme=Scheme.EXPLICIT, settings=fast_settings)
        assert output.N == 12
        assert output.settings.scheme is Scheme.EXPLICIT


class TestFailures:

    @pytest.mark.unit
    def test_step_error_annotated(self, closed_scenario, fast_settings, mocker):
        mocker.patch("src.simulator.semi_implicit_step", side_effect=StepError("boom"))
        with pytest.raises(StepError) as info:
            Simulator(closed_scenario, fast_settings).run()
        assert info.value.t == 0.0
        assert info.value.stage_index == 0 and info.value.stage_name == "settle"
        assert "stage 0: settle" in str(info.value)


class TestFullExample:

    @pytest.mark.validation
    @pytest.mark.parametrize("scheme", [Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT])
    def test_example1_invariant_region_and_audit(self, scheme):
        config = create_example_scenario(1)
        settings = config.settings().with_updates(cells=100, scheme=scheme, snapshot_s=600.0)
        output = Simulator(config.build(), settings).run()
        maxima = output.diagnostics["omega_maxima"]
        assert output.diagnostics["max_omega_slack"] <= 1e-10, f"{scheme.value}: {maxima}"
        assert output.diagnostics["mass_closure"] <= 1e-6
        assert output.diagnostics["wall_clock_s"] < 120.0
