#!/usr/bin/env python3
"""
Tests for scenario files and run outputs.

Tests include:
- Bundled scenario files against the built-in examples
- Text round trip and numerics overrides
- Configuration errors naming the offending section
- CSV outputs of a run
"""

import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.config import (
    EXAMPLE1_C_INITIAL,
    ScenarioConfig,
    create_example_scenario,
    parse_scenario,
    write_run_outputs,
)
from src.discretization import FluxChoice, Scheme
from src.errors import ConfigurationError
from src.scenario import SECONDS_PER_HOUR, ModelKind
from src.simulator import Simulator

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "data" / "scenarios"

MINIMAL = """
[geometry]
depth_m = 3.0
area_m2 = 400.0

[initial]
z_from_m = 1.0
c_initial = 0.8889, 0.0295, 1.4503, 0.0904, 0.7371, 0.0025

[stages]
table =
    t_start_h, t_end_h, model, Qf_m3ph, Qu_m3ph, Qe_m3ph, Xf_kgpm3
    0.0, 0.5, PDE, 0, 0, 0, 0.0
"""


def with_stage_rows(*rows):
    """MINIMAL with its stage table replaced."""
    head = MINIMAL.split("    t_start_h")[0]
    lines = ["    t_start_h, t_end_h, model, Qf_m3ph, Qu_m3ph, Qe_m3ph, Xf_kgpm3"]
    lines += [f"    {row}" for row in rows]
    return head + "\n".join(lines) + "\n"


class TestBundledScenarios:

    @pytest.mark.unit
    @pytest.mark.parametrize("number", [1, 2, 3])
    def test_file_matches_builtin(self, number):
        from_file = parse_scenario(SCENARIO_DIR / f"example{number}.cfg")
        assert from_file == create_example_scenario(number), f"example{number}.cfg drifted from the built-in"

    @pytest.mark.unit
    def test_unknown_example(self):
        with pytest.raises(ConfigurationError):
            create_example_scenario(4)

    @pytest.mark.unit
    def test_example1_build(self):
        config = create_example_scenario(1)
        scenario = config.build()
        stages = scenario.schedule.stages
        assert [s.name for s in stages] == ["fill", "react", "settle", "draw", "idle"]
        assert stages[1].model_kind is ModelKind.ODE
        assert stages[0].Q_f == pytest.approx(790.0 / SECONDS_PER_HOUR)
        assert stages[0].p_f.sum() == pytest.approx(1.0)
        assert 0.75 * np.sum(EXAMPLE1_C_INITIAL) == pytest.approx(2.399, abs=1e-3)

    @pytest.mark.unit
    def test_feed_percentages_equal_converted_feed(self):
        config = create_example_scenario(1)
        p_f = config.feed_percentages()
        np.testing.assert_allclose(p_f, np.asarray(config.c_feed_proportions) / np.sum(config.c_feed_proportions))
        assert np.all(p_f >= 0)


class TestRoundTrip:

    @pytest.mark.unit
    @pytest.mark.parametrize("number", [1, 3])
    def test_text_identity(self, number):
        config = create_example_scenario(number)
        again = ScenarioConfig.parse(config.to_text(), name=config.name)
        assert again == config

    @pytest.mark.unit
    def test_write_and_read(self, tmp_path):
        config = create_example_scenario(2).with_numerics(cells=64, scheme=Scheme.EXPLICIT)
        path = config.write(tmp_path / "nested" / "run.cfg")
        loaded = ScenarioConfig.from_file(path)
        assert loaded.numerics.cells == 64
        assert loaded.settings().scheme is Scheme.EXPLICIT

    @pytest.mark.unit
    def test_minimal_defaults(self):
        config = ScenarioConfig.parse(MINIMAL, name="minimal")
        assert config.name == "minimal"
        assert config.min_depth_m == 0.5
        settings = config.settings()
        assert settings.cells == 100 and settings.flux is FluxChoice.EO
        assert settings.newton.epsilon == 1e-8
        assert config.build().geometry.z_bar_0 == 1.0, "z̄(0) defaults to the sludge height"

    @pytest.mark.unit
    def test_with_numerics_ignores_none(self):
        config = create_example_scenario(1)
        updated = config.with_numerics(cells=None, tolerance=1e-4, flux=None)
        assert updated.numerics.cells == config.numerics.cells
        assert updated.numerics.tolerance == 1e-4
        assert updated.numerics.flux is config.numerics.flux

    @pytest.mark.unit
    def test_kinetics_override(self):
        text = MINIMAL + "\n[kinetics]\nmu_H = 4.0\nenabled = false\n"
        config = ScenarioConfig.parse(text)
        kinetics = config.build().kinetics
        assert kinetics.mu_H == pytest.approx(4.0 / 86400.0)
        assert kinetics.enabled is False

    @pytest.mark.unit
    def test_missing_seed(self):
        config = ScenarioConfig.parse(MINIMAL + "\n[numerics]\nsample_seed = none\n")
        assert config.settings().sample_seed is None


class TestErrors:

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "text, fragment",
        [
            (MINIMAL + "\n[bogus]\nx = 1\n", "unknown sections"),
            (MINIMAL.replace("depth_m = 3.0\n", ""), "depth_m"),
            (MINIMAL + "\n[constitutive]\nv_zero = 1.0\n", "unknown keys"),
            (MINIMAL + "\n[kinetics]\nmu_X = 1.0\n", "mu_X"),
            (MINIMAL.replace("0.7371, 0.0025", "0.7371"), "needs 6 values"),
            (MINIMAL.replace("0.7371, 0.0025", "0.7371, lots"), "non-numeric"),
            (MINIMAL.replace("area_m2 = 400.0", "area_m2 = wide"), "not a number"),
            (MINIMAL + "\n[numerics]\nsample_seed = soon\n", "sample_seed"),
        ],
    )
    def test_rejected(self, text, fragment):
        with pytest.raises(ConfigurationError) as info:
            ScenarioConfig.parse(text, source="case.cfg")
        assert fragment in str(info.value)

    @pytest.mark.unit
    def test_missing_stage_table(self):
        text = MINIMAL.split("[stages]")[0]
        with pytest.raises(ConfigurationError) as info:
            ScenarioConfig.parse(text)
        assert "[stages]" in str(info.value)

    @pytest.mark.unit
    def test_feed_and_extraction_together(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig.parse(with_stage_rows("0.0, 0.5, PDE, 100, 0, 100, 5.0"))

    @pytest.mark.unit
    def test_overlapping_stages(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig.parse(with_stage_rows("0.0, 0.5, PDE, 0, 0, 0, 0.0", "0.4, 1.0, PDE, 0, 0, 0, 0.0"))

    @pytest.mark.unit
    def test_unknown_model(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig.parse(with_stage_rows("0.0, 0.5, CSTR, 0, 0, 0, 0.0"))

    @pytest.mark.unit
    def test_surface_leaves_allowed_range(self):
        """Drawing 12.5 m/h for an hour pushes the surface below the minimum depth."""
        with pytest.raises(ConfigurationError):
            ScenarioConfig.parse(with_stage_rows("0.0, 1.0, PDE, 0, 0, 5000, 0.0"))

    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ScenarioConfig.from_file(tmp_path / "absent.cfg")


class TestRunOutputs:

    @pytest.mark.integration
    def test_files_written(self, cycle_scenario, fast_settings, tmp_path):
        output = Simulator(cycle_scenario, fast_settings).run()
        paths = write_run_outputs(output, tmp_path / "out")
        assert set(paths) == {
            "profiles", "outlets", "stages", "outlet_summary", "blanket", "mass_ledger", "diagnostics",
        }
        for key, path in paths.items():
            assert path.exists(), f"{key} not written"
            assert path.name == f"cycle_{key}.csv"
        diagnostics = pd.read_csv(paths["diagnostics"])
        assert len(diagnostics) == 1
        assert any(c.startswith("omega_") for c in diagnostics.columns)
        ledger = pd.read_csv(paths["mass_ledger"])
        assert ledger["component"].iloc[0] == "X"
        profiles = pd.read_csv(paths["profiles"])
        assert len(profiles) == len(output.profiles)

    @pytest.mark.integration
    def test_prefix(self, closed_scenario, fast_settings, tmp_path):
        output = Simulator(closed_scenario, fast_settings).run()
        paths = write_run_outputs(output, tmp_path, prefix="batch")
        assert paths["profiles"].name == "batch_profiles.csv"
