"""
SCENARIO CONFIGURATION

Sectioned key=value scenario files with an embedded stage table:

    [geometry]      depth_m, area_m2, min_depth_m, optional z_bar_0_m
    [constitutive]  ConstitutiveParams fields
    [kinetics]      parameters in table units (1/d, g/m³), eps_cutoff_fraction, enabled
    [feed]          c_feed_proportions, s_feed
    [initial]       z_from_m, c_initial, s_initial
    [stages]        table = CSV block t_start_h, t_end_h, model, Qf_m3ph, Qu_m3ph, Qe_m3ph, Xf_kgpm3[, stage]
    [numerics]      cells, scheme, flux, tolerance, max_iter, cfl_safety, snapshot_s,
                    outlet_s, sample_points, sample_seed

Also writes the CSV outputs of a run.
"""

from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .biokinetics import TABLE_DEFAULTS, Asm1Params
from .constitutive import ConstitutiveParams
from .discretization import CFL_SAFETY, FluxChoice, Scheme
from .errors import ConfigurationError
from .scenario import (
    SECONDS_PER_HOUR,
    InitialCondition,
    ModelKind,
    Scenario,
    Stage,
    StageSchedule,
    TankGeometry,
    build_trajectory,
)
from .semi_implicit import NewtonConfig
from .simulator import RunSettings, SimulationOutput

logger = logging.getLogger(__name__)

STAGE_COLUMNS = ["t_start_h", "t_end_h", "model", "Qf_m3ph", "Qu_m3ph", "Qe_m3ph", "Xf_kgpm3"]
SECTIONS = ("geometry", "constitutive", "kinetics", "feed", "initial", "stages", "numerics")

EXAMPLE1_C_INITIAL = (0.8889, 0.0295, 1.4503, 0.0904, 0.7371, 0.0025)
EXAMPLE1_S_INITIAL = (0.04, 0.0026, 0.0, 0.0333, 0.0004, 0.0009)
FEED_PROPORTIONS = (0.04, 0.14172, 0.096, 1e-6, 0.0, 0.01828)
FEED_SOLUBLES = (0.04, 0.064, 0.0, 0.001, 0.0125, 0.0101)


@dataclass(frozen=True)
class StageRow:
    """One line of the stage table, in table units (h, m³/h, kg/m³)."""

    t_start_h: float
    t_end_h: float
    model: str
    Qf_m3ph: float
    Qu_m3ph: float
    Qe_m3ph: float
    Xf_kgpm3: float
    stage: str = ""


@dataclass(frozen=True)
class NumericsConfig:
    cells: int = 100
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    flux: FluxChoice = FluxChoice.EO
    tolerance: float = 1e-8
    max_iter: int = 50
    cfl_safety: float = CFL_SAFETY
    snapshot_s: float = 60.0
    outlet_s: float = 10.0
    sample_points: int = 100_000
    sample_seed: Optional[int] = 2023

    def settings(self) -> RunSettings:
        return RunSettings(
            cells=self.cells,
            scheme=self.scheme,
            flux=self.flux,
            newton=NewtonConfig(epsilon=self.tolerance, max_iter=self.max_iter),
            cfl_safety=self.cfl_safety,
            snapshot_s=self.snapshot_s,
            outlet_s=self.outlet_s,
            sample_points=self.sample_points,
            sample_seed=self.sample_seed,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """A parsed scenario file; ``build`` turns it into a validated Scenario."""

    name: str
    depth_m: float
    area_m2: float
    min_depth_m: float
    constitutive: ConstitutiveParams
    stages: Tuple[StageRow, ...]
    z_bar_0_m: Optional[float] = None
    kinetics: Tuple[Tuple[str, float], ...] = ()
    eps_cutoff_fraction: float = 0.05
    kinetics_enabled: bool = True
    c_feed_proportions: Tuple[float, ...] = FEED_PROPORTIONS
    s_feed: Tuple[float, ...] = FEED_SOLUBLES
    z_from_m: float = 0.0
    c_initial: Tuple[float, ...] = (0.0,) * 6
    s_initial: Tuple[float, ...] = (0.0,) * 6
    numerics: NumericsConfig = field(default_factory=NumericsConfig)

    # ------------------------------------------------------------------
    # parsing
    # ------------------------------------------------------------------

    @classmethod
    def parse(cls, text: str, name: str = "scenario", source: str = "<string>") -> "ScenarioConfig":
        """
        Raises
        ------
        ConfigurationError
            With the section and key of the first offending entry.
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: malformed scenario file: {exc}") from exc
        unknown = [s for s in parser.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigurationError(f"{source}: unknown sections {unknown}")
        reader = _SectionReader(parser, source)

        constitutive_values = {}
        for f in fields(ConstitutiveParams):
            if parser.has_option("constitutive", f.name):
                constitutive_values[f.name] = reader.number("constitutive", f.name)
        reader.reject_unknown("constitutive", [f.name for f in fields(ConstitutiveParams)])

        kinetics = []
        if parser.has_section("kinetics"):
            for key in parser.options("kinetics"):
                if key in ("eps_cutoff_fraction", "enabled"):
                    continue
                if key not in TABLE_DEFAULTS:
                    raise ConfigurationError(f"{source}: [kinetics] unknown parameter '{key}'")
                kinetics.append((key, reader.number("kinetics", key)))

        numerics = NumericsConfig(
            cells=int(reader.number("numerics", "cells", 100)),
            scheme=Scheme.parse(reader.text("numerics", "scheme", Scheme.SEMI_IMPLICIT.value)),
            flux=FluxChoice.parse(reader.text("numerics", "flux", FluxChoice.EO.value)),
            tolerance=reader.number("numerics", "tolerance", 1e-8),
            max_iter=int(reader.number("numerics", "max_iter", 50)),
            cfl_safety=reader.number("numerics", "cfl_safety", CFL_SAFETY),
            snapshot_s=reader.number("numerics", "snapshot_s", 60.0),
            outlet_s=reader.number("numerics", "outlet_s", 10.0),
            sample_points=int(reader.number("numerics", "sample_points", 100_000)),
            sample_seed=_optional_int(reader.text("numerics", "sample_seed", "2023")),
        )

        z_bar_0 = reader.text("geometry", "z_bar_0_m", "")
        config = cls(
            name=reader.text("geometry", "name", name),
            depth_m=reader.number("geometry", "depth_m"),
            area_m2=reader.number("geometry", "area_m2"),
            min_depth_m=reader.number("geometry", "min_depth_m", 0.5),
            z_bar_0_m=float(z_bar_0) if z_bar_0 else None,
            constitutive=ConstitutiveParams(**constitutive_values),
            kinetics=tuple(kinetics),
            eps_cutoff_fraction=reader.number("kinetics", "eps_cutoff_fraction", 0.05),
            kinetics_enabled=reader.flag("kinetics", "enabled", True),
            c_feed_proportions=reader.vector("feed", "c_feed_proportions", FEED_PROPORTIONS),
            s_feed=reader.vector("feed", "s_feed", FEED_SOLUBLES),
            z_from_m=reader.number("initial", "z_from_m", 0.0),
            c_initial=reader.vector("initial", "c_initial", (0.0,) * 6),
            s_initial=reader.vector("initial", "s_initial", (0.0,) * 6),
            stages=_parse_stage_table(reader.text("stages", "table"), source),
            numerics=numerics,
        )
        config.build()
        return config

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"scenario file not found: {path}")
        return cls.parse(path.read_text(encoding="utf-8"), name=path.stem, source=str(path))

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        geometry = {
            "name": self.name,
            "depth_m": repr(self.depth_m),
            "area_m2": repr(self.area_m2),
            "min_depth_m": repr(self.min_depth_m),
        }
        if self.z_bar_0_m is not None:
            geometry["z_bar_0_m"] = repr(self.z_bar_0_m)
        parser["geometry"] = geometry
        parser["constitutive"] = {
            f.name: repr(getattr(self.constitutive, f.name)) for f in fields(ConstitutiveParams)
        }
        kinetics = {key: repr(value) for key, value in self.kinetics}
        kinetics["eps_cutoff_fraction"] = repr(self.eps_cutoff_fraction)
        kinetics["enabled"] = "true" if self.kinetics_enabled else "false"
        parser["kinetics"] = kinetics
        parser["feed"] = {
            "c_feed_proportions": _format_vector(self.c_feed_proportions),
            "s_feed": _format_vector(self.s_feed),
        }
        parser["initial"] = {
            "z_from_m": repr(self.z_from_m),
            "c_initial": _format_vector(self.c_initial),
            "s_initial": _format_vector(self.s_initial),
        }
        parser["stages"] = {"table": "\n" + _format_stage_table(self.stages)}
        n = self.numerics
        parser["numerics"] = {
            "cells": str(n.cells),
            "scheme": n.scheme.value,
            "flux": n.flux.value,
            "tolerance": repr(n.tolerance),
            "max_iter": str(n.max_iter),
            "cfl_safety": repr(n.cfl_safety),
            "snapshot_s": repr(n.snapshot_s),
            "outlet_s": repr(n.outlet_s),
            "sample_points": str(n.sample_points),
            "sample_seed": "none" if n.sample_seed is None else str(n.sample_seed),
        }
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    # ------------------------------------------------------------------
    # building
    # ------------------------------------------------------------------

    def with_numerics(self, **changes) -> "ScenarioConfig":
        """Copy with numerics overridden; None values are ignored."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, numerics=replace(self.numerics, **changes))

    def feed_percentages(self) -> np.ndarray:
        """p_f = proportions / Σ proportions, equal to c C_f / X_f."""
        proportions = np.asarray(self.c_feed_proportions, dtype=float)
        if proportions.shape != (6,) or np.any(proportions < 0) or proportions.sum() <= 0:
            raise ConfigurationError(
                "c_feed_proportions must be 6 nonnegative values with a positive sum"
            )
        return proportions / proportions.sum()

    def schedule(self) -> StageSchedule:
        p_f = self.feed_percentages()
        S_f = np.asarray(self.s_feed, dtype=float)
        stages = []
        for i, row in enumerate(self.stages):
            stages.append(
                Stage(
                    t_start=row.t_start_h * SECONDS_PER_HOUR,
                    t_end=row.t_end_h * SECONDS_PER_HOUR,
                    model_kind=ModelKind.parse(row.model),
                    Q_f=row.Qf_m3ph / SECONDS_PER_HOUR,
                    Q_u=row.Qu_m3ph / SECONDS_PER_HOUR,
                    Q_e=row.Qe_m3ph / SECONDS_PER_HOUR,
                    X_f=row.Xf_kgpm3,
                    p_f=p_f,
                    S_f=S_f,
                    name=row.stage or f"stage{i}",
                )
            )
        schedule = StageSchedule(tuple(stages))
        schedule.validate()
        return schedule

    def build(self) -> Scenario:
        """
        Raises
        ------
        ConfigurationError
            If any section violates its invariants.
        """
        z_bar_0 = self.z_from_m if self.z_bar_0_m is None else self.z_bar_0_m
        scenario = Scenario(
            name=self.name,
            geometry=TankGeometry(
                B=self.depth_m, A=self.area_m2, B_c=self.min_depth_m, z_bar_0=z_bar_0
            ),
            constitutive=self.constitutive,
            kinetics=Asm1Params.from_table_units(
                dict(self.kinetics),
                eps_cutoff_fraction=self.eps_cutoff_fraction,
                enabled=self.kinetics_enabled,
            ),
            schedule=self.schedule(),
            initial=InitialCondition(
                z_from=self.z_from_m,
                C0=np.asarray(self.c_initial, dtype=float),
                S0=np.asarray(self.s_initial, dtype=float),
            ),
        )
        scenario.validate()
        build_trajectory(scenario.schedule, scenario.geometry)
        return scenario

    def settings(self) -> RunSettings:
        return self.numerics.settings()


def parse_scenario(path) -> ScenarioConfig:
    return ScenarioConfig.from_file(path)


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------


class _SectionReader:
    def __init__(self, parser: configparser.ConfigParser, source: str):
        self.parser = parser
        self.source = source

    _MISSING = object()

    def text(self, section: str, key: str, default=_MISSING) -> str:
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if default is self._MISSING:
            raise ConfigurationError(f"{self.source}: [{section}] missing required key '{key}'")
        return default

    def number(self, section: str, key: str, default=_MISSING) -> float:
        raw = self.text(section, key, default)
        try:
            value = float(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(
                f"{self.source}: [{section}] {key} = '{raw}' is not a number"
            ) from exc
        if not np.isfinite(value):
            raise ConfigurationError(f"{self.source}: [{section}] {key} must be finite")
        return value

    def flag(self, section: str, key: str, default: bool) -> bool:
        if not self.parser.has_option(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError as exc:
            raise ConfigurationError(f"{self.source}: [{section}] {key} is not a boolean") from exc

    def vector(self, section: str, key: str, default) -> Tuple[float, ...]:
        if not self.parser.has_option(section, key):
            return tuple(default)
        raw = self.parser.get(section, key)
        try:
            values = tuple(float(v) for v in raw.replace("\n", ",").split(",") if v.strip())
        except ValueError as exc:
            raise ConfigurationError(f"{self.source}: [{section}] {key} has a non-numeric entry") from exc
        if len(values) != 6:
            raise ConfigurationError(
                f"{self.source}: [{section}] {key} needs 6 values, got {len(values)}"
            )
        return values

    def reject_unknown(self, section: str, allowed: List[str]) -> None:
        if not self.parser.has_section(section):
            return
        extra = [k for k in self.parser.options(section) if k not in allowed]
        if extra:
            raise ConfigurationError(f"{self.source}: [{section}] unknown keys {extra}")


def _optional_int(text: str) -> Optional[int]:
    if str(text).strip().lower() in ("", "none"):
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigurationError(f"sample_seed must be an integer or 'none', got '{text}'") from exc


def _format_vector(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _parse_stage_table(block: str, source: str) -> Tuple[StageRow, ...]:
    try:
        frame = pd.read_csv(
            io.StringIO(block.strip()), skipinitialspace=True, float_precision="round_trip"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigurationError(f"{source}: [stages] table is not valid CSV: {exc}") from exc
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in STAGE_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"{source}: [stages] table lacks columns {missing}")
    rows = []
    for line, record in enumerate(frame.to_dict("records"), start=1):
        try:
            rows.append(
                StageRow(
                    t_start_h=float(record["t_start_h"]),
                    t_end_h=float(record["t_end_h"]),
                    model=str(record["model"]).strip(),
                    Qf_m3ph=float(record["Qf_m3ph"]),
                    Qu_m3ph=float(record["Qu_m3ph"]),
                    Qe_m3ph=float(record["Qe_m3ph"]),
                    Xf_kgpm3=float(record["Xf_kgpm3"]),
                    stage=_stage_name(record.get("stage")),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{source}: [stages] row {line}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"{source}: [stages] table has no rows")
    return tuple(rows)


def _stage_name(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return str(value).strip()


def _format_stage_table(rows: Tuple[StageRow, ...]) -> str:
    frame = pd.DataFrame([row.__dict__ for row in rows], columns=STAGE_COLUMNS + ["stage"])
    return frame.to_csv(index=False).strip()


# ----------------------------------------------------------------------
# bundled examples
# ----------------------------------------------------------------------


def _rows(table, names) -> Tuple[StageRow, ...]:
    return tuple(StageRow(*values, stage=name) for values, name in zip(table, names))


def create_example_scenario(number: int) -> ScenarioConfig:
    """
    The three bundled scenarios: a full cycle with a react stage, the
    one-hour reference schedule, and the moving-mesh stationarity case.
    """
    if number == 1:
        stages = _rows(
            [
                (0.0, 1.0, "PDE", 790.0, 0.0, 0.0, 5.0),
                (1.0, 3.0, "ODE", 0.0, 0.0, 0.0, 0.0),
                (3.0, 5.0, "PDE", 0.0, 0.0, 0.0, 0.0),
                (5.0, 5.5, "PDE", 0.0, 0.0, 1570.0, 0.0),
                (5.5, 6.0, "PDE", 0.0, 10.0, 0.0, 0.0),
            ],
            ["fill", "react", "settle", "draw", "idle"],
        )
        return ScenarioConfig(
            name="example1",
            depth_m=3.0,
            area_m2=400.0,
            min_depth_m=0.5,
            constitutive=ConstitutiveParams(),
            stages=stages,
            z_from_m=2.0,
            c_initial=EXAMPLE1_C_INITIAL,
            s_initial=EXAMPLE1_S_INITIAL,
        )
    if number == 2:
        stages = _rows(
            [
                (0.0, 0.3, "PDE", 2660.0, 0.0, 0.0, 5.0),
                (0.3, 0.85, "PDE", 0.0, 0.0, 0.0, 0.0),
                (0.85, 0.95, "PDE", 0.0, 0.0, 6000.0, 0.0),
                (0.95, 1.0, "PDE", 0.0, 100.0, 0.0, 0.0),
            ],
            ["fill", "settle", "draw", "idle"],
        )
        return ScenarioConfig(
            name="example2",
            depth_m=3.0,
            area_m2=400.0,
            min_depth_m=0.5,
            constitutive=ConstitutiveParams(),
            stages=stages,
            z_from_m=2.0,
            c_initial=EXAMPLE1_C_INITIAL,
            s_initial=EXAMPLE1_S_INITIAL,
        )
    if number == 3:
        stages = _rows(
            [
                (0.0, 25.0, "PDE", 0.0, 0.0, 0.0, 0.0),
                (25.0, 35.0, "PDE", 0.0, 0.0, 84.0, 0.0),
                (35.0, 45.0, "PDE", 0.0, 0.0, 0.0, 0.0),
                (45.0, 60.0, "PDE", 40.0, 0.0, 0.0, 0.0),
                (60.0, 70.0, "PDE", 0.0, 0.0, 0.0, 0.0),
            ],
            ["settle", "draw", "rest", "fill", "final"],
        )
        return ScenarioConfig(
            name="example3",
            depth_m=3.0,
            area_m2=400.0,
            min_depth_m=0.5,
            constitutive=ConstitutiveParams(),
            stages=stages,
            kinetics_enabled=False,
            z_from_m=0.0,
            c_initial=EXAMPLE1_C_INITIAL,
            s_initial=EXAMPLE1_S_INITIAL,
        )
    raise ConfigurationError(f"no bundled example {number} (expected 1, 2 or 3)")


# ----------------------------------------------------------------------
# run outputs
# ----------------------------------------------------------------------


def write_run_outputs(output: SimulationOutput, out_dir, prefix: str = "") -> Dict[str, Path]:
    """
    Profiles, outlets, stage report, outlet summary, mass ledger and
    diagnostics of one run as CSV files under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = prefix or output.scenario_name
    tables = {
        "profiles": output.profiles,
        "outlets": output.outlets,
        "stages": output.stage_report,
        "outlet_summary": output.outlet_summary(),
        "blanket": output.blanket_heights(),
        "mass_ledger": output.ledger.to_frame().rename_axis("component").reset_index(),
    }
    paths = {}
    for key, frame in tables.items():
        path = out_dir / f"{stem}_{key}.csv"
        frame.to_csv(path, index=False, float_format="%.10g")
        paths[key] = path
    diagnostics = {k: v for k, v in output.diagnostics.items() if not isinstance(v, dict)}
    diagnostics.update({f"omega_{k}": v for k, v in output.diagnostics["omega_maxima"].items()})
    path = out_dir / f"{stem}_diagnostics.csv"
    pd.DataFrame([diagnostics]).to_csv(path, index=False, float_format="%.10g")
    paths["diagnostics"] = path
    logger.info("wrote %d output files to %s", len(paths), out_dir)
    return paths
