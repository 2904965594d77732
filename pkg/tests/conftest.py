"""
Shared builders for small scenarios and fast run settings.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.biokinetics import Asm1Params
from src.config import EXAMPLE1_C_INITIAL, EXAMPLE1_S_INITIAL, FEED_PROPORTIONS, FEED_SOLUBLES
from src.constitutive import ConstitutiveParams
from src.scenario import (
    SECONDS_PER_HOUR,
    InitialCondition,
    ModelKind,
    Scenario,
    Stage,
    StageSchedule,
    TankGeometry,
)
from src.simulator import RunSettings

FEED_P = np.asarray(FEED_PROPORTIONS) / np.sum(FEED_PROPORTIONS)


def make_stage(t0_h, t1_h, kind="PDE", Qf=0.0, Qu=0.0, Qe=0.0, Xf=0.0, name=""):
    """Stage from table units (h, m³/h)."""
    return Stage(
        t_start=t0_h * SECONDS_PER_HOUR,
        t_end=t1_h * SECONDS_PER_HOUR,
        model_kind=ModelKind.parse(kind),
        Q_f=Qf / SECONDS_PER_HOUR,
        Q_u=Qu / SECONDS_PER_HOUR,
        Q_e=Qe / SECONDS_PER_HOUR,
        X_f=Xf,
        p_f=FEED_P,
        S_f=np.asarray(FEED_SOLUBLES),
        name=name,
    )


def make_scenario(stages, z_bar_0=1.0, z_from=None, kinetics=False, name="test"):
    """3 m deep, 400 m² tank holding the reference sludge below z_from."""
    return Scenario(
        name=name,
        geometry=TankGeometry(B=3.0, A=400.0, B_c=0.5, z_bar_0=z_bar_0),
        constitutive=ConstitutiveParams(),
        kinetics=Asm1Params.from_table_units(enabled=kinetics),
        schedule=StageSchedule(tuple(stages)),
        initial=InitialCondition(
            z_from=z_bar_0 if z_from is None else z_from,
            C0=np.asarray(EXAMPLE1_C_INITIAL),
            S0=np.asarray(EXAMPLE1_S_INITIAL),
        ),
    )


@pytest.fixture
def fast_settings():
    """Coarse grid and few bound samples."""
    return RunSettings(cells=20, sample_points=2000, snapshot_s=300.0, outlet_s=60.0)


@pytest.fixture
def closed_scenario():
    """Half an hour of closed batch settling without reactions."""
    return make_scenario([make_stage(0.0, 0.5, name="settle")], z_bar_0=1.0, z_from=1.0)


@pytest.fixture
def cycle_scenario():
    """Short fill, react, settle, draw and idle cycle with reactions."""
    return make_scenario(
        [
            make_stage(0.0, 0.2, Qf=790.0, Xf=5.0, name="fill"),
            make_stage(0.2, 0.4, kind="ODE", name="react"),
            make_stage(0.4, 0.6, name="settle"),
            make_stage(0.6, 0.7, Qe=1570.0, name="draw"),
            make_stage(0.7, 0.8, Qu=10.0, name="idle"),
        ],
        z_bar_0=1.5,
        z_from=1.5,
        kinetics=True,
        name="cycle",
    )
