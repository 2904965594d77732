"""
STAGE SCHEDULE AND MOVING-BOUNDARY TRAJECTORY

Piecewise-constant bulk flows per stage, the induced surface position z̄(t),
the fixed-domain transformation ξ = (z − z̄)/(B − z̄) with its pipe
counterpart ξ = −x/(B − z̄), and the coefficients α, β and q̃ of the
transformed equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError

if TYPE_CHECKING:
    from .biokinetics import Asm1Params
    from .constitutive import ConstitutiveParams

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0


class ModelKind(str, Enum):
    PDE = "PDE"
    ODE = "ODE"

    @classmethod
    def parse(cls, text: str) -> "ModelKind":
        key = str(text).strip().upper()
        if key in ("ODE", "ODE-MIXING", "MIXING"):
            return cls.ODE
        if key == "PDE":
            return cls.PDE
        raise ConfigurationError(f"unknown model kind '{text}' (expected PDE or ODE)")


@dataclass(frozen=True)
class Stage:
    """
    One stage of the cycle. Times in s, flows in m³/s, X_f in kg/m³.
    """

    t_start: float
    t_end: float
    model_kind: ModelKind
    Q_f: float
    Q_u: float
    Q_e: float
    X_f: float
    p_f: np.ndarray = field(repr=False)
    S_f: np.ndarray = field(repr=False)
    name: str = ""

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def is_pde(self) -> bool:
        return self.model_kind is ModelKind.PDE

    def validate(self) -> None:
        label = self.name or f"[{self.t_start}, {self.t_end}]"
        if not self.t_end > self.t_start:
            raise ConfigurationError(f"stage {label}: t_end must exceed t_start")
        for key in ("Q_f", "Q_u", "Q_e", "X_f"):
            if getattr(self, key) < 0:
                raise ConfigurationError(f"stage {label}: {key} must be nonnegative")
        if self.Q_f > 0 and self.Q_e > 0:
            raise ConfigurationError(
                f"stage {label}: feed and extraction cannot be active together"
            )
        p_f = np.asarray(self.p_f, dtype=float)
        if p_f.shape != (6,) or np.any(p_f < 0) or abs(p_f.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"stage {label}: p_f must be a 6-vector summing to 1")
        if np.asarray(self.S_f).shape != (6,) or np.any(np.asarray(self.S_f) < 0):
            raise ConfigurationError(f"stage {label}: S_f must be 6 nonnegative values")


@dataclass(frozen=True)
class TankGeometry:
    """Depth B, area A, minimum mixture depth B_c and initial surface z̄(0), in m."""

    B: float
    A: float
    B_c: float
    z_bar_0: float

    def validate(self) -> None:
        if self.B <= 0 or self.A <= 0:
            raise ConfigurationError("tank depth and area must be positive")
        if not 0 < self.B_c <= self.B:
            raise ConfigurationError(f"minimum depth B_c must lie in (0, B], got {self.B_c}")
        if not 0 <= self.z_bar_0 < self.B:
            raise ConfigurationError(
                f"initial surface z_bar_0 must lie in [0, B), got {self.z_bar_0}"
            )
        if self.B - self.z_bar_0 < self.B_c:
            raise ConfigurationError(
                f"initial depth {self.B - self.z_bar_0:.4f} m is below B_c = {self.B_c} m"
            )


@dataclass(frozen=True)
class StageSchedule:
    stages: Tuple[Stage, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))

    def validate(self) -> None:
        if not self.stages:
            raise ConfigurationError("schedule has no stages")
        for stage in self.stages:
            stage.validate()
        for prev, nxt in zip(self.stages[:-1], self.stages[1:]):
            if abs(prev.t_end - nxt.t_start) > 1e-9 * max(1.0, abs(prev.t_end)):
                raise ConfigurationError(
                    f"stages are not contiguous: {prev.name or prev.t_end} ends at "
                    f"{prev.t_end} s, next starts at {nxt.t_start} s"
                )

    @property
    def t_start(self) -> float:
        return self.stages[0].t_start

    @property
    def t_end(self) -> float:
        return self.stages[-1].t_end

    def stage_index_at(self, t: float) -> int:
        """Index of the stage containing t; stage ends belong to the next stage."""
        for i, stage in enumerate(self.stages):
            if t < stage.t_end:
                return i
        return len(self.stages) - 1

    def __len__(self) -> int:
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)


class BoundaryTrajectory:
    """
    Piecewise-affine surface trajectory z̄(t) of a schedule.

    Args:
        schedule: Validated stage schedule
        geometry: Validated tank geometry
        z_knots: z̄ at the start of each stage followed by z̄ at the final time
    """

    def __init__(self, schedule: StageSchedule, geometry: TankGeometry, z_knots: Sequence[float]):
        self.schedule = schedule
        self.geometry = geometry
        self.z_knots = np.asarray(z_knots, dtype=float)
        self.t_knots = np.array(
            [s.t_start for s in schedule.stages] + [schedule.t_end], dtype=float
        )
        self.zeta_effective = float(np.max(1.0 / (geometry.B - self.z_knots)))

    # flows -----------------------------------------------------------

    def z_bar_prime(self, stage: Stage) -> float:
        """z̄′ = (Q_u − Q̄)/A with Q̄ = Q_f − Q_e."""
        return (stage.Q_u + stage.Q_e - stage.Q_f) / self.geometry.A

    def rates(self, stage: Stage) -> Tuple[float, float, float]:
        """Area-specific flows (q_f, q_u, q_e) in m/s."""
        A = self.geometry.A
        return stage.Q_f / A, stage.Q_u / A, stage.Q_e / A

    # surface ---------------------------------------------------------

    def z_bar(self, t, stage_index: Optional[int] = None):
        if stage_index is None:
            return np.interp(t, self.t_knots, self.z_knots)
        stage = self.schedule.stages[stage_index]
        return self.z_knots[stage_index] + self.z_bar_prime(stage) * (t - stage.t_start)

    def beta(self, t, stage_index: Optional[int] = None):
        return 1.0 / (self.geometry.B - self.z_bar(t, stage_index))

    def volume(self, t, stage_index: Optional[int] = None):
        """V̄(t) = A (B − z̄(t))."""
        return self.geometry.A * (self.geometry.B - self.z_bar(t, stage_index))

    def alpha(self, xi, t, stage_index: Optional[int] = None):
        """α(ξ, t) = −z̄′ (1 − ξ) β."""
        if stage_index is None:
            stage_index = self.schedule.stage_index_at(t)
        stage = self.schedule.stages[stage_index]
        xi = np.asarray(xi, dtype=float)
        return -self.z_bar_prime(stage) * (1.0 - xi) * self.beta(t, stage_index)

    def q_tilde(self, xi, t, stage_index: Optional[int] = None):
        """
        Transformed bulk velocity at interface positions ξ.

        Pipe interfaces (ξ < 0) carry −β(ξ(q_u + q_e) + q_e) during extraction
        and 0 otherwise; tank interfaces carry α + βq_u.
        """
        if stage_index is None:
            stage_index = self.schedule.stage_index_at(t)
        stage = self.schedule.stages[stage_index]
        _, q_u, q_e = self.rates(stage)
        beta = self.beta(t, stage_index)
        xi = np.asarray(xi, dtype=float)
        tank = self.alpha(xi, t, stage_index) + beta * q_u
        pipe = -beta * (xi * (q_u + q_e) + q_e) if q_e > 0 else np.zeros_like(xi)
        return np.where(xi < 0, pipe, tank)

    # coordinates -----------------------------------------------------

    def xi_of_z(self, z, t, stage_index: Optional[int] = None):
        z_bar = self.z_bar(t, stage_index)
        return (np.asarray(z, dtype=float) - z_bar) / (self.geometry.B - z_bar)

    def z_of_xi(self, xi, t, stage_index: Optional[int] = None):
        z_bar = self.z_bar(t, stage_index)
        return (self.geometry.B - z_bar) * np.asarray(xi, dtype=float) + z_bar

    def xi_of_pipe(self, x, t, stage_index: Optional[int] = None):
        """Pipe height x above the surface mapped to ξ = −x/(B − z̄)."""
        return -np.asarray(x, dtype=float) / (self.geometry.B - self.z_bar(t, stage_index))

    def pipe_of_xi(self, xi, t, stage_index: Optional[int] = None):
        return -np.asarray(xi, dtype=float) * (self.geometry.B - self.z_bar(t, stage_index))


def build_trajectory(schedule: StageSchedule, geometry: TankGeometry) -> BoundaryTrajectory:
    """
    Integrate the surface position over the schedule.

    Raises
    ------
    ConfigurationError
        If z̄ leaves [0, B) or the mixture depth drops below B_c in any stage.
    """
    schedule.validate()
    geometry.validate()
    knots: List[float] = [geometry.z_bar_0]
    for i, stage in enumerate(schedule.stages):
        slope = (stage.Q_u + stage.Q_e - stage.Q_f) / geometry.A
        z_end = knots[-1] + slope * stage.duration
        label = stage.name or f"#{i}"
        if z_end < -1e-12:
            raise ConfigurationError(
                f"stage {label}: surface rises above the tank top (z_bar = {z_end:.4f} m)"
            )
        if geometry.B - z_end < geometry.B_c - 1e-12:
            raise ConfigurationError(
                f"stage {label}: mixture depth {geometry.B - z_end:.4f} m falls below "
                f"B_c = {geometry.B_c} m"
            )
        knots.append(max(z_end, 0.0))
    trajectory = BoundaryTrajectory(schedule, geometry, knots)
    logger.info(
        "trajectory: z_bar knots %s m, zeta_effective = %.4f 1/m",
        np.round(trajectory.z_knots, 6).tolist(),
        trajectory.zeta_effective,
    )
    return trajectory


@dataclass(frozen=True)
class InitialCondition:
    """
    Particulates C⁰ and solubles S⁰ below depth ``z_from``; zero above.
    """

    z_from: float
    C0: np.ndarray = field(repr=False)
    S0: np.ndarray = field(repr=False)

    def validate(self) -> None:
        C0 = np.asarray(self.C0, dtype=float)
        S0 = np.asarray(self.S0, dtype=float)
        if C0.shape != (6,) or S0.shape != (6,):
            raise ConfigurationError("initial C and S must have 6 components each")
        if np.any(C0 < 0) or np.any(S0 < 0):
            raise ConfigurationError("initial concentrations must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    """A complete problem definition: tank, laws, kinetics, cycle and initial state."""

    name: str
    geometry: TankGeometry
    constitutive: ConstitutiveParams
    kinetics: Asm1Params
    schedule: StageSchedule
    initial: InitialCondition

    def validate(self) -> None:
        self.geometry.validate()
        self.constitutive.validate()
        self.kinetics.validate()
        self.schedule.validate()
        self.initial.validate()
        if not 0 <= self.initial.z_from <= self.geometry.B:
            raise ConfigurationError(
                f"initial depth z_from = {self.initial.z_from} outside [0, B]"
            )

    def with_schedule(self, schedule: StageSchedule) -> "Scenario":
        return Scenario(
            name=self.name,
            geometry=self.geometry,
            constitutive=self.constitutive,
            kinetics=self.kinetics,
            schedule=schedule,
            initial=self.initial,
        )

    def soluble_maxima(self) -> np.ndarray:
        """Componentwise maxima of S⁰ and all feed solubles."""
        rows = [np.asarray(self.initial.S0, dtype=float)]
        rows += [np.asarray(s.S_f, dtype=float) for s in self.schedule.stages]
        return np.max(np.vstack(rows), axis=0)
