"""
SBR CYCLE SIMULATOR

Drives a scenario through its stages: PDE stages advance the grid state
with the explicit or the semi-implicit scheme, mixing stages integrate the
tank means. Records outlet series, profile snapshots in physical
coordinates, a per-stage report and a mass ledger.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .biokinetics import PARTICULATE_NAMES, SOLUBLE_NAMES, ReactionBounds, ReactionModel, derivative_bounds
from .constitutive import ConstitutiveModel
from .discretization import (
    CFL_SAFETY,
    CflConstants,
    FluxChoice,
    Grid,
    Scheme,
    cfl_tau,
    mixing_tau,
    snap_steps,
    step_context,
)
from .errors import ConfigurationError, ReportError, StepError
from .explicit_scheme import SchemeSetup, StepBalance
from .explicit_scheme import step as explicit_step
from .mixing_ode import average_profile, euler_mix_step, reallocate
from .scenario import BoundaryTrajectory, Scenario, Stage, build_trajectory
from .semi_implicit import NewtonConfig
from .semi_implicit import step as semi_implicit_step
from .state import GridState, MixedState, OmegaMonitor, xi_mass

logger = logging.getLogger(__name__)

TIME_TOLERANCE = 1e-9

PROFILE_COLUMNS = ["t_s", "z_m", "X_kgpm3", *PARTICULATE_NAMES, *SOLUBLE_NAMES]
OUTLET_COLUMNS = (
    ["t_s", "Xe", "Xu"]
    + [f"{n}_e" for n in PARTICULATE_NAMES + SOLUBLE_NAMES]
    + [f"{n}_u" for n in PARTICULATE_NAMES + SOLUBLE_NAMES]
)


@dataclass(frozen=True)
class RunSettings:
    """Numerical settings of one run."""

    cells: int = 100
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    flux: FluxChoice = FluxChoice.EO
    newton: NewtonConfig = NewtonConfig()
    cfl_safety: float = CFL_SAFETY
    snapshot_s: float = 60.0
    outlet_s: float = 10.0
    sample_points: int = 100_000
    sample_seed: Optional[int] = 2023

    def validate(self) -> None:
        if self.cells < 4:
            raise ConfigurationError(f"need at least 4 cells, got {self.cells}")
        if not self.cfl_safety > 0:
            raise ConfigurationError(f"CFL safety factor must be positive, got {self.cfl_safety}")
        if self.cfl_safety > 1:
            logger.warning("CFL safety factor %.3f exceeds 1; the invariant region is not guaranteed", self.cfl_safety)
        if self.snapshot_s <= 0 or self.outlet_s <= 0:
            raise ConfigurationError("snapshot and outlet cadences must be positive")
        if self.sample_points < 1:
            raise ConfigurationError("sample_points must be positive")

    def with_updates(self, **changes) -> "RunSettings":
        return replace(self, **changes)


@dataclass
class Snapshot:
    t: float
    state: GridState
    z_bar: float


@dataclass
class MassLedger:
    """
    Cumulative ξ-mass increments of [X, S_1..S_6] over a run.

    The tracked quantity is Δξ Σ X_j over all cells in PDE stages and the
    tank mean in mixing stages.
    """

    initial: np.ndarray
    inflow: np.ndarray = field(default_factory=lambda: np.zeros(7))
    outflow: np.ndarray = field(default_factory=lambda: np.zeros(7))
    moving: np.ndarray = field(default_factory=lambda: np.zeros(7))
    reaction: np.ndarray = field(default_factory=lambda: np.zeros(7))
    discarded: np.ndarray = field(default_factory=lambda: np.zeros(7))
    coupling: np.ndarray = field(default_factory=lambda: np.zeros(7))
    handoff: np.ndarray = field(default_factory=lambda: np.zeros(7))
    final: Optional[np.ndarray] = None

    def add(self, balance: StepBalance) -> None:
        self.inflow += balance.inflow
        self.outflow += balance.outflow
        self.moving += balance.moving
        self.reaction += balance.reaction
        self.discarded += balance.discarded
        self.coupling += balance.coupling

    def add_handoff(self, delta: np.ndarray) -> None:
        self.handoff += delta

    @property
    def expected(self) -> np.ndarray:
        return (
            self.initial
            + self.inflow
            - self.outflow
            + self.moving
            + self.reaction
            - self.discarded
            + self.coupling
            + self.handoff
        )

    def closure(self) -> np.ndarray:
        """|final − expected| relative to the largest term of each component."""
        if self.final is None:
            raise ReportError("mass ledger has no final state")
        terms = np.vstack(
            (self.initial, self.final, self.inflow, self.outflow, self.moving, self.reaction)
        )
        scale = np.max(np.abs(terms), axis=0)
        gap = np.abs(self.final - self.expected)
        return np.divide(gap, scale, out=np.zeros_like(gap), where=scale > 0)

    def to_frame(self) -> pd.DataFrame:
        names = ["X", *SOLUBLE_NAMES]
        frame = pd.DataFrame(
            {
                "initial": self.initial,
                "inflow": self.inflow,
                "outflow": self.outflow,
                "moving_boundary": self.moving,
                "reaction": self.reaction,
                "discarded": self.discarded,
                "coupling": self.coupling,
                "handoff": self.handoff,
                "final": self.final if self.final is not None else np.full(7, np.nan),
            },
            index=names,
        )
        if self.final is not None:
            frame["relative_closure"] = self.closure()
        return frame


# ----------------------------------------------------------------------
# physical-coordinate output
# ----------------------------------------------------------------------


def snapshot_to_z(
    state: GridState, trajectory: BoundaryTrajectory, grid: Grid, c_conv: float
) -> pd.DataFrame:
    """
    Profile of all cells in z. The extraction-pipe cell maps to z = z̄ − x,
    that is above the surface.
    """
    z = trajectory.z_of_xi(grid.xi_cells, state.t)
    C = state.P * state.X[:, None] / c_conv
    data = np.column_stack((np.full(grid.n_cells, state.t), z, state.X, C, state.S))
    return pd.DataFrame(data, columns=PROFILE_COLUMNS)


@dataclass
class OutletRecord:
    t: float
    X_e: float
    X_u: float
    C_e: np.ndarray
    S_e: np.ndarray
    C_u: np.ndarray
    S_u: np.ndarray

    def as_row(self) -> List[float]:
        return [self.t, self.X_e, self.X_u, *self.C_e, *self.S_e, *self.C_u, *self.S_u]


def outlet_concentrations(
    state: Union[GridState, MixedState], stage: Stage, c_conv: float
) -> OutletRecord:
    """
    Extraction values from cell −1 while Q_e > 0, underflow values from
    cell N+1 while Q_u > 0, zeros otherwise. A mixed tank discharges its means.
    """
    zeros = np.zeros(6)
    if isinstance(state, MixedState):
        top = bottom = (state.X, state.p * state.X / c_conv, state.S)
    else:
        top = (state.X[0], state.P[0] * state.X[0] / c_conv, state.S[0])
        bottom = (state.X[-1], state.P[-1] * state.X[-1] / c_conv, state.S[-1])
    X_e, C_e, S_e = top if stage.Q_e > 0 else (0.0, zeros, zeros)
    X_u, C_u, S_u = bottom if stage.Q_u > 0 else (0.0, zeros, zeros)
    return OutletRecord(
        t=state.t,
        X_e=float(X_e),
        X_u=float(X_u),
        C_e=np.asarray(C_e, dtype=float),
        S_e=np.asarray(S_e, dtype=float),
        C_u=np.asarray(C_u, dtype=float),
        S_u=np.asarray(S_u, dtype=float),
    )


@dataclass
class SimulationOutput:
    """Results of one run."""

    scenario_name: str
    settings: RunSettings
    grid: Grid
    trajectory: BoundaryTrajectory
    c_conv: float
    X_c: float
    snapshots: List[Snapshot]
    outlet_rows: List[List[float]]
    stage_rows: List[Dict[str, object]]
    ledger: MassLedger
    diagnostics: Dict[str, object]

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final_state(self) -> GridState:
        return self.snapshots[-1].state

    def snapshot_at(self, t: float, atol: float = 1e-6) -> Snapshot:
        """
        Raises
        ------
        ReportError
            If no snapshot lies within ``atol`` seconds of t.
        """
        times = self.times
        if times.size:
            i = int(np.argmin(np.abs(times - t)))
            if abs(times[i] - t) <= atol:
                return self.snapshots[i]
        raise ReportError(f"no snapshot at t = {t} s in run '{self.scenario_name}' (N = {self.N})")

    @property
    def profiles(self) -> pd.DataFrame:
        frames = [
            snapshot_to_z(s.state, self.trajectory, self.grid, self.c_conv) for s in self.snapshots
        ]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=PROFILE_COLUMNS)

    @property
    def outlets(self) -> pd.DataFrame:
        return pd.DataFrame(self.outlet_rows, columns=OUTLET_COLUMNS)

    @property
    def stage_report(self) -> pd.DataFrame:
        return pd.DataFrame(self.stage_rows)

    def outlet_summary(self) -> pd.DataFrame:
        """
        Time-weighted outlet means and discharged solids per stage and outlet.
        """
        outlets = self.outlets
        rows = []
        names = list(PARTICULATE_NAMES + SOLUBLE_NAMES)
        for stage in self.trajectory.schedule.stages:
            for outlet, flow in (("e", stage.Q_e), ("u", stage.Q_u)):
                if flow <= 0:
                    continue
                inside = (outlets["t_s"] >= stage.t_start - TIME_TOLERANCE) & (
                    outlets["t_s"] <= stage.t_end + TIME_TOLERANCE
                )
                window = outlets[inside]
                if len(window) < 2:
                    continue
                t = window["t_s"].to_numpy()
                span = t[-1] - t[0]
                row = {
                    "stage": stage.name,
                    "outlet": "effluent" if outlet == "e" else "underflow",
                    "t_start_s": stage.t_start,
                    "t_end_s": stage.t_end,
                    "solids_discharged_kg": float(
                        trapezoid(flow * window[f"X{outlet}"].to_numpy(), t)
                    ),
                }
                for name in names:
                    column = window[f"{name}_{outlet}"].to_numpy()
                    row[name] = float(trapezoid(column, t) / span) if span > 0 else float(column[0])
                rows.append(row)
        return pd.DataFrame(rows)

    def blanket_heights(self, threshold: Optional[float] = None) -> pd.DataFrame:
        """
        Height above the bottom of the topmost tank cell with X ≥ threshold,
        NaN where no cell reaches it. The threshold defaults to X_c.
        """
        threshold = self.X_c if threshold is None else threshold
        grid = self.grid
        B = self.trajectory.geometry.B
        rows = []
        for snap in self.snapshots:
            X_tank = snap.state.X[grid.tank]
            hits = np.flatnonzero(X_tank >= threshold)
            if hits.size:
                z = float(self.trajectory.z_of_xi(grid.xi_cells[grid.tank][hits[0]], snap.t))
                rows.append({"t_s": snap.t, "z_m": z, "height_m": B - z})
            else:
                rows.append({"t_s": snap.t, "z_m": np.nan, "height_m": np.nan})
        return pd.DataFrame(rows)


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------


def _segments(t_start: float, t_end: float, cuts: Sequence[float]) -> List[Tuple[float, float]]:
    inner = sorted(
        t for t in cuts if t_start + TIME_TOLERANCE < t < t_end - TIME_TOLERANCE
    )
    edges = [t_start, *inner, t_end]
    return list(zip(edges[:-1], edges[1:]))


class Simulator:
    """
    Runs one scenario at one resolution.

    Args:
        scenario: Validated problem definition
        settings: Grid size, scheme, flux, Newton and output settings
        verbose: Whether to print progress banners
    """

    def __init__(self, scenario: Scenario, settings: RunSettings = RunSettings(), verbose: bool = False):
        scenario.validate()
        settings.validate()
        self.scenario = scenario
        self.settings = settings
        self.verbose = verbose

        self.constitutive = ConstitutiveModel(scenario.constitutive)
        self.reactions = ReactionModel(
            scenario.kinetics, self.constitutive.X_hat, scenario.constitutive.c_conv
        )
        self.trajectory = build_trajectory(scenario.schedule, scenario.geometry)
        self.grid = Grid(settings.cells)
        self.bounds: ReactionBounds = derivative_bounds(
            self.reactions,
            scenario.soluble_maxima(),
            n_samples=settings.sample_points,
            seed=settings.sample_seed,
        )
        self.setup = SchemeSetup(
            grid=self.grid,
            constitutive=self.constitutive,
            reactions=self.reactions,
            trajectory=self.trajectory,
            flux_choice=settings.flux,
        )

    @property
    def c_conv(self) -> float:
        return self.scenario.constitutive.c_conv

    # ------------------------------------------------------------------

    def initial_state(self) -> GridState:
        """Grid state at the first stage start from the initial condition."""
        grid = self.grid
        init = self.scenario.initial
        t0 = self.scenario.schedule.t_start
        C0 = np.asarray(init.C0, dtype=float)
        X0 = self.c_conv * float(C0.sum())
        if X0 > self.constitutive.X_hat:
            raise ConfigurationError(
                f"initial solids {X0:.4f} kg/m³ exceed X_hat = {self.constitutive.X_hat:.4f}"
            )
        z = self.trajectory.z_of_xi(grid.xi_cells, t0, 0)
        k = np.arange(grid.n_cells)
        inside = (k >= 1) & (k <= grid.N + 1) & (z >= init.z_from - 1e-12)

        X = np.zeros(grid.n_cells)
        P = np.tile(np.asarray(self.scenario.schedule.stages[0].p_f, dtype=float), (grid.n_cells, 1))
        S = np.zeros((grid.n_cells, 6))
        X[inside] = X0
        if X0 > 0:
            P[inside] = self.c_conv * C0 / X0
        S[inside] = np.asarray(init.S0, dtype=float)
        return GridState(t=t0, X=X, P=P, S=S)

    def cfl_constants(self, stage: Stage) -> CflConstants:
        return CflConstants.for_stage(stage, self.trajectory, self.constitutive, self.bounds)

    def stage_tau(self, stage: Stage, scheme: Optional[Scheme] = None) -> float:
        """Largest admissible step of a stage before snapping."""
        constants = self.cfl_constants(stage)
        if stage.is_pde:
            scheme = self.settings.scheme if scheme is None else scheme
            return cfl_tau(constants, self.grid.delta_xi, scheme, self.settings.cfl_safety)
        return mixing_tau(constants, stage.duration, self.settings.cfl_safety)

    def _advance(self, state: GridState, stage_index: int, t: float, tau: float, monitor: OmegaMonitor):
        ctx = step_context(self.trajectory, self.grid, stage_index, t, tau)
        if self.settings.scheme is Scheme.EXPLICIT:
            return explicit_step(state, self.setup, ctx, monitor)
        return semi_implicit_step(state, self.setup, ctx, self.settings.newton, monitor)

    def run(self, eval_times: Iterable[float] = ()) -> SimulationOutput:
        """
        Simulate the whole schedule.

        Every time in ``eval_times`` is hit exactly by the time grid and
        stored as a snapshot.

        Raises
        ------
        StepError
            Annotated with the time and stage of the failing step.
        """
        settings = self.settings
        grid = self.grid
        schedule = self.scenario.schedule
        eval_times = sorted(float(t) for t in eval_times)
        monitor = OmegaMonitor(self.constitutive.X_hat)

        if self.verbose:
            print("=" * 80)
            print(f" SBR SIMULATION: {self.scenario.name}")
            print("=" * 80)
            print(
                f"N = {grid.N}, scheme = {settings.scheme.value}, flux = {settings.flux.value}, "
                f"X_hat = {self.constitutive.X_hat:.3f} kg/m³"
            )

        state: Union[GridState, MixedState] = monitor.enforce(self.initial_state())
        ledger = MassLedger(initial=xi_mass(np.column_stack((state.X, state.S)), grid.delta_xi))
        snapshots: List[Snapshot] = []
        outlet_rows: List[List[float]] = []
        stage_rows: List[Dict[str, object]] = []
        totals = {"steps": 0, "newton_iterations": 0, "newton_steps": 0, "clamped": 0}
        max_residual = 0.0

        def grid_view(current) -> GridState:
            return reallocate(current, grid) if isinstance(current, MixedState) else current

        def take_snapshot(current) -> None:
            view = grid_view(current)
            if snapshots and abs(snapshots[-1].t - view.t) <= TIME_TOLERANCE:
                return
            snapshots.append(Snapshot(view.t, view.copy(), float(self.trajectory.z_bar(view.t))))

        take_snapshot(state)
        outlet_rows.append(outlet_concentrations(state, schedule.stages[0], self.c_conv).as_row())
        next_snapshot = schedule.t_start + settings.snapshot_s
        next_outlet = schedule.t_start + settings.outlet_s

        started = time.perf_counter()
        for index, stage in enumerate(schedule.stages):
            if stage.is_pde and isinstance(state, MixedState):
                before = np.concatenate(([state.X], state.S))
                state = reallocate(state, grid)
                ledger.add_handoff(xi_mass(np.column_stack((state.X, state.S)), grid.delta_xi) - before)
            elif not stage.is_pde and isinstance(state, GridState):
                before = xi_mass(np.column_stack((state.X, state.S)), grid.delta_xi)
                state = monitor.enforce_mixed(average_profile(state, grid, stage.p_f))
                ledger.add_handoff(np.concatenate(([state.X], state.S)) - before)

            tau_max = self.stage_tau(stage)
            stage_steps = 0
            stage_iterations = 0
            first_tau = None
            logger.info(
                "stage %d (%s, %s): [%.1f, %.1f] s, tau_max = %.4g s",
                index,
                stage.name,
                stage.model_kind.value,
                stage.t_start,
                stage.t_end,
                tau_max,
            )
            for seg_start, seg_end in _segments(stage.t_start, stage.t_end, eval_times):
                n_steps, tau = snap_steps(seg_end - seg_start, tau_max)
                first_tau = tau if first_tau is None else first_tau
                for i in range(n_steps):
                    t = seg_start + i * tau
                    try:
                        if stage.is_pde:
                            result = self._advance(state, index, t, tau, monitor)
                            totals["newton_iterations"] += result.newton_iterations
                            stage_iterations += result.newton_iterations
                            totals["newton_steps"] += 1 if result.newton_iterations else 0
                            totals["clamped"] += result.fluxes.clamped
                            max_residual = max(max_residual, result.newton_residual)
                        else:
                            result = euler_mix_step(state, self.trajectory, index, self.reactions, tau, monitor)
                    except StepError as exc:
                        raise exc.annotate(t, index, stage.name)
                    state = result.state
                    state.t = seg_start + (i + 1) * tau
                    ledger.add(result.balance)
                    stage_steps += 1

                    if state.t >= next_outlet - TIME_TOLERANCE:
                        outlet_rows.append(outlet_concentrations(state, stage, self.c_conv).as_row())
                        while next_outlet <= state.t + TIME_TOLERANCE:
                            next_outlet += settings.outlet_s
                    if state.t >= next_snapshot - TIME_TOLERANCE:
                        take_snapshot(state)
                        while next_snapshot <= state.t + TIME_TOLERANCE:
                            next_snapshot += settings.snapshot_s
                if any(abs(seg_end - te) <= TIME_TOLERANCE for te in eval_times):
                    take_snapshot(state)

            totals["steps"] += stage_steps
            stage_rows.append(
                {
                    "stage": index,
                    "name": stage.name,
                    "model": stage.model_kind.value,
                    "t_start_s": stage.t_start,
                    "t_end_s": stage.t_end,
                    "tau_s": first_tau,
                    "steps": stage_steps,
                    "mean_newton_iterations": (
                        stage_iterations / stage_steps
                        if stage.is_pde and settings.scheme is Scheme.SEMI_IMPLICIT and stage_steps
                        else np.nan
                    ),
                    "z_bar_start_m": float(self.trajectory.z_bar(stage.t_start, index)),
                    "z_bar_end_m": float(self.trajectory.z_bar(stage.t_end, index)),
                }
            )
            if self.verbose:
                print(
                    f"  stage {index} {stage.name:<8} {stage.model_kind.value}: "
                    f"{stage_steps} steps, tau = {first_tau:.4g} s"
                )
        wall_clock = time.perf_counter() - started

        take_snapshot(state)
        if isinstance(state, MixedState):
            ledger.final = np.concatenate(([state.X], state.S))
        else:
            ledger.final = xi_mass(np.column_stack((state.X, state.S)), grid.delta_xi)

        newton_steps = totals["newton_steps"]
        diagnostics = {
            "steps": totals["steps"],
            "newton_iterations": totals["newton_iterations"],
            "mean_newton_iterations": (
                totals["newton_iterations"] / newton_steps if newton_steps else float("nan")
            ),
            "max_newton_residual": max_residual,
            "max_omega_slack": monitor.max_slack,
            "omega_maxima": dict(monitor.maxima),
            "clamped_inputs": totals["clamped"],
            "wall_clock_s": wall_clock,
            "mass_closure": float(np.max(ledger.closure())),
        }
        if self.verbose:
            print(
                f"Finished in {wall_clock:.2f} s: {totals['steps']} steps, "
                f"max Omega slack {monitor.max_slack:.2e}, mass closure {diagnostics['mass_closure']:.2e}"
            )
        logger.info("run '%s' finished: %s", self.scenario.name, diagnostics)
        return SimulationOutput(
            scenario_name=self.scenario.name,
            settings=settings,
            grid=grid,
            trajectory=self.trajectory,
            c_conv=self.c_conv,
            X_c=self.scenario.constitutive.X_c,
            snapshots=snapshots,
            outlet_rows=outlet_rows,
            stage_rows=stage_rows,
            ledger=ledger,
            diagnostics=diagnostics,
        )


def run(
    scenario: Scenario,
    N: int = 100,
    scheme: Scheme = Scheme.SEMI_IMPLICIT,
    flux: FluxChoice = FluxChoice.EO,
    newton_config: NewtonConfig = NewtonConfig(),
    eval_times: Iterable[float] = (),
    settings: Optional[RunSettings] = None,
) -> SimulationOutput:
    """Convenience wrapper: one run of ``scenario`` at N cells."""
    base = settings or RunSettings()
    settings = base.with_updates(cells=N, scheme=scheme, flux=flux, newton=newton_config)
    return Simulator(scenario, settings).run(eval_times)
