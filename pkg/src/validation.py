"""
VALIDATION STUDIES

Reference solutions, the relative L¹ error between two runs, convergence
studies with experimental orders, Newton tolerance sweeps, scheme
efficiency benchmarks and the moving-mesh stationarity check.

Independent runs are dispatched to a process pool whose size is read from
the SBR_SIM_THREADS environment variable (default 1, sequential).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .discretization import FluxChoice, Grid, Scheme
from .errors import ConfigurationError, ReportError
from .scenario import Scenario, Stage, StageSchedule, SECONDS_PER_HOUR
from .semi_implicit import NewtonConfig
from .simulator import PROFILE_COLUMNS, RunSettings, SimulationOutput, Simulator, Snapshot
from .state import GridState

logger = logging.getLogger(__name__)

DEFAULT_N_REF = 1200
SAMPLES_PER_REFERENCE_CELL = 10
NORM_FLOOR = 1e-14
THREADS_ENV = "SBR_SIM_THREADS"
DEFAULT_EPSILONS = tuple(10.0**-k for k in range(1, 13))


def worker_count() -> int:
    """Worker pool size from SBR_SIM_THREADS."""
    raw = os.environ.get(THREADS_ENV, "1").strip() or "1"
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got '{raw}'") from exc
    if workers < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be at least 1, got {workers}")
    return workers


# ----------------------------------------------------------------------
# profiles loaded from disk
# ----------------------------------------------------------------------


@dataclass
class ProfileSet:
    """
    Snapshots read back from a profile CSV.

    Offers the part of the SimulationOutput interface that the error
    metric uses.
    """

    snapshots: List[Snapshot]
    c_conv: float
    source: str = ""

    @property
    def N(self) -> int:
        return self.snapshots[0].state.N

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def snapshot_at(self, t: float, atol: float = 1e-6) -> Snapshot:
        times = self.times
        if times.size:
            i = int(np.argmin(np.abs(times - t)))
            if abs(times[i] - t) <= atol:
                return self.snapshots[i]
        raise ReportError(f"no snapshot at t = {t} s in profiles '{self.source}'")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, c_conv: float, source: str = "") -> "ProfileSet":
        missing = [c for c in PROFILE_COLUMNS if c not in frame.columns]
        if missing:
            raise ReportError(f"profile table '{source}' lacks columns {missing}")
        particulates = list(PROFILE_COLUMNS[3:9])
        solubles = list(PROFILE_COLUMNS[9:15])
        snapshots = []
        for t, group in frame.groupby("t_s", sort=True):
            X = group["X_kgpm3"].to_numpy(dtype=float)
            if X.size < 7:
                raise ReportError(f"profile at t = {t} s in '{source}' has only {X.size} cells")
            C = group[particulates].to_numpy(dtype=float)
            S = group[solubles].to_numpy(dtype=float)
            P = np.full_like(C, 1.0 / 6.0)
            occupied = X > 0
            P[occupied] = c_conv * C[occupied] / X[occupied, None]
            z = group["z_m"].to_numpy(dtype=float)
            snapshots.append(Snapshot(float(t), GridState(float(t), X, P, S), float(z[1])))
        if not snapshots:
            raise ReportError(f"profile table '{source}' is empty")
        return cls(snapshots=snapshots, c_conv=c_conv, source=source)

    @classmethod
    def from_csv(cls, path, c_conv: float) -> "ProfileSet":
        path = Path(path)
        if not path.exists():
            raise ReportError(f"reference profile file not found: {path}")
        return cls.from_frame(pd.read_csv(path), c_conv, source=str(path))


# ----------------------------------------------------------------------
# error metric
# ----------------------------------------------------------------------


def sample_components(state: GridState, c_conv: float, xi: np.ndarray) -> np.ndarray:
    """
    Piecewise-constant lookup of (C, S) at ξ ∈ [0, 1]; returns (len(xi), 12).

    Cell j covers [(j − ½)Δξ, (j + ½)Δξ] clipped to the tank.
    """
    N = state.N
    dxi = 1.0 / (N + 0.5)
    j = np.clip(np.floor(xi / dxi + 0.5).astype(int), 0, N)
    k = j + 1
    C = state.P[k] * state.X[k, None] / c_conv
    return np.hstack((C, state.S[k]))


def relative_error(coarse, reference, t: float) -> float:
    """
    Sum over the 12 components of ‖coarse − ref‖_L¹ / ‖ref‖_L¹ at time t.

    Both profiles are sampled at 10·N_ref uniform ξ midpoints. Components
    whose reference norm is below 1e-14 are skipped.

    Raises
    ------
    ReportError
        If either output has no snapshot at t.
    """
    coarse_snap = coarse.snapshot_at(t)
    ref_snap = reference.snapshot_at(t)
    n = SAMPLES_PER_REFERENCE_CELL * ref_snap.state.N
    xi = (np.arange(n) + 0.5) / n
    values = sample_components(coarse_snap.state, coarse.c_conv, xi)
    ref_values = sample_components(ref_snap.state, reference.c_conv, xi)
    ref_norm = np.abs(ref_values).mean(axis=0)
    diff_norm = np.abs(values - ref_values).mean(axis=0)
    kept = ref_norm >= NORM_FLOOR
    if not np.all(kept):
        logger.warning(
            "skipping %d components with vanishing reference norm at t = %.1f s",
            int(np.sum(~kept)),
            t,
        )
    return float(np.sum(diff_norm[kept] / ref_norm[kept]))


# ----------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------

REPORT_COLUMNS = ["N", "scheme", "t_s", "e_rel", "cpu_s", "mean_newton_iterations", "eoc"]


@dataclass
class ErrorReport:
    """Rows of (N, scheme, t) with e_rel, CPU seconds, mean Newton iterations and EOC."""

    frame: pd.DataFrame
    title: str = ""
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.frame.empty:
            return
        if (self.frame["e_rel"] < 0).any():
            raise ReportError("negative relative error in report")
        if "epsilon" in self.frame.columns:
            return
        for key, group in self.frame.groupby(["scheme", "t_s"]):
            if not group["N"].is_monotonic_increasing or group["N"].duplicated().any():
                raise ReportError(f"N is not strictly increasing within {key}")

    def __len__(self) -> int:
        return len(self.frame)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame.to_csv(path, index=False, float_format="%.10g")
        return path

    def to_text(self) -> str:
        lines = ["=" * 80, f" {self.title or 'ERROR REPORT'}", "=" * 80]
        for key, value in self.meta.items():
            lines.append(f"{key}: {value}")
        lines.append("")
        lines.append(self.frame.to_string(index=False, float_format=lambda v: f"{v:.6g}"))
        return "\n".join(lines)


def experimental_orders(N: Sequence[int], errors: Sequence[float]) -> List[float]:
    """
    log(e_prev/e)/log(N/N_prev) per row, NaN on the first row; equals
    log₂(e_N/e_{2N}) under doubling.
    """
    orders = [float("nan")]
    for (n0, e0), (n1, e1) in zip(zip(N[:-1], errors[:-1]), zip(N[1:], errors[1:])):
        if e0 > 0 and e1 > 0:
            orders.append(math.log(e0 / e1) / math.log(n1 / n0))
        else:
            orders.append(float("nan"))
    return orders


# ----------------------------------------------------------------------
# runs
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RunJob:
    scenario: Scenario
    settings: RunSettings
    eval_times: Tuple[float, ...]


def _execute(job: RunJob) -> SimulationOutput:
    return Simulator(job.scenario, job.settings).run(job.eval_times)


def run_jobs(jobs: Sequence[RunJob], workers: Optional[int] = None) -> List[SimulationOutput]:
    """Run independent jobs, in a process pool when more than one worker is allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_execute(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_execute, jobs))


def reference_run(
    scenario: Scenario,
    N_ref: int = DEFAULT_N_REF,
    eval_times: Iterable[float] = (),
    settings: Optional[RunSettings] = None,
) -> SimulationOutput:
    """Explicit scheme with the Godunov flux at N_ref cells."""
    base = settings or RunSettings()
    ref_settings = base.with_updates(cells=N_ref, scheme=Scheme.EXPLICIT, flux=FluxChoice.GODUNOV)
    logger.info("reference run at N_ref = %d", N_ref)
    return Simulator(scenario, ref_settings).run(tuple(eval_times))


def truncated(scenario: Scenario, t_end: float) -> Scenario:
    """The scenario with its schedule cut at t_end."""
    stages = []
    for stage in scenario.schedule.stages:
        if stage.t_start >= t_end - 1e-9:
            break
        if stage.t_end > t_end:
            stage = Stage(
                t_start=stage.t_start,
                t_end=t_end,
                model_kind=stage.model_kind,
                Q_f=stage.Q_f,
                Q_u=stage.Q_u,
                Q_e=stage.Q_e,
                X_f=stage.X_f,
                p_f=stage.p_f,
                S_f=stage.S_f,
                name=stage.name,
            )
        stages.append(stage)
    if not stages:
        raise ConfigurationError(f"schedule has no stage before t = {t_end} s")
    return scenario.with_schedule(StageSchedule(tuple(stages)))


def zero_flow(scenario: Scenario) -> Scenario:
    """The scenario with every bulk flow and feed set to zero."""
    stages = tuple(
        Stage(
            t_start=s.t_start,
            t_end=s.t_end,
            model_kind=s.model_kind,
            Q_f=0.0,
            Q_u=0.0,
            Q_e=0.0,
            X_f=0.0,
            p_f=s.p_f,
            S_f=s.S_f,
            name=s.name,
        )
        for s in scenario.schedule.stages
    )
    return scenario.with_schedule(StageSchedule(stages))


def _prepare(scenario: Scenario, eval_times: Sequence[float]) -> Tuple[Scenario, Tuple[float, ...]]:
    times = tuple(sorted(float(t) for t in eval_times))
    if not times:
        raise ConfigurationError("at least one evaluation time is required")
    return truncated(scenario, max(times)), times


def convergence_study(
    scenario: Scenario,
    N_list: Sequence[int],
    schemes: Sequence[Scheme] = (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT),
    eval_times: Sequence[float] = (SECONDS_PER_HOUR,),
    reference=None,
    N_ref: int = DEFAULT_N_REF,
    settings: Optional[RunSettings] = None,
    workers: Optional[int] = None,
) -> ErrorReport:
    """
    Runs every (N, scheme), measures e_rel against the reference at each
    evaluation time and the EOC between successive N.

    ``reference`` may be a SimulationOutput or a ProfileSet; it is computed
    with ``reference_run`` when omitted.
    """
    scenario, times = _prepare(scenario, eval_times)
    base = settings or RunSettings()
    N_list = sorted(int(n) for n in N_list)
    if reference is None:
        reference = reference_run(scenario, N_ref, times, base)
    jobs = [
        RunJob(scenario, base.with_updates(cells=n, scheme=scheme), times)
        for scheme in schemes
        for n in N_list
    ]
    outputs = run_jobs(jobs, workers)

    rows = []
    for scheme in schemes:
        runs = [(job, out) for job, out in zip(jobs, outputs) if job.settings.scheme is scheme]
        for t in times:
            errors = [relative_error(out, reference, t) for _, out in runs]
            orders = experimental_orders([job.settings.cells for job, _ in runs], errors)
            for (job, out), e, eoc in zip(runs, errors, orders):
                rows.append(
                    {
                        "N": job.settings.cells,
                        "scheme": scheme.value,
                        "t_s": t,
                        "e_rel": e,
                        "cpu_s": out.diagnostics["wall_clock_s"],
                        "mean_newton_iterations": out.diagnostics["mean_newton_iterations"],
                        "eoc": eoc,
                    }
                )
    return ErrorReport(
        pd.DataFrame(rows, columns=REPORT_COLUMNS),
        title=f"CONVERGENCE STUDY: {scenario.name}",
        meta={"N_ref": reference.N, "eval_times_s": list(times)},
    )


def tolerance_sweep(
    scenario: Scenario,
    N: int,
    epsilons: Sequence[float] = DEFAULT_EPSILONS,
    eval_times: Sequence[float] = (SECONDS_PER_HOUR,),
    reference=None,
    N_ref: int = DEFAULT_N_REF,
    settings: Optional[RunSettings] = None,
    workers: Optional[int] = None,
) -> ErrorReport:
    """Semi-implicit runs at N cells for each Newton tolerance ε."""
    scenario, times = _prepare(scenario, eval_times)
    base = settings or RunSettings()
    if reference is None:
        reference = reference_run(scenario, N_ref, times, base)
    jobs = [
        RunJob(
            scenario,
            base.with_updates(
                cells=N,
                scheme=Scheme.SEMI_IMPLICIT,
                newton=NewtonConfig(epsilon=eps, max_iter=base.newton.max_iter),
            ),
            times,
        )
        for eps in epsilons
    ]
    outputs = run_jobs(jobs, workers)
    rows = []
    for eps, out in zip(epsilons, outputs):
        for t in times:
            rows.append(
                {
                    "epsilon": eps,
                    "N": N,
                    "scheme": Scheme.SEMI_IMPLICIT.value,
                    "t_s": t,
                    "e_rel": relative_error(out, reference, t),
                    "cpu_s": out.diagnostics["wall_clock_s"],
                    "mean_newton_iterations": out.diagnostics["mean_newton_iterations"],
                    "eoc": float("nan"),
                }
            )
    return ErrorReport(
        pd.DataFrame(rows, columns=["epsilon", *REPORT_COLUMNS]),
        title=f"TOLERANCE SWEEP: {scenario.name}, N = {N}",
        meta={"N_ref": reference.N, "eval_times_s": list(times)},
    )


def efficiency_benchmark(
    scenario: Scenario,
    N_list: Sequence[int],
    eval_times: Sequence[float] = (SECONDS_PER_HOUR,),
    settings: Optional[RunSettings] = None,
) -> pd.DataFrame:
    """
    Wall clock of both schemes per N and the speed-up explicit/semi-implicit.

    Runs are sequential so the timings do not compete for cores.
    """
    scenario, times = _prepare(scenario, eval_times)
    base = settings or RunSettings()
    rows = []
    for n in sorted(int(v) for v in N_list):
        timings = {}
        iterations = float("nan")
        for scheme in (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT):
            out = Simulator(scenario, base.with_updates(cells=n, scheme=scheme)).run(times)
            timings[scheme] = (out.diagnostics["wall_clock_s"], out.diagnostics["steps"])
            if scheme is Scheme.SEMI_IMPLICIT:
                iterations = out.diagnostics["mean_newton_iterations"]
        explicit_s, explicit_steps = timings[Scheme.EXPLICIT]
        semi_s, semi_steps = timings[Scheme.SEMI_IMPLICIT]
        rows.append(
            {
                "N": n,
                "explicit_s": explicit_s,
                "explicit_steps": explicit_steps,
                "semi_implicit_s": semi_s,
                "semi_implicit_steps": semi_steps,
                "mean_newton_iterations": iterations,
                "speedup": explicit_s / semi_s if semi_s > 0 else float("inf"),
            }
        )
    return pd.DataFrame(rows)


def sediment_deviation(output: SimulationOutput, t_early: float, t_late: float) -> Dict[str, float]:
    """
    L¹ distance in z between the profiles at t_early and t_late over the
    sediment cells (X > X_c) of the early profile.
    """
    grid: Grid = output.grid
    trajectory = output.trajectory
    early = output.snapshot_at(t_early).state
    late = output.snapshot_at(t_late).state
    tank_xi = grid.xi_cells[grid.tank]
    X_early = early.X[grid.tank]
    sediment = X_early > output.X_c
    if not np.any(sediment):
        return {"deviation": 0.0, "relative_deviation": 0.0, "sediment_cells": 0}
    z = trajectory.z_of_xi(tank_xi[sediment], t_early)
    xi_late = np.clip(trajectory.xi_of_z(z, t_late), 0.0, 1.0)
    dxi = grid.delta_xi
    j = np.clip(np.floor(xi_late / dxi + 0.5).astype(int), 0, grid.N)
    X_late = late.X[j + 1]
    h = dxi * (trajectory.geometry.B - float(trajectory.z_bar(t_early)))
    deviation = float(np.sum(np.abs(X_late - X_early[sediment])) * h)
    mass = float(np.sum(X_early[sediment]) * h)
    return {
        "deviation": deviation,
        "relative_deviation": deviation / mass if mass > 0 else 0.0,
        "sediment_cells": int(np.sum(sediment)),
    }


def moving_mesh_stationarity(
    scenario: Scenario,
    N_list: Sequence[int] = (100, 200, 400),
    t_early: float = 25 * SECONDS_PER_HOUR,
    t_late: float = 70 * SECONDS_PER_HOUR,
    settings: Optional[RunSettings] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Sediment-region deviation between t_early and t_late per N."""
    base = settings or RunSettings()
    N_list = sorted(int(n) for n in N_list)
    times = (t_early, t_late)
    jobs = [
        RunJob(scenario, base.with_updates(cells=n, scheme=Scheme.SEMI_IMPLICIT), times)
        for n in N_list
    ]
    rows = []
    for n, out in zip(N_list, run_jobs(jobs, workers)):
        row = {"N": n, **sediment_deviation(out, t_early, t_late)}
        row["cpu_s"] = out.diagnostics["wall_clock_s"]
        rows.append(row)
    return pd.DataFrame(rows)


# ----------------------------------------------------------------------
# study driver
# ----------------------------------------------------------------------


class ValidationStudy:
    """
    Runs the validation studies of one scenario and writes their reports.

    Args:
        scenario: Validated problem definition
        settings: Base numerical settings
        out_dir: Directory receiving CSV and text reports
        verbose: Print progress banners
    """

    def __init__(
        self,
        scenario: Scenario,
        settings: Optional[RunSettings] = None,
        out_dir="reports",
        verbose: bool = True,
    ):
        self.scenario = scenario
        self.settings = settings or RunSettings()
        self.out_dir = Path(out_dir)
        self.verbose = verbose

    def _banner(self, title: str) -> None:
        if self.verbose:
            print("=" * 80)
            print(f" {title}")
            print("=" * 80)

    def _write(self, frame: pd.DataFrame, stem: str, text: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = self.out_dir / f"{stem}.csv"
        frame.to_csv(csv_path, index=False, float_format="%.10g")
        (self.out_dir / f"{stem}.txt").write_text(text + "\n", encoding="utf-8")
        if self.verbose:
            print(text)
            print(f"\nReport saved to {csv_path}")
        return csv_path

    def convergence(self, N_list, schemes=(Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT),
                    eval_times=(SECONDS_PER_HOUR,), reference=None, N_ref=DEFAULT_N_REF) -> ErrorReport:
        self._banner(f"CONVERGENCE STUDY: {self.scenario.name}")
        report = convergence_study(
            self.scenario, N_list, schemes, eval_times, reference, N_ref, self.settings
        )
        self._write(report.frame, "convergence", report.to_text())
        return report

    def tolerance(self, N: int, epsilons=DEFAULT_EPSILONS, eval_times=(SECONDS_PER_HOUR,),
                  reference=None, N_ref=DEFAULT_N_REF) -> ErrorReport:
        self._banner(f"TOLERANCE SWEEP: {self.scenario.name}")
        report = tolerance_sweep(
            self.scenario, N, epsilons, eval_times, reference, N_ref, self.settings
        )
        self._write(report.frame, "tolerance", report.to_text())
        return report

    def benchmark(self, N_list, eval_times=(SECONDS_PER_HOUR,)) -> pd.DataFrame:
        self._banner(f"EFFICIENCY BENCHMARK: {self.scenario.name}")
        frame = efficiency_benchmark(self.scenario, N_list, eval_times, self.settings)
        self._write(frame, "benchmark", frame.to_string(index=False))
        return frame

    def stationarity(self, N_list=(100, 200, 400), t_early=25 * SECONDS_PER_HOUR,
                     t_late=70 * SECONDS_PER_HOUR) -> pd.DataFrame:
        self._banner(f"MOVING-MESH STATIONARITY: {self.scenario.name}")
        frame = moving_mesh_stationarity(self.scenario, N_list, t_early, t_late, self.settings)
        self._write(frame, "stationarity", frame.to_string(index=False))
        return frame
