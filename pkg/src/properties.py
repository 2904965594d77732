"""
PROPERTY SUITES

Randomized checks of the discrete guarantees: one step from a random
state of the invariant region stays inside it, the X updates are monotone
and the implicit systems are M-matrices. Used by the ``validate`` command
and by the tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .discretization import Scheme, StepContext, assemble_fluxes, step_context
from .errors import NumericalError, ValidationFailure
from .explicit_scheme import EMPTY_THRESHOLD, liquid_weights, predict_x
from .explicit_scheme import step as explicit_step
from .mixing_ode import euler_mix_step
from .semi_implicit import (
    NewtonConfig,
    eliminate_empty_rows,
    mixed_fluxes,
    newton_jacobian,
    percentage_system,
    predictor_x,
    secant_matrix,
    solubles_system,
    solve_x,
)
from .semi_implicit import step as semi_implicit_step
from .simulator import Simulator
from .state import OMEGA_SLACK, GridState, MixedState, OmegaMonitor
from .tridiag import TridiagonalSystem

logger = logging.getLogger(__name__)

MONOTONE_TOLERANCE = 1e-12
ROW_SUM_TOLERANCE = 1e-13
TIGHT_NEWTON = NewtonConfig(epsilon=1e-13, max_iter=50)


@dataclass
class PropertyReport:
    name: str
    trials: int = 0
    violations: int = 0
    worst: float = 0.0
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0

    def record(self, value: float, violated: bool) -> None:
        self.trials += 1
        self.worst = max(self.worst, value)
        if violated:
            self.violations += 1

    def as_row(self) -> Dict[str, object]:
        return {
            "property": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "worst": self.worst,
            **self.details,
        }


def reports_frame(reports: Sequence[PropertyReport]) -> pd.DataFrame:
    return pd.DataFrame([r.as_row() for r in reports])


def raise_on_violation(reports: Sequence[PropertyReport]) -> None:
    """
    Raises
    ------
    ValidationFailure
        With the violation count per property if any report failed.
    """
    failed = {r.name: r.violations for r in reports if not r.ok}
    if failed:
        raise ValidationFailure(
            "property suites found violations: "
            + ", ".join(f"{k} ({v})" for k, v in failed.items()),
            failed,
        )


# ----------------------------------------------------------------------
# random states
# ----------------------------------------------------------------------


def random_grid_state(
    rng: np.random.Generator, n_cells: int, X_hat: float, s_max: np.ndarray, t: float = 0.0
) -> GridState:
    """X uniform on [0, X̂], p uniform on the simplex, S uniform on [0, 2 s_max]."""
    X = rng.uniform(0.0, X_hat, n_cells)
    P = rng.dirichlet(np.ones(6), n_cells)
    S = rng.uniform(0.0, 1.0, (n_cells, 6)) * (2.0 * np.asarray(s_max, dtype=float))
    return GridState(t=t, X=X, P=P, S=S)


def random_mixed_state(
    rng: np.random.Generator, X_hat: float, s_max: np.ndarray, t: float = 0.0
) -> MixedState:
    return MixedState(
        t=t,
        X=float(rng.uniform(0.0, X_hat)),
        p=rng.dirichlet(np.ones(6)),
        S=rng.uniform(0.0, 1.0, 6) * (2.0 * np.asarray(s_max, dtype=float)),
    )


def stage_types(simulator: Simulator) -> List[int]:
    """First stage index of every distinct (model, feed, extraction, underflow) pattern."""
    seen: Dict[Tuple[str, bool, bool, bool], int] = {}
    for index, stage in enumerate(simulator.scenario.schedule.stages):
        key = (stage.model_kind.value, stage.Q_f > 0, stage.Q_e > 0, stage.Q_u > 0)
        seen.setdefault(key, index)
    return sorted(seen.values())


def _random_context(
    simulator: Simulator, rng: np.random.Generator, index: int, scheme: Scheme
) -> StepContext:
    stage = simulator.scenario.schedule.stages[index]
    t = float(rng.uniform(stage.t_start, stage.t_end))
    tau = simulator.stage_tau(stage, scheme)
    return step_context(simulator.trajectory, simulator.grid, index, t, tau)


def _s_max(simulator: Simulator) -> np.ndarray:
    return simulator.scenario.soluble_maxima()


# ----------------------------------------------------------------------
# invariant region
# ----------------------------------------------------------------------


def omega_stress(
    simulator: Simulator,
    trials: int = 10_000,
    seed: Optional[int] = 0,
    schemes: Sequence[Scheme] = (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT),
) -> List[PropertyReport]:
    """
    One step at the CFL time step from random states, per stage type and
    scheme; a violation is any Ω breach beyond the slack or a failed step.
    """
    rng = np.random.default_rng(seed)
    monitor = OmegaMonitor(simulator.constitutive.X_hat)
    X_hat = simulator.constitutive.X_hat
    s_max = _s_max(simulator)
    reports = []
    for index in stage_types(simulator):
        stage = simulator.scenario.schedule.stages[index]
        for scheme in schemes if stage.is_pde else (None,):
            label = stage.name or f"stage{index}"
            report = PropertyReport(
                name=f"omega[{label}, {scheme.value if scheme else 'mixing'}]",
                details={"step_errors": 0},
            )
            for _ in range(trials):
                try:
                    if stage.is_pde:
                        ctx = _random_context(simulator, rng, index, scheme)
                        state = random_grid_state(rng, simulator.grid.n_cells, X_hat, s_max, ctx.t)
                        if scheme is Scheme.EXPLICIT:
                            new = explicit_step(state, simulator.setup, ctx).state
                        else:
                            new = semi_implicit_step(
                                state, simulator.setup, ctx, simulator.settings.newton
                            ).state
                        violation = max(monitor.measure(new.X, new.P, new.S).values())
                    else:
                        t = float(rng.uniform(stage.t_start, stage.t_end))
                        mixed = random_mixed_state(rng, X_hat, s_max, t)
                        tau = simulator.stage_tau(stage)
                        new = euler_mix_step(mixed, simulator.trajectory, index, simulator.reactions, tau).state
                        violation = max(
                            monitor.measure(np.array([new.X]), new.p[None, :], new.S[None, :]).values()
                        )
                except NumericalError as exc:
                    logger.warning("step failed during stress test: %s", exc)
                    report.details["step_errors"] += 1
                    report.record(float("inf"), True)
                    continue
                report.record(violation, violation > OMEGA_SLACK)
            logger.info("%s: %d/%d violations", report.name, report.violations, report.trials)
            reports.append(report)
    return reports


# ----------------------------------------------------------------------
# monotonicity
# ----------------------------------------------------------------------


def x_update(
    simulator: Simulator,
    state: GridState,
    ctx: StepContext,
    scheme: Scheme,
    newton: NewtonConfig = TIGHT_NEWTON,
) -> np.ndarray:
    """X at t + τ as produced by ``scheme``, without the P and S updates."""
    setup = simulator.setup
    grid = setup.grid
    R, _, _ = setup.reactions.source_terms(state.P, state.X, state.S)
    fluxes = assemble_fluxes(state.X, ctx, grid, setup.constitutive, setup.flux_choice)
    if scheme is Scheme.EXPLICIT:
        return predict_x(state, fluxes, ctx, grid, R)[0]
    X_tilde, _ = predictor_x(state, fluxes, ctx, grid, R)
    return solve_x(X_tilde, state.X, ctx, grid, setup.constitutive, newton)[0]


def monotonicity_check(
    simulator: Simulator,
    trials: int = 1000,
    seed: Optional[int] = 1,
    schemes: Sequence[Scheme] = (Scheme.EXPLICIT, Scheme.SEMI_IMPLICIT),
) -> List[PropertyReport]:
    """
    Raise one X_k by a random amount and require that no entry of the
    updated X decreases.
    """
    rng = np.random.default_rng(seed)
    X_hat = simulator.constitutive.X_hat
    tolerance = MONOTONE_TOLERANCE * max(1.0, X_hat)
    s_max = _s_max(simulator)
    pde_stages = [i for i in stage_types(simulator) if simulator.scenario.schedule.stages[i].is_pde]
    reports = []
    for scheme in schemes:
        report = PropertyReport(name=f"monotone[{scheme.value}]", details={"step_errors": 0})
        for _ in range(trials):
            index = int(rng.choice(pde_stages))
            ctx = _random_context(simulator, rng, index, scheme)
            state = random_grid_state(rng, simulator.grid.n_cells, X_hat, s_max, ctx.t)
            k = int(rng.integers(state.X.size))
            bumped = state.copy()
            bumped.X[k] += rng.uniform(0.0, X_hat - state.X[k])
            try:
                base = x_update(simulator, state, ctx, scheme)
                raised = x_update(simulator, bumped, ctx, scheme)
            except NumericalError as exc:
                logger.warning("step failed during monotonicity test: %s", exc)
                report.details["step_errors"] += 1
                report.record(float("inf"), True)
                continue
            drop = float(max(0.0, -np.min(raised - base)))
            report.record(drop, drop > tolerance)
        reports.append(report)
    return reports


# ----------------------------------------------------------------------
# M-matrices
# ----------------------------------------------------------------------


def _dominance(system: TridiagonalSystem) -> Tuple[float, bool]:
    """(smallest relative column margin, whether the sign pattern is an L-matrix)."""
    scale = max(float(np.max(np.abs(system.diag))), 1.0)
    margin = float(np.min(system.column_dominance_margin())) / scale
    signs = bool(
        np.all(system.diag > 0) and np.all(system.lower[1:] <= 0) and np.all(system.upper[:-1] <= 0)
    )
    return margin, signs


def m_matrix_check(
    simulator: Simulator, trials: int = 1000, seed: Optional[int] = 2
) -> List[PropertyReport]:
    """
    Column dominance of the Newton Jacobian and of the percentage and
    solubles matrices at random states, and the unit row sums of the
    secant form of the X system.
    """
    rng = np.random.default_rng(seed)
    setup = simulator.setup
    grid = setup.grid
    model = setup.constitutive
    X_hat = model.X_hat
    s_max = _s_max(simulator)
    pde_stages = [i for i in stage_types(simulator) if simulator.scenario.schedule.stages[i].is_pde]
    names = ("jacobian", "secant_row_sum", "percentage", "solubles")
    reports = {name: PropertyReport(name=f"m_matrix[{name}]") for name in names}

    def dominance_record(name: str, system: TridiagonalSystem) -> None:
        margin, signs = _dominance(system)
        reports[name].record(max(0.0, -margin), margin <= 0 or not signs)

    for _ in range(trials):
        index = int(rng.choice(pde_stages))
        ctx = _random_context(simulator, rng, index, Scheme.SEMI_IMPLICIT)
        state = random_grid_state(rng, grid.n_cells, X_hat, s_max, ctx.t)
        u = state.X[grid.tank]

        dominance_record("jacobian", newton_jacobian(u, ctx.beta, ctx.mu, model))

        secant = secant_matrix(u, ctx.beta, ctx.mu, model)
        row_error = float(np.max(np.abs(secant.matvec(np.ones(u.size)) - 1.0)))
        scale = max(1.0, float(np.max(np.abs(secant.diag))))
        reports["secant_row_sum"].record(row_error, row_error > ROW_SUM_TOLERANCE * scale)

        try:
            R, _, _ = setup.reactions.source_terms(state.P, state.X, state.S)
            fluxes = assemble_fluxes(state.X, ctx, grid, model, setup.flux_choice)
            X_tilde, _ = predictor_x(state, fluxes, ctx, grid, R)
            X_new, X_u, _ = solve_x(X_tilde, state.X, ctx, grid, model, simulator.settings.newton)
            mixed = mixed_fluxes(fluxes, X_u, ctx, grid, model)
            system = percentage_system(X_new, mixed.Phi, ctx, grid)
            rhs = np.zeros((grid.N + 1, 6))
            eliminate_empty_rows(
                system, rhs, X_new[grid.tank] <= EMPTY_THRESHOLD, state.P[grid.tank]
            )
            dominance_record("percentage", system)
            y = liquid_weights(X_new, np.ones((X_new.size, 1)), setup.rho_X)[:, 0]
            theta = setup.rho_X * mixed.q_tilde - mixed.Phi
            dominance_record("solubles", solubles_system(y, theta, ctx, grid))
        except NumericalError as exc:
            logger.warning("step failed during M-matrix test: %s", exc)
            reports["percentage"].record(float("inf"), True)
            reports["solubles"].record(float("inf"), True)
    return list(reports.values())


def run_property_suites(
    simulator: Simulator,
    monotone_simulator: Optional[Simulator] = None,
    omega_trials: int = 10_000,
    monotone_trials: int = 1000,
    matrix_trials: int = 1000,
    seed: Optional[int] = 0,
    progress: Optional[Callable[[str], None]] = None,
) -> List[PropertyReport]:
    """All three suites; monotonicity runs on ``monotone_simulator`` when given."""
    reports: List[PropertyReport] = []
    for title, suite in (
        ("invariant region", lambda: omega_stress(simulator, omega_trials, seed)),
        (
            "monotonicity",
            lambda: monotonicity_check(monotone_simulator or simulator, monotone_trials, seed),
        ),
        ("M-matrix", lambda: m_matrix_check(simulator, matrix_trials, seed)),
    ):
        if progress is not None:
            progress(title)
        reports.extend(suite())
    return reports
