"""
EXPLICIT MONOTONE SCHEME

One Euler step of the transformed system for the solids X, the
percentages P and the solubles S, including the outlet cells j = -1 and
j = N+1 and their zero rules.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .biokinetics import ReactionModel
from .constitutive import ConstitutiveModel
from .discretization import (
    FluxChoice,
    FluxSet,
    Grid,
    StepContext,
    assemble_fluxes,
    check_sign_conditions,
    face_values,
    kappa,
    upwind,
)
from .errors import StepError
from .scenario import BoundaryTrajectory
from .state import GridState, OmegaMonitor

logger = logging.getLogger(__name__)

EMPTY_THRESHOLD = 1e-14
RHO_GUARD = 1e-6


@dataclass(frozen=True)
class SchemeSetup:
    """Everything a step needs besides the state and the step context."""

    grid: Grid
    constitutive: ConstitutiveModel
    reactions: ReactionModel
    trajectory: BoundaryTrajectory
    flux_choice: FluxChoice = FluxChoice.EO

    @property
    def c_conv(self) -> float:
        return self.constitutive.params.c_conv

    @property
    def rho_X(self) -> float:
        return self.constitutive.params.rho_X


@dataclass
class StepBalance:
    """
    Per-step ξ-mass increments of [X, S_1..S_6].

    ``change`` is the increment of Δξ Σ_j over all cells that the scheme
    must reproduce.
    """

    inflow: np.ndarray
    outflow: np.ndarray
    moving: np.ndarray
    reaction: np.ndarray
    discarded: np.ndarray
    coupling: np.ndarray = field(default_factory=lambda: np.zeros(7))

    @property
    def change(self) -> np.ndarray:
        return (
            self.inflow - self.outflow + self.moving + self.reaction - self.discarded + self.coupling
        )


@dataclass
class StepResult:
    state: GridState
    fluxes: FluxSet
    balance: StepBalance
    newton_iterations: int = 0
    newton_residual: float = 0.0


# ----------------------------------------------------------------------
# helpers shared with the semi-implicit scheme
# ----------------------------------------------------------------------


def apply_zero_rules(values: np.ndarray, ctx: StepContext) -> np.ndarray:
    """
    Zero the outlet cells that carry no flow; returns what was removed.

    ``values`` is modified in place and may be 1-D or 2-D.
    """
    removed = np.zeros(values.shape[1:])
    if ctx.q_e <= 0:
        removed = removed + values[0]
        values[0] = 0.0
    if ctx.q_u <= 0:
        removed = removed + values[-1]
        values[-1] = 0.0
    return removed


def liquid_weights(X: np.ndarray, S: np.ndarray, rho_X: float) -> np.ndarray:
    """S_j/(ρ_X − X_j), guarded against X approaching ρ_X."""
    gap = rho_X - X
    if np.any(gap <= RHO_GUARD * rho_X):
        raise StepError(
            f"solids concentration {float(np.max(X)):.6g} approaches rho_X = {rho_X}",
            X_max=float(np.max(X)),
        )
    return S / gap[:, None]


def feed_vector(ctx: StepContext) -> Tuple[float, np.ndarray, np.ndarray]:
    """(λβq_f X_f, λβq_f p_f X_f, λβq_f S_f) added to cell 0."""
    scale = ctx.lam * ctx.beta * ctx.q_f
    stage = ctx.stage
    return (
        scale * stage.X_f,
        scale * stage.X_f * np.asarray(stage.p_f, dtype=float),
        scale * np.asarray(stage.S_f, dtype=float),
    )


def step_balance(
    ctx: StepContext,
    grid: Grid,
    kap: np.ndarray,
    state: GridState,
    R: np.ndarray,
    R_S: np.ndarray,
    outflow_X: float,
    outflow_S: np.ndarray,
    discarded_X: float,
    discarded_S: np.ndarray,
    coupling: Optional[np.ndarray] = None,
) -> StepBalance:
    dxi = grid.delta_xi
    gamma = grid.cell_weights
    q_in = ctx.tau * ctx.beta * ctx.q_f
    stacked = np.column_stack((state.X, state.S))
    return StepBalance(
        inflow=q_in * np.concatenate(([ctx.stage.X_f], np.asarray(ctx.stage.S_f, dtype=float))),
        outflow=ctx.tau * np.concatenate(([outflow_X], outflow_S)),
        moving=dxi * ((kap - 1.0) @ stacked),
        reaction=ctx.tau * dxi * np.concatenate(([gamma @ R], gamma @ R_S)),
        discarded=dxi * np.concatenate(([discarded_X], discarded_S)),
        coupling=np.zeros(7) if coupling is None else coupling,
    )


# ----------------------------------------------------------------------
# updates
# ----------------------------------------------------------------------


def predict_x(
    state: GridState,
    fluxes: FluxSet,
    ctx: StepContext,
    grid: Grid,
    R: np.ndarray,
    include_diffusion: bool = True,
) -> Tuple[np.ndarray, float]:
    """X update with the zero rules applied; returns (X_new, removed cell value)."""
    lam = ctx.lam
    X_new = kappa(ctx, grid) * state.X - lam * np.diff(fluxes.F)
    if include_diffusion:
        X_new += lam * np.diff(fluxes.J)
    X_new += ctx.tau * grid.cell_weights * R
    X_new[1] += feed_vector(ctx)[0]
    removed = apply_zero_rules(X_new, ctx)
    return X_new, float(removed)


def step_x(
    state: GridState, fluxes: FluxSet, ctx: StepContext, grid: Grid, R: np.ndarray
) -> np.ndarray:
    """X at t + τ."""
    return predict_x(state, fluxes, ctx, grid, R)[0]


def step_p(
    state: GridState,
    fluxes: FluxSet,
    X_new: np.ndarray,
    ctx: StepContext,
    grid: Grid,
    R_C: np.ndarray,
    c_conv: float,
) -> np.ndarray:
    """
    Percentages at t + τ from the update of p X, divided by X_new.

    Cells that end up empty keep their previous percentages.
    """
    left, right = face_values(state.P)
    flux_p = upwind(fluxes.Phi, left, right)
    PX = kappa(ctx, grid)[:, None] * state.P * state.X[:, None]
    PX -= ctx.lam * np.diff(flux_p, axis=0)
    PX += ctx.tau * c_conv * grid.cell_weights[:, None] * R_C
    PX[1] += feed_vector(ctx)[1]
    apply_zero_rules(PX, ctx)
    return recover_percentages(PX, X_new, state.P)


def recover_percentages(PX: np.ndarray, X_new: np.ndarray, P_old: np.ndarray) -> np.ndarray:
    occupied = X_new > EMPTY_THRESHOLD
    P_new = P_old.copy()
    P_new[occupied] = PX[occupied] / X_new[occupied, None]
    return P_new


def solubles_flux(
    state: GridState, fluxes: FluxSet, rho_X: float
) -> np.ndarray:
    """Φ_S = Upw(ρ_X q̃ − Φ; S_j/(ρ_X − X_j), S_{j+1}/(ρ_X − X_{j+1}))."""
    y = liquid_weights(state.X, state.S, rho_X)
    left, right = face_values(y)
    return upwind(rho_X * fluxes.q_tilde - fluxes.Phi, left, right)


def predict_s(
    state: GridState,
    fluxes: FluxSet,
    ctx: StepContext,
    grid: Grid,
    R_S: np.ndarray,
    rho_X: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """S update with the zero rules applied; returns (S_new, Φ_S, removed cell values)."""
    flux_s = solubles_flux(state, fluxes, rho_X)
    S_new = kappa(ctx, grid)[:, None] * state.S - ctx.lam * np.diff(flux_s, axis=0)
    S_new += ctx.tau * grid.cell_weights[:, None] * R_S
    S_new[1] += feed_vector(ctx)[2]
    removed = apply_zero_rules(S_new, ctx)
    return S_new, flux_s, removed


def step_s(
    state: GridState,
    fluxes: FluxSet,
    ctx: StepContext,
    grid: Grid,
    R_S: np.ndarray,
    rho_X: float,
) -> np.ndarray:
    """Solubles at t + τ."""
    return predict_s(state, fluxes, ctx, grid, R_S, rho_X)[0]


def step(
    state: GridState,
    setup: SchemeSetup,
    ctx: StepContext,
    monitor: Optional[OmegaMonitor] = None,
) -> StepResult:
    """Advance (X, P, S) by one explicit step of size ctx.tau."""
    grid = setup.grid
    check_sign_conditions(ctx)
    R, R_C, R_S = setup.reactions.source_terms(state.P, state.X, state.S)
    fluxes = assemble_fluxes(state.X, ctx, grid, setup.constitutive, setup.flux_choice)

    X_new, removed_X = predict_x(state, fluxes, ctx, grid, R)
    P_new = step_p(state, fluxes, X_new, ctx, grid, R_C, setup.c_conv)
    S_new, flux_s, removed_S = predict_s(state, fluxes, ctx, grid, R_S, setup.rho_X)

    balance = step_balance(
        ctx,
        grid,
        kappa(ctx, grid),
        state,
        R,
        R_S,
        outflow_X=float(fluxes.F[-1] - fluxes.F[0]),
        outflow_S=flux_s[-1] - flux_s[0],
        discarded_X=removed_X,
        discarded_S=removed_S,
    )
    new_state = GridState(state.t + ctx.tau, X_new, P_new, S_new)
    if monitor is not None:
        monitor.enforce(new_state)
    logger.debug("explicit step to t = %.3f s, %d clamped inputs", new_state.t, fluxes.clamped)
    return StepResult(state=new_state, fluxes=fluxes, balance=balance)
