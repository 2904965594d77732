"""
Completely mixed stages: averaging a profile into tank means, Euler steps
of the mixing ODEs, and reallocation of the means to the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .biokinetics import ReactionModel
from .discretization import Grid
from .errors import StepError
from .explicit_scheme import EMPTY_THRESHOLD, StepBalance
from .scenario import BoundaryTrajectory
from .state import GridState, MixedState, OmegaMonitor, weighted_tank_mass

logger = logging.getLogger(__name__)


@dataclass
class MixStepResult:
    state: MixedState
    balance: StepBalance


def average_profile(state: GridState, grid: Grid, fallback_p: np.ndarray) -> MixedState:
    """
    Tank means Δξ(X_0/2 + X_1 + ... + X_N), likewise for S.

    Percentages are averaged with the solids mass as weight; an empty tank
    takes ``fallback_p``.
    """
    X_bar = float(weighted_tank_mass(state.X, grid.delta_xi))
    S_bar = weighted_tank_mass(state.S, grid.delta_xi)
    if X_bar > EMPTY_THRESHOLD:
        PX_bar = weighted_tank_mass(state.P * state.X[:, None], grid.delta_xi)
        p_bar = PX_bar / PX_bar.sum()
    else:
        p_bar = np.asarray(fallback_p, dtype=float).copy()
    return MixedState(t=state.t, X=X_bar, p=p_bar, S=np.asarray(S_bar, dtype=float))


def euler_mix_step(
    mixed: MixedState,
    trajectory: BoundaryTrajectory,
    stage_index: int,
    reactions: ReactionModel,
    tau: float,
    monitor: Optional[OmegaMonitor] = None,
) -> MixStepResult:
    """
    One Euler step of the mixing ODEs for X, pX and S.

    Withdrawn mixture leaves at the tank means, so each mean changes by
    βq_f(feed − mean) plus its reaction term.
    """
    stage = trajectory.schedule.stages[stage_index]
    if stage.is_pde:
        raise StepError(f"stage {stage.name or stage_index} is not a mixing stage")
    q_f, q_u, q_e = trajectory.rates(stage)
    beta = float(trajectory.beta(mixed.t, stage_index))
    z_prime = trajectory.z_bar_prime(stage)

    R, R_C, R_S = reactions.source_terms(mixed.p[None, :], np.array([mixed.X]), mixed.S[None, :])
    c = reactions.c_conv
    p_f = np.asarray(stage.p_f, dtype=float)
    S_f = np.asarray(stage.S_f, dtype=float)

    dilution = beta * q_f
    X_new = mixed.X + tau * (dilution * (stage.X_f - mixed.X) + R[0])
    PX_new = mixed.p * mixed.X + tau * (
        dilution * (p_f * stage.X_f - mixed.p * mixed.X) + c * R_C[0]
    )
    S_new = mixed.S + tau * (dilution * (S_f - mixed.S) + R_S[0])
    p_new = PX_new / X_new if X_new > EMPTY_THRESHOLD else mixed.p.copy()

    values = np.concatenate(([mixed.X], mixed.S))
    balance = StepBalance(
        inflow=tau * dilution * np.concatenate(([stage.X_f], S_f)),
        outflow=tau * beta * (q_u + q_e) * values,
        moving=tau * beta * z_prime * values,
        reaction=tau * np.concatenate((R, R_S[0])),
        discarded=np.zeros(7),
    )
    result = MixedState(t=mixed.t + tau, X=X_new, p=p_new, S=S_new)
    if monitor is not None:
        monitor.enforce_mixed(result)
    return MixStepResult(state=result, balance=balance)


def reallocate(mixed: MixedState, grid: Grid) -> GridState:
    """Uniform tank profile from the means; the outlet cells start empty."""
    n = grid.n_cells
    X = np.zeros(n)
    S = np.zeros((n, 6))
    X[grid.tank] = mixed.X
    S[grid.tank] = mixed.S
    P = np.tile(mixed.p, (n, 1))
    return GridState(t=mixed.t, X=X, P=P, S=S)
