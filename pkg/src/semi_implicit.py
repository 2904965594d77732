"""
SEMI-IMPLICIT SCHEME

The convective and reactive parts are explicit; the compression terms are
evaluated at the new time level. X is found by a Newton iteration on a
nonlinear tridiagonal system, P and S from linear tridiagonal systems with
six right-hand sides each. The CFL condition then bounds τ/Δξ only.

Tank rows i = 0..N correspond to cells j = i, stored at index k = i + 1;
row i has lower interface f = i + 1 and upper interface f = i + 2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .constitutive import ConstitutiveModel
from .discretization import (
    FluxSet,
    Grid,
    StepContext,
    assemble_fluxes,
    check_sign_conditions,
    diffusive_flux,
    kappa,
)
from .errors import ConfigurationError, NewtonConvergenceError, SingularSystemError
from .explicit_scheme import (
    EMPTY_THRESHOLD,
    SchemeSetup,
    StepResult,
    feed_vector,
    liquid_weights,
    predict_s,
    predict_x,
    step_balance,
    step_p,
)
from .state import GridState, OmegaMonitor
from .tridiag import TridiagonalSystem, solve_tridiagonal

logger = logging.getLogger(__name__)

RESIDUAL_FLOOR = 1e-15
DOMINANCE_TOLERANCE = 1e-10


@dataclass(frozen=True)
class NewtonConfig:
    """Relative ℓ¹ step tolerance and iteration cap of the X solve."""

    epsilon: float = 1e-8
    max_iter: int = 50

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError(f"Newton tolerance must be positive, got {self.epsilon}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass
class NewtonResult:
    X: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float


def apply_t(values: np.ndarray) -> np.ndarray:
    """T v with T = tridiag(-1, [1, 2, ..., 2, 1], -1)."""
    out = np.empty_like(values)
    out[0] = values[0] - values[1]
    out[-1] = values[-1] - values[-2]
    out[1:-1] = 2.0 * values[1:-1] - values[:-2] - values[2:]
    return out


def _t_diagonal(n: int) -> np.ndarray:
    diag = np.full(n, 2.0)
    diag[0] = diag[-1] = 1.0
    return diag


def check_column_dominance(system: TridiagonalSystem, name: str) -> float:
    """
    Smallest column-dominance margin relative to the largest diagonal entry.

    Raises
    ------
    SingularSystemError
        If some column is clearly not dominant.
    """
    margin = system.column_dominance_margin()
    scale = max(float(np.max(np.abs(system.diag))), 1.0)
    worst = float(np.min(margin)) / scale
    if worst < -DOMINANCE_TOLERANCE:
        raise SingularSystemError(
            f"{name} matrix is not diagonally dominant by columns (margin {worst:.3e})"
        )
    return worst


# ----------------------------------------------------------------------
# X
# ----------------------------------------------------------------------


def predictor_x(
    state: GridState, fluxes: FluxSet, ctx: StepContext, grid: Grid, R: np.ndarray
) -> Tuple[np.ndarray, float]:
    """X̃: the explicit update without the diffusive flux; outlet cells are final."""
    return predict_x(state, fluxes, ctx, grid, R, include_diffusion=False)


def newton_jacobian(
    u: np.ndarray, beta: float, mu: float, model: ConstitutiveModel
) -> TridiagonalSystem:
    """I + β²μ T diag(a(u)); strictly diagonally dominant by columns."""
    coef = beta * beta * mu
    a = model.diffusion_a(np.clip(u, 0.0, model.X_hat))
    lower = np.zeros_like(a)
    upper = np.zeros_like(a)
    lower[1:] = -coef * a[:-1]
    upper[:-1] = -coef * a[1:]
    return TridiagonalSystem(lower, 1.0 + coef * _t_diagonal(a.size) * a, upper)


def newton_solve(
    X_tilde: np.ndarray,
    X_start: np.ndarray,
    beta: float,
    mu: float,
    model: ConstitutiveModel,
    config: NewtonConfig = NewtonConfig(),
) -> NewtonResult:
    """
    Solve u + β²μ T 𝒟(u) = X̃ on the tank rows by Newton's method.

    The iteration starts from ``X_start`` and stops when the relative ℓ¹
    change drops below ε. The returned X is the flux form
    X̃ − β²μ T 𝒟(u), which equals u up to the residual.

    Raises
    ------
    NewtonConvergenceError
        If ε is not reached within max_iter iterations.
    """
    X_tilde = np.asarray(X_tilde, dtype=float)
    coef = beta * beta * mu
    X_hat = model.X_hat
    scale = max(float(np.sum(np.abs(X_tilde))), np.finfo(float).tiny)

    def residual_of(v: np.ndarray) -> np.ndarray:
        return v + coef * apply_t(model.integrated_diffusion(np.clip(v, 0.0, X_hat))) - X_tilde

    u = np.array(X_start, dtype=float)
    if not np.any(u):
        logger.debug("Newton start vector is zero; accepting the predictor")
        D = model.integrated_diffusion(np.clip(X_tilde, 0.0, X_hat))
        X_new = X_tilde - coef * apply_t(D)
        res = float(np.sum(np.abs(residual_of(X_tilde)))) / scale
        return NewtonResult(X=X_new, u=X_tilde.copy(), iterations=1, residual=res)

    iterations = 0
    phi = residual_of(u)
    while True:
        delta = solve_tridiagonal(newton_jacobian(u, beta, mu, model), -phi)
        u_norm = float(np.sum(np.abs(u)))
        u = u + delta
        iterations += 1
        phi = residual_of(u)
        step = float(np.sum(np.abs(delta)))
        if u_norm == 0.0 or step < config.epsilon * u_norm:
            break
        if float(np.sum(np.abs(phi))) <= RESIDUAL_FLOOR * scale:
            break
        if iterations >= config.max_iter:
            res = float(np.sum(np.abs(phi))) / scale
            logger.error("Newton iteration stalled after %d iterations, residual %.3e", iterations, res)
            raise NewtonConvergenceError(
                f"Newton iteration did not reach tolerance {config.epsilon:g} "
                f"in {iterations} iterations",
                iterations=iterations,
                residual_norm=res,
            )

    D = model.integrated_diffusion(np.clip(u, 0.0, X_hat))
    X_new = X_tilde - coef * apply_t(D)
    return NewtonResult(
        X=X_new, u=u, iterations=iterations, residual=float(np.sum(np.abs(phi))) / scale
    )


def secant_matrix(
    X: np.ndarray, beta: float, mu: float, model: ConstitutiveModel
) -> TridiagonalSystem:
    """
    The X system written as M(X) X = X̃ with secant slopes of 𝒟.

    Its rows sum to one and it is an M-matrix for every X in [0, X̂].
    """
    X = np.asarray(X, dtype=float)
    coef = beta * beta * mu
    D = model.integrated_diffusion(np.clip(X, 0.0, model.X_hat))
    dX = np.diff(X)
    dD = np.diff(D)
    slopes = np.divide(dD, dX, out=np.zeros_like(dD), where=dX != 0)
    n = X.size
    lower = np.zeros(n)
    upper = np.zeros(n)
    diag = np.ones(n)
    upper[:-1] = -coef * slopes
    lower[1:] = -coef * slopes
    diag[:-1] += coef * slopes
    diag[1:] += coef * slopes
    return TridiagonalSystem(lower, diag, upper)


# ----------------------------------------------------------------------
# P and S
# ----------------------------------------------------------------------


def solve_x(
    X_tilde: np.ndarray,
    X_start: np.ndarray,
    ctx: StepContext,
    grid: Grid,
    model: ConstitutiveModel,
    config: NewtonConfig = NewtonConfig(),
) -> Tuple[np.ndarray, np.ndarray, NewtonResult]:
    """(X^{n+1}, u, Newton result) on all cells; outlet cells keep X̃."""
    tank = grid.tank
    newton = newton_solve(X_tilde[tank], X_start[tank], ctx.beta, ctx.mu, model, config)
    X_new = X_tilde.copy()
    X_new[tank] = newton.X
    X_u = X_tilde.copy()
    X_u[tank] = newton.u
    return X_new, X_u, newton


def mixed_fluxes(
    fluxes: FluxSet, X_u: np.ndarray, ctx: StepContext, grid: Grid, model: ConstitutiveModel
) -> FluxSet:
    """
    Φ^{n,n+1} = ℱ^n − 𝒥(u).

    ``X_u`` carries the Newton iterate u on the tank rows. The X update
    uses the same 𝒥(u), so M·1 = Θ·1 holds for any Newton tolerance.
    """
    J_new = diffusive_flux(X_u, ctx, grid, model)
    return replace(fluxes, J=J_new, Phi=fluxes.F - J_new)


def eliminate_empty_rows(
    system: TridiagonalSystem, rhs: np.ndarray, empty: np.ndarray, frozen: np.ndarray
) -> None:
    """Replace rows of empty cells by identity rows holding ``frozen``."""
    idx = np.flatnonzero(empty)
    if idx.size == 0:
        return
    n = system.size
    for j in idx:
        if j > 0 and not empty[j - 1]:
            rhs[j - 1] -= system.upper[j - 1] * frozen[j]
        if j < n - 1 and not empty[j + 1]:
            rhs[j + 1] -= system.lower[j + 1] * frozen[j]
        if j > 0:
            system.upper[j - 1] = 0.0
        if j < n - 1:
            system.lower[j + 1] = 0.0
    system.lower[idx] = 0.0
    system.upper[idx] = 0.0
    system.diag[idx] = 1.0
    rhs[idx] = frozen[idx]


def percentage_system(
    X_new: np.ndarray, Phi: np.ndarray, ctx: StepContext, grid: Grid
) -> TridiagonalSystem:
    """M(Φ, X^{n+1}) on the tank rows; M·1 = X^{n+1} + λ[ΔΦ]."""
    N = grid.N
    lam = ctx.lam
    pos = np.maximum(Phi, 0.0)
    neg = np.minimum(Phi, 0.0)
    return TridiagonalSystem(
        lower=np.concatenate(([0.0], -lam * pos[2 : N + 2])),
        diag=X_new[grid.tank] + lam * (pos[2 : N + 3] - neg[1 : N + 2]),
        upper=np.concatenate((lam * neg[2 : N + 2], [0.0])),
    )


def solubles_system(
    y: np.ndarray, theta: np.ndarray, ctx: StepContext, grid: Grid
) -> TridiagonalSystem:
    """M_S on the tank rows; ``y`` holds 1/(ρ_X − X^{n+1}) for all cells."""
    N = grid.N
    lam = ctx.lam
    pos = np.maximum(theta, 0.0)
    neg = np.minimum(theta, 0.0)
    y_tank = y[grid.tank]
    return TridiagonalSystem(
        lower=np.concatenate(([0.0], -lam * pos[2 : N + 2] * y_tank[:-1])),
        diag=1.0 + lam * (pos[2 : N + 3] - neg[1 : N + 2]) * y_tank,
        upper=np.concatenate((lam * neg[2 : N + 2] * y_tank[1:], [0.0])),
    )


def step_p_implicit(
    state: GridState,
    fluxes_mixed: FluxSet,
    X_new: np.ndarray,
    ctx: StepContext,
    grid: Grid,
    R_C: np.ndarray,
    c_conv: float,
) -> Tuple[np.ndarray, float]:
    """
    Percentages at t + τ from M(Φ^{n,n+1}, X^{n+1}) P^{n+1} = Θ^n.

    Outlet cells follow the explicit update. Returns (P_new, dominance margin).
    """
    N = grid.N
    lam = ctx.lam
    pos = np.maximum(fluxes_mixed.Phi, 0.0)
    neg = np.minimum(fluxes_mixed.Phi, 0.0)
    tank = grid.tank

    P_new = step_p(state, fluxes_mixed, X_new, ctx, grid, R_C, c_conv)

    X_tank = X_new[tank]
    system = percentage_system(X_new, fluxes_mixed.Phi, ctx, grid)
    kap = kappa(ctx, grid)
    rhs = (kap[tank] * state.X[tank])[:, None] * state.P[tank]
    rhs += ctx.tau * c_conv * grid.cell_weights[tank, None] * R_C[tank]
    rhs[0] += feed_vector(ctx)[1]
    rhs[0] += lam * pos[1] * P_new[0]
    rhs[-1] -= lam * neg[N + 2] * P_new[-1]

    empty = X_tank <= EMPTY_THRESHOLD
    eliminate_empty_rows(system, rhs, empty, state.P[tank])
    margin = check_column_dominance(system, "percentage")
    if np.all(empty):
        P_new[tank] = state.P[tank]
    else:
        P_new[tank] = solve_tridiagonal(system, rhs)
    return P_new, margin


def step_s_implicit(
    state: GridState,
    fluxes_mixed: FluxSet,
    X_new: np.ndarray,
    ctx: StepContext,
    grid: Grid,
    R_S: np.ndarray,
    rho_X: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Solubles at t + τ from M_S S^{n+1} = κ S^n + W_S.

    Returns (S_new, explicit outlet-cell flux, removed outlet values,
    coupling correction of the mass ledger) where the last entry is the
    difference between the implicit and explicit fluxes across the two
    tank walls times τ.
    """
    N = grid.N
    lam = ctx.lam
    theta = rho_X * fluxes_mixed.q_tilde - fluxes_mixed.Phi
    pos = np.maximum(theta, 0.0)
    neg = np.minimum(theta, 0.0)
    tank = grid.tank

    S_new, flux_s, removed = predict_s(state, fluxes_mixed, ctx, grid, R_S, rho_X)

    y = liquid_weights(X_new, np.ones((X_new.size, 1)), rho_X)[:, 0]
    system = solubles_system(y, theta, ctx, grid)
    kap = kappa(ctx, grid)
    rhs = kap[tank, None] * state.S[tank]
    rhs += ctx.tau * grid.cell_weights[tank, None] * R_S[tank]
    rhs[0] += feed_vector(ctx)[2]
    rhs[0] += lam * pos[1] * y[0] * S_new[0]
    rhs[-1] -= lam * neg[N + 2] * y[-1] * S_new[-1]

    margin = check_column_dominance(system, "solubles")
    S_new[tank] = solve_tridiagonal(system, rhs)

    implicit_top = pos[1] * y[0] * S_new[0] + neg[1] * y[1] * S_new[1]
    implicit_bottom = pos[N + 2] * y[N + 1] * S_new[N + 1] + neg[N + 2] * y[-1] * S_new[-1]
    coupling = ctx.tau * ((implicit_top - flux_s[1]) - (implicit_bottom - flux_s[N + 2]))
    return S_new, flux_s, removed, coupling


def step(
    state: GridState,
    setup: SchemeSetup,
    ctx: StepContext,
    config: NewtonConfig = NewtonConfig(),
    monitor: Optional[OmegaMonitor] = None,
) -> StepResult:
    """Advance (X, P, S) by one semi-implicit step of size ctx.tau."""
    grid = setup.grid
    model = setup.constitutive
    check_sign_conditions(ctx)
    R, R_C, R_S = setup.reactions.source_terms(state.P, state.X, state.S)
    fluxes = assemble_fluxes(state.X, ctx, grid, model, setup.flux_choice)

    X_tilde, removed_X = predictor_x(state, fluxes, ctx, grid, R)
    X_new, X_u, newton = solve_x(X_tilde, state.X, ctx, grid, model, config)
    mixed = mixed_fluxes(fluxes, X_u, ctx, grid, model)
    P_new, _ = step_p_implicit(state, mixed, X_new, ctx, grid, R_C, setup.c_conv)
    S_new, flux_s, removed_S, coupling_S = step_s_implicit(
        state, mixed, X_new, ctx, grid, R_S, setup.rho_X
    )

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
        coupling=np.concatenate(([0.0], coupling_S)),
    )
    new_state = GridState(state.t + ctx.tau, X_new, P_new, S_new)
    if monitor is not None:
        monitor.enforce(new_state)
    logger.debug(
        "semi-implicit step to t = %.3f s: %d Newton iterations, residual %.2e",
        new_state.t,
        newton.iterations,
        newton.residual,
    )
    return StepResult(
        state=new_state,
        fluxes=mixed,
        balance=balance,
        newton_iterations=newton.iterations,
        newton_residual=newton.residual,
    )
