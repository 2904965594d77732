"""
GRID, NUMERICAL FLUXES AND TIME-STEP CONDITIONS

Cells j = -1..N+1 are stored at array index k = j + 1 (length N + 3).
Interfaces j + 1/2 for j = -2..N+1 are stored at index f = j + 2
(length N + 4), so the flux difference of cell k is ``F[k + 1] - F[k]``
and ``np.diff`` of any face array gives the cell differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .biokinetics import ReactionBounds
from .constitutive import ConstitutiveModel
from .errors import ConfigurationError, StepError
from .scenario import BoundaryTrajectory, Stage

logger = logging.getLogger(__name__)

CFL_SAFETY = 0.95
CLAMP_TOLERANCE = 1e-9


class Scheme(str, Enum):
    EXPLICIT = "explicit"
    SEMI_IMPLICIT = "semi-implicit"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        key = str(text).strip().lower().replace("_", "-")
        if key in ("semi-implicit", "semiimplicit", "si"):
            return cls.SEMI_IMPLICIT
        if key == "explicit":
            return cls.EXPLICIT
        raise ConfigurationError(f"unknown scheme '{text}'")


class FluxChoice(str, Enum):
    EO = "eo"
    GODUNOV = "godunov"

    @classmethod
    def parse(cls, text: str) -> "FluxChoice":
        key = str(text).strip().lower()
        for choice in cls:
            if choice.value == key:
                return choice
        raise ConfigurationError(f"unknown numerical flux '{text}'")


@dataclass(frozen=True)
class Grid:
    """
    Uniform grid on the transformed domain with Δξ = 1/(N + 1/2).

    Cell 0 is centred on the surface ξ = 0 (the feed inlet) and the last
    tank interface ξ_{N+1/2} is the bottom ξ = 1.
    """

    N: int
    delta_xi: float = field(init=False)
    xi_cells: np.ndarray = field(init=False, repr=False)
    xi_faces: np.ndarray = field(init=False, repr=False)
    cell_weights: np.ndarray = field(init=False, repr=False)
    face_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.N < 4:
            raise ConfigurationError(f"need at least 4 interior cells, got N = {self.N}")
        N = self.N
        dxi = 1.0 / (N + 0.5)
        j_cells = np.arange(-1, N + 2)
        j_faces = np.arange(-2, N + 2)
        xi_faces = (j_faces + 0.5) * dxi
        xi_faces[N + 2] = 1.0
        gamma = np.ones(N + 3)
        gamma[0] = 0.0
        gamma[1] = 0.5
        gamma[-1] = 0.0
        face_gamma = np.zeros(N + 4)
        face_gamma[2 : N + 2] = 1.0
        object.__setattr__(self, "delta_xi", dxi)
        object.__setattr__(self, "xi_cells", j_cells * dxi)
        object.__setattr__(self, "xi_faces", xi_faces)
        object.__setattr__(self, "cell_weights", gamma)
        object.__setattr__(self, "face_weights", face_gamma)

    @property
    def n_cells(self) -> int:
        return self.N + 3

    @property
    def tank(self) -> slice:
        """Cells j = 0..N."""
        return slice(1, self.N + 2)

    @property
    def interior(self) -> slice:
        """Cells j = 1..N."""
        return slice(2, self.N + 2)


# ----------------------------------------------------------------------
# numerical fluxes
# ----------------------------------------------------------------------


def upwind(a, b, c):
    """Upw(a; b, c) = max(a, 0) b + min(a, 0) c."""
    a = np.asarray(a, dtype=float)
    if np.ndim(b) > np.ndim(a):
        a = a[..., None]
    return np.maximum(a, 0.0) * b + np.minimum(a, 0.0) * c


def engquist_osher(u, v, model: ConstitutiveModel, gamma_face=1.0):
    """
    Engquist-Osher flux of the unimodal batch flux f with maximum at X*.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    X_star = model.X_star
    fu = model.batch_flux(u)
    fv = model.batch_flux(v)
    fs = float(model.batch_flux(X_star))
    u_low = u <= X_star
    v_low = v <= X_star
    flux = np.where(
        u_low & v_low,
        fu,
        np.where(~u_low & v_low, fs, np.where(u_low & ~v_low, fu + fv - fs, fv)),
    )
    return gamma_face * flux


def godunov(u, v, model: ConstitutiveModel, gamma_face=1.0):
    """
    Godunov flux: min of f over [u, v] if u <= v, max over [v, u] otherwise.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    X_star = model.X_star
    fu = model.batch_flux(u)
    fv = model.batch_flux(v)
    fs = float(model.batch_flux(X_star))
    rising = np.minimum(fu, fv)
    spans_peak = (v <= X_star) & (X_star <= u)
    falling = np.where(spans_peak, fs, np.maximum(fu, fv))
    return gamma_face * np.where(u <= v, rising, falling)


FLUX_FUNCTIONS = {FluxChoice.EO: engquist_osher, FluxChoice.GODUNOV: godunov}


# ----------------------------------------------------------------------
# per-step coefficients
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class StepContext:
    """Stage flows and transformation coefficients frozen at t^n."""

    t: float
    tau: float
    stage_index: int
    stage: Stage
    beta: float
    z_bar_prime: float
    q_f: float
    q_u: float
    q_e: float
    delta_xi: float
    q_tilde: np.ndarray = field(repr=False)

    @property
    def lam(self) -> float:
        return self.tau / self.delta_xi

    @property
    def mu(self) -> float:
        return self.tau / self.delta_xi**2


def step_context(
    trajectory: BoundaryTrajectory, grid: Grid, stage_index: int, t: float, tau: float
) -> StepContext:
    stage = trajectory.schedule.stages[stage_index]
    q_f, q_u, q_e = trajectory.rates(stage)
    beta = float(trajectory.beta(t, stage_index))
    z_prime = trajectory.z_bar_prime(stage)
    xi = grid.xi_faces
    alpha = -z_prime * (1.0 - xi) * beta
    q_tilde = alpha + beta * q_u
    if q_e > 0:
        q_tilde[:2] = -beta * (xi[:2] * (q_u + q_e) + q_e)
    else:
        q_tilde[:2] = 0.0
    q_tilde[grid.N + 2] = beta * q_u
    return StepContext(
        t=t,
        tau=tau,
        stage_index=stage_index,
        stage=stage,
        beta=beta,
        z_bar_prime=z_prime,
        q_f=q_f,
        q_u=q_u,
        q_e=q_e,
        delta_xi=grid.delta_xi,
        q_tilde=q_tilde,
    )


def kappa(ctx: StepContext, grid: Grid) -> np.ndarray:
    """κ_j for all cells."""
    k = np.full(grid.n_cells, 1.0 + ctx.tau * ctx.beta * ctx.z_bar_prime)
    if ctx.q_e > 0:
        k[0] = 1.0 - ctx.tau * ctx.beta * (ctx.q_u + ctx.q_e)
        k[1] = 1.0
    else:
        k[0] = 1.0
        k[1] = 1.0 - 0.5 * ctx.tau * ctx.beta * (ctx.q_u - ctx.q_f)
    return k


@dataclass
class FluxSet:
    """Interface fluxes, one entry per face j + 1/2, j = -2..N+1."""

    q_tilde: np.ndarray
    E: np.ndarray
    J: np.ndarray
    B: np.ndarray
    F: np.ndarray
    Phi: np.ndarray
    clamped: int = 0


def _pad(values: np.ndarray) -> np.ndarray:
    return np.concatenate((values[:1], values, values[-1:]), axis=0)


def face_values(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right cell values of every face, with edge copies as ghosts."""
    padded = _pad(values)
    return padded[:-1], padded[1:]


def clamp_concentrations(X: np.ndarray, X_hat: float) -> Tuple[np.ndarray, int]:
    clamped = np.clip(X, 0.0, X_hat)
    count = int(np.count_nonzero(np.abs(clamped - X) > CLAMP_TOLERANCE))
    if count:
        logger.warning("clamped %d concentrations into [0, X_hat] for flux evaluation", count)
    return clamped, count


def diffusive_flux(
    X: np.ndarray, ctx: StepContext, grid: Grid, model: ConstitutiveModel
) -> np.ndarray:
    """𝒥_{j+1/2} = γ_{j+1/2} β²/Δξ (𝒟(X_{j+1}) − 𝒟(X_j))."""
    D = model.integrated_diffusion(np.clip(X, 0.0, model.X_hat))
    D_left, D_right = face_values(D)
    return grid.face_weights * (ctx.beta**2 / grid.delta_xi) * (D_right - D_left)


def check_sign_conditions(ctx: StepContext) -> None:
    """Outlet interfaces must carry mixture out of the tank."""
    q = ctx.q_tilde
    if ctx.q_e > 0 and (q[0] > 0 or q[1] > 0):
        raise StepError(
            "extraction interfaces point into the tank "
            f"(q_tilde = {q[0]:.3e}, {q[1]:.3e}); increase the number of cells",
            q_tilde_top=(float(q[0]), float(q[1])),
        )
    if ctx.q_u > 0 and (q[-2] < 0 or q[-1] < 0):
        raise StepError(
            "underflow interfaces point into the tank "
            f"(q_tilde = {q[-2]:.3e}, {q[-1]:.3e}); increase the number of cells",
            q_tilde_bottom=(float(q[-2]), float(q[-1])),
        )


def assemble_fluxes(
    X: np.ndarray,
    ctx: StepContext,
    grid: Grid,
    model: ConstitutiveModel,
    flux_choice: FluxChoice = FluxChoice.EO,
    X_diffusion: Optional[np.ndarray] = None,
) -> FluxSet:
    """
    All interface fluxes of the X equation at t^n.

    ``X_diffusion`` selects the state 𝒟 is evaluated at (X^{n+1} for the
    mixed flux of the semi-implicit scheme); it defaults to ``X``.
    """
    Xc, clamped = clamp_concentrations(X, model.X_hat)
    left, right = face_values(Xc)
    q = ctx.q_tilde
    N = grid.N

    E = FLUX_FUNCTIONS[flux_choice](left, right, model, grid.face_weights)
    bulk = upwind(q, left, right)

    F = np.empty(N + 4)
    F[:2] = q[:2] * right[:2] if ctx.q_e > 0 else 0.0
    F[2 : N + 2] = bulk[2 : N + 2] + ctx.beta * E[2 : N + 2]
    F[N + 2 :] = q[N + 2 :] * left[N + 2 :]

    J = diffusive_flux(Xc if X_diffusion is None else X_diffusion, ctx, grid, model)
    return FluxSet(q_tilde=q, E=E, J=J, B=bulk, F=F, Phi=F - J, clamped=clamped)


# ----------------------------------------------------------------------
# CFL conditions
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CflConstants:
    zeta: float
    M_q1: float
    M_q2: float
    f_prime_sup: float
    a_sup: float
    M_R: float
    M_C: float
    M_S: float
    rho_X: float
    X_hat: float

    @property
    def C1(self) -> float:
        return self.zeta * (self.M_q2 + self.f_prime_sup)

    @property
    def C2(self) -> float:
        return self.zeta**2 * self.a_sup

    @property
    def reaction_rate(self) -> float:
        return max(self.M_R, self.M_C, self.M_S)

    @classmethod
    def for_stage(
        cls,
        stage: Stage,
        trajectory: BoundaryTrajectory,
        model: ConstitutiveModel,
        bounds: ReactionBounds,
    ) -> "CflConstants":
        q_f, q_u, q_e = trajectory.rates(stage)
        return cls(
            zeta=trajectory.zeta_effective,
            M_q1=max(q_u + q_e, q_f),
            M_q2=max(q_f, q_e) + 2.0 * q_u,
            f_prime_sup=model.derived.f_prime_sup,
            a_sup=model.derived.a_sup,
            M_R=bounds.M_R,
            M_C=bounds.M_C,
            M_S=bounds.M_S,
            rho_X=model.params.rho_X,
            X_hat=model.X_hat,
        )


def cfl_tau(
    constants: CflConstants,
    delta_xi: float,
    scheme: Scheme = Scheme.EXPLICIT,
    safety: float = CFL_SAFETY,
) -> float:
    """
    Largest admissible time step times the safety factor.

    The semi-implicit condition is the explicit one without the C2 terms.
    """
    c = constants
    C2 = c.C2 if scheme is Scheme.EXPLICIT else 0.0
    diffusive = c.C1 + C2 / delta_xi
    liquid = (c.zeta * c.rho_X * c.M_q2 + c.C1 * c.X_hat + C2 * c.X_hat / delta_xi) / (
        c.rho_X - c.X_hat
    )
    rate = c.zeta * c.M_q1 + c.reaction_rate + (2.0 / delta_xi) * max(diffusive, liquid)
    if not np.isfinite(rate) or rate <= 0:
        raise ConfigurationError(f"CFL rate {rate} is not positive; cannot choose a time step")
    tau = safety / rate
    if not tau > 0:
        raise ConfigurationError(f"CFL time step {tau} is not positive")
    return tau


def mixing_tau(constants: CflConstants, duration: float, safety: float = CFL_SAFETY) -> float:
    """Euler step of the mixing ODEs: reaction bound capped at duration/100."""
    rate = constants.zeta * constants.M_q1 + constants.reaction_rate
    cap = duration / 100.0
    return min(safety / rate, cap) if rate > 0 else cap


def snap_steps(duration: float, tau_max: float) -> Tuple[int, float]:
    """Step count and step size so that an integer number of steps spans the duration."""
    n_steps = max(1, int(math.ceil(duration / tau_max - 1e-12)))
    return n_steps, duration / n_steps
