"""
MODIFIED ASM1 BIOKINETICS

Eight-process activated-sludge kinetics on the particulate vector
C = (X_I, X_S-ND, X_BH, X_BA, X_P, X_ND) and the soluble vector
S = (S_I, S_S, S_O, S_NO, S_NH, S_ND), with the slowly biodegradable
substrate split as X_S = X_S-ND + X_ND so that the six particulates add up
to X/c.

Features:
- vectorized rate vector r(C, S) over any number of leading axes
- stoichiometric matrices sigma_C, sigma_S
- particulate reactions with a linear growth cutoff near X̂
- Latin-hypercube estimates of the reaction bounds used by the CFL conditions
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Dict, Optional

import numpy as np
from scipy.stats import qmc

from .errors import ConfigurationError, NumericalError

logger = logging.getLogger(__name__)

PARTICULATE_NAMES = ("XI", "XSND", "XBH", "XBA", "XP", "XND")
SOLUBLE_NAMES = ("SI", "SS", "SO", "SNO", "SNH", "SND")

SECONDS_PER_DAY = 86400.0
GRAMS_PER_KG = 1000.0
BOUND_SAFETY = 1.5

# Parameter table in its customary units: rates in 1/d, half-saturation
# constants in g/m³, k_a in m³/(g COD d).
TABLE_DEFAULTS: Dict[str, float] = {
    "Y_A": 0.24,
    "Y_H": 0.67,
    "f_P": 0.08,
    "i_XB": 0.086,
    "i_XP": 0.06,
    "mu_H": 6.0,
    "K_S": 20.0,
    "K_OH": 0.2,
    "K_NO": 0.5,
    "b_H": 0.62,
    "eta_g": 0.8,
    "eta_h": 0.4,
    "k_h": 3.0,
    "K_X": 0.03,
    "mu_A": 0.8,
    "K_NH_bar": 0.05,
    "K_NH": 1.0,
    "b_A": 0.15,
    "K_OA": 0.4,
    "k_a": 0.08,
}

_RATE_KEYS = ("mu_H", "b_H", "k_h", "mu_A", "b_A")
_CONCENTRATION_KEYS = ("K_S", "K_OH", "K_NO", "K_NH_bar", "K_NH", "K_OA")


@dataclass(frozen=True)
class Asm1Params:
    """
    Kinetic and stoichiometric constants in SI units.

    Use ``Asm1Params.from_table_units`` to build an instance from the
    customary d⁻¹ and g/m³ values.
    """

    Y_A: float
    Y_H: float
    f_P: float
    i_XB: float
    i_XP: float
    mu_H: float
    K_S: float
    K_OH: float
    K_NO: float
    b_H: float
    eta_g: float
    eta_h: float
    k_h: float
    K_X: float
    mu_A: float
    K_NH_bar: float
    K_NH: float
    b_A: float
    K_OA: float
    k_a: float
    eps_cutoff_fraction: float = 0.05
    enabled: bool = True

    @classmethod
    def from_table_units(
        cls,
        overrides: Optional[Dict[str, float]] = None,
        eps_cutoff_fraction: float = 0.05,
        enabled: bool = True,
    ) -> "Asm1Params":
        table = dict(TABLE_DEFAULTS)
        for key, value in (overrides or {}).items():
            if key not in table:
                raise ConfigurationError(f"unknown kinetic parameter '{key}'")
            table[key] = float(value)
        values = {}
        for key, value in table.items():
            if key in _RATE_KEYS:
                value = value / SECONDS_PER_DAY
            elif key in _CONCENTRATION_KEYS:
                value = value / GRAMS_PER_KG
            elif key == "k_a":
                value = value * GRAMS_PER_KG / SECONDS_PER_DAY
            values[key] = value
        params = cls(**values, eps_cutoff_fraction=eps_cutoff_fraction, enabled=enabled)
        params.validate()
        return params

    def to_table_units(self) -> Dict[str, float]:
        out = {}
        for key in TABLE_DEFAULTS:
            value = getattr(self, key)
            if key in _RATE_KEYS:
                value = value * SECONDS_PER_DAY
            elif key in _CONCENTRATION_KEYS:
                value = value * GRAMS_PER_KG
            elif key == "k_a":
                value = value * SECONDS_PER_DAY / GRAMS_PER_KG
            out[key] = value
        return out

    def validate(self) -> None:
        for f in fields(self):
            if f.name in ("enabled",):
                continue
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ConfigurationError(f"kinetic parameter {f.name} = {value} is invalid")
        for name in _RATE_KEYS + _CONCENTRATION_KEYS + ("K_X", "k_a"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"kinetic parameter {name} must be positive")
        if not 0 < self.Y_H < 1:
            raise ConfigurationError(f"Y_H must lie in (0, 1), got {self.Y_H}")
        if not 0 < self.f_P < 1:
            raise ConfigurationError(f"f_P must lie in (0, 1), got {self.f_P}")
        if self.Y_A <= 0:
            raise ConfigurationError(f"Y_A must be positive, got {self.Y_A}")
        if not 0 < self.eps_cutoff_fraction < 1:
            raise ConfigurationError(
                f"eps_cutoff_fraction must lie in (0, 1), got {self.eps_cutoff_fraction}"
            )


@dataclass(frozen=True)
class StoichiometricModel:
    sigma_C: np.ndarray
    sigma_S: np.ndarray
    c_conv: float

    @classmethod
    def from_params(cls, p: Asm1Params, c_conv: float) -> "StoichiometricModel":
        growth_yield = 1.0 - p.f_P * (1.0 + p.i_XP) - p.i_XB
        nitrogen_yield = p.i_XB - p.f_P * p.i_XP
        sigma_C = np.array(
            [
                [0, 0, 0, 0, 0, 0, 0, 0],
                [0, 0, 0, growth_yield, growth_yield, 0, -1, 1],
                [1, 1, 0, -1, 0, 0, 0, 0],
                [0, 0, 1, 0, -1, 0, 0, 0],
                [0, 0, 0, p.f_P, p.f_P, 0, 0, 0],
                [0, 0, 0, nitrogen_yield, nitrogen_yield, 0, 0, -1],
            ],
            dtype=float,
        )
        sigma_S = np.array(
            [
                [0, 0, 0, 0, 0, 0, 0, 0],
                [-1 / p.Y_H, -1 / p.Y_H, 0, 0, 0, 0, 1, 0],
                [-(1 - p.Y_H) / p.Y_H, 0, -(4.57 - p.Y_A) / p.Y_A, 0, 0, 0, 0, 0],
                [0, -(1 - p.Y_H) / (2.86 * p.Y_H), 1 / p.Y_A, 0, 0, 0, 0, 0],
                [-p.i_XB, -p.i_XB, -p.i_XB - 1 / p.Y_A, 0, 0, 1, 0, 0],
                [0, 0, 0, 0, 0, -1, 0, 1],
            ],
            dtype=float,
        )
        sigma_C.setflags(write=False)
        sigma_S.setflags(write=False)
        return cls(sigma_C=sigma_C, sigma_S=sigma_S, c_conv=c_conv)


@dataclass(frozen=True)
class ReactionBounds:
    M_R: float
    M_C: float
    M_S: float

    @property
    def largest(self) -> float:
        return max(self.M_R, self.M_C, self.M_S)


def monod(A, B):
    """A/(A+B), defined as 0 where A + B = 0."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    den = A + B
    return np.divide(A, den, out=np.zeros(np.broadcast(A, B).shape), where=den > 0)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)


class ReactionModel:
    """
    Modified ASM1 reaction terms for one parameter set.

    Args:
        params: Kinetic constants in SI units
        X_hat: Maximum packing concentration, fixes the growth cutoff
        c_conv: COD-to-mass conversion factor c
    """

    def __init__(self, params: Asm1Params, X_hat: float, c_conv: float):
        params.validate()
        self.params = params
        self.X_hat = float(X_hat)
        self.c_conv = float(c_conv)
        self.eps_cutoff = params.eps_cutoff_fraction * self.X_hat
        self.stoichiometry = StoichiometricModel.from_params(params, c_conv)
        # column sums give R = c * chi * (1^T sigma_C) r
        self._total_row = self.stoichiometry.sigma_C.sum(axis=0)

    @property
    def enabled(self) -> bool:
        return self.params.enabled

    # ------------------------------------------------------------------
    # rates
    # ------------------------------------------------------------------

    @staticmethod
    def _prepare(values, name: str) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != 6:
            raise ValueError(f"{name} must have 6 components, got shape {values.shape}")
        if np.isnan(values).any():
            raise NumericalError(f"{name} contains NaN")
        return np.maximum(values, 0.0)

    def _switches(self, S: np.ndarray):
        p = self.params
        S_S, S_O, S_NO, S_NH = S[..., 1], S[..., 2], S[..., 3], S[..., 4]
        aerobic = monod(S_O, p.K_OH)
        anoxic = monod(p.K_OH, S_O) * monod(S_NO, p.K_NO)
        hydrolysis = aerobic + p.eta_h * anoxic
        growth_H = monod(S_NH, p.K_NH_bar) * monod(S_S, p.K_S)
        return aerobic, anoxic, hydrolysis, growth_H

    def reaction_rates(self, C, S) -> np.ndarray:
        """Process rates r (..., 8), nonnegative for nonnegative inputs."""
        C = self._prepare(C, "C")
        S = self._prepare(S, "S")
        shape = np.broadcast_shapes(C.shape[:-1], S.shape[:-1])
        if not self.enabled:
            return np.zeros(shape + (8,))
        p = self.params
        X_BH, X_BA, X_ND = C[..., 2], C[..., 3], C[..., 5]
        X_S = C[..., 1] + X_ND
        S_O, S_NH, S_ND = S[..., 2], S[..., 4], S[..., 5]
        aerobic, anoxic, hydrolysis, growth_H = self._switches(S)
        den = p.K_X * X_BH + X_S

        r = np.empty(shape + (8,))
        r[..., 0] = p.mu_H * growth_H * aerobic * X_BH
        r[..., 1] = p.mu_H * growth_H * anoxic * p.eta_g * X_BH
        r[..., 2] = p.mu_A * monod(S_NH, p.K_NH) * monod(S_O, p.K_OA) * X_BA
        r[..., 3] = p.b_H * X_BH
        r[..., 4] = p.b_A * X_BA
        r[..., 5] = p.k_a * S_ND * X_BH
        r[..., 6] = p.k_h * _safe_ratio(X_S * X_BH, den) * hydrolysis
        r[..., 7] = p.k_h * _safe_ratio(X_BH * X_ND, den) * hydrolysis
        return r

    def rate_jacobian_particulate(self, C, S) -> np.ndarray:
        """∂r/∂C with shape (..., 8, 6)."""
        C = self._prepare(C, "C")
        S = self._prepare(S, "S")
        shape = np.broadcast_shapes(C.shape[:-1], S.shape[:-1])
        jac = np.zeros(shape + (8, 6))
        if not self.enabled:
            return jac
        p = self.params
        X_BH, X_ND = C[..., 2], C[..., 5]
        X_S = C[..., 1] + X_ND
        S_O, S_NH, S_ND = S[..., 2], S[..., 4], S[..., 5]
        aerobic, anoxic, hydrolysis, growth_H = self._switches(S)
        den = p.K_X * X_BH + X_S
        den2 = den * den

        jac[..., 0, 2] = p.mu_H * growth_H * aerobic
        jac[..., 1, 2] = p.mu_H * growth_H * anoxic * p.eta_g
        jac[..., 2, 3] = p.mu_A * monod(S_NH, p.K_NH) * monod(S_O, p.K_OA)
        jac[..., 3, 2] = p.b_H
        jac[..., 4, 3] = p.b_A
        jac[..., 5, 2] = p.k_a * S_ND

        scale = p.k_h * hydrolysis
        d7_dXS = scale * _safe_ratio(p.K_X * X_BH * X_BH, den2)
        jac[..., 6, 1] = d7_dXS
        jac[..., 6, 5] = d7_dXS
        jac[..., 6, 2] = scale * _safe_ratio(X_S * X_S, den2)

        jac[..., 7, 1] = -scale * _safe_ratio(X_BH * X_ND, den2)
        jac[..., 7, 2] = scale * _safe_ratio(X_ND * X_S, den2)
        jac[..., 7, 5] = scale * _safe_ratio(X_BH * (den - X_ND), den2)
        return jac

    # ------------------------------------------------------------------
    # reaction terms
    # ------------------------------------------------------------------

    def cutoff(self, X) -> np.ndarray:
        """Growth cutoff: 1 below X̂−ε, linear ramp to 0 at X̂."""
        X = np.asarray(X, dtype=float)
        return np.clip((self.X_hat - X) / self.eps_cutoff, 0.0, 1.0)

    def particulate_reactions(self, C, S, X) -> np.ndarray:
        r = self.reaction_rates(C, S)
        return self.cutoff(X)[..., None] * (r @ self.stoichiometry.sigma_C.T)

    def soluble_reactions(self, C, S) -> np.ndarray:
        r = self.reaction_rates(C, S)
        return r @ self.stoichiometry.sigma_S.T

    def total_reaction(self, C, S, X) -> np.ndarray:
        """R = c Σ_k R_C^(k)."""
        return self.c_conv * self.particulate_reactions(C, S, X).sum(axis=-1)

    def source_terms(self, P: np.ndarray, X: np.ndarray, S: np.ndarray):
        """
        Reaction terms of a grid state.

        Returns
        -------
        (R, R_C, R_S) with shapes (n,), (n, 6), (n, 6). R_C already carries
        the cutoff; the percentage equations use c * R_C.
        """
        n = X.shape[0]
        if not self.enabled:
            return np.zeros(n), np.zeros((n, 6)), np.zeros((n, 6))
        C = P * X[:, None] / self.c_conv
        r = self.reaction_rates(C, S)
        R_C = self.cutoff(X)[:, None] * (r @ self.stoichiometry.sigma_C.T)
        R_S = r @ self.stoichiometry.sigma_S.T
        return self.c_conv * R_C.sum(axis=1), R_C, R_S


def derivative_bounds(
    model: ReactionModel,
    s_max: np.ndarray,
    n_samples: int = 100_000,
    seed: Optional[int] = 2023,
) -> ReactionBounds:
    """
    Sampled suprema M_R, M_C, M_S over the invariant region.

    X is drawn from [0, X̂], the percentages uniformly from the simplex and
    S from the box [0, 2 s_max]. The estimates are inflated by 1.5.

    Raises
    ------
    ConfigurationError
        If any sampled quantity is not finite.
    """
    if not model.enabled:
        return ReactionBounds(0.0, 0.0, 0.0)
    s_max = np.asarray(s_max, dtype=float)
    if s_max.shape != (6,) or np.any(s_max < 0):
        raise ConfigurationError(f"s_max must be 6 nonnegative values, got {s_max}")

    sampler = qmc.LatinHypercube(d=13, seed=seed)
    u = sampler.random(n_samples)
    X = u[:, 0] * model.X_hat
    expo = -np.log(np.clip(u[:, 1:7], 1e-300, 1.0))
    P = expo / expo.sum(axis=1, keepdims=True)
    S = u[:, 7:13] * (2.0 * s_max)
    C = P * X[:, None] / model.c_conv

    c = model.c_conv
    sigma_C = model.stoichiometry.sigma_C
    r = model.reaction_rates(C, S)
    jac = model.rate_jacobian_particulate(C, S)
    chi = model.cutoff(X)
    in_ramp = (X > model.X_hat - model.eps_cutoff) & (X < model.X_hat)
    dchi_dX = np.where(in_ramp, -1.0 / model.eps_cutoff, 0.0)
    total_row = sigma_C.sum(axis=0)
    # dR/dC_k = c [chi (1^T sigma_C) dr/dC_k + chi'(X) c (1^T sigma_C) r]
    dR = c * (
        chi[:, None] * np.einsum("l,nlk->nk", total_row, jac)
        + (dchi_dX * c * (r @ total_row))[:, None]
    )
    M_R = float(np.max(np.abs(dR))) / c

    R_C = chi[:, None] * (r @ sigma_C.T)
    R_S = r @ model.stoichiometry.sigma_S.T
    M_C = _consumption_bound(R_C, C)
    M_S = _consumption_bound(R_S, S)

    for name, value in (("M_R", M_R), ("M_C", M_C), ("M_S", M_S)):
        if not np.isfinite(value):
            raise ConfigurationError(f"reaction bound {name} is not finite")
    bounds = ReactionBounds(
        M_R=BOUND_SAFETY * M_R, M_C=BOUND_SAFETY * M_C, M_S=BOUND_SAFETY * M_S
    )
    logger.info(
        "reaction bounds from %d samples: M_R=%.3e M_C=%.3e M_S=%.3e",
        n_samples,
        bounds.M_R,
        bounds.M_C,
        bounds.M_S,
    )
    return bounds


def _consumption_bound(R: np.ndarray, conc: np.ndarray) -> float:
    positive = conc > 1e-14
    ratio = np.divide(-R, conc, out=np.zeros_like(R), where=positive)
    return float(np.max(np.maximum(ratio, 0.0), initial=0.0))
