"""
SEDIMENTATION-CONSOLIDATION CONSTITUTIVE LAWS

Hindered-settling velocity with a tangent extension beyond X^t, the affine
effective solids stress, the degenerate diffusion functions d, a and the
integrated diffusion 𝒟, the batch flux f, and the derived extrema the CFL
conditions need (X̂, X*, ‖f′‖, ‖a‖).

All quantities are SI: m, s, kg/m³.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, ConstitutiveDomainError

logger = logging.getLogger(__name__)

SCAN_POINTS = 2**14
TABLE_POINTS = 4097
SUPREMUM_SAFETY = 1.05


@dataclass(frozen=True)
class ConstitutiveParams:
    """
    Settling and compression parameters.

    Defaults are the activated-sludge values of the bundled scenarios.
    """

    v0: float = 1.76e-3
    X_breve: float = 3.87
    eta: float = 3.58
    X_c: float = 5.0
    sigma0: float = 0.2
    rho_X: float = 1050.0
    rho_L: float = 998.0
    g: float = 9.81
    X_tangent: float = 25.0
    c_conv: float = 0.75

    @property
    def delta_rho(self) -> float:
        return self.rho_X - self.rho_L

    def validate(self) -> None:
        """Raise ConfigurationError if a parameter is out of range."""
        if self.v0 <= 0:
            raise ConfigurationError(f"v0 must be positive, got {self.v0}")
        if self.eta <= 1:
            raise ConfigurationError(f"eta must exceed 1, got {self.eta}")
        if self.X_breve <= 0:
            raise ConfigurationError(f"X_breve must be positive, got {self.X_breve}")
        if not 0 < self.X_c < self.X_tangent < self.rho_X:
            raise ConfigurationError(
                "expected 0 < X_c < X_tangent < rho_X, got "
                f"X_c={self.X_c}, X_tangent={self.X_tangent}, rho_X={self.rho_X}"
            )
        if self.delta_rho <= 0:
            raise ConfigurationError(
                f"rho_X ({self.rho_X}) must exceed rho_L ({self.rho_L})"
            )
        if self.sigma0 < 0:
            raise ConfigurationError(f"sigma0 must be nonnegative, got {self.sigma0}")
        if self.g <= 0:
            raise ConfigurationError(f"g must be positive, got {self.g}")
        if not 0 < self.c_conv <= 1:
            raise ConfigurationError(f"c_conv must lie in (0, 1], got {self.c_conv}")


@dataclass(frozen=True)
class DerivedConstitutive:
    """Quantities derived once from ConstitutiveParams."""

    X_hat: float
    X_star: float
    f_prime_sup: float
    a_sup: float
    table_nodes: np.ndarray = field(repr=False)
    table_values: np.ndarray = field(repr=False)


def tangent_root(x: float, value: float, slope: float) -> float:
    """Root of the tangent line through (x, value) with the given slope."""
    if slope >= 0:
        raise ConfigurationError(
            f"settling velocity must decrease at X^t = {x}, slope is {slope}"
        )
    return x - value / slope


def _power_law_velocity(params: ConstitutiveParams, X: np.ndarray) -> np.ndarray:
    return params.v0 / (1.0 + (X / params.X_breve) ** params.eta)


def _power_law_slope(params: ConstitutiveParams, X: np.ndarray) -> np.ndarray:
    ratio = (X / params.X_breve) ** params.eta
    with np.errstate(divide="ignore", invalid="ignore"):
        dratio = np.where(X > 0, params.eta * ratio / np.where(X > 0, X, 1.0), 0.0)
    return -params.v0 * dratio / (1.0 + ratio) ** 2


def derive_x_hat(params: ConstitutiveParams) -> float:
    """Maximum packing concentration: root of the tangent to v_hs at X^t."""
    xt = np.asarray(params.X_tangent, dtype=float)
    value = float(_power_law_velocity(params, xt))
    slope = float(_power_law_slope(params, xt))
    return tangent_root(params.X_tangent, value, slope)


def _check_domain(X: np.ndarray, name: str) -> None:
    if np.any(X < 0):
        raise ConstitutiveDomainError(
            f"{name} is defined for X >= 0, got min {float(np.min(X))}"
        )


class ConstitutiveModel:
    """
    Constitutive functions for one parameter set.

    The object is immutable after construction; all methods are pure and
    accept scalars or numpy arrays.

    Args:
        params: Settling and compression parameters
    """

    def __init__(self, params: ConstitutiveParams = ConstitutiveParams()):
        params.validate()
        self.params = params
        X_hat = derive_x_hat(params)
        if X_hat <= params.X_c:
            raise ConfigurationError(
                f"X_hat = {X_hat:.4f} must exceed X_c = {params.X_c}"
            )
        self._X_hat = X_hat
        self._v_tangent = float(_power_law_velocity(params, np.asarray(params.X_tangent)))
        self._slope_tangent = float(_power_law_slope(params, np.asarray(params.X_tangent)))
        self._a_factor = params.rho_X * params.sigma0 / (params.g * params.delta_rho)

        nodes, values = self._tabulate_integrated_diffusion()
        self._table = PchipInterpolator(nodes, values, extrapolate=False)
        X_star, f_prime_sup, a_sup = self._scan_extrema()
        self.derived = DerivedConstitutive(
            X_hat=X_hat,
            X_star=X_star,
            f_prime_sup=f_prime_sup,
            a_sup=a_sup,
            table_nodes=nodes,
            table_values=values,
        )
        logger.debug(
            "constitutive model: X_hat=%.6f X_star=%.6f |f'|=%.4e |a|=%.4e",
            X_hat,
            X_star,
            f_prime_sup,
            a_sup,
        )

    # ------------------------------------------------------------------
    # settling velocity and batch flux
    # ------------------------------------------------------------------

    @property
    def X_hat(self) -> float:
        return self._X_hat

    @property
    def X_star(self) -> float:
        return self.derived.X_star

    def _velocity(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        v = np.where(
            X <= p.X_tangent,
            _power_law_velocity(p, np.minimum(X, p.X_tangent)),
            self._v_tangent + self._slope_tangent * (X - p.X_tangent),
        )
        return np.where(X >= self._X_hat, 0.0, np.maximum(v, 0.0))

    def _velocity_slope(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        slope = np.where(
            X <= p.X_tangent,
            _power_law_slope(p, np.minimum(X, p.X_tangent)),
            self._slope_tangent,
        )
        return np.where(X > self._X_hat, 0.0, slope)

    def hindered_settling_velocity(self, X):
        """v_hs(X): power law up to X^t, tangent up to X̂, zero beyond."""
        X = np.asarray(X, dtype=float)
        _check_domain(X, "hindered_settling_velocity")
        return self._velocity(X)

    def hindered_settling_derivative(self, X):
        X = np.asarray(X, dtype=float)
        _check_domain(X, "hindered_settling_derivative")
        return self._velocity_slope(X)

    def batch_flux(self, X):
        """f(X) = v_hs(X) X."""
        X = np.asarray(X, dtype=float)
        _check_domain(X, "batch_flux")
        return self._velocity(X) * X

    def batch_flux_derivative(self, X):
        X = np.asarray(X, dtype=float)
        _check_domain(X, "batch_flux_derivative")
        return self._velocity_slope(X) * X + self._velocity(X)

    # ------------------------------------------------------------------
    # compression
    # ------------------------------------------------------------------

    def effective_stress(self, X):
        X = np.asarray(X, dtype=float)
        _check_domain(X, "effective_stress")
        p = self.params
        return np.where(X >= p.X_c, p.sigma0 * (X - p.X_c), 0.0)

    def effective_stress_derivative(self, X):
        X = np.asarray(X, dtype=float)
        _check_domain(X, "effective_stress_derivative")
        p = self.params
        return np.where(X > p.X_c, p.sigma0, 0.0)

    def _diffusion_a(self, X: np.ndarray) -> np.ndarray:
        return np.where(X > self.params.X_c, self._a_factor * self._velocity(X), 0.0)

    def diffusion_a(self, X):
        """a(X) = X d(X); zero up to X_c."""
        X = np.asarray(X, dtype=float)
        _check_domain(X, "diffusion_a")
        return self._diffusion_a(X)

    def diffusion_d(self, X):
        """d(X) = v_hs ρ_X σ_e′ / (g X Δρ)."""
        X = np.asarray(X, dtype=float)
        _check_domain(X, "diffusion_d")
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(
                X > self.params.X_c, self._diffusion_a(X) / np.where(X > 0, X, 1.0), 0.0
            )

    def _tabulate_integrated_diffusion(self) -> Tuple[np.ndarray, np.ndarray]:
        p = self.params
        nodes = np.union1d(
            np.linspace(p.X_c, self._X_hat, TABLE_POINTS),
            [min(p.X_tangent, self._X_hat)],
        )

        v_t, s_t, X_hat = self._v_tangent, self._slope_tangent, self._X_hat

        def integrand(s: float) -> float:
            if s <= p.X_c or s >= X_hat:
                return 0.0
            if s <= p.X_tangent:
                v = p.v0 / (1.0 + (s / p.X_breve) ** p.eta)
            else:
                v = max(v_t + s_t * (s - p.X_tangent), 0.0)
            return self._a_factor * v

        pieces = np.empty(nodes.size - 1)
        for i, (lo, hi) in enumerate(zip(nodes[:-1], nodes[1:])):
            pieces[i], _ = quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-12)
        values = np.concatenate(([0.0], np.cumsum(pieces)))
        # monotone by construction; guard against quadrature noise
        values = np.maximum.accumulate(values)
        return nodes, values

    def integrated_diffusion(self, X):
        """𝒟(X): 0 for X ≤ X_c, table lookup above, clamped at X̂."""
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        mask = X > self.params.X_c
        if np.any(mask):
            out[mask] = self._table(np.minimum(X[mask], self._X_hat))
        return out

    # ------------------------------------------------------------------
    # extrema
    # ------------------------------------------------------------------

    def _scan_extrema(self) -> Tuple[float, float, float]:
        xs = np.linspace(0.0, self._X_hat, SCAN_POINTS + 1)
        f = self._velocity(xs) * xs
        fp = np.gradient(f, xs)

        significant = fp[np.abs(fp) > 1e-12 * self.params.v0]
        sign_changes = int(np.count_nonzero(np.diff(np.sign(significant))))
        if sign_changes > 1:
            raise ConfigurationError(
                f"batch flux is not unimodal: {sign_changes} sign changes of f'"
            )

        i = int(np.argmax(f))
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
        result = minimize_scalar(
            lambda x: -float(self._velocity(np.asarray(x)) * x),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10 * self._X_hat},
        )
        X_star = float(result.x)
        if not 0.0 < X_star < self._X_hat:
            raise ConfigurationError(f"X_star = {X_star} outside (0, X_hat)")

        f_prime_sup = SUPREMUM_SAFETY * float(np.max(np.abs(fp)))
        a_sup = SUPREMUM_SAFETY * float(np.max(self._diffusion_a(xs)))
        return X_star, f_prime_sup, a_sup

    def derive_extrema(self) -> Tuple[float, float, float]:
        """(X*, ‖f′‖, ‖a‖) with the safety factor applied to the suprema."""
        d = self.derived
        return d.X_star, d.f_prime_sup, d.a_sup

    def clamp(self, X: np.ndarray) -> np.ndarray:
        """Project concentrations into [0, X̂]."""
        return np.clip(X, 0.0, self._X_hat)
