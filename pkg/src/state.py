"""
Simulation state containers, the invariant-region monitor and mass functionals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import InvariantViolation

logger = logging.getLogger(__name__)

OMEGA_SLACK = 1e-10
EMPTY_CELL = 1e-12


@dataclass
class GridState:
    """
    Cell values at time t for cells j = -1..N+1.

    X has shape (N+3,), P and S have shape (N+3, 6). Rows of P are the
    percentages of the particulate components and sum to one.
    """

    t: float
    X: np.ndarray
    P: np.ndarray
    S: np.ndarray

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        n = self.X.shape[0]
        if self.P.shape != (n, 6) or self.S.shape != (n, 6):
            raise ValueError(
                f"inconsistent state shapes X{self.X.shape} P{self.P.shape} S{self.S.shape}"
            )

    @property
    def N(self) -> int:
        return self.X.shape[0] - 3

    def particulates(self, c_conv: float) -> np.ndarray:
        """C = pX/c per cell."""
        return self.P * self.X[:, None] / c_conv

    def copy(self) -> "GridState":
        return GridState(self.t, self.X.copy(), self.P.copy(), self.S.copy())


@dataclass
class MixedState:
    """Tank-averaged values during a completely mixed stage."""

    t: float
    X: float
    p: np.ndarray
    S: np.ndarray

    def __post_init__(self) -> None:
        self.X = float(self.X)
        self.p = np.asarray(self.p, dtype=float)
        self.S = np.asarray(self.S, dtype=float)

    def copy(self) -> "MixedState":
        return MixedState(self.t, self.X, self.p.copy(), self.S.copy())


# ----------------------------------------------------------------------
# mass functionals
# ----------------------------------------------------------------------


def tank_mass(X: np.ndarray, delta_xi: float) -> float:
    """Δξ Σ_{j=0..N} X_j, conserved by closed settling."""
    X = np.asarray(X)
    return float(delta_xi * np.sum(X[1:-1], axis=0))


def weighted_tank_mass(X: np.ndarray, delta_xi: float):
    """Δξ (X_0/2 + X_1 + ... + X_N); works on columns of 2-D input."""
    X = np.asarray(X, dtype=float)
    return delta_xi * (0.5 * X[1] + np.sum(X[2:-1], axis=0))


def xi_mass(X: np.ndarray, delta_xi: float):
    """Δξ Σ over all cells including the outlet cells."""
    return delta_xi * np.sum(np.asarray(X, dtype=float), axis=0)


# ----------------------------------------------------------------------
# invariant region monitor
# ----------------------------------------------------------------------


@dataclass
class OmegaMonitor:
    """
    Checks membership of the invariant region after every step.

    Violations up to ``slack`` are clipped away; larger ones raise
    InvariantViolation. The largest violation seen per kind is kept for
    the run diagnostics.
    """

    X_hat: float
    slack: float = OMEGA_SLACK
    maxima: Dict[str, float] = field(
        default_factory=lambda: {"X_low": 0.0, "X_high": 0.0, "p_low": 0.0, "p_sum": 0.0, "S_low": 0.0}
    )
    checks: int = 0

    @property
    def max_slack(self) -> float:
        return max(self.maxima.values())

    def _record(self, report: Dict[str, float]) -> None:
        for key, value in report.items():
            self.maxima[key] = max(self.maxima[key], value)

    def measure(self, X: np.ndarray, P: np.ndarray, S: np.ndarray) -> Dict[str, float]:
        """Violation sizes of each kind, without modifying anything."""
        occupied = X > EMPTY_CELL
        p = P[occupied]
        if p.size:
            p_low = float(max(0.0, -p.min()))
            p_sum = float(np.max(np.abs(p.sum(axis=1) - 1.0)))
        else:
            p_low = p_sum = 0.0
        return {
            "X_low": float(max(0.0, -X.min())),
            "X_high": float(max(0.0, X.max() - self.X_hat)),
            "p_low": p_low,
            "p_sum": p_sum,
            "S_low": float(max(0.0, -S.min())),
        }

    def enforce(self, state: GridState) -> GridState:
        """
        Validate and clean ``state`` in place.

        Raises
        ------
        InvariantViolation
            If any violation exceeds the slack.
        """
        report = self.measure(state.X, state.P, state.S)
        self.checks += 1
        self._record(report)
        worst = {k: v for k, v in report.items() if v > self.slack}
        if worst:
            logger.error("invariant region left at t = %.3f s: %s", state.t, worst)
            raise InvariantViolation(
                "state left the invariant region: "
                + ", ".join(f"{k}={v:.3e}" for k, v in worst.items()),
                report,
            )
        np.clip(state.X, 0.0, self.X_hat, out=state.X)
        np.maximum(state.S, 0.0, out=state.S)
        np.maximum(state.P, 0.0, out=state.P)
        sums = state.P.sum(axis=1)
        ok = sums > 0
        state.P[ok] /= sums[ok, None]
        return state

    def enforce_mixed(self, mixed: MixedState) -> MixedState:
        X = np.array([mixed.X])
        report = self.measure(X, mixed.p[None, :], mixed.S[None, :])
        self.checks += 1
        self._record(report)
        worst = {k: v for k, v in report.items() if v > self.slack}
        if worst:
            logger.error("mixed state left the invariant region at t = %.3f s: %s", mixed.t, worst)
            raise InvariantViolation(
                "mixed state left the invariant region: "
                + ", ".join(f"{k}={v:.3e}" for k, v in worst.items()),
                report,
            )
        mixed.X = float(np.clip(mixed.X, 0.0, self.X_hat))
        mixed.S = np.maximum(mixed.S, 0.0)
        p = np.maximum(mixed.p, 0.0)
        if p.sum() > 0:
            p = p / p.sum()
        mixed.p = p
        return mixed
