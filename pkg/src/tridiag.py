"""
Tridiagonal systems.

Row i of the system reads ``lower[i] u[i-1] + diag[i] u[i] + upper[i] u[i+1] = rhs[i]``;
``lower[0]`` and ``upper[-1]`` are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .errors import SingularSystemError


@dataclass
class TridiagonalSystem:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        self.lower = np.asarray(self.lower, dtype=float)
        self.diag = np.asarray(self.diag, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not self.lower.shape == self.diag.shape == self.upper.shape:
            raise ValueError("lower, diag and upper must have the same length")

    @property
    def size(self) -> int:
        return self.diag.size

    def banded(self) -> np.ndarray:
        """(3, n) layout expected by scipy.linalg.solve_banded."""
        ab = np.zeros((3, self.size))
        ab[0, 1:] = self.upper[:-1]
        ab[1] = self.diag
        ab[2, :-1] = self.lower[1:]
        return ab

    def to_dense(self) -> np.ndarray:
        return (
            np.diag(self.diag)
            + np.diag(self.upper[:-1], 1)
            + np.diag(self.lower[1:], -1)
        )

    def matvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        out = self.diag.reshape((-1,) + (1,) * (u.ndim - 1)) * u
        if self.size > 1:
            up = self.upper[:-1].reshape((-1,) + (1,) * (u.ndim - 1))
            lo = self.lower[1:].reshape((-1,) + (1,) * (u.ndim - 1))
            out[:-1] += up * u[1:]
            out[1:] += lo * u[:-1]
        return out

    def column_dominance_margin(self) -> np.ndarray:
        """|diag_j| minus the off-diagonal magnitudes of column j."""
        margin = np.abs(self.diag).copy()
        margin[1:] -= np.abs(self.upper[:-1])
        margin[:-1] -= np.abs(self.lower[1:])
        return margin

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_tridiagonal(self, rhs)


def solve_tridiagonal(system: TridiagonalSystem, rhs: np.ndarray) -> np.ndarray:
    """
    Solve with LAPACK's banded solver; ``rhs`` may hold several columns.

    Raises
    ------
    SingularSystemError
        If a pivot vanishes or the solution is not finite.
    """
    rhs = np.asarray(rhs, dtype=float)
    if system.size == 1:
        if system.diag[0] == 0:
            raise SingularSystemError("1x1 system with zero pivot")
        return rhs / system.diag[0]
    try:
        u = solve_banded((1, 1), system.banded(), rhs, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"tridiagonal solve failed: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("tridiagonal solve produced non-finite values")
    return u


def thomas_solve(system: TridiagonalSystem, rhs: np.ndarray) -> np.ndarray:
    """Thomas algorithm without pivoting, for reference and cross-checks."""
    a, b, c = system.lower, system.diag, system.upper
    d = np.array(rhs, dtype=float)
    n = system.size
    c_star = np.zeros(n)
    d_star = np.zeros_like(d)
    if b[0] == 0:
        raise SingularSystemError("zero pivot in row 0")
    c_star[0] = c[0] / b[0]
    d_star[0] = d[0] / b[0]
    for i in range(1, n):
        denom = b[i] - a[i] * c_star[i - 1]
        if denom == 0:
            raise SingularSystemError(f"zero pivot in row {i}")
        c_star[i] = c[i] / denom
        d_star[i] = (d[i] - a[i] * d_star[i - 1]) / denom
    u = np.zeros_like(d)
    u[-1] = d_star[-1]
    for i in range(n - 2, -1, -1):
        u[i] = d_star[i] - c_star[i] * u[i + 1]
    return u
