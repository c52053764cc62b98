"""Finite zero-sum games and the fooling/separating dichotomy.

Rows are distinguishers (maximizer), columns are domain points (minimizer).
Games are solved with a dense tableau simplex using Bland's rule, in floats
first and in exact rationals when the float certificate does not check out.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Union

import numpy as np

from sdgkit.concept import ConceptClass
from sdgkit.measures import Distribution

PIVOT_TOL = 1e-9
CERT_TOL = 1e-9
BOUNDARY_TOL = 1e-9
MAX_BRUTE_SIDE = 6
MAX_BRUTE_GRID = 400


class GameSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PayoffMatrix:
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.ndim != 2 or 0 in m.shape:
            raise ValueError("payoff matrix must be a nonempty 2-d array")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_predictor(cls, f, c: ConceptClass):
        """m(d, x) = f(d) - x(d)."""
        f = np.asarray(f, dtype=float)
        if f.shape != (c.n_rows,):
            raise ValueError(f"predictor has {f.size} values, class has {c.n_rows} rows")
        return cls(f[:, None] - c.table.astype(float))

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class GameSolution:
    value: float
    row_mix: Distribution
    col_mix: Distribution
    exact: bool = False

    def gap(self, matrix):
        m = _entries(matrix)
        return float(np.max(m @ self.col_mix.weights) - np.min(self.row_mix.weights @ m))


def _entries(matrix):
    return matrix.entries if isinstance(matrix, PayoffMatrix) else np.asarray(matrix, dtype=float)


def _pivot(tab, row, col):
    tab[row] = tab[row] / tab[row, col]
    for i in range(tab.shape[0]):
        if i != row and tab[i, col] != 0:
            tab[i] = tab[i] - tab[i, col] * tab[row]


def _simplex(positive, exact):
    """Maximize sum(z) s.t. positive @ z <= 1, z >= 0.

    Returns (z, u) where u are the dual prices of the rows.
    """
    n_rows, n_cols = positive.shape
    width = n_cols + n_rows + 1
    if exact:
        tab = np.empty((n_rows + 1, width), dtype=object)
        tab[...] = Fraction(0)
        for i in range(n_rows):
            for j in range(n_cols):
                tab[i, j] = Fraction(positive[i, j])
            tab[i, n_cols + i] = Fraction(1)
            tab[i, -1] = Fraction(1)
        for j in range(n_cols):
            tab[-1, j] = Fraction(-1)
        tol = 0
    else:
        tab = np.zeros((n_rows + 1, width))
        tab[:n_rows, :n_cols] = positive
        tab[:n_rows, n_cols:n_cols + n_rows] = np.eye(n_rows)
        tab[:n_rows, -1] = 1.0
        tab[-1, :n_cols] = -1.0
        tol = PIVOT_TOL
    basis = list(range(n_cols, n_cols + n_rows))
    limit = 50 * (n_rows + n_cols) ** 2 + 100
    for _ in range(limit):
        entering = next((j for j in range(width - 1) if tab[-1, j] < -tol), None)
        if entering is None:
            break
        best, leave = None, None
        for i in range(n_rows):
            if tab[i, entering] > tol:
                ratio = tab[i, -1] / tab[i, entering]
                if best is None or ratio < best or (ratio == best and basis[i] < basis[leave]):
                    best, leave = ratio, i
        if leave is None:
            raise GameSolverError("game LP reported unbounded; matrix shift failed")
        _pivot(tab, leave, entering)
        basis[leave] = entering
    else:
        raise GameSolverError(f"simplex did not converge in {limit} pivots")
    z = [Fraction(0) if exact else 0.0] * n_cols
    for i, var in enumerate(basis):
        if var < n_cols:
            z[var] = tab[i, -1]
    u = [tab[-1, n_cols + i] for i in range(n_rows)]
    return z, u


def _solve(m, exact):
    shift = 1.0 - float(m.min())
    if exact:
        positive = np.array([[Fraction(float(v)) + Fraction(shift) for v in row] for row in m], dtype=object)
    else:
        positive = m + shift
    z, u = _simplex(positive, exact)
    total_z = sum(z)
    total_u = sum(u)
    if total_z <= 0 or total_u <= 0:
        raise GameSolverError("degenerate optimum with zero objective")
    if exact:
        value = float(Fraction(1) / total_z - Fraction(shift))
        col = [float(v / total_z) for v in z]
        row = [float(v / total_u) for v in u]
    else:
        value = float(1.0 / total_z - shift)
        col = np.asarray(z) / total_z
        row = np.asarray(u) / total_u
    return GameSolution(value, Distribution(row), Distribution(col), exact=exact)


def _certified(sol, m):
    best_response_to_col = float(np.max(m @ sol.col_mix.weights))
    best_response_to_row = float(np.min(sol.row_mix.weights @ m))
    return (
        best_response_to_col <= sol.value + CERT_TOL
        and best_response_to_row >= sol.value - CERT_TOL
    )


def solve_zero_sum(matrix: Union[PayoffMatrix, np.ndarray], exact: bool = False) -> GameSolution:
    """Value and optimal mixed strategies of the game max_row min_col.

    The float solve is checked against its own certificate (both best
    responses within 1e-9 of the value); on failure the same tableau is
    re-run over ``Fraction``.
    """
    m = _entries(matrix)
    if m.ndim != 2 or 0 in m.shape:
        raise ValueError("payoff matrix must be a nonempty 2-d array")
    if not exact:
        try:
            sol = _solve(m, exact=False)
            if _certified(sol, m):
                return sol
        except (GameSolverError, ValueError, ZeroDivisionError):
            pass
    sol = _solve(m, exact=True)
    if not _certified(sol, m):
        raise GameSolverError(
            f"certificate failed after exact solve: shape {m.shape}, "
            f"entry range [{m.min():.3g}, {m.max():.3g}], gap {sol.gap(m):.3g}"
        )
    return sol


# ---------------------------------------------------------------- dichotomy


@dataclass(frozen=True)
class Proper:
    """A mixture over points with f(d) - p(d) <= eps/2 for every d."""

    p: Distribution
    value: float


@dataclass(frozen=True)
class Separator:
    """A mixture over distinguishers with E[f(d) - x(d)] >= margin for every x."""

    dbar: Distribution
    margin: float


def amenability_check(f, c: ConceptClass, eps: float):
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    matrix = PayoffMatrix.from_predictor(f, c)
    sol = solve_zero_sum(matrix)
    if sol.value <= eps / 2 + BOUNDARY_TOL:
        return Proper(sol.col_mix, sol.value)
    return Separator(sol.row_mix, sol.value)


def certificate_holds(result, f, c: ConceptClass, eps: float, tol: float = CERT_TOL) -> bool:
    """Check a dichotomy certificate by direct per-row / per-column evaluation."""
    f = np.asarray(f, dtype=float)
    table = c.table.astype(float)
    if isinstance(result, Proper):
        gaps = f - table @ result.p.weights
        return bool(np.all(gaps <= eps / 2 + tol))
    payoffs = result.dbar.weights @ (f[:, None] - table)
    return bool(np.all(payoffs >= result.margin - tol) and result.margin > eps / 2 - tol)


# ---------------------------------------------------------------- grid oracle


@lru_cache(maxsize=16)
def simplex_grid(total: int, parts: int) -> np.ndarray:
    """All non-negative integer vectors of length ``parts`` summing to ``total``."""
    if parts == 1:
        return np.array([[total]], dtype=np.int32)
    blocks = []
    for first in range(total + 1):
        rest = simplex_grid(total - first, parts - 1)
        blocks.append(np.hstack([np.full((rest.shape[0], 1), first, dtype=np.int32), rest]))
    return np.vstack(blocks)


def brute_force_game_value(matrix, grid: int) -> float:
    """Game value by exhaustive search on a simplex grid of step 1/grid.

    The grid covers the smaller player's simplex: columns (min of max, an
    upper estimate) when there are no more columns than rows, rows (max of
    min, a lower estimate) otherwise.
    """
    m = _entries(matrix)
    if max(m.shape) > MAX_BRUTE_SIDE or grid > MAX_BRUTE_GRID or grid < 1:
        raise ValueError(
            f"brute force is capped at {MAX_BRUTE_SIDE}x{MAX_BRUTE_SIDE} and grid <= {MAX_BRUTE_GRID}"
        )
    n_rows, n_cols = m.shape
    if n_cols <= n_rows:
        mixes = simplex_grid(grid, n_cols) / grid
        return float(np.min(np.max(mixes @ m.T, axis=1)))
    mixes = simplex_grid(grid, n_rows) / grid
    return float(np.max(np.min(mixes @ m, axis=1)))
