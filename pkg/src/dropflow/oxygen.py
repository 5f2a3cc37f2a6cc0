"""Oxygen transport step.

One backward-Euler step of

    dc/dt + u.grad(c) = Lap(c) - n c,     grad(c).nu = kappa (gamma - c),

with donor-cell advection and the consumption term n*c both folded into the
implicit operator.  The assembled matrix

    M = I + dt (Upwind(u) + diag(n)) - dt L_robin

has nonpositive off-diagonals and strict diagonal dominance, so M^{-1} >= 0:
positivity and the maximum principle  max c_new <= max(max c, max gamma)
are properties of the scheme, not accidents of the data.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import BoundaryData, Grid
from . import fields


class CflViolation(ValueError):
    pass


def _check_inputs(grid: Grid, c: np.ndarray, n: np.ndarray,
                  u: tuple[np.ndarray, np.ndarray], dt: float) -> None:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if np.any(c < 0):
        raise ValueError("c must be nonnegative")
    if np.any(n < 0):
        raise ValueError("n must be nonnegative")
    dt_max = fields.advective_cfl_dt(grid, u)
    if dt > dt_max:
        raise CflViolation(f"dt = {dt:.3e} exceeds advective CFL limit {dt_max:.3e}")


def assemble_step_matrix(grid: Grid, bdata: BoundaryData, n: np.ndarray,
                         u: tuple[np.ndarray, np.ndarray], dt: float
                         ) -> tuple[sparse.csr_matrix, np.ndarray]:
    """(M, rhs_const) with M c_new = c + rhs_const defining the step."""
    L, s = fields.assemble_robin_laplacian(grid, bdata)
    A = fields.assemble_upwind_matrix(grid, u)
    eye = sparse.identity(grid.n_cells, format="csr")
    M = eye + dt * (A + sparse.diags(n)) - dt * L
    return M.tocsr(), dt * s


def _assert_m_matrix(M: sparse.csr_matrix) -> None:
    d = M.diagonal()
    if np.any(d <= 0):
        raise AssertionError("step matrix lost positive diagonal")
    off = M - sparse.diags(d)
    if off.nnz and off.data.max() > 1e-12:
        raise AssertionError(f"step matrix has positive off-diagonal "
                             f"({off.data.max():.3e}); M-matrix property lost")


def step_oxygen(grid: Grid, bdata: BoundaryData, c: np.ndarray, n: np.ndarray,
                u: tuple[np.ndarray, np.ndarray], dt: float) -> np.ndarray:
    """Advance c by one implicit step; returns c_new >= 0."""
    _check_inputs(grid, c, n, u, dt)
    M, rc = assemble_step_matrix(grid, bdata, n, u, dt)
    _assert_m_matrix(M)
    c_new = spla.splu(M.tocsc()).solve(c + rc)
    # direct solves can round exact zeros to -1e-17; snap those off
    return np.maximum(c_new, 0.0)


def max_principle_bound(bdata: BoundaryData, c: np.ndarray) -> float:
    """The ceiling that every later step must respect."""
    return max(float(np.max(c)), bdata.gamma_max)
