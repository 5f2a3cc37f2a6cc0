"""Bacterial density step.

One splitting step of

    dn/dt + u.grad(n) = div( grad(n) - n grad(c) ) + eps n (1 - n^2)

with the total-flux wall condition (grad(n) - n grad(c)).nu = 0, realized by
zeroing both the diffusive and the drift flux on boundary faces.  Stages:

    1. explicit donor-cell transport by u and by the drift grad(c)
       (conservative; boundary faces carry no flux at all),
    2. explicit growth  + dt eps n,
    3. backward-Euler diffusion with the no-flux Laplacian,
    4. Patankar-style decay  n <- n / (1 + dt eps n^2),

each of which maps nonnegative fields to nonnegative fields and, for
eps = 0, conserves the discrete integral of n to solver precision.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import Grid
from . import fields
from .oxygen import CflViolation


def chemotactic_flux(grid: Grid, n: np.ndarray, c: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Face flux -n_up * (grad c), zero on boundary faces.

    n_up is the donor-cell value with respect to the drift grad(c) (cells
    shed mass toward higher oxygen).  The tendency contribution of this
    flux is its divergence, matching -div(n grad c).
    """
    if np.any(n < 0):
        raise ValueError("n must be nonnegative")
    gx, gy = fields.gradient(grid, c)
    nx_up, ny_up = fields.upwind_face_values(grid, n, (gx, gy))
    return -nx_up * gx, -ny_up * gy


def combined_drift_cfl_dt(grid: Grid, u: tuple[np.ndarray, np.ndarray],
                          c: np.ndarray) -> float:
    """CFL limit for the explicit transport stage, from |u| + |grad c|."""
    gx, gy = fields.gradient(grid, c)
    return fields.advective_cfl_dt(grid, (np.abs(u[0]) + np.abs(gx),
                                          np.abs(u[1]) + np.abs(gy)))


class DensityStepper:
    """Caches the no-flux diffusion factorization (grid-fixed) across steps."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.L = fields.assemble_neumann_laplacian(grid)
        self._lu = {}

    def _diffusion_solve(self, dt: float):
        lu = self._lu.get(dt)
        if lu is None:
            n = self.grid.n_cells
            lu = spla.splu((sparse.identity(n, format="csr") - dt * self.L).tocsc())
            if len(self._lu) > 8:
                self._lu.clear()
            self._lu[dt] = lu
        return lu

    def step(self, n: np.ndarray, c: np.ndarray, u: tuple[np.ndarray, np.ndarray],
             dt: float, eps: float) -> np.ndarray:
        grid = self.grid
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if np.any(n < 0):
            raise ValueError("n must be nonnegative")
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        dt_max = combined_drift_cfl_dt(grid, u, c)
        if dt > dt_max:
            raise CflViolation(f"dt = {dt:.3e} exceeds drift CFL limit {dt_max:.3e}")

        # explicit transport: advection by u plus chemotactic drift
        gx, gy = fields.gradient(grid, c)
        nux, nuy = fields.upwind_face_values(grid, n, u)
        ngx, ngy = fields.upwind_face_values(grid, n, (gx, gy))
        flux_x = u[0] * nux + gx * ngx
        flux_y = u[1] * nuy + gy * ngy
        n1 = n - dt * fields.divergence(grid, (flux_x, flux_y))

        if eps > 0:
            n1 = n1 + dt * eps * n1

        n2 = self._diffusion_solve(dt).solve(n1)

        if eps > 0:
            n2 = n2 / (1.0 + dt * eps * n2 * n2)
        # keep exact zeros exact against direct-solver rounding
        return np.maximum(n2, 0.0)


def step_density(grid: Grid, n: np.ndarray, c: np.ndarray,
                 u: tuple[np.ndarray, np.ndarray], dt: float, eps: float,
                 stepper: DensityStepper | None = None) -> np.ndarray:
    """One density step (convenience wrapper; see DensityStepper)."""
    if stepper is None:
        stepper = DensityStepper(grid)
    return stepper.step(n, c, u, dt, eps)
