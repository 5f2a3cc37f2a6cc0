"""Discrete operators on masked staggered grids.

Cell fields are flat arrays over interior cells; face fields are pairs of
full staggered arrays (see geometry.Grid) that are zero on non-active faces.
All operators are plain functions of (grid, data); anything stateful
(factorizations) lives with the steppers that need it.

Boundary closures:
  * oxygen-type fields use the ghost-free exchange closure
        flux = kappa (gamma - c_cell) / (1 + kappa h/2),
    the one-sided flux consistent with  grad(c).nu = kappa (gamma - c)
    when the face value is eliminated by a half-cell Taylor expansion;
  * pure diagnostics (norms of gradients of arbitrary fields) use one-sided
    differences built from the one or two nearest interior cells.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .geometry import BoundaryData, Grid, boundary_segments, integrate_boundary

#: shared floor for diagnostic logs/divisions of nearly-vanishing fields
DIAGNOSTIC_FLOOR = 1e-12


# =====================================================================
# cell-centered derivatives (with one-sided fallbacks near walls)
# =====================================================================

def _neighbor_chain(grid: Grid, nb: np.ndarray, depth: int) -> list[np.ndarray]:
    """nb, nb∘nb, ... up to `depth` links; -1 marks a missing link."""
    chain = [nb]
    for _ in range(depth - 1):
        prev = chain[-1]
        nxt = np.where(prev >= 0, nb[np.clip(prev, 0, None)], -1)
        chain.append(nxt)
    return chain


def first_derivative_cell(grid: Grid, g: np.ndarray, axis: int) -> np.ndarray:
    """d(g)/dx or d(g)/dy at cell centers.

    Centered where both neighbors exist, second-order one-sided with two
    inward neighbors otherwise, first-order with one, zero with none.
    """
    if axis == 0:
        nm, np_, h = grid.nb_xm, grid.nb_xp, grid.dx
    else:
        nm, np_, h = grid.nb_ym, grid.nb_yp, grid.dy
    gm = np.where(nm >= 0, g[np.clip(nm, 0, None)], 0.0)
    gp = np.where(np_ >= 0, g[np.clip(np_, 0, None)], 0.0)
    out = np.zeros_like(g)

    both = (nm >= 0) & (np_ >= 0)
    out[both] = (gp[both] - gm[both]) / (2 * h)

    for sign, nb in ((1.0, np_), (-1.0, nm)):
        only = (nb >= 0) & ~both
        if not only.any():
            continue
        c1, c2 = _neighbor_chain(grid, nb, 2)
        have2 = only & (c2 >= 0)
        have1 = only & ~(c2 >= 0)
        i = np.nonzero(have2)[0]
        out[i] = sign * (-3.0 * g[i] + 4.0 * g[c1[i]] - g[c2[i]]) / (2 * h)
        i = np.nonzero(have1)[0]
        out[i] = sign * (g[c1[i]] - g[i]) / h
    return out


def second_derivative_cell(grid: Grid, g: np.ndarray, axis: int) -> np.ndarray:
    """d2(g)/dx2 or d2(g)/dy2 at cell centers.

    Centered 3-point where possible; at wall cells a 4-point one-sided
    stencil keeps second order, degrading to 3-point (first order) or zero
    on very narrow runs.
    """
    if axis == 0:
        nm, np_, h = grid.nb_xm, grid.nb_xp, grid.dx
    else:
        nm, np_, h = grid.nb_ym, grid.nb_yp, grid.dy
    h2 = h * h
    gm = np.where(nm >= 0, g[np.clip(nm, 0, None)], 0.0)
    gp = np.where(np_ >= 0, g[np.clip(np_, 0, None)], 0.0)
    out = np.zeros_like(g)

    both = (nm >= 0) & (np_ >= 0)
    out[both] = (gp[both] - 2.0 * g[both] + gm[both]) / h2

    for nb in (np_, nm):
        only = (nb >= 0) & ~both
        if not only.any():
            continue
        c1, c2, c3 = _neighbor_chain(grid, nb, 3)
        have3 = only & (c3 >= 0)
        have2 = only & (c2 >= 0) & ~have3
        i = np.nonzero(have3)[0]
        out[i] = (2.0 * g[i] - 5.0 * g[c1[i]] + 4.0 * g[c2[i]] - g[c3[i]]) / h2
        i = np.nonzero(have2)[0]
        out[i] = (g[i] - 2.0 * g[c1[i]] + g[c2[i]]) / h2
    return out


# =====================================================================
# face gradients
# =====================================================================

def gradient(grid: Grid, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered two-point gradient on active faces (zero elsewhere)."""
    f2 = np.zeros((grid.nx, grid.ny))
    f2[grid.cell_ix, grid.cell_iy] = f
    gx, gy = grid.zeros_faces()
    ax = grid.fx_active[1:-1, :]
    gx[1:-1, :][ax] = (f2[1:, :][ax] - f2[:-1, :][ax]) / grid.dx
    if grid.dim == 2:
        ay = grid.fy_active[:, 1:-1]
        gy[:, 1:-1][ay] = (f2[:, 1:][ay] - f2[:, :-1][ay]) / grid.dy
    return gx, gy


def boundary_gradient_onesided(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Diagnostic normal derivative on boundary faces.

    Linear extrapolation from the two nearest interior cells (exact for
    affine fields); falls back to zero where only one cell is available.
    Returned values are d(f)/d(outward normal).
    """
    inward = np.where(grid.bf_is_x,
                      np.where(grid.bf_nrm_x > 0, grid.nb_xm[grid.bf_cell], grid.nb_xp[grid.bf_cell]),
                      np.where(grid.bf_nrm_y > 0, grid.nb_ym[grid.bf_cell], grid.nb_yp[grid.bf_cell]))
    h = np.where(grid.bf_is_x, grid.dx, grid.dy)
    f0 = f[grid.bf_cell]
    f1 = np.where(inward >= 0, f[np.clip(inward, 0, None)], f0)
    return (f0 - f1) / h


def robin_flux(grid: Grid, bdata: BoundaryData, c: np.ndarray) -> np.ndarray:
    """Outward normal derivative of c on boundary faces per the exchange law.

    Half-cell closure: flux = kappa (gamma - c_cell) / (1 + kappa h/2).
    """
    h = np.where(grid.bf_is_x, grid.dx, grid.dy)
    return bdata.kappa * (bdata.gamma - c[grid.bf_cell]) / (1.0 + bdata.kappa * h / 2.0)


def face_gradient_with_closure(grid: Grid, f: np.ndarray,
                               bflux: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centered interior gradient plus prescribed normal values on boundary faces.

    bflux holds d(f)/d(outward normal) per boundary face; the returned
    staggered arrays carry the corresponding signed x/y components.
    """
    gx, gy = gradient(grid, f)
    isx = grid.bf_is_x
    gx[grid.bf_si[isx], grid.bf_sj[isx]] = bflux[isx] * grid.bf_nrm_x[isx]
    if grid.dim == 2:
        isy = ~isx
        gy[grid.bf_si[isy], grid.bf_sj[isy]] = bflux[isy] * grid.bf_nrm_y[isy]
    return gx, gy


def divergence(grid: Grid, v: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Exact MAC divergence of a face field, per cell."""
    vx, vy = v
    ix, iy = grid.cell_ix, grid.cell_iy
    out = (vx[ix + 1, iy] - vx[ix, iy]) / grid.dx
    if grid.dim == 2:
        out = out + (vy[ix, iy + 1] - vy[ix, iy]) / grid.dy
    return out


# =====================================================================
# Laplacians
# =====================================================================

def assemble_robin_laplacian(grid: Grid, bdata: BoundaryData) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Five-point Laplacian with the exchange closure on boundary faces.

    Returns (L, s) with  (L c + s)_i ~ (Laplacian c)(x_i):  boundary faces
    contribute  kappa~ = kappa / (1 + kappa h/2)  to the diagonal and
    kappa~ gamma  to the affine part s.  kappa == 0 reduces to the no-flux
    (Neumann) operator with zero row sums and s == 0.
    """
    n = grid.n_cells
    wx, wy = 1.0 / grid.dx ** 2, 1.0 / grid.dy ** 2
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for nb, w in ((grid.nb_xm, wx), (grid.nb_xp, wx), (grid.nb_ym, wy), (grid.nb_yp, wy)):
        ok = nb >= 0
        i = np.nonzero(ok)[0]
        rows.append(i)
        cols.append(nb[i])
        vals.append(np.full(i.size, w))
        diag[i] -= w

    h = np.where(grid.bf_is_x, grid.dx, grid.dy)
    ktil = bdata.kappa / (1.0 + bdata.kappa * h / 2.0)
    # area/volume = 1/h for the face-normal direction
    np.add.at(diag, grid.bf_cell, -ktil / h)
    s = np.zeros(n)
    np.add.at(s, grid.bf_cell, ktil * bdata.gamma / h)

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    L = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n))
    return L, s


def assemble_neumann_laplacian(grid: Grid) -> sparse.csr_matrix:
    """No-flux five-point Laplacian (zero row sums, symmetric)."""
    zero = BoundaryData(kappa=np.zeros(grid.n_bf), gamma=np.ones(grid.n_bf),
                        gamma_ext=np.ones(grid.n_cells), gamma_lower=1.0)
    L, _ = assemble_robin_laplacian(grid, zero)
    return L


# =====================================================================
# upwind advection
# =====================================================================

def _check_face_field(grid: Grid, v: tuple[np.ndarray, np.ndarray], tol: float) -> None:
    vx, vy = v
    if vx.shape != (grid.nx + 1, grid.ny) or vy.shape != (grid.nx, grid.ny + 1):
        raise ValueError("face field has wrong staggered shapes")
    scale = max(np.max(np.abs(vx)), np.max(np.abs(vy)), 1.0)
    leak = max(np.max(np.abs(vx[~grid.fx_active]), initial=0.0),
               np.max(np.abs(vy[~grid.fy_active]), initial=0.0))
    if leak > tol * scale:
        raise ValueError(f"nonzero velocity on non-active faces (max {leak:.3e})")


def upwind_face_values(grid: Grid, f: np.ndarray,
                       v: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Donor-cell values of f on active faces, upwinded along v."""
    f2 = np.zeros((grid.nx, grid.ny))
    f2[grid.cell_ix, grid.cell_iy] = f
    vx, vy = v
    fx = np.zeros_like(vx)
    fx[1:-1, :] = np.where(vx[1:-1, :] >= 0, f2[:-1, :], f2[1:, :])
    fx[~grid.fx_active] = 0.0
    fy = np.zeros_like(vy)
    if grid.dim == 2:
        fy[:, 1:-1] = np.where(vy[:, 1:-1] >= 0, f2[:, :-1], f2[:, 1:])
        fy[~grid.fy_active] = 0.0
    return fx, fy


def advect_upwind(grid: Grid, f: np.ndarray, v: tuple[np.ndarray, np.ndarray],
                  div_tol: float = 1e-8) -> np.ndarray:
    """Tendency -div(v f) with donor-cell face values.

    v must be a discretely divergence-free face field vanishing on
    non-active faces (so the advected mass is conserved exactly and
    constants are transported to constants).
    """
    _check_face_field(grid, v, 1e-12)
    dv = divergence(grid, v)
    scale = max(np.max(np.abs(v[0])), np.max(np.abs(v[1])), 1.0)
    if np.max(np.abs(dv)) > div_tol * scale / min(grid.dx, grid.dy):
        raise ValueError(f"advecting velocity is not divergence-free "
                         f"(max |div v| = {np.max(np.abs(dv)):.3e})")
    fx, fy = upwind_face_values(grid, f, v)
    return -divergence(grid, (v[0] * fx, v[1] * fy))


def assemble_upwind_matrix(grid: Grid, v: tuple[np.ndarray, np.ndarray]) -> sparse.csr_matrix:
    """Matrix A with (A c)_i = div(v c)_i, donor-cell upwind.

    Off-diagonals are <= 0 and rows sum to div(v) per cell, so I + dt A is
    an M-matrix for divergence-free v.
    """
    _check_face_field(grid, v, 1e-12)
    vx, vy = v
    n = grid.n_cells
    rows, cols, vals = [], [], []
    diag = np.zeros(n)

    def add_face(cells_lo, cells_hi, vel, h):
        # flux = vel * (f_lo if vel >= 0 else f_hi), leaves lo / enters hi
        pos = np.maximum(vel, 0.0)
        neg = np.minimum(vel, 0.0)
        np.add.at(diag, cells_lo, pos / h)
        np.add.at(diag, cells_hi, -neg / h)
        rows.append(cells_hi); cols.append(cells_lo); vals.append(-pos / h)
        rows.append(cells_lo); cols.append(cells_hi); vals.append(neg / h)

    ii, jj = np.nonzero(grid.fx_active)
    lo = grid.cell_id[ii - 1, jj]
    hi = grid.cell_id[ii, jj]
    add_face(lo, hi, vx[ii, jj], grid.dx)
    if grid.dim == 2:
        ii, jj = np.nonzero(grid.fy_active)
        lo = grid.cell_id[ii, jj - 1]
        hi = grid.cell_id[ii, jj]
        add_face(lo, hi, vy[ii, jj], grid.dy)

    rows.append(np.arange(n)); cols.append(np.arange(n)); vals.append(diag)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))


# =====================================================================
# log-Hessian and boundary tangential derivative
# =====================================================================

def hessian_log(grid: Grid, c: np.ndarray,
                floor: float = DIAGNOSTIC_FLOOR) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cellwise Hessian of log(max(c, floor)): (h_xx, h_xy, h_yy).

    Second differences along each axis; the mixed term is the symmetrized
    cross-difference of the first-derivative fields.  One-sided stencils
    near walls keep second-order accuracy on smooth fields.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    g = np.log(np.maximum(c, floor))
    hxx = second_derivative_cell(grid, g, axis=0)
    if grid.dim == 1:
        z = np.zeros_like(hxx)
        return hxx, z, z
    hyy = second_derivative_cell(grid, g, axis=1)
    gx = first_derivative_cell(grid, g, axis=0)
    gy = first_derivative_cell(grid, g, axis=1)
    hxy = 0.5 * (first_derivative_cell(grid, gx, axis=1)
                 + first_derivative_cell(grid, gy, axis=0))
    return hxx, hxy, hyy


def tangential_gradient_boundary(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Derivative of the boundary trace of f along each flat wall segment.

    Uses the adjacent-cell trace values; centered inside a segment,
    one-sided at its two end faces, zero on single-face segments.  Stencils
    never cross corners.
    """
    out = np.zeros(grid.n_bf)
    for seg in boundary_segments(grid):
        if seg.size < 2:
            continue
        h = grid.dy if grid.bf_is_x[seg[0]] else grid.dx
        t = f[grid.bf_cell[seg]]
        d = np.empty(seg.size)
        d[1:-1] = (t[2:] - t[:-2]) / (2 * h)
        d[0] = (t[1] - t[0]) / h
        d[-1] = (t[-1] - t[-2]) / h
        out[seg] = d
    return out


# =====================================================================
# norms and quadrature helpers
# =====================================================================

def lp_norm(grid: Grid, f: np.ndarray, p: float) -> float:
    """Discrete L^p norm of a cell field (p = inf gives the max norm)."""
    if p == np.inf:
        return float(np.max(np.abs(f)))
    if p <= 0:
        raise ValueError(f"p must be positive, got {p}")
    return float((np.sum(np.abs(f) ** p) * grid.cell_volume) ** (1.0 / p))


def face_quadrature(grid: Grid, gx: np.ndarray, gy: np.ndarray, power: float = 2.0) -> float:
    """integral over the domain of |g|^power for a staggered component pair.

    Active faces carry full cell volume; boundary faces half (the wall
    strip), so affine fields integrate exactly.
    """
    w = grid.cell_volume
    total = np.sum(np.abs(gx[grid.fx_active]) ** power) * w
    if grid.dim == 2:
        total += np.sum(np.abs(gy[grid.fy_active]) ** power) * w
    isx = grid.bf_is_x
    bvals = np.concatenate([gx[grid.bf_si[isx], grid.bf_sj[isx]],
                            gy[grid.bf_si[~isx], grid.bf_sj[~isx]]]) if grid.dim == 2 \
        else gx[grid.bf_si[isx], grid.bf_sj[isx]]
    total += np.sum(np.abs(bvals) ** power) * w / 2.0
    return float(total)


def advective_cfl_dt(grid: Grid, v: tuple[np.ndarray, np.ndarray]) -> float:
    """Largest dt with dt <= 0.5 min(dx/|vx|max, dy/|vy|max); inf for v = 0."""
    out = np.inf
    mx = float(np.max(np.abs(v[0])))
    if mx > 0:
        out = min(out, 0.5 * grid.dx / mx)
    my = float(np.max(np.abs(v[1])))
    if my > 0:
        out = min(out, 0.5 * grid.dy / my)
    return out


def robin_consistency_gap(grid: Grid, bdata: BoundaryData, c: np.ndarray) -> float:
    """| volume integral of (L c + s) - boundary integral of the closure flux |.

    Zero in exact arithmetic by construction of the flux-form assembly;
    exposed as a cheap self-check.
    """
    L, s = assemble_robin_laplacian(grid, bdata)
    vol = float(np.sum(L @ c + s) * grid.cell_volume)
    bnd = integrate_boundary(grid, robin_flux(grid, bdata, c))
    return abs(vol - bnd)
