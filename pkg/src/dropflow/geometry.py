"""Masked Cartesian grids and boundary bookkeeping.

Scalar unknowns (bacterial density n, oxygen c, pressure P) live at cell
centers; velocity components live on cell faces (staggered/MAC layout).  The
computational domain is the set of cells where ``mask`` is True; it may be a
full rectangle, an L-shape, or any connected subset of the bounding box.

Boundary faces are the faces separating an interior cell from the outside
(or from a masked-out cell).  Each one carries the data needed for the
oxygen-exchange condition  grad(c).nu = kappa (gamma - c):  an exchange rate
``kappa`` and a saturation value ``gamma``, both sampled at face midpoints.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import linalg as spla


@dataclass
class Grid:
    """Uniform staggered grid over a masked subset of an nx-by-ny box.

    Cell (i, j) covers [i*dx, (i+1)*dx] x [j*dy, (j+1)*dy]; index i runs
    along x.  Interior cells are enumerated 0..n_cells-1 in row-major (i, j)
    order; ``cell_id[i, j]`` maps back (-1 outside the mask).

    Staggered face arrays have shape (nx+1, ny) for x-faces and (nx, ny+1)
    for y-faces.  A face is *active* when both adjacent cells are interior;
    velocity degrees of freedom live on active faces only (no-slip walls
    carry exactly zero).
    """

    nx: int
    ny: int
    dx: float
    dy: float
    mask: np.ndarray
    dim: int

    # cell bookkeeping
    n_cells: int = field(default=0, repr=False)
    cell_id: np.ndarray = field(default=None, repr=False)
    cell_ix: np.ndarray = field(default=None, repr=False)
    cell_iy: np.ndarray = field(default=None, repr=False)
    xc: np.ndarray = field(default=None, repr=False)
    yc: np.ndarray = field(default=None, repr=False)
    # flat neighbor ids per cell, -1 where the neighbor is masked out
    nb_xm: np.ndarray = field(default=None, repr=False)
    nb_xp: np.ndarray = field(default=None, repr=False)
    nb_ym: np.ndarray = field(default=None, repr=False)
    nb_yp: np.ndarray = field(default=None, repr=False)
    # active-face masks for MAC arrays
    fx_active: np.ndarray = field(default=None, repr=False)
    fy_active: np.ndarray = field(default=None, repr=False)
    # boundary faces (struct-of-arrays)
    n_bf: int = field(default=0, repr=False)
    bf_cell: np.ndarray = field(default=None, repr=False)
    bf_nrm_x: np.ndarray = field(default=None, repr=False)
    bf_nrm_y: np.ndarray = field(default=None, repr=False)
    bf_area: np.ndarray = field(default=None, repr=False)
    bf_x: np.ndarray = field(default=None, repr=False)
    bf_y: np.ndarray = field(default=None, repr=False)
    # staggered index of each boundary face ((i, j) into fx or fy array)
    bf_si: np.ndarray = field(default=None, repr=False)
    bf_sj: np.ndarray = field(default=None, repr=False)
    bf_is_x: np.ndarray = field(default=None, repr=False)

    _segments: list = field(default=None, repr=False, compare=False)

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def volume(self) -> float:
        return self.n_cells * self.dx * self.dy

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.bf_area))

    def scatter(self, f: np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Cell array -> (nx, ny) array with `fill` on masked-out cells."""
        out = np.full((self.nx, self.ny), fill, dtype=float)
        out[self.cell_ix, self.cell_iy] = f
        return out

    def gather(self, f2: np.ndarray) -> np.ndarray:
        """(nx, ny) array -> cell array."""
        return np.ascontiguousarray(f2[self.cell_ix, self.cell_iy])

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_cells)

    def zeros_faces(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.zeros((self.nx + 1, self.ny)), np.zeros((self.nx, self.ny + 1)))


def _build_l_shape_mask(nx: int, ny: int) -> np.ndarray:
    mask = np.ones((nx, ny), dtype=bool)
    # drop the top-right quadrant (largest-index half in both directions)
    mask[nx - nx // 2:, ny - ny // 2:] = False
    return mask


def build_grid(domain: str = "rectangle", nx: int = 2, ny: int = 2,
               lx: float = 1.0, ly: float = 1.0,
               mask: np.ndarray | None = None) -> Grid:
    """Construct a Grid.

    domain: "rectangle", "l_shape", or "mask" (explicit boolean array,
    shape (nx, ny), True = interior).  ny == 1 gives a 1D grid (x-faces
    only, dy fixed to 1 so areas and volumes coincide with lengths).
    """
    nx = int(nx)
    ny = int(ny)
    if nx < 2:
        raise ValueError(f"nx must be >= 2, got {nx}")
    if ny < 1:
        raise ValueError(f"ny must be >= 1, got {ny}")
    dim = 1 if ny == 1 else 2
    if lx <= 0 or ly <= 0:
        raise ValueError("domain side lengths must be positive")

    if domain == "rectangle":
        m = np.ones((nx, ny), dtype=bool)
    elif domain == "l_shape":
        if dim == 1:
            raise ValueError("l_shape needs ny >= 2")
        m = _build_l_shape_mask(nx, ny)
    elif domain == "mask":
        if mask is None:
            raise ValueError("domain='mask' needs an explicit mask array")
        m = np.asarray(mask, dtype=bool)
        if m.shape != (nx, ny):
            raise ValueError(f"mask shape {m.shape} does not match (nx, ny)=({nx}, {ny})")
    else:
        raise ValueError(f"unknown domain {domain!r}")

    if not m.any():
        raise ValueError("mask has no interior cells")
    # 4-connectivity; more than one component means a disconnected domain
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    _, ncomp = ndimage.label(m, structure=structure)
    if ncomp != 1:
        raise ValueError(f"mask is disconnected ({ncomp} components)")

    dx = lx / nx
    dy = ly / ny if dim == 2 else 1.0

    g = Grid(nx=nx, ny=ny, dx=dx, dy=dy, mask=m, dim=dim)
    _index_grid(g)
    return g


def _index_grid(g: Grid) -> None:
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    m = g.mask

    ix, iy = np.nonzero(m)
    g.n_cells = ix.size
    g.cell_ix = ix.astype(np.int64)
    g.cell_iy = iy.astype(np.int64)
    cell_id = np.full((nx, ny), -1, dtype=np.int64)
    cell_id[ix, iy] = np.arange(g.n_cells)
    g.cell_id = cell_id
    g.xc = (ix + 0.5) * dx
    g.yc = (iy + 0.5) * dy

    # neighbor lookup through a padded id array
    pad = np.full((nx + 2, ny + 2), -1, dtype=np.int64)
    pad[1:-1, 1:-1] = cell_id
    g.nb_xm = pad[ix, iy + 1]
    g.nb_xp = pad[ix + 2, iy + 1]
    g.nb_ym = pad[ix + 1, iy]
    g.nb_yp = pad[ix + 1, iy + 2]

    mp = np.zeros((nx + 2, ny + 2), dtype=bool)
    mp[1:-1, 1:-1] = m
    g.fx_active = mp[:-1, 1:-1] & mp[1:, 1:-1]          # (nx+1, ny)
    g.fy_active = mp[1:-1, :-1] & mp[1:-1, 1:]          # (nx, ny+1)

    # boundary faces: exactly one adjacent interior cell
    bfs = []
    bx = mp[:-1, 1:-1] ^ mp[1:, 1:-1]
    for i, j in zip(*np.nonzero(bx)):
        if i > 0 and m[i - 1, j]:
            owner, nxn = cell_id[i - 1, j], 1.0
        else:
            owner, nxn = cell_id[i, j], -1.0
        bfs.append((owner, nxn, 0.0, dy, i * dx, (j + 0.5) * dy, i, j, True))
    if g.dim == 2:
        by = mp[1:-1, :-1] ^ mp[1:-1, 1:]
        for i, j in zip(*np.nonzero(by)):
            if j > 0 and m[i, j - 1]:
                owner, nyn = cell_id[i, j - 1], 1.0
            else:
                owner, nyn = cell_id[i, j], -1.0
            bfs.append((owner, 0.0, nyn, dx, (i + 0.5) * dx, j * dy, i, j, False))

    g.n_bf = len(bfs)
    g.bf_cell = np.array([b[0] for b in bfs], dtype=np.int64)
    g.bf_nrm_x = np.array([b[1] for b in bfs])
    g.bf_nrm_y = np.array([b[2] for b in bfs])
    g.bf_area = np.array([b[3] for b in bfs])
    g.bf_x = np.array([b[4] for b in bfs])
    g.bf_y = np.array([b[5] for b in bfs])
    g.bf_si = np.array([b[6] for b in bfs], dtype=np.int64)
    g.bf_sj = np.array([b[7] for b in bfs], dtype=np.int64)
    g.bf_is_x = np.array([b[8] for b in bfs], dtype=bool)


def grid_fingerprint(grid: Grid) -> str:
    """Stable hash of the discretization (used to key basis cache files)."""
    h = hashlib.sha256()
    h.update(np.array([grid.nx, grid.ny], dtype="<i8").tobytes())
    h.update(np.array([grid.dx, grid.dy], dtype="<f8").tobytes())
    h.update(np.packbits(grid.mask.astype(np.uint8)).tobytes())
    return h.hexdigest()


# =====================================================================
# quadrature
# =====================================================================

def _eval_on_cells(grid: Grid, f) -> np.ndarray:
    if callable(f):
        return np.asarray(f(grid.xc, grid.yc), dtype=float) * np.ones(grid.n_cells)
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n_cells,):
        raise ValueError(f"expected cell array of shape ({grid.n_cells},), got {f.shape}")
    return f


def _eval_on_faces(grid: Grid, gfn) -> np.ndarray:
    if callable(gfn):
        return np.asarray(gfn(grid.bf_x, grid.bf_y), dtype=float) * np.ones(grid.n_bf)
    gfn = np.asarray(gfn, dtype=float)
    if gfn.shape == ():
        return np.full(grid.n_bf, float(gfn))
    if gfn.shape != (grid.n_bf,):
        raise ValueError(f"expected boundary-face array of shape ({grid.n_bf},), got {gfn.shape}")
    return gfn


def integrate_volume(grid: Grid, f) -> float:
    """Midpoint-rule volume integral of a cell field (or callable f(x, y))."""
    vals = _eval_on_cells(grid, f)
    return float(np.sum(vals) * grid.cell_volume)


def integrate_boundary(grid: Grid, g) -> float:
    """Midpoint-rule boundary integral of a per-face field (or callable)."""
    vals = _eval_on_faces(grid, g)
    return float(np.sum(vals * grid.bf_area))


# =====================================================================
# boundary data
# =====================================================================

@dataclass
class BoundaryData:
    """Per-boundary-face exchange data and the in-domain extension of gamma.

    kappa >= 0 and gamma >= gamma_lower > 0 hold everywhere; gamma_ext is
    the 5-point harmonic extension of the face values of gamma into the
    cell centers, clamped below by gamma_lower so relative-entropy
    integrands stay finite.
    """

    kappa: np.ndarray
    gamma: np.ndarray
    gamma_ext: np.ndarray
    gamma_lower: float

    @property
    def gamma_max(self) -> float:
        return float(np.max(self.gamma))


def build_boundary_data(grid: Grid, kappa, gamma,
                        gamma_lower: float | None = None) -> BoundaryData:
    """Sample kappa/gamma on boundary-face midpoints and extend gamma inward.

    kappa and gamma may be scalars, per-face arrays, or callables of the
    face midpoint coordinates.
    """
    kap = _eval_on_faces(grid, kappa)
    gam = _eval_on_faces(grid, gamma)
    if np.any(kap < 0):
        raise ValueError("kappa must be nonnegative on every boundary face")
    if gamma_lower is None:
        gamma_lower = float(np.min(gam))
    if not gamma_lower > 0:
        raise ValueError(f"gamma_lower must be positive, got {gamma_lower}")
    if np.any(gam < gamma_lower):
        raise ValueError("gamma must be >= gamma_lower on every boundary face")

    gamma_ext = _harmonic_extension(grid, gam)
    gamma_ext = np.maximum(gamma_ext, gamma_lower)
    return BoundaryData(kappa=kap, gamma=gam, gamma_ext=gamma_ext,
                        gamma_lower=float(gamma_lower))


def _harmonic_extension(grid: Grid, face_vals: np.ndarray) -> np.ndarray:
    """Extend boundary-face values into the domain by a 5-point Laplace solve.

    Cells owning at least one boundary face act as Dirichlet nodes holding
    the area-weighted mean of their faces' values.
    """
    wsum = np.zeros(grid.n_cells)
    vsum = np.zeros(grid.n_cells)
    np.add.at(wsum, grid.bf_cell, grid.bf_area)
    np.add.at(vsum, grid.bf_cell, face_vals * grid.bf_area)
    dirichlet = wsum > 0
    out = np.zeros(grid.n_cells)
    out[dirichlet] = vsum[dirichlet] / wsum[dirichlet]
    free = np.nonzero(~dirichlet)[0]
    if free.size == 0:
        return out

    fid = np.full(grid.n_cells, -1, dtype=np.int64)
    fid[free] = np.arange(free.size)
    wx, wy = 1.0 / grid.dx ** 2, 1.0 / grid.dy ** 2
    rows, cols, vals = [], [], []
    rhs = np.zeros(free.size)
    diag = np.zeros(free.size)
    for nb, w in ((grid.nb_xm, wx), (grid.nb_xp, wx), (grid.nb_ym, wy), (grid.nb_yp, wy)):
        nbf = nb[free]
        # free cells sit strictly inside, so every neighbor exists
        diag += w
        inner = fid[nbf] >= 0
        rows.append(np.nonzero(inner)[0])
        cols.append(fid[nbf[inner]])
        vals.append(np.full(inner.sum(), -w))
        np.add.at(rhs, np.nonzero(~inner)[0], w * out[nbf[~inner]])
    rows.append(np.arange(free.size))
    cols.append(np.arange(free.size))
    vals.append(diag)
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(free.size, free.size))
    out[free] = spla.spsolve(A.tocsc(), rhs)
    return out


def boundary_segments(grid: Grid) -> list[np.ndarray]:
    """Group boundary faces into maximal flat runs (same normal, same line).

    Returns index arrays into the boundary-face arrays, ordered along each
    segment.  Corners terminate segments; tangential stencils never reach
    across them.
    """
    if grid._segments is not None:
        return grid._segments
    segs = []
    # line coordinate: si for x-faces (vertical lines), sj for y-faces
    line = np.where(grid.bf_is_x, grid.bf_si, grid.bf_sj)
    tang = np.where(grid.bf_is_x, grid.bf_sj, grid.bf_si)
    nrm = np.where(grid.bf_is_x, grid.bf_nrm_x, grid.bf_nrm_y)
    order = np.lexsort((tang, line, nrm, grid.bf_is_x))
    o = order
    brk = np.nonzero(
        (np.diff(grid.bf_is_x[o].astype(int)) != 0)
        | (np.diff(nrm[o]) != 0)
        | (np.diff(line[o]) != 0)
        | (np.diff(tang[o]) != 1)
    )[0] + 1
    for chunk in np.split(o, brk):
        segs.append(chunk)
    grid._segments = segs
    return segs
