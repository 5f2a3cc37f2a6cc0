"""Incompressible flow on the staggered grid.

Velocity unknowns live on active faces (both adjacent cells interior); walls
are no-slip, enforced by zero face values plus ghost reflection of the
tangential component in the viscous stencil.  Two ways to advance:

  * projection: explicit donor-cell convection, backward-Euler viscosity,
    body force, then an exact discrete Helmholtz projection (div u = 0 to
    round-off);
  * galerkin(m): the same right-hand side projected on the first m
    eigenmodes of the discrete Stokes operator, with modal damping
    1/(1 + mu dt lambda_k); with m = full this is the spectral twin of the
    projection step.

The Stokes modes diagonalize -P Lap on the divergence-free subspace.  For
desk-size grids they come from a dense eigensolve on an orthonormal basis
of ker(div); large grids fall back to shift-invert Lanczos on the inverse
(a factorized saddle-point solve).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as dla
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import Grid, grid_fingerprint
from . import fields
from .oxygen import CflViolation

_DENSE_EIG_DOF_LIMIT = 9000


# =====================================================================
# workspace: face enumeration, operators, factorizations
# =====================================================================

class FluidWorkspace:
    """Per-grid matrices and factorizations shared across steps."""

    def __init__(self, grid: Grid):
        self.grid = grid
        fxi, fxj = np.nonzero(grid.fx_active)
        fyi, fyj = np.nonzero(grid.fy_active)
        self.fxi, self.fxj, self.fyi, self.fyj = fxi, fxj, fyi, fyj
        self.nfx = fxi.size
        self.n_dof = fxi.size + fyi.size
        self.xid = np.full((grid.nx + 1, grid.ny), -1, dtype=np.int64)
        self.xid[fxi, fxj] = np.arange(self.nfx)
        self.yid = np.full((grid.nx, grid.ny + 1), -1, dtype=np.int64)
        self.yid[fyi, fyj] = np.arange(fyi.size) + self.nfx

        self.D = self._divergence_matrix()
        self.L = self._viscous_laplacian()
        self._pressure_lu = None
        self._visc_lu = {}

    # ---------------------------------------------------------- packing

    def pack(self, u: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        return np.concatenate([u[0][self.fxi, self.fxj], u[1][self.fyi, self.fyj]])

    def unpack(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        ux = np.zeros((g.nx + 1, g.ny))
        uy = np.zeros((g.nx, g.ny + 1))
        ux[self.fxi, self.fxj] = vec[:self.nfx]
        uy[self.fyi, self.fyj] = vec[self.nfx:]
        return ux, uy

    # -------------------------------------------------------- operators

    def _divergence_matrix(self) -> sparse.csr_matrix:
        g = self.grid
        rows, cols, vals = [], [], []
        ix, iy = g.cell_ix, g.cell_iy
        cells = np.arange(g.n_cells)
        for sid, sgn, h in ((self.xid[ix + 1, iy], 1.0, g.dx),
                            (self.xid[ix, iy], -1.0, g.dx),
                            (self.yid[ix, iy + 1], 1.0, g.dy),
                            (self.yid[ix, iy], -1.0, g.dy)):
            ok = sid >= 0
            rows.append(cells[ok])
            cols.append(sid[ok])
            vals.append(np.full(ok.sum(), sgn / h))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(g.n_cells, self.n_dof))

    def _viscous_laplacian(self) -> sparse.csr_matrix:
        """Vector Laplacian with no-slip walls, symmetric on the dof space.

        Missing parallel neighbors sit on the wall (value zero, plain drop);
        missing perpendicular neighbors mean a wall half a cell away, where
        ghost reflection u_ghost = -u adds one extra unit to the diagonal.
        """
        g = self.grid
        mp = np.zeros((g.nx + 2, g.ny + 2), dtype=bool)
        mp[1:-1, 1:-1] = g.mask
        wx, wy = 1.0 / g.dx ** 2, 1.0 / g.dy ** 2
        rows, cols, vals = [], [], []
        diag = np.full(self.n_dof, -2.0 * wx - 2.0 * wy)
        if g.dim == 1:
            diag = np.full(self.n_dof, -2.0 * wx)

        def link(my_id, nb_id, w):
            ok = nb_id >= 0
            rows.append(my_id[ok]); cols.append(nb_id[ok])
            vals.append(np.full(ok.sum(), w))

        # x-velocity faces
        i, j = self.fxi, self.fxj
        me = self.xid[i, j]
        link(me, _safe(self.xid, i - 1, j), wx)
        link(me, _safe(self.xid, i + 1, j), wx)
        if g.dim == 2:
            link(me, _safe(self.xid, i, j - 1), wy)
            link(me, _safe(self.xid, i, j + 1), wy)
            # ghost reflection where both cells beside the neighbor face are out
            for dj in (-1, 1):
                wall = ~mp[i, j + 1 + dj] & ~mp[i + 1, j + 1 + dj]
                np.subtract.at(diag, me[wall], wy)
        # y-velocity faces
        i, j = self.fyi, self.fyj
        me = self.yid[i, j]
        if g.dim == 2:
            link(me, _safe(self.yid, i, j - 1), wy)
            link(me, _safe(self.yid, i, j + 1), wy)
            link(me, _safe(self.yid, i - 1, j), wx)
            link(me, _safe(self.yid, i + 1, j), wx)
            for di in (-1, 1):
                wall = ~mp[i + 1 + di, j] & ~mp[i + 1 + di, j + 1]
                np.subtract.at(diag, me[wall], wx)

        rows.append(np.arange(self.n_dof))
        cols.append(np.arange(self.n_dof))
        vals.append(diag)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_dof, self.n_dof))

    # ----------------------------------------------------- factorizations

    def pressure_lu(self):
        """Factorization of the bordered Neumann Poisson system.

        [[L, w], [w^T, 0]] with w the cell-volume vector: the border pins
        the volume-weighted mean to zero and absorbs any (round-off level)
        incompatibility of the right-hand side.
        """
        if self._pressure_lu is None:
            g = self.grid
            LN = fields.assemble_neumann_laplacian(g)
            w = sparse.csr_matrix(np.full((g.n_cells, 1), g.cell_volume))
            B = sparse.bmat([[LN, w], [w.T, None]], format="csc")
            self._pressure_lu = spla.splu(B)
        return self._pressure_lu

    def viscous_lu(self, mu: float, dt: float):
        key = (float(mu), float(dt))
        lu = self._visc_lu.get(key)
        if lu is None:
            eye = sparse.identity(self.n_dof, format="csr")
            lu = spla.splu((eye - mu * dt * self.L).tocsc())
            if len(self._visc_lu) > 4:
                self._visc_lu.clear()
            self._visc_lu[key] = lu
        return lu

    def grad_pressure(self, p: np.ndarray) -> np.ndarray:
        # G = -D^T on the dof space (exact discrete adjointness)
        return -(self.D.T @ p)

    def leray(self, vec: np.ndarray) -> np.ndarray:
        """Exact Helmholtz projection of a dof vector onto ker(div)."""
        rhs = np.concatenate([self.D @ vec, [0.0]])
        q = self.pressure_lu().solve(rhs)[:-1]
        return vec - self.grad_pressure(q)


def _safe(idmap: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    ok = (i >= 0) & (i < idmap.shape[0]) & (j >= 0) & (j < idmap.shape[1])
    out = np.full(i.shape, -1, dtype=np.int64)
    out[ok] = idmap[i[ok], j[ok]]
    return out


# =====================================================================
# pressure Poisson
# =====================================================================

def pressure_poisson(grid: Grid, rhs: np.ndarray,
                     ws: FluidWorkspace | None = None) -> np.ndarray:
    """Solve Lap(p) = rhs with no-flux walls; returns the zero-mean solution.

    rhs must integrate to zero (compatibility); a bordered direct solve
    enforces the gauge exactly.
    """
    if ws is None:
        ws = FluidWorkspace(grid)
    total = float(np.sum(rhs)) * grid.cell_volume
    scale = float(np.max(np.abs(rhs)))
    if abs(total) > 1e-9 * max(1.0, scale) * grid.volume:
        raise ValueError(f"incompatible right-hand side (integral {total:.3e})")
    sol = ws.pressure_lu().solve(np.concatenate([rhs, [0.0]]))
    return sol[:-1]


# =====================================================================
# convection and forcing
# =====================================================================

def convection(grid: Grid, u: tuple[np.ndarray, np.ndarray]
               ) -> tuple[np.ndarray, np.ndarray]:
    """Tendency -div(u (x) u) with donor-cell face interpolation."""
    ux, uy = u
    nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
    cx = np.zeros_like(ux)
    cy = np.zeros_like(uy)

    # x-momentum: d(ux ux)/dx at cell centers
    ubar = 0.5 * (ux[:-1, :] + ux[1:, :])
    fup = np.where(ubar > 0, ux[:-1, :], ux[1:, :])
    fxx = ubar * fup
    cx[1:-1, :] -= (fxx[1:, :] - fxx[:-1, :]) / dx

    if grid.dim == 2:
        # x-momentum: d(uy ux)/dy at nodes
        uyp = np.zeros((nx + 2, ny + 1))
        uyp[1:-1, :] = uy
        vbar = 0.5 * (uyp[:-1, :] + uyp[1:, :])          # (nx+1, ny+1)
        uxp = np.zeros((nx + 1, ny + 2))
        uxp[:, 1:-1] = ux
        fup = np.where(vbar > 0, uxp[:, :-1], uxp[:, 1:])
        fxy = vbar * fup
        cx -= (fxy[:, 1:] - fxy[:, :-1]) / dy

        # y-momentum: d(uy uy)/dy at cell centers
        vbar = 0.5 * (uy[:, :-1] + uy[:, 1:])
        fup = np.where(vbar > 0, uy[:, :-1], uy[:, 1:])
        fyy = vbar * fup
        cy[:, 1:-1] -= (fyy[:, 1:] - fyy[:, :-1]) / dy

        # y-momentum: d(ux uy)/dx at nodes
        uxp = np.zeros((nx + 1, ny + 2))
        uxp[:, 1:-1] = ux
        ubar = 0.5 * (uxp[:, :-1] + uxp[:, 1:])          # (nx+1, ny+1)
        uyp = np.zeros((nx + 2, ny + 1))
        uyp[1:-1, :] = uy
        fup = np.where(ubar > 0, uyp[:-1, :], uyp[1:, :])
        fyx = ubar * fup
        cy -= (fyx[1:, :] - fyx[:-1, :]) / dx

    cx[~grid.fx_active] = 0.0
    cy[~grid.fy_active] = 0.0
    return cx, cy


def body_force(grid: Grid, n: np.ndarray,
               gphi: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Buoyancy-type force -n grad(phi) on faces (n averaged to faces)."""
    n2 = grid.scatter(n, fill=0.0)
    fx, fy = grid.zeros_faces()
    ax = grid.fx_active[1:-1, :]
    fx[1:-1, :][ax] = -0.5 * (n2[:-1, :][ax] + n2[1:, :][ax]) * gphi[0][1:-1, :][ax]
    if grid.dim == 2:
        ay = grid.fy_active[:, 1:-1]
        fy[:, 1:-1][ay] = -0.5 * (n2[:, :-1][ay] + n2[:, 1:][ay]) * gphi[1][:, 1:-1][ay]
    return fx, fy


# =====================================================================
# Stokes eigenbasis
# =====================================================================

@dataclass
class StokesBasis:
    """First m eigenmodes of the discrete Stokes operator.

    modes[k] is a dof vector, orthonormal in the volume-weighted inner
    product; evals are the matching eigenvalues, ascending and positive.
    """

    evals: np.ndarray          # (m,)
    modes: np.ndarray          # (m, n_dof)
    grid_hash: str
    n_dof: int

    @property
    def m(self) -> int:
        return self.evals.size


def divfree_dimension(ws: FluidWorkspace) -> int:
    """dim ker(div) = n_dof - (n_cells - 1) on a connected mask."""
    return ws.n_dof - (ws.grid.n_cells - 1)


def build_stokes_basis(grid: Grid, m_max: int,
                       ws: FluidWorkspace | None = None) -> StokesBasis:
    if ws is None:
        ws = FluidWorkspace(grid)
    full = divfree_dimension(ws)
    if not 1 <= m_max <= full:
        raise ValueError(f"m_max must be in [1, {full}] "
                         f"(divergence-free dimension), got {m_max}")
    if ws.n_dof <= _DENSE_EIG_DOF_LIMIT:
        evals, modes = _stokes_dense(ws, m_max)
    else:
        evals, modes = _stokes_lanczos(ws, m_max)
    # volume-weighted orthonormality
    modes = modes / np.sqrt(ws.grid.cell_volume)
    return StokesBasis(evals=evals, modes=modes,
                       grid_hash=grid_fingerprint(grid), n_dof=ws.n_dof)


def _stokes_dense(ws: FluidWorkspace, m: int) -> tuple[np.ndarray, np.ndarray]:
    Q = dla.null_space(ws.D.toarray())
    B = Q.T @ (-ws.L @ Q)
    B = 0.5 * (B + B.T)
    evals, Y = dla.eigh(B)
    return evals[:m].copy(), (Q @ Y[:, :m]).T.copy()


def _stokes_lanczos(ws: FluidWorkspace, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Largest eigenpairs of the Stokes resolvent via a factorized KKT solve."""
    g = ws.grid
    n, nd = g.n_cells, ws.n_dof
    w = sparse.csr_matrix(np.full((n, 1), g.cell_volume))
    K = sparse.bmat([[-ws.L, -ws.D.T, None],
                     [ws.D, None, w],
                     [None, w.T, None]], format="csc")
    lu = spla.splu(K)

    def resolvent(f):
        rhs = np.concatenate([f, np.zeros(n + 1)])
        return lu.solve(rhs)[:nd]

    op = spla.LinearOperator((nd, nd), matvec=resolvent, dtype=float)
    theta, V = spla.eigsh(op, k=m, which="LM", tol=1e-12)
    order = np.argsort(-theta)
    theta, V = theta[order], V[:, order]
    evals = 1.0 / theta
    # eigsh of a nonsymmetric-in-roundoff operator: polish with one projection
    modes = np.stack([ws.leray(V[:, k]) for k in range(m)])
    modes /= np.linalg.norm(modes, axis=1, keepdims=True)
    return evals, modes


def validate_basis(grid: Grid, basis: StokesBasis,
                   ws: FluidWorkspace | None = None) -> dict:
    """Max deviations from the basis contract (orthonormality, div, residual)."""
    if ws is None:
        ws = FluidWorkspace(grid)
    vol = grid.cell_volume
    gram = (basis.modes @ basis.modes.T) * vol
    gram_err = float(np.max(np.abs(gram - np.eye(basis.m))))
    div_err = float(max(np.max(np.abs(ws.D @ basis.modes.T)), 0.0))
    res = 0.0
    for k in range(basis.m):
        v = basis.modes[k]
        av = -ws.leray(ws.L @ v)
        r = np.linalg.norm(av - basis.evals[k] * v) / np.linalg.norm(v)
        res = max(res, float(r))
    asc = bool(np.all(np.diff(basis.evals) >= -1e-12)) and bool(basis.evals[0] > 0)
    return {"gram_err": gram_err, "div_err": div_err, "eig_residual": res,
            "ascending_positive": asc}


def leray_project(grid: Grid, basis: StokesBasis,
                  v: tuple[np.ndarray, np.ndarray], m: int | None = None,
                  ws: FluidWorkspace | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Projection of a face field onto the span of the first m modes."""
    if ws is None:
        ws = FluidWorkspace(grid)
    if m is None:
        m = basis.m
    if not 0 <= m <= basis.m:
        raise ValueError(f"m must be in [0, {basis.m}], got {m}")
    coeff = (basis.modes[:m] @ ws.pack(v)) * grid.cell_volume
    return ws.unpack(basis.modes[:m].T @ coeff)


# =====================================================================
# basis cache file
# =====================================================================

_CACHE_MAGIC = b"DFSB\x01\x00"


def save_stokes_basis(path, basis: StokesBasis) -> None:
    """Binary layout: magic, grid hash, m, n_dof, modes, eigenvalues (all LE)."""
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(bytes.fromhex(basis.grid_hash))
        fh.write(np.array([basis.m, basis.n_dof], dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.evals, dtype="<f8").tobytes())


def load_stokes_basis(path, grid: Grid) -> StokesBasis:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(_CACHE_MAGIC)] != _CACHE_MAGIC:
        raise ValueError(f"{path}: not a basis cache file")
    off = len(_CACHE_MAGIC)
    ghash = blob[off:off + 32].hex()
    off += 32
    if ghash != grid_fingerprint(grid):
        raise ValueError(f"{path}: basis cache was built for a different grid")
    m, n_dof = np.frombuffer(blob[off:off + 16], dtype="<i8")
    off += 16
    modes = np.frombuffer(blob[off:off + 8 * m * n_dof], dtype="<f8").reshape(m, n_dof)
    off += 8 * m * n_dof
    evals = np.frombuffer(blob[off:off + 8 * m], dtype="<f8")
    return StokesBasis(evals=evals.copy(), modes=modes.copy(),
                       grid_hash=ghash, n_dof=int(n_dof))


# =====================================================================
# time step
# =====================================================================

@dataclass
class FluidParams:
    mu: float = 1.0
    mode: str = "projection"       # or "galerkin"
    m: int | None = None           # mode count (galerkin); None = all built


def step_fluid(grid: Grid, u: tuple[np.ndarray, np.ndarray], n: np.ndarray,
               gphi: tuple[np.ndarray, np.ndarray], dt: float,
               params: FluidParams, ws: FluidWorkspace | None = None,
               basis: StokesBasis | None = None
               ) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    """One momentum step; returns (u_new, cell pressure).

    Projection mode: explicit convection, implicit viscosity, body force,
    exact discrete projection.  Galerkin mode: same right-hand side through
    the modal filter; the pressure slot returns zeros (the constraint is
    enforced by the basis).
    """
    if ws is None:
        ws = FluidWorkspace(grid)
    if params.mu <= 0:
        raise ValueError("mu must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    dt_max = fields.advective_cfl_dt(grid, u)
    if dt > dt_max:
        raise CflViolation(f"dt = {dt:.3e} exceeds advective CFL limit {dt_max:.3e}")

    cx, cy = convection(grid, u)
    w = ws.pack((u[0] + dt * cx, u[1] + dt * cy))
    f = ws.pack(body_force(grid, n, gphi))

    if params.mode == "projection":
        ustar = ws.viscous_lu(params.mu, dt).solve(w) + dt * f
        rhs = np.concatenate([ws.D @ ustar, [0.0]])
        q = ws.pressure_lu().solve(rhs)[:-1]
        u_new = ustar - ws.grad_pressure(q)
        return ws.unpack(u_new), q / dt
    if params.mode == "galerkin":
        if basis is None:
            raise ValueError("galerkin mode needs a Stokes basis")
        m = params.m if params.m is not None else basis.m
        if not 1 <= m <= basis.m:
            raise ValueError(f"m must be in [1, {basis.m}], got {m}")
        V = basis.modes[:m]
        vol = grid.cell_volume
        aw = (V @ w) * vol
        a_new = aw / (1.0 + params.mu * dt * basis.evals[:m]) + dt * (V @ f) * vol
        return ws.unpack(V.T @ a_new), np.zeros(grid.n_cells)
    raise ValueError(f"unknown fluid mode {params.mode!r}")


def random_divfree_velocity(grid: Grid, rng: np.random.Generator,
                            amp: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Exactly divergence-free face field from a random node stream function.

    The stream function is supported on strictly interior nodes (all four
    surrounding cells in the mask), which keeps every non-active face at
    zero; the result is rescaled so the max face speed is `amp`.
    """
    nx, ny = grid.nx, grid.ny
    mp = np.zeros((nx + 2, ny + 2), dtype=bool)
    mp[1:-1, 1:-1] = grid.mask
    node_in = mp[:-1, :-1] & mp[1:, :-1] & mp[:-1, 1:] & mp[1:, 1:]
    psi = np.where(node_in, rng.normal(0.0, 1.0, (nx + 1, ny + 1)), 0.0)
    vx = (psi[:, 1:] - psi[:, :-1]) / grid.dy
    vy = -(psi[1:, :] - psi[:-1, :]) / grid.dx
    speed = max(np.max(np.abs(vx)), np.max(np.abs(vy)))
    if speed > 0:
        vx *= amp / speed
        vy *= amp / speed
    return vx, vy


def kinetic_energy(grid: Grid, u: tuple[np.ndarray, np.ndarray]) -> float:
    """Discrete ||u||_L2^2 (face quadrature, full cell volume per face)."""
    return float((np.sum(u[0][grid.fx_active] ** 2)
                  + np.sum(u[1][grid.fy_active] ** 2)) * grid.cell_volume)


def gradient_energy(grid: Grid, u: tuple[np.ndarray, np.ndarray],
                    ws: FluidWorkspace | None = None) -> float:
    """Discrete ||grad u||_L2^2 via the viscous form -<L u, u> (wall terms included)."""
    if ws is None:
        ws = FluidWorkspace(grid)
    vec = ws.pack(u)
    return float(-(vec @ (ws.L @ vec)) * grid.cell_volume)
