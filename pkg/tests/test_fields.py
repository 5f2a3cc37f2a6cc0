import numpy as np
import pytest

from dropflow.geometry import build_boundary_data, build_grid, integrate_volume
from dropflow import fields
from util import notched_grid, random_cell_field, random_divfree_velocity


# ---------------------------------------------------------------- gradient

def test_gradient_quadratic_is_exact_on_faces():
    # (f(x+h/2)-f(x-h/2))/h equals the derivative at the face for quadratics
    g = build_grid("rectangle", nx=64, ny=64)
    f = g.xc ** 2 + g.yc ** 2
    gx, gy = fields.gradient(g, f)
    ii, jj = np.nonzero(g.fx_active)
    assert np.max(np.abs(gx[ii, jj] - 2.0 * ii * g.dx)) < 1e-12
    ii, jj = np.nonzero(g.fy_active)
    assert np.max(np.abs(gy[ii, jj] - 2.0 * jj * g.dy)) < 1e-12


def test_gradient_second_order():
    errs = []
    for n in (32, 64):
        g = build_grid("rectangle", nx=n, ny=n)
        f = np.sin(2.3 * g.xc) * np.cos(1.7 * g.yc)
        gx, _ = fields.gradient(g, f)
        ii, jj = np.nonzero(g.fx_active)
        xf, yf = ii * g.dx, (jj + 0.5) * g.dy
        exact = 2.3 * np.cos(2.3 * xf) * np.cos(1.7 * yf)
        errs.append(np.max(np.abs(gx[ii, jj] - exact)))
    order = np.log2(errs[0] / errs[1])
    assert order > 1.9


def test_boundary_gradient_onesided_affine_exact():
    g = notched_grid()
    f = 2.0 * g.xc - 3.0 * g.yc + 1.0
    bg = fields.boundary_gradient_onesided(g, f)
    exact = 2.0 * g.bf_nrm_x - 3.0 * g.bf_nrm_y
    assert np.max(np.abs(bg - exact)) < 1e-12


def test_face_quadrature_affine_exact():
    g = build_grid("rectangle", nx=8, ny=8)
    f = 2.0 * g.xc
    gx, gy = fields.face_gradient_with_closure(
        g, f, fields.boundary_gradient_onesided(g, f))
    assert fields.face_quadrature(g, gx, gy, power=2.0) == pytest.approx(4.0, abs=1e-12)


# ---------------------------------------------------------- Robin Laplacian

def test_neumann_rows_sum_to_zero():
    g = notched_grid()
    bd = build_boundary_data(g, kappa=0.0, gamma=1.0)
    L, s = fields.assemble_robin_laplacian(g, bd)
    assert np.max(np.abs(s)) == 0.0
    assert np.max(np.abs(L @ np.ones(g.n_cells))) < 1e-11


def test_neumann_symmetric_negative():
    g = notched_grid()
    L = fields.assemble_neumann_laplacian(g)
    asym = (L - L.T).toarray()
    assert np.max(np.abs(asym)) < 1e-13
    rng = np.random.default_rng(7)
    for _ in range(5):
        f = rng.normal(size=g.n_cells)
        assert f @ (L @ f) <= 1e-10


def test_robin_equilibrium_annihilated():
    g = notched_grid()
    bd = build_boundary_data(g, kappa=lambda x, y: 1.0 + x, gamma=2.5)
    L, s = fields.assemble_robin_laplacian(g, bd)
    c = np.full(g.n_cells, 2.5)
    assert np.max(np.abs(L @ c + s)) < 1e-12


def test_robin_1d_steady_state():
    # kappa = gamma = 1 at both ends, no source: the steady profile is c == 1
    g = build_grid("rectangle", nx=32, ny=1)
    bd = build_boundary_data(g, kappa=1.0, gamma=1.0)
    L, s = fields.assemble_robin_laplacian(g, bd)
    from scipy.sparse.linalg import spsolve
    c = spsolve(L.tocsc(), -s)
    assert np.max(np.abs(c - 1.0)) < 1e-12


def test_robin_consistency_volume_equals_boundary():
    g = notched_grid(10, 10)
    rng = np.random.default_rng(3)
    bd = build_boundary_data(g, kappa=lambda x, y: 0.5 + np.sin(3 * x) ** 2,
                             gamma=lambda x, y: 1.0 + 0.3 * y)
    c = random_cell_field(g, rng)
    gap = fields.robin_consistency_gap(g, bd, c)
    assert gap < 1e-12


# ----------------------------------------------------------------- advection

def test_advect_zero_velocity():
    g = notched_grid()
    f = random_cell_field(g, np.random.default_rng(0))
    out = fields.advect_upwind(g, f, g.zeros_faces())
    assert np.max(np.abs(out)) == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_advect_conserves_mass_and_constants(seed):
    g = notched_grid(12, 9)
    rng = np.random.default_rng(seed)
    v = random_divfree_velocity(g, rng)
    f = random_cell_field(g, rng)
    tend = fields.advect_upwind(g, f, v)
    assert abs(integrate_volume(g, tend)) < 1e-12
    const = fields.advect_upwind(g, np.full(g.n_cells, 3.7), v)
    assert np.max(np.abs(const)) < 1e-11


def test_advect_rejects_bad_velocity():
    g = build_grid("rectangle", nx=6, ny=6)
    f = np.ones(g.n_cells)
    vx, vy = g.zeros_faces()
    vx[0, 2] = 1.0   # wall face
    with pytest.raises(ValueError):
        fields.advect_upwind(g, f, (vx, vy))
    vx, vy = g.zeros_faces()
    vx[g.fx_active] = np.random.default_rng(1).normal(size=int(g.fx_active.sum()))
    with pytest.raises(ValueError):
        fields.advect_upwind(g, f, (vx, vy))


@pytest.mark.parametrize("seed", [0, 5])
def test_upwind_matrix_matches_tendency_and_is_m_matrix(seed):
    g = notched_grid(9, 11)
    rng = np.random.default_rng(seed)
    v = random_divfree_velocity(g, rng)
    f = random_cell_field(g, rng)
    A = fields.assemble_upwind_matrix(g, v)
    assert np.allclose(A @ f, -fields.advect_upwind(g, f, v), atol=1e-12)
    off = A - sparse_diag(A)
    assert off.toarray().max() <= 1e-14
    assert np.max(np.abs(np.asarray(A.sum(axis=1)).ravel())) < 1e-10


def sparse_diag(A):
    from scipy import sparse
    return sparse.diags(A.diagonal())


# ---------------------------------------------------------------- hessian_log

def test_hessian_log_constant_and_exponential():
    g = notched_grid()
    hxx, hxy, hyy = fields.hessian_log(g, np.full(g.n_cells, 4.2), floor=1e-12)
    assert max(np.max(np.abs(h)) for h in (hxx, hxy, hyy)) < 1e-12
    # log c affine -> Hessian exactly annihilated by every stencil
    c = np.exp(2.0 * g.xc + 0.5 * g.yc)
    hxx, hxy, hyy = fields.hessian_log(g, c, floor=1e-12)
    assert max(np.max(np.abs(h)) for h in (hxx, hxy, hyy)) < 1e-11


def test_hessian_log_gaussian_quadratic():
    # log c = x^2: one-sided 4-point stencils are exact for quadratics too
    g = build_grid("rectangle", nx=64, ny=64)
    c = np.exp(g.xc ** 2)
    hxx, hxy, hyy = fields.hessian_log(g, c, floor=1e-12)
    assert np.max(np.abs(hxx - 2.0)) < 1e-9
    assert np.max(np.abs(hxy)) < 1e-9
    assert np.max(np.abs(hyy)) < 1e-9


def test_hessian_log_order():
    errs = []
    for n in (32, 64):
        g = build_grid("rectangle", nx=n, ny=n)
        c = np.exp(np.sin(1.9 * g.xc) * np.cos(1.3 * g.yc))
        hxx, hxy, hyy = fields.hessian_log(g, c, floor=1e-12)
        s, x, y = np.sin, g.xc, g.yc
        exx = -1.9 ** 2 * s(1.9 * x) * np.cos(1.3 * y)
        exy = -1.9 * 1.3 * np.cos(1.9 * x) * s(1.3 * y)
        eyy = -1.3 ** 2 * s(1.9 * x) * np.cos(1.3 * y)
        err = max(np.max(np.abs(hxx - exx)), np.max(np.abs(hxy - exy)),
                  np.max(np.abs(hyy - eyy)))
        errs.append(err)
    assert np.log2(errs[0] / errs[1]) > 1.9


def test_hessian_log_floor_guard():
    g = build_grid("rectangle", nx=4, ny=4)
    with pytest.raises(ValueError):
        fields.hessian_log(g, np.ones(g.n_cells), floor=0.0)


# ------------------------------------------------- boundary tangential slope

def test_tangential_gradient_square_edges():
    g = build_grid("rectangle", nx=8, ny=8)
    tg = fields.tangential_gradient_boundary(g, g.xc)
    left = g.bf_nrm_x == -1.0
    assert np.max(np.abs(tg[left])) < 1e-14
    tg = fields.tangential_gradient_boundary(g, g.yc)
    # traces are uniformly spaced in y, so even end faces are exact
    assert np.max(np.abs(tg[left] - 1.0)) < 1e-13
    bottom = g.bf_nrm_y == -1.0
    assert np.max(np.abs(tg[bottom])) < 1e-14


def test_tangential_gradient_constant_everywhere():
    g = notched_grid()
    tg = fields.tangential_gradient_boundary(g, np.full(g.n_cells, 2.0))
    assert np.max(np.abs(tg)) == 0.0


# -------------------------------------------------------------------- norms

def test_lp_norm_values():
    g = build_grid("rectangle", nx=128, ny=128)
    f = g.xc.copy()
    assert fields.lp_norm(g, f, 2.0) == pytest.approx(1.0 / np.sqrt(3.0), abs=1e-4)
    assert fields.lp_norm(g, f, np.inf) == pytest.approx(f.max())
    # p = 3 against straightforward summation
    direct = (np.sum(np.abs(f) ** 3) * g.cell_volume) ** (1 / 3)
    assert fields.lp_norm(g, f, 3.0) == pytest.approx(direct, rel=1e-13)
    with pytest.raises(ValueError):
        fields.lp_norm(g, f, 0.0)
