import numpy as np
import pytest

from dropflow import fields
from dropflow.fluid import (FluidParams, FluidWorkspace, StokesBasis,
                            build_stokes_basis, convection, divfree_dimension,
                            gradient_energy, kinetic_energy, leray_project,
                            load_stokes_basis, pressure_poisson,
                            save_stokes_basis, step_fluid, validate_basis,
                            _stokes_dense, _stokes_lanczos)
from dropflow.geometry import build_grid
from dropflow.oxygen import CflViolation

from util import notched_grid, random_divfree_velocity


def zero_force_args(grid):
    n = np.zeros(grid.n_cells)
    gphi = grid.zeros_faces()
    return n, gphi


def gravity_args(grid, g=0.7):
    n = np.ones(grid.n_cells)
    gx, gy = grid.zeros_faces()
    gy[:] = g
    return n, (gx, gy)


def max_div(grid, u):
    return float(np.max(np.abs(fields.divergence(grid, u))))


# ----------------------------------------------------------------- pressure

def poisson_error(nx):
    grid = build_grid("rectangle", nx, nx)
    x, y = grid.xc, grid.yc
    exact = np.cos(np.pi * x) * np.cos(np.pi * y)
    rhs = -2.0 * np.pi ** 2 * exact
    p = pressure_poisson(grid, rhs)
    p = p - np.mean(p)
    exact = exact - np.mean(exact)
    return np.sqrt(np.sum((p - exact) ** 2) * grid.cell_volume)


def test_pressure_poisson_second_order():
    e1, e2 = poisson_error(32), poisson_error(64)
    order = np.log2(e1 / e2)
    assert order > 1.9


def test_pressure_poisson_rejects_incompatible_rhs():
    grid = build_grid("rectangle", 8, 8)
    with pytest.raises(ValueError, match="incompatible"):
        pressure_poisson(grid, np.ones(grid.n_cells))


def test_pressure_poisson_zero_mean_gauge():
    grid = notched_grid()
    rng = np.random.default_rng(3)
    rhs = rng.normal(size=grid.n_cells)
    rhs -= np.mean(rhs)
    p = pressure_poisson(grid, rhs)
    assert abs(np.sum(p) * grid.cell_volume) < 1e-12


# --------------------------------------------------------------- projection

def test_uniform_buoyancy_is_annihilated():
    # n constant and phi linear: the force is a pure discrete gradient, so
    # the projected velocity must stay at rest (both stepping modes).
    for domain in ("rectangle", "l_shape"):
        grid = build_grid(domain, 16, 16)
        n, gphi = gravity_args(grid)
        u0 = grid.zeros_faces()
        u1, p = step_fluid(grid, u0, n, gphi, 0.1, FluidParams(mu=1.0))
        assert np.max(np.abs(u1[0])) < 1e-12
        assert np.max(np.abs(u1[1])) < 1e-12
        basis = build_stokes_basis(grid, divfree_dimension(FluidWorkspace(grid)))
        u2, _ = step_fluid(grid, u0, n, gphi, 0.1,
                           FluidParams(mu=1.0, mode="galerkin"), basis=basis)
        assert np.max(np.abs(u2[0])) < 1e-10
        assert np.max(np.abs(u2[1])) < 1e-10


def test_hydrostatic_pressure_output():
    grid = build_grid("rectangle", 16, 16)
    n, gphi = gravity_args(grid, g=0.7)
    _, p = step_fluid(grid, grid.zeros_faces(), n, gphi, 0.05, FluidParams(mu=1.0))
    expected = -0.7 * (grid.yc - np.mean(grid.yc))
    assert np.max(np.abs(p - expected)) < 1e-10


def test_unforced_flow_decays_and_stays_divfree():
    grid = build_grid("rectangle", 24, 24)
    rng = np.random.default_rng(11)
    u = random_divfree_velocity(grid, rng, amp=0.8)
    n, gphi = zero_force_args(grid)
    ws = FluidWorkspace(grid)
    params = FluidParams(mu=0.5)
    ke = kinetic_energy(grid, u)
    assert ke > 0
    for _ in range(60):
        u, _ = step_fluid(grid, u, n, gphi, 0.005, params, ws=ws)
        ke_new = kinetic_energy(grid, u)
        assert ke_new < ke
        assert max_div(grid, u) < 1e-10
        ke = ke_new


def test_unforced_decay_on_masked_grid():
    grid = notched_grid()
    rng = np.random.default_rng(4)
    u = random_divfree_velocity(grid, rng, amp=0.5)
    n, gphi = zero_force_args(grid)
    ws = FluidWorkspace(grid)
    ke = kinetic_energy(grid, u)
    for _ in range(20):
        u, _ = step_fluid(grid, u, n, gphi, 0.01, FluidParams(mu=1.0), ws=ws)
        ke_new = kinetic_energy(grid, u)
        assert ke_new < ke
        assert max_div(grid, u) < 1e-10
        ke = ke_new
    assert gradient_energy(grid, u, ws) >= 0


def test_convection_conserves_interior_momentum():
    # flux form telescopes: with velocity supported away from the walls the
    # domain sum of each tendency component vanishes
    grid = build_grid("rectangle", 20, 20)
    rng = np.random.default_rng(7)
    u = random_divfree_velocity(grid, rng, amp=1.0)
    u[0][:3, :] = 0.0; u[0][-3:, :] = 0.0; u[0][:, :2] = 0.0; u[0][:, -2:] = 0.0
    u[1][:2, :] = 0.0; u[1][-2:, :] = 0.0; u[1][:, :3] = 0.0; u[1][:, -3:] = 0.0
    cx, cy = convection(grid, u)
    assert abs(np.sum(cx)) < 1e-10
    assert abs(np.sum(cy)) < 1e-10


def test_step_fluid_validation():
    grid = build_grid("rectangle", 8, 8)
    n, gphi = zero_force_args(grid)
    u = grid.zeros_faces()
    u[0][4, 4] = 10.0
    with pytest.raises(CflViolation):
        step_fluid(grid, u, n, gphi, 1.0, FluidParams(mu=1.0))
    with pytest.raises(ValueError, match="mu"):
        step_fluid(grid, grid.zeros_faces(), n, gphi, 0.1, FluidParams(mu=0.0))
    with pytest.raises(ValueError, match="dt"):
        step_fluid(grid, grid.zeros_faces(), n, gphi, -0.1, FluidParams(mu=1.0))
    with pytest.raises(ValueError, match="basis"):
        step_fluid(grid, grid.zeros_faces(), n, gphi, 0.1,
                   FluidParams(mu=1.0, mode="galerkin"))
    with pytest.raises(ValueError, match="mode"):
        step_fluid(grid, grid.zeros_faces(), n, gphi, 0.1,
                   FluidParams(mu=1.0, mode="spectral"))


# ------------------------------------------------------------- Stokes basis

def test_basis_invariants_rectangle_and_notched():
    for grid in (build_grid("rectangle", 12, 12), notched_grid()):
        ws = FluidWorkspace(grid)
        m = min(20, divfree_dimension(ws))
        basis = build_stokes_basis(grid, m, ws=ws)
        rep = validate_basis(grid, basis, ws=ws)
        assert rep["gram_err"] < 1e-10
        assert rep["div_err"] < 1e-10
        assert rep["eig_residual"] < 1e-8
        assert rep["ascending_positive"]


def test_basis_m_max_bounds():
    grid = build_grid("rectangle", 8, 8)
    full = divfree_dimension(FluidWorkspace(grid))
    with pytest.raises(ValueError, match="m_max"):
        build_stokes_basis(grid, full + 1)
    with pytest.raises(ValueError, match="m_max"):
        build_stokes_basis(grid, 0)


def test_smallest_eigenvalue_grid_converged():
    l1 = build_stokes_basis(build_grid("rectangle", 16, 16), 1).evals[0]
    l2 = build_stokes_basis(build_grid("rectangle", 32, 32), 1).evals[0]
    assert abs(l1 - l2) < 0.1 * l2


def test_lanczos_path_matches_dense():
    grid = build_grid("rectangle", 12, 12)
    ws = FluidWorkspace(grid)
    ev_d, _ = _stokes_dense(ws, 5)
    ev_l, modes_l = _stokes_lanczos(ws, 5)
    assert np.max(np.abs(ev_l - ev_d) / ev_d) < 1e-7
    assert np.max(np.abs(ws.D @ modes_l.T)) < 1e-8


def test_leray_projection_properties():
    grid = build_grid("rectangle", 16, 16)
    ws = FluidWorkspace(grid)
    basis = build_stokes_basis(grid, divfree_dimension(ws), ws=ws)
    rng = np.random.default_rng(5)
    v = grid.zeros_faces()
    v[0][grid.fx_active] = rng.normal(size=int(grid.fx_active.sum()))
    v[1][grid.fy_active] = rng.normal(size=int(grid.fy_active.sum()))

    pv = leray_project(grid, basis, v, ws=ws)
    ppv = leray_project(grid, basis, pv, ws=ws)
    norm = lambda w: np.sqrt(kinetic_energy(grid, w))
    assert norm((ppv[0] - pv[0], ppv[1] - pv[1])) < 1e-12 * norm(pv)
    assert norm(pv) <= norm(v) * (1 + 1e-12)
    assert max_div(grid, pv) < 1e-9

    # the full-basis projector and the saddle-point projector agree
    kv = ws.unpack(ws.leray(ws.pack(v)))
    assert norm((kv[0] - pv[0], kv[1] - pv[1])) < 1e-9 * norm(pv)

    # Bessel: partial sums are monotone in m and bounded by the input
    norms = [norm(leray_project(grid, basis, v, m=m, ws=ws))
             for m in (10, 50, basis.m)]
    assert norms[0] <= norms[1] <= norms[2] <= norm(v) * (1 + 1e-12)


def test_galerkin_matches_projection_at_second_order():
    # full-mode spectral step and projection step differ only through the
    # viscous commutator, an O(dt^2) term: halving dt shrinks the gap 4x
    grid = build_grid("rectangle", 16, 16)
    ws = FluidWorkspace(grid)
    basis = build_stokes_basis(grid, divfree_dimension(ws), ws=ws)
    rng = np.random.default_rng(9)
    # smooth initial data (low modes only) so mu dt lambda is uniformly small
    rough = random_divfree_velocity(grid, rng, amp=1.0)
    u0 = leray_project(grid, basis, rough, m=25, ws=ws)
    scale = 0.3 / max(np.max(np.abs(u0[0])), np.max(np.abs(u0[1])))
    u0 = (u0[0] * scale, u0[1] * scale)
    n, gphi = zero_force_args(grid)

    def gap(dt):
        up, _ = step_fluid(grid, u0, n, gphi, dt, FluidParams(mu=1.0), ws=ws)
        ug, _ = step_fluid(grid, u0, n, gphi, dt,
                           FluidParams(mu=1.0, mode="galerkin"),
                           ws=ws, basis=basis)
        return np.sqrt(kinetic_energy(grid, (up[0] - ug[0], up[1] - ug[1])))

    g1, g2 = gap(2e-4), gap(1e-4)
    assert g1 < 1e-3 * np.sqrt(kinetic_energy(grid, u0))
    assert g1 / g2 > 3.0


def test_galerkin_modal_damping_exact():
    grid = build_grid("rectangle", 12, 12)
    ws = FluidWorkspace(grid)
    basis = build_stokes_basis(grid, 8, ws=ws)
    k, amp, mu, dt = 3, 1e-6, 0.7, 0.01
    u0 = ws.unpack(amp * basis.modes[k])
    n, gphi = zero_force_args(grid)
    u1, _ = step_fluid(grid, u0, n, gphi, dt,
                       FluidParams(mu=mu, mode="galerkin"), ws=ws, basis=basis)
    # convection of an O(amp) field perturbs coefficients at O(amp^2 dt / h)
    expect = amp / (1.0 + mu * dt * basis.evals[k])
    got = (basis.modes[k] @ ws.pack(u1)) * grid.cell_volume
    assert abs(got - expect) < 1e-6 * amp
    tail = np.sqrt(max(kinetic_energy(grid, u1) - got ** 2, 0.0))
    assert tail < 1e-5 * amp


# ------------------------------------------------------------- basis cache

def test_basis_cache_roundtrip(tmp_path):
    grid = notched_grid()
    basis = build_stokes_basis(grid, 12)
    path = tmp_path / "basis.bin"
    save_stokes_basis(path, basis)
    loaded = load_stokes_basis(path, grid)
    assert loaded.m == 12
    assert loaded.n_dof == basis.n_dof
    np.testing.assert_array_equal(loaded.evals, basis.evals)
    np.testing.assert_array_equal(loaded.modes, basis.modes)


def test_basis_cache_grid_mismatch(tmp_path):
    grid = build_grid("rectangle", 8, 8)
    basis = build_stokes_basis(grid, 4)
    path = tmp_path / "basis.bin"
    save_stokes_basis(path, basis)
    other = build_grid("l_shape", 8, 8)
    with pytest.raises(ValueError, match="different grid"):
        load_stokes_basis(path, other)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"whatever this is, it is not a basis")
    with pytest.raises(ValueError, match="not a basis cache"):
        load_stokes_basis(bad, grid)
