import numpy as np
import pytest

from dropflow.geometry import build_boundary_data, build_grid, integrate_volume
from dropflow.oxygen import CflViolation, max_principle_bound, step_oxygen
from util import notched_grid, random_divfree_velocity


def test_equilibrium_is_fixed_point():
    g = notched_grid()
    bd = build_boundary_data(g, kappa=lambda x, y: 0.5 + x, gamma=2.0)
    c = np.full(g.n_cells, 2.0)
    n = np.zeros(g.n_cells)
    for _ in range(10):
        c = step_oxygen(g, bd, c, n, g.zeros_faces(), dt=0.05)
        assert np.max(np.abs(c - 2.0)) < 1e-12


def test_saturation_from_empty():
    # no consumers: oxygen seeps in through the walls and saturates at gamma
    g = build_grid("rectangle", nx=16, ny=16)
    bd = build_boundary_data(g, kappa=1.0, gamma=1.0)
    c = np.zeros(g.n_cells)
    n = np.zeros(g.n_cells)
    prev_max = 0.0
    for _ in range(60):
        c = step_oxygen(g, bd, c, n, g.zeros_faces(), dt=0.05)
        assert (c >= 0.0).all()
        cm = float(c.max())
        assert cm <= 1.0 + 1e-10
        assert cm >= prev_max - 1e-13
        prev_max = cm
    assert c.min() > 0.5  # well on its way to saturation


def test_pure_neumann_conserves_mass():
    g = notched_grid(10, 10)
    rng = np.random.default_rng(2)
    bd = build_boundary_data(g, kappa=0.0, gamma=1.0)
    c = rng.uniform(0.5, 1.5, g.n_cells)
    n = np.zeros(g.n_cells)
    u = random_divfree_velocity(g, rng, amp=0.02)
    m0 = integrate_volume(g, c)
    for _ in range(20):
        c = step_oxygen(g, bd, c, n, u, dt=0.01)
        assert abs(integrate_volume(g, c) - m0) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 4])
def test_max_principle_random_data(seed):
    g = notched_grid(9, 12)
    rng = np.random.default_rng(seed)
    bd = build_boundary_data(g, kappa=lambda x, y: 2.0 * (y > 0.5), gamma=1.3)
    c = rng.uniform(0.0, 2.0, g.n_cells)
    n = rng.uniform(0.0, 3.0, g.n_cells)
    u = random_divfree_velocity(g, rng, amp=0.05)
    bound = max_principle_bound(bd, c)
    for _ in range(15):
        c = step_oxygen(g, bd, c, n, u, dt=0.01)
        assert (c >= 0.0).all()
        assert c.max() <= bound + 1e-10
        bound = max_principle_bound(bd, c)


def test_uniform_consumption_exact():
    # constant fields: diffusion and walls drop out, c_new = c/(1 + dt)
    g = build_grid("rectangle", nx=8, ny=8)
    bd = build_boundary_data(g, kappa=0.0, gamma=1.0)
    c = np.full(g.n_cells, 1.0)
    n = np.ones(g.n_cells)
    c1 = step_oxygen(g, bd, c, n, g.zeros_faces(), dt=0.2)
    assert np.max(np.abs(c1 - 1.0 / 1.2)) < 1e-13


def test_cfl_violation_raises():
    g = build_grid("rectangle", nx=8, ny=8)
    bd = build_boundary_data(g, kappa=1.0, gamma=1.0)
    ux, uy = g.zeros_faces()
    ux[g.fx_active] = 1.0
    with pytest.raises(CflViolation):
        step_oxygen(g, bd, np.ones(g.n_cells), np.zeros(g.n_cells), (ux, uy),
                    dt=g.dx)  # needs dt <= 0.5 dx / |u|


def test_negative_inputs_rejected():
    g = build_grid("rectangle", nx=4, ny=4)
    bd = build_boundary_data(g, kappa=1.0, gamma=1.0)
    with pytest.raises(ValueError):
        step_oxygen(g, bd, -np.ones(g.n_cells), np.zeros(g.n_cells),
                    g.zeros_faces(), dt=0.1)
    with pytest.raises(ValueError):
        step_oxygen(g, bd, np.ones(g.n_cells), -np.ones(g.n_cells),
                    g.zeros_faces(), dt=0.1)
