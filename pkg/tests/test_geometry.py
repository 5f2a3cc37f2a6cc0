import numpy as np
import pytest

from dropflow.geometry import (
    BoundaryData,
    build_boundary_data,
    build_grid,
    boundary_segments,
    grid_fingerprint,
    integrate_boundary,
    integrate_volume,
)
from util import notched_grid, notched_mask


def test_unit_square_counts():
    g = build_grid("rectangle", nx=4, ny=4)
    assert g.n_cells == 16
    assert g.dx == 0.25 and g.dy == 0.25
    assert g.n_bf == 16
    assert g.perimeter == pytest.approx(4.0, abs=1e-14)
    assert g.volume == pytest.approx(1.0, abs=1e-14)


def test_l_shape_counts():
    # 4x4 box minus the top-right 2x2 block: 12 cells, same perimeter as
    # the full square (the re-entrant corner trades outer wall for notch wall)
    g = build_grid("l_shape", nx=4, ny=4)
    assert g.n_cells == 12
    assert g.perimeter == pytest.approx(4.0, abs=1e-14)
    assert g.volume == pytest.approx(0.75, abs=1e-14)
    removed = g.cell_id[2:, 2:]
    assert (removed == -1).all()


@pytest.mark.parametrize("n", [4, 8, 16])
def test_l_shape_refinement_preserves_measures(n):
    g = build_grid("l_shape", nx=n, ny=n)
    assert g.perimeter == pytest.approx(4.0, abs=1e-13)
    assert g.volume == pytest.approx(0.75, abs=1e-13)


def test_one_dimensional_grid():
    g = build_grid("rectangle", nx=16, ny=1, lx=2.0)
    assert g.dim == 1
    assert g.dy == 1.0
    assert g.n_bf == 2
    assert set(zip(g.bf_nrm_x, g.bf_nrm_y)) == {(-1.0, 0.0), (1.0, 0.0)}
    assert g.perimeter == pytest.approx(2.0)


def test_build_grid_errors():
    with pytest.raises(ValueError):
        build_grid("rectangle", nx=1, ny=4)
    with pytest.raises(ValueError):
        build_grid("mask", nx=4, ny=4, mask=np.zeros((4, 4), dtype=bool))
    split = np.ones((4, 4), dtype=bool)
    split[2, :] = False
    with pytest.raises(ValueError):
        build_grid("mask", nx=4, ny=4, mask=split)
    with pytest.raises(ValueError):
        build_grid("hexagon", nx=4, ny=4)


def test_integrate_volume_linear_exact():
    g = build_grid("rectangle", nx=64, ny=64)
    val = integrate_volume(g, lambda x, y: x)
    assert val == pytest.approx(0.5, abs=1e-12)


def test_integrate_boundary_constant():
    g = notched_grid()
    assert integrate_boundary(g, 1.0) == pytest.approx(g.perimeter, abs=1e-13)


@pytest.mark.parametrize("maker", [
    lambda: build_grid("rectangle", nx=5, ny=7, lx=2.0, ly=3.0),
    lambda: build_grid("l_shape", nx=6, ny=6),
    notched_grid,
])
def test_closed_surface(maker):
    # a closed discrete surface has zero net normal, componentwise
    g = maker()
    assert np.sum(g.bf_nrm_x * g.bf_area) == pytest.approx(0.0, abs=1e-13)
    assert np.sum(g.bf_nrm_y * g.bf_area) == pytest.approx(0.0, abs=1e-13)


def test_boundary_faces_reference_owner_cells():
    g = notched_grid()
    assert (g.bf_cell >= 0).all() and (g.bf_cell < g.n_cells).all()
    # outward means the neighbor across the face is not in the mask
    for k in range(g.n_bf):
        i, j = g.cell_ix[g.bf_cell[k]], g.cell_iy[g.bf_cell[k]]
        di, dj = int(g.bf_nrm_x[k]), int(g.bf_nrm_y[k])
        ii, jj = i + di, j + dj
        outside = not (0 <= ii < g.nx and 0 <= jj < g.ny) or not g.mask[ii, jj]
        assert outside


def test_segments_unit_square():
    g = build_grid("rectangle", nx=4, ny=4)
    segs = boundary_segments(g)
    assert len(segs) == 4
    assert sorted(s.size for s in segs) == [4, 4, 4, 4]


def test_fingerprint_distinguishes_grids():
    a = build_grid("rectangle", nx=8, ny=8)
    b = build_grid("rectangle", nx=8, ny=8, lx=2.0)
    c = notched_grid()
    assert grid_fingerprint(a) != grid_fingerprint(b)
    assert grid_fingerprint(a) != grid_fingerprint(c)
    assert grid_fingerprint(a) == grid_fingerprint(build_grid("rectangle", nx=8, ny=8))


def test_boundary_data_validation():
    g = build_grid("rectangle", nx=4, ny=4)
    with pytest.raises(ValueError):
        build_boundary_data(g, kappa=-1.0, gamma=1.0)
    with pytest.raises(ValueError):
        build_boundary_data(g, kappa=1.0, gamma=0.0)
    with pytest.raises(ValueError):
        build_boundary_data(g, kappa=1.0, gamma=1.0, gamma_lower=2.0)


def test_gamma_extension_constant():
    g = notched_grid(10, 10)
    bd = build_boundary_data(g, kappa=1.0, gamma=3.0)
    assert np.allclose(bd.gamma_ext, 3.0, atol=1e-12)


def test_gamma_extension_trace_and_bounds():
    g = build_grid("rectangle", nx=12, ny=12)
    bd = build_boundary_data(g, kappa=1.0, gamma=lambda x, y: 1.0 + y, gamma_lower=0.5)
    # boundary cells hold the mean of their own faces' values; pick a
    # mid-edge face so the owner has exactly one face
    k = int(np.nonzero((g.bf_nrm_y == 1.0) & (g.bf_si == 6))[0][0])
    cell = g.bf_cell[k]
    assert bd.gamma_ext[cell] == pytest.approx(1.0 + g.bf_y[k], abs=1e-12)
    # harmonic extension of boundary data obeys the same min/max bounds
    assert bd.gamma_ext.min() >= bd.gamma.min() - 1e-12
    assert bd.gamma_ext.max() <= bd.gamma.max() + 1e-12
    assert (bd.gamma_ext >= bd.gamma_lower).all()


def test_gamma_extension_is_discretely_harmonic():
    g = build_grid("rectangle", nx=10, ny=10)
    bd = build_boundary_data(g, kappa=1.0, gamma=lambda x, y: 1.0 + x + 0.5 * y)
    inner = ((g.nb_xm >= 0) & (g.nb_xp >= 0) & (g.nb_ym >= 0) & (g.nb_yp >= 0))
    # away from the Dirichlet ring the 5-point Laplacian must vanish
    owners = np.unique(g.bf_cell)
    inner[owners] = False
    ge = bd.gamma_ext
    lap = np.zeros_like(ge)
    idx = np.nonzero(inner)[0]
    lap[idx] = (ge[g.nb_xm[idx]] + ge[g.nb_xp[idx]] - 2 * ge[idx]) / g.dx ** 2 \
        + (ge[g.nb_ym[idx]] + ge[g.nb_yp[idx]] - 2 * ge[idx]) / g.dy ** 2
    assert np.max(np.abs(lap[idx])) < 1e-9
