"""Shared helpers for the test suite: odd-shaped masks and synthetic fields."""

from __future__ import annotations

import numpy as np

from dropflow.fluid import random_divfree_velocity  # re-export  # noqa: F401
from dropflow.geometry import Grid, build_grid


def notched_mask(nx: int = 8, ny: int = 8) -> np.ndarray:
    """A connected mask with a notch, a bay, and an interior bite taken out."""
    m = np.ones((nx, ny), dtype=bool)
    m[nx - 2:, :2] = False                    # corner notch
    m[: max(1, nx // 4), ny // 2] = False     # bay on the left edge
    m[nx // 2, ny - 1] = False                # dent on the top edge
    return m


def notched_grid(nx: int = 8, ny: int = 8) -> Grid:
    return build_grid("mask", nx=nx, ny=ny, mask=notched_mask(nx, ny))


def random_cell_field(grid: Grid, rng: np.random.Generator,
                      lo: float = 0.2, hi: float = 2.0) -> np.ndarray:
    return rng.uniform(lo, hi, grid.n_cells)
