"""Figure generation for solver outputs.

One figure per family of monitored functionals, heatmaps for field
snapshots, and a margin histogram for gradient-bound sweeps.  Figures
are always written to files; no interactive backend is required, and
none is touched.
"""

from __future__ import annotations

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import parse_dump, parse_margins, parse_timeseries

# Families of monitored functionals; each entry becomes one figure
# named after the family.
FAMILIES = (
    ("density", ("mass_n", "lp_n_2", "lp_n_3")),
    ("oxygen", ("c_max", "grad_c_l4")),
    ("entropy", ("S", "S_boundary", "S_add")),
    ("energy", ("F", "X", "E")),
    ("fluid", ("u_l2", "grad_u_l2")),
)


def envelope(t, f0: float, p: float, q: float) -> np.ndarray:
    """Comparison curve e^{p t} (f0 + q/p) - q/p through f0 at t = 0.

    Evaluated as f0 e^{pt} + q expm1(pt)/p, which is the same function
    but stays finite for small p; the p = 0 limit is f0 + q t.
    """
    t = np.asarray(t, dtype=float)
    if p == 0.0:
        return f0 + q * t
    return f0 * np.exp(p * t) + q * np.expm1(p * t) / p


def plot_timeseries(csv_path, out_dir, p: float | None = None,
                    q: float | None = None, fmt: str = "png",
                    dpi: int = 150) -> list[Path]:
    """One figure per functional family from a run CSV.

    When both envelope coefficients p and q are given, the energy figure
    overlays the comparison curve envelope(t, F(0), p, q).  A CSV
    holding only the header produces a warning on stderr and no figures.
    """
    table = parse_timeseries(csv_path)
    t = table["t"]
    if t.size == 0:
        print(f"warning: {csv_path} carries no data rows; nothing to plot",
              file=sys.stderr)
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for family, columns in FAMILIES:
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for name in columns:
            ax.plot(t, table[name], label=name, linewidth=1.2)
        if family == "energy" and p is not None and q is not None:
            ax.plot(t, envelope(t, float(table["F"][0]), p, q), "k--",
                    linewidth=1.0, label=f"envelope(p={p:g}, q={q:g})")
        ax.set_xlabel("t")
        ax.set_title(family)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = out / f"{family}.{fmt}"
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written


def _cell_speed(blocks: dict[str, np.ndarray]) -> np.ndarray:
    """Cell-centred speed from the staggered face velocities.

    Every face of an interior cell is active or a wall (finite value),
    so averaging the two faces per direction is well defined there;
    cells outside the mask are forced to nan via the n block's pattern.
    """
    ux, uy = blocks["u_x"], blocks["u_y"]
    uxc = 0.5 * (ux[:-1, :] + ux[1:, :])
    uyc = 0.5 * (uy[:, :-1] + uy[:, 1:])
    speed = np.hypot(uxc, uyc)
    speed[np.isnan(blocks["n"])] = np.nan
    return speed


def plot_field(dump_path, out_dir, fmt: str = "png",
               dpi: int = 150) -> list[Path]:
    """Heatmaps of n, c and the speed |u| from a field snapshot.

    Cells outside the flow domain are blanked (left at the figure
    background), so cut-outs of non-rectangular domains stay visible.
    """
    meta, blocks = parse_dump(dump_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lx = meta["nx"] * meta["dx"]
    ly = meta["ny"] * meta["dy"]
    panels = (("n", blocks["n"], "viridis"),
              ("c", blocks["c"], "magma"),
              ("speed", _cell_speed(blocks), "cividis"))
    written = []
    for name, cell, cmap in panels:
        fig, ax = plt.subplots(figsize=(5.6, 4.4))
        # imshow wants rows = y; the blocks are indexed [i, j] = [x, y].
        shown = np.ma.masked_invalid(cell.T)
        im = ax.imshow(shown, origin="lower", extent=(0.0, lx, 0.0, ly),
                       cmap=cmap, interpolation="nearest", aspect="equal")
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_title(f"{name} at t = {meta['t']:g}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.tight_layout()
        path = out / f"{name}.{fmt}"
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written


def plot_margins(json_path, out_dir, fmt: str = "png",
                 dpi: int = 150) -> list[Path]:
    """Histogram of lhs/rhs over a gradient-bound sweep, with the
    admissibility threshold marked.  An empty sweep produces a warning
    on stderr and no figure."""
    payload = parse_margins(json_path)
    rows = payload["rows"]
    if not rows:
        print(f"warning: {json_path} carries no rows; nothing to plot",
              file=sys.stderr)
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lhs = np.array([row["lhs"] for row in rows], dtype=float)
    rhs = np.array([row["rhs"] for row in rows], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = lhs / rhs
    ratio = ratio[np.isfinite(ratio)]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.hist(ratio, bins=min(40, max(10, ratio.size // 5)),
            color="steelblue", edgecolor="black", linewidth=0.4)
    ax.axvline(1.05, color="crimson", linestyle="--", linewidth=1.0,
               label="admissible limit")
    ax.set_xlabel("lhs / rhs")
    ax.set_ylabel("fields")
    ax.set_title(f"gradient-bound margins ({len(rows)} fields, "
                 f"{payload.get('violations', 0)} violations)")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = out / f"margins.{fmt}"
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return [path]
