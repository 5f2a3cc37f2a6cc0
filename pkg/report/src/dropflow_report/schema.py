"""Parsers for the solver's on-disk output formats.

The reporting tool is a read-only consumer: it re-parses the time-series
CSV, the field dumps and the gradient-bound sweep payload from their
documented text formats instead of importing the solver.  The schemas
are frozen here and checked strictly, so that any drift on the producer
side fails loudly instead of silently mislabelling a plot.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

# Fixed column set of the run CSV, in producer order.
TIMESERIES_COLUMNS = (
    "t", "mass_n", "c_max", "S", "S_boundary", "S_add", "F", "X", "E",
    "lp_n_2", "lp_n_3", "grad_c_l4", "u_l2", "grad_u_l2")

# Fixed block order of a field dump; the velocity blocks live on the
# staggered lattice, everything else on cell centres.
DUMP_BLOCKS = ("n", "c", "u_x", "u_y", "p")


class SchemaError(ValueError):
    """An input file does not match the frozen producer schema."""


# =====================================================================
# time-series CSV
# =====================================================================

def _header_diff(found: list[str]) -> str:
    expected = list(TIMESERIES_COLUMNS)
    lines = ["time-series header does not match the frozen schema",
             f"  expected: {','.join(expected)}",
             f"  found:    {','.join(found)}"]
    missing = [c for c in expected if c not in found]
    unexpected = [c for c in found if c not in expected]
    moved = [c for c in expected if c in found and c not in missing
             and found.index(c) != expected.index(c)]
    if missing:
        lines.append(f"  missing columns:      {', '.join(missing)}")
    if unexpected:
        lines.append(f"  unexpected columns:   {', '.join(unexpected)}")
    if moved:
        lines.append(f"  out-of-order columns: {', '.join(moved)}")
    return "\n".join(lines)


def parse_timeseries(path) -> dict[str, np.ndarray]:
    """Read a run CSV into a column -> 1d-array mapping.

    The header must match TIMESERIES_COLUMNS exactly, names and order
    both; any mismatch raises SchemaError carrying a column-by-column
    diff.  A file holding only the header parses to empty columns.
    """
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{path} is empty (expected a header line)")
    found = lines[0].split(",")
    if found != list(TIMESERIES_COLUMNS):
        raise SchemaError(_header_diff(found))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        toks = line.split(",")
        if len(toks) != len(TIMESERIES_COLUMNS):
            raise SchemaError(f"{path}:{lineno}: expected "
                              f"{len(TIMESERIES_COLUMNS)} values, "
                              f"got {len(toks)}")
        try:
            rows.append([float(tok) for tok in toks])
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    data = np.array(rows, dtype=float).reshape(len(rows),
                                               len(TIMESERIES_COLUMNS))
    return {name: data[:, j].copy()
            for j, name in enumerate(TIMESERIES_COLUMNS)}


# =====================================================================
# field dumps
# =====================================================================

def parse_dump(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a field snapshot into (meta, blocks).

    The header line is "nx ny dx dy t"; the body carries the row-major
    blocks n, c, u_x, u_y, p, with the velocity blocks on the staggered
    lattice ((nx+1) x ny and nx x (ny+1)).  Cells and faces outside the
    flow domain are nan, wall faces carry the no-slip zero.
    """
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{path} is empty")
    head = lines[0].split()
    if len(head) != 5:
        raise SchemaError(f"{path}: header must be 'nx ny dx dy t', "
                          f"got {lines[0]!r}")
    try:
        nx, ny = int(head[0]), int(head[1])
        meta = {"nx": nx, "ny": ny, "dx": float(head[2]),
                "dy": float(head[3]), "t": float(head[4])}
    except ValueError as exc:
        raise SchemaError(f"{path}: bad header: {exc}") from exc
    if nx <= 0 or ny <= 0:
        raise SchemaError(f"{path}: grid sizes must be positive")
    try:
        values = np.array([float(tok) for line in lines[1:]
                           for tok in line.split()])
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    shapes = {"n": (nx, ny), "c": (nx, ny), "u_x": (nx + 1, ny),
              "u_y": (nx, ny + 1), "p": (nx, ny)}
    total = sum(a * b for a, b in shapes.values())
    if values.size != total:
        raise SchemaError(f"{path} carries {values.size} values, "
                          f"expected {total} for a {nx} x {ny} grid")
    blocks, at = {}, 0
    for name in DUMP_BLOCKS:
        shape = shapes[name]
        size = shape[0] * shape[1]
        blocks[name] = values[at:at + size].reshape(shape)
        at += size
    return meta, blocks


# =====================================================================
# gradient-bound sweep payload
# =====================================================================

def parse_margins(path) -> dict:
    """Read a gradient-bound sweep report (the check-bernstein --json
    payload): a dict with "violations" and "rows", one row per sampled
    field carrying lhs, rhs, margin and the ok verdict."""
    try:
        payload = json.loads(Path(path).read_text(encoding="ascii"))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "rows" not in payload:
        raise SchemaError(f"{path} carries no 'rows' entry")
    for k, row in enumerate(payload["rows"]):
        for key in ("lhs", "rhs", "margin", "ok"):
            if key not in row:
                raise SchemaError(f"{path}: row {k} misses {key!r}")
    return payload
