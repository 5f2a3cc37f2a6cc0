"""Run configuration, the coupled time loop, and simulation file output.

A run is described by a flat key = value config file (INI-style, no
sections, no expression language).  Named presets supply numeric defaults
and explicit keys override them, so a config stays a plain list of numbers
and enum strings.  The loop advances one Lie-splitting step at a time in
the fixed order fluid -> oxygen -> density: the oxygen advection sees the
fresh velocity and the density drift sees the fresh oxygen gradient.

The file formats are part of the public interface and are kept bit-stable:
every float is written with repr, so parsing the file returns the exact
same doubles and identical config + seed reproduces identical bytes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fields
from .density import DensityStepper, combined_drift_cfl_dt
from .energy import (EnergyConstants, EnergyReport, calibrate_constants,
                     evaluate_report)
from .fluid import (FluidParams, FluidWorkspace, build_stokes_basis,
                    divfree_dimension, random_divfree_velocity,
                    step_fluid)
from .geometry import (BoundaryData, Grid, build_boundary_data, build_grid,
                       integrate_volume)
from .oxygen import max_principle_bound, step_oxygen


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


# =====================================================================
# configuration
# =====================================================================

_MODES = ("projection", "galerkin")
_ICS = ("uniform", "blob")
_SIDES = ("all", "top", "bottom", "left", "right")


@dataclass
class RunConfig:
    """Everything a run needs, flat and numeric.

    dt = 0 selects automatic stepping at the given CFL fraction of the
    tightest advective/drift limit (capped by dt_cap, default min(dx, dy),
    so quiescent runs still resolve the dynamics).  const_k = 0 calibrates
    the kinetic weight from the measured decay rate of the fluid solver.
    """

    preset: str = "equilibrium"
    domain: str = "rectangle"
    nx: int = 64
    ny: int = 64
    lx: float = 1.0
    ly: float = 1.0
    t_final: float = 1.0
    dt: float = 0.0
    cfl: float = 0.8
    dt_cap: float = 0.0
    mu: float = 1.0
    epsilon: float = 0.0
    mode: str = "projection"
    galerkin_m: int = 0
    ic: str = "uniform"
    n_bar: float = 0.0
    blob_amp: float = 2.0
    blob_x: float = 0.5
    blob_y: float = 0.75
    blob_width: float = 0.12
    n_floor: float = 0.01
    c0: float = 1.0
    u0_amp: float = 0.0
    kappa: float = 1.0
    kappa_side: str = "all"
    gamma: float = 1.0
    phi_g: float = 0.0
    out_every: int = 1
    seed: int = 0
    const_a: float = 2.0
    const_k: float = 0.0
    const_l: float = 1.0
    debug: bool = False
    csv: str = "timeseries.csv"
    dump: str = ""

    def validate(self) -> None:
        if self.t_final <= 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}")
        if self.dt < 0:
            raise ConfigError(f"dt must be >= 0, got {self.dt}")
        if self.dt == 0 and not 0.0 < self.cfl <= 1.0:
            raise ConfigError(f"cfl must be in (0, 1], got {self.cfl}")
        if self.dt_cap < 0:
            raise ConfigError(f"dt_cap must be >= 0, got {self.dt_cap}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mode not in _MODES:
            raise ConfigError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.galerkin_m < 0:
            raise ConfigError(f"galerkin_m must be >= 0, got {self.galerkin_m}")
        if self.ic not in _ICS:
            raise ConfigError(f"ic must be one of {_ICS}, got {self.ic!r}")
        if self.kappa_side not in _SIDES:
            raise ConfigError(f"kappa_side must be one of {_SIDES}, "
                              f"got {self.kappa_side!r}")
        if min(self.n_bar, self.blob_amp, self.n_floor, self.c0,
               self.u0_amp, self.kappa) < 0:
            raise ConfigError("n_bar, blob_amp, n_floor, c0, u0_amp and "
                              "kappa must all be >= 0")
        if self.blob_width <= 0:
            raise ConfigError(f"blob_width must be positive, got {self.blob_width}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.out_every < 1:
            raise ConfigError(f"out_every must be >= 1, got {self.out_every}")
        if min(self.const_a, self.const_l) <= 0:
            raise ConfigError("const_a and const_l must be positive")
        if self.const_k < 0:
            raise ConfigError(f"const_k must be >= 0, got {self.const_k}")


# Preset = numeric defaults for one scenario; file keys override them.
# "equilibrium" is the trivial fixed point (no bacteria, oxygen saturated
# at gamma, fluid at rest): every functional stays constant to solver
# precision.  "aerotaxis_drop" is a bacterial blob under gravity in a drop
# whose top surface exchanges oxygen, starting half-saturated at rest.
PRESETS: dict[str, dict] = {
    "equilibrium": dict(
        ic="uniform", n_bar=0.0, c0=1.0,
        kappa=1.0, kappa_side="all", gamma=1.0, phi_g=0.0,
    ),
    "aerotaxis_drop": dict(
        ic="blob", blob_amp=2.0, blob_x=0.5, blob_y=0.75,
        blob_width=0.12, n_floor=0.01, c0=0.5,
        kappa=1.0, kappa_side="top", gamma=1.0, phi_g=1.0,
    ),
}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, text: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Parse flat key = value lines; '#' starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, val = body.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not val:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        raw[key] = val

    preset = raw.pop("preset", "equilibrium")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; "
                          f"have {sorted(PRESETS)}")
    merged: dict = {"preset": preset, **PRESETS[preset]}
    for key, val in raw.items():
        merged[key] = _coerce(key, val)
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# =====================================================================
# initial state
# =====================================================================

def _kappa_faces(grid: Grid, value: float, side: str) -> np.ndarray:
    """Exchange coefficient per boundary face, selected by outward normal."""
    kap = np.zeros(grid.n_bf)
    if side == "all":
        sel = slice(None)
    elif side == "top":
        sel = grid.bf_nrm_y > 0.5
    elif side == "bottom":
        sel = grid.bf_nrm_y < -0.5
    elif side == "left":
        sel = grid.bf_nrm_x < -0.5
    elif side == "right":
        sel = grid.bf_nrm_x > 0.5
    else:
        raise ConfigError(f"unknown kappa_side {side!r}")
    kap[sel] = value
    return kap


def setup_state(cfg: RunConfig):
    """Build (grid, bdata, n, c, u, gphi) from a validated config."""
    grid = build_grid(cfg.domain, cfg.nx, cfg.ny, cfg.lx, cfg.ly)
    kap = _kappa_faces(grid, cfg.kappa, cfg.kappa_side)
    bdata = build_boundary_data(grid, kap, cfg.gamma)

    if cfg.ic == "uniform":
        n = np.full(grid.n_cells, cfg.n_bar)
    else:
        r2 = (grid.xc - cfg.blob_x) ** 2 + (grid.yc - cfg.blob_y) ** 2
        n = cfg.n_floor + cfg.blob_amp * np.exp(-r2 / (2.0 * cfg.blob_width ** 2))
    c = np.full(grid.n_cells, cfg.c0)

    if cfg.u0_amp > 0:
        u = random_divfree_velocity(grid, np.random.default_rng(cfg.seed),
                                    amp=cfg.u0_amp)
    else:
        u = grid.zeros_faces()

    # phi = phi_g * y, so the potential gradient is (0, phi_g) everywhere
    gphi = (np.zeros((grid.nx + 1, grid.ny)),
            np.full((grid.nx, grid.ny + 1), cfg.phi_g))
    return grid, bdata, n, c, u, gphi


# =====================================================================
# time series container
# =====================================================================

@dataclass
class TimeSeries:
    """Reports at cadence plus per-report step metadata."""

    reports: list[EnergyReport] = field(default_factory=list)
    step_index: list[int] = field(default_factory=list)
    dt_used: list[float] = field(default_factory=list)
    n_steps: int = 0
    n_solves: int = 0

    def append(self, report: EnergyReport, step: int, dt: float) -> None:
        report.validate()
        self.reports.append(report)
        self.step_index.append(step)
        self.dt_used.append(dt)

    def validate(self) -> None:
        t = np.array([r.t for r in self.reports])
        if t.size and np.any(np.diff(t) <= 0):
            raise AssertionError("report times are not strictly increasing")


# =====================================================================
# the coupled loop
# =====================================================================

SPLIT_ORDER = ("fluid", "oxygen", "density")


def _pick_dt(cfg: RunConfig, grid: Grid, u, c, remaining: float) -> float:
    if cfg.dt > 0:
        dt = cfg.dt
    else:
        cap = cfg.dt_cap if cfg.dt_cap > 0 else min(grid.dx, grid.dy)
        dt = cfg.cfl * min(fields.advective_cfl_dt(grid, u),
                           combined_drift_cfl_dt(grid, u, c), cap / cfg.cfl)
    dt = min(dt, remaining)
    if not dt > 1e-12 * max(1.0, cfg.t_final):
        raise RuntimeError(f"time step collapsed to {dt:.3e}")
    return dt


def _debug_asserts(grid: Grid, ws: FluidWorkspace, n, c, u,
                   ceiling: float, mass0: float, cfg: RunConfig) -> None:
    if np.any(n < 0):
        raise AssertionError("density lost positivity")
    if np.any(c < 0):
        raise AssertionError("oxygen lost positivity")
    if np.max(c, initial=0.0) > ceiling + 1e-10:
        raise AssertionError(f"maximum principle violated: "
                             f"{np.max(c):.15g} > {ceiling:.15g}")
    if cfg.epsilon == 0:
        mass = integrate_volume(grid, n)
        if abs(mass - mass0) > 1e-10 * max(1.0, abs(mass0)):
            raise AssertionError(f"mass drifted by {mass - mass0:.3e}")
    div = ws.D @ ws.pack(u)
    speed = max(np.max(np.abs(u[0]), initial=0.0),
                np.max(np.abs(u[1]), initial=0.0))
    if np.max(np.abs(div), initial=0.0) > 1e-9 * max(1.0, speed / min(grid.dx, grid.dy)):
        raise AssertionError("velocity lost the divergence-free constraint")


def run_simulation(cfg: RunConfig,
                   splitting_order: tuple[str, ...] = SPLIT_ORDER
                   ) -> TimeSeries:
    """Advance the coupled system to t_final, reporting at cadence.

    Any stepper error dumps the last valid state (to cfg.dump, or next to
    the CSV when no dump path is set) and re-raises.  The final state is
    dumped to cfg.dump on success as well, so a run leaves both a time
    series and a restartable snapshot.
    """
    cfg.validate()
    if set(splitting_order) != set(SPLIT_ORDER):
        raise ValueError(f"splitting_order must permute {SPLIT_ORDER}")
    grid, bdata, n, c, u, gphi = setup_state(cfg)
    ws = FluidWorkspace(grid)
    dstep = DensityStepper(grid)

    basis = None
    params = FluidParams(mu=cfg.mu, mode=cfg.mode)
    if cfg.mode == "galerkin":
        params.m = cfg.galerkin_m if cfg.galerkin_m > 0 else divfree_dimension(ws)
        basis = build_stokes_basis(grid, params.m, ws=ws)

    if cfg.const_k > 0:
        constants = EnergyConstants(a=cfg.const_a, K=cfg.const_k, L=cfg.const_l)
    else:
        cal = calibrate_constants(grid, cfg.mu, c0_max=float(np.max(c, initial=0.0)),
                                  gamma_max=bdata.gamma_max, ws=ws)
        constants = EnergyConstants(a=cfg.const_a, K=cal.K, L=cfg.const_l,
                                    c_mu=cal.c_mu)

    ceiling = max_principle_bound(bdata, c)
    mass0 = integrate_volume(grid, n)
    pressure = np.zeros(grid.n_cells)
    solves_per_step = 4 if cfg.mode == "projection" else 2

    ts = TimeSeries()
    ts.append(evaluate_report(grid, bdata, n, c, u, 0.0, constants, ws=ws),
              step=0, dt=0.0)

    t, step = 0.0, 0
    t_end = cfg.t_final
    eps_t = 1e-12 * max(1.0, t_end)
    while t < t_end - eps_t:
        dt = _pick_dt(cfg, grid, u, c, remaining=t_end - t)
        valid = FieldState(grid, n, c, u, pressure, t)
        try:
            for stage in splitting_order:
                if stage == "fluid":
                    u, pressure = step_fluid(grid, u, n, gphi, dt, params,
                                             ws=ws, basis=basis)
                elif stage == "oxygen":
                    c = step_oxygen(grid, bdata, c, n, u, dt)
                else:
                    n = dstep.step(n, c, u, dt, cfg.epsilon)
        except Exception:
            _dump_on_abort(cfg, valid)
            raise
        t += dt
        step += 1
        ts.n_steps = step
        ts.n_solves += solves_per_step
        if cfg.debug:
            _debug_asserts(grid, ws, n, c, u, ceiling, mass0, cfg)
        if step % cfg.out_every == 0 or t >= t_end - eps_t:
            ts.append(evaluate_report(grid, bdata, n, c, u, t, constants, ws=ws),
                      step=step, dt=dt)

    ts.validate()
    if cfg.dump:
        dump_field(FieldState(grid, n, c, u, pressure, t), cfg.dump)
    return ts


def _dump_on_abort(cfg: RunConfig, state: FieldState) -> None:
    path = cfg.dump if cfg.dump else str(Path(cfg.csv).with_suffix(".abort.dump"))
    try:
        dump_field(state, path)
    except OSError:
        pass  # the original stepper error matters more than a failed dump


# =====================================================================
# time-series output
# =====================================================================

CSV_HEADER = ("t,mass_n,c_max,S,S_boundary,S_add,F,X,E,"
              "lp_n_2,lp_n_3,grad_c_l4,u_l2,grad_u_l2")


def _report_row(r: EnergyReport) -> list[float]:
    return [r.t, r.mass_n, r.c_max, r.S, r.S_boundary, r.S_add, r.F, r.X,
            r.E, r.lp_n[2.0], r.lp_n[3.0], r.grad_c_l4, r.u_l2, r.grad_u_l2]


def write_timeseries(ts, path) -> None:
    """CSV with the fixed header; repr floats round-trip bit-exactly."""
    reports = ts.reports if isinstance(ts, TimeSeries) else list(ts)
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(",".join(repr(float(v)) for v in _report_row(r)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_timeseries(path) -> list[EnergyReport]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path} does not carry the expected header")
    reports = []
    for line in lines[1:]:
        if not line:
            continue
        v = [float(tok) for tok in line.split(",")]
        if len(v) != 14:
            raise ValueError(f"expected 14 columns, got {len(v)}")
        reports.append(EnergyReport(
            t=v[0], mass_n=v[1], c_max=v[2], S=v[3], S_boundary=v[4],
            S_add=v[5], F=v[6], X=v[7], E=v[8], lp_n={2.0: v[9], 3.0: v[10]},
            grad_c_l4=v[11], u_l2=v[12], grad_u_l2=v[13]))
    return reports


# =====================================================================
# field snapshots
# =====================================================================

@dataclass
class FieldState:
    """One full solver state, ready to dump."""

    grid: Grid
    n: np.ndarray
    c: np.ndarray
    u: tuple[np.ndarray, np.ndarray]
    p: np.ndarray
    t: float


def _face_table_x(grid: Grid, ux: np.ndarray) -> np.ndarray:
    """x-face values on the full staggered lattice: active faces carry the
    dof, wall faces the no-slip zero, faces outside the mask nan."""
    left = np.zeros((grid.nx + 1, grid.ny), dtype=bool)
    right = np.zeros_like(left)
    left[1:, :] = grid.mask
    right[:-1, :] = grid.mask
    out = np.full((grid.nx + 1, grid.ny), np.nan)
    out[left ^ right] = 0.0
    out[grid.fx_active] = ux[grid.fx_active]
    return out


def _face_table_y(grid: Grid, uy: np.ndarray) -> np.ndarray:
    lo = np.zeros((grid.nx, grid.ny + 1), dtype=bool)
    hi = np.zeros_like(lo)
    lo[:, 1:] = grid.mask
    hi[:, :-1] = grid.mask
    out = np.full((grid.nx, grid.ny + 1), np.nan)
    out[lo ^ hi] = 0.0
    out[grid.fy_active] = uy[grid.fy_active]
    return out


def dump_field(state: FieldState, path) -> None:
    """Text snapshot: header "nx ny dx dy t", then row-major blocks in the
    order n, c, u_x, u_y, P.  Cells outside the mask are nan; velocity
    blocks are on the staggered lattice ((nx+1) x ny and nx x (ny+1))."""
    g = state.grid
    blocks = [g.scatter(state.n), g.scatter(state.c),
              _face_table_x(g, state.u[0]), _face_table_y(g, state.u[1]),
              g.scatter(state.p)]
    lines = [f"{g.nx} {g.ny} {g.dx!r} {g.dy!r} {float(state.t)!r}"]
    for block in blocks:
        for row in block:
            lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_field(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a dump back into (meta, blocks); values round-trip bitwise."""
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    head = lines[0].split()
    if len(head) != 5:
        raise ValueError(f"{path} header must be 'nx ny dx dy t'")
    nx, ny = int(head[0]), int(head[1])
    meta = {"nx": nx, "ny": ny, "dx": float(head[2]), "dy": float(head[3]),
            "t": float(head[4])}
    values = np.array([float(tok) for line in lines[1:] for tok in line.split()])
    shapes = {"n": (nx, ny), "c": (nx, ny), "u_x": (nx + 1, ny),
              "u_y": (nx, ny + 1), "p": (nx, ny)}
    total = sum(a * b for a, b in shapes.values())
    if values.size != total:
        raise ValueError(f"{path} carries {values.size} values, "
                         f"expected {total}")
    blocks, at = {}, 0
    for name, shape in shapes.items():
        size = shape[0] * shape[1]
        blocks[name] = values[at:at + size].reshape(shape)
        at += size
    return meta, blocks
