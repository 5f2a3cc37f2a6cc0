"""Command-line front end: runs, inequality sweeps, basis builds, and the
standalone verification studies (entropy-identity refinement and
manufactured-solution operator convergence).

Exit codes: 0 success, 1 assertion/solver failure during a run or a failed
verification, 2 unknown subcommand or config parse error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from . import __version__, fields
from .density import DensityStepper
from .driver import ConfigError, load_config, run_simulation, write_timeseries
from .energy import bernstein_sweep, check_entropy_identity_n
from .fluid import (FluidWorkspace, build_stokes_basis, divfree_dimension,
                    load_stokes_basis, pressure_poisson, save_stokes_basis,
                    validate_basis)
from .geometry import build_boundary_data, build_grid


# =====================================================================
# verification studies (shared by the CLI and the acceptance suite)
# =====================================================================

def entropy_identity_study(levels: tuple[int, ...] = (32, 64, 128)) -> dict:
    """Residual of the density entropy identity on a diffusing trajectory,
    with dt halved alongside h (dt = 0.2 h, mid state always at t = 0.05)."""
    residuals, dts = [], []
    for nx in levels:
        grid = build_grid("rectangle", nx, nx)
        steps_to_mid = nx // 4
        dt = 0.05 / steps_to_mid
        c = np.ones(grid.n_cells)
        u = grid.zeros_faces()
        stepper = DensityStepper(grid)
        hist = [1.0 + 0.5 * np.cos(np.pi * grid.xc) * np.cos(np.pi * grid.yc)]
        for _ in range(steps_to_mid + 1):
            hist.append(stepper.step(hist[-1], c, u, dt, eps=0.0))
        mid = steps_to_mid
        residuals.append(check_entropy_identity_n(
            grid, hist[mid], c, hist[mid - 1], hist[mid + 1], dt))
        dts.append(dt)
    orders = [math.log2(residuals[i] / residuals[i + 1])
              for i in range(len(residuals) - 1)]
    slope = float(np.polyfit(np.log(dts), np.log(residuals), 1)[0])
    return {"levels": list(levels), "dts": dts, "residuals": residuals,
            "orders": orders, "slope": slope}


def _l2_cell_error(grid, got, exact) -> float:
    return math.sqrt(float(np.sum((got - exact) ** 2)) * grid.cell_volume)


def _gradient_error(nx: int) -> float:
    g = build_grid("rectangle", nx, nx)
    f = np.sin(2.3 * g.xc) * np.cos(1.7 * g.yc)
    gx, _ = fields.gradient(g, f)
    ii, jj = np.nonzero(g.fx_active)
    xf, yf = ii * g.dx, (jj + 0.5) * g.dy
    exact = 2.3 * np.cos(2.3 * xf) * np.cos(1.7 * yf)
    return float(np.max(np.abs(gx[ii, jj] - exact)))


def _robin_solve_error(nx: int) -> float:
    # manufactured solution: pick gamma so the Robin flux matches the
    # one-sided normal derivative of c_ex exactly, then solve L c + s = f
    g = build_grid("rectangle", nx, nx)
    kappa0 = 2.0

    def c_ex(x, y):
        return 2.0 + np.sin(1.3 * x + 0.4) * np.cos(0.9 * y - 0.2)

    def grad_ex(x, y):
        return (1.3 * np.cos(1.3 * x + 0.4) * np.cos(0.9 * y - 0.2),
                -0.9 * np.sin(1.3 * x + 0.4) * np.sin(0.9 * y - 0.2))

    gx, gy = grad_ex(g.bf_x, g.bf_y)
    dndir = gx * g.bf_nrm_x + gy * g.bf_nrm_y
    gamma = c_ex(g.bf_x, g.bf_y) + dndir / kappa0
    bdata = build_boundary_data(g, kappa0, gamma)
    L, s = fields.assemble_robin_laplacian(g, bdata)
    laplace = -(1.3 ** 2 + 0.9 ** 2) * (c_ex(g.xc, g.yc) - 2.0)
    c_num = spla.splu(L.tocsc()).solve(laplace - s)
    return _l2_cell_error(g, c_num, c_ex(g.xc, g.yc))


def _hessian_log_error(nx: int) -> float:
    g = build_grid("rectangle", nx, nx)
    c = np.exp(np.sin(1.9 * g.xc) * np.cos(1.3 * g.yc))
    hxx, hxy, hyy = fields.hessian_log(g, c)
    s, x, y = np.sin, g.xc, g.yc
    exx = -1.9 ** 2 * s(1.9 * x) * np.cos(1.3 * y)
    exy = -1.9 * 1.3 * np.cos(1.9 * x) * s(1.3 * y)
    eyy = -1.3 ** 2 * s(1.9 * x) * np.cos(1.3 * y)
    return max(float(np.max(np.abs(h - e)))
               for h, e in ((hxx, exx), (hxy, exy), (hyy, eyy)))


def _poisson_error(nx: int) -> float:
    g = build_grid("rectangle", nx, nx)
    p_ex = np.cos(np.pi * g.xc) * np.cos(np.pi * g.yc)
    rhs = -2.0 * np.pi ** 2 * p_ex
    p = pressure_poisson(g, rhs)
    return _l2_cell_error(g, p, p_ex - np.mean(p_ex))


def operator_convergence_study(res: tuple[int, int] = (32, 64)) -> dict:
    """Observed spatial order of each core operator under 2x refinement."""
    studies = {"gradient": _gradient_error,
               "robin_laplacian": _robin_solve_error,
               "hessian_log": _hessian_log_error,
               "pressure_poisson": _poisson_error}
    out = {}
    for name, err in studies.items():
        e_coarse, e_fine = err(res[0]), err(res[1])
        out[name] = {"errors": [e_coarse, e_fine],
                     "order": math.log2(e_coarse / e_fine)}
    return out


# =====================================================================
# subcommands
# =====================================================================

def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    ts = run_simulation(cfg)
    write_timeseries(ts, cfg.csv)
    final = ts.reports[-1]
    if args.json:
        payload = {"csv": cfg.csv, "dump": cfg.dump or None,
                   "steps": ts.n_steps, "reports": len(ts.reports),
                   "solves": ts.n_solves,
                   "final": {"t": final.t, "mass_n": final.mass_n,
                             "c_max": final.c_max, "F": final.F,
                             "X": final.X, "E": final.E}}
        print(json.dumps(payload))
    else:
        print(f"wrote {len(ts.reports)} reports ({ts.n_steps} steps, "
              f"{ts.n_solves} solves) to {cfg.csv}")
        print(f"final: t={final.t:.6g} mass_n={final.mass_n:.12g} "
              f"c_max={final.c_max:.12g} F={final.F:.12g} X={final.X:.12g}")
    return 0


def _cmd_check_bernstein(args) -> int:
    grid = build_grid(args.domain, args.res, args.res)
    reports = bernstein_sweep(grid, args.n, seed=args.seed)
    rows = []
    violations = 0
    for i, r in enumerate(reports):
        ok = r.lhs <= 1.05 * r.rhs + 1e-12
        violations += not ok
        rows.append({"field": i, "lhs": r.lhs, "rhs": r.rhs,
                     "margin": r.margin, "robin_gap": r.robin_gap,
                     "ok": bool(ok)})
    if args.json:
        print(json.dumps({"n": args.n, "res": args.res, "seed": args.seed,
                          "violations": violations, "rows": rows}))
    else:
        print(f"{'field':>5} {'lhs':>13} {'rhs':>13} {'margin':>13} ok")
        for row in rows:
            print(f"{row['field']:>5} {row['lhs']:>13.6e} {row['rhs']:>13.6e} "
                  f"{row['margin']:>13.6e} {'yes' if row['ok'] else 'NO'}")
        print(f"{len(rows)} fields, {violations} violations")
    return 0 if violations == 0 else 1


def _cmd_eigenbasis(args) -> int:
    grid = build_grid(args.domain, args.res, args.res)
    ws = FluidWorkspace(grid)
    m = args.m if args.m > 0 else divfree_dimension(ws)
    path = Path(args.out)
    cached = False
    basis = None
    if path.exists():
        try:
            candidate = load_stokes_basis(path, grid)
            if candidate.m == m:
                basis, cached = candidate, True
        except ValueError:
            pass
    if basis is None:
        basis = build_stokes_basis(grid, m, ws=ws)
        save_stokes_basis(path, basis)
    metrics = validate_basis(grid, basis, ws=ws)
    ok = (metrics["gram_err"] < 1e-8 and metrics["div_err"] < 1e-8
          and metrics["ascending_positive"])
    if args.json:
        print(json.dumps({"out": str(path), "cached": cached, "m": basis.m,
                          "evals_head": [float(v) for v in basis.evals[:5]],
                          "metrics": {k: (v if isinstance(v, bool) else float(v))
                                      for k, v in metrics.items()},
                          "ok": bool(ok)}))
    else:
        src = "loaded from" if cached else "built and saved to"
        print(f"{basis.m} modes {src} {path}")
        print(f"lowest eigenvalues: "
              + " ".join(f"{v:.6g}" for v in basis.evals[:5]))
        print(f"gram_err={metrics['gram_err']:.3e} "
              f"div_err={metrics['div_err']:.3e} "
              f"eig_residual={metrics['eig_residual']:.3e} ok={ok}")
    return 0 if ok else 1


def _cmd_verify_identities(args) -> int:
    entropy = entropy_identity_study()
    operators = operator_convergence_study()
    ok = entropy["slope"] >= 0.9 and all(v["order"] >= 1.9
                                         for v in operators.values())
    if args.json:
        print(json.dumps({"entropy_identity": entropy,
                          "operators": operators, "ok": bool(ok)}))
    else:
        print("entropy identity residual (dt = 0.2 h, refining both):")
        for nx, dt, r in zip(entropy["levels"], entropy["dts"],
                             entropy["residuals"]):
            print(f"  {nx:>4}^2  dt={dt:.6g}  residual={r:.6e}")
        print(f"  pairwise orders: "
              + " ".join(f"{o:.3f}" for o in entropy["orders"])
              + f"   slope: {entropy['slope']:.3f}")
        print("operator convergence under 2x refinement:")
        for name, v in operators.items():
            print(f"  {name:<18} errors {v['errors'][0]:.3e} -> "
                  f"{v['errors'][1]:.3e}   order {v['order']:.3f}")
        print("ok" if ok else "FAILED: an observed order fell below target")
    return 0 if ok else 1


def _cmd_version(args) -> int:
    if args.json:
        print(json.dumps({"version": __version__}))
    else:
        print(__version__)
    return 0


# =====================================================================
# argument plumbing
# =====================================================================

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropflow",
        description="structured-grid solver for oxygen-driven bacterial "
                    "suspensions with entropy/energy monitors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a simulation from a config file")
    p.add_argument("--config", required=True, help="flat key=value file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check-bernstein",
                       help="margin table of the gradient-quartic bound "
                            "over generated exchange-compatible fields")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", default="rectangle")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_check_bernstein)

    p = sub.add_parser("eigenbasis",
                       help="build or reuse a cached divergence-free "
                            "spectral basis")
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--domain", default="rectangle")
    p.add_argument("--m", type=int, default=0, help="mode count; 0 = full")
    p.add_argument("--out", default="stokes_basis.bin")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_eigenbasis)

    p = sub.add_parser("verify-identities",
                       help="refinement studies: entropy-identity residual "
                            "and operator convergence orders")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_verify_identities)

    p = sub.add_parser("version", help="print the package version")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_version)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
