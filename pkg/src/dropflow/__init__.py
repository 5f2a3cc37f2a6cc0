"""Finite-volume simulator for oxygen-driven bacterial suspensions in an
incompressible fluid, on masked Cartesian staggered grids with oxygen
exchange across the boundary, plus the entropy/energy monitors that track
the dissipation structure of the coupled system."""

__version__ = "0.1.0"

from .density import DensityStepper, step_density
from .driver import (ConfigError, FieldState, RunConfig, TimeSeries,
                     dump_field, load_config, load_field, parse_config,
                     read_timeseries, run_simulation, write_timeseries)
from .energy import (EnergyConstants, EnergyReport, EnvelopeFit,
                     bernstein_sweep, calibrate_constants, check_bernstein,
                     check_energy_inequality, check_entropy_identity_n,
                     check_fluid_energy, evaluate_report)
from .fluid import (FluidParams, FluidWorkspace, StokesBasis,
                    build_stokes_basis, divfree_dimension, leray_project,
                    load_stokes_basis, save_stokes_basis, step_fluid)
from .geometry import (BoundaryData, Grid, build_boundary_data, build_grid,
                       grid_fingerprint, integrate_boundary,
                       integrate_volume)
from .oxygen import CflViolation, max_principle_bound, step_oxygen

__all__ = [
    "BoundaryData", "CflViolation", "ConfigError", "DensityStepper",
    "EnergyConstants", "EnergyReport", "EnvelopeFit", "FieldState",
    "FluidParams", "FluidWorkspace", "Grid", "RunConfig", "StokesBasis",
    "TimeSeries", "bernstein_sweep", "build_boundary_data", "build_grid",
    "build_stokes_basis", "calibrate_constants", "check_bernstein",
    "check_energy_inequality", "check_entropy_identity_n",
    "check_fluid_energy", "divfree_dimension", "dump_field",
    "evaluate_report", "grid_fingerprint", "integrate_boundary",
    "integrate_volume", "leray_project", "load_config", "load_field",
    "load_stokes_basis", "max_principle_bound", "parse_config",
    "read_timeseries", "run_simulation", "save_stokes_basis",
    "step_density", "step_fluid", "step_oxygen", "write_timeseries",
    "__version__",
]
