"""Post-hoc reporting for the flow solver's on-disk outputs.

The package re-parses the run CSV, the field dumps and the
gradient-bound sweep payload from their documented text formats (it
never imports the solver) and renders diagnostic figures: the monitored
functionals over time with an optional exponential comparison curve,
heatmaps of the density, oxygen and speed fields, and margin
histograms.  Schema drift on the producer side is rejected with a
column-by-column diff rather than absorbed.
"""

__version__ = "0.1.0"

from .plots import envelope, plot_field, plot_margins, plot_timeseries
from .schema import (DUMP_BLOCKS, TIMESERIES_COLUMNS, SchemaError,
                     parse_dump, parse_margins, parse_timeseries)

__all__ = [
    "DUMP_BLOCKS",
    "SchemaError",
    "TIMESERIES_COLUMNS",
    "__version__",
    "envelope",
    "parse_dump",
    "parse_margins",
    "parse_timeseries",
    "plot_field",
    "plot_margins",
    "plot_timeseries",
]
