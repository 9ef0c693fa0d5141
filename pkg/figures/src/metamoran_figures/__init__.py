"""Batch figure generation for metamoran CSV outputs.

This package draws; it never recomputes model quantities.  Every plot is a
pure function of its input CSV: fixed styling, fixed geometry, no
timestamps, byte-identical output for identical input.  SVG output embeds
the data-to-viewport mapping as attributes so tests (and downstream
tooling) can invert curve geometry back to data coordinates exactly.
"""

__version__ = "0.1.0"

from metamoran_figures.plots import (  # noqa: F401
    FigureSpec,
    SchemaError,
    plot_chaos_decay,
    plot_particle_histogram,
    plot_moments,
    plot_weights,
)
from metamoran_figures.extract import curve_endpoints  # noqa: F401
