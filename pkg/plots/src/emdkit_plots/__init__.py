"""Offline figure scripts for emdkit evaluation and benchmark CSVs."""

from .cdf import plot_cdf
from .jobs import FigureJob, render
from .scatter import plot_scatter
from .timing import plot_timing

__all__ = ["plot_scatter", "plot_cdf", "plot_timing", "FigureJob", "render"]
__version__ = "0.1.0"
