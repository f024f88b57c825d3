"""Plot package for mbdopt artifacts."""

from .figures import FIGURE_KINDS, FigureSpec, PlotDataError, render

__version__ = "0.1.0"
