"""Publication-style figures from the simulator's sweep and trajectory CSVs."""

from .render import FIGURE_KINDS, FigureError, FigureSpec, render

__version__ = "0.1.0"
