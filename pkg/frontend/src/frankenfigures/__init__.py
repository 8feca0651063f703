"""Figure generation for frankenfilter CLI outputs.

This package consumes only the documented file contracts of the main
command-line tool (filter replicate CSVs, filter summary JSON, PMMH trace
CSVs and PMMH summary JSON) and turns them into publication-style figures.
No statistics are recomputed here beyond what plotting itself requires.
"""

from .spec import FigureSpec
from .render import render
from .io import SchemaError

__all__ = ["FigureSpec", "render", "SchemaError"]
