"""Static figures from metaq CLI artifacts.

This package is strictly downstream of the simulation CLI: it reads the
manifest JSON and the CSV/JSON artifacts it declares, and writes image
files. It never imports the simulation package.
"""

from .recipes import FigureRecipe, SchemaMismatch, UnknownFigure, recipes_from_manifest
from .render import build_figure, render

__all__ = [
    "FigureRecipe",
    "SchemaMismatch",
    "UnknownFigure",
    "recipes_from_manifest",
    "build_figure",
    "render",
]
