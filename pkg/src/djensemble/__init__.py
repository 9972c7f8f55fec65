"""Disjoint ensembles of black-box spatio-temporal predictors."""

from .grid import Query, Region, STGrid, generate_synthetic, load_grid, slice_grid, write_grid

__version__ = "0.1.0"

__all__ = ["Query", "Region", "STGrid", "generate_synthetic", "load_grid", "slice_grid", "write_grid"]
