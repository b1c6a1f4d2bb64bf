"""Small-signal stability of power grids and damping optimization under uncertainty."""

__version__ = "0.1.0"
