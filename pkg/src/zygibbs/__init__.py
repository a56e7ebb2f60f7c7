"""Gibbs measures, truncated flows and interaction estimates for a
Schrodinger-wave system on the two-dimensional torus."""

from .spectral import (
    SpectralField,
    bracket,
    convolve_truncated,
    field_from_grid,
    field_from_modes,
    grid_values,
    littlewood_paley,
    load_field,
    project_dirichlet,
    save_field,
    sobolev_norm_sq,
    zero_field,
)

__version__ = "0.1.0"

__all__ = [
    "SpectralField",
    "bracket",
    "convolve_truncated",
    "field_from_grid",
    "field_from_modes",
    "grid_values",
    "littlewood_paley",
    "load_field",
    "project_dirichlet",
    "save_field",
    "sobolev_norm_sq",
    "zero_field",
    "__version__",
]
