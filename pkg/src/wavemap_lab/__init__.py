"""Pseudo-spectral toolkit for sphere-valued wave maps on periodic grids."""

__version__ = "0.1.0"

from .spectral import (
    DyadicRange,
    Field,
    GridSpec,
    Spectrum,
    bump_symbol,
    inverse_transform,
    laplacian,
    project_band,
    project_leq,
    project_range,
    spatial_gradient,
    transform,
)

__all__ = [
    "__version__",
    "DyadicRange",
    "Field",
    "GridSpec",
    "Spectrum",
    "bump_symbol",
    "inverse_transform",
    "laplacian",
    "project_band",
    "project_leq",
    "project_range",
    "spatial_gradient",
    "transform",
]
