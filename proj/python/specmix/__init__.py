"""Hyperspectral unmixing under spectral uncertainty.

Arrays follow the on-disk conventions: cubes are (height, width, bands) float32,
abundances are (height, width, materials) float64 and endmember matrices are
(bands, materials) float64.
"""

from ._core import (
    ConfigError,
    DataError,
    Model,
    NumericalError,
    ShapeError,
    fcls,
    generate_endmembers,
    generate_scene,
    gradcheck,
    project_simplex,
    read_abundance,
    read_cube,
    read_endmembers,
    rmse,
    write_abundance,
    write_cube,
    write_endmembers,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericalError",
    "ShapeError",
    "fcls",
    "generate_endmembers",
    "generate_scene",
    "gradcheck",
    "project_simplex",
    "read_abundance",
    "read_cube",
    "read_endmembers",
    "rmse",
    "write_abundance",
    "write_cube",
    "write_endmembers",
]

__version__ = "0.1.0"
