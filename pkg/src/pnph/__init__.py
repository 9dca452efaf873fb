"""Homogenized Poisson-Nernst-Planck toolkit for charged porous media.

Pipeline: :mod:`pnph.geometry` (reference cells) -> :mod:`pnph.cell_solver`
(correctors) -> :mod:`pnph.tensors` (effective coefficients, tortuosity) ->
:mod:`pnph.macro_solver` / :mod:`pnph.limits` (upscaled equations), with
:mod:`pnph.micro_solver` for pore-scale checks and :mod:`pnph.conductivity`
for spectral conductivity estimates.
"""
import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

from .errors import (CompatibilityError, ConfigError, GeometryError, PhysicalRegimeError,  # noqa: E402
                     PNPHError, SolverError)
from .geometry import ReferenceCell, build_preset  # noqa: E402
from .tensors import EffectiveTensors, effective_tensors  # noqa: E402

__all__ = [
    "__version__", "PNPHError", "GeometryError", "SolverError", "CompatibilityError",
    "PhysicalRegimeError", "ConfigError", "ReferenceCell", "build_preset", "EffectiveTensors",
    "effective_tensors",
]
