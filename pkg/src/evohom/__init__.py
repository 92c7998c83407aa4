"""Homogenization of reaction-diffusion in domains with evolving circular perforations."""
from . import errors
from .errors import *  # noqa: F401,F403
from .geometry import (CellGeometry, CutoffProfile, RadiusBounds, DEFAULT_GEOMETRY, cutoff_eval,
                       hanzawa_det, hanzawa_grad, hanzawa_inverse, hanzawa_map, hanzawa_velocity,
                       micro_map_coeffs)
from .kinetics import Kinetics, ProblemData

__version__ = "0.1.0"
__all__ = [name for name in dir(errors) if name[0].isupper()] + [
    "CellGeometry", "CutoffProfile", "RadiusBounds", "DEFAULT_GEOMETRY", "cutoff_eval", "hanzawa_det",
    "hanzawa_grad", "hanzawa_inverse", "hanzawa_map", "hanzawa_velocity", "micro_map_coeffs",
    "Kinetics", "ProblemData",
]
