"""Finite pointed metric measure spaces: flat and local Hausdorff distances,
pointed (measured) Gromov-Hausdorff estimates, Hausdorff content, Hölder
surface construction and tangent scans."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .core import (DegenerateScale, DomainError, MeasuredSpace, PointedSpace, ball, ball_mass,
                   from_points, load_space, rescale, restrict, save_space, validate)
from .flat import FlatSolver, flat_L, flat_Lr
from .hausdorff import local_hausdorff

__all__ = [
    "DegenerateScale", "DomainError", "MeasuredSpace", "PointedSpace", "ball", "ball_mass",
    "from_points", "load_space", "rescale", "restrict", "save_space", "validate",
    "FlatSolver", "flat_L", "flat_Lr", "local_hausdorff", "__version__",
]
