"""Reduced energies, critical configurations and bubble ansatzes for singular
mean field equations on closed surfaces (unit sphere and flat tori)."""

from .config import RunConfig, build_problem, parse_config
from .errors import SLLError
from .problem import ProblemData, SingularData
from .surface import FlatTorus, UnitSphere, make_surface

__version__ = "0.1.0"

__all__ = ["FlatTorus", "ProblemData", "RunConfig", "SLLError", "SingularData", "UnitSphere",
           "build_problem", "make_surface", "parse_config"]
