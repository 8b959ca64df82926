"""Magnetic Hamiltonian flows on twisted cotangent bundles of homogeneous spaces."""

from . import dynamics, integrate, lie_core, mane, rabinowitz, stability, systems
from .errors import MagshellError
from .systems import MagneticSystem, PhaseState, make_system

__all__ = [
    "MagneticSystem", "MagshellError", "PhaseState", "dynamics", "integrate", "lie_core", "make_system", "mane",
    "rabinowitz", "stability", "systems",
]
__version__ = "0.1.0"
