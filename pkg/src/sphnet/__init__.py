"""Equivariant Hamiltonian prediction with adaptive path and pair sparsity."""
from .cg import clebsch_gordan, enumerate_paths
from .irreps import EquivariantVector, Irrep, IrrepsError, IrrepsLayout, Rotation
from .spherical import complex_to_real_sh_transform, real_spherical_harmonics
from .wigner import rotate, wigner_d

__version__ = "0.1.0"

__all__ = [
    "EquivariantVector", "Irrep", "IrrepsError", "IrrepsLayout", "Rotation",
    "clebsch_gordan", "complex_to_real_sh_transform", "enumerate_paths",
    "real_spherical_harmonics", "rotate", "wigner_d",
]
