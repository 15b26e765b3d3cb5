"""Network stages from atom embedding to assembled Hamiltonian blocks."""
from .basis import BASES, BasisError, BasisSpec, get_basis
from .graph import Batch, GraphError, MoleculeGraph, collate
from .network import HamiltonianPrediction, ModelConfig, ModelConfigError, SPHNet, initialize
from .radial import bernstein, cutoff, rbf

__all__ = [
    "BASES", "BasisError", "BasisSpec", "Batch", "GraphError", "HamiltonianPrediction",
    "ModelConfig", "ModelConfigError", "MoleculeGraph", "SPHNet", "bernstein", "collate",
    "cutoff", "get_basis", "initialize", "rbf",
]
