"""Rotation/translation checks of predicted Hamiltonian blocks."""
from __future__ import annotations

import numpy as np
import torch

from .irreps import Rotation
from .model.graph import MoleculeGraph
from .model.network import SPHNet
from .training.data import GRID, random_geometry
from .wigner import wigner_d


def orbital_rotation(basis, Z, R: np.ndarray) -> np.ndarray:
    """Block-diagonal Wigner-D over every atom's shells, in H's row order."""
    cache = {l: wigner_d(l, R) for l in set(basis.full)}
    blocks = [cache[l] for z in Z for l in basis.shells[int(z)]]
    n = sum(b.shape[0] for b in blocks)
    D = np.zeros((n, n))
    pos = 0
    for b in blocks:
        d = b.shape[0]
        D[pos:pos + d, pos:pos + d] = b
        pos += d
    return D


def predict(model: SPHNet, graph: MoleculeGraph) -> np.ndarray:
    with torch.no_grad():
        return model([graph]).matrices[0].numpy()


def deviation(model: SPHNet, graph: MoleculeGraph, R: np.ndarray | None, shift=None) -> float:
    """max |H(R g + s) - D H(g) D^T| over all entries (so over every block h_ij)."""
    H = predict(model, graph)
    moved = graph.transformed(R, shift)
    H2 = predict(model, moved)
    if R is None:
        return float(np.abs(H2 - H).max())
    D = orbital_rotation(model.basis, graph.Z, R)
    return float(np.abs(H2 - D @ H @ D.T).max())


def run_trials(model: SPHNet, trials: int, seed: int = 0, sizes=(3, 8), translation_only: bool = False):
    """Random molecule, rotation and dyadic shift per trial; returns the deviations."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        n = int(rng.integers(sizes[0], sizes[1] + 1))
        Z, pos = random_geometry(rng, n)
        Z = np.array([z if z in model.basis.shells else 6 for z in Z])
        g = MoleculeGraph(Z, pos)
        shift = np.round(rng.uniform(-5, 5, size=3) / GRID) * GRID
        R = None if translation_only else Rotation.random(rng).matrix
        out.append(deviation(model, g, R, shift))
    return out
