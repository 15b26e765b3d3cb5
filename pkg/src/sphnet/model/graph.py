"""Molecules and batched neighbor/pair index sets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch


class GraphError(ValueError):
    pass


@dataclass
class MoleculeGraph:
    Z: np.ndarray
    pos: np.ndarray  # (n, 3), Angstrom
    name: str = ""

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.int64).reshape(-1)
        self.pos = np.asarray(self.pos, dtype=np.float64).reshape(-1, 3)
        if len(self.Z) != len(self.pos):
            raise GraphError(f"{len(self.Z)} atomic numbers but {len(self.pos)} positions")
        if np.any(self.Z <= 0):
            raise GraphError("atomic numbers must be positive")
        if not np.all(np.isfinite(self.pos)):
            raise GraphError("positions must be finite")
        if len(self.Z) > 1 and self.distances()[np.triu_indices(len(self.Z), 1)].min() == 0.0:
            raise GraphError("two atoms share a position")

    @property
    def n_atoms(self) -> int:
        return len(self.Z)

    def distances(self) -> np.ndarray:
        d = self.pos[None, :, :] - self.pos[:, None, :]
        return np.sqrt((d * d).sum(-1))

    def transformed(self, rotation: np.ndarray | None = None, shift=None) -> "MoleculeGraph":
        pos = self.pos
        if rotation is not None:
            pos = pos @ np.asarray(rotation).T
        if shift is not None:
            pos = pos + np.asarray(shift)
        return MoleculeGraph(self.Z.copy(), pos, self.name)

    def permuted(self, perm) -> "MoleculeGraph":
        perm = np.asarray(perm)
        return MoleculeGraph(self.Z[perm], self.pos[perm], self.name)


@dataclass
class Batch:
    """Several molecules as one disjoint graph.

    ``edges`` are directed (i, j), i != j, within ``cutoff``; messages flow
    j -> i.  ``pairs`` are all i < j inside each molecule.
    """

    Z: np.ndarray
    pos: torch.Tensor
    molecule: np.ndarray
    n_molecules: int
    atom_offsets: np.ndarray
    edges: tuple[np.ndarray, np.ndarray]
    pairs: tuple[np.ndarray, np.ndarray]
    pair_molecule: np.ndarray
    graphs: list[MoleculeGraph] = field(repr=False)

    @property
    def n_atoms(self) -> int:
        return len(self.Z)

    def vectors(self, i: np.ndarray, j: np.ndarray) -> torch.Tensor:
        """``pos[j] - pos[i]`` for index arrays."""
        return self.pos[torch.from_numpy(j)] - self.pos[torch.from_numpy(i)]


def collate(graphs: Sequence[MoleculeGraph], cutoff: float) -> Batch:
    Z, pos, mol, offsets = [], [], [], []
    ei, ej, pi, pj, pm = [], [], [], [], []
    base = 0
    for m, g in enumerate(graphs):
        n = g.n_atoms
        offsets.append(base)
        Z.append(g.Z)
        pos.append(g.pos)
        mol.append(np.full(n, m, dtype=np.int64))
        d = g.distances()
        ii, jj = np.nonzero((d < cutoff) & ~np.eye(n, dtype=bool))
        ei.append(ii + base)
        ej.append(jj + base)
        ui, uj = np.triu_indices(n, 1)
        pi.append(ui + base)
        pj.append(uj + base)
        pm.append(np.full(len(ui), m, dtype=np.int64))
        base += n
    offsets.append(base)

    def cat(parts):
        return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)

    return Batch(
        Z=cat(Z),
        pos=torch.from_numpy(np.concatenate(pos) if pos else np.zeros((0, 3))),
        molecule=cat(mol),
        n_molecules=len(graphs),
        atom_offsets=np.array(offsets, dtype=np.int64),
        edges=(cat(ei), cat(ej)),
        pairs=(cat(pi), cat(pj)),
        pair_molecule=cat(pm),
        graphs=list(graphs),
    )
