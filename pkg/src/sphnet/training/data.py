"""Synthetic molecules labelled by a frozen, randomly initialized teacher network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from ..model.basis import get_basis
from ..model.graph import MoleculeGraph
from ..model.network import ModelConfig, SPHNet

ELEMENT_CHOICES = np.array([1, 6, 7, 8])
ELEMENT_PROBS = np.array([0.4, 0.3, 0.15, 0.15])

# coordinates live on this dyadic grid so rigid shifts by grid multiples are exact
GRID = 2.0 ** -24


class GenerationError(RuntimeError):
    pass


@dataclass
class Sample:
    graph: MoleculeGraph
    H: np.ndarray
    S: np.ndarray | None = None


@dataclass
class Dataset:
    samples: list[Sample]
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return Dataset(self.samples[:n_first], self.manifest), Dataset(self.samples[n_first:], self.manifest)


def snap(pos: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(pos) / GRID) * GRID


def _chain(rng, n):
    pos = [np.zeros(3)]
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    for _ in range(n - 1):
        turn = rng.normal(size=3)
        direction = direction + 0.8 * turn / np.linalg.norm(turn)
        direction /= np.linalg.norm(direction)
        pos.append(pos[-1] + rng.uniform(1.0, 1.5) * direction)
    return np.array(pos)


def _ring(rng, n):
    bond = rng.uniform(1.1, 1.5)
    radius = bond / (2.0 * np.sin(np.pi / n))
    ang = 2.0 * np.pi * np.arange(n) / n
    pos = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n)], axis=1)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return pos @ q.T


def random_geometry(rng: np.random.Generator, n_atoms: int, min_dist: float = 0.8,
                    max_tries: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed chain or ring of H/C/N/O atoms with all distances >= ``min_dist``."""
    for _ in range(max_tries):
        Z = rng.choice(ELEMENT_CHOICES, size=n_atoms, p=ELEMENT_PROBS)
        build = _ring if n_atoms >= 3 and rng.random() < 0.4 else _chain
        pos = build(rng, n_atoms) + rng.normal(scale=0.15, size=(n_atoms, 3))
        pos = snap(pos - pos.mean(axis=0))
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if n_atoms < 2 or d[np.triu_indices(n_atoms, 1)].min() >= min_dist:
            return Z.astype(np.int64), pos
    raise GenerationError(f"no {n_atoms}-atom geometry with min distance {min_dist} after {max_tries} tries")


def teacher_config(seed: int, basis: str = "toy-svp", **overrides) -> ModelConfig:
    cfg = dict(basis=basis, gated=False, k_path=0.0, k_pair=0.0, seed=seed)
    cfg.update(overrides)
    return ModelConfig(**cfg).validate()


def label(model: SPHNet, graphs) -> list[np.ndarray]:
    """One forward pass per molecule, so a label never depends on batch composition."""
    was = model.training
    model.eval()
    with torch.no_grad():
        out = [model([g]).matrices[0].numpy().copy() for g in graphs]
    model.train(was)
    return out


def generate_teacher_dataset(seed: int, n_molecules: int, size_range: tuple[int, int] = (3, 12),
                             basis: str = "toy-svp", teacher: ModelConfig | None = None,
                             min_dist: float = 0.8) -> Dataset:
    lo, hi = size_range
    if not 1 <= lo <= hi:
        raise GenerationError(f"bad size range {size_range}")
    get_basis(basis)
    root = np.random.SeedSequence(seed)
    geo_seq, teacher_seq = root.spawn(2)
    children = geo_seq.spawn(n_molecules)
    graphs = []
    for m, child in enumerate(children):
        rng = np.random.default_rng(child)
        n = int(rng.integers(lo, hi + 1))
        Z, pos = random_geometry(rng, n, min_dist)
        graphs.append(MoleculeGraph(Z, pos, name=f"mol{m:05d}"))
    teacher_seed = int(teacher_seq.generate_state(1)[0])
    tcfg = teacher or teacher_config(teacher_seed, basis)
    model = SPHNet(tcfg)
    labels = label(model, graphs)
    samples = [Sample(g, H, None) for g, H in zip(graphs, labels)]
    manifest = {
        "seed": seed,
        "n_molecules": n_molecules,
        "size_range": [lo, hi],
        "basis": basis,
        "min_dist": min_dist,
        "teacher": tcfg.to_dict(),
        "generator": "perturbed chains and rings of H/C/N/O, per-molecule spawned seeds",
    }
    return Dataset(samples, manifest)
