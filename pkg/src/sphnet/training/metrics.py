"""Regression loss and the orbital-energy / wavefunction metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .eig import EigResult, gen_eig


@dataclass
class LossReport:
    mae: float
    mse: float

    @property
    def total(self) -> float:
        return self.mae + self.mse


def loss(H_pred, H_ref) -> LossReport:
    """Element-wise MAE and MSE over the full matrix."""
    a = np.asarray(H_pred, dtype=np.float64)
    b = np.asarray(H_ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    r = a - b
    return LossReport(float(np.abs(r).mean()), float((r * r).mean()))


def batch_loss(preds: Sequence[torch.Tensor], refs: Sequence[torch.Tensor]):
    """Differentiable (mae, mse), each averaged per molecule then over the batch."""
    maes, mses = [], []
    for p, r in zip(preds, refs):
        if p.shape != r.shape:
            raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(r.shape)}")
        d = p - r
        maes.append(d.abs().mean())
        mses.append((d * d).mean())
    return torch.stack(maes).mean(), torch.stack(mses).mean()


def occupied_count(Z) -> int:
    """Closed-shell occupancy: half the electron count, rounded down."""
    return int(np.sum(Z)) // 2


def epsilon_mae(H_pred, H_ref, S=None, n_occ: int | None = None) -> float:
    """Mean absolute difference of the ``n_occ`` lowest generalized eigenvalues."""
    ep = gen_eig(H_pred, S).eigenvalues
    er = gen_eig(H_ref, S).eigenvalues
    n = len(er) if n_occ is None else n_occ
    if n > len(er):
        raise ValueError(f"n_occ={n} exceeds dimension {len(er)}")
    return float(np.abs(ep[:n] - er[:n]).mean()) if n else 0.0


def psi_similarity(C_pred, C_ref, S=None, n_occ: int | None = None, eps_ref=None,
                   gap: float = 1e-8) -> float:
    """Mean |S-weighted cosine| between matching occupied orbitals.

    When ``eps_ref`` is given, runs of occupied reference eigenvalues closer
    than ``gap`` are compared as subspaces: each contributes the cosines of
    its principal angles with the predicted subspace of the same indices.
    """
    Cp = np.asarray(C_pred, dtype=np.float64)
    Cr = np.asarray(C_ref, dtype=np.float64)
    n = Cr.shape[1] if n_occ is None else n_occ
    if n == 0:
        return 1.0
    S = np.eye(Cr.shape[0]) if S is None else np.asarray(S, dtype=np.float64)
    Cp, Cr = Cp[:, :n], Cr[:, :n]
    norm_p = np.sqrt(np.einsum("ik,ij,jk->k", Cp, S, Cp))
    norm_r = np.sqrt(np.einsum("ik,ij,jk->k", Cr, S, Cr))
    Cp, Cr = Cp / norm_p, Cr / norm_r
    groups = [[k] for k in range(n)]
    if eps_ref is not None:
        e = np.asarray(eps_ref, dtype=np.float64)[:n]
        groups = [[0]]
        for k in range(1, n):
            if e[k] - e[k - 1] < gap:
                groups[-1].append(k)
            else:
                groups.append([k])
    cos = []
    for grp in groups:
        overlap = Cr[:, grp].T @ S @ Cp[:, grp]
        if len(grp) == 1:
            cos.append(abs(overlap[0, 0]))
        else:
            cos.extend(np.clip(np.linalg.svd(overlap, compute_uv=False), 0.0, 1.0))
    return float(np.mean(cos))


@dataclass
class MoleculeMetrics:
    h_mae: float
    eps_mae: float
    psi: float


def molecule_metrics(H_pred, H_ref, Z, S=None, ref: EigResult | None = None) -> MoleculeMetrics:
    n_occ = occupied_count(Z)
    ref = ref or gen_eig(H_ref, S)
    pred = gen_eig(H_pred, S)
    n = min(n_occ, len(ref.eigenvalues))
    eps = float(np.abs(pred.eigenvalues[:n] - ref.eigenvalues[:n]).mean()) if n else 0.0
    psi = psi_similarity(pred.vectors, ref.vectors, S, n, ref.eigenvalues)
    h = float(np.abs(np.asarray(H_pred) - np.asarray(H_ref)).mean())
    return MoleculeMetrics(h, eps, psi)
