"""The full network: embedding, node interaction, pair construction, expansion."""
from __future__ import annotations

import dataclasses
import zlib
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..irreps import IrrepsLayout
from ..sparsity import Phase, SparsePairGate, SparseTPGate, iter_gates, pair_invariants
from ..tp.plan import build_expansion_plan, build_plan, full_plan
from ..tp.torch_ops import ExpansionTensors, tensor_expansion, tensor_product
from .basis import BasisSpec, get_basis
from .graph import Batch, MoleculeGraph, collate
from .layers import (
    EquivariantNorm,
    PairWeights,
    RadialWeights,
    SphLinear,
    as_l1,
    edge_harmonics,
    pad_orders,
    uniform_dim,
)
from .radial import rbf


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    lmax: int = 4
    channels: int = 8
    n_vectorial: int = 4
    rbf_size: int = 16
    rbf_alpha: float = 0.8
    cutoff: float = 5.0
    pair_cutoff: float = 20.0
    basis: str = "toy-svp"
    k_path: float = 0.0
    k_pair: float = 0.0
    tss_epoch: int = 3
    gated: bool = True
    seed: int = 0

    def validate(self) -> "ModelConfig":
        basis = get_basis(self.basis)
        if self.lmax < 2 * basis.lmax:
            raise ModelConfigError(
                f"lmax={self.lmax} cannot expand basis {self.basis!r} (needs {2 * basis.lmax})"
            )
        if self.channels < 1 or self.rbf_size < 2 or self.n_vectorial < 0:
            raise ModelConfigError("channels >= 1, rbf_size >= 2 and n_vectorial >= 0 required")
        for name in ("k_path", "k_pair"):
            k = getattr(self, name)
            if not 0.0 <= k < 1.0:
                raise ModelConfigError(f"{name} must lie in [0, 1), got {k}")
        if self.cutoff <= 0 or self.pair_cutoff <= 0:
            raise ModelConfigError("cutoff radii must be positive")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ModelConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data).validate()


def _name_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(name.encode())])


def initialize(model: nn.Module, seed: int) -> None:
    """Seed every parameter from its own name so init does not depend on module order.

    Matrices get N(0, 1/fan_in), biases zeros, norm gains and gate scores
    ones, embeddings and other vectors N(0, 1).
    """
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "scores":
                p.fill_(1.0)
                continue
            if p.dim() == 1 and leaf == "bias":
                p.zero_()
                continue
            if p.dim() == 1 and leaf == "weight":
                p.fill_(1.0)
                continue
            rng = np.random.default_rng(_name_seed(seed, name))
            std = 1.0
            if p.dim() == 2 and not getattr(p, "is_table", False):
                std = 1.0 / np.sqrt(p.shape[1])
            p.copy_(torch.from_numpy(rng.standard_normal(tuple(p.shape)) * std))


def _scatter_sum(values: torch.Tensor, index: np.ndarray, n: int) -> torch.Tensor:
    out = values.new_zeros((n, values.shape[1]))
    if len(index):
        out = out.index_add(0, torch.from_numpy(index), values)
    return out


class VectorialBlock(nn.Module):
    """Message passing on orders <= 1 without higher-order couplings."""

    def __init__(self, channels: int, n_rbf: int):
        super().__init__()
        self.channels = channels
        self.radial = RadialWeights(n_rbf, 3 * channels)
        self.update = SphLinear(channels, channels, 1)

    def forward(self, x, batch: Batch, feats, unit):
        C, N = self.channels, x.shape[0]
        i, j = batch.edges
        tj = torch.from_numpy(j)
        w = self.radial(feats)
        ws, wv, wg = w[:, :C], w[:, C:2 * C], w[:, 2 * C:]
        x0 = x[tj, :C]
        x1 = x[tj, C:].reshape(-1, C, 3)
        m0 = x0 * ws
        m1 = (x0 * wv)[:, :, None] * as_l1(unit)[:, None, :] + x1 * wg[:, :, None]
        msg = torch.cat([m0, m1.reshape(-1, 3 * C)], dim=1)
        return self.update(x + _scatter_sum(msg, i, N))


class SphericalBlock(nn.Module):
    """Couples node features with edge harmonics up to ``lmax``.

    Without a gate every cutoff edge carries a message.  With one, the
    undirected pairs inside the cutoff are scored and selected and each kept
    pair sends messages both ways.
    """

    def __init__(self, channels: int, lmax_in: int, lmax: int, n_rbf: int,
                 gate: SparsePairGate | None = None):
        super().__init__()
        self.channels, self.lmax_in, self.lmax = channels, lmax_in, lmax
        self.plan = build_plan(
            IrrepsLayout.uniform(channels, lmax_in),
            IrrepsLayout.uniform(1, lmax),
            IrrepsLayout.uniform(channels, lmax),
        )
        self.weights = PairWeights(n_rbf, channels * (2 + lmax), self.plan.weight_numel)
        self.update = SphLinear(channels, channels, lmax)
        self.norm = EquivariantNorm(channels, lmax)
        self.out = SphLinear(channels, channels, lmax)
        self.pair_gate = gate

    def _edges(self, x, batch: Batch):
        i, j = batch.edges
        gate = self.pair_gate
        if gate is None or gate.scheduler.inert:
            return i, j, None
        up = i < j
        ui, uj = i[up], j[up]
        inv = gate.invariants(x[torch.from_numpy(ui)], x[torch.from_numpy(uj)])
        scores = gate.score(inv)
        keep = gate.select(scores, batch.molecule[ui])
        ui, uj, s = ui[keep], uj[keep], scores[torch.from_numpy(np.flatnonzero(keep))]
        return np.concatenate([ui, uj]), np.concatenate([uj, ui]), torch.cat([s, s])

    def forward(self, x, batch: Batch, cutoff: float, n_rbf: int, alpha: float):
        N, C = x.shape[0], self.channels
        i, j, score = self._edges(x, batch)
        ti, tj = torch.from_numpy(i), torch.from_numpy(j)
        vec = batch.vectors(i, j)
        dist = vec.norm(dim=1)
        feats = rbf(dist, n_rbf, alpha, cutoff)
        inv = pair_invariants(x[ti], x[tj], C, self.lmax)
        w = self.weights(feats, inv, score)
        sh = edge_harmonics(vec, self.lmax)
        msg = tensor_product(self.plan, x[tj], sh, w)
        h = self.update(pad_orders(x, C, self.lmax) + _scatter_sum(msg, i, N))
        return self.out(self.norm(h))


class PairBlock(nn.Module):
    """Diagonal (per atom) and non-diagonal (per pair) feature construction."""

    def __init__(self, channels: int, lmax: int, n_rbf: int, tp_gates: dict[str, SparseTPGate] | None,
                 pair_gate: SparsePairGate | None):
        super().__init__()
        self.channels, self.lmax = channels, lmax
        self.plan = full_plan(lmax, channels)
        nw = self.plan.weight_numel
        self.diag_left = SphLinear(channels, channels, lmax)
        self.diag_right = SphLinear(channels, channels, lmax)
        self.diag_weights = nn.Parameter(torch.empty(nw, dtype=torch.float64))
        self.diag_norm = EquivariantNorm(channels, lmax)
        self.diag_out = SphLinear(channels, channels, lmax)
        self.pair_weights = PairWeights(n_rbf, channels * (2 + lmax), nw)
        self.pair_base = nn.Parameter(torch.empty(nw, dtype=torch.float64))
        self.pair_norm = EquivariantNorm(channels, lmax)
        self.pair_out = SphLinear(channels, channels, lmax)
        tp_gates = tp_gates or {}
        self.diag_gate = tp_gates.get("diag")
        self.pair_tp_gate = tp_gates.get("pair")
        self.pair_gate = pair_gate

    def diagonal(self, x):
        plan, w = self.plan, self.diag_weights
        if self.diag_gate is not None:
            plan, w = self.diag_gate(w)
        f = tensor_product(plan, self.diag_left(x), self.diag_right(x), w)
        return self.diag_out(self.diag_norm(f))

    def nondiagonal(self, x, batch: Batch, feats):
        i, j = batch.pairs
        ti, tj = torch.from_numpy(i), torch.from_numpy(j)
        inv = pair_invariants(x[ti], x[tj], self.channels, self.lmax)
        gate = self.pair_gate
        if gate is not None and not gate.scheduler.inert:
            scores = gate.score(inv)
            keep = np.flatnonzero(gate.select(scores, batch.pair_molecule))
            tk = torch.from_numpy(keep)
            w = self.pair_weights(feats[tk], inv[tk], scores[tk])
            ti, tj = ti[tk], tj[tk]
        else:
            keep = None
            w = self.pair_weights(feats, inv)
        cw = w * self.pair_base[None, :]
        plan = self.plan
        if self.pair_tp_gate is not None:
            plan, cw = self.pair_tp_gate(cw)
        f = self.pair_out(self.pair_norm(tensor_product(plan, x[ti], x[tj], cw)))
        if keep is None:
            return f
        full = f.new_zeros((len(i), f.shape[1]))
        return full.index_copy(0, torch.from_numpy(keep), f)


@dataclass
class HamiltonianPrediction:
    """Assembled symmetric matrices, one per molecule, plus the full-orbital blocks.

    ``diag_blocks[a]`` and ``pair_blocks[p]`` are the unextracted full-orbital
    blocks for atom ``a`` and pair ``p`` (i < j) of the batch.
    """

    matrices: list[torch.Tensor]
    diag_blocks: torch.Tensor
    pair_blocks: torch.Tensor
    batch: Batch
    basis: BasisSpec

    def block(self, mol: int, a: int, b: int) -> torch.Tensor:
        """``h_ab`` of molecule ``mol`` read from the assembled matrix."""
        Z = self.batch.graphs[mol].Z
        offs = np.concatenate([[0], np.cumsum([self.basis.dim(z) for z in Z])])
        H = self.matrices[mol]
        return H[offs[a]:offs[a + 1], offs[b]:offs[b + 1]]


@lru_cache(maxsize=4096)
def _local_gather(basis: BasisSpec, Z: tuple[int, ...]):
    """Per molecule: two flat index arrays into [diag blocks | pair blocks] whose mean is H."""
    n = len(Z)
    F = basis.full_dim
    sq = F * F
    maps = [basis.index_map(z) for z in Z]
    pair_id = {}
    for p, (a, b) in enumerate(zip(*np.triu_indices(n, 1))):
        pair_id[(int(a), int(b))] = p
    dim = sum(len(m) for m in maps)
    idx1 = np.empty((dim, dim), dtype=np.int64)
    idx2 = np.empty((dim, dim), dtype=np.int64)
    offs = np.concatenate([[0], np.cumsum([len(m) for m in maps])])
    for a in range(n):
        ra = maps[a]
        for b in range(n):
            rb = maps[b]
            tgt = (slice(offs[a], offs[a + 1]), slice(offs[b], offs[b + 1]))
            if a == b:
                base = a * sq
                idx1[tgt] = base + ra[:, None] * F + ra[None, :]
                idx2[tgt] = base + ra[None, :] * F + ra[:, None]
            elif a < b:
                base = n * sq + pair_id[(a, b)] * sq
                idx1[tgt] = idx2[tgt] = base + ra[:, None] * F + rb[None, :]
            else:
                base = n * sq + pair_id[(b, a)] * sq
                idx1[tgt] = idx2[tgt] = base + rb[None, :] * F + ra[:, None]
    return idx1, idx2


class ExpansionBlock(nn.Module):
    """Unfolds atom and pair features into full-orbital blocks with type-dependent filters."""

    def __init__(self, channels: int, lmax: int, basis: BasisSpec, n_elements: int):
        super().__init__()
        self.channels, self.basis = channels, basis
        self.plan = build_expansion_plan(IrrepsLayout.uniform(channels, lmax), basis.full)
        self.tensors = ExpansionTensors(self.plan)
        nq = len(self.plan.paths)
        self.diag_embed = nn.Embedding(n_elements, channels, dtype=torch.float64)
        self.diag_filter = nn.Linear(channels, nq * channels, dtype=torch.float64)
        self.pair_embed = nn.Embedding(n_elements, channels, dtype=torch.float64)
        self.pair_filter = nn.Linear(2 * channels, nq * channels, dtype=torch.float64)
        self.diag_embed.weight.is_table = True
        self.pair_embed.weight.is_table = True
        self.diag_bias = nn.Parameter(torch.zeros(channels, dtype=torch.float64))
        self.pair_bias = nn.Parameter(torch.zeros(channels, dtype=torch.float64))

    def forward(self, f_diag, f_pair, zidx: torch.Tensor, batch: Batch) -> HamiltonianPrediction:
        nq, C = len(self.plan.paths), self.channels
        filt_d = self.diag_filter(self.diag_embed(zidx)).reshape(-1, nq, C)
        M_d = tensor_expansion(self.tensors, f_diag, filt_d, self.diag_bias)
        i, j = batch.pairs
        emb = self.pair_embed(zidx)
        pin = torch.cat([emb[torch.from_numpy(i)], emb[torch.from_numpy(j)]], dim=1)
        filt_o = self.pair_filter(pin).reshape(-1, nq, C)
        M_o = tensor_expansion(self.tensors, f_pair, filt_o, self.pair_bias)
        flat = torch.cat([M_d.reshape(-1), M_o.reshape(-1)])
        sq = self.basis.full_dim ** 2
        n_diag = M_d.shape[0] * sq
        mats, pair_base = [], 0
        for m, g in enumerate(batch.graphs):
            n = g.n_atoms
            idx1, idx2 = _local_gather(self.basis, tuple(int(z) for z in g.Z))
            local_pairs = n * (n - 1) // 2
            atom_base = int(batch.atom_offsets[m]) * sq

            def globalize(idx):
                return np.where(idx < n * sq, atom_base + idx, n_diag + pair_base * sq + (idx - n * sq))

            g1 = torch.from_numpy(globalize(idx1))
            g2 = torch.from_numpy(globalize(idx2))
            mats.append(0.5 * (flat[g1] + flat[g2]))
            pair_base += local_pairs
        return HamiltonianPrediction(mats, M_d, M_o, batch, self.basis)


class SPHNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config.validate()
        c = config
        self.basis = get_basis(c.basis)
        self.elements = self.basis.elements
        self._zindex = {z: n for n, z in enumerate(self.elements)}
        C, L, K = c.channels, c.lmax, c.rbf_size
        self.embedding = nn.Embedding(len(self.elements), C, dtype=torch.float64)
        self.embedding.weight.is_table = True
        self.vectorial = nn.ModuleList(VectorialBlock(C, K) for _ in range(c.n_vectorial))

        def pair_gate(name):
            return SparsePairGate(C, L, c.k_pair, c.tss_epoch, _gate_seed(c.seed, name)) if c.gated else None

        def tp_gates(prefix):
            if not c.gated:
                return None
            plan = full_plan(L, C)
            return {
                kind: SparseTPGate(plan, c.k_path, c.tss_epoch, _gate_seed(c.seed, f"{prefix}.{kind}"))
                for kind in ("diag", "pair")
            }

        self.spherical1 = SphericalBlock(C, 1, L, K)
        self.spherical2 = SphericalBlock(C, L, L, K, pair_gate("spherical2"))
        self.pair1 = PairBlock(C, L, K, tp_gates("pair1"), None)
        self.pair2 = PairBlock(C, L, K, tp_gates("pair2"), pair_gate("pair2"))
        self.expansion = ExpansionBlock(C, L, self.basis, len(self.elements))
        initialize(self, c.seed)

    # -- gate control -------------------------------------------------------
    def gates(self):
        return list(iter_gates(self))

    def set_epoch(self, epoch: int) -> None:
        for _, g in self.gates():
            g.set_epoch(epoch)

    def freeze_gates(self) -> None:
        for _, g in self.gates():
            g.freeze()

    def gate_phase(self) -> Phase | None:
        gates = self.gates()
        return gates[0][1].phase if gates else None

    # -- forward -------------------------------------------------------------
    def element_index(self, Z: np.ndarray) -> torch.Tensor:
        try:
            return torch.tensor([self._zindex[int(z)] for z in Z], dtype=torch.long)
        except KeyError as exc:
            raise ModelConfigError(f"element Z={exc.args[0]} has no embedding in basis {self.basis.name!r}") from None

    def embed(self, batch: Batch) -> torch.Tensor:
        return self.embedding(self.element_index(batch.Z))

    def collate(self, graphs: Sequence[MoleculeGraph]) -> Batch:
        return collate(graphs, self.config.cutoff)

    def forward(self, graphs: Sequence[MoleculeGraph] | Batch) -> HamiltonianPrediction:
        c = self.config
        batch = graphs if isinstance(graphs, Batch) else self.collate(graphs)
        C, K = c.channels, c.rbf_size
        zidx = self.element_index(batch.Z)
        x = pad_orders(self.embedding(zidx), C, 1)

        i, j = batch.edges
        vec = batch.vectors(i, j)
        dist = vec.norm(dim=1)
        feats = rbf(dist, K, c.rbf_alpha, c.cutoff)
        unit = vec / dist[:, None] if len(dist) else vec
        for block in self.vectorial:
            x = block(x, batch, feats, unit)

        x1 = self.spherical1(x, batch, c.cutoff, K, c.rbf_alpha)
        x2 = self.spherical2(x1, batch, c.cutoff, K, c.rbf_alpha)

        pi, pj = batch.pairs
        pdist = batch.vectors(pi, pj).norm(dim=1)
        pfeats = rbf(pdist, K, c.rbf_alpha, c.pair_cutoff)
        f_diag = self.pair1.diagonal(x1) + self.pair2.diagonal(x2)
        f_pair = self.pair1.nondiagonal(x1, batch, pfeats) + self.pair2.nondiagonal(x2, batch, pfeats)
        return self.expansion(f_diag, f_pair, zidx, batch)


def _gate_seed(seed: int, name: str) -> int:
    return int(_name_seed(seed, "gate:" + name).generate_state(1)[0])


__all__ = [
    "ExpansionBlock", "HamiltonianPrediction", "ModelConfig", "ModelConfigError", "PairBlock",
    "SPHNet", "SphericalBlock", "VectorialBlock", "initialize", "uniform_dim",
]
