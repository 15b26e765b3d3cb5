"""Equivariant building blocks shared by the network stages."""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..irreps import IrrepsLayout
from ..spherical import real_spherical_harmonics


def uniform_dim(channels: int, lmax: int) -> int:
    return channels * (lmax + 1) ** 2


def pad_orders(x: torch.Tensor, channels: int, lmax: int) -> torch.Tensor:
    """Zero-extend a uniform ``C x 0..l`` feature to orders ``0..lmax``."""
    extra = uniform_dim(channels, lmax) - x.shape[1]
    if extra < 0:
        raise ValueError(f"feature of width {x.shape[1]} exceeds order {lmax}")
    return torch.nn.functional.pad(x, (0, extra)) if extra else x


def edge_harmonics(vec: torch.Tensor, lmax: int) -> torch.Tensor:
    """(E, (lmax+1)^2) real SH of the edge directions, concatenated over orders."""
    if vec.shape[0] == 0:
        return vec.new_zeros((0, (lmax + 1) ** 2))
    sh = real_spherical_harmonics(lmax, vec.detach().numpy())
    return torch.from_numpy(np.concatenate(sh, axis=-1))


def as_l1(vec: torch.Tensor) -> torch.Tensor:
    """Cartesian (x, y, z) to the (y, z, x) component order of l=1 features."""
    return vec[..., [1, 2, 0]]


class SphLinear(nn.Module):
    """Per-order channel mixing between uniform layouts; l=0 carries a bias."""

    def __init__(self, c_in: int, c_out: int, lmax_in: int, lmax_out: int | None = None):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.lmax_in = lmax_in
        self.lmax_out = lmax_in if lmax_out is None else lmax_out
        self.weights = nn.ParameterList(
            nn.Parameter(torch.empty(c_out, c_in, dtype=torch.float64))
            for _ in range(min(self.lmax_in, self.lmax_out) + 1)
        )
        self.bias = nn.Parameter(torch.zeros(c_out, dtype=torch.float64))

    @property
    def layout_out(self) -> IrrepsLayout:
        return IrrepsLayout.uniform(self.c_out, self.lmax_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        parts, pos = [], 0
        for l in range(self.lmax_out + 1):
            d = 2 * l + 1
            if l < len(self.weights):
                blk = x[:, pos:pos + self.c_in * d].reshape(n, self.c_in, d)
                out = torch.einsum("oc,ncm->nom", self.weights[l], blk)
                if l == 0:
                    out = out + self.bias[None, :, None]
                parts.append(out.reshape(n, self.c_out * d))
                pos += self.c_in * d
            else:
                parts.append(x.new_zeros((n, self.c_out * d)))
        return torch.cat(parts, dim=1)


class EquivariantNorm(nn.Module):
    """Layer norm on l=0; orders l>0 share one rotation-invariant RMS divisor.

    The divisor is ``sqrt(mean_{l>0} [ (1/(2l+1)) sum_m mean_c (x^l_m)^2 ] + eps)``.
    """

    def __init__(self, channels: int, lmax: int, eps: float = 1e-6):
        super().__init__()
        self.channels, self.lmax, self.eps = channels, lmax, eps
        self.scalar_norm = nn.LayerNorm(channels, eps=eps, dtype=torch.float64)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        C = self.channels
        s = self.scalar_norm(x[:, :C])
        if self.lmax == 0:
            return s
        rest = x[:, C:]
        stat, pos = 0.0, 0
        for l in range(1, self.lmax + 1):
            d = 2 * l + 1
            blk = rest[:, pos:pos + C * d]
            stat = stat + blk.pow(2).sum(dim=1) / (C * d)
            pos += C * d
        denom = torch.sqrt(stat / self.lmax + self.eps)
        return torch.cat([s, rest / denom[:, None]], dim=1)


class RadialWeights(nn.Module):
    """Bias-free linear map of RBF features, so weights vanish beyond the cutoff."""

    def __init__(self, n_rbf: int, n_out: int):
        super().__init__()
        self.lin = nn.Linear(n_rbf, n_out, bias=False, dtype=torch.float64)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.lin(feats)


class PairWeights(nn.Module):
    """``w_ij = F_r(rbf) * F_s(s * I_ij)`` with bias-free ``F_r`` and ``F_s``."""

    def __init__(self, n_rbf: int, n_inv: int, n_out: int):
        super().__init__()
        self.radial = nn.Linear(n_rbf, n_out, bias=False, dtype=torch.float64)
        self.invariant = nn.Linear(n_inv, n_out, bias=False, dtype=torch.float64)

    def forward(self, feats: torch.Tensor, inv: torch.Tensor, score: torch.Tensor | None = None):
        if score is not None:
            inv = inv * score[:, None]
        return self.radial(feats) * self.invariant(inv)
