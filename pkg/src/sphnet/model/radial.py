"""Exponential Bernstein radial basis with a smooth cutoff."""
from __future__ import annotations

import math

import torch


def cutoff(r: torch.Tensor, c: float) -> torch.Tensor:
    """``exp(-r^2 / ((c - r)(c + r)))`` inside the cutoff, exactly 0 outside."""
    inside = r < c
    safe = torch.where(inside, r, torch.zeros_like(r))
    val = torch.exp(-safe * safe / ((c - safe) * (c + safe)))
    return torch.where(inside, val, torch.zeros_like(r))


def bernstein(r: torch.Tensor, size: int, alpha: float) -> torch.Tensor:
    """``C(K-1, n) u^n (1-u)^(K-1-n)`` with ``u = exp(-alpha r)``; sums to one over n."""
    u = torch.exp(-alpha * r)[..., None]
    n = torch.arange(size, dtype=r.dtype)
    coef = torch.tensor([math.comb(size - 1, k) for k in range(size)], dtype=r.dtype)
    return coef * u ** n * (1.0 - u) ** (size - 1 - n)


def rbf(r: torch.Tensor, size: int = 16, alpha: float = 0.8, c: float = 5.0) -> torch.Tensor:
    """(..., K) radial features, zero for r >= c."""
    return bernstein(r, size, alpha) * cutoff(r, c)[..., None]
