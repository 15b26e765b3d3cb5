"""Real spherical harmonics in the orthonormal (unit-integral) convention.

Real orders within each ``l`` run ``m = -l..l``; for ``l = 1`` that is
``(y, z, x) * sqrt(3 / 4pi)``.  The basis is tied to the complex harmonics
(Condon-Shortley phase) by :func:`complex_to_real_sh_transform`.
"""
from __future__ import annotations

import math

import numpy as np

from .irreps import IrrepsError


def _normalize_directions(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 3:
        raise IrrepsError(f"expected 3-vectors, got shape {r.shape}")
    norm = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise IrrepsError("spherical harmonics are undefined for a zero-length vector")
    return r / norm


def real_spherical_harmonics(l_max: int, r) -> list[np.ndarray]:
    """Evaluate ``Y^l(r/|r|)`` for ``l = 0..l_max``.

    ``r`` has shape (..., 3); entry ``l`` of the result has shape (..., 2l+1).
    Uses the polynomial form ``Y_lm ~ d^m P_l(z) * Re/Im (x + iy)^m`` so the
    poles need no special casing.
    """
    if l_max < 0:
        raise IrrepsError("l_max must be non-negative")
    u = _normalize_directions(r)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]

    # q[l][m] = d^m P_l / dz^m, built per m by upward recursion in l
    q = [[None] * (l_max + 1) for _ in range(l_max + 1)]
    for m in range(l_max + 1):
        dfact = float(np.prod(np.arange(2 * m - 1, 0, -2))) if m > 0 else 1.0
        q[m][m] = np.full_like(z, dfact)
        if m + 1 <= l_max:
            q[m + 1][m] = (2 * m + 1) * z * q[m][m]
        for l in range(m + 2, l_max + 1):
            q[l][m] = ((2 * l - 1) * z * q[l - 1][m] - (l + m - 1) * q[l - 2][m]) / (l - m)

    # (x + iy)^m split into cos-like and sin-like parts
    cos_m = [np.ones_like(x)]
    sin_m = [np.zeros_like(x)]
    for m in range(1, l_max + 1):
        c, s = cos_m[-1], sin_m[-1]
        cos_m.append(c * x - s * y)
        sin_m.append(s * x + c * y)

    out = []
    for l in range(l_max + 1):
        block = np.empty(z.shape + (2 * l + 1,))
        for m in range(l + 1):
            norm = math.sqrt(
                (2 * l + 1) / (4 * math.pi) * math.exp(math.lgamma(l - m + 1) - math.lgamma(l + m + 1))
            )
            if m == 0:
                block[..., l] = norm * q[l][0]
            else:
                block[..., l + m] = math.sqrt(2.0) * norm * q[l][m] * cos_m[m]
                block[..., l - m] = math.sqrt(2.0) * norm * q[l][m] * sin_m[m]
        out.append(block)
    return out


def complex_to_real_sh_transform(l: int) -> np.ndarray:
    """Unitary ``U`` with ``Y_real = U @ Y_complex`` (rows real m, columns complex m)."""
    if l < 0:
        raise IrrepsError("l must be non-negative")
    d = 2 * l + 1
    u = np.zeros((d, d), dtype=np.complex128)
    s = 1.0 / math.sqrt(2.0)
    for m in range(-l, l + 1):
        row = m + l
        if m < 0:
            u[row, m + l] = 1j * s
            u[row, -m + l] = -1j * s * (-1) ** m
        elif m == 0:
            u[row, l] = 1.0
        else:
            u[row, -m + l] = s
            u[row, m + l] = s * (-1) ** m
    return u
