"""Wigner-D matrices in the real SH basis and rotation of equivariant vectors."""
from __future__ import annotations

import math

import numpy as np

from .irreps import EquivariantVector, IrrepsLayout, Rotation
from .spherical import real_spherical_harmonics


def _fibonacci_directions(n: int, offset: float) -> np.ndarray:
    k = np.arange(n) + offset
    z = 1.0 - 2.0 * k / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = k * math.pi * (3.0 - math.sqrt(5.0)) + 0.37 * offset
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)


# fixed direction sets; the second is used only if the first is rank deficient
_DIRECTION_OFFSETS = (0.5, 0.271828)


def _as_matrix(R) -> np.ndarray:
    return R.matrix if isinstance(R, Rotation) else Rotation(R).matrix


def wigner_d(l: int, R) -> np.ndarray:
    """``D`` with ``Y^l(R r) = D @ Y^l(r)``, fitted on sample directions."""
    mat = _as_matrix(R)
    d = 2 * l + 1
    n = max(4 * d, 64)
    for offset in _DIRECTION_OFFSETS:
        dirs = _fibonacci_directions(n, offset)
        a = real_spherical_harmonics(l, dirs)[l]
        b = real_spherical_harmonics(l, dirs @ mat.T)[l]
        sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
        if rank == d:
            return sol.T
    raise ArithmeticError(f"sample system for l={l} is rank deficient on every direction set")


def wigner_d_layout(layout: IrrepsLayout, R) -> np.ndarray:
    """Block-diagonal representation matrix acting on a full layout row."""
    mat = _as_matrix(R)
    cache: dict[int, np.ndarray] = {}
    out = np.zeros((layout.total_dim, layout.total_dim))
    for (mul, l), sl in zip(layout, layout.slices()):
        if l not in cache:
            cache[l] = wigner_d(l, mat)
        d = 2 * l + 1
        for u in range(mul):
            s = sl.start + u * d
            out[s:s + d, s:s + d] = cache[l]
    return out


def rotate(x: EquivariantVector, R) -> EquivariantVector:
    """Apply the block-diagonal Wigner-D per (channel, l) slice."""
    mat = _as_matrix(R)
    cache: dict[int, np.ndarray] = {}
    vals = np.empty_like(x.values)
    for i, ((mul, l), sl) in enumerate(zip(x.layout, x.layout.slices())):
        if l not in cache:
            cache[l] = wigner_d(l, mat)
        blk = x.block(i)  # (batch, mul, 2l+1)
        vals[:, sl] = (blk @ cache[l].T).reshape(x.batch, -1)
    return EquivariantVector(x.layout, vals)
