"""Clebsch-Gordan coefficients in the real spherical-harmonic basis."""
from __future__ import annotations

import contextlib
import functools
import math
import threading

import numpy as np

from .irreps import IrrepsError
from .spherical import complex_to_real_sh_transform


def _lfact(n: int) -> float:
    return math.lgamma(n + 1)


def _triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l1 - l2) <= l3 <= l1 + l2


def complex_cg(l1: int, m1: int, l2: int, m2: int, l3: int, m3: int) -> float:
    """<l1 m1 l2 m2 | l3 m3> from the Racah closed form (Condon-Shortley phase)."""
    if m1 + m2 != m3 or not _triangle(l1, l2, l3):
        return 0.0
    if abs(m1) > l1 or abs(m2) > l2 or abs(m3) > l3:
        return 0.0
    pre = 0.5 * (
        math.log(2 * l3 + 1)
        + _lfact(l3 + l1 - l2) + _lfact(l3 - l1 + l2) + _lfact(l1 + l2 - l3) - _lfact(l1 + l2 + l3 + 1)
        + _lfact(l3 + m3) + _lfact(l3 - m3)
        + _lfact(l1 - m1) + _lfact(l1 + m1) + _lfact(l2 - m2) + _lfact(l2 + m2)
    )
    kmin = max(0, l2 - l3 - m1, l1 - l3 + m2)
    kmax = min(l1 + l2 - l3, l1 - m1, l2 + m2)
    total = 0.0
    for k in range(kmin, kmax + 1):
        log_den = (
            _lfact(k) + _lfact(l1 + l2 - l3 - k) + _lfact(l1 - m1 - k)
            + _lfact(l2 + m2 - k) + _lfact(l3 - l2 + m1 + k) + _lfact(l3 - l1 - m2 + k)
        )
        total += (-1) ** k * math.exp(pre - log_den)
    return total


def _complex_block(l1: int, l2: int, l3: int) -> np.ndarray:
    block = np.zeros((2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                block[m1 + l1, m2 + l2, m3 + l3] = complex_cg(l1, m1, l2, m2, l3, m3)
    return block


@functools.lru_cache(maxsize=None)
def _real_block(l1: int, l2: int, l3: int) -> np.ndarray:
    c = _complex_block(l1, l2, l3)
    u1, u2, u3 = (complex_to_real_sh_transform(l) for l in (l1, l2, l3))
    real = np.einsum("ai,bj,ck,ijk->abc", u1.conj(), u2.conj(), u3, c)
    # global phase i^(l1+l2-l3) makes odd-sum couplings real; the intertwined
    # real Wigner-D matrices are unaffected by a scalar phase
    real = real * (1j) ** (l1 + l2 - l3)
    if np.abs(real.imag).max() > 1e-12:
        raise ArithmeticError(f"real CG block ({l1},{l2},{l3}) has imaginary residue")
    out = np.ascontiguousarray(real.real)
    out.setflags(write=False)
    return out


_overrides: dict[tuple[int, int, int], np.ndarray] = {}
_override_lock = threading.Lock()


def clebsch_gordan(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real CG block of shape (2l1+1, 2l2+1, 2l3+1).

    For each m3 the block is unit-norm over (m1, m2), and stacking all valid
    l3 for a fixed (l1, l2) gives an orthogonal change of basis.
    """
    if min(l1, l2, l3) < 0 or not _triangle(l1, l2, l3):
        raise IrrepsError(f"({l1},{l2},{l3}) violates the triangle rule")
    key = (int(l1), int(l2), int(l3))
    if _overrides:
        hit = _overrides.get(key)
        if hit is not None:
            return hit
    return _real_block(*key)


@contextlib.contextmanager
def corrupted_cg(l1: int, l2: int, l3: int, scale: float = 1.05):
    """Test hook: temporarily return a rescaled/perturbed block for one triple."""
    good = _real_block(l1, l2, l3)
    bad = good.copy()
    bad *= scale
    flat = bad.reshape(-1)
    flat[np.argmax(np.abs(flat))] += 0.1
    bad.setflags(write=False)
    with _override_lock:
        _overrides[(l1, l2, l3)] = bad
    try:
        yield bad
    finally:
        with _override_lock:
            _overrides.pop((l1, l2, l3), None)


def enumerate_paths(lmax: int) -> list[tuple[int, int, int]]:
    """All (l1, l2, l3) with every order <= lmax and |l1-l2| <= l3 <= l1+l2, lexicographic."""
    if lmax < 0:
        raise IrrepsError("lmax must be non-negative")
    return [
        (l1, l2, l3)
        for l1 in range(lmax + 1)
        for l2 in range(lmax + 1)
        for l3 in range(abs(l1 - l2), min(l1 + l2, lmax) + 1)
    ]
