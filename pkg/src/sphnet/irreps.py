"""Irreducible-representation data model for SO(3) features.

Features are stored flat, one row per entry (atom, pair, sample), with the
columns of each ``(mul, l)`` block laid out channel-major::

    [u=0: m=-l..l][u=1: m=-l..l] ... [u=mul-1: m=-l..l]
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class IrrepsError(ValueError):
    """Invalid layout, vector or rotation."""


@dataclass(frozen=True, order=True)
class Irrep:
    l: int

    def __post_init__(self):
        if not isinstance(self.l, (int, np.integer)) or self.l < 0:
            raise IrrepsError(f"irrep order must be a non-negative integer, got {self.l!r}")

    @property
    def dim(self) -> int:
        return 2 * self.l + 1

    def __repr__(self):
        return f"{self.l}"


@dataclass(frozen=True)
class IrrepsLayout:
    """Ordered ``(multiplicity, l)`` entries.

    >>> layout = IrrepsLayout.uniform(8, 2)
    >>> str(layout), layout.total_dim
    ('8x0+8x1+8x2', 72)
    """

    entries: tuple[tuple[int, int], ...]

    def __init__(self, entries: Iterable[Sequence[int]]):
        ents = tuple((int(mul), int(l)) for mul, l in entries)
        for mul, l in ents:
            if mul <= 0:
                raise IrrepsError(f"multiplicity must be positive, got {mul}")
            if l < 0:
                raise IrrepsError(f"order must be non-negative, got {l}")
        object.__setattr__(self, "entries", ents)

    @classmethod
    def uniform(cls, channels: int, lmax: int, lmin: int = 0) -> "IrrepsLayout":
        return cls((channels, l) for l in range(lmin, lmax + 1))

    @classmethod
    def parse(cls, text: str) -> "IrrepsLayout":
        """Parse ``"8x0+8x1"`` style strings; a bare ``"2"`` means ``"1x2"``."""
        entries = []
        for part in text.replace(" ", "").split("+"):
            m = re.fullmatch(r"(?:(\d+)x)?(-?\d+)", part)
            if m is None:
                raise IrrepsError(f"cannot parse irreps term {part!r} in {text!r}")
            entries.append((int(m.group(1) or 1), int(m.group(2))))
        return cls(entries)

    def __str__(self):
        return "+".join(f"{mul}x{l}" for mul, l in self.entries)

    def __repr__(self):
        return f"IrrepsLayout('{self}')"

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def total_dim(self) -> int:
        return sum(mul * (2 * l + 1) for mul, l in self.entries)

    @property
    def lmax(self) -> int:
        return max((l for _, l in self.entries), default=0)

    @property
    def ls(self) -> tuple[int, ...]:
        return tuple(l for _, l in self.entries)

    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 0
        for mul, l in self.entries:
            out.append(pos)
            pos += mul * (2 * l + 1)
        return tuple(out)

    def slices(self) -> tuple[slice, ...]:
        return tuple(
            slice(off, off + mul * (2 * l + 1))
            for off, (mul, l) in zip(self.offsets(), self.entries)
        )

    def index_of(self, l: int) -> int:
        """Index of the unique entry with order ``l``."""
        hits = [i for i, (_, el) in enumerate(self.entries) if el == l]
        if len(hits) != 1:
            raise IrrepsError(f"layout {self} has {len(hits)} entries of order {l}")
        return hits[0]


@dataclass
class EquivariantVector:
    """A batch of features living in ``layout``; ``values`` has shape (batch, dim)."""

    layout: IrrepsLayout
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != self.layout.total_dim:
            raise IrrepsError(
                f"values of shape {vals.shape} do not match layout {self.layout} "
                f"(dim {self.layout.total_dim})"
            )
        if not np.all(np.isfinite(vals)):
            raise IrrepsError("EquivariantVector entries must be finite")
        self.values = vals

    @classmethod
    def zeros(cls, layout: IrrepsLayout, batch: int = 1) -> "EquivariantVector":
        return cls(layout, np.zeros((batch, layout.total_dim)))

    @classmethod
    def random(cls, layout: IrrepsLayout, batch: int = 1, rng=None) -> "EquivariantVector":
        rng = np.random.default_rng(rng)
        return cls(layout, rng.standard_normal((batch, layout.total_dim)))

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    def block(self, i: int) -> np.ndarray:
        """View of entry ``i`` as (batch, mul, 2l+1)."""
        mul, l = self.layout[i]
        return self.values[:, self.layout.slices()[i]].reshape(self.batch, mul, 2 * l + 1)

    def __add__(self, other: "EquivariantVector") -> "EquivariantVector":
        if other.layout != self.layout:
            raise IrrepsError("layout mismatch")
        return EquivariantVector(self.layout, self.values + other.values)

    def __mul__(self, scalar: float) -> "EquivariantVector":
        return EquivariantVector(self.layout, self.values * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Rotation:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise IrrepsError(f"rotation must be 3x3, got {m.shape}")
        if np.abs(m.T @ m - np.eye(3)).max() > 1e-12:
            raise IrrepsError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise IrrepsError("rotation matrix must have determinant +1")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def random(cls, rng=None) -> "Rotation":
        rng = np.random.default_rng(rng)
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        # re-orthonormalise so the 1e-12 contract holds after the sign flips
        u, _, vt = np.linalg.svd(q)
        return cls(u @ vt)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)
