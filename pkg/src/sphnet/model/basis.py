"""Per-element orbital shells and their place inside the shared full-orbital block."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SYMBOLS = {1: "H", 6: "C", 7: "N", 8: "O"}
NUMBERS = {s: z for z, s in SYMBOLS.items()}


class BasisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """``shells[Z]`` lists one order per shell; ``full`` is the union every element maps into.

    The n-th shell of order l of an element occupies the n-th shell of order
    l of ``full``.
    """

    name: str
    shells: dict[int, tuple[int, ...]]
    full: tuple[int, ...]

    def __post_init__(self):
        for z in self.shells:
            self.index_map(z)

    @property
    def elements(self) -> tuple[int, ...]:
        return tuple(sorted(self.shells))

    @property
    def full_dim(self) -> int:
        return sum(2 * l + 1 for l in self.full)

    @property
    def lmax(self) -> int:
        return max(self.full)

    def dim(self, z: int) -> int:
        return sum(2 * l + 1 for l in self._shells(z))

    def _shells(self, z: int) -> tuple[int, ...]:
        try:
            return self.shells[int(z)]
        except KeyError:
            raise BasisError(f"element Z={z} is not covered by basis {self.name!r}") from None

    def index_map(self, z: int) -> np.ndarray:
        """Rows of the full-orbital block kept for element ``z``."""
        offsets, pos = [], 0
        for l in self.full:
            offsets.append(pos)
            pos += 2 * l + 1
        used: dict[int, int] = {}
        out = []
        for l in self._shells(z):
            slots = [i for i, lf in enumerate(self.full) if lf == l]
            n = used.get(l, 0)
            if n >= len(slots):
                raise BasisError(f"basis {self.name!r}: element {z} has more order-{l} shells than the full set")
            used[l] = n + 1
            out.extend(range(offsets[slots[n]], offsets[slots[n]] + 2 * l + 1))
        return np.array(out, dtype=np.int64)

    @cached_property
    def index_maps(self) -> dict[int, np.ndarray]:
        return {z: self.index_map(z) for z in self.shells}

    def n_orbitals(self, Z) -> int:
        return int(sum(self.dim(z) for z in Z))

    def to_json(self) -> dict:
        return {"name": self.name, "shells": {SYMBOLS.get(z, str(z)): list(s) for z, s in self.shells.items()},
                "full": list(self.full)}


_HEAVY = (0, 0, 0, 1, 1, 2)

BASES = {
    # three s, two p and one d shell for heavy atoms: a 14-dim full block
    "toy-svp": BasisSpec("toy-svp", {1: (0, 0, 1), 6: _HEAVY, 7: _HEAVY, 8: _HEAVY}, _HEAVY),
    # s/p only, small enough for finite-difference checks at L <= 3
    "toy-sp": BasisSpec("toy-sp", {1: (0,), 6: (0, 0, 1), 7: (0, 0, 1), 8: (0, 0, 1)}, (0, 0, 1)),
}


def get_basis(name: str) -> BasisSpec:
    try:
        return BASES[name]
    except KeyError:
        raise BasisError(f"unknown basis {name!r}; known: {sorted(BASES)}") from None
