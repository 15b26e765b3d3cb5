"""Tensor-product plans: which paths run, where they read and write, and what they cost."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ..cg import clebsch_gordan, enumerate_paths
from ..irreps import IrrepsError, IrrepsLayout


class PlanError(IrrepsError):
    """Inconsistent plan configuration."""


def _triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l1 - l2) <= l3 <= l1 + l2


@dataclass(frozen=True)
class PathSpec:
    i1: int
    i2: int
    iout: int
    l1: int
    l2: int
    l3: int
    has_weight: bool
    norm: float

    @property
    def ls(self) -> tuple[int, int, int]:
        return (self.l1, self.l2, self.l3)

    @property
    def block_cost(self) -> int:
        return (2 * self.l1 + 1) * (2 * self.l2 + 1) * (2 * self.l3 + 1)


def _unique_l_index(layout: IrrepsLayout) -> dict[int, int]:
    idx: dict[int, int] = {}
    for i, (_, l) in enumerate(layout):
        if l in idx:
            raise PlanError(f"layout {layout} repeats order {l}; channel-aligned plans need one entry per order")
        idx[l] = i
    return idx


@dataclass(frozen=True, eq=False)
class TensorProductPlan:
    """Channel-aligned weighted CG tensor product.

    Channel ``u`` of input 1 couples with channel ``u`` of input 2 (or with
    its only channel when input 2 has multiplicity 1) into channel ``u`` of
    the output.  Weights are laid out path-major: ``w[p * channels + u]``
    over weighted paths in plan order.
    """

    layout1: IrrepsLayout
    layout2: IrrepsLayout
    layout_out: IrrepsLayout
    paths: tuple[PathSpec, ...]
    channels: int
    broadcast2: bool

    @property
    def weighted_paths(self) -> tuple[PathSpec, ...]:
        return tuple(p for p in self.paths if p.has_weight)

    @property
    def weight_numel(self) -> int:
        return len(self.weighted_paths) * self.channels

    @property
    def path_keys(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(p.ls for p in self.paths)

    def weight_offsets(self) -> dict[tuple[int, int, int], int]:
        out, pos = {}, 0
        for p in self.paths:
            if p.has_weight:
                out[p.ls] = pos
                pos += self.channels
        return out

    @functools.cached_property
    def kernel_tables(self):
        """Flat integer/float tables consumed by the compute kernels.

        Rows of ``table``: (off1, off2, offout, d1, d2, d3, cg_offset, w_offset),
        ``w_offset = -1`` for unweighted paths.  Built lazily so cost-only plans
        at large L never touch CG coefficients.
        """
        offs1, offs2, offs3 = self.layout1.offsets(), self.layout2.offsets(), self.layout_out.offsets()
        rows, norms, blocks = [], [], []
        cg_pos, w_pos = 0, 0
        for p in self.paths:
            d1, d2, d3 = 2 * p.l1 + 1, 2 * p.l2 + 1, 2 * p.l3 + 1
            rows.append((offs1[p.i1], offs2[p.i2], offs3[p.iout], d1, d2, d3, cg_pos,
                         w_pos if p.has_weight else -1))
            if p.has_weight:
                w_pos += self.channels
            blocks.append(clebsch_gordan(p.l1, p.l2, p.l3).reshape(-1))
            cg_pos += d1 * d2 * d3
            norms.append(p.norm)
        table = np.array(rows, dtype=np.int64).reshape(-1, 8)
        cg = np.concatenate(blocks) if blocks else np.zeros(0)
        for arr in (table, cg):
            arr.setflags(write=False)
        norms_arr = np.array(norms, dtype=np.float64)
        norms_arr.setflags(write=False)
        return table, norms_arr, np.ascontiguousarray(cg)

    def subplan(self, selected: Iterable[tuple[int, int, int]]) -> "TensorProductPlan":
        """Same layouts and normalization, restricted to ``selected`` paths."""
        keep = set(map(tuple, selected))
        unknown = keep - set(self.path_keys)
        if unknown:
            raise PlanError(f"paths {sorted(unknown)} are not part of this plan")
        return TensorProductPlan(
            self.layout1, self.layout2, self.layout_out,
            tuple(p for p in self.paths if p.ls in keep), self.channels, self.broadcast2,
        )


def build_plan(
    layout1: IrrepsLayout,
    layout2: IrrepsLayout,
    layout_out: IrrepsLayout,
    selected_paths: Iterable[tuple[int, int, int]] | None = None,
    weighted: bool = True,
) -> TensorProductPlan:
    """Plan the channel-aligned tensor product restricted to ``selected_paths``.

    ``None`` selects every triangle-valid path the layouts admit.  Each
    path's normalization is ``1/sqrt(n)`` with ``n`` the number of valid
    paths landing on its output order over the *complete* layouts, so a
    sub-plan is numerically the full plan with the other weights zeroed.
    """
    idx1, idx2, idx3 = _unique_l_index(layout1), _unique_l_index(layout2), _unique_l_index(layout_out)
    muls1 = {mul for mul, _ in layout1}
    muls2 = {mul for mul, _ in layout2}
    muls3 = {mul for mul, _ in layout_out}
    if len(muls1) != 1 or muls1 != muls3:
        raise PlanError(f"input 1 {layout1} and output {layout_out} need one shared multiplicity")
    channels = muls1.pop()
    if muls2 not in ({channels}, {1}):
        raise PlanError(f"input 2 {layout2} must have multiplicity {channels} or 1")
    broadcast2 = muls2 == {1} and channels != 1

    universe = [
        (l1, l2, l3)
        for l1 in sorted(idx1) for l2 in sorted(idx2) for l3 in sorted(idx3)
        if _triangle(l1, l2, l3)
    ]
    fan_in: dict[int, int] = {}
    for _, _, l3 in universe:
        fan_in[l3] = fan_in.get(l3, 0) + 1

    if selected_paths is None:
        chosen = set(universe)
    else:
        chosen = {tuple(int(v) for v in p) for p in selected_paths}
        for l1, l2, l3 in chosen:
            if not _triangle(l1, l2, l3):
                raise PlanError(f"path {(l1, l2, l3)} violates the triangle rule")
            for l, idx, name in ((l1, idx1, "input 1"), (l2, idx2, "input 2"), (l3, idx3, "output")):
                if l not in idx:
                    raise PlanError(f"path {(l1, l2, l3)} needs order {l} absent from {name}")

    paths = tuple(
        PathSpec(idx1[l1], idx2[l2], idx3[l3], l1, l2, l3, weighted, 1.0 / math.sqrt(fan_in[l3]))
        for (l1, l2, l3) in universe if (l1, l2, l3) in chosen
    )
    return TensorProductPlan(layout1, layout2, layout_out, paths, channels, broadcast2)


def full_plan(lmax: int, channels: int, weighted: bool = True) -> TensorProductPlan:
    layout = IrrepsLayout.uniform(channels, lmax)
    return build_plan(layout, layout, layout, None, weighted)


def dense_cost(plan: TensorProductPlan) -> int:
    """Multiply-accumulates of the dense per-path contraction for one sample."""
    return sum(p.block_cost for p in plan.paths) * plan.channels


def enumerated_cost(lmax: int, channels: int = 1) -> int:
    """Same count as ``dense_cost(full_plan(lmax, channels))`` without building a plan."""
    return channels * sum(
        (2 * a + 1) * (2 * b + 1) * (2 * c + 1) for a, b, c in enumerate_paths(lmax)
    )


@dataclass(frozen=True)
class ExpansionPath:
    a: int        # orbital index along rows
    b: int        # orbital index along columns
    l_in: int
    la: int
    lb: int


@dataclass(frozen=True, eq=False)
class ExpansionPlan:
    """Unfolds pair features into a dense block over an orbital list.

    ``orbitals`` gives one order per orbital shell, e.g. ``(0, 0, 0, 1, 1, 2)``
    for three s, two p and one d shell, which spans 14 rows and columns.
    """

    layout_in: IrrepsLayout
    orbitals: tuple[int, ...]
    paths: tuple[ExpansionPath, ...]
    channels: int
    row_offsets: tuple[int, ...] = field(repr=False)

    @property
    def dim(self) -> int:
        return sum(2 * l + 1 for l in self.orbitals)

    @property
    def orbital_layout(self) -> IrrepsLayout:
        return IrrepsLayout((1, l) for l in self.orbitals)

    @functools.cached_property
    def placement(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Per input order: (path indices, tensor E of shape (n_paths, dim, dim, 2l+1))."""
        out = {}
        for l_in in sorted({p.l_in for p in self.paths}):
            ids = [q for q, p in enumerate(self.paths) if p.l_in == l_in]
            E = np.zeros((len(ids), self.dim, self.dim, 2 * l_in + 1))
            for n, q in enumerate(ids):
                p = self.paths[q]
                ra, rb = self.row_offsets[p.a], self.row_offsets[p.b]
                E[n, ra:ra + 2 * p.la + 1, rb:rb + 2 * p.lb + 1, :] = clebsch_gordan(p.la, p.lb, l_in)
            E.setflags(write=False)
            ids_arr = np.array(ids, dtype=np.int64)
            out[l_in] = (ids_arr, E)
        return out


def build_expansion_plan(layout_in: IrrepsLayout, orbitals: Iterable[int]) -> ExpansionPlan:
    orbs = tuple(int(l) for l in orbitals)
    idx = _unique_l_index(layout_in)
    muls = {mul for mul, _ in layout_in}
    if len(muls) != 1:
        raise PlanError(f"expansion input {layout_in} needs a single multiplicity")
    paths = []
    for a, la in enumerate(orbs):
        for b, lb in enumerate(orbs):
            for l_in in range(abs(la - lb), la + lb + 1):
                if l_in not in idx:
                    raise PlanError(
                        f"orbital pair ({la},{lb}) needs order {l_in}, absent from {layout_in}"
                    )
                paths.append(ExpansionPath(a, b, l_in, la, lb))
    offs, pos = [], 0
    for l in orbs:
        offs.append(pos)
        pos += 2 * l + 1
    return ExpansionPlan(layout_in, orbs, tuple(paths), muls.pop(), tuple(offs))
