"""Array-level tensor product, its adjoint, per-order linear maps and tensor expansion."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from ..irreps import EquivariantVector, IrrepsError, IrrepsLayout
from . import backend
from .plan import ExpansionPlan, PlanError, TensorProductPlan


class ContractError(IrrepsError):
    """Operand shapes disagree with the plan."""


def _values(v, layout: IrrepsLayout, name: str) -> np.ndarray:
    if isinstance(v, EquivariantVector):
        if v.layout != layout:
            raise ContractError(f"{name} has layout {v.layout}, plan expects {layout}")
        arr = v.values
    else:
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != layout.total_dim:
        raise ContractError(f"{name} of shape {arr.shape} does not match layout {layout}")
    return np.ascontiguousarray(arr, dtype=np.float64)


def _weights(plan: TensorProductPlan, weights, batch: int) -> np.ndarray:
    if weights is None:
        if plan.weight_numel:
            raise ContractError(f"plan needs {plan.weight_numel} weights")
        return np.zeros((1, 0))
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = w[None, :]
    if w.ndim != 2 or w.shape[1] != plan.weight_numel or w.shape[0] not in (1, batch):
        raise ContractError(
            f"weights of shape {np.shape(weights)} do not match {plan.weight_numel} per sample"
        )
    return np.ascontiguousarray(w)


def tp_forward_arrays(plan: TensorProductPlan, x: np.ndarray, y: np.ndarray, w: np.ndarray,
                      kernels=None) -> np.ndarray:
    """Raw kernel call on validated contiguous arrays; ``w`` is (1 or batch, n_weights)."""
    table, norms, cg = plan.kernel_tables
    out = np.zeros((x.shape[0], plan.layout_out.total_dim))
    if x.shape[0] and len(plan.paths):
        (kernels or backend.active()).tp_forward(
            x, y, w, table, norms, cg, plan.channels, plan.broadcast2, out)
    return out


def tp_backward_arrays(plan: TensorProductPlan, x, y, w, g, kernels=None):
    table, norms, cg = plan.kernel_tables
    gx, gy, gw = np.zeros_like(x), np.zeros_like(y), np.zeros_like(w)
    if x.shape[0] and len(plan.paths):
        (kernels or backend.active()).tp_backward(
            x, y, w, table, norms, cg, plan.channels, plan.broadcast2,
            np.ascontiguousarray(g, dtype=np.float64), gx, gy, gw)
    return gx, gy, gw


def _check_pair(plan, x, y):
    xv = _values(x, plan.layout1, "x")
    yv = _values(y, plan.layout2, "y")
    if xv.shape[0] != yv.shape[0]:
        raise ContractError(f"batch sizes differ: {xv.shape[0]} vs {yv.shape[0]}")
    return xv, yv


def tp_forward(plan: TensorProductPlan, x, y, weights=None) -> EquivariantVector:
    """Weighted CG product, bilinear in (x, y) and linear in the weights.

    ``weights`` has ``plan.weight_numel`` entries shared by the batch, or one
    such row per sample.
    """
    xv, yv = _check_pair(plan, x, y)
    w = _weights(plan, weights, xv.shape[0])
    return EquivariantVector(plan.layout_out, tp_forward_arrays(plan, xv, yv, w))


def tp_backward(plan: TensorProductPlan, x, y, weights, grad_out):
    """Adjoints ``(grad_x, grad_y, grad_weights)``; grad_weights matches the weight shape."""
    xv, yv = _check_pair(plan, x, y)
    w = _weights(plan, weights, xv.shape[0])
    g = _values(grad_out, plan.layout_out, "grad_out")
    if g.shape[0] != xv.shape[0]:
        raise ContractError("grad_out batch differs from inputs")
    gx, gy, gw = tp_backward_arrays(plan, xv, yv, w, g)
    if weights is not None and np.ndim(weights) == 1:
        gw = gw[0]
    return gx, gy, gw


def sph_linear(weights: Mapping[int, np.ndarray], x: EquivariantVector,
               bias: np.ndarray | None = None) -> EquivariantVector:
    """Per-order channel mixing ``out^l = W_l x^l`` plus an optional l=0 bias.

    ``weights[l]`` is (c_out, c_in); orders of ``x`` missing from ``weights``
    are dropped from the output.
    """
    entries, blocks = [], []
    for i, (mul, l) in enumerate(x.layout):
        if l not in weights:
            continue
        W = np.asarray(weights[l], dtype=np.float64)
        if W.ndim != 2 or W.shape[1] != mul:
            raise ContractError(f"order {l} weight {W.shape} does not take {mul} channels")
        out = np.einsum("oc,bcm->bom", W, x.block(i))
        if l == 0 and bias is not None:
            out = out + np.asarray(bias, dtype=np.float64)[None, :, None]
        entries.append((W.shape[0], l))
        blocks.append(out.reshape(x.batch, -1))
    if not entries:
        raise ContractError("no order of x has a weight block")
    return EquivariantVector(IrrepsLayout(entries), np.concatenate(blocks, axis=1))


def tensor_expansion(plan: ExpansionPlan, f, filter_weights, bias=None) -> np.ndarray:
    """Unfold pair features into dense (dim x dim) blocks, one per sample.

    ``filter_weights`` is (n_paths, channels) or (batch, n_paths, channels);
    ``bias`` (channels,) is added to the l=0 features before unfolding.
    """
    fv = _values(f, plan.layout_in, "f")
    B = fv.shape[0]
    F = np.asarray(filter_weights, dtype=np.float64)
    if F.ndim == 2:
        F = F[None]
    if F.shape[1:] != (len(plan.paths), plan.channels) or F.shape[0] not in (1, B):
        raise PlanError(
            f"filter weights {np.shape(filter_weights)} do not cover "
            f"{len(plan.paths)} paths x {plan.channels} channels"
        )
    fe = EquivariantVector(plan.layout_in, fv)
    out = np.zeros((B, plan.dim, plan.dim))
    for l_in, (ids, E) in plan.placement.items():
        blk = fe.block(plan.layout_in.index_of(l_in))
        if l_in == 0 and bias is not None:
            blk = blk + np.asarray(bias, dtype=np.float64)[None, :, None]
        g = np.einsum("bqc,bcm->bqm", np.broadcast_to(F[:, ids], (B, len(ids), plan.channels)), blk)
        out += np.einsum("bqm,qijm->bij", g, E)
    return out
