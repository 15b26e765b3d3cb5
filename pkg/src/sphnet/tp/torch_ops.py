"""Autograd wrappers around the tensor-product kernels and the expansion."""
from __future__ import annotations

import numpy as np
import torch

from .ops import tp_backward_arrays, tp_forward_arrays
from .plan import ExpansionPlan, TensorProductPlan


def _np(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy(), dtype=np.float64)


class _TensorProduct(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, y, w, plan):
        xa, ya, wa = _np(x), _np(y), _np(w)
        ctx.plan = plan
        ctx.arrays = (xa, ya, wa)
        return torch.from_numpy(tp_forward_arrays(plan, xa, ya, wa))

    @staticmethod
    def backward(ctx, grad):
        xa, ya, wa = ctx.arrays
        gx, gy, gw = tp_backward_arrays(ctx.plan, xa, ya, wa, _np(grad))
        return (
            torch.from_numpy(gx) if ctx.needs_input_grad[0] else None,
            torch.from_numpy(gy) if ctx.needs_input_grad[1] else None,
            torch.from_numpy(gw) if ctx.needs_input_grad[2] else None,
            None,
        )


def tensor_product(plan: TensorProductPlan, x: torch.Tensor, y: torch.Tensor,
                   w: torch.Tensor | None) -> torch.Tensor:
    """Differentiable ``tp_forward``; ``w`` is (n_weights,) shared or (batch, n_weights)."""
    if w is None:
        w = torch.zeros((1, 0), dtype=torch.float64)
    shared = w.dim() == 1
    if shared:
        w = w.unsqueeze(0)
    if x.shape[0] == 0:
        # keep the graph connected so callers can always backprop
        return x.new_zeros((0, plan.layout_out.total_dim)) + 0.0 * w.sum()
    return _TensorProduct.apply(x, y, w, plan)


class ExpansionTensors:
    """Torch copies of an expansion plan's placement tensors."""

    def __init__(self, plan: ExpansionPlan):
        self.plan = plan
        self.groups = [
            (l_in, torch.from_numpy(ids), torch.from_numpy(np.array(E)))
            for l_in, (ids, E) in plan.placement.items()
        ]
        self.slices = {l: plan.layout_in.slices()[plan.layout_in.index_of(l)] for l, _, _ in self.groups}


def tensor_expansion(tensors: ExpansionTensors, f: torch.Tensor, filt: torch.Tensor,
                     bias: torch.Tensor | None = None) -> torch.Tensor:
    """(batch, dim_in) features and (batch, n_paths, C) filters -> (batch, dim, dim)."""
    plan = tensors.plan
    B, C = f.shape[0], plan.channels
    out = f.new_zeros((B, plan.dim, plan.dim))
    for l_in, ids, E in tensors.groups:
        blk = f[:, tensors.slices[l_in]].reshape(B, C, 2 * l_in + 1)
        if l_in == 0 and bias is not None:
            blk = blk + bias[None, :, None]
        g = torch.einsum("bqc,bcm->bqm", filt[:, ids], blk)
        out = out + torch.einsum("bqm,qijm->bij", g, E)
    return out
