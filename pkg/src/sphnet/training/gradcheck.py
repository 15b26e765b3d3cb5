"""Finite-difference verification of the model's analytic gradients."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np
import torch

from ..model.network import SPHNet
from .metrics import batch_loss


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


@contextlib.contextmanager
def pinned_selections(model: SPHNet, graphs):
    """Run once, then hold every gate at the selection it just made."""
    with torch.no_grad():
        model(graphs)
    gates = [g for _, g in model.gates()]
    for g in gates:
        g.pin(g.last_mask)
    try:
        yield
    finally:
        for g in gates:
            g.pin(None)


def total_loss(model: SPHNet, graphs, refs) -> torch.Tensor:
    pred = model(graphs)
    mae, mse = batch_loss(pred.matrices, refs)
    return mae + mse


def grad_check(model: SPHNet, graphs, refs, step: float = 1e-5, per_group: int = 4,
               seed: int = 0) -> GradCheckReport:
    """Central differences on sampled entries of every parameter.

    The relative error of a group is ``max|fd - an| / max(max|an|, 1e-8)``.
    Gate selections are pinned so the loss is smooth in every parameter.
    """
    refs = [torch.as_tensor(r, dtype=torch.float64) for r in refs]
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    with pinned_selections(model, graphs):
        model.zero_grad(set_to_none=True)
        total_loss(model, graphs, refs).backward()
        for name, p in model.named_parameters():
            an_full = p.grad
            if an_full is None:
                continue
            flat = p.data.view(-1)
            picks = rng.choice(flat.numel(), size=min(per_group, flat.numel()), replace=False)
            fd, an = [], []
            with torch.no_grad():
                for k in picks:
                    orig = flat[k].item()
                    flat[k] = orig + step
                    up = total_loss(model, graphs, refs).item()
                    flat[k] = orig - step
                    down = total_loss(model, graphs, refs).item()
                    flat[k] = orig
                    fd.append((up - down) / (2 * step))
                    an.append(an_full.view(-1)[k].item())
            fd, an = np.array(fd), np.array(an)
            report.errors[name] = float(np.abs(fd - an).max() / max(np.abs(an).max(), 1e-8))
            report.checked[name] = len(picks)
    return report
