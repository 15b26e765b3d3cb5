"""Training loop with phase-driven gates, warmup, metric trace and NaN guard."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..model.network import ModelConfig, SPHNet
from ..sparsity import Phase, SparseTPGate
from .data import Dataset
from .eig import gen_eig
from .metrics import batch_loss, molecule_metrics

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("epoch", "loss_mae", "loss_mse", "H_mae", "eps_mae", "psi")
SCHEDULES = ("constant", "polynomial")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/step where it happened."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr: float = 2e-3
    warmup_steps: int = 100
    seed: int = 0
    eval_every: int = 1
    schedule: str = "constant"  # or "polynomial": linear decay to zero after warmup

    def validate(self) -> "TrainConfig":
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.warmup_steps < 0:
            raise ValueError(f"invalid training settings: {self}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        return self


def lr_factor(step: int, warmup: int, total: int, schedule: str) -> float:
    """Multiplier on the peak rate: linear warmup, then constant or linear decay to zero."""
    if step < warmup:
        return (step + 1) / warmup
    if schedule == "constant" or total <= warmup:
        return 1.0
    return max(0.0, (total - step) / (total - warmup))


@dataclass
class TrainResult:
    model: SPHNet
    trace: list[dict] = field(default_factory=list)
    optimizer: torch.optim.Optimizer | None = None
    steps: int = 0


def evaluate(model: SPHNet, data: Dataset, ref_eigs=None, batch_size: int = 16) -> dict:
    """Mean H MAE, eps MAE and psi over ``data`` in evaluation mode."""
    was = model.training
    model.eval()
    h, e, p = [], [], []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data.samples[start:start + batch_size]
            pred = model([s.graph for s in chunk])
            for n, (s, H) in enumerate(zip(chunk, pred.matrices)):
                if not torch.isfinite(H).all():
                    raise TrainingDiverged(f"non-finite prediction for molecule {start + n}")
                ref = ref_eigs[start + n] if ref_eigs is not None else None
                m = molecule_metrics(H.numpy(), s.H, s.graph.Z, s.S, ref)
                h.append(m.h_mae)
                e.append(m.eps_mae)
                p.append(m.psi)
    model.train(was)
    return {"H_mae": float(np.mean(h)), "eps_mae": float(np.mean(e)), "psi": float(np.mean(p))}


def reference_eigs(data: Dataset):
    return [gen_eig(s.H, s.S) for s in data.samples]


def _tp_masks(model: SPHNet):
    return {n: g.last_mask.copy() for n, g in model.gates()
            if isinstance(g, SparseTPGate) and g.last_mask is not None}


def train_loop(model_config: ModelConfig, train_config: TrainConfig, train_set: Dataset,
               eval_set: Dataset | None = None, model: SPHNet | None = None,
               start_epoch: int = 0) -> TrainResult:
    """Adam with linear warmup and optional decay; gates switch phase by epoch and freeze after epoch ``t``."""
    tc = train_config.validate()
    model = model if model is not None else SPHNet(model_config)
    model.train()
    eval_set = eval_set if eval_set is not None else train_set
    eval_refs = reference_eigs(eval_set)
    refs = [torch.from_numpy(s.H) for s in train_set.samples]
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
    n_steps = tc.epochs * math.ceil(len(train_set) / tc.batch_size)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: lr_factor(step, tc.warmup_steps, n_steps, tc.schedule))
    result = TrainResult(model, optimizer=opt)
    t = model_config.tss_epoch
    frozen_masks = None

    for epoch in range(start_epoch, tc.epochs):
        model.set_epoch(epoch)
        order = np.random.default_rng(np.random.SeedSequence([tc.seed, epoch])).permutation(len(train_set))
        maes, mses = [], []
        for start in range(0, len(order), tc.batch_size):
            ids = order[start:start + tc.batch_size]
            pred = model([train_set.samples[i].graph for i in ids])
            mae, mse = batch_loss(pred.matrices, [refs[i] for i in ids])
            total = mae + mse
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {result.steps} "
                    f"(mae={mae.item()}, mse={mse.item()}, lr={sched.get_last_lr()[0]:.3e})"
                )
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            sched.step()
            result.steps += 1
            maes.append(mae.item())
            mses.append(mse.item())
            if model.gate_phase() is Phase.FIXED:
                masks = _tp_masks(model)
                if frozen_masks is None:
                    frozen_masks = masks
                elif any(not np.array_equal(masks[k], frozen_masks[k]) for k in masks):
                    raise AssertionError("a frozen path selection changed during the fixed phase")
        if not all(torch.isfinite(p).all() for p in model.parameters()):
            raise TrainingDiverged(f"non-finite parameters after epoch {epoch}, step {result.steps}")
        if epoch == t:
            model.freeze_gates()
        row = {"epoch": epoch, "loss_mae": float(np.mean(maes)), "loss_mse": float(np.mean(mses))}
        if (epoch + 1) % tc.eval_every == 0 or epoch == tc.epochs - 1:
            row.update(evaluate(model, eval_set, eval_refs))
        else:
            row.update({"H_mae": math.nan, "eps_mae": math.nan, "psi": math.nan})
        result.trace.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 6) for k, v in row.items() if k != "epoch"})
    return result


def config_echo(model_config: ModelConfig, train_config: TrainConfig) -> dict:
    return {"model": model_config.to_dict(), "train": asdict(train_config)}
