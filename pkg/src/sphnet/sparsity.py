"""Three-phase sparsity scheduling and the path / pair gates built on it.

Selection law over a universe ``U`` with sparsity rate ``k`` and switch epoch ``t``:

* ``epoch < t``: every element kept independently with probability ``1 - k``;
* ``epoch == t``: the ``ceil((1 - k)|U|)`` highest live scores;
* ``epoch > t``: the same top set taken from a snapshot frozen at the end of epoch ``t``.

With ``k == 0`` a gate is inert: it keeps everything and its scores never
enter the computation, so a gated model reproduces the ungated one exactly.
"""
from __future__ import annotations

import enum
import math
from collections import OrderedDict
from typing import Iterator

import numpy as np
import torch
from torch import nn

from .tp.plan import TensorProductPlan


class SparsityConfigError(ValueError):
    pass


class Phase(enum.Enum):
    RANDOM = "random"
    ADAPTIVE = "adaptive"
    FIXED = "fixed"


def selection_count(k: float, n: int) -> int:
    """``ceil((1 - k) n)``, rounded first so 0.3 * 175 = 52.5000...01 still gives 53."""
    return min(n, int(math.ceil(round((1.0 - k) * n, 9))))


def top_mask(scores: np.ndarray, count: int) -> np.ndarray:
    """Boolean mask of the ``count`` largest scores; ties go to the lower index."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    mask = np.zeros(len(order), dtype=bool)
    mask[order[:count]] = True
    return mask


class SparsityScheduler:
    """Phase bookkeeping plus a counter-based random stream.

    Random draw number ``n`` comes from ``SeedSequence([seed, n])``, so the
    stream is reproducible from ``(seed, counter)`` alone.
    """

    def __init__(self, k: float, t: int, seed: int):
        if not 0.0 <= k < 1.0:
            raise SparsityConfigError(f"sparsity rate must lie in [0, 1), got {k}")
        if t < 0:
            raise SparsityConfigError(f"switch epoch must be non-negative, got {t}")
        self.k = float(k)
        self.t = int(t)
        self.seed = int(seed)
        self.counter = 0

    @property
    def inert(self) -> bool:
        return self.k == 0.0

    def phase(self, epoch: int) -> Phase:
        if epoch < 0:
            raise SparsityConfigError(f"epoch must be non-negative, got {epoch}")
        if epoch < self.t:
            return Phase.RANDOM
        return Phase.ADAPTIVE if epoch == self.t else Phase.FIXED

    def count(self, n: int) -> int:
        return selection_count(self.k, n)

    def random_mask(self, n: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.counter]))
        self.counter += 1
        return rng.random(n) < (1.0 - self.k)

    def state(self) -> dict:
        return {"k": self.k, "t": self.t, "seed": self.seed, "counter": self.counter}

    def load_state(self, state: dict) -> None:
        self.k, self.t = float(state["k"]), int(state["t"])
        self.seed, self.counter = int(state["seed"]), int(state["counter"])


def tss_select(scheduler: SparsityScheduler, epoch: int, scores, frozen=None) -> np.ndarray:
    """Mask over ``len(scores)`` elements for ``epoch``.

    ``frozen`` supplies the snapshot used in the fixed phase; without one the
    live scores stand in (they are what the snapshot would capture).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if scheduler.inert:
        return np.ones(n, dtype=bool)
    phase = scheduler.phase(epoch)
    if phase is Phase.RANDOM:
        return scheduler.random_mask(n)
    if phase is Phase.FIXED and frozen is not None:
        scores = np.asarray(frozen, dtype=np.float64)
    return top_mask(scores, scheduler.count(n))


class _GateBase(nn.Module):
    def __init__(self, k: float, t: int, seed: int):
        super().__init__()
        self.scheduler = SparsityScheduler(k, t, seed)
        self.epoch = 0
        self._pinned: np.ndarray | None = None
        self.last_mask: np.ndarray | None = None

    @property
    def phase(self) -> Phase:
        return self.scheduler.phase(self.epoch)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = int(epoch)

    def pin(self, mask: np.ndarray | None) -> None:
        """Force ``mask`` on every call (``None`` releases it); used for finite differences."""
        self._pinned = None if mask is None else np.asarray(mask, dtype=bool).copy()

    def stochastic(self) -> bool:
        """Random draws only happen while training in the random phase."""
        return self.training and self.phase is Phase.RANDOM and not self.scheduler.inert


class SparseTPGate(_GateBase):
    """Learnable per-path scores ``W_c`` selecting and rescaling a plan's paths."""

    def __init__(self, plan: TensorProductPlan, k: float, t: int, seed: int):
        super().__init__(k, t, seed)
        self.plan = plan
        self.scores = nn.Parameter(torch.ones(len(plan.paths), dtype=torch.float64))
        self.frozen: torch.Tensor | None = None
        self._subplans: OrderedDict[bytes, TensorProductPlan] = OrderedDict()

    @property
    def universe(self) -> tuple[tuple[int, int, int], ...]:
        return self.plan.path_keys

    def freeze(self) -> None:
        """Snapshot the scores; later selections and rescaling use the snapshot."""
        self.frozen = self.scores.detach().clone()

    def _score_source(self) -> torch.Tensor:
        if self.phase is Phase.FIXED:
            if self.frozen is None:
                self.freeze()
            return self.frozen
        return self.scores

    def current_mask(self) -> np.ndarray:
        self.last_mask = self._draw_mask()
        return self.last_mask

    def _draw_mask(self) -> np.ndarray:
        if self._pinned is not None:
            return self._pinned
        if self.scheduler.inert:
            return np.ones(len(self.universe), dtype=bool)
        if self.stochastic():
            return self.scheduler.random_mask(len(self.universe))
        # adaptive, fixed, and evaluation during the random phase all take the top set
        src = self._score_source().detach().numpy()
        return top_mask(src, self.scheduler.count(len(src)))

    def subplan(self, mask: np.ndarray) -> TensorProductPlan:
        key = mask.tobytes()
        hit = self._subplans.get(key)
        if hit is None:
            hit = self.plan.subplan(k for k, keep in zip(self.universe, mask) if keep)
            self._subplans[key] = hit
            if len(self._subplans) > 64:
                self._subplans.popitem(last=False)
        else:
            self._subplans.move_to_end(key)
        return hit

    def forward(self, c: torch.Tensor) -> tuple[TensorProductPlan, torch.Tensor]:
        """Effective weights ``c' = c * W_c`` on the selected paths.

        ``c`` is (n_paths * C,) or (batch, n_paths * C) in plan order; the
        returned weights match the returned sub-plan's layout.
        """
        if self.scheduler.inert:
            return self.plan, c
        mask = self.current_mask()
        P, C = len(self.universe), self.plan.channels
        idx = torch.from_numpy(np.flatnonzero(mask))
        scale = self._score_source()[idx]
        if c.dim() == 1:
            eff = (c.reshape(P, C)[idx] * scale[:, None]).reshape(-1)
        else:
            eff = (c.reshape(-1, P, C)[:, idx] * scale[None, :, None]).reshape(c.shape[0], len(idx) * C)
        return self.subplan(mask), eff

    def dump(self) -> list[tuple[int, tuple[int, int, int], float, bool]]:
        """(rank, path, score, selected) sorted by descending score, ties by index."""
        src = self._score_source().detach().numpy()
        mask = top_mask(src, self.scheduler.count(len(src)))
        order = np.argsort(-src, kind="stable")
        return [(r + 1, self.universe[i], float(src[i]), bool(mask[i])) for r, i in enumerate(order)]


def pair_invariants(xi: torch.Tensor, xj: torch.Tensor, channels: int, lmax: int) -> torch.Tensor:
    """``[x_i^0 | x_j^0 | <x_i^l, x_j^l> for l = 1..lmax]`` per channel.

    Inputs are (P, dim) in the uniform layout ``C x 0 + ... + C x L`` with
    ``L <= lmax``; orders above the input's reach contribute zeros.
    """
    P = xi.shape[0]
    parts = [xi[:, :channels], xj[:, :channels]]
    pos = channels
    for l in range(1, lmax + 1):
        d = 2 * l + 1
        if pos + channels * d <= xi.shape[1]:
            a = xi[:, pos:pos + channels * d].reshape(P, channels, d)
            b = xj[:, pos:pos + channels * d].reshape(P, channels, d)
            parts.append((a * b).sum(-1))
            pos += channels * d
        else:
            parts.append(xi.new_zeros((P, channels)))
    return torch.cat(parts, dim=1)


class SparsePairGate(_GateBase):
    """Scores atom pairs with ``sigmoid(F_p(I_ij))`` and selects per molecule."""

    def __init__(self, channels: int, lmax: int, k: float, t: int, seed: int):
        super().__init__(k, t, seed)
        self.channels, self.lmax = channels, lmax
        self.score_net = nn.Linear(channels * (2 + lmax), 1, dtype=torch.float64)
        self.frozen: tuple[torch.Tensor, torch.Tensor] | None = None

    def freeze(self) -> None:
        self.frozen = (self.score_net.weight.detach().clone(), self.score_net.bias.detach().clone())

    def invariants(self, xi: torch.Tensor, xj: torch.Tensor) -> torch.Tensor:
        return pair_invariants(xi, xj, self.channels, self.lmax)

    def score(self, inv: torch.Tensor) -> torch.Tensor:
        """``W_p`` in (0, 1) for each row of invariants."""
        if self.phase is Phase.FIXED:
            if self.frozen is None:
                self.freeze()
            weight, bias = self.frozen
            return torch.sigmoid(inv @ weight.T + bias).squeeze(-1)
        return torch.sigmoid(self.score_net(inv)).squeeze(-1)

    def select(self, scores: torch.Tensor, molecule: np.ndarray) -> np.ndarray:
        """Mask over candidate pairs; top-k runs inside each molecule separately."""
        self.last_mask = self._draw_mask(scores, molecule)
        return self.last_mask

    def _draw_mask(self, scores: torch.Tensor, molecule: np.ndarray) -> np.ndarray:
        n = scores.shape[0]
        if self._pinned is not None:
            return self._pinned
        if self.scheduler.inert:
            return np.ones(n, dtype=bool)
        if self.stochastic():
            return self.scheduler.random_mask(n)
        vals = scores.detach().numpy()
        mask = np.zeros(n, dtype=bool)
        for mol in np.unique(molecule):
            ids = np.flatnonzero(molecule == mol)
            mask[ids] = top_mask(vals[ids], self.scheduler.count(len(ids)))
        return mask


def iter_gates(module: nn.Module) -> Iterator[tuple[str, _GateBase]]:
    for name, sub in module.named_modules():
        if isinstance(sub, _GateBase):
            yield name, sub
