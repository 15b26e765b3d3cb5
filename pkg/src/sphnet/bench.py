"""Timing harness for the scaling tables: path order, path sparsity, pair count, backends."""
from __future__ import annotations

import contextlib
import os
import time
from typing import Callable, Sequence

import numpy as np
import torch
from threadpoolctl import threadpool_limits

from .irreps import IrrepsLayout
from .model.graph import MoleculeGraph, collate
from .model.network import PairBlock, initialize
from .model.radial import rbf
from .sparsity import selection_count, top_mask
from .tp import backend
from .tp.ops import tp_forward_arrays
from .tp.plan import dense_cost, enumerated_cost, full_plan

THREADS_ENV = "SPHNET_NUM_THREADS"

TP_ORDER_COLUMNS = ("L", "cost", "time_ns_median", "time_ns_mad")
SPARSITY_COLUMNS = ("k", "paths", "cost", "time_ns_median", "time_ns_mad")
PAIRS_COLUMNS = ("N", "pairs", "time_ns_median", "time_ns_mad")
BACKEND_COLUMNS = ("backend", "L", "cost", "time_ns_median", "time_ns_mad")


def thread_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    return max(1, int(raw)) if raw else default


@contextlib.contextmanager
def pinned_threads(n: int | None = None):
    """Cap BLAS/OpenMP and torch intra-op threads for the duration."""
    n = thread_count() if n is None else n
    prev = torch.get_num_threads()
    torch.set_num_threads(n)
    try:
        with threadpool_limits(limits=n):
            yield n
    finally:
        torch.set_num_threads(prev)


def measure(fn: Callable[[], object], warmup: int = 3, repeats: int = 5) -> tuple[float, float]:
    """Median and median absolute deviation of wall time in ns; warmup runs discarded."""
    if warmup < 3 or repeats < 5:
        raise ValueError("timing needs >= 3 warmup runs and >= 5 repeats")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    arr = np.array(times, dtype=np.float64)
    med = float(np.median(arr))
    return med, float(np.median(np.abs(arr - med)))


def _operands(plan, batch: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, plan.layout1.total_dim))
    y = rng.standard_normal((batch, plan.layout2.total_dim))
    w = rng.standard_normal((1, plan.weight_numel))
    return x, y, w


def bench_tp_order(lmax_list: Sequence[int], channels: int = 1, batch: int = 8, time_max_l: int = 8,
                   warmup: int = 3, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Exact dense cost for every L; wall time of the full-path product up to ``time_max_l``."""
    rows = []
    for L in lmax_list:
        row = {"L": L, "cost": enumerated_cost(L, channels), "time_ns_median": float("nan"),
               "time_ns_mad": float("nan")}
        if L <= time_max_l:
            plan = full_plan(L, channels)
            assert dense_cost(plan) == row["cost"]
            x, y, w = _operands(plan, batch, seed)
            row["time_ns_median"], row["time_ns_mad"] = measure(
                lambda: tp_forward_arrays(plan, x, y, w), warmup, repeats)
        rows.append(row)
    return rows


def sparsity_selection(lmax: int, k: float, seed: int = 0) -> np.ndarray:
    """Top-score mask from one fixed random score vector, so sets are nested across k."""
    plan_keys = full_plan(lmax, 1).path_keys
    scores = np.random.default_rng(seed).random(len(plan_keys))
    return top_mask(scores, selection_count(k, len(plan_keys)))


def bench_sparsity(lmax: int = 6, channels: int = 64, k_list: Sequence[float] = (0.0,), batch: int = 4,
                   warmup: int = 3, repeats: int = 5, seed: int = 0) -> list[dict]:
    full = full_plan(lmax, channels)
    x, y, _ = _operands(full, batch, seed)
    rows = []
    for k in k_list:
        mask = sparsity_selection(lmax, k, seed)
        plan = full.subplan(p for p, keep in zip(full.path_keys, mask) if keep)
        w = np.random.default_rng(seed + 1).standard_normal((1, plan.weight_numel))
        med, mad = measure(lambda: tp_forward_arrays(plan, x, y, w), warmup, repeats)
        rows.append({"k": k, "paths": len(plan.paths), "cost": dense_cost(plan),
                     "time_ns_median": med, "time_ns_mad": mad})
    return rows


def _pair_molecule(n: int, seed: int) -> MoleculeGraph:
    """Atoms on a jittered cubic grid 1.5 A apart."""
    side = int(np.ceil(n ** (1 / 3)))
    grid = np.stack(np.meshgrid(*[np.arange(side)] * 3, indexing="ij"), -1).reshape(-1, 3)[:n]
    rng = np.random.default_rng(seed)
    pos = 1.5 * grid + rng.uniform(-0.2, 0.2, size=(n, 3))
    return MoleculeGraph(np.full(n, 6), pos)


def bench_pairs(n_list: Sequence[int], lmax: int = 4, channels: int = 8, n_rbf: int = 16,
                warmup: int = 3, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Non-diagonal pair-construction time over all i < j pairs (no pair gate)."""
    block = PairBlock(channels, lmax, n_rbf, None, None)
    initialize(block, seed)
    block.eval()
    rows = []
    for n in n_list:
        if n < 2:
            raise ValueError("pair benchmark needs at least two atoms")
        batch = collate([_pair_molecule(n, seed)], cutoff=5.0)
        x = torch.from_numpy(np.random.default_rng(seed).standard_normal(
            (n, IrrepsLayout.uniform(channels, lmax).total_dim)))
        pi, pj = batch.pairs
        feats = rbf(batch.vectors(pi, pj).norm(dim=1), n_rbf, 0.8, 1e3)

        def run():
            with torch.no_grad():
                block.nondiagonal(x, batch, feats)

        med, mad = measure(run, warmup, repeats)
        rows.append({"N": n, "pairs": len(pi), "time_ns_median": med, "time_ns_mad": mad})
    return rows


def bench_backends(lmax_list: Sequence[int], channels: int = 16, batch: int = 8,
                   warmup: int = 3, repeats: int = 5, seed: int = 0) -> list[dict]:
    rows = []
    for name, kernels in backend.available().items():
        for L in lmax_list:
            plan = full_plan(L, channels)
            x, y, w = _operands(plan, batch, seed)
            med, mad = measure(lambda: tp_forward_arrays(plan, x, y, w, kernels), warmup, repeats)
            rows.append({"backend": name, "L": L, "cost": dense_cost(plan),
                         "time_ns_median": med, "time_ns_mad": mad})
    return rows


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def linear_r2(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    coef = np.polyfit(xs, ys, 1)
    resid = ys - np.polyval(coef, xs)
    return float(1.0 - resid @ resid / np.sum((ys - ys.mean()) ** 2))
