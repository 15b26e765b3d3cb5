"""Timing harness helpers and small benchmark runs (structure only, no timing thresholds)."""
import math

import numpy as np
import pytest
import torch

from sphnet import bench
from sphnet.sparsity import selection_count
from sphnet.tp.plan import dense_cost, enumerated_cost, full_plan


def test_measure_rejects_short_runs():
    with pytest.raises(ValueError):
        bench.measure(lambda: None, warmup=2)
    with pytest.raises(ValueError):
        bench.measure(lambda: None, repeats=4)


def test_measure_counts_calls_and_returns_median():
    calls = []
    med, mad = bench.measure(lambda: calls.append(1), warmup=3, repeats=5)
    assert len(calls) == 8 and med >= 0 and mad >= 0


def test_fit_helpers_on_exact_data():
    xs = np.array([2.0, 4, 8, 16])
    assert bench.loglog_slope(xs, 3 * xs ** 2) == pytest.approx(2.0)
    assert bench.linear_r2(xs, 5 * xs + 1) == pytest.approx(1.0)
    assert bench.linear_r2([1, 2, 3, 4], [1, 0, 1, 0]) < 0.5


def test_pinned_threads_restores(monkeypatch):
    before = torch.get_num_threads()
    monkeypatch.setenv(bench.THREADS_ENV, "1")
    with bench.pinned_threads() as n:
        assert n == 1 and torch.get_num_threads() == 1
    assert torch.get_num_threads() == before


def test_tp_order_rows():
    rows = bench.bench_tp_order([1, 2, 12], time_max_l=2, repeats=5)
    assert [r["cost"] for r in rows] == [55, 615, enumerated_cost(12, 1)]
    assert not math.isnan(rows[1]["time_ns_median"]) and math.isnan(rows[2]["time_ns_median"])


def test_sparsity_selection_is_nested():
    masks = [bench.sparsity_selection(4, k) for k in (0.0, 0.3, 0.6, 0.9)]
    for wide, narrow in zip(masks, masks[1:]):
        assert np.all(wide[narrow])
    assert [m.sum() for m in masks] == [selection_count(k, 65) for k in (0.0, 0.3, 0.6, 0.9)]


def test_sparsity_rows_cost_tracks_selection():
    rows = bench.bench_sparsity(lmax=3, channels=2, k_list=[0.0, 0.5], batch=2, repeats=5)
    assert rows[0]["cost"] == dense_cost(full_plan(3, 2))
    assert rows[1]["paths"] == selection_count(0.5, rows[0]["paths"])
    assert rows[1]["cost"] < rows[0]["cost"]


def test_pairs_rows_count_all_pairs():
    rows = bench.bench_pairs([2, 5], lmax=2, channels=2, repeats=5)
    assert [r["pairs"] for r in rows] == [1, 10]
    with pytest.raises(ValueError):
        bench.bench_pairs([1], lmax=2, channels=2)


def test_backend_rows_cover_each_backend():
    rows = bench.bench_backends([1], channels=2, batch=2, repeats=5)
    names = {r["backend"] for r in rows}
    assert "numpy" in names and all(r["cost"] == 55 * 2 for r in rows)
