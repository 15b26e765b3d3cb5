"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the teacher-student
test trains two models and takes the bulk of the time.
"""
import time

import numpy as np
import torch

from sphnet import bench
from sphnet.cg import clebsch_gordan, enumerate_paths
from sphnet.equivariance import run_trials
from sphnet.irreps import Rotation
from sphnet.model import ModelConfig, SPHNet
from sphnet.model.graph import MoleculeGraph
from sphnet.sparsity import (
    Phase,
    SparseTPGate,
    SparsityScheduler,
    tss_select,
)
from sphnet.spherical import real_spherical_harmonics
from sphnet.tp import backend, full_plan
from sphnet.tp.ops import tp_forward_arrays
from sphnet.tp.plan import dense_cost
from sphnet.training.data import generate_teacher_dataset
from sphnet.training.eig import gen_eig
from sphnet.training.gradcheck import grad_check
from sphnet.training.metrics import batch_loss, epsilon_mae, psi_similarity
from sphnet.training.train import TrainConfig, evaluate, train_loop
from sphnet.wigner import wigner_d

# teacher-student run: 200 training molecules plus a disjoint held-out set; the student is
# twice as wide as the C=8 teacher, which held out best in a width sweep (8, 16, 24)
TS_TRAIN, TS_HELDOUT = 200, 50
TS_STUDENT = dict(channels=16, tss_epoch=3, seed=1)
TS_TRAIN_CONFIG = dict(epochs=50, batch_size=2, lr=3e-3, warmup_steps=50, eval_every=10,
                       schedule="polynomial")


def _sym(n, rng):
    m = rng.standard_normal((n, n))
    return (m + m.T) / 2


def _spd(n, rng):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def _brute_cost(L):
    total = 0
    for a in range(L + 1):
        for b in range(L + 1):
            for c in range(L + 1):
                if abs(a - b) <= c <= a + b:
                    total += (2 * a + 1) * (2 * b + 1) * (2 * c + 1)
    return total


def test_criterion_01_equivariance(verdict):
    t0 = time.perf_counter()
    model = SPHNet(ModelConfig(lmax=4, channels=8, k_path=0.3, k_pair=0.3, tss_epoch=1, seed=0)).eval()
    model.set_epoch(2)
    worst = max(run_trials(model, 50, seed=2024))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-8 and elapsed < 120
    assert verdict(1, "equivariance", ok, f"max block deviation {worst:.2e} over 50 rotations "
                                          f"(< 1e-8), {elapsed:.0f} s (< 120 s)")


def test_criterion_02_cg_sh_algebra(verdict):
    gram = 0.0
    for l1 in range(7):
        for l2 in range(7):
            Q = np.concatenate([clebsch_gordan(l1, l2, l3).reshape(-1, 2 * l3 + 1)
                                for l3 in range(abs(l1 - l2), l1 + l2 + 1)], axis=1)
            gram = max(gram, np.abs(Q.T @ Q - np.eye(Q.shape[0])).max())

    # Gauss-Legendre in cos(theta) times uniform phi, exact for degree <= 2 * 6 + 1
    z, wz = np.polynomial.legendre.leggauss(8)
    nphi = 15
    phi = 2 * np.pi * np.arange(nphi) / nphi
    Z, P = np.meshgrid(z, phi, indexing="ij")
    rho = np.sqrt(1 - Z ** 2)
    dirs = np.stack([rho * np.cos(P), rho * np.sin(P), Z], -1).reshape(-1, 3)
    w = np.repeat(wz, nphi) * (2 * np.pi / nphi)
    Y = np.concatenate(real_spherical_harmonics(6, dirs), axis=1)
    quad = np.abs((Y * w[:, None]).T @ Y - np.eye(Y.shape[1])).max()

    rng = np.random.default_rng(0)
    inter = 0.0
    for _ in range(10):
        R = Rotation.random(rng).matrix
        for l1 in range(5):
            for l2 in range(5):
                for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                    C = clebsch_gordan(l1, l2, l3)
                    lhs = np.einsum("abk,ai,bj->ijk", C, wigner_d(l1, R), wigner_d(l2, R))
                    rhs = np.einsum("kc,ijc->ijk", wigner_d(l3, R), C)
                    inter = max(inter, np.abs(lhs - rhs).max())
    ok = gram < 1e-10 and quad < 1e-10 and inter < 1e-9
    assert verdict(2, "CG/SH algebra", ok, f"Gram {gram:.1e}, quadrature {quad:.1e} (< 1e-10); "
                                           f"intertwining {inter:.1e} (< 1e-9)")


def test_criterion_03_path_counts(verdict):
    n6, n4 = len(enumerate_paths(6)), len(enumerate_paths(4))
    s6 = int(SparseTPGate(full_plan(6, 1), 0.7, 0, 0).current_mask().sum())
    s4 = int(SparseTPGate(full_plan(4, 1), 0.4, 0, 0).current_mask().sum())
    ok = (n6, n4, s6, s4) == (175, 65, 53, 39)
    assert verdict(3, "path counts", ok, f"paths {n6}/{n4} (175/65), selected {s6}/{s4} (53/39)")


def test_criterion_04_sparse_full_consistency(verdict):
    water = MoleculeGraph([8, 1, 1], [[0, 0, 0], [0.96, 0, 0], [-0.24, 0.93, 0]])
    ch4 = MoleculeGraph([6, 1, 1, 1, 1], [[0, 0, 0], [0.63, 0.63, 0.63], [-0.63, -0.63, 0.63],
                                          [-0.63, 0.63, -0.63], [0.63, -0.63, -0.63]])
    ref = SPHNet(ModelConfig(gated=False, seed=3)).eval()
    gated = SPHNet(ModelConfig(gated=True, k_path=0.0, k_pair=0.0, seed=3)).eval()
    gated.load_state_dict(ref.state_dict(), strict=False)
    with torch.no_grad():
        for _, g in gated.gates():
            if isinstance(g, SparseTPGate):
                g.scores.fill_(1.0)
        model_equal = all(torch.equal(a, b) for a, b in zip(ref([water, ch4]).matrices,
                                                            gated([water, ch4]).matrices))

    full = full_plan(4, 3)
    rng = np.random.default_rng(4)
    keep = [k for k in full.path_keys if rng.random() < 0.6]
    sub = full.subplan(keep)
    x = rng.standard_normal((5, full.layout1.total_dim))
    y = rng.standard_normal((5, full.layout2.total_dim))
    w = rng.standard_normal((1, full.weight_numel))
    offs, C = full.weight_offsets(), full.channels
    zeroed = np.zeros_like(w)
    for k in keep:
        zeroed[:, offs[k]:offs[k] + C] = w[:, offs[k]:offs[k] + C]
    w_sub = np.concatenate([w[:, offs[k]:offs[k] + C] for k in sub.path_keys], axis=1)
    plan_equal = all(np.array_equal(tp_forward_arrays(sub, x, y, w_sub, ker),
                                    tp_forward_arrays(full, x, y, zeroed, ker))
                     for ker in backend.available().values())
    ok = model_equal and plan_equal
    assert verdict(4, "sparse/full consistency", ok,
                   f"k=0 gated == ungated bitwise: {model_equal}; sub-plan == zeroed full plan: {plan_equal}")


def test_criterion_05_scheduler_semantics(verdict):
    worst = 0.0
    for k in (0.3, 0.5):
        s = SparsityScheduler(k, 3, seed=11)
        freq = np.stack([tss_select(s, 0, np.zeros(40)) for _ in range(10_000)]).mean(axis=0)
        worst = max(worst, np.abs(freq - (1 - k)).max())

    model = SPHNet(ModelConfig(lmax=4, channels=4, n_vectorial=2, k_path=0.3, k_pair=0.3,
                               tss_epoch=0, seed=5))
    model.set_epoch(0)
    mol = MoleculeGraph([6, 8, 1, 1], [[0, 0, 0], [1.2, 0, 0], [-0.5, 0.9, 0], [-0.5, -0.9, 0.1]])
    model([mol])
    model.freeze_gates()
    model.set_epoch(1)
    assert model.gate_phase() is Phase.FIXED
    first = model([mol]).matrices[0]
    masks0 = {n: g.last_mask.copy() for n, g in model.gates()}
    stable = True
    for _ in range(99):
        model([mol])
        stable &= all(np.array_equal(g.last_mask, masks0[n]) for n, g in model.gates())
    mae, mse = batch_loss([first], [torch.zeros_like(first)])
    (mae + mse).backward()
    grads = []
    for _, g in model.gates():
        params = [g.scores] if isinstance(g, SparseTPGate) else list(g.score_net.parameters())
        grads += [0.0 if p.grad is None else p.grad.abs().max().item() for p in params]
    frozen_grad = max(grads)
    ok = worst < 0.02 and stable and frozen_grad == 0.0
    assert verdict(5, "scheduler semantics", ok,
                   f"max frequency error {worst:.4f} (< 0.02); fixed selection stable over 100 calls: "
                   f"{stable}; max frozen-score gradient {frozen_grad}")


def test_criterion_06_gradient_check(verdict):
    t0 = time.perf_counter()
    g = MoleculeGraph([6, 8, 1, 1], [[0, 0, 0], [1.21, 0, 0], [-0.55, 0.93, 0.05], [-0.5, -0.92, -0.1]])
    model = SPHNet(ModelConfig(lmax=3, channels=4, n_vectorial=2, basis="toy-sp",
                               k_path=0.3, k_pair=0.3, tss_epoch=0, seed=8))
    model.set_epoch(0)
    n = model([g]).matrices[0].shape[0]
    ref = np.random.default_rng(1).standard_normal((n, n))
    report = grad_check(model, [g], [(ref + ref.T) / 2], per_group=3)
    worst = max(report.errors.values())
    elapsed = time.perf_counter() - t0
    ok = report.passed(1e-4) and elapsed < 300
    assert verdict(6, "gradient check", ok, f"max relative error {worst:.2e} over "
                                            f"{len(report.errors)} parameter groups (< 1e-4), {elapsed:.0f} s")


def test_criterion_07_cost_scaling(verdict):
    costs = {L: bench.bench_tp_order([L], time_max_l=-1)[0]["cost"] for L in (16, 20, 24, 28, 32)}
    slope = bench.loglog_slope(list(costs), list(costs.values()))
    exact = all(dense_cost(full_plan(L, 1)) == _brute_cost(L) for L in range(1, 9))
    exact &= all(costs[L] == _brute_cost(L) for L in costs)
    small = (dense_cost(full_plan(1, 1)), dense_cost(full_plan(2, 1)))
    ok = slope > 5.5 and exact and small == (55, 615)
    assert verdict(7, "cost scaling", ok, f"log-log slope L=16..32 {slope:.3f} (> 5.5); brute force "
                                          f"match: {exact}; L=1,2 costs {small} (55, 615)")


def test_criterion_08_sparsity_speedup(verdict):
    t0 = time.perf_counter()
    ks = [round(0.1 * i, 1) for i in range(10)]
    with bench.pinned_threads(1):
        rows = bench.bench_sparsity(6, 64, ks, repeats=9)
    r2 = bench.linear_r2([1 - r["k"] for r in rows], [r["time_ns_median"] for r in rows])
    elapsed = time.perf_counter() - t0
    ok = r2 > 0.95 and elapsed < 600
    ratio = rows[0]["time_ns_median"] / rows[-1]["time_ns_median"]
    assert verdict(8, "sparsity speedup", ok, f"time vs (1-k) R^2 {r2:.4f} (> 0.95), k=0/k=0.9 time "
                                              f"ratio {ratio:.1f}, {elapsed:.0f} s (< 600 s)")


def test_criterion_09_pair_scaling(verdict):
    ns = [16, 32, 64, 128]
    with bench.pinned_threads(1):
        rows = bench.bench_pairs(ns, repeats=7)
    slope = bench.loglog_slope(ns, [r["time_ns_median"] for r in rows])
    ok = 1.7 <= slope <= 2.3
    assert verdict(9, "pair scaling", ok, f"non-diagonal time log-log slope {slope:.3f} (in [1.7, 2.3])")


def test_criterion_10_teacher_student(verdict):
    t0 = time.perf_counter()
    data = generate_teacher_dataset(0, TS_TRAIN + TS_HELDOUT, (3, 12), "toy-svp")
    train_set, heldout = data.split(TS_TRAIN)
    finals, base = {}, None
    for k in (0.3, 0.0):
        cfg = ModelConfig(k_path=k, k_pair=k, **TS_STUDENT)
        model = SPHNet(cfg)
        if base is None:
            base = evaluate(model, heldout)["H_mae"]
        res = train_loop(cfg, TrainConfig(**TS_TRAIN_CONFIG), train_set, heldout, model=model)
        finals[k] = res.trace[-1]["H_mae"]
    elapsed = time.perf_counter() - t0
    ratio = finals[0.3] / base
    rel = finals[0.3] / finals[0.0]
    ok = ratio < 0.1 and rel < 2.0 and elapsed < 3600
    assert verdict(10, "teacher-student", ok,
                   f"held-out H MAE k=0.3 {finals[0.3]:.4f}, k=0 {finals[0.0]:.4f}, untrained {base:.4f}; "
                   f"k=0.3/untrained {ratio:.3f} (< 0.1); k=0.3/k=0 {rel:.2f} (< 2); {elapsed:.0f} s")


def test_criterion_11_eigensolver_metrics(verdict):
    rng = np.random.default_rng(0)
    resid = 0.0
    for n in (1, 2, 5, 16, 33, 64):
        H, S = _sym(n, rng), _spd(n, rng)
        r = gen_eig(H, S)
        C = r.vectors
        resid = max(resid, np.abs(H @ C - S @ C * r.eigenvalues).max(), np.abs(C.T @ S @ C - np.eye(n)).max())
    H, S = _sym(20, rng), _spd(20, rng)
    shift = max(abs(epsilon_mae(H + d * S, H, S, 7) - abs(d)) for d in (1e-4, 0.3, -1.7, 5.0))
    C = gen_eig(H, S).vectors
    flips = rng.choice([-1.0, 1.0], size=20)
    sign_exact = psi_similarity(C * flips, C, S, 7) == psi_similarity(C, C, S, 7)
    ok = resid < 1e-9 and shift < 1e-10 and sign_exact
    assert verdict(11, "eigensolver/metrics", ok, f"gen_eig residual {resid:.1e} (< 1e-9) to dim 64; "
                                                  f"shift identity error {shift:.1e} (< 1e-10); "
                                                  f"psi sign invariance exact: {sign_exact}")
