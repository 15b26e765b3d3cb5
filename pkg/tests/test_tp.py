"""Tensor-product plans, kernels on both backends, sph_linear and tensor expansion."""
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sphnet.cg import clebsch_gordan, enumerate_paths
from sphnet.irreps import EquivariantVector, IrrepsLayout, Rotation
from sphnet.tp import (
    ContractError,
    PlanError,
    build_expansion_plan,
    build_plan,
    dense_cost,
    enumerated_cost,
    full_plan,
    sph_linear,
    tensor_expansion,
    tp_backward,
    tp_forward,
)
from sphnet.tp import backend
from sphnet.tp.ops import tp_backward_arrays, tp_forward_arrays
from sphnet.tp.torch_ops import ExpansionTensors
from sphnet.tp.torch_ops import tensor_expansion as torch_expansion
from sphnet.tp.torch_ops import tensor_product
from sphnet.wigner import rotate, wigner_d, wigner_d_layout

BACKENDS = sorted(backend.available())


def naive_tp(plan, x, y, w):
    """Dictionary-of-blocks oracle, independent of the kernel tables."""
    C = plan.channels
    x, y, w = np.atleast_2d(x), np.atleast_2d(y), np.atleast_2d(w)
    out = np.zeros((x.shape[0], plan.layout_out.total_dim))
    s1, s2, s3 = plan.layout1.slices(), plan.layout2.slices(), plan.layout_out.slices()
    offs = plan.weight_offsets()
    for p in plan.paths:
        d1, d2 = 2 * p.l1 + 1, 2 * p.l2 + 1
        a = x[:, s1[p.i1]].reshape(-1, C, d1)
        b = y[:, s2[p.i2]].reshape(-1, 1 if plan.broadcast2 else C, d2)
        blk = np.einsum("ijk,bui,buj->buk", clebsch_gordan(p.l1, p.l2, p.l3), a, np.broadcast_to(b, (b.shape[0], C, d2)))
        if p.has_weight:
            blk = blk * w[:, offs[p.ls]:offs[p.ls] + C][:, :, None]
        out[:, s3[p.iout]] += p.norm * blk.reshape(x.shape[0], -1)
    return out


def operands(plan, batch, seed, per_sample=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, plan.layout1.total_dim))
    y = rng.standard_normal((batch, plan.layout2.total_dim))
    w = rng.standard_normal((batch if per_sample else 1, plan.weight_numel))
    return x, y, w


# -- plans and costs --------------------------------------------------------------

@pytest.mark.parametrize("L,cost", [(1, 55), (2, 615), (4, 13075), (6, 98245), (8, 443421)])
def test_dense_cost_values(L, cost):
    assert dense_cost(full_plan(L, 1)) == cost
    assert enumerated_cost(L) == cost


@pytest.mark.parametrize("L", [1, 2, 3, 4])
def test_dense_cost_brute_force(L):
    count = 0
    for l1 in range(L + 1):
        for l2 in range(L + 1):
            for l3 in range(L + 1):
                if abs(l1 - l2) <= l3 <= l1 + l2:
                    for _m in range((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1)):
                        count += 1
    assert enumerated_cost(L) == count


def test_cost_scales_with_channels():
    assert dense_cost(full_plan(3, 5)) == 5 * enumerated_cost(3)


def test_full_plan_path_order_matches_enumeration():
    assert list(full_plan(4, 2).path_keys) == enumerate_paths(4)


def test_normalization_counts_fan_in():
    plan = full_plan(2, 1)
    fan = {}
    for _, _, l3 in plan.path_keys:
        fan[l3] = fan.get(l3, 0) + 1
    for p in plan.paths:
        assert p.norm == pytest.approx(1 / math.sqrt(fan[p.l3]))


def test_plan_errors():
    lay = IrrepsLayout.uniform(2, 2)
    with pytest.raises(PlanError):
        build_plan(lay, lay, lay, [(0, 0, 1)])
    with pytest.raises(PlanError):
        build_plan(lay, lay, lay, [(2, 2, 3)])
    with pytest.raises(PlanError):
        build_plan(lay, IrrepsLayout.uniform(3, 2), lay)
    with pytest.raises(PlanError):
        build_plan(IrrepsLayout([(2, 0), (2, 0)]), lay, lay)
    with pytest.raises(PlanError):
        full_plan(2, 2).subplan([(3, 3, 0)])


def test_contract_errors():
    plan = full_plan(1, 2)
    x, y, w = operands(plan, 2, 0)
    with pytest.raises(ContractError):
        tp_forward(plan, x[:, :-1], y, w)
    with pytest.raises(ContractError):
        tp_forward(plan, x, y[:1], w)
    with pytest.raises(ContractError):
        tp_forward(plan, x, y, w[:, :-1])
    with pytest.raises(ContractError):
        tp_forward(plan, EquivariantVector(IrrepsLayout.uniform(2, 2), np.zeros((1, 18))), y[:1], w)


# -- forward / backward ------------------------------------------------------------

@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("L,C,per_sample", [(1, 1, False), (2, 3, True), (3, 2, False), (4, 4, True)])
def test_forward_matches_oracle(name, L, C, per_sample):
    plan = full_plan(L, C)
    x, y, w = operands(plan, 5, L * 10 + C, per_sample)
    got = tp_forward_arrays(plan, x, y, w, backend.available()[name])
    np.testing.assert_allclose(got, naive_tp(plan, x, y, w), atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_broadcast_second_input(name):
    lay, sh = IrrepsLayout.uniform(3, 2), IrrepsLayout.uniform(1, 3)
    plan = build_plan(lay, sh, lay)
    assert plan.broadcast2
    x, y, w = operands(plan, 4, 1, True)
    got = tp_forward_arrays(plan, x, y, w, backend.available()[name])
    np.testing.assert_allclose(got, naive_tp(plan, x, y, w), atol=1e-12)


def test_unweighted_plan():
    plan = full_plan(2, 2, weighted=False)
    assert plan.weight_numel == 0
    x, y, _ = operands(plan, 3, 2)
    np.testing.assert_allclose(tp_forward(plan, x, y).values, naive_tp(plan, x, y, np.zeros((1, 0))), atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree_forward_and_backward():
    ker = backend.available()
    plan = full_plan(4, 3)
    x, y, w = operands(plan, 6, 9, True)
    g = np.random.default_rng(10).standard_normal((6, plan.layout_out.total_dim))
    f_np = tp_forward_arrays(plan, x, y, w, ker["numpy"])
    f_c = tp_forward_arrays(plan, x, y, w, ker["compiled"])
    assert np.abs(f_np - f_c).max() < 1e-12
    for a, b in zip(tp_backward_arrays(plan, x, y, w, g, ker["numpy"]),
                    tp_backward_arrays(plan, x, y, w, g, ker["compiled"])):
        assert np.abs(a - b).max() < 1e-12


@pytest.mark.parametrize("name", BACKENDS)
def test_backward_is_exact_adjoint(name):
    """The product is linear in each argument, so <g, f(dx)> = <gx, dx> exactly."""
    ker = backend.available()[name]
    plan = full_plan(3, 2)
    x, y, w = operands(plan, 4, 3, True)
    rng = np.random.default_rng(4)
    g = rng.standard_normal((4, plan.layout_out.total_dim))
    gx, gy, gw = tp_backward_arrays(plan, x, y, w, g, ker)
    dx, dy, dw = rng.standard_normal(x.shape), rng.standard_normal(y.shape), rng.standard_normal(w.shape)
    assert np.sum(g * naive_tp(plan, dx, y, w)) == pytest.approx(np.sum(gx * dx), rel=1e-12)
    assert np.sum(g * naive_tp(plan, x, dy, w)) == pytest.approx(np.sum(gy * dy), rel=1e-12)
    assert np.sum(g * naive_tp(plan, x, y, dw)) == pytest.approx(np.sum(gw * dw), rel=1e-12)


def test_shared_weight_gradient_sums_over_batch():
    plan = full_plan(2, 2)
    x, y, w = operands(plan, 3, 5)
    g = np.ones((3, plan.layout_out.total_dim))
    _, _, gw = tp_backward(plan, x, y, w[0], g)
    assert gw.shape == (plan.weight_numel,)
    _, _, per = tp_backward(plan, x, y, np.repeat(w, 3, axis=0), g)
    np.testing.assert_allclose(gw, per.sum(0), atol=1e-12)


def test_torch_gradcheck():
    plan = build_plan(IrrepsLayout.uniform(2, 2), IrrepsLayout.uniform(1, 2), IrrepsLayout.uniform(2, 2))
    x, y, w = (torch.tensor(a, requires_grad=True) for a in operands(plan, 3, 6, True))
    assert torch.autograd.gradcheck(lambda a, b, c: tensor_product(plan, a, b, c), (x, y, w))
    ws = torch.tensor(operands(plan, 1, 7)[2][0], requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b, c: tensor_product(plan, a, b, c), (x, y, ws))


def test_empty_batch_keeps_graph():
    plan = full_plan(1, 2)
    w = torch.ones(plan.weight_numel, dtype=torch.float64, requires_grad=True)
    out = tensor_product(plan, torch.zeros((0, 8), dtype=torch.float64), torch.zeros((0, 8), dtype=torch.float64), w)
    out.sum().backward()
    assert out.shape == (0, 8) and w.grad is not None


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 31 - 1))
def test_tp_is_equivariant(L, C, seed):
    plan = full_plan(L, C)
    x, y, w = operands(plan, 2, seed, True)
    R = Rotation.random(seed)
    xv, yv = EquivariantVector(plan.layout1, x), EquivariantVector(plan.layout2, y)
    lhs = tp_forward(plan, rotate(xv, R), rotate(yv, R), w).values
    rhs = rotate(tp_forward(plan, xv, yv, w), R).values
    assert np.abs(lhs - rhs).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_tp_is_bilinear(seed, a, b):
    plan = full_plan(2, 2)
    x1, y, w = operands(plan, 2, seed, True)
    x2 = np.random.default_rng(seed + 1).standard_normal(x1.shape)
    lhs = tp_forward(plan, a * x1 + b * x2, y, w).values
    rhs = a * tp_forward(plan, x1, y, w).values + b * tp_forward(plan, x2, y, w).values
    assert np.abs(lhs - rhs).max() < 1e-10 * (1 + np.abs(rhs).max())


@pytest.mark.parametrize("name", BACKENDS)
def test_subplan_equals_zeroed_full_plan(name):
    ker = backend.available()[name]
    full = full_plan(4, 2)
    rng = np.random.default_rng(12)
    keep = [k for k in full.path_keys if rng.random() < 0.5]
    sub = full.subplan(keep)
    x, y, w_full = operands(full, 3, 13)
    offs = full.weight_offsets()
    zeroed = np.zeros_like(w_full)
    w_sub = np.concatenate([w_full[:, offs[k]:offs[k] + 2] for k in sub.path_keys], axis=1)
    for k in keep:
        zeroed[:, offs[k]:offs[k] + 2] = w_full[:, offs[k]:offs[k] + 2]
    a = tp_forward_arrays(sub, x, y, w_sub, ker)
    b = tp_forward_arrays(full, x, y, zeroed, ker)
    np.testing.assert_array_equal(a, b)


def test_set_backend_round_trip(monkeypatch):
    prev = backend.set_backend("numpy")
    try:
        assert backend.active_name() == "numpy"
    finally:
        backend.set_backend(prev)
    with pytest.raises(ValueError):
        backend.resolve("fortran")
    monkeypatch.setenv(backend.BACKEND_ENV, "numpy")
    assert backend.resolve()[0] == "numpy"


# -- jacobi kernels -----------------------------------------------------------------

@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("n", [1, 2, 5, 16, 33])
def test_jacobi_matches_lapack(name, n):
    ker = backend.available()[name]
    m = np.random.default_rng(n).standard_normal((n, n))
    a = (m + m.T) / 2
    work, v = a.copy(), np.empty((n, n))
    sweeps = ker.jacobi_eigh(work, v, 1e-13, 100)
    assert sweeps >= 0
    np.testing.assert_allclose(np.sort(np.diag(work)), np.linalg.eigvalsh(a), atol=1e-11)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(v @ np.diag(np.diag(work)) @ v.T, a, atol=1e-11)


# -- sph_linear and expansion ------------------------------------------------------

def test_sph_linear_equivariant_and_biased():
    lay = IrrepsLayout.uniform(3, 2)
    rng = np.random.default_rng(0)
    W = {l: rng.standard_normal((2, 3)) for l in range(3)}
    bias = rng.standard_normal(2)
    x = EquivariantVector.random(lay, 2, rng)
    R = Rotation.random(1)
    lhs = sph_linear(W, rotate(x, R), bias).values
    rhs = rotate(sph_linear(W, x, bias), R).values
    assert np.abs(lhs - rhs).max() < 1e-12
    zero = sph_linear(W, EquivariantVector.zeros(lay, 1), bias)
    np.testing.assert_allclose(zero.values[0, :2], bias)
    assert np.all(zero.values[0, 2:] == 0)


def test_sph_linear_shape_error():
    with pytest.raises(ContractError):
        sph_linear({0: np.ones((2, 4))}, EquivariantVector.zeros(IrrepsLayout.uniform(3, 0)))


def test_expansion_plan_counts():
    plan = build_expansion_plan(IrrepsLayout.uniform(2, 4), (0, 0, 0, 1, 1, 2))
    assert plan.dim == 14
    assert len(plan.paths) == 56
    with pytest.raises(PlanError):
        build_expansion_plan(IrrepsLayout.uniform(2, 3), (2, 2))


def test_expansion_is_block_equivariant():
    orbs = (0, 1, 2)
    lay = IrrepsLayout.uniform(2, 4)
    plan = build_expansion_plan(lay, orbs)
    rng = np.random.default_rng(5)
    f = EquivariantVector.random(lay, 2, rng)
    filt = rng.standard_normal((len(plan.paths), 2))
    bias = rng.standard_normal(2)
    R = Rotation.random(6)
    D = wigner_d_layout(plan.orbital_layout, R)
    h = tensor_expansion(plan, f, filt, bias)
    h_rot = tensor_expansion(plan, rotate(f, R), filt, bias)
    assert np.abs(h_rot - D @ h @ D.T).max() < 1e-10


def test_torch_expansion_matches_numpy():
    lay = IrrepsLayout.uniform(3, 2)
    plan = build_expansion_plan(lay, (0, 1))
    rng = np.random.default_rng(7)
    f = rng.standard_normal((2, lay.total_dim))
    filt = rng.standard_normal((2, len(plan.paths), 3))
    bias = rng.standard_normal(3)
    ref = tensor_expansion(plan, f, filt, bias)
    got = torch_expansion(ExpansionTensors(plan), torch.from_numpy(f), torch.from_numpy(filt), torch.from_numpy(bias))
    np.testing.assert_allclose(got.numpy(), ref, atol=1e-13)


def test_single_path_expansion_places_cg_block():
    lay = IrrepsLayout([(1, 0), (1, 1), (1, 2)])
    plan = build_expansion_plan(lay, (1,))
    f = np.zeros((1, lay.total_dim))
    f[0, lay.slices()[2]] = [0, 0, 1.0, 0, 0]
    filt = np.zeros((len(plan.paths), 1))
    filt[[p.l_in for p in plan.paths].index(2)] = 1.0
    h = tensor_expansion(plan, f, filt)[0]
    np.testing.assert_allclose(h, clebsch_gordan(1, 1, 2)[:, :, 2], atol=1e-15)


def test_wigner_orbital_layout_is_block_diagonal():
    plan = build_expansion_plan(IrrepsLayout.uniform(1, 2), (0, 1))
    D = wigner_d_layout(plan.orbital_layout, Rotation.random(2))
    assert D[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(D[1:, 1:], wigner_d(1, Rotation.random(2).matrix), atol=1e-12)
