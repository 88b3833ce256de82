from __future__ import annotations

import numpy as np
import pytest

from feec_proj.cochain_projection import mean_trace_matrix
from feec_proj.fe_space import FEForm, FormSpaceSpec, GlobalSpace, constrained_subspace, random_trig_form
from feec_proj.quadrature import grundmann_moller
from feec_proj.whitney_ops import PatchData, build_weights, delta_apply, delta_matrix, patch_Q, patch_Qminus

CASES = [("square", 4, "minus", 1), ("square", 2, "minus", 2), ("cube", 1, "minus", 2)]


def integral_of_top_form(space, coeffs):
    cx = space.complex
    bary, w = grundmann_moller(cx.n, 2 * space.rho)
    u = FEForm(space, coeffs)
    return sum(cx.volumes[t] * np.sum(w * u.evaluate(t, bary)[:, 0]) for t in range(cx.num_cells))


def test_delta_delta_vanishes(square4, cube1):
    for cx in (square4, cube1):
        for m in range(cx.n - 1):
            assert not np.any(delta_matrix(cx, m + 1) @ delta_matrix(cx, m))


def test_delta_commutes_with_d(complexes, rng):
    dc = complexes("square", 4, "minus", 1)
    for m in range(2):
        for j in range(2):
            Z = rng.standard_normal((len(dc.complex.simplices[m]), dc.whitney[j].dim))
            lhs = (dc.DW[j] @ delta_apply(dc.complex, m, Z).T).T
            rhs = delta_apply(dc.complex, m, (dc.DW[j] @ Z.T).T)
            assert np.allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("case", CASES[:1] + CASES[2:])
def test_vertex_weights_have_unit_integral(case, complexes):
    dc = complexes(*case)
    w = build_weights(dc)
    Wn = dc.whitney[dc.n]
    for z in w.z[0]:
        assert integral_of_top_form(Wn, z) == pytest.approx(1.0, abs=1e-12)
    dz = delta_apply(dc.complex, 0, w.z[0])
    for row in dz[:10]:
        assert abs(integral_of_top_form(Wn, row)) < 1e-12


@pytest.mark.parametrize("case", CASES)
def test_weight_recursion_gauge_and_support(case, complexes):
    dc = complexes(*case)
    cx, n = dc.complex, dc.n
    w = build_weights(dc)
    for k in range(1, n + 1):
        j = n - k
        target = (-1) ** k * delta_apply(cx, k - 1, w.z[k - 1])
        lhs = (dc.DW[j] @ w.z[k].T).T
        assert np.abs(lhs - target).max() <= 1e-10 * max(np.abs(target).max(), 1.0)
        for fid, f in enumerate(cx.simplices[k][:8]):
            pd = PatchData(dc, cx.extended_patch(f))
            ps = pd.ps(j, True)
            outside = np.delete(w.z[k][fid], ps.dofs)
            assert not np.any(outside)
            zloc = w.z[k][fid][ps.dofs]
            S = constrained_subspace(ps, "zero-boundary").basis
            assert np.abs(zloc - S @ (S.T @ zloc)).max() < 1e-14
            if j > 0:
                Sp = constrained_subspace(pd.ps(j - 1, True), "zero-boundary").basis
                g = (pd.D(j - 1, True) @ Sp).T @ pd.mass(j, True) @ zloc
                assert np.abs(g).max(initial=0.0) < 1e-10


def test_weights_independent_of_unknown_order(complexes):
    dc = complexes("square", 2, "minus", 1)
    a, b = build_weights(dc), build_weights(dc, permute_seed=7)
    for za, zb in zip(a.z, b.z):
        assert np.abs(za - zb).max() < 1e-10


@pytest.mark.parametrize("case", CASES)
def test_M_preserves_constants_and_S0_equals_M0(case, whitney_ops):
    ops = whitney_ops(*case)
    dc = ops.dc
    ones = dc.spaces[0].ones()
    assert np.allclose(ops.M[0] @ (dc.fe_moment_matrix(0) @ ones), 1.0, atol=1e-12)
    assert np.array_equal(ops.S[0], ops.M[0])


@pytest.mark.parametrize("case", CASES)
def test_M_commutes_with_d_on_fe_forms(case, whitney_ops, rng):
    ops = whitney_ops(*case)
    dc = ops.dc
    for k in range(1, dc.n + 1):
        v = rng.standard_normal(dc.spaces[k - 1].dim)
        mom = dc.fe_moment_matrix(k - 1) @ v
        lhs = dc.DW[k - 1] @ (ops.M[k - 1] @ mom)
        rhs = ops.M[k] @ dc.shift(k - 1, mom)
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(np.abs(rhs).max(), 1.0)


def test_M_rows_are_local_to_extended_patches(whitney_ops):
    ops = whitney_ops("square", 4, "minus", 1)
    for k in range(3):
        for fid, f in enumerate(ops.complex.simplices[k][::7]):
            row = ops.M[k][ops.complex.index[k][f]]
            assert not np.any(np.delete(row, ops.extended(f).cols(k)))


@pytest.mark.parametrize("case", CASES)
def test_R_projects_onto_whitney_forms_and_commutes(case, whitney_ops):
    ops = whitney_ops(*case)
    dc = ops.dc
    for k in range(dc.n + 1):
        F = dc.fe_moment_matrix(k)
        RW = ops.R[k] @ (F @ dc.embed[k].toarray())
        assert np.abs(RW - np.eye(RW.shape[0])).max() < 1e-10
        if k < dc.n:
            lhs = dc.DW[k] @ (ops.R[k] @ F.toarray())
            rhs = ops.R[k + 1] @ (dc.fe_moment_matrix(k + 1) @ dc.D[k].toarray())
            assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


def test_R_commutes_on_smooth_scalar(whitney_ops, rng):
    ops = whitney_ops("square", 4, "minus", 1)
    dc = ops.dc
    mom = dc.moments(random_trig_form(2, 0, rng))
    lhs = dc.DW[0] @ (ops.R[0] @ mom)
    rhs = ops.R[1] @ dc.shift(0, mom)
    assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


def test_S1_preserves_edge_integrals_of_gradients(complexes, whitney_ops, rng):
    dc = complexes("square", 2, "minus", 2)
    ops = whitney_ops("square", 2, "minus", 2)
    v = rng.standard_normal(dc.spaces[0].dim)
    got = ops.S[1] @ dc.shift(0, dc.fe_moment_matrix(0) @ v)
    want = mean_trace_matrix(dc.spaces[1]) @ (dc.D[0] @ v)
    assert np.abs(got - want).max() <= 1e-9


def test_R_preserves_edge_means_of_quadratic_one_forms(whitney_ops, rng):
    ops = whitney_ops("square", 2, "minus", 2)
    dc = ops.dc
    src = GlobalSpace(dc.complex, FormSpaceSpec(1, 2, "minus"), dc.rho)
    c = rng.standard_normal(src.dim)
    got = mean_trace_matrix(dc.whitney[1]) @ (ops.R[1] @ dc.moments(FEForm(src, c), 1))
    assert np.abs(got - mean_trace_matrix(src) @ c).max() < 1e-9


@pytest.mark.parametrize("case", CASES[1:])
def test_patch_Q_reproduces_fe_forms_and_constants(case, whitney_ops, rng):
    ops = whitney_ops(*case)
    dc = ops.dc
    for k in range(dc.n + 1):
        f = ops.complex.simplices[k][len(ops.complex.simplices[k]) // 2]
        op = ops.Q(f)
        u = rng.standard_normal(dc.spaces[k].dim)
        assert np.abs(op.apply(dc.fe_moment_matrix(k) @ u) - u[op.dofs]).max() < 1e-10
    op = ops.Q(ops.complex.simplices[0][0])
    ones = dc.spaces[0].ones()
    assert np.allclose(op.apply(dc.fe_moment_matrix(0) @ ones), 1.0, atol=1e-10)


@pytest.mark.parametrize("case", CASES[1:])
def test_patch_Q_commutes_and_decomposes(case, complexes, rng):
    dc = complexes(*case)
    cx, n = dc.complex, dc.n
    f = cx.simplices[1][len(cx.simplices[1]) // 2]
    pd = PatchData(dc, cx.extended_patch(f))
    for k in range(1, n):
        u = random_trig_form(n, k - 1, rng)
        m = dc.moments(u)
        Qa, Qb = patch_Q(pd, k - 1), patch_Q(pd, k)
        lhs = Qb.apply(dc.shift(k - 1, m))
        rhs = pd.D(k - 1) @ Qa.apply(m)
        assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()
        # Q^k u = d Q_-^k u + Q_-^{k+1} du for a k-form u
        v = random_trig_form(n, k, rng)
        mv = dc.moments(v)
        total = Qb.apply(mv)
        split = pd.D(k - 1) @ patch_Qminus(pd, k).apply(mv) + patch_Qminus(pd, k + 1).apply(dc.shift(k, mv))
        assert np.abs(total - split).max() <= 1e-9 * np.abs(total).max()


def test_Qminus_reproduces_exact_fields(complexes, rng):
    dc = complexes("square", 2, "minus", 2)
    f = dc.complex.simplices[0][4]
    pd = PatchData(dc, dc.complex.extended_patch(f))
    u = rng.standard_normal(dc.spaces[0].dim)
    op = patch_Qminus(pd, 1)
    w = op.apply(dc.shift(0, dc.fe_moment_matrix(0) @ u))
    assert np.abs(pd.D(0) @ w - (dc.D[0] @ u)[pd.ps(1).dofs]).max() < 1e-10
