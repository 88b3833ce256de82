from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from feec_proj.exceptions import IncompatibleComplexSpec, IncompatibleSpaces
from feec_proj.fe_space import (
    FEForm,
    FormSpaceSpec,
    GlobalSpace,
    SampledForm,
    _broken_moments,
    build_global_space,
    constrained_subspace,
    parse_sequence,
    random_trig_form,
    restrict_to_patch,
    scalar_form,
)
from feec_proj.mesh import build_complex, unit_square_crisscross


def single_triangle():
    return build_complex([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def barycentric_of(cx, t, x):
    verts = cx.vertices[cx.cells[t]]
    A = np.vstack([verts.T, np.ones(cx.n + 1)])
    return np.linalg.solve(A, np.vstack([x.T, np.ones(len(x))])).T


def tangential(values, vectors):
    """Apply Cartesian k-form components (npts, C(n,k)) to k tangent vectors."""
    k = len(vectors)
    if k == 0:
        return values[:, 0]
    n = len(vectors[0])
    V = np.array(vectors).T
    out = np.zeros(values.shape[0])
    for j, idx in enumerate(combinations(range(n), k)):
        out += values[:, j] * np.linalg.det(V[list(idx)])
    return out


def test_whitney_edge_space_dimension(square2):
    assert build_global_space(square2, FormSpaceSpec(1, 1, "minus")).dim == 16


def test_small_space_dimensions():
    tri = single_triangle()
    assert build_global_space(tri, FormSpaceSpec(0, 1, "full")).dim == 3
    assert build_global_space(tri, FormSpaceSpec(0, 2, "full")).dim == 6


@pytest.mark.parametrize("which", ["square4", "cube1"])
def test_whitney_dimension_equals_simplex_count(which, request):
    cx = request.getfixturevalue(which)
    for k in range(cx.n + 1):
        assert build_global_space(cx, FormSpaceSpec(k, 1, "minus")).dim == cx.counts()[k]


@pytest.mark.parametrize("family,r", [("minus", 1), ("minus", 2), ("minus", 3), ("full", 1), ("full", 2)])
def test_reference_elements_unisolvent(family, r, cube1):
    for spec in parse_sequence(family, r, 3):
        space = GlobalSpace(cube1, spec)
        assert space.ref.cond < 1e10
        for m, b in space.block.items():
            assert (b == 0) == (m < spec.k or space.ref.block_size.get(m, 0) == 0)


@pytest.mark.parametrize("family,r", [("minus", 2), ("full", 2), ("minus", 3)])
def test_traces_single_valued_across_facets(family, r, rng):
    cx = unit_square_crisscross(2)
    for spec in parse_sequence(family, r, 2):
        space = GlobalSpace(cx, spec)
        u = FEForm(space, rng.standard_normal(space.dim))
        for fid, cells in enumerate(cx.cofaces[1]):
            if len(cells) != 2:
                continue
            a, b = cx.vertices[list(cx.simplices[1][fid])]
            s = np.linspace(0.1, 0.9, 5)[:, None]
            x = a + s * (b - a)
            vec = [] if spec.k == 0 else [b - a]
            if spec.k == 2:
                continue
            vals = [tangential(u.evaluate(t, barycentric_of(cx, t, x)), vec) for t in cells]
            assert np.allclose(vals[0], vals[1], atol=1e-10)


def test_d_of_hat_functions_is_signed_incidence(square2):
    P1 = GlobalSpace(square2, FormSpaceSpec(0, 1, "full"))
    W1 = GlobalSpace(square2, FormSpaceSpec(1, 1, "minus"))
    D = P1.d_matrix(W1).toarray()
    expect = np.zeros_like(D)
    for e, (a, b) in enumerate(square2.simplices[1]):
        expect[e, a], expect[e, b] = -1.0, 1.0
    assert np.allclose(D, expect, atol=1e-12)


@pytest.mark.parametrize("family", ["minus", "full"])
def test_dd_vanishes_and_constants_are_closed(family, complexes):
    dc = complexes("square", 4, family, 2)
    assert abs(dc.D[1] @ dc.D[0]).max() < 1e-12
    assert np.abs(dc.D[0] @ dc.spaces[0].ones()).max() < 1e-12


def test_d_rejects_incompatible_spaces(square2):
    a = GlobalSpace(square2, FormSpaceSpec(0, 1, "full"))
    with pytest.raises(IncompatibleSpaces):
        a.d_matrix(GlobalSpace(square2, FormSpaceSpec(2, 1, "minus")))


def test_parse_sequence():
    assert [s.label() for s in parse_sequence("minus", 2, 2)] == ["P2L0", "P2-L1", "P2-L2"]
    assert [s.label() for s in parse_sequence("full", 2, 2)] == ["P3L0", "P2L1", "P2-L2"]
    assert [s.label() for s in parse_sequence("mixed:2,2-,1,1-", 1, 3)] == ["P2L0", "P2-L1", "P1L2", "P1-L3"]
    for bad in ("mixed:2,1,1", "mixed:2,3-,1", "mixed:a,b,c", "other"):
        with pytest.raises(IncompatibleComplexSpec):
            parse_sequence(bad, 1, 2)


def test_fe_form_json_round_trip(square2, rng):
    space = GlobalSpace(square2, FormSpaceSpec(1, 2, "minus"))
    u = FEForm(space, rng.standard_normal(space.dim))
    back = FEForm.from_json(space, u.to_json())
    assert np.array_equal(back.coeffs, u.coeffs)
    with pytest.raises(IncompatibleSpaces):
        FEForm.from_json(GlobalSpace(square2, FormSpaceSpec(1, 1, "minus")), u.to_json())
    with pytest.raises(IncompatibleSpaces):
        FEForm(space, np.zeros(3))


def test_restriction_and_prolongation(square4, rng):
    space = GlobalSpace(square4, FormSpaceSpec(1, 2, "minus"))
    patch = square4.macro_patch((12,))
    ps = restrict_to_patch(space, patch)
    expected = sum(space.block[m] * len(patch.simplices(m)) for m in range(1, 3))
    assert ps.dim == expected
    c = rng.standard_normal(space.dim)
    local = ps.restrict(c)
    back = ps.prolong(local)
    assert np.array_equal(back[ps.dofs], c[ps.dofs])
    assert not np.any(np.delete(back, ps.dofs))


def test_vertex_patch_counts(square4):
    P1 = GlobalSpace(square4, FormSpaceSpec(0, 1, "full"))
    v = (12,)
    assert not square4.is_boundary(v)
    ps = restrict_to_patch(P1, square4.macro_patch(v))
    assert ps.dim == len(ps.patch.simplices(0))
    assert constrained_subspace(ps, "zero-boundary").dim == 1


def test_breve_is_codimension_one_on_k_faces(square4):
    for spec in parse_sequence("minus", 2, 2)[:2]:
        k = spec.k
        space = GlobalSpace(square4, spec)
        f = square4.simplices[k][7]
        ps = restrict_to_patch(space, square4.macro_patch(f))
        assert constrained_subspace(ps, "breve", f).dim == ps.dim - 1


def test_edge_trace_kernel_vanishes_at_endpoints(square4):
    P2 = GlobalSpace(square4, FormSpaceSpec(0, 2, "full"))
    f = next(e for e in square4.simplices[1] if not square4.is_boundary(e))
    ps = restrict_to_patch(P2, square4.extended_patch(f))
    S = constrained_subspace(ps, "zero-boundary-trace-kernel", f).basis
    assert S.shape[1] > 0
    coeffs = np.array([ps.prolong(col) for col in S.T])
    for m, ids in ((0, list(f)), (1, [square4.simplex_id(f)])):
        for fid in ids:
            assert not np.any(coeffs[:, P2.face_dofs(m, fid)])
    bd = ps.patch.boundary_simplices(0)
    for fid in bd:
        assert not np.any(coeffs[:, P2.face_dofs(0, fid)])
    assert np.linalg.matrix_rank(S) == S.shape[1]


def test_fe_moments_match_mass_matrix(complexes, rng):
    dc = complexes("square", 2, "minus", 2)
    for k in range(3):
        c = rng.standard_normal(dc.spaces[k].dim)
        mom = dc.moments(FEForm(dc.spaces[k], c))
        lay = dc.layouts[k]
        a = mom[:lay.nc * lay.na].reshape(lay.nc, lay.na)
        loads = np.zeros(dc.spaces[k].dim)
        for t in range(lay.nc):
            np.add.at(loads, dc.spaces[k].cell_dofs[t], dc.spaces[k].ref.W @ a[t])
        assert np.allclose(loads, dc.spaces[k].mass_matrix() @ c, atol=1e-12)


def test_foreign_and_native_fe_moments_agree(complexes, rng):
    dc = complexes("square", 2, "minus", 2)
    other = GlobalSpace(dc.complex, FormSpaceSpec(1, 1, "minus"), rho=1)
    c = rng.standard_normal(other.dim)
    native = dc.moments(FEForm(dc.whitney[1], c))
    assert np.allclose(dc.moments(FEForm(other, c)), native, atol=1e-12)


def test_sampled_polynomial_moments_are_exact(complexes):
    dc = complexes("square", 2, "minus", 1)
    sf = scalar_form(2, lambda x: x[:, 0], lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    coeffs = dc.complex.vertices[:, 0].copy()
    assert np.allclose(dc.moments(sf, 0), dc.fe_moment_matrix(0) @ coeffs, atol=1e-12)


def test_constant_form_has_zero_derivative_moments(complexes):
    dc = complexes("square", 2, "minus", 2)
    sf = SampledForm(0, 2, lambda x: np.ones((len(np.atleast_2d(x)), 1)), lambda x: np.zeros((len(np.atleast_2d(x)), 2)))
    mom = dc.moments(sf)
    lay = dc.layouts[0]
    assert not np.any(mom[lay.nc * lay.na:])


def test_trig_moments_converge_with_quadrature_order(rng):
    cx = unit_square_crisscross(2)
    sf = random_trig_form(2, 1, rng, freq=2.0)
    m = [_broken_moments(cx, 1, 2, sf.u, q) for q in (6, 10, 14, 21)]
    diffs = [np.abs(a - m[-1]).max() for a in m[:-1]]
    assert diffs[0] > diffs[1] > diffs[2]
    assert diffs[2] < 1e-8
