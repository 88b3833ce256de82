from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from feec_proj.exceptions import ContractibilityCheckFailed, DegenerateCell, MeshError
from feec_proj.mesh import (
    Patch,
    build_complex,
    dump_mesh_json,
    load_mesh_json,
    mesh_from_name,
    subsimplex_boundary,
    unit_cube_kuhn,
    unit_square_crisscross,
    verify_patch_contractible,
)


def brute_force_edges(cells):
    return {tuple(sorted(e)) for c in cells for e in combinations(c, 2)}


def test_single_triangle_counts():
    cx = build_complex([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    assert cx.counts() == [3, 3, 1]


def test_crisscross_2x2_has_16_edges(square2):
    assert square2.num_cells == 8
    assert len(square2.vertices) == 9
    assert square2.counts()[1] == 16 == len(brute_force_edges(square2.cells.tolist()))


def test_kuhn_cube_counts(cube1):
    assert cube1.num_cells == 6
    # Euler characteristic of a ball
    v, e, f, t = cube1.counts()
    assert v - e + f - t == 1


def test_degenerate_triangle_rejected():
    with pytest.raises(DegenerateCell):
        build_complex([[0, 0], [1, 1], [2, 2]], [[0, 1, 2]])


def test_bad_vertex_reference_rejected():
    with pytest.raises(MeshError):
        build_complex([[0, 0], [1, 0], [0, 1]], [[0, 1, 3]])


@pytest.mark.parametrize("N", [2, 4])
def test_faces_deduplicated_and_cells_nondegenerate(N):
    cx = unit_square_crisscross(N)
    assert np.all(cx.volumes > 0)
    for m in range(3):
        assert len(set(cx.simplices[m])) == len(cx.simplices[m])
    assert np.isfinite(cx.shape_regularity())


def test_boundary_signs_of_edge_and_triangle():
    assert subsimplex_boundary((0, 1)) == [((1,), 1), ((0,), -1)]
    assert subsimplex_boundary((0, 1, 2)) == [((1, 2), 1), ((0, 2), -1), ((0, 1), 1)]


def test_boundary_of_boundary_vanishes():
    chain = {}
    for face, s in subsimplex_boundary((0, 1, 2, 3)):
        for g, t in subsimplex_boundary(face):
            chain[g] = chain.get(g, 0) + s * t
    assert all(v == 0 for v in chain.values())


def test_interior_vertex_macro_patch_is_star(square2):
    v = square2.simplex_id((4,))
    assert square2.vertices[4].tolist() == [0.5, 0.5]
    patch = square2.macro_patch((4,))
    assert patch.cells == frozenset(square2.cofaces[0][v])
    assert len(patch.cells) in (4, 8)


def test_vertex_extended_patch_equals_macro(square4):
    for (v,) in square4.simplices[0]:
        assert square4.extended_patch((v,)).cells == square4.macro_patch((v,)).cells


def test_edge_extended_patch_is_union_of_vertex_stars(square4):
    for e in square4.simplices[1][:10]:
        ext = square4.extended_patch(e).cells
        assert ext == square4.macro_patch(e[:1]).cells | square4.macro_patch(e[1:]).cells


def test_patch_monotonicity(cube1):
    for f in cube1.simplices[2]:
        for g in combinations(f, 2):
            assert cube1.macro_patch(f).cells <= cube1.macro_patch(g).cells
            assert cube1.extended_patch(g).cells <= cube1.extended_patch(f).cells


def test_locality_domain_levels(square4):
    for t in range(square4.num_cells):
        d0 = square4.locality_domain(t, 0).cells
        assert d0 == square4.extended_patch(tuple(square4.cells[t])).cells
        d1 = square4.locality_domain(t, 1).cells
        d2 = square4.locality_domain(t, 2).cells
        assert d0 <= d1 <= d2


def test_single_cell_locality_domain():
    cx = build_complex([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    for m in range(3):
        assert cx.locality_domain(0, m).cells == {0}


def test_contractibility():
    cx = unit_square_crisscross(3)
    assert verify_patch_contractible(cx.macro_patch((5,)))
    assert verify_patch_contractible(Patch.from_cells(cx, [0]))
    # ring of cells around the middle square
    centre = [t for t in range(cx.num_cells)
              if np.allclose(cx.vertices[cx.cells[t]].mean(0).clip(1 / 3, 2 / 3), cx.vertices[cx.cells[t]].mean(0))]
    ring = Patch.from_cells(cx, [t for t in range(cx.num_cells) if t not in centre])
    assert len(centre) == 2
    assert not verify_patch_contractible(ring)
    with pytest.raises(ContractibilityCheckFailed):
        ring.require_contractible()


def test_mesh_json_round_trip(tmp_path):
    cx = unit_cube_kuhn(1)
    path = tmp_path / "cube.json"
    dump_mesh_json(cx, path)
    back = load_mesh_json(path)
    assert np.array_equal(back.cells, cx.cells)
    assert np.allclose(back.vertices, cx.vertices)
    assert mesh_from_name(f"file:{path}", 0).counts() == cx.counts()


def test_unknown_mesh_name():
    with pytest.raises(MeshError):
        mesh_from_name("torus", 2)
