"""Oriented simplicial complexes, macroelement patches and locality domains.

Every subsimplex is stored as a tuple of global vertex indices in ascending
order, which fixes its orientation.  Cells are stored the same way, so the
local vertex order of a cell agrees with the global order on each of its
faces.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations, permutations
from math import factorial

import numpy as np

from .exceptions import (
    ContractibilityCheckFailed,
    DegenerateCell,
    DuplicateCell,
    MeshError,
    NonManifoldMesh,
)


class SimplicialComplex:
    """Simplicial mesh of a domain in R^n together with its subsimplex lattice.

    Immutable after construction.
    """

    def __init__(self, vertices, cells, allow_nonmanifold=False, name=None):
        vertices = np.asarray(vertices, dtype=float)
        if vertices.ndim != 2:
            raise MeshError("vertices must be a 2d array")
        cells = np.asarray(cells, dtype=int)
        if cells.ndim != 2:
            raise MeshError("cells must be a 2d array")
        self.n = vertices.shape[1]
        if cells.shape[1] != self.n + 1:
            raise MeshError(f"cells need {self.n + 1} vertex indices, got {cells.shape[1]}")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell references a nonexistent vertex")
        cells = np.sort(cells, axis=1)
        if len({tuple(c) for c in cells}) != len(cells):
            raise DuplicateCell("duplicate cell in mesh")
        for c in cells:
            if len(set(c)) != len(c):
                raise DegenerateCell(f"cell {tuple(c)} repeats a vertex")
        self.vertices = vertices
        self.cells = cells
        self.name = name
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

        n = self.n
        self.simplices = []
        self.index = []
        for m in range(n + 1):
            faces = sorted({tuple(int(v) for v in c[list(loc)])
                            for c in cells for loc in combinations(range(n + 1), m + 1)})
            self.simplices.append(faces)
            self.index.append({f: i for i, f in enumerate(faces)})
        # global ids of the local faces of each cell, local faces in combinations() order
        self.local_faces = [list(combinations(range(n + 1), m + 1)) for m in range(n + 1)]
        self.cell_faces = []
        for m in range(n + 1):
            idx = self.index[m]
            self.cell_faces.append(np.array(
                [[idx[tuple(int(v) for v in c[list(loc)])] for loc in self.local_faces[m]]
                 for c in cells], dtype=int).reshape(len(cells), -1))
        self.cofaces = []
        for m in range(n + 1):
            table = [[] for _ in self.simplices[m]]
            for t, row in enumerate(self.cell_faces[m]):
                for fid in row:
                    table[fid].append(t)
            self.cofaces.append([tuple(sorted(x)) for x in table])

        self._patches = {}
        self._geometry()
        for t in range(len(cells)):
            if self.volumes[t] <= 1e-13 * max(self.diameters[t], 1e-300) ** n:
                raise DegenerateCell(f"cell {tuple(cells[t])} has zero volume")

        if n >= 1:
            counts = [len(c) for c in self.cofaces[n - 1]]
            if max(counts, default=0) > 2 and not allow_nonmanifold:
                raise NonManifoldMesh("a facet is shared by more than two cells")
            self.boundary_facets = {i for i, c in enumerate(counts) if c == 1}
        else:
            self.boundary_facets = set()
        self.boundary = [set() for _ in range(n + 1)]
        for fid in self.boundary_facets:
            for g in subsimplices(self.simplices[n - 1][fid]):
                self.boundary[len(g) - 1].add(self.index[len(g) - 1][g])

    def _geometry(self):
        x = self.vertices[self.cells]              # (nc, n+1, n)
        jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))   # columns x_i - x_0
        det = np.linalg.det(jac) if self.n else np.ones(len(self.cells))
        self.signs = np.where(det >= 0, 1.0, -1.0)
        self.volumes = np.abs(det) / factorial(self.n)
        diam = np.zeros(len(self.cells))
        for i, j in combinations(range(self.n + 1), 2):
            diam = np.maximum(diam, np.linalg.norm(x[:, i] - x[:, j], axis=1))
        self.diameters = diam
        self.jacobians = jac

    # -- basic queries -------------------------------------------------
    @property
    def num_cells(self):
        return len(self.cells)

    def counts(self):
        return [len(s) for s in self.simplices]

    @property
    def h(self):
        return float(self.diameters.max())

    def shape_regularity(self):
        """max over cells of h_T^n / |T|."""
        return float(np.max(self.diameters ** self.n / self.volumes))

    def simplex_id(self, f):
        f = tuple(sorted(int(v) for v in f))
        return self.index[len(f) - 1][f]

    def cells_containing(self, f):
        f = tuple(sorted(int(v) for v in f))
        return self.cofaces[len(f) - 1][self.index[len(f) - 1][f]]

    def is_boundary(self, f):
        f = tuple(sorted(int(v) for v in f))
        m = len(f) - 1
        return self.index[m][f] in self.boundary[m]

    # -- patches --------------------------------------------------------
    def macro_patch(self, f, check=True):
        f = tuple(sorted(int(v) for v in f))
        return self._patch("macro", f, lambda: frozenset(self.cells_containing(f)), check)

    def extended_patch(self, f, check=True):
        f = tuple(sorted(int(v) for v in f))

        def cells():
            out = set()
            for v in f:
                out.update(self.cofaces[0][self.index[0][(v,)]])
            return frozenset(out)
        return self._patch("extended", f, cells, check)

    def _patch(self, kind, f, cells, check):
        key = (kind, f)
        patch = self._patches.get(key)
        if patch is None:
            patch = Patch(self, cells(), kind, f)
            self._patches[key] = patch
        if check and not patch._checked:
            patch.require_contractible()
            patch._checked = True
        return patch

    def locality_domain(self, t, m):
        return LocalityDomain(t, m, frozenset(self._domain(t, m)))

    def _domain(self, t, m, _memo=None):
        memo = {} if _memo is None else _memo
        key = (t, m)
        if key in memo:
            return memo[key]
        if m == 0:
            out = set(self.extended_patch(tuple(self.cells[t]), check=False).cells)
        else:
            out = set()
            for fid in self.cell_faces[m][t]:
                for t2 in self.cofaces[m][fid]:
                    out |= self._domain(t2, m - 1, memo)
        memo[key] = out
        return out

    def __repr__(self):
        return f"SimplicialComplex(n={self.n}, counts={self.counts()}, name={self.name!r})"


def subsimplices(f, min_dim=0):
    """All faces of f (including f) of dimension >= min_dim."""
    f = tuple(f)
    out = []
    for m in range(min_dim, len(f)):
        out.extend(combinations(f, m + 1))
    return out


def subsimplex_boundary(f):
    """Signed boundary of an oriented simplex: [(f_j, (-1)**j), ...]."""
    f = tuple(f)
    if len(f) < 2:
        raise MeshError("boundary needs a simplex of dimension >= 1")
    return [(f[:j] + f[j + 1:], (-1) ** j) for j in range(len(f))]


def build_complex(vertices, cells, **kwargs):
    return SimplicialComplex(vertices, cells, **kwargs)


@dataclass(frozen=True)
class LocalityDomain:
    cell: int
    level: int
    cells: frozenset


@dataclass(eq=False)
class Patch:
    """A set of cells of a complex, e.g. a macroelement or extended macroelement."""

    complex: SimplicialComplex
    cells: frozenset
    kind: str = "macro"
    anchor: tuple | None = None
    _simp: list = field(default=None, repr=False)
    _checked: bool = field(default=False, repr=False)

    @classmethod
    def from_cells(cls, complex, cells, kind="custom", anchor=None):
        return cls(complex, frozenset(int(c) for c in cells), kind, anchor)

    @property
    def cell_list(self):
        return sorted(self.cells)

    def simplices(self, m):
        """Sorted global ids of the m-simplices of the closed patch."""
        if self._simp is None:
            cx = self.complex
            cl = self.cell_list
            self._simp = [np.unique(cx.cell_faces[d][cl]) for d in range(cx.n + 1)]
        return self._simp[m]

    def boundary_facets(self):
        cx = self.complex
        n = cx.n
        out = []
        for fid in self.simplices(n - 1):
            inside = [t for t in cx.cofaces[n - 1][fid] if t in self.cells]
            if len(inside) == 1:
                out.append(int(fid))
        return out

    def boundary_simplices(self, m):
        """Ids of m-simplices contained in the topological boundary of the patch."""
        return self._closure_ids(self.boundary_facets(), m)

    def interior_boundary_facets(self):
        """Patch boundary facets that are not on the boundary of the domain."""
        return [f for f in self.boundary_facets() if f not in self.complex.boundary_facets]

    def exterior_simplices(self, m):
        """Ids of m-simplices of the patch that also belong to a cell outside it."""
        cx = self.complex
        out = set()
        for fid in self.simplices(m):
            if any(t not in self.cells for t in cx.cofaces[m][fid]):
                out.add(int(fid))
        return out

    def _closure_ids(self, facet_ids, m):
        cx = self.complex
        out = set()
        for fid in facet_ids:
            for g in combinations(cx.simplices[cx.n - 1][fid], m + 1):
                out.add(cx.index[m][g])
        return out

    def betti_numbers(self, relative=False):
        """Betti numbers of the patch (or relative to its boundary) from incidence ranks."""
        cx = self.complex
        n = cx.n
        ids = []
        for m in range(n + 1):
            s = [int(i) for i in self.simplices(m)]
            if relative:
                bd = self.boundary_simplices(m)
                s = [i for i in s if i not in bd]
            ids.append(s)
        ranks = []
        for m in range(n):
            rows = {g: r for r, g in enumerate(ids[m + 1])}
            cols = {g: c for c, g in enumerate(ids[m])}
            mat = np.zeros((len(rows), len(cols)))
            for g, r in rows.items():
                for face, sgn in subsimplex_boundary(cx.simplices[m + 1][g]):
                    c = cols.get(cx.index[m].get(face))
                    if c is not None:
                        mat[r, c] = sgn
            ranks.append(int(np.linalg.matrix_rank(mat)) if mat.size else 0)
        ranks.append(0)
        betti = []
        for m in range(n + 1):
            prev = ranks[m - 1] if m > 0 else 0
            betti.append(len(ids[m]) - ranks[m] - prev)
        return betti

    def require_contractible(self):
        if not verify_patch_contractible(self):
            raise ContractibilityCheckFailed(
                f"{self.kind} patch anchored at {self.anchor} is not contractible")
        return self


def verify_patch_contractible(patch):
    """True iff the lowest order local complexes have the cohomology of a ball."""
    n = patch.complex.n
    full = patch.betti_numbers()
    rel = patch.betti_numbers(relative=True)
    return full == [1] + [0] * n and rel == [0] * n + [1]


# -- generators and IO ---------------------------------------------------------

def unit_square_crisscross(N):
    """N x N squares, each cut by one diagonal whose direction alternates."""
    xs = np.linspace(0.0, 1.0, N + 1)
    verts = np.array([[x, y] for y in xs for x in xs])

    def vid(i, j):
        return j * (N + 1) + i

    cells = []
    for j in range(N):
        for i in range(N):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                cells += [(a, b, c), (a, c, d)]
            else:
                cells += [(a, b, d), (b, c, d)]
    return SimplicialComplex(verts, cells, name=f"unit-square-crisscross-{N}")


def unit_cube_kuhn(N):
    """N^3 cubes, each split into 6 tetrahedra sharing the main diagonal."""
    xs = np.linspace(0.0, 1.0, N + 1)
    verts = np.array([[x, y, z] for z in xs for y in xs for x in xs])

    def vid(i, j, k):
        return (k * (N + 1) + j) * (N + 1) + i

    cells = []
    for k in range(N):
        for j in range(N):
            for i in range(N):
                for perm in permutations(range(3)):
                    p = [i, j, k]
                    tet = [vid(*p)]
                    for axis in perm:
                        p[axis] += 1
                        tet.append(vid(*p))
                    cells.append(tet)
    return SimplicialComplex(verts, cells, name=f"unit-cube-kuhn-{N}")


def load_mesh_json(path):
    with open(path) as fh:
        data = json.load(fh)
    verts = np.asarray(data["vertices"], dtype=float)
    if "dim" in data and verts.shape[1] != data["dim"]:
        raise MeshError("vertex coordinates do not match 'dim'")
    return SimplicialComplex(verts, data["cells"], name=str(path))


def dump_mesh_json(complex, path):
    with open(path, "w") as fh:
        json.dump({"dim": complex.n, "vertices": complex.vertices.tolist(),
                   "cells": complex.cells.tolist()}, fh)


def mesh_from_name(name, N):
    if name == "unit-square-crisscross":
        return unit_square_crisscross(N)
    if name == "unit-cube-kuhn":
        return unit_cube_kuhn(N)
    if name.startswith("file:"):
        return load_mesh_json(name[5:])
    raise MeshError(f"unknown mesh {name!r}")
