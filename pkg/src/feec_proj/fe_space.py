"""Finite element spaces of differential forms on a simplicial complex.

Global DOFs are ordered by (dim f, lexicographic vertex tuple of f, dual-basis
index).  Inputs are handed to the projection operators as *moment vectors*:
per cell, the L2 inner products of u against the full monomial basis
lambda^alpha dlambda_sigma of degree rho, followed by the same moments of du.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    DegreeMismatch,
    IncompatibleComplexSpec,
    IncompatibleSpaces,
    QuadratureOrderTooLow,
    UnisolvenceFailure,
)
from .polyform import (
    BarycentricPolyForm,
    form_index_sets,
    local_basis,
    mass_matrix,
    multi_indices,
    volume_form,
)
from .quadrature import MAX_DEGREE, grundmann_moller

FAMILIES = ("full", "minus")


@dataclass(frozen=True)
class FormSpaceSpec:
    """P_r k-forms (family "full") or P_r^- k-forms (family "minus")."""

    k: int
    r: int
    family: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise IncompatibleComplexSpec(f"unknown family {self.family!r}")
        if self.k < 0:
            raise IncompatibleComplexSpec("form degree must be nonnegative")
        if self.family == "minus" and self.r < 1:
            raise IncompatibleComplexSpec("trimmed spaces need r >= 1")
        if self.family == "full" and self.r < 0:
            raise IncompatibleComplexSpec("full spaces need r >= 0")

    def canonical(self, n):
        """Unique name of the same space: P_r^- 0-forms are P_r, P_r n-forms are P_{r+1}^-."""
        if self.k > n:
            raise IncompatibleComplexSpec(f"k={self.k} exceeds dimension {n}")
        if self.family == "minus" and self.k == 0:
            return FormSpaceSpec(0, self.r, "full")
        if self.family == "full" and self.k == n:
            return FormSpaceSpec(n, self.r + 1, "minus")
        if self.family == "full" and self.r < 1:
            raise IncompatibleComplexSpec("P_0 is only a valid space for k = n")
        return self

    def degree(self, n):
        """Polynomial degree of the members."""
        c = self.canonical(n)
        if c.family == "minus" and c.k == n:
            return c.r - 1
        return c.r

    def label(self):
        return f"P{self.r}{'-' if self.family == 'minus' else ''}L{self.k}"

    def to_dict(self):
        return {"k": self.k, "r": self.r, "family": self.family}


def whitney_spec(k):
    return FormSpaceSpec(k, 1, "minus")


def parse_sequence(family, r, n):
    """Spec list for k = 0..n.

    family "minus": P_r^- for every k.  family "full": the full-family complex
    ending in P_{r-1} n-forms, i.e. P_{r+n-1-k} k-forms.  family "mixed:SPEC":
    comma separated tokens, one per k, "3" for P_3 and "3-" for P_3^-.
    """
    if family == "minus":
        seq = [FormSpaceSpec(k, r, "minus") for k in range(n + 1)]
    elif family == "full":
        seq = [FormSpaceSpec(k, r + n - 1 - k, "full") for k in range(n + 1)]
    elif family.startswith("mixed:"):
        tokens = [t.strip() for t in family[6:].split(",") if t.strip()]
        if len(tokens) != n + 1:
            raise IncompatibleComplexSpec(f"mixed sequence needs {n + 1} tokens, got {len(tokens)}")
        seq = []
        for k, tok in enumerate(tokens):
            minus = tok.endswith("-")
            try:
                deg = int(tok.rstrip("-"))
            except ValueError:
                raise IncompatibleComplexSpec(f"bad token {tok!r}") from None
            seq.append(FormSpaceSpec(k, deg, "minus" if minus else "full"))
    else:
        raise IncompatibleComplexSpec(f"unknown family {family!r}")
    return check_sequence(seq, n)


def check_sequence(seq, n):
    """Validate that the specs form an exact polynomial complex; return canonical specs."""
    if len(seq) != n + 1 or [s.k for s in seq] != list(range(n + 1)):
        raise IncompatibleComplexSpec("need one spec for each k = 0..n")
    can = [s.canonical(n) for s in seq]
    for a, b in zip(can, can[1:]):
        # from P_r or P_r^- the exact continuations are P_{r-1} and P_r^-
        allowed = {FormSpaceSpec(b.k, rr, fam).canonical(n)
                   for fam, rr in (("full", a.r - 1), ("minus", a.r)) if _valid(b.k, rr, fam, n)}
        if b not in allowed:
            raise IncompatibleComplexSpec(f"{a.label()} -> {b.label()} is not an exact polynomial complex")
    return can


def _valid(k, r, family, n):
    try:
        FormSpaceSpec(k, r, family).canonical(n)
    except IncompatibleComplexSpec:
        return False
    return True


def broken_size(n, k, rho):
    return len(multi_indices(n, rho)) * comb(n, k)


def dual_basis(spec, m):
    """Basis of the test space P'(f, k) on an m-face f."""
    k, r = spec.k, spec.r
    if m < k:
        return []
    if spec.family == "minus":
        return local_basis("full", r + k - m - 1, m - k, m).forms
    return local_basis("minus", r + k - m, m - k, m).forms


def _face_functional(face, eta, k, n, rho):
    """Row vector of u -> int_face tr_face(u) ^ eta over degree-rho monomials."""
    m = len(face) - 1
    out = []
    for a in multi_indices(n, rho):
        for s in form_index_sets(n, k):
            mono = BarycentricPolyForm(n, k, {(a, s): 1.0})
            out.append(mono.trace(face).wedge(eta).integrate() if m >= k else 0.0)
    return np.array(out)


def _mean_functional(face, k, n, rho):
    m = len(face) - 1
    return _face_functional(face, BarycentricPolyForm.constant(m), k, n, rho)


@lru_cache(maxsize=None)
def reference_element(n, spec, rho):
    return ReferenceElement(n, spec, rho)


class ReferenceElement:
    """Nodal basis of one space on the reference n-simplex, vectorized at degree rho."""

    def __init__(self, n, spec, rho, cond_max=1e12):
        spec = spec.canonical(n)
        self.n, self.spec, self.rho, self.k = n, spec, rho, spec.k
        if spec.degree(n) > rho:
            raise DegreeMismatch(f"{spec.label()} does not fit broken degree {rho}")
        k = spec.k
        if spec.family == "minus" and k == n:
            # same space as P_{r-1}; the Whitney-wedge spanning set has a higher formal degree
            basis = local_basis("full", spec.r - 1, k, n)
        else:
            basis = local_basis(spec.family, spec.r, k, n)
        bmat = basis.matrix(rho)
        self.dof_faces = []      # (local face tuple, index in block)
        self.block_size = {}
        rows = []
        for m in range(k, n + 1):
            duals = dual_basis(spec, m)
            self.block_size[m] = len(duals)
            for face in combinations(range(n + 1), m + 1):
                for i, eta in enumerate(duals):
                    rows.append(_face_functional(face, eta, k, n, rho))
                    self.dof_faces.append((face, i))
        self.L = np.array(rows).reshape(len(rows), bmat.shape[1])
        V = self.L @ bmat.T
        if V.shape[0] != V.shape[1]:
            raise UnisolvenceFailure(f"{spec.label()}: {V.shape[0]} DOFs for a {V.shape[1]}-dim space")
        cond = np.linalg.cond(V)
        if not np.isfinite(cond) or cond > cond_max:
            raise UnisolvenceFailure(f"{spec.label()}: DOF matrix condition {cond:.3g}")
        self.cond = cond
        self.W = np.linalg.solve(V.T, bmat)        # rows: nodal basis at degree rho
        self.ndof = self.W.shape[0]
        self.nbroken = bmat.shape[1]
        self.face_slices = {}
        pos = 0
        for m in range(k, n + 1):
            for face in combinations(range(n + 1), m + 1):
                self.face_slices[face] = slice(pos, pos + self.block_size[m])
                pos += self.block_size[m]
        self.mean_weights = {}
        for face in combinations(range(n + 1), k + 1):
            mu = self.W @ _mean_functional(face, k, n, rho)
            sl = self.face_slices[face]
            off = np.delete(mu, np.arange(sl.start, sl.stop))
            if np.max(np.abs(off), initial=0.0) > 1e-10:
                raise UnisolvenceFailure("mean trace is not a function of the face DOFs")
            self.mean_weights[face] = mu[sl]
        self.ones = self.L @ BarycentricPolyForm.constant(n).to_vector(rho) if k == 0 else None
        self.W.setflags(write=False)

    def nodal_form(self, i):
        return BarycentricPolyForm.from_vector(self.n, self.k, self.rho, self.W[i])

    def interpolate(self, vec):
        """DOF values of a degree-rho broken form given as a vector."""
        return self.L @ vec


@lru_cache(maxsize=None)
def broken_derivative(n, k, rho):
    """Matrix of d on degree-rho monomial vectors, output homogenized to degree rho."""
    cols = []
    for a in multi_indices(n, rho):
        for s in form_index_sets(n, k):
            cols.append(BarycentricPolyForm(n, k, {(a, s): 1.0}).d().to_vector(rho))
    out = np.array(cols).T
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def local_d(n, spec_a, spec_b, rho):
    ea, eb = reference_element(n, spec_a, rho), reference_element(n, spec_b, rho)
    if eb.k != ea.k + 1:
        raise IncompatibleSpaces("d maps k-forms to (k+1)-forms")
    dvec = broken_derivative(n, ea.k, rho) @ ea.W.T
    dl = eb.L @ dvec
    if np.max(np.abs(eb.W.T @ dl - dvec), initial=0.0) > 1e-9 * max(1.0, np.abs(dvec).max()):
        raise IncompatibleSpaces(f"d {spec_a.label()} is not contained in {spec_b.label()}")
    dl[np.abs(dl) < 1e-13] = 0.0
    return dl


@lru_cache(maxsize=None)
def local_embedding(n, spec_from, spec_to, rho):
    ea, eb = reference_element(n, spec_from, rho), reference_element(n, spec_to, rho)
    emb = eb.L @ ea.W.T
    if np.max(np.abs(eb.W.T @ emb - ea.W.T), initial=0.0) > 1e-9:
        raise IncompatibleSpaces(f"{spec_from.label()} is not contained in {spec_to.label()}")
    emb[np.abs(emb) < 1e-13] = 0.0
    return emb


@lru_cache(maxsize=None)
def wedge_matrix(n, k, rho):
    """X[j, i] = integral over the reference cell of e_j ^ psi_i for Whitney (n-k)-forms psi_i."""
    wel = reference_element(n, whitney_spec(n - k), rho)
    out = np.zeros((broken_size(n, k, rho), wel.ndof))
    psis = [wel.nodal_form(i) for i in range(wel.ndof)]
    j = 0
    for a in multi_indices(n, rho):
        for s in form_index_sets(n, k):
            mono = BarycentricPolyForm(n, k, {(a, s): 1.0})
            for i, psi in enumerate(psis):
                out[j, i] = mono.wedge(psi).integrate()
            j += 1
    return out


def unit_volume_vector(n, rho):
    return volume_form(n).to_vector(rho)


def _dedupe_coo(rows, cols, vals, shape):
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    key = rows.astype(np.int64) * shape[1] + cols
    _, first = np.unique(key, return_index=True)
    mat = sp.csr_matrix((vals[first], (rows[first], cols[first])), shape=shape)
    mat.eliminate_zeros()
    return mat


class GlobalSpace:
    """A finite element space of k-forms on a complex, with its DOF numbering."""

    def __init__(self, complex, spec, rho=None):
        n = complex.n
        self.complex = complex
        self.spec = spec.canonical(n)
        self.k = self.spec.k
        self.rho = max(self.spec.degree(n), 1) if rho is None else rho
        self.ref = reference_element(n, self.spec, self.rho)
        counts = complex.counts()
        self.block = {m: self.ref.block_size.get(m, 0) for m in range(n + 1)}
        self.offset = {}
        pos = 0
        for m in range(n + 1):
            self.offset[m] = pos
            pos += self.block[m] * counts[m] if m >= self.k else 0
        self.dim = pos
        cols = []
        for m in range(self.k, n + 1):
            b = self.block[m]
            ids = complex.cell_faces[m]                     # (nc, nfaces)
            cols.append((self.offset[m] + ids[:, :, None] * b + np.arange(b)).reshape(len(ids), -1))
        self.cell_dofs = np.concatenate(cols, axis=1) if cols else np.zeros((complex.num_cells, 0), int)
        self.cell_dofs.setflags(write=False)

    @property
    def n(self):
        return self.complex.n

    @property
    def nbroken(self):
        return self.ref.nbroken

    def face_dofs(self, m, fid):
        b = self.block.get(m, 0) if m >= self.k else 0
        start = self.offset.get(m, 0) + fid * b
        return np.arange(start, start + b)

    def dofs_on(self, simplex_ids_by_dim):
        """Global DOFs attached to the given subsimplices, {m: iterable of ids}."""
        out = [self.face_dofs(m, f) for m, ids in simplex_ids_by_dim.items() if m >= self.k for f in ids]
        return np.unique(np.concatenate(out)) if out else np.zeros(0, int)

    def cell_grams(self, k=None):
        """Broken Gram matrices B_T for all cells, shape (nc, N, N)."""
        k = self.k if k is None else k
        return _cell_grams(self.complex, k, self.rho)

    def mass_matrix(self):
        W = self.ref.W
        B = self.cell_grams()
        loc = np.einsum("ij,tjl,ml->tim", W, B, W)
        return _assemble(self.cell_dofs, loc, self.dim)

    def d_matrix(self, target):
        """Sparse matrix of d from this space to `target` (assign semantics)."""
        if target.k != self.k + 1 or target.complex is not self.complex:
            raise IncompatibleSpaces("d maps k-forms to (k+1)-forms on the same complex")
        if target.rho != self.rho:
            raise IncompatibleSpaces("spaces must share the broken degree")
        dl = local_d(self.n, self.spec, target.spec, self.rho)
        return _assign_blocks(target.cell_dofs, self.cell_dofs, dl, (target.dim, self.dim))

    def embedding_from(self, other):
        """Sparse inclusion matrix of a subspace `other` (same k) into this space."""
        if other.k != self.k or other.rho != self.rho:
            raise IncompatibleSpaces("embedding needs equal k and broken degree")
        emb = local_embedding(self.n, other.spec, self.spec, self.rho)
        return _assign_blocks(self.cell_dofs, other.cell_dofs, emb, (self.dim, other.dim))

    def interpolate_broken(self, vecs):
        """Global coefficients from per-cell degree-rho vectors (nc, N) of a conforming form."""
        out = np.zeros(self.dim)
        for t in range(self.complex.num_cells):
            out[self.cell_dofs[t]] = self.ref.L @ vecs[t]
        return out

    def broken_vectors(self, coeffs):
        """Per-cell degree-rho vectors (nc, N) of an FE coefficient vector."""
        return np.asarray(coeffs)[self.cell_dofs] @ self.ref.W

    def ones(self):
        if self.k != 0:
            raise DegreeMismatch("constants are 0-forms")
        return self.interpolate_broken(np.tile(BarycentricPolyForm.constant(self.n).to_vector(self.rho),
                                               (self.complex.num_cells, 1)))

    def cell_norms2(self, coeffs):
        v = self.broken_vectors(coeffs)
        return np.einsum("ti,tij,tj->t", v, self.cell_grams(), v)

    def __repr__(self):
        return f"GlobalSpace({self.spec.label()}, dim={self.dim}, rho={self.rho})"


@lru_cache(maxsize=64)
def _cached_grams(cid, k, rho):
    complex = _GRAM_OWNERS[cid]
    n = complex.n
    out = []
    for t in range(complex.num_cells):
        grads = _cell_grads(complex, t)
        out.append(mass_matrix(n, k, rho, rho, grads, complex.volumes[t]))
    arr = np.array(out)
    arr.setflags(write=False)
    return arr


_GRAM_OWNERS = {}


def _cell_grams(complex, k, rho):
    _GRAM_OWNERS[id(complex)] = complex
    return _cached_grams(id(complex), k, rho)


def _cell_grads(complex, t):
    """Gradients of the barycentric coordinates of cell t, shape (n+1, n)."""
    inv = np.linalg.inv(complex.jacobians[t])    # rows: grads of lambda_1..lambda_n
    return np.vstack([-inv.sum(axis=0), inv])


def _assemble(cell_dofs, loc, dim):
    nc, a = cell_dofs.shape
    rows = np.repeat(cell_dofs, a, axis=1).ravel()
    cols = np.tile(cell_dofs, (1, a)).ravel()
    return sp.csr_matrix((loc.reshape(nc, -1).ravel(), (rows, cols)), shape=(dim, dim))


def _assign_blocks(row_dofs, col_dofs, block, shape):
    nz = np.nonzero(block)
    rows = [row_dofs[:, nz[0]].ravel()]
    cols = [col_dofs[:, nz[1]].ravel()]
    vals = [np.tile(block[nz], row_dofs.shape[0])]
    return _dedupe_coo(rows, cols, vals, shape)


def build_global_space(complex, spec, rho=None):
    return GlobalSpace(complex, spec, rho)


# -- forms ---------------------------------------------------------------------

@dataclass
class FEForm:
    space: GlobalSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise IncompatibleSpaces("coefficient vector does not match the space")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    @property
    def k(self):
        return self.space.k

    def __add__(self, other):
        if other.space is not self.space:
            raise IncompatibleSpaces("forms live in different spaces")
        return FEForm(self.space, self.coeffs + other.coeffs)

    def __mul__(self, s):
        return FEForm(self.space, self.coeffs * s)

    __rmul__ = __mul__

    def evaluate(self, t, bary):
        """Cartesian components at barycentric points of cell t."""
        vec = self.space.broken_vectors(self.coeffs)[t]
        form = BarycentricPolyForm.from_vector(self.space.n, self.k, self.space.rho, vec)
        return form.evaluate(bary, _cell_grads(self.space.complex, t))

    def to_json(self):
        return json.dumps({"spec": self.space.spec.to_dict(), "coefficients": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, space, text):
        data = json.loads(text)
        spec = FormSpaceSpec(**data["spec"]).canonical(space.n)
        if spec != space.spec:
            raise IncompatibleSpaces("serialized spec differs from the target space")
        return cls(space, np.array(data["coefficients"]))


@dataclass
class SampledForm:
    """A k-form known through point evaluators of u and du (Cartesian components)."""

    k: int
    n: int
    u: object
    du: object
    degree: int = 6

    def __call__(self, x):
        return self.u(x)


def random_trig_form(n, k, rng, nterms=2, freq=1.0):
    """A smooth k-form with trigonometric components and its exact derivative."""
    comps = list(combinations(range(n), k))
    terms = []  # (component index, amplitude, wave vector, phase)
    for c in range(len(comps)):
        for _ in range(nterms):
            terms.append((c, rng.normal(), rng.uniform(-freq, freq, n) * np.pi, rng.uniform(0, 2 * np.pi)))
    dcomps = list(combinations(range(n), k + 1))
    dindex = {c: i for i, c in enumerate(dcomps)}

    def u(x):
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], len(comps)))
        for c, a, w, p in terms:
            out[:, c] += a * np.sin(x @ w + p)
        return out

    def du(x):
        x = np.atleast_2d(x)
        out = np.zeros((x.shape[0], len(dcomps)))
        for c, a, w, p in terms:
            base = comps[c]
            val = a * np.cos(x @ w + p)
            for i in range(n):
                if i in base:
                    continue
                idx = tuple(sorted((i,) + base))
                sign = (-1) ** sum(1 for b in base if b < i)
                out[:, dindex[idx]] += sign * w[i] * val
        return out

    return SampledForm(k, n, u, du, degree=12)


def scalar_form(n, f, grad):
    """SampledForm of a scalar function with a known gradient."""
    return SampledForm(0, n, lambda x: f(np.atleast_2d(x))[:, None], lambda x: grad(np.atleast_2d(x)))


# -- moment vectors ------------------------------------------------------------

class MomentLayout:
    """Column layout of moment vectors: [a_T for all T] then [b_T for all T]."""

    def __init__(self, nc, na, nb):
        self.nc, self.na, self.nb = nc, na, nb
        self.size = nc * (na + nb)

    def a_cols(self, t):
        return t * self.na + np.arange(self.na)

    def b_cols(self, t):
        return self.nc * self.na + t * self.nb + np.arange(self.nb)

    def cols(self, cells):
        cells = sorted(cells)
        return np.concatenate([self.a_cols(t) for t in cells] + [self.b_cols(t) for t in cells]).astype(int)

    def cell_of(self, cols):
        cols = np.asarray(cols)
        a = cols < self.nc * self.na
        return np.where(a, cols // max(self.na, 1), (cols - self.nc * self.na) // max(self.nb, 1))


def quadrature_degree(space, sf, cap=MAX_DEGREE):
    q = max(2 * space.rho + 2, space.rho + sf.degree)
    if q > cap:
        raise QuadratureOrderTooLow(f"quadrature degree {q} exceeds the cap {cap}")
    return q


def _broken_moments(complex, k, rho, func, q):
    """Per-cell L2 moments of a sampled k-form against degree-rho monomials."""
    n = complex.n
    bary, wts = grundmann_moller(n, q)
    alphas = multi_indices(n, rho)
    sigmas = form_index_sets(n, k)
    mono = np.stack([np.prod(bary ** np.asarray(a), axis=1) for a in alphas], axis=1)   # (q, A)
    comps = list(combinations(range(n), k))
    out = np.zeros((complex.num_cells, len(alphas) * len(sigmas)))
    for t in range(complex.num_cells):
        x = bary @ complex.vertices[complex.cells[t]]
        vals = func(x)                                   # (q, C(n,k))
        grads = _cell_grads(complex, t)
        comp = np.array([[np.linalg.det(grads[list(s)][:, list(c)]) if k else 1.0 for c in comps]
                         for s in sigmas])               # (S, C)
        proj = vals @ comp.T                              # (q, S)
        out[t] = complex.volumes[t] * np.einsum("q,qa,qs->as", wts, mono, proj).ravel()
    return out


class DiscreteComplex:
    """The spaces V^0..V^n of an exact sequence on one mesh, sharing a broken degree."""

    def __init__(self, complex, sequence):
        n = complex.n
        self.complex = complex
        self.sequence = check_sequence(list(sequence), n)
        self.rho = max(1, max(s.degree(n) for s in self.sequence))
        self.spaces = [GlobalSpace(complex, s, self.rho) for s in self.sequence]
        self.whitney = [GlobalSpace(complex, whitney_spec(k), self.rho) for k in range(n + 1)]
        self.D = [self.spaces[k].d_matrix(self.spaces[k + 1]) for k in range(n)]
        self.DW = [self.whitney[k].d_matrix(self.whitney[k + 1]) for k in range(n)]
        self.embed = [self.spaces[k].embedding_from(self.whitney[k]) for k in range(n + 1)]
        nc = complex.num_cells
        self.layouts = [MomentLayout(nc, broken_size(n, k, self.rho),
                                     broken_size(n, k + 1, self.rho) if k < n else 0)
                        for k in range(n + 1)]
        self._fe_moment = {}

    @classmethod
    def from_family(cls, complex, family, r):
        return cls(complex, parse_sequence(family, r, complex.n))

    @property
    def n(self):
        return self.complex.n

    def grams(self, k):
        return _cell_grams(self.complex, k, self.rho) if k <= self.n else None

    def fe_moment_matrix(self, k):
        """Sparse map from V^k coefficients to moment vectors of (u, du)."""
        if k in self._fe_moment:
            return self._fe_moment[k]
        n, sp_k = self.n, self.spaces[k]
        lay = self.layouts[k]
        rows, cols, vals = [], [], []
        B = self.grams(k)
        Wk = sp_k.ref.W
        for t in range(self.complex.num_cells):
            blk = B[t] @ Wk.T
            r_, c_ = np.nonzero(np.abs(blk) > 0)
            rows.append(lay.a_cols(t)[r_]); cols.append(sp_k.cell_dofs[t][c_]); vals.append(blk[r_, c_])
        if k < n:
            B1 = self.grams(k + 1)
            dl = local_d(n, sp_k.spec, self.spaces[k + 1].spec, self.rho)
            W1 = self.spaces[k + 1].ref.W
            for t in range(self.complex.num_cells):
                blk = B1[t] @ W1.T @ dl
                r_, c_ = np.nonzero(np.abs(blk) > 0)
                rows.append(lay.b_cols(t)[r_]); cols.append(sp_k.cell_dofs[t][c_]); vals.append(blk[r_, c_])
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(lay.size, sp_k.dim))
        self._fe_moment[k] = mat
        return mat

    def moments(self, u, k=None):
        """Moment vector of an FEForm, a SampledForm or a raw V^k coefficient vector."""
        if isinstance(u, FEForm):
            if k is not None and u.k != k:
                raise DegreeMismatch(f"expected a {k}-form, got a {u.k}-form")
            if u.space is self.spaces[u.k] or (u.space.spec == self.spaces[u.k].spec
                                               and u.space.complex is self.complex):
                return self.fe_moment_matrix(u.k) @ u.coeffs
            return self.foreign_fe_moments(u)
        if isinstance(u, SampledForm):
            if k is not None and u.k != k:
                raise DegreeMismatch(f"expected a {k}-form, got a {u.k}-form")
            q = quadrature_degree(self.spaces[u.k], u)
            a = _broken_moments(self.complex, u.k, self.rho, u.u, q)
            if u.k < self.n:
                b = _broken_moments(self.complex, u.k + 1, self.rho, u.du, q)
                return np.concatenate([a.ravel(), b.ravel()])
            return a.ravel()
        if k is None:
            raise DegreeMismatch("raw coefficient vectors need an explicit k")
        return self.fe_moment_matrix(k) @ np.asarray(u, dtype=float)

    def foreign_fe_moments(self, u):
        """Moments of an FE form from a different space on the same mesh (exact, cross Gram)."""
        space, k, n = u.space, u.k, self.n
        if space.complex is not self.complex:
            raise IncompatibleSpaces("form lives on a different mesh")
        vecs = space.broken_vectors(u.coeffs)
        a = _cross_moments(self.complex, k, self.rho, space.rho, vecs)
        if k == n:
            return a.ravel()
        dvecs = vecs @ broken_derivative(n, k, space.rho).T
        b = _cross_moments(self.complex, k + 1, self.rho, space.rho, dvecs)
        return np.concatenate([a.ravel(), b.ravel()])

    def shift(self, k, moments):
        """Moment vector of du from that of u (the b-part, with zero second derivative)."""
        lay = self.layouts[k]
        b = moments[lay.nc * lay.na:]
        if k + 1 == self.n:
            return b.copy()
        return np.concatenate([b, np.zeros(self.layouts[k + 1].nc * self.layouts[k + 1].nb)])

    def shift_matrix(self, k):
        lay, lay1 = self.layouts[k], self.layouts[k + 1]
        nb = lay.nc * lay.nb
        return sp.csr_matrix((np.ones(nb), (np.arange(nb), lay.nc * lay.na + np.arange(nb))),
                             shape=(lay1.size, lay.size))

    def fe_form(self, k, coeffs):
        return FEForm(self.spaces[k], coeffs)


def _cross_moments(complex, k, rho, deg, vecs):
    out = np.zeros((complex.num_cells, broken_size(complex.n, k, rho)))
    for t in range(complex.num_cells):
        m = mass_matrix(complex.n, k, rho, deg, _cell_grads(complex, t), complex.volumes[t])
        out[t] = m @ vecs[t]
    return out


# -- patch restriction ---------------------------------------------------------

class PatchSpace:
    """Restriction of a global space to the cells of a patch."""

    def __init__(self, space, patch):
        self.space = space
        self.patch = patch
        self.cells = np.array(patch.cell_list, dtype=int)
        self.dofs = np.unique(space.cell_dofs[self.cells]) if len(self.cells) else np.zeros(0, int)
        self.cell_loc = np.searchsorted(self.dofs, space.cell_dofs[self.cells])
        self.dim = len(self.dofs)

    @property
    def k(self):
        return self.space.k

    def local_index(self, global_dofs):
        global_dofs = np.asarray(global_dofs, dtype=int)
        pos = np.searchsorted(self.dofs, global_dofs)
        ok = (pos < self.dim) & (self.dofs[np.minimum(pos, self.dim - 1)] == global_dofs) if self.dim else \
            np.zeros(len(global_dofs), bool)
        return pos[ok]

    def dofs_on(self, simplex_ids_by_dim):
        return self.local_index(self.space.dofs_on(simplex_ids_by_dim))

    def mass(self):
        W = self.space.ref.W
        B = self.space.cell_grams()[self.cells]
        out = np.zeros((self.dim, self.dim))
        for j, loc in enumerate(self.cell_loc):
            out[np.ix_(loc, loc)] += W @ B[j] @ W.T
        return out

    def load_matrix(self):
        """Dense map from patch a-moments (cells in ascending order) to <u, phi_i>."""
        W = self.space.ref.W
        N = W.shape[1]
        out = np.zeros((self.dim, len(self.cells) * N))
        for j, loc in enumerate(self.cell_loc):
            out[loc, j * N:(j + 1) * N] += W
        return out

    def restrict(self, coeffs):
        return np.asarray(coeffs)[self.dofs]

    def prolong(self, local):
        out = np.zeros(self.space.dim)
        out[self.dofs] = local
        return out


def restrict_to_patch(space, patch):
    return PatchSpace(space, patch)


def patch_d(dc_or_D, ps_from, ps_to):
    D = dc_or_D
    return D[np.ix_(ps_to.dofs, ps_from.dofs)].toarray() if sp.issparse(D) else D[np.ix_(ps_to.dofs, ps_from.dofs)]


def selection_basis(dim, remove):
    keep = np.setdiff1d(np.arange(dim), np.asarray(remove, dtype=int))
    S = np.zeros((dim, len(keep)))
    S[keep, np.arange(len(keep))] = 1.0
    return S


class ConstrainedSubspace:
    """Column basis of a constrained coefficient set inside a PatchSpace."""

    def __init__(self, parent, kind, basis, anchor=None):
        self.parent = parent
        self.kind = kind
        self.basis = basis
        self.anchor = anchor

    @property
    def dim(self):
        return self.basis.shape[1]


def closure_ids(complex, f, min_dim=0, proper=False):
    """{m: ids} of the faces of f with dimension >= min_dim (excluding f if proper)."""
    f = tuple(f)
    out = {}
    for m in range(min_dim, len(f)):
        if proper and m == len(f) - 1:
            continue
        out[m] = [complex.index[m][g] for g in combinations(f, m + 1)]
    return out


def constrained_subspace(ps, kind, anchor=None, boundary="full"):
    """Constrained subspace of a patch space.

    kind: "all", "zero-boundary" (traces vanish on the patch boundary, or, when
    boundary="interior", on the part shared with outside cells and on every
    simplex other than the anchor of dimension at most dim anchor),
    "trace-kernel" (tr_f = 0), "zero-boundary-trace-kernel" (both) or
    "breve" (tr_f in the breve trace space of f).
    """
    cx = ps.space.complex
    k = ps.k
    n = cx.n
    remove = set()
    mean_block = None
    if kind in ("zero-boundary", "zero-boundary-trace-kernel"):
        if boundary == "interior":
            ids = {m: set(ps.patch.exterior_simplices(m)) for m in range(k, n)}
            if anchor is not None:
                # traces on the other simplices of dimension <= dim f must still vanish
                fa = tuple(sorted(anchor))
                for m in range(k, len(fa)):
                    others = {int(g) for g in ps.patch.simplices(m)} - {cx.index[m].get(fa, -1)}
                    ids[m] = ids.get(m, set()) | others
        else:
            ids = {m: ps.patch.boundary_simplices(m) for m in range(k, n)}
        remove |= set(ps.dofs_on(ids).tolist())
    if kind in ("trace-kernel", "zero-boundary-trace-kernel"):
        remove |= set(ps.dofs_on(closure_ids(cx, anchor, k)).tolist())
    if kind == "breve":
        m = len(anchor) - 1
        if m > k:
            remove |= set(ps.dofs_on(closure_ids(cx, anchor, k, proper=True)).tolist())
        elif m == k:
            fid = cx.index[m][tuple(anchor)]
            block = ps.local_index(ps.space.face_dofs(m, fid))
            mu = ps.space.ref.mean_weights[tuple(range(k + 1))]
            remove |= set(block.tolist())
            mean_block = (block, mu)
    if kind not in ("all", "zero-boundary", "trace-kernel", "zero-boundary-trace-kernel", "breve"):
        raise ValueError(f"unknown subspace kind {kind!r}")
    S = selection_basis(ps.dim, sorted(remove))
    if mean_block is not None:
        block, mu = mean_block
        _, null = _nullspace_row(mu)
        extra = np.zeros((ps.dim, null.shape[1]))
        extra[block] = null
        S = np.hstack([S, extra])
    return ConstrainedSubspace(ps, kind, S, anchor)


def _nullspace_row(mu):
    mu = np.asarray(mu, dtype=float).reshape(1, -1)
    _, _, vt = np.linalg.svd(mu)
    return 1, vt[1:].T


def patch_moment_map(dc, k, ps):
    """Dense map from patch coefficients of V^k to the patch moment vector of (w, dw).

    Rows follow layout.cols(patch cells): all a-blocks, then all b-blocks.
    """
    lay = dc.layouts[k]
    ncp = len(ps.cells)
    out = np.zeros((ncp * (lay.na + lay.nb), ps.dim))
    B = dc.grams(k)[ps.cells]
    W = dc.spaces[k].ref.W
    for j, loc in enumerate(ps.cell_loc):
        out[j * lay.na:(j + 1) * lay.na, loc] = B[j] @ W.T
    if k < dc.n:
        B1 = dc.grams(k + 1)[ps.cells]
        W1 = dc.spaces[k + 1].ref.W
        dl = local_d(dc.n, dc.spaces[k].spec, dc.spaces[k + 1].spec, dc.rho)
        base = ncp * lay.na
        for j, loc in enumerate(ps.cell_loc):
            out[base + j * lay.nb:base + (j + 1) * lay.nb, loc] = B1[j] @ W1.T @ dl
    return out
