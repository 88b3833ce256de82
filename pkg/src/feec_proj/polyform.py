"""Polynomial differential forms on a simplex in barycentric coordinates.

A form on an m-simplex is a finite sum  c * lambda^alpha dlambda_sigma  with
alpha a multi-index over the m+1 barycentric coordinates and sigma a strictly
increasing index tuple.  The canonical representation eliminates dlambda_0
and is homogeneous in lambda, which makes it unique.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from math import comb, factorial, prod

import numpy as np
from scipy.linalg import qr

from .exceptions import DegreeMismatch

_DROP = 1e-14


@lru_cache(maxsize=None)
def multi_indices(m, degree):
    """Multi-indices over m+1 variables with total degree `degree`, lexicographically descending."""
    if degree < 0:
        return ()
    if m == 0:
        return ((degree,),)
    out = []
    for a in range(degree, -1, -1):
        out.extend((a,) + rest for rest in multi_indices(m - 1, degree - a))
    return tuple(out)


@lru_cache(maxsize=None)
def form_index_sets(m, k):
    """Canonical dlambda index sets: k-subsets of {1..m}."""
    return tuple(combinations(range(1, m + 1), k))


def _merge_sign(a, b):
    """Sign of the permutation sorting a+b, or 0 on overlap."""
    if set(a) & set(b):
        return 0
    inv = sum(1 for x in a for y in b if x > y)
    return -1 if inv % 2 else 1


def _factorial_moment(alpha, m):
    """Integral of lambda^alpha over the reference m-simplex times m!."""
    return prod(factorial(a) for a in alpha) * factorial(m) / factorial(sum(alpha) + m)


class BarycentricPolyForm:
    """Sum of c * lambda^alpha dlambda_sigma on an m-simplex, as a dict {(alpha, sigma): c}."""

    __slots__ = ("m", "k", "terms")

    def __init__(self, m, k, terms=None):
        self.m = m
        self.k = k
        self.terms = {}
        for (alpha, sigma), c in (terms or {}).items():
            alpha, sigma = tuple(alpha), tuple(sigma)
            if len(alpha) != m + 1 or len(sigma) != k:
                raise DegreeMismatch("term shape does not match (m, k)")
            if c:
                key = (alpha, sigma)
                self.terms[key] = self.terms.get(key, 0.0) + c

    # -- constructors ----------------------------------------------------
    @classmethod
    def monomial(cls, m, alpha, sigma=(), coeff=1.0):
        order = sorted(range(len(sigma)), key=lambda i: sigma[i])
        s = tuple(sigma[i] for i in order)
        if len(set(s)) != len(s):
            return cls(m, len(sigma))
        # sign of the sorting permutation
        sign = 1
        perm = list(order)
        for i in range(len(perm)):
            while perm[i] != i:
                j = perm[i]
                perm[i], perm[j] = perm[j], perm[i]
                sign = -sign
        return cls(m, len(sigma), {(tuple(alpha), s): sign * coeff})

    @classmethod
    def barycentric(cls, m, i):
        alpha = [0] * (m + 1)
        alpha[i] = 1
        return cls(m, 0, {(tuple(alpha), ()): 1.0})

    @classmethod
    def constant(cls, m, c=1.0):
        return cls(m, 0, {((0,) * (m + 1), ()): c})

    @classmethod
    def zero(cls, m, k):
        return cls(m, k)

    # -- arithmetic -------------------------------------------------------
    def _check(self, other):
        if (self.m, self.k) != (other.m, other.k):
            raise DegreeMismatch(f"cannot combine ({self.m},{self.k}) with ({other.m},{other.k})")

    def __add__(self, other):
        self._check(other)
        out = BarycentricPolyForm(self.m, self.k, self.terms)
        for key, c in other.terms.items():
            out.terms[key] = out.terms.get(key, 0.0) + c
        return out

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, s):
        if isinstance(s, BarycentricPolyForm):
            return self.wedge(s)
        return BarycentricPolyForm(self.m, self.k, {key: c * s for key, c in self.terms.items()})

    __rmul__ = __mul__

    def wedge(self, other):
        if self.m != other.m:
            raise DegreeMismatch("wedge of forms on different simplices")
        if self.k + other.k > self.m + 1:
            return BarycentricPolyForm(self.m, self.k + other.k)
        out = {}
        for (a, s), c in self.terms.items():
            for (b, t), e in other.terms.items():
                sign = _merge_sign(s, t)
                if sign:
                    key = (tuple(x + y for x, y in zip(a, b)), tuple(sorted(s + t)))
                    out[key] = out.get(key, 0.0) + sign * c * e
        return BarycentricPolyForm(self.m, self.k + other.k, out)

    # -- calculus -----------------------------------------------------------
    def d(self):
        out = {}
        for (a, s), c in self.terms.items():
            for i, ai in enumerate(a):
                if ai == 0 or i in s:
                    continue
                sign = _merge_sign((i,), s)
                b = list(a)
                b[i] -= 1
                key = (tuple(b), tuple(sorted((i,) + s)))
                out[key] = out.get(key, 0.0) + sign * ai * c
        return BarycentricPolyForm(self.m, self.k + 1, out)

    def trace(self, face):
        """Pull back to the face spanned by the local vertices `face` (ascending)."""
        face = tuple(face)
        mf = len(face) - 1
        if mf < self.k:
            return BarycentricPolyForm(mf, self.k)
        pos = {v: i for i, v in enumerate(face)}
        out = {}
        for (a, s), c in self.terms.items():
            if any(a[j] for j in range(self.m + 1) if j not in pos):
                continue
            if any(j not in pos for j in s):
                continue
            key = (tuple(a[v] for v in face), tuple(pos[j] for j in s))
            out[key] = out.get(key, 0.0) + c
        return BarycentricPolyForm(mf, self.k, out)

    def koszul(self, base=0):
        """Contraction with the vector field x - x_base."""
        if self.k == 0:
            raise DegreeMismatch("cannot contract a 0-form")
        out = BarycentricPolyForm(self.m, self.k - 1)
        for (a, s), c in self.terms.items():
            for j, sj in enumerate(s):
                rest = s[:j] + s[j + 1:]
                sign = (-1) ** j
                b = list(a)
                b[sj] += 1
                out.terms[(tuple(b), rest)] = out.terms.get((tuple(b), rest), 0.0) + sign * c
                if sj == base:
                    out.terms[(a, rest)] = out.terms.get((a, rest), 0.0) - sign * c
        return out

    # -- normal form -------------------------------------------------------
    @property
    def degree(self):
        return max((sum(a) for a, _ in self.terms), default=-1)

    def canonical(self, degree=None):
        """Unique representation: no dlambda_0, homogeneous of the given degree."""
        m = self.m
        stage = {}
        for (a, s), c in self.terms.items():
            if s and s[0] == 0 and m > 0:
                rest = s[1:]
                for i in range(1, m + 1):
                    if i in rest:
                        continue
                    sign = _merge_sign((i,), rest)
                    key = (a, tuple(sorted((i,) + rest)))
                    stage[key] = stage.get(key, 0.0) - sign * c
            else:
                stage[(a, s)] = stage.get((a, s), 0.0) + c
        target = max((sum(a) for (a, _), c in stage.items() if c), default=0)
        if degree is not None:
            if degree < target:
                raise DegreeMismatch(f"form of degree {target} does not fit degree {degree}")
            target = degree
        out = {}
        for (a, s), c in stage.items():
            if not c:
                continue
            p = target - sum(a)
            for g in multi_indices(m, p):
                coef = factorial(p) / prod(factorial(x) for x in g)
                key = (tuple(x + y for x, y in zip(a, g)), s)
                out[key] = out.get(key, 0.0) + coef * c
        scale = max((abs(c) for c in out.values()), default=0.0)
        out = {key: c for key, c in out.items() if abs(c) > _DROP * max(scale, 1.0)}
        return BarycentricPolyForm(m, self.k, out)

    def to_vector(self, degree):
        can = self.canonical(degree)
        alphas = multi_indices(self.m, degree)
        sigmas = form_index_sets(self.m, self.k)
        ai = {a: i for i, a in enumerate(alphas)}
        si = {s: i for i, s in enumerate(sigmas)}
        vec = np.zeros(len(alphas) * len(sigmas))
        for (a, s), c in can.terms.items():
            vec[ai[a] * len(sigmas) + si[s]] += c
        return vec

    @classmethod
    def from_vector(cls, m, k, degree, vec):
        alphas = multi_indices(m, degree)
        sigmas = form_index_sets(m, k)
        terms = {}
        for i, a in enumerate(alphas):
            for j, s in enumerate(sigmas):
                c = vec[i * len(sigmas) + j]
                if c:
                    terms[(a, s)] = float(c)
        return cls(m, k, terms)

    def is_zero(self, tol=1e-12):
        return all(abs(c) <= tol for c in self.canonical().terms.values())

    def __eq__(self, other):
        if not isinstance(other, BarycentricPolyForm):
            return NotImplemented
        return (self.m, self.k) == (other.m, other.k) and (self - other).is_zero()

    __hash__ = None

    # -- integration and evaluation --------------------------------------------
    def integrate(self):
        """Integral of a top-degree form over its simplex, oriented by vertex order."""
        if self.k != self.m:
            raise DegreeMismatch("only top-degree forms can be integrated")
        can = self.canonical()
        return float(sum(c * _factorial_moment(a, self.m) / factorial(self.m)
                         for (a, _), c in can.terms.items()))

    def evaluate(self, bary, grads):
        """Cartesian components at points given in barycentric coordinates.

        bary: (npts, m+1); grads: (m+1, n) gradients of the barycentric coordinates.
        Returns (npts, C(n, k)) ordered by ascending index sets.
        """
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        grads = np.asarray(grads, dtype=float)
        n = grads.shape[1]
        comps = list(combinations(range(n), self.k))
        out = np.zeros((bary.shape[0], len(comps)))
        for (a, s), c in self.terms.items():
            mono = c * np.prod(bary ** np.asarray(a), axis=1)
            if self.k == 0:
                out[:, 0] += mono
                continue
            sub = grads[list(s)]
            for j, idx in enumerate(comps):
                w = np.linalg.det(sub[:, list(idx)])
                if w:
                    out[:, j] += w * mono
        return out

    def __repr__(self):
        body = " + ".join(f"{c:g}*l^{a}d{s}" for (a, s), c in sorted(self.terms.items()))
        return f"BarycentricPolyForm(m={self.m}, k={self.k}: {body or '0'})"


# -- distinguished forms and bases ---------------------------------------------

def whitney_form(face, m):
    """Whitney form of the local face `face` (ascending vertex tuple) on an m-simplex."""
    face = tuple(face)
    k = len(face) - 1
    out = BarycentricPolyForm(m, k)
    for i, v in enumerate(face):
        term = BarycentricPolyForm.barycentric(m, v)
        rest = face[:i] + face[i + 1:]
        alpha = (0,) * (m + 1)
        term = term.wedge(BarycentricPolyForm(m, k, {(alpha, rest): 1.0}))
        out = out + term * ((-1) ** i)
    return out


def volume_form(m):
    """Top form with unit integral over the m-simplex, i.e. m! dlambda_1 ^ ... ^ dlambda_m."""
    return BarycentricPolyForm(m, m, {((0,) * (m + 1), tuple(range(1, m + 1))): float(factorial(m))})


def dim_full(r, k, m):
    if r < 0 or k < 0 or k > m:
        return 0
    return comb(r + m, m) * comb(m, k)


def dim_minus(r, k, m):
    if r < 1 or k < 0 or k > m:
        return 0
    if k == 0:
        return comb(r + m, m)
    return comb(r + m, r + k) * comb(r + k - 1, k)


class LocalSpaceBasis:
    """A basis of P_r or P_r^- k-forms on an m-simplex."""

    def __init__(self, family, r, k, m, forms):
        self.family = family
        self.r = r
        self.k = k
        self.m = m
        self.forms = list(forms)

    def __len__(self):
        return len(self.forms)

    def __iter__(self):
        return iter(self.forms)

    @property
    def degree(self):
        return max(self.r, 0)

    def matrix(self, degree=None):
        degree = self.degree if degree is None else degree
        if not self.forms:
            return np.zeros((0, len(multi_indices(self.m, degree)) * len(form_index_sets(self.m, self.k))))
        return np.array([f.to_vector(degree) for f in self.forms])


@lru_cache(maxsize=None)
def local_basis(family, r, k, m):
    """Basis of P_r k-forms ("full") or P_r^- k-forms ("minus") on an m-simplex."""
    if family == "full":
        if r < 0 or k > m:
            return LocalSpaceBasis(family, r, k, m, [])
        forms = [BarycentricPolyForm(m, k, {(a, s): 1.0})
                 for a in multi_indices(m, r) for s in form_index_sets(m, k)]
        return LocalSpaceBasis(family, r, k, m, forms)
    if family != "minus":
        raise ValueError(f"unknown family {family!r}")
    if r < 1 or k > m:
        return LocalSpaceBasis(family, r, k, m, [])
    span = []
    for face in combinations(range(m + 1), k + 1):
        phi = whitney_form(face, m)
        for a in multi_indices(m, r - 1):
            span.append(BarycentricPolyForm(m, 0, {(a, ()): 1.0}).wedge(phi))
    mat = np.array([f.to_vector(r) for f in span])
    _, rr, piv = qr(mat.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(rr))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    chosen = sorted(piv[:rank])
    return LocalSpaceBasis(family, r, k, m, [span[i] for i in chosen])


# -- metric integration ---------------------------------------------------------

def simplex_geometry(points):
    """Barycentric gradients (m+1, n) and m-volume of the simplex with the given vertices."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0] - 1
    if m == 0:
        return np.zeros((1, points.shape[1])), 1.0
    edges = (points[1:] - points[0]).T            # (n, m)
    gram = edges.T @ edges
    vol = float(np.sqrt(max(np.linalg.det(gram), 0.0))) / factorial(m)
    rows = np.linalg.solve(gram, edges.T)          # (m, n)
    grads = np.vstack([-rows.sum(axis=0), rows])
    return grads, vol


@lru_cache(maxsize=None)
def monomial_mass(m, da, db):
    """M[a, b] = m! * integral over the reference m-simplex of lambda^(a+b), scaled by |T|=1."""
    A = multi_indices(m, da)
    B = multi_indices(m, db)
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = _factorial_moment(tuple(x + y for x, y in zip(a, b)), m)
    out.setflags(write=False)
    return out


def compound_gram(grads, k):
    """Matrix of inner products <dlambda_sigma, dlambda_tau> over canonical index sets."""
    m = grads.shape[0] - 1
    g = grads[1:] @ grads[1:].T
    sets = [tuple(i - 1 for i in s) for s in form_index_sets(m, k)]
    out = np.empty((len(sets), len(sets)))
    for i, s in enumerate(sets):
        for j, t in enumerate(sets):
            out[i, j] = np.linalg.det(g[np.ix_(s, t)]) if k else 1.0
    return out


def mass_matrix(m, k, da, db, grads, volume):
    """Gram matrix of the vectorized monomial bases of degrees da and db."""
    return volume * np.kron(monomial_mass(m, da, db), compound_gram(grads, k))


def integrate_inner_product(u, v, grads, volume):
    """Exact integral of <u, v> over a simplex with the given barycentric gradients and volume."""
    if (u.m, u.k) != (v.m, v.k):
        raise DegreeMismatch("inner product of forms of different degree")
    du, dv = max(u.degree, 0), max(v.degree, 0)
    return float(u.to_vector(du) @ mass_matrix(u.m, u.k, du, dv, grads, volume) @ v.to_vector(dv))


def integrate_wedge_against(u, z, sign=1.0):
    """Integral of u ^ z over the simplex; `sign` is its orientation relative to vertex order."""
    if u.m != z.m or u.k + z.k != u.m:
        raise DegreeMismatch("wedge product is not a top-degree form")
    return sign * u.wedge(z).integrate()
