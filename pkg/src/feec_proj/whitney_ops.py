"""Weight functions, the double-complex operator delta and the Whitney projection R.

All operators act on moment vectors (see fe_space.MomentLayout) and are stored
as dense matrices; patch operators keep only the moment columns of their patch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import SingularSystem
from .fe_space import (
    PatchSpace,
    constrained_subspace,
    patch_moment_map,
    wedge_matrix,
)
from .local_solver import DEFAULT, orth, solve_or_raise


@dataclass
class PatchOperator:
    """Dense local operator from patch moments (or trace DOFs) to patch coefficients."""

    anchor: tuple
    kind: str
    k: int
    dofs: np.ndarray          # global DOFs of the output (rows)
    cols: np.ndarray          # global moment columns (or trace DOFs) of the input
    matrix: np.ndarray

    def apply(self, vec):
        return self.matrix @ np.asarray(vec)[self.cols]


class PatchData:
    """Cached patch restrictions of every space of a discrete complex."""

    def __init__(self, dc, patch):
        self.dc = dc
        self.patch = patch
        self.cells = np.array(patch.cell_list, dtype=int)
        self._c = {}

    def _get(self, key, make):
        if key not in self._c:
            self._c[key] = make()
        return self._c[key]

    def ps(self, k, whitney=False):
        space = (self.dc.whitney if whitney else self.dc.spaces)[k]
        return self._get(("ps", k, whitney), lambda: PatchSpace(space, self.patch))

    def mass(self, k, whitney=False):
        return self._get(("M", k, whitney), lambda: self.ps(k, whitney).mass())

    def D(self, k, whitney=False):
        """Dense d from patch V^k to patch V^{k+1}."""
        def make():
            D = (self.dc.DW if whitney else self.dc.D)[k]
            return D[self.ps(k + 1, whitney).dofs][:, self.ps(k, whitney).dofs].toarray()
        return self._get(("D", k, whitney), make)

    def cols(self, k):
        return self._get(("cols", k), lambda: self.dc.layouts[k].cols(self.cells))

    def loads(self, k):
        """Sparse maps from patch moments (cols(k)) to <u, phi_i> on V^k and <du, phi_i> on V^{k+1}."""
        def make():
            lay = self.dc.layouts[k]
            ncp = len(self.cells)
            na = ncp * lay.na
            total = na + ncp * lay.nb
            la = sp.csr_matrix(self.ps(k).load_matrix())
            la.resize((la.shape[0], total))
            lb = None
            if k < self.dc.n:
                dense = self.ps(k + 1).load_matrix()
                lb = sp.hstack([sp.csr_matrix((dense.shape[0], na)), sp.csr_matrix(dense)]).tocsr()
            return la, lb
        return self._get(("L", k), make)

    def gauge(self, j):
        """Gauge basis for the unconstrained patch space V^j."""
        return self._get(("Y", j), lambda: gauge_basis(self, j, None, None))

    def J(self, k):
        return self._get(("J", k), lambda: patch_moment_map(self.dc, k, self.ps(k)))

    def ones(self):
        return self._get("ones", lambda: self.dc.spaces[0].ones()[self.ps(0).dofs])


def gauge_basis(pd, j, S_prev=None, S_this=None, whitney=False):
    """Orthonormal basis of d(previous subspace) inside patch V^j coefficients.

    For j = 0 the previous space is read as the constants, which are used only
    when the current subspace contains them.
    """
    if j == 0:
        ps = pd.ps(0, whitney)
        one = pd.ones() if not whitney else pd.dc.whitney[0].ones()[ps.dofs]
        if S_this is not None:
            coef = np.linalg.lstsq(S_this, one, rcond=None)[0]
            if np.linalg.norm(S_this @ coef - one) > 1e-10 * max(np.linalg.norm(one), 1.0):
                return np.zeros((ps.dim, 0))
        return orth(one[:, None])
    Dp = pd.D(j - 1, whitney)
    if S_prev is not None:
        Dp = Dp @ S_prev
    return orth(Dp)


def gauged_projection(pd, j, S, Y, rhs_A, rhs_B, what, config=DEFAULT):
    """Solve min ||d(S x)|| problems with gauge rows; returns S @ X (patch coefficients).

    rhs_A has S.shape[1] rows and rhs_B has Y.shape[1] rows; columns index loads.
    """
    n = pd.dc.n
    if j < n:
        DS = pd.D(j) @ S
        A = DS.T @ pd.mass(j + 1) @ DS
    else:
        A = np.zeros((S.shape[1], S.shape[1]))
    B = Y.T @ pd.mass(j) @ S
    X = solve_or_raise(A, B, rhs_A, rhs_B, patch=pd.patch.anchor, what=what, config=config)
    return S @ X.reshape(S.shape[1], np.shape(rhs_A)[1])


def to_moments(X, *loads):
    """X @ vstack(loads) with sparse loads, returned dense."""
    L = sp.vstack([l for l in loads if l is not None]).tocsc()
    return np.asarray((L.T @ X.T).T)


def projection_to_moments(pd, k, S, Y, what, config=DEFAULT):
    """Patch projection onto span(S) from the moments of (u, du): d-energy rows plus gauge rows.

    Solved once per load functional and mapped to moment columns through the
    sparse load matrices, which keeps the number of right-hand sides small.
    """
    la, lb = pd.loads(k)
    dk = S.shape[1]
    m = Y.shape[1]
    nla = la.shape[0]
    if k < pd.dc.n:
        nlb = lb.shape[0]
        rhs_A = np.hstack([np.zeros((dk, nla)), S.T @ pd.D(k).T])
        rhs_B = np.hstack([Y.T, np.zeros((m, nlb))])
    else:
        rhs_A = np.zeros((dk, nla))
        rhs_B = Y.T
    X = gauged_projection(pd, k, S, Y, rhs_A, rhs_B, what, config)
    return to_moments(X, la, lb)


def patch_Q(pd, k, config=DEFAULT):
    """Q^k on the patch: moments of (u, du) -> V^k coefficients, gauged against d of V^{k-1}."""
    mat = projection_to_moments(pd, k, np.eye(pd.ps(k).dim), pd.gauge(k), "Q system", config)
    return PatchOperator(pd.patch.anchor, "Q", k, pd.ps(k).dofs, pd.cols(k), mat)


def patch_Qminus(pd, k, config=DEFAULT):
    """Q_-^k on the patch: moments of a k-form u -> V^{k-1} coefficients of w with dw the
    projection of u onto d V^{k-1}."""
    j = k - 1
    la, _ = pd.loads(k)
    Y = pd.gauge(j)
    X = gauged_projection(pd, j, np.eye(pd.ps(j).dim), Y, pd.D(j).T, np.zeros((Y.shape[1], pd.ps(k).dim)),
                          "reduced Q system", config)
    return PatchOperator(pd.patch.anchor, "Qminus", k, pd.ps(j).dofs, pd.cols(k), to_moments(X, la))


def delta_apply(complex, m, family):
    """(delta u)_f = sum_j (-1)^j u_{f_j} for f in Delta_{m+1}; family rows indexed by Delta_m."""
    family = np.asarray(family)
    out = np.zeros((len(complex.simplices[m + 1]),) + family.shape[1:])
    for i, f in enumerate(complex.simplices[m + 1]):
        for j in range(len(f)):
            out[i] += (-1) ** j * family[complex.index[m][f[:j] + f[j + 1:]]]
    return out


def delta_matrix(complex, m):
    """Signed incidence matrix of delta from Delta_m components to Delta_{m+1} components."""
    out = np.zeros((len(complex.simplices[m + 1]), len(complex.simplices[m])))
    for i, f in enumerate(complex.simplices[m + 1]):
        for j in range(len(f)):
            out[i, complex.index[m][f[:j] + f[j + 1:]]] += (-1) ** j
    return out


@dataclass
class WeightFamily:
    """z[k][f] as global Whitney (n-k)-form coefficient vectors, one row per f in Delta_k."""

    z: list
    recursion_residual: list = field(default_factory=list)
    gauge_residual: list = field(default_factory=list)
    condition: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({"z": [zk.tolist() for zk in self.z],
                           "recursion_residual": self.recursion_residual,
                           "gauge_residual": self.gauge_residual})


def build_weights(dc, config=DEFAULT, permute_seed=None):
    """Solve for the weight functions level by level.

    permute_seed reorders the unknowns of every patch solve; the result must not change.
    """
    cx = dc.complex
    n = cx.n
    Wn = dc.whitney[n]
    z0 = np.zeros((len(cx.simplices[0]), Wn.dim))
    for v in range(len(cx.simplices[0])):
        cells = list(cx.cofaces[0][v])
        vol = cx.volumes[cells].sum()
        for t in cells:
            z0[v, Wn.cell_dofs[t][0]] = cx.signs[t] * cx.volumes[t] / vol
    z = [z0]
    rec, gau, cond = [0.0], [0.0], [1.0]
    rng = np.random.default_rng(permute_seed) if permute_seed is not None else None
    for k in range(1, n + 1):
        j = n - k                               # form degree of z^k
        target = (-1) ** k * delta_apply(cx, k - 1, z[k - 1])   # Whitney (j+1)-forms
        zk = np.zeros((len(cx.simplices[k]), dc.whitney[j].dim))
        worst_rec = worst_gau = 0.0
        worst_cond = 1.0
        for fid, f in enumerate(cx.simplices[k]):
            pd = PatchData(dc, cx.extended_patch(f))
            S = constrained_subspace(pd.ps(j, True), "zero-boundary").basis
            if rng is not None:
                S = S[:, rng.permutation(S.shape[1])]
            D = pd.D(j, True)
            g_full = target[fid]
            g = g_full[pd.ps(j + 1, True).dofs]
            if np.abs(np.delete(g_full, pd.ps(j + 1, True).dofs)).max(initial=0.0) > 1e-12:
                raise SingularSystem("delta of the weights leaks outside the patch", f)
            DS = D @ S
            if j > 0:
                Sp = constrained_subspace(pd.ps(j - 1, True), "zero-boundary").basis
                Y = orth(pd.D(j - 1, True) @ Sp)
            else:
                Y = np.zeros((S.shape[0], 0))
            M = pd.mass(j, True)
            x = solve_or_raise(DS.T @ DS, Y.T @ M @ S, DS.T @ g, None, patch=f,
                               what="weight function system", config=config)
            zloc = S @ x
            r = np.abs(DS @ x - g).max(initial=0.0) / max(np.abs(g).max(initial=0.0), 1.0)
            gr = np.abs(Y.T @ M @ zloc).max(initial=0.0) / max(np.abs(M @ zloc).max(initial=0.0), 1.0)
            if r > 1e-10:
                raise SingularSystem(f"weight recursion residual {r:.2e}", f)
            worst_rec, worst_gau = max(worst_rec, r), max(worst_gau, gr)
            if DS.size:
                sv = np.linalg.svd(DS, compute_uv=False)
                nz = sv[sv > 1e-12 * sv[0]] if sv[0] > 0 else sv[:1]
                worst_cond = max(worst_cond, float(nz[0] / nz[-1]))
            zk[fid, pd.ps(j, True).dofs] = zloc
        z.append(zk)
        rec.append(worst_rec)
        gau.append(worst_gau)
        cond.append(worst_cond)
    return WeightFamily(z, rec, gau, cond)


class WhitneyOperators:
    """M^k, S^k and R^k as dense matrices from moment vectors to Whitney coefficients."""

    def __init__(self, dc, config=DEFAULT, weights=None):
        self.dc = dc
        self.complex = dc.complex
        self.config = config
        self.weights = weights if weights is not None else build_weights(dc, config)
        self._ext = {}
        self._Q = {}
        self._Qm = {}
        self.M = [self._build_M(k) for k in range(self.n + 1)]
        self.S = []
        for k in range(self.n + 1):
            self.S.append(self._build_S(k))
        self.R = [self._build_R(k) for k in range(self.n + 1)]

    @property
    def n(self):
        return self.complex.n

    def extended(self, f):
        if f not in self._ext:
            self._ext[f] = PatchData(self.dc, self.complex.extended_patch(f))
        return self._ext[f]

    # -- local projections on extended patches --------------------------------------
    def Q(self, f):
        """Q_f^k for f in Delta_k: patch moments of (u, du) -> patch coefficients of V^k."""
        f = tuple(f)
        if f in self._Q:
            return self._Q[f]
        op = patch_Q(self.extended(f), len(f) - 1, self.config)
        self._Q[f] = op
        return op

    def Qminus(self, g):
        """Q_{g,-}^k for g in Delta_{k-1}: patch moments of k-forms -> patch V^{k-1}."""
        g = tuple(g)
        if g in self._Qm:
            return self._Qm[g]
        op = patch_Qminus(self.extended(g), len(g), self.config)
        self._Qm[g] = op
        return op

    def mean_trace(self, k, f, op):
        """Row vector: integral over f of the trace of the output of a V^k patch operator."""
        sp_k = self.dc.spaces[k]
        fid = self.complex.index[k][tuple(f)]
        block = sp_k.face_dofs(k, fid)
        pos = np.searchsorted(op.dofs, block)
        mu = sp_k.ref.mean_weights[tuple(range(k + 1))]
        return mu @ op.matrix[pos]

    # -- global operators ---------------------------------------------------------
    def _build_M(self, k):
        dc, cx, n = self.dc, self.complex, self.n
        lay = dc.layouts[k]
        X = wedge_matrix(n, k, dc.rho)
        B = dc.grams(k)
        Binv_X = np.array([np.linalg.solve(B[t], X) for t in range(cx.num_cells)])
        Wj = dc.whitney[n - k]
        zk = self.weights.z[k]
        out = np.zeros((len(cx.simplices[k]), lay.size))
        for fid in range(len(cx.simplices[k])):
            cells = np.unique(np.nonzero(zk[fid][Wj.cell_dofs])[0])
            for t in cells:
                out[fid, lay.a_cols(t)] = cx.signs[t] * Binv_X[t] @ zk[fid][Wj.cell_dofs[t]]
        return out

    def _restricted_row(self, row, pd, k):
        """Row of an operator on moment vectors, checked to live on the patch columns."""
        cols = pd.cols(k)
        leak = np.abs(np.delete(row, cols)).max(initial=0.0)
        if leak > 1e-12 * max(np.abs(row).max(initial=0.0), 1.0):
            raise SingularSystem("operator row is not local to its extended patch", pd.patch.anchor)
        return row[cols]

    def _build_S(self, k):
        if k == 0:
            return self.M[0].copy()
        cx = self.complex
        T = np.zeros((len(cx.simplices[k - 1]), self.dc.layouts[k].size))
        for gid, g in enumerate(cx.simplices[k - 1]):
            op = self.Qminus(g)
            pd = self.extended(g)
            s_row = self._restricted_row(self.S[k - 1][gid], pd, k - 1)
            row = self.mean_trace(k - 1, g, op) - (s_row @ pd.J(k - 1)) @ op.matrix
            T[gid, op.cols] += row
        return self.M[k] + self.dc.DW[k - 1] @ T

    def _build_R(self, k):
        cx = self.complex
        R = self.S[k].copy()
        for fid, f in enumerate(cx.simplices[k]):
            op = self.Q(f)
            pd = self.extended(f)
            s_row = self._restricted_row(self.S[k][fid], pd, k)
            R[fid, op.cols] += self.mean_trace(k, f, op) - (s_row @ pd.J(k)) @ op.matrix
        return R

    # -- application ---------------------------------------------------------------
    def apply_M(self, k, moments):
        return self.M[k] @ moments

    def apply_S(self, k, moments):
        return self.S[k] @ moments

    def apply_R(self, k, moments):
        return self.R[k] @ moments
