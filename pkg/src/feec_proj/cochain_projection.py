"""Local extensions, breve projections and the staged cochain projection pi.

pi^k is built as a dense matrix acting on moment vectors of (u, du), like the
Whitney operators.  The stage recursion starts from R^k embedded in V^k and
adds, for each simplex f of dimension m = k..n, the harmonic extension of the
trace on f of P_f^k applied to the current residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .exceptions import DegreeMismatch, InfeasibleTrace
from .fe_space import FEForm, closure_ids, constrained_subspace
from .local_solver import DEFAULT, orth, solve_or_raise
from .whitney_ops import PatchData, WhitneyOperators, gauge_basis, projection_to_moments


@dataclass
class ExtensionOperator:
    """Map from trace DOFs on f to patch coefficients of V^k.

    dofs are the global output DOFs, trace_dofs the global DOFs carrying the input.
    """

    anchor: tuple
    kind: str
    k: int
    dofs: np.ndarray
    trace_dofs: np.ndarray
    matrix: np.ndarray

    def apply(self, phi):
        return self.matrix @ np.asarray(phi, dtype=float)

    def prolong(self, phi, dim):
        out = np.zeros(dim)
        out[self.dofs] = self.apply(phi)
        return out


@dataclass
class BreveProjector:
    """P_f^k as a matrix from patch moments (columns cols) to patch coefficients (rows dofs)."""

    anchor: tuple
    k: int
    dofs: np.ndarray
    cols: np.ndarray
    matrix: np.ndarray
    basis: np.ndarray = field(repr=False, default=None)

    def apply(self, moments):
        return self.matrix @ np.asarray(moments)[self.cols]


def _anchor_id(complex, f):
    f = tuple(sorted(int(v) for v in f))
    return f, len(f) - 1, complex.index[len(f) - 1][f]


def build_harmonic_extension(dc, f, k, pd=None, config=DEFAULT, kind="harmonic"):
    """E_f^k (kind="harmonic") or the tilde extension (kind="tilde") on the macro patch of f.

    The harmonic extension takes the DOFs of V^k on f itself (traces in the
    zero-boundary trace space) and vanishes on the patch boundary, or only on
    its part shared with outside cells when f lies on the domain boundary.  The
    tilde extension takes every DOF on the closure of f and has no boundary
    condition.
    """
    cx = dc.complex
    f, m, fid = _anchor_id(cx, f)
    if not 0 <= k <= m:
        raise ValueError(f"extension of {k}-forms from a {m}-simplex")
    pd = pd or PatchData(dc, cx.macro_patch(f))
    ps = pd.ps(k)
    if kind == "harmonic":
        boundary = "interior" if cx.is_boundary(f) else "full"
        trace_glob = dc.spaces[k].face_dofs(m, fid)
        sub, sub_prev = "zero-boundary-trace-kernel", "zero-boundary-trace-kernel"
    elif kind == "tilde":
        boundary = "full"
        trace_glob = dc.spaces[k].dofs_on(closure_ids(cx, f, k))
        sub, sub_prev = "trace-kernel", "trace-kernel"
    else:
        raise ValueError(f"unknown extension kind {kind!r}")
    tr = ps.local_index(trace_glob)
    if len(tr) != len(trace_glob):
        raise InfeasibleTrace(f"trace DOFs of {f} are not in its patch")
    W0 = np.zeros((ps.dim, len(tr)))
    W0[tr, np.arange(len(tr))] = 1.0
    S = constrained_subspace(ps, sub, f, boundary=boundary).basis
    if kind == "harmonic" and kind_boundary_hits(ps, S, tr):
        raise InfeasibleTrace(f"boundary condition removes trace DOFs of {f}")
    if k >= 1:
        Sp = constrained_subspace(pd.ps(k - 1), sub_prev, f, boundary=boundary).basis
        Y = orth(pd.D(k - 1) @ Sp)
    else:
        Y = np.zeros((ps.dim, 0))
    M = pd.mass(k)
    if k < dc.n:
        D = pd.D(k)
        M1 = pd.mass(k + 1)
        DS = D @ S
        A = DS.T @ M1 @ DS
        rhs_A = -DS.T @ M1 @ (D @ W0)
    else:
        A = np.zeros((S.shape[1], S.shape[1]))
        rhs_A = np.zeros((S.shape[1], len(tr)))
    B = Y.T @ M @ S
    X = solve_or_raise(A, B, rhs_A, -Y.T @ M @ W0, patch=f, what=f"{kind} extension", config=config)
    mat = W0 + S @ X.reshape(S.shape[1], len(tr))
    return ExtensionOperator(f, kind, k, ps.dofs, trace_glob, mat)


def kind_boundary_hits(ps, S, tr):
    """True if the constrained basis touches the trace rows (it must not)."""
    return bool(len(tr)) and np.abs(S[tr]).max(initial=0.0) > 0


def build_tilde_extension(dc, f, k, pd=None, config=DEFAULT):
    return build_harmonic_extension(dc, f, k, pd, config, kind="tilde")


def whitney_extension(dc, f):
    """Coefficients in V^k of the image of vol_f, which is k! times the Whitney form of f.

    The Whitney DOF is the integral of the trace, so this is the nodal Whitney function of f.
    """
    cx = dc.complex
    f, k, fid = _anchor_id(cx, f)
    return dc.embed[k][:, [fid]].toarray().ravel()


def breve_basis(pd, f, k):
    """Column basis of the breve subspace of patch V^k for anchor f."""
    return pd._get(("breve", tuple(f), k), lambda: constrained_subspace(pd.ps(k), "breve", f).basis)


def build_breve_projector(dc, f, k, pd=None, config=DEFAULT):
    """P_f^k: stiffness rows over the breve space of V^k plus gauge rows against d(breve V^{k-1}).

    At k = 0 the gauge is the patch mean, used only when the breve space holds
    the constants (it never does for a breve space anchored at a simplex).
    """
    cx = dc.complex
    f, m, fid = _anchor_id(cx, f)
    pd = pd or PatchData(dc, cx.macro_patch(f))
    S = breve_basis(pd, f, k)
    S_prev = breve_basis(pd, f, k - 1) if k >= 1 else None
    Y = gauge_basis(pd, k, S_prev, S)
    mat = projection_to_moments(pd, k, S, Y, "breve projection", config)
    return BreveProjector(f, k, pd.ps(k).dofs, pd.cols(k), mat, S)


class CochainProjection:
    """pi^k for k = 0..n of a discrete complex, as dense matrices on moment vectors.

    keep_stages stores every intermediate pi_m^k (m = k-1..n) for inspection;
    otherwise only the final operator is kept.
    """

    def __init__(self, dc, whitney=None, config=DEFAULT, keep_stages=False):
        self.dc = dc
        self.complex = dc.complex
        self.config = config
        self.whitney = whitney if whitney is not None else WhitneyOperators(dc, config)
        self.keep_stages = keep_stages
        self._macro = {}
        self._E = {}
        self._P = {}
        self.stages = {}
        self.Pi = [self._build(k) for k in range(self.n + 1)]
        self._fe = {}

    @property
    def n(self):
        return self.complex.n

    def macro(self, f):
        f = tuple(f)
        if f not in self._macro:
            self._macro[f] = PatchData(self.dc, self.complex.macro_patch(f))
        return self._macro[f]

    def extension(self, f, k):
        key = (tuple(f), k)
        if key not in self._E:
            self._E[key] = build_harmonic_extension(self.dc, f, k, self.macro(f), self.config)
        return self._E[key]

    def breve_projector(self, f, k):
        key = (tuple(f), k)
        if key not in self._P:
            self._P[key] = build_breve_projector(self.dc, f, k, self.macro(f), self.config)
        return self._P[key]

    def _build(self, k):
        dc, cx = self.dc, self.complex
        Pi = np.asarray(dc.embed[k] @ self.whitney.R[k])
        stages = [Pi.copy()] if self.keep_stages else None
        for m in range(k, self.n + 1):
            old = Pi.copy()
            for fid, f in enumerate(cx.simplices[m]):
                fblock = dc.spaces[k].face_dofs(m, fid)
                if len(fblock) == 0 or (m == 0 and k == 0):
                    # at a vertex the breve 0-forms vanish on f, so this stage adds nothing
                    continue
                P = self.breve_projector(f, k)
                E = self.extension(f, k)
                pd = self.macro(f)
                rows = np.searchsorted(P.dofs, fblock)
                Pf = P.matrix[rows]                       # trace DOFs of P_f^k on f
                cur = old[P.dofs]
                nz = np.flatnonzero(np.abs(cur).max(axis=0) > 0)
                resid = -(Pf @ pd.J(k)) @ cur[:, nz]
                # (I - pi_{m-1}) then P_f, then the trace on f, then E_f
                contrib = np.zeros((len(fblock), Pi.shape[1]))
                contrib[:, nz] = resid
                contrib[:, P.cols] += Pf
                used = np.flatnonzero(np.abs(contrib).max(axis=0) > 0)
                Pi[np.ix_(E.dofs, used)] += E.matrix @ contrib[:, used]
            if self.keep_stages:
                stages.append(Pi.copy())
        if self.keep_stages:
            self.stages[k] = stages
        return Pi

    # -- application -------------------------------------------------------------
    def matrix(self, k):
        return self.Pi[k]

    def fe_matrix(self, k):
        """pi^k acting on V^k coefficients."""
        if k not in self._fe:
            F = self.dc.fe_moment_matrix(k)
            self._fe[k] = np.asarray((F.T @ self.Pi[k].T).T)
        return self._fe[k]

    def stage_fe_matrix(self, k, m):
        """pi_m^k on V^k coefficients (needs keep_stages)."""
        if k not in self.stages:
            raise ValueError("stages were not kept; build with keep_stages=True")
        F = self.dc.fe_moment_matrix(k)
        return np.asarray((F.T @ self.stages[k][m - k + 1].T).T)

    def apply(self, u, k=None):
        return apply_pi(self, u, k)


def build_pi(dc, whitney=None, config=DEFAULT, keep_stages=False):
    return CochainProjection(dc, whitney, config, keep_stages)


def apply_pi(proj, u, k=None):
    """pi^k u for an FEForm, a SampledForm or a raw V^k coefficient vector (k required)."""
    dc = proj.dc
    deg = getattr(u, "k", k)
    if deg is None:
        raise DegreeMismatch("raw coefficient vectors need an explicit k")
    if k is not None and deg != k:
        raise DegreeMismatch(f"expected a {k}-form, got a {deg}-form")
    if not 0 <= deg <= proj.n:
        raise DegreeMismatch(f"form degree {deg} outside 0..{proj.n}")
    moments = dc.moments(u, deg)
    return FEForm(dc.spaces[deg], proj.Pi[deg] @ moments)


def mean_trace_matrix(space):
    """Rows: integral over f of the trace, for f in Delta_k, acting on V^k coefficients."""
    cx, k = space.complex, space.k
    mu = space.ref.mean_weights[tuple(range(k + 1))]
    out = np.zeros((len(cx.simplices[k]), space.dim))
    for fid in range(len(cx.simplices[k])):
        out[fid, space.face_dofs(k, fid)] = mu
    return out


# -- structural checks ------------------------------------------------------------

@dataclass
class DecompositionReport:
    k: int
    dim: int
    summand_dims: dict            # simplex dimension -> total dimension of its summands
    whitney_dim: int
    rank: int
    lemma_residuals: dict = field(default_factory=dict)   # level m -> relative residual

    @property
    def total(self):
        return self.whitney_dim + sum(self.summand_dims.values())

    @property
    def direct(self):
        return self.total == self.dim == self.rank

    def passed(self, tol=1e-9):
        return self.direct and all(r <= tol for r in self.lemma_residuals.values())


def decomposition_columns(proj, k, max_dim=None):
    """Global V^k columns spanning the Whitney part and the harmonic extensions of breve traces.

    Returns (whitney block, {m: block for simplices of dimension m}).
    """
    dc, cx = proj.dc, proj.complex
    space = dc.spaces[k]
    top = cx.n if max_dim is None else max_dim
    W = np.stack([whitney_extension(dc, f) for f in cx.simplices[k]], axis=1)
    blocks = {}
    for m in range(k, top + 1):
        cols = []
        for fid, f in enumerate(cx.simplices[m]):
            nb = len(space.face_dofs(m, fid))
            if nb == 0:
                continue
            if m == k:
                mu = space.ref.mean_weights[tuple(range(k + 1))]
                _, _, vt = np.linalg.svd(mu.reshape(1, -1))
                trace = vt[1:].T                    # mean-zero traces on f
            else:
                trace = np.eye(nb)
            if trace.shape[1] == 0:
                continue
            E = proj.extension(f, k)
            block = np.zeros((space.dim, trace.shape[1]))
            block[E.dofs] = E.matrix @ trace
            cols.append(block)
        blocks[m] = np.hstack(cols) if cols else np.zeros((space.dim, 0))
    return W, blocks


def verify_decomposition(proj, k, tol=1e-9):
    """Rank accounting for the decomposition of V^k and the d-invariance of its truncations."""
    dc, n = proj.dc, proj.n
    W, blocks = decomposition_columns(proj, k)
    allcols = np.hstack([W] + [blocks[m] for m in sorted(blocks)])
    rank = int(np.linalg.matrix_rank(allcols, tol=1e-10 * max(np.abs(allcols).max(), 1.0)))
    report = DecompositionReport(k, dc.spaces[k].dim, {m: b.shape[1] for m, b in blocks.items()},
                                 W.shape[1], rank)
    if k < n:
        D = dc.D[k]
        W1, blocks1 = decomposition_columns(proj, k + 1)
        for m in range(k + 1, n + 1):
            src = np.hstack([W] + [blocks[j] for j in range(k, m + 1)])
            dst = np.hstack([W1] + [blocks1[j] for j in range(k + 1, m + 1)])
            img = D @ src
            coef = np.linalg.lstsq(dst, img, rcond=None)[0]
            scale = max(np.abs(img).max(initial=0.0), 1e-300)
            report.lemma_residuals[m] = float(np.abs(dst @ coef - img).max(initial=0.0) / scale)
    return report


def locality_violation(proj, k, t, level=None):
    """Largest |entry| of pi^k rows for DOFs on cell t in moment columns outside D_t."""
    cx, dc = proj.complex, proj.dc
    level = proj.n if level is None else level
    dom = cx.locality_domain(t, level)
    inside = dc.layouts[k].cols(sorted(dom.cells))
    rows = dc.spaces[k].cell_dofs[t]
    block = np.delete(proj.Pi[k][rows], inside, axis=1)
    return float(np.abs(block).max(initial=0.0))


def stage_trace_residual(proj, k, m):
    """max over FE basis u of the DOFs on simplices of dimension k..m of pi_m^k u - u."""
    cx, space = proj.complex, proj.dc.spaces[k]
    S = proj.stage_fe_matrix(k, m)
    rows = space.dofs_on({j: range(len(cx.simplices[j])) for j in range(k, m + 1)})
    if len(rows) == 0:
        return 0.0
    return float(np.abs(S[rows] - np.eye(space.dim)[rows]).max())


def mean_value_residual(proj, k, moments):
    """Integrals over f in Delta_k of tr_f d(pi_{k-1}^{k-1} u - R^{k-1} u), for a (k-1)-form u."""
    if k < 1 or k - 1 not in proj.stages:
        raise ValueError("needs 1 <= k <= n and stages kept for k - 1")
    dc = proj.dc
    st = proj.stages[k - 1]
    diff = (st[1] - st[0]) @ moments
    return mean_trace_matrix(dc.spaces[k]) @ (dc.D[k - 1] @ diff)
