"""Verification suite, refinement study of local bounds, and report output."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cochain_projection import (
    CochainProjection,
    locality_violation,
    mean_trace_matrix,
    mean_value_residual,
    stage_trace_residual,
    verify_decomposition,
)
from .exceptions import ConfigError
from .fe_space import (
    DiscreteComplex,
    FEForm,
    FormSpaceSpec,
    GlobalSpace,
    parse_sequence,
    random_trig_form,
    whitney_spec,
)
from .mesh import mesh_from_name
from .quadrature import grundmann_moller
from .whitney_ops import WhitneyOperators, build_weights, delta_apply

MESHES = ("unit-square-crisscross", "unit-cube-kuhn")


@dataclass
class Tolerances:
    exact: float = 1e-12
    solve: float = 1e-10
    composed: float = 1e-9
    quadrature: float = 1e-8


@dataclass
class SuiteConfig:
    mesh: str = "unit-square-crisscross"
    levels: int = 2
    degree: int = 1
    family: str = "minus"
    k: str | int = "all"
    seed: int = 42
    base_n: int | None = None
    n_sampled: int = 10
    n_trig_probes: int = 32
    n_random_probes: int = 16
    n_locality_cells: int = 5
    growth_limit: float = 0.10
    tol: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if not (self.mesh in MESHES or self.mesh.startswith("file:")):
            raise ConfigError(f"unknown mesh {self.mesh!r}")
        if self.levels < 1:
            raise ConfigError("need at least one refinement level")
        if self.family not in ("minus", "full") and not self.family.startswith("mixed:"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.k != "all":
            try:
                self.k = int(self.k)
            except (TypeError, ValueError):
                raise ConfigError(f"k must be 'all' or an integer, got {self.k!r}") from None

    def sizes(self):
        base = self.base_n or (1 if self.mesh == "unit-cube-kuhn" else 2)
        if self.mesh.startswith("file:"):
            return [None]
        return [base * 2 ** i for i in range(self.levels)]

    def degrees(self, n):
        return list(range(n + 1)) if self.k == "all" else [self.k]


@dataclass
class CheckRecord:
    name: str
    level: int
    k: int | None
    property: str
    residual: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class BoundRow:
    level: int
    h: float
    k: int
    r: int | None
    family: str
    bound_L2: float
    bound_d: float

    def to_dict(self):
        return asdict(self)


@dataclass
class VerificationReport:
    mesh: str
    sizes: list
    sequence: list
    seed: int
    checks: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self, timings=True):
        d = {"mesh": self.mesh, "sizes": self.sizes, "sequence": self.sequence, "seed": self.seed,
             "passed": self.passed,
             "checks": [c.to_dict() for c in self.checks],
             "bounds": [b.to_dict() for b in self.bounds]}
        if timings:
            d["timings"] = self.timings
        return d

    @classmethod
    def from_dict(cls, d):
        checks = [CheckRecord(**{k: v for k, v in c.items() if k != "passed"}) for c in d["checks"]]
        bounds = [BoundRow(**b) for b in d["bounds"]]
        return cls(d["mesh"], d["sizes"], d["sequence"], d["seed"], checks, bounds, d.get("timings", {}))

    def deterministic_json(self):
        """JSON of everything except timings, used for reproducibility checks."""
        return json.dumps(self.to_dict(timings=False), sort_keys=True)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)


# -- norms --------------------------------------------------------------------------

def fe_cell_norms2(space, C):
    """Squared L2 norms per cell for each column of a coefficient matrix C (dim x p)."""
    C = np.asarray(C, dtype=float).reshape(space.dim, -1)
    W = space.ref.W
    B = space.cell_grams()
    out = np.zeros((space.complex.num_cells, C.shape[1]))
    for t in range(space.complex.num_cells):
        v = W.T @ C[space.cell_dofs[t]]
        out[t] = np.einsum("ip,ij,jp->p", v, B[t], v)
    return out


def sampled_cell_norms2(complex, func, degree=14):
    """Squared L2 norms per cell of a sampled form given by Cartesian components."""
    bary, wts = grundmann_moller(complex.n, degree)
    out = np.zeros(complex.num_cells)
    for t in range(complex.num_cells):
        x = bary @ complex.vertices[complex.cells[t]]
        vals = np.atleast_2d(func(x))
        out[t] = complex.volumes[t] * wts @ np.sum(vals ** 2, axis=1)
    return out


# -- one refinement level -------------------------------------------------------------

class LevelContext:
    """Everything built for one mesh of the refinement sequence."""

    def __init__(self, cfg, level, N):
        self.cfg = cfg
        self.level = level
        t0 = time.perf_counter()
        self.complex = mesh_from_name(cfg.mesh, N)
        n = self.complex.n
        r = cfg.degree if not cfg.family.startswith("mixed:") else None
        self.dc = DiscreteComplex(self.complex, parse_sequence(cfg.family, r, n))
        self.weights = build_weights(self.dc)
        self.ops = WhitneyOperators(self.dc, weights=self.weights)
        self.proj = CochainProjection(self.dc, self.ops, keep_stages=True)
        self.build_time = time.perf_counter() - t0

    def rng(self, *tags, per_level=True):
        head = [self.cfg.seed, self.level] if per_level else [self.cfg.seed]
        return np.random.default_rng([*head, *tags])


def _record(out, ctx, name, k, prop, residual, tol):
    out.append(CheckRecord(name, ctx.level, k, prop, float(residual), float(tol)))


def projection_checks(ctx, k, out):
    dc, proj, tol = ctx.dc, ctx.proj, ctx.cfg.tol
    space = dc.spaces[k]
    A = proj.fe_matrix(k)
    err = fe_cell_norms2(space, A - np.eye(space.dim)).sum(axis=0)
    nrm = fe_cell_norms2(space, np.eye(space.dim)).sum(axis=0)
    _record(out, ctx, "pi_projection_basis", k, "pi u = u for every FE basis function",
            np.sqrt(err / nrm).max(), tol.composed)
    Pi = proj.Pi[k]
    F = dc.fe_moment_matrix(k)
    twice = Pi @ (F @ Pi)
    _record(out, ctx, "pi_idempotent", k, "pi pi = pi on moment vectors", _rel(twice, Pi), tol.composed)
    n = dc.n
    if k < n:
        D = dc.D[k]
        lhs = D @ A
        _record(out, ctx, "pi_commuting_fe", k, "d pi^k = pi^{k+1} d on FE bases",
                _rel(lhs, proj.fe_matrix(k + 1) @ D.toarray()), tol.composed)
        rng = ctx.rng(k, 1)
        worst = 0.0
        for _ in range(ctx.cfg.n_sampled):
            u = random_trig_form(n, k, rng)
            mu = dc.moments(u, k)
            worst = max(worst, _rel(D @ (Pi @ mu), proj.Pi[k + 1] @ dc.shift(k, mu)))
        _record(out, ctx, "pi_commuting_sampled", k, "d pi^k u = pi^{k+1} du for smooth sampled u",
                worst, tol.quadrature)
    if k == 0:
        _record(out, ctx, "pi0_scalar_projection", 0, "the scalar construction reproduces FE functions",
                np.abs(A - np.eye(space.dim)).max(), tol.composed)
    seq = dc.sequence
    if all(s == whitney_spec(j).canonical(n) for j, s in enumerate(seq)):
        R = np.asarray(dc.embed[k] @ ctx.ops.R[k])
        _record(out, ctx, "pi_equals_R", k, "Whitney case: pi = R",
                np.abs(Pi - R).max() / max(np.abs(R).max(), 1.0), tol.exact)


def whitney_checks(ctx, k, out):
    dc, ops, tol, cx = ctx.dc, ctx.ops, ctx.cfg.tol, ctx.complex
    F = dc.fe_moment_matrix(k)
    E = dc.embed[k].toarray()
    RW = ops.R[k] @ (F @ E)
    _record(out, ctx, "R_projection", k, "R is a projection onto Whitney forms",
            np.abs(RW - np.eye(RW.shape[0])).max(), tol.composed)
    n = dc.n
    if k < n:
        lhs = dc.DW[k] @ (ops.R[k] @ F.toarray())
        rhs = ops.R[k + 1] @ (dc.fe_moment_matrix(k + 1) @ dc.D[k].toarray())
        _record(out, ctx, "R_commuting", k, "d R^k = R^{k+1} d on FE bases", _rel(lhs, rhs), tol.composed)
    # mean values of traces; the identity holds on V^k, so degree-2 inputs only when V^k holds them
    rng = ctx.rng(k, 2)
    if contains_p2(dc.spaces[k].spec, n):
        src = GlobalSpace(cx, FormSpaceSpec(k, 2, "full"), 2)
        prop = "integral of tr_f R u equals that of tr_f u, u of degree 2"
    else:
        src = dc.spaces[k]
        prop = "integral of tr_f R u equals that of tr_f u, u in V^k"
    C = rng.standard_normal((src.dim, 3))
    worst = 0.0
    for j in range(C.shape[1]):
        mom = dc.moments(FEForm(src, C[:, j]), k)
        got = mean_trace_matrix(dc.whitney[k]) @ (ops.R[k] @ mom)
        want = mean_trace_matrix(src) @ C[:, j]
        worst = max(worst, np.abs(got - want).max() / max(np.abs(want).max(), 1.0))
    _record(out, ctx, "R_mean_value", k, prop, worst, tol.composed)


def contains_p2(spec, n):
    """Whether the full degree-2 space of spec.k-forms is a subspace of spec's space."""
    c = spec.canonical(n)
    if c.family == "full":
        return c.r >= 2
    if c.k == 0:
        return c.r >= 2
    return c.r >= 3


def complex_checks(ctx, out):
    """Double complex identities, weight residuals and permutation invariance."""
    dc, cx, tol = ctx.dc, ctx.complex, ctx.cfg.tol
    n = cx.n
    rng = ctx.rng(99)
    dd, comm = 0.0, 0.0
    for m in range(n):
        for j in range(n + 1):
            Z = rng.standard_normal((len(cx.simplices[m]), dc.whitney[j].dim))
            dZ = delta_apply(cx, m, Z)
            if m + 1 < n:
                dd = max(dd, np.abs(delta_apply(cx, m + 1, dZ)).max() / np.abs(Z).max())
            if j < n:
                a = (dc.DW[j] @ dZ.T).T
                b = delta_apply(cx, m, (dc.DW[j] @ Z.T).T)
                comm = max(comm, _rel(a, b) if np.abs(b).max() > 0 else np.abs(a).max())
    _record(out, ctx, "delta_delta", None, "delta delta = 0", dd, tol.exact)
    _record(out, ctx, "d_delta_commute", None, "d delta = delta d", comm, tol.exact)
    w = ctx.weights
    _record(out, ctx, "weights_recursion", None, "weight recursion residual", max(w.recursion_residual), tol.solve)
    _record(out, ctx, "weights_gauge", None, "weight gauge residual", max(w.gauge_residual), tol.solve)
    w2 = build_weights(dc, permute_seed=ctx.cfg.seed)
    diff = max(np.abs(a - b).max() / max(np.abs(a).max(), 1.0) for a, b in zip(w.z, w2.z))
    _record(out, ctx, "weights_permutation", None, "weights independent of unknown ordering", diff, tol.solve)
    for k in range(n + 1):
        _record(out, ctx, "whitney_dimension", k, "dim of Whitney k-forms = number of k-simplices",
                abs(dc.whitney[k].dim - len(cx.simplices[k])), 0.0)


def structure_checks(ctx, k, out):
    proj, tol, cx = ctx.proj, ctx.cfg.tol, ctx.complex
    rep = verify_decomposition(proj, k)
    _record(out, ctx, "decomposition_direct_sum", k, "summand dims add up and are independent",
            abs(rep.total - rep.dim) + abs(rep.rank - rep.dim), 0.0)
    if rep.lemma_residuals:
        _record(out, ctx, "decomposition_d_invariance", k, "d maps level-m truncations into level m",
                max(rep.lemma_residuals.values()), tol.composed)
    worst = max(stage_trace_residual(proj, k, m) for m in range(k, cx.n + 1))
    _record(out, ctx, "stage_traces", k, "pi_m reproduces traces of FE forms on simplices of dim <= m",
            worst, tol.composed)
    if k >= 1:
        rng = ctx.rng(k, 3)
        worst = 0.0
        for _ in range(3):
            u = random_trig_form(cx.n, k - 1, rng)
            mom = ctx.dc.moments(u, k - 1)
            res = mean_value_residual(proj, k, mom)
            scale = max(np.abs(mean_trace_matrix(ctx.dc.spaces[k]) @ (ctx.dc.D[k - 1] @ (proj.Pi[k - 1] @ mom))).max(), 1.0)
            worst = max(worst, np.abs(res).max() / scale)
        _record(out, ctx, "stage_mean_value", k, "first stage adds mean-zero traces of d on k-simplices",
                worst, tol.composed)


def locality_checks(ctx, k, out):
    proj, cx = ctx.proj, ctx.complex
    rng = ctx.rng(k, 4)
    cells = rng.choice(cx.num_cells, size=min(ctx.cfg.n_locality_cells, cx.num_cells), replace=False)
    lay = ctx.dc.layouts[k]
    base = rng.standard_normal(lay.size)
    worst = 0.0
    for t in cells:
        worst = max(worst, locality_violation(proj, k, int(t)))
        inside = lay.cols(sorted(cx.locality_domain(int(t), cx.n).cells))
        pert = base + rng.standard_normal(lay.size)
        pert[inside] = base[inside]
        rows = ctx.dc.spaces[k].cell_dofs[int(t)]
        worst = max(worst, np.abs(proj.Pi[k][rows] @ (pert - base)).max())
    _record(out, ctx, "locality", k, "pi u on T depends only on u on D_T", worst, ctx.cfg.tol.exact)


# -- local bounds ---------------------------------------------------------------------

@dataclass
class ProbeSet:
    """Probes for one k: moment vectors and per-cell squared norms of u and du."""

    moments: np.ndarray       # size x p
    u2: np.ndarray            # cells x p
    du2: np.ndarray           # cells x p
    fe: np.ndarray            # bool per probe: u is an FE form
    coeffs: np.ndarray | None = None   # V^k coefficients of the FE probes (dim x p_fe)
    k: int | None = None


def _local_gram(space, cells, dofs):
    W = space.ref.W
    B = space.cell_grams()
    out = np.zeros((len(dofs), len(dofs)))
    for t in cells:
        loc = np.searchsorted(dofs, space.cell_dofs[t])
        out[np.ix_(loc, loc)] += W @ B[t] @ W.T
    return out


def _top_eigvec(A, B, tol=1e-12):
    """Maximizer of x'Ax / x'Bx over the range of the PSD matrix B."""
    w, U = np.linalg.eigh(B)
    keep = w > tol * max(w.max(initial=0.0), 1e-300)
    if not keep.any():
        return None
    T = U[:, keep] / np.sqrt(w[keep])
    lam, V = np.linalg.eigh(T.T @ A @ T)
    return T @ V[:, -1]


def local_worst_fe(ctx, k, t, dom):
    """FE functions on D_t maximizing the local L2 and derivative ratios (quadratic form)."""
    dc, cx = ctx.dc, ctx.complex
    space = dc.spaces[k]
    dofs = np.unique(space.cell_dofs[dom])
    G_dom = _local_gram(space, dom, dofs)
    G_t = _local_gram(space, [t], dofs)
    out = []
    if k < dc.n:
        nxt = dc.spaces[k + 1]
        ndofs = np.unique(nxt.cell_dofs[dom])
        Dl = dc.D[k][ndofs][:, dofs].toarray()
        H_dom = Dl.T @ _local_gram(nxt, dom, ndofs) @ Dl
        H_t = Dl.T @ _local_gram(nxt, [t], ndofs) @ Dl
        out.append(_top_eigvec(G_t, G_dom + cx.diameters[t] ** 2 * H_dom))
        out.append(_top_eigvec(H_t, H_dom))
    else:
        out.append(_top_eigvec(G_t, G_dom))
    vecs = []
    for v in out:
        if v is not None:
            full = np.zeros(space.dim)
            full[dofs] = v / np.abs(v).max()
            vecs.append(full)
    return vecs


def build_probes(ctx, k, basis=True, local=True):
    """FE basis functions, per-cell worst FE functions, seeded trigonometric forms, random FE vectors."""
    dc, cx, cfg = ctx.dc, ctx.complex, ctx.cfg
    space = dc.spaces[k]
    rng = ctx.rng(k, 5)
    trig_rng = ctx.rng(k, 6, per_level=False)      # the same smooth probes on every level
    blocks = [np.eye(space.dim)] if basis else []
    if local:
        for t in range(cx.num_cells):
            dom = sorted(cx.locality_domain(t, cx.n).cells)
            vecs = local_worst_fe(ctx, k, t, dom)
            if vecs:
                blocks.append(np.stack(vecs, axis=1))
    blocks.append(rng.standard_normal((space.dim, cfg.n_random_probes)))
    C = np.hstack(blocks)
    mom = [dc.fe_moment_matrix(k) @ C]
    u2 = [fe_cell_norms2(space, C)]
    du2 = [fe_cell_norms2(dc.spaces[k + 1], dc.D[k] @ C) if k < dc.n else np.zeros_like(u2[0])]
    fe = [np.ones(C.shape[1], bool)]
    for _ in range(cfg.n_trig_probes):
        u = random_trig_form(cx.n, k, trig_rng)
        mom.append(dc.moments(u, k)[:, None])
        u2.append(sampled_cell_norms2(cx, u.u)[:, None])
        du2.append((sampled_cell_norms2(cx, u.du) if k < dc.n else np.zeros(cx.num_cells))[:, None])
        fe.append(np.zeros(1, bool))
    return ProbeSet(np.hstack(mom), np.hstack(u2), np.hstack(du2), np.concatenate(fe), C, k)


def estimate_local_bound(proj, t, probes, domain=None, image=None):
    """Largest probe ratios on cell t for the L2 bound and the derivative bound.

    Ratios: ||pi u||_T / (||u||_{D_T} + h_T ||du||_{D_T}) and ||d pi u||_T / ||du||_{D_T}.
    Probes with nothing on D_T are skipped.  image may carry precomputed
    (pi u cell norms^2, d pi u cell norms^2) for all cells.
    """
    cx = proj.complex
    k = probes.k if probes.k is not None else _probe_degree(proj, probes)
    if domain is None:
        domain = sorted(cx.locality_domain(t, cx.n).cells)
    if image is None:
        image = probe_images(proj, k, probes)
    pi2, dpi2 = image
    u_d = np.sqrt(probes.u2[domain].sum(axis=0))
    du_d = np.sqrt(probes.du2[domain].sum(axis=0))
    u_all = np.sqrt(probes.u2.sum(axis=0))
    du_all = np.sqrt(probes.du2.sum(axis=0))
    denom = u_d + cx.diameters[t] * du_d
    ok = denom > 1e-10 * (u_all + cx.diameters[t] * du_all)
    r_l2 = np.sqrt(pi2[t][ok]) / denom[ok]
    # closed probes (du at roundoff level relative to u/h) carry no derivative information
    okd = du_d > 1e-8 * np.maximum(du_all, 1e-300)
    okd &= du_all > 1e-8 * u_all / cx.diameters[t]
    r_d = np.sqrt(dpi2[t][okd]) / du_d[okd]
    return float(r_l2.max(initial=0.0)), float(r_d.max(initial=0.0))


def _probe_degree(proj, probes):
    ks = [k for k, lay in enumerate(proj.dc.layouts) if lay.size == probes.moments.shape[0]]
    if len(ks) != 1:
        raise ValueError("cannot infer the form degree of the probes; set ProbeSet.k")
    return ks[0]


def probe_images(proj, k, probes):
    dc = proj.dc
    out = proj.Pi[k] @ probes.moments
    pi2 = fe_cell_norms2(dc.spaces[k], out)
    dpi2 = fe_cell_norms2(dc.spaces[k + 1], dc.D[k] @ out) if k < dc.n else np.zeros_like(pi2)
    return pi2, dpi2


def bound_rows(ctx, k, out_checks):
    """Sup of the probe ratios over all cells; also checks ||pi u||_T = ||u||_T for FE probes."""
    proj, cx = ctx.proj, ctx.complex
    probes = build_probes(ctx, k)
    image = probe_images(proj, k, probes)
    b2 = bd = 0.0
    for t in range(cx.num_cells):
        dom = sorted(cx.locality_domain(t, cx.n).cells)
        a, b = estimate_local_bound(proj, t, probes, dom, image)
        b2, bd = max(b2, a), max(bd, b)
    fe = probes.fe
    want = np.sqrt(probes.u2[:, fe])
    got = np.sqrt(image[0][:, fe])
    _record(out_checks, ctx, "fe_probe_reproduction", k, "||pi u||_T = ||u||_T for FE probes",
            np.abs(got - want).max() / max(want.max(), 1e-300), ctx.cfg.tol.composed)
    fam = ctx.cfg.family
    r = ctx.cfg.degree if not fam.startswith("mixed:") else None
    return BoundRow(ctx.level, cx.h, k, r, fam, b2, bd)


# -- the suite -------------------------------------------------------------------------

def run_suite(cfg, levels_out=None):
    """Run every check on every refinement level and the bound study across levels.

    levels_out, if a list, receives the LevelContext objects.
    """
    if not isinstance(cfg, SuiteConfig):
        raise ConfigError("run_suite needs a SuiteConfig")
    report = None
    for level, N in enumerate(cfg.sizes()):
        t0 = time.perf_counter()
        ctx = LevelContext(cfg, level, N)
        if report is None:
            report = VerificationReport(cfg.mesh, cfg.sizes(), [s.label() for s in ctx.dc.sequence], cfg.seed)
        n = ctx.complex.n
        degrees = cfg.degrees(n)
        if any(k < 0 or k > n for k in degrees):
            raise ConfigError(f"k outside 0..{n}")
        checks = []
        complex_checks(ctx, checks)
        for k in degrees:
            whitney_checks(ctx, k, checks)
            projection_checks(ctx, k, checks)
            structure_checks(ctx, k, checks)
            locality_checks(ctx, k, checks)
            report.bounds.append(bound_rows(ctx, k, checks))
        report.checks.extend(checks)
        report.timings[f"level{level}"] = {"build": ctx.build_time, "total": time.perf_counter() - t0}
        if levels_out is not None:
            levels_out.append(ctx)
    for k in cfg.degrees(len(report.sequence) - 1):
        rows = sorted((b for b in report.bounds if b.k == k), key=lambda b: b.level)
        for name, attr in (("bound_growth_L2", "bound_L2"), ("bound_growth_d", "bound_d")):
            growth = 0.0
            for a, b in zip(rows, rows[1:]):
                va, vb = getattr(a, attr), getattr(b, attr)
                if va > 0:
                    growth = max(growth, vb / va - 1.0)
            report.checks.append(CheckRecord(name, rows[-1].level if rows else 0, k,
                                             "local bound ratio grows < limit under refinement",
                                             growth, cfg.growth_limit))
    report.checks.sort(key=lambda c: (c.level, -1 if c.k is None else c.k, c.name))
    return report


# -- output -------------------------------------------------------------------------------

CSV_HEADER = ["level", "h", "k", "r", "family", "bound_L2", "bound_d"]


def emit_report(report, path, fmt="json"):
    text = format_report(report, fmt)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def format_report(report, fmt="json"):
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for b in report.bounds:
            w.writerow([b.level, repr(b.h), b.k, "" if b.r is None else b.r, b.family,
                        repr(b.bound_L2), repr(b.bound_d)])
        return buf.getvalue()
    if fmt == "markdown":
        return _markdown(report)
    raise ConfigError(f"unknown report format {fmt!r}")


def _markdown(report):
    lines = [f"# Verification report: {report.mesh}", "",
             f"sizes {report.sizes}, sequence {', '.join(report.sequence)}, seed {report.seed}", "",
             f"overall: {'PASS' if report.passed else 'FAIL'}", ""]
    ks = sorted({b.k for b in report.bounds} | {c.k for c in report.checks if c.k is not None})
    for k in ks:
        lines += [f"## k = {k}", "", "| level | h | bound_L2 | bound_d |", "|---|---|---|---|"]
        for b in sorted((b for b in report.bounds if b.k == k), key=lambda b: b.level):
            lines.append(f"| {b.level} | {b.h:.4g} | {b.bound_L2:.6g} | {b.bound_d:.6g} |")
        lines += ["", "| check | level | residual | tolerance | pass |", "|---|---|---|---|---|"]
        for c in report.checks:
            if c.k == k:
                lines.append(f"| {c.name} | {c.level} | {c.residual:.3e} | {c.tolerance:.1e} | "
                             f"{'yes' if c.passed else 'NO'} |")
        lines.append("")
    glob = [c for c in report.checks if c.k is None]
    if glob:
        lines += ["## complex-wide checks", "", "| check | level | residual | tolerance | pass |",
                  "|---|---|---|---|---|"]
        for c in glob:
            lines.append(f"| {c.name} | {c.level} | {c.residual:.3e} | {c.tolerance:.1e} | "
                         f"{'yes' if c.passed else 'NO'} |")
        lines.append("")
    return "\n".join(lines)
