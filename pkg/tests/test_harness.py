from __future__ import annotations

import csv
import io
import json
from collections import Counter

import numpy as np
import pytest

from feec_proj.exceptions import ConfigError
from feec_proj.fe_space import FormSpaceSpec
from feec_proj.harness import (
    CSV_HEADER,
    CheckRecord,
    LevelContext,
    ProbeSet,
    SuiteConfig,
    VerificationReport,
    contains_p2,
    emit_report,
    estimate_local_bound,
    fe_cell_norms2,
    format_report,
    probe_images,
    run_suite,
)

SMALL = dict(mesh="unit-square-crisscross", levels=2, degree=2, family="minus",
             n_trig_probes=4, n_random_probes=4, n_sampled=3)


@pytest.fixture(scope="module")
def small_report():
    return run_suite(SuiteConfig(**SMALL))


@pytest.fixture(scope="module")
def level_ctx():
    return LevelContext(SuiteConfig(**SMALL), 0, 4)


def test_small_suite_passes(small_report):
    assert small_report.passed, [c.name for c in small_report.failures()]
    assert small_report.sizes == [2, 4]
    assert small_report.sequence == ["P2L0", "P2-L1", "P2-L2"]


def test_each_check_appears_once(small_report):
    keys = Counter((c.name, c.level, c.k) for c in small_report.checks)
    assert max(keys.values()) == 1
    names = {c.name for c in small_report.checks}
    for required in ("pi_projection_basis", "pi_idempotent", "pi_commuting_fe", "pi_commuting_sampled",
                     "R_projection", "R_commuting", "R_mean_value", "delta_delta", "d_delta_commute",
                     "weights_recursion", "weights_gauge", "weights_permutation", "whitney_dimension",
                     "decomposition_direct_sum", "decomposition_d_invariance", "stage_traces",
                     "locality", "bound_growth_L2", "bound_growth_d", "fe_probe_reproduction"):
        assert any(n.startswith(required) for n in names), required


def test_pass_means_residual_within_tolerance():
    assert CheckRecord("a", 0, 0, "p", 1e-10, 1e-9).passed
    assert not CheckRecord("a", 0, 0, "p", 2e-9, 1e-9).passed
    assert not CheckRecord("a", 0, 0, "p", float("nan"), 1e-9).passed


def test_report_is_deterministic(small_report):
    again = run_suite(SuiteConfig(**SMALL))
    assert again.deterministic_json() == small_report.deterministic_json()
    assert "timings" not in json.loads(small_report.deterministic_json())


def test_json_round_trip(small_report, tmp_path):
    path = emit_report(small_report, tmp_path / "r.json", "json")
    back = VerificationReport.from_dict(json.loads(path.read_text()))
    assert back.to_dict() == json.loads(json.dumps(small_report.to_dict()))


def test_csv_and_markdown(small_report):
    rows = list(csv.reader(io.StringIO(format_report(small_report, "csv"))))
    assert rows[0] == CSV_HEADER == ["level", "h", "k", "r", "family", "bound_L2", "bound_d"]
    assert len(rows) == 1 + 2 * 3
    md = format_report(small_report, "markdown")
    assert md.count("## k = ") == 3
    assert md.count("| level | h | bound_L2 | bound_d |") == 3
    with pytest.raises(ConfigError):
        format_report(small_report, "xml")


def test_bound_table_has_every_level_and_degree(small_report):
    assert sorted((b.level, b.k) for b in small_report.bounds) == [(lv, k) for lv in range(2) for k in range(3)]
    for b in small_report.bounds:
        assert b.bound_L2 > 0 and np.isfinite(b.bound_d)


def _fe_probe(ctx, k, coeffs):
    dc = ctx.dc
    C = np.asarray(coeffs, dtype=float).reshape(-1, 1)
    du2 = fe_cell_norms2(dc.spaces[k + 1], dc.D[k] @ C) if k < dc.n else np.zeros((ctx.complex.num_cells, 1))
    return ProbeSet(dc.fe_moment_matrix(k) @ C, fe_cell_norms2(dc.spaces[k], C), du2, np.ones(1, bool), C, k)


def test_probe_outside_domain_is_skipped(level_ctx):
    ctx, k = level_ctx, 0
    cx = ctx.complex
    t = 0
    dom = cx.locality_domain(t, cx.n).cells
    far = next(v for v in range(len(cx.simplices[0])) if not set(cx.cofaces[0][v]) & dom)
    c = np.zeros(ctx.dc.spaces[0].dim)
    c[ctx.dc.spaces[0].face_dofs(0, far)] = 1.0
    probes = _fe_probe(ctx, k, c)
    assert probe_images(ctx.proj, k, probes)[0][t, 0] == 0.0
    assert estimate_local_bound(ctx.proj, t, probes) == (0.0, 0.0)


def test_fe_probe_norm_is_reproduced(level_ctx, rng):
    ctx = level_ctx
    cx = ctx.complex
    for k in range(cx.n + 1):
        c = rng.standard_normal(ctx.dc.spaces[k].dim)
        probes = _fe_probe(ctx, k, c)
        pi2, _ = probe_images(ctx.proj, k, probes)
        assert np.allclose(np.sqrt(pi2), np.sqrt(probes.u2), rtol=1e-9)
        for t in range(cx.num_cells):
            a, b = estimate_local_bound(ctx.proj, t, probes)
            assert a <= 1 + 1e-9 and b <= 1 + 1e-9


def test_contains_p2():
    assert contains_p2(FormSpaceSpec(0, 2, "full"), 2)
    assert contains_p2(FormSpaceSpec(1, 2, "full"), 2)
    assert not contains_p2(FormSpaceSpec(1, 2, "minus"), 2)
    assert contains_p2(FormSpaceSpec(1, 3, "minus"), 2)


@pytest.mark.parametrize("bad", [dict(mesh="torus"), dict(levels=0), dict(family="bogus"), dict(k="x")])
def test_bad_config(bad):
    with pytest.raises(ConfigError):
        SuiteConfig(**bad)


def test_k_out_of_range():
    with pytest.raises(ConfigError):
        run_suite(SuiteConfig(levels=1, k=5))


def test_ambiguous_probe_degree_must_be_given(level_ctx):
    # P2 0-forms and P2^- 1-forms in 2D have moment vectors of the same length
    probes = _fe_probe(level_ctx, 1, np.ones(level_ctx.dc.spaces[1].dim))
    probes.k = None
    with pytest.raises(ValueError):
        estimate_local_bound(level_ctx.proj, 0, probes)


def test_lowest_order_suite_compares_pi_with_R():
    rep = run_suite(SuiteConfig(levels=1, degree=1, n_trig_probes=2, n_random_probes=2, n_sampled=2))
    picked = [c for c in rep.checks if c.name == "pi_equals_R"]
    assert len(picked) == 3 and all(c.passed for c in picked)
