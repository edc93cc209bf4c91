"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""
import io
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from akv import chart, cli, identities as I, quadrature as Q, theorems as T, zoo
from akv.fd import FDConfig
from conftest import manifest_path
from lie_oracle import kodaira_thurston_oracle

ORACLE = kodaira_thurston_oracle()
CLASSIFY_GRID = 4


def test_criterion_1_kahler_baseline(acceptance_log):
    t0 = time.perf_counter()
    worst, worst_nJ, failures = 0.0, 0.0, []
    for name in ("flat-torus-4", "product-spheres"):
        spec = zoo.builtin(name).spec
        rep = I.run_suite(spec, ("random", 100, 2024), tolerances={c: 1e-10 for c in I.CLASSES})
        failures += [f"{name}:{t}" for t in rep.failed_ids] + [f"{name}:{e['error']}" for e in rep.errors]
        worst = max(worst, max(rep.worst.values()))
        b = chart.curvature_bundle(spec, I.sample_points(spec, ("random", 100, 2024)))
        worst_nJ = max(worst_nJ, float(np.max(b.nablaJ_norm)))
    elapsed = time.perf_counter() - t0
    ok = not failures and worst <= 1e-10 and worst_nJ <= 1e-10 and elapsed < 10
    acceptance_log(1, ok, f"max residual {worst:.2e}, max|nabla J| {worst_nJ:.2e}, {elapsed:.1f}s")
    assert not failures, failures
    assert worst <= 1e-10 and worst_nJ <= 1e-10
    assert elapsed < 10


def test_criterion_2_kodaira_thurston_oracle(kt, acceptance_log):
    X = kt.spec.domain.sample(20, seed=7)
    b = chart.curvature_bundle(kt.spec, X)

    def fr(A):
        return zoo.to_frame(A, kt.frame(X))

    checks = {
        "S": np.abs(b.S + 0.5),
        "S*": np.abs(b.SStar - 0.5),
        "|nabla Omega|^2": np.abs(b.nablaOmega_sq - 1.0),
        "Ric~": np.abs(fr(b.tildeRic) - np.eye(4) / 8),
        "Ric": np.abs(fr(b.Ric) - np.diag([-0.5, -0.5, 0.5, 0.0])),
        "Ric+": np.abs(fr(b.RicPlus) - np.diag([0.0, -0.25, 0.0, -0.25])),
        "Ric*+": np.abs(fr(b.RicStarPlus) - np.diag([0.25, 0.0, 0.25, 0.0])),
    }
    # the frozen reference values agree with the independent structure-constant oracle
    assert ORACLE.S == -0.5 and ORACLE.SStar == 0.5 and ORACLE.nablaOmega_sq == 1.0
    np.testing.assert_allclose(ORACLE.plus(ORACLE.Ric), np.diag([0.0, -0.25, 0.0, -0.25]), atol=1e-15)
    worst = {k: float(np.max(v)) for k, v in checks.items()}
    ok = max(worst.values()) <= 1e-8
    acceptance_log(2, ok, "max deviation " + f"{max(worst.values()):.2e} over " + ", ".join(worst))
    assert ok, worst


def test_criterion_3_grid_identities(kt, acceptance_log):
    rep = I.run_suite(kt.spec, ("grid", 12), identities="eq51,eq76",
                      tolerances={"second_order": 1e-8, "dim4_only": 1e-8})
    X = kt.spec.domain.grid(12)
    b = chart.curvature_bundle(kt.spec, X)
    lhs78 = np.abs(4 * I._len_diff(b))
    rhs78 = np.abs((b.S + b.SStar) * b.nablaOmega_sq)
    w51, w76 = rep.worst["eq51"], rep.worst["eq76"]
    ok = (rep.passed and rep.counts["total"] == 2 * 12**4 and w51 <= 1e-8 and w76 <= 1e-8
          and lhs78.max() <= 1e-8 and rhs78.max() <= 1e-8)
    acceptance_log(3, ok, f"eq51 {w51:.2e}, eq76 {w76:.2e}, eq78 sides {lhs78.max():.2e}/{rhs78.max():.2e}"
                          f" on {len(X)} points")
    assert ok


@pytest.mark.slow
def test_criterion_4_weitzenbock_integrals(kt, acceptance_log):
    t0 = time.perf_counter()
    rep = Q.integral_identities(kt.spec, 16, FDConfig())
    elapsed = time.perf_counter() - t0
    r72, r73, r74 = rep.eq72_residual, rep.eq73_residual, rep.eq74_residual
    d2, d3 = abs(rep.div_V2), abs(rep.div_V3)
    ok = max(r72, r73, r74) <= 1e-4 and max(d2, d3) <= 1e-6 and elapsed < 300
    acceptance_log(4, ok, f"Q(J) {rep.QJ[0]:.6f}/{rep.QJ[1]:.6f}, eq72 {r72:.1e}, eq73 {r73:.1e}, "
                          f"eq74 {r74:.1e}, div V2 {d2:.1e}, div V3 {d3:.1e}, {elapsed:.0f}s")
    assert ok


FIRST_ORDER = [c for c in I.list_identities(4) if c.klass == "first_order"]
STEPS = (4e-3, 2e-3, 1e-3)


def worst_residuals(spec, X, h):
    res = I.evaluate(FIRST_ORDER, I.EvalContext(spec, X, FDConfig(step=h, use_analytic=False)))
    return {k: float(np.max(v)) for k, v in res.items()}


def orders(spec, X):
    r = [worst_residuals(spec, X, h) for h in STEPS]
    return r, {k: min(I.convergence_order(r[i][k], r[i + 1][k]) or np.inf for i in range(2))
               for k in r[0]}


def test_criterion_5_fd_convergence(kt, acceptance_log):
    """4th-order stencils differentiate the quadratic KT fields exactly, so on
    KT the pure-FD residual is rounding error and has no convergence order.
    The test checks that exactness and measures the order on a manifest with
    non-polynomial coefficients."""
    X = kt.spec.domain.sample(8, seed=3)
    kt_res, _ = orders(kt.spec, X)
    kt_worst = max(max(r.values()) for r in kt_res)
    twist = zoo.parse_manifold(zoo.perturbation_manifests(1, seed=0)[0][1])
    _, tw_orders = orders(twist, twist.domain.sample(8, seed=3))
    tw_min = min(tw_orders.values())
    ok = kt_worst <= 1e-10 and tw_min >= 3.5
    acceptance_log(5, ok, f"literal KT order unmeasurable (FD exact, residual <= {kt_worst:.1e} at "
                          f"every h; strict xfail records it); trig-twist manifest min order "
                          f"{tw_min:.2f} over {len(tw_orders)} first_order identities")
    assert ok, (kt_worst, tw_orders)


@pytest.mark.xfail(strict=True, reason="FD error on KT is pure rounding; no order >= 3.5 exists to measure")
def test_criterion_5_literal_order_on_kodaira_thurston(kt):
    _, kt_orders = orders(kt.spec, kt.spec.domain.sample(8, seed=3))
    assert min(kt_orders.values()) >= 3.5


KT_NAMED = ["Prop 3.1", "Prop 3.2", "Thm 3.1", "Thm 3.2", "Thm 3.3", "Thm 3.4",
            "Cor 3.2", "Cor 3.3", "Cor 3.4", "Cor 3.5"]


@pytest.mark.slow
def test_criterion_6_soundness_harness(acceptance_log):
    specs = [(name, zoo.builtin(name).spec) for name in zoo.BUILTINS]
    specs += [(label, zoo.parse_manifold(text)) for label, text, _ in zoo.perturbation_manifests(20, seed=0)]
    inconsistent, reports = [], {}
    for label, spec in specs:
        rep = T.classify(spec, CLASSIFY_GRID)
        reports[label] = rep
        inconsistent += [f"{label}:{e.theorem}" for e in rep.entries if not e.consistent]
    kt_rep = reports["kodaira-thurston"]
    unnamed = [t for t in KT_NAMED if not kt_rep.entry(t).failed_hypotheses]
    ok = not inconsistent and not unnamed
    acceptance_log(6, ok, f"{len(specs)} reports, {len(inconsistent)} inconsistent; "
                          f"KT names a failed hypothesis for {len(KT_NAMED) - len(unnamed)}/{len(KT_NAMED)}")
    assert not inconsistent, inconsistent
    assert not unnamed, unnamed


def test_criterion_7_negative_controls(acceptance_log):
    out = io.StringIO()
    code_nc = cli.run_cli(["check", "--manifest", manifest_path("kodaira_thurston_nonclosed.manifest"),
                           "--points", "8"], stdout=out, stderr=io.StringIO())
    failed = set(json.loads(out.getvalue())["summary"]["failed"])
    err = io.StringIO()
    code_j2 = cli.run_cli(["check", "--manifest", manifest_path("j_squared_broken.manifest")],
                          stdout=io.StringIO(), stderr=err)
    ok = code_nc == 1 and {"eq03", "eq05", "eq06"} <= failed and code_j2 == 2
    acceptance_log(7, ok, f"non-closed exit {code_nc} failing {sorted({'eq03', 'eq05', 'eq06'} & failed)}; "
                          f"J^2 != -1 exit {code_j2}")
    assert ok
    assert "J2_plus_id" in err.getvalue()


def test_criterion_8_determinism(tmp_path, acceptance_log):
    paths = [tmp_path / f"run{i}.json" for i in range(2)]
    for p in paths:
        subprocess.run([sys.executable, "-m", "akv.cli", "check", "--manifold", "kodaira-thurston",
                        "--points", "16", "--seed", "5", "--output", str(p)],
                       check=True, cwd=os.path.dirname(__file__))
    a, b = (p.read_bytes() for p in paths)
    ok = a == b and len(a) > 0
    acceptance_log(8, ok, f"two CLI runs, {len(a)} bytes each, identical={a == b}")
    assert ok
