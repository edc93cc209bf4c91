import numpy as np
import pytest
from hypothesis import given, strategies as st

from akv import quadrature as Q, zoo
from akv.errors import UnsupportedDomainError


@pytest.fixture(scope="module")
def kt_report(kt):
    return Q.integral_identities(kt.spec, 4)


@pytest.mark.parametrize("name, vol", [("flat-torus-2", 1.0), ("flat-torus-4", 1.0),
                                       ("kodaira-thurston", 1.0)])
def test_volume(name, vol):
    assert Q.volume(zoo.builtin(name).spec, 6) == pytest.approx(vol, abs=1e-13)


def test_manifest_volume_uses_periods():
    text = zoo.manifest_text(2, [["4", "0"], ["0", "1"]], [["0", "-0.5"], ["2", "0"]], "scaled",
                             periods=[3, 2])
    spec = zoo.parse_manifold(text)
    # sqrt det g = 2 over a 3 x 2 box
    assert Q.volume(spec, 4) == pytest.approx(12.0)


@given(k=st.integers(1, 3), N=st.integers(8, 16))
def test_trig_polynomials_integrate_exactly(k, N):
    spec = zoo.builtin("flat-torus-2").spec
    val = Q.integrate(spec, lambda X: np.sin(2 * np.pi * k * X[:, 0]) ** 2 + np.cos(2 * np.pi * X[:, 1]), N)
    assert val == pytest.approx(0.5, abs=1e-14)


def test_spectral_convergence_for_smooth_periodic_integrand():
    spec = zoo.builtin("flat-torus-2").spec

    def f(X):
        return np.exp(np.sin(2 * np.pi * X[:, 0]))

    exact = 1.2660658777520082  # I_0(1)
    errs = [abs(Q.integrate(spec, f, N) - exact) for N in (4, 8, 16)]
    assert errs[0] > errs[1]
    assert errs[2] < 1e-13


def test_non_periodic_chart_rejected(spheres):
    with pytest.raises(UnsupportedDomainError):
        Q.volume(spheres.spec, 4)
    with pytest.raises(UnsupportedDomainError):
        Q.integral_identities(spheres.spec, 4)


@pytest.mark.parametrize("N, rule", [(3, "periodic-trapezoid"), (8, "simpson"), (4.5, "periodic-trapezoid")])
def test_gridspec_validation(N, rule):
    with pytest.raises(ValueError):
        Q.GridSpec(N, rule)


def test_weighted_sum_is_order_compensated():
    vals = np.array([1e16, 1.0, -1e16, 1.0])
    assert Q.weighted_sum(vals, np.ones(4), 1.0) == 2.0


def test_kt_integrals(kt_report):
    qa, qb = kt_report.QJ
    assert qa == pytest.approx(-0.75, abs=1e-4)
    assert qb == pytest.approx(-0.75, abs=1e-4)
    assert kt_report.eq72_residual <= 1e-4
    assert kt_report.eq73_residual <= 1e-4
    assert kt_report.eq74_residual <= 1e-4
    assert abs(kt_report.div_V2) <= 1e-6
    assert abs(kt_report.div_V3) <= 1e-6
    assert kt_report.values["volume"] == pytest.approx(1.0)


def test_kt_report_serialises(kt_report):
    d = kt_report.to_dict()
    assert d["N"] == 4 and len(d["QJ"]) == 2
    assert set(d["refinement"]) == set(Q._VALUE_KEYS)
    assert all(v >= 0 for v in kt_report.errors.values())


def test_flat_torus_integrals_vanish(flat4):
    rep = Q.integral_identities(flat4.spec, 4)
    for key in ("QJ_q", "QJ_phi_psi", "eq73", "eq74_rest", "div_V2", "div_V3"):
        assert abs(rep.values[key]) <= 1e-12, key


def test_chunking_does_not_change_sums(kt, monkeypatch):
    a = Q.integral_identities(kt.spec, 4, threads=1).values
    monkeypatch.setattr(Q, "DENSITY_CHUNK", 37)
    b = Q.integral_identities(kt.spec, 4, threads=3).values
    assert a == b


def test_big_Q(flat4):
    assert Q.big_Q(flat4.spec, 4) == (0.0, 0.0)


def test_non_almost_kahler_is_noted():
    rep = Q.integral_identities(zoo.builtin("kodaira-thurston-broken").spec, 4)
    assert rep.notes
