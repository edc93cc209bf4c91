import numpy as np
import pytest

from akv import chart, zoo
from akv.errors import ChartDomainError, ShapeError
from akv.fd import FDConfig
from akv.point_algebra import endo_inner
from lie_oracle import kodaira_thurston_oracle

ORACLE = kodaira_thurston_oracle()
PURE_FD = FDConfig(use_analytic=False)


def frame_of(entry, A, X):
    return zoo.to_frame(A, entry.frame(X))


def frame_directions(entry, T, X):
    """``T[p, i, ...]`` contracted with the frame: entry ``k`` is ``T(e_k)``."""
    E = entry.frame(X)
    return np.einsum("pik,pi...->pk...", E, T)


@pytest.fixture(scope="module")
def kt_points(kt):
    return kt.spec.domain.sample(6, seed=11)


@pytest.mark.parametrize("fdcfg, tol", [(FDConfig(), 1e-12), (PURE_FD, 1e-8)])
def test_kt_curvature_matches_oracle(kt, kt_points, fdcfg, tol):
    b = chart.curvature_bundle(kt.spec, kt_points, fdcfg)
    X = kt_points
    for name, ref in [("Ric", ORACLE.Ric), ("RicStar", ORACLE.RicStar),
                      ("tildeRic", ORACLE.tildeRic), ("RicPlus", ORACLE.plus(ORACLE.Ric)),
                      ("RicStarPlus", ORACLE.plus(ORACLE.RicStar))]:
        got = frame_of(kt, getattr(b, name), X)
        np.testing.assert_allclose(got, np.broadcast_to(ref, got.shape), atol=tol, err_msg=name)
    np.testing.assert_allclose(b.S, ORACLE.S, atol=tol)
    np.testing.assert_allclose(b.SStar, ORACLE.SStar, atol=tol)
    np.testing.assert_allclose(b.nablaOmega_sq, ORACLE.nablaOmega_sq, atol=tol)
    np.testing.assert_allclose(b.nablaJ_sq, ORACLE.nablaJ_sq, atol=tol)


def test_kt_connection_matches_oracle(kt, kt_points):
    b = chart.curvature_bundle(kt.spec, kt_points)
    E = kt.frame(kt_points)
    nJ = frame_directions(kt, b.nablaJ, kt_points)
    for k in range(4):
        got = np.linalg.solve(E, nJ[:, k] @ E)
        np.testing.assert_allclose(got, np.broadcast_to(ORACLE.nablaJ[k], got.shape), atol=1e-12)


def test_kt_levi_civita_e1_e2(kt):
    # nabla_{e1} e2 = 1/2 e3 from the Koszul formula
    X = np.array([[0.3, 0.1, 0.7, 0.2]])
    jet = chart.make_jet(kt.spec, X, 1)
    E = kt.frame(X)[0]
    e1, e2 = E[:, 0], E[:, 1]
    dE2 = np.zeros(4)
    dE2[2] = 1.0  # d_x of e2 = d_y + x d_z
    cov = e1[0] * dE2 + np.einsum("aij,i,j->a", jet.Gamma[0], e1, e2)
    np.testing.assert_allclose(np.linalg.solve(E, cov), ORACLE.connection(0, 1), atol=1e-12)
    np.testing.assert_allclose(ORACLE.connection(0, 1), [0, 0, 0.5, 0])


def test_kt_twisted_curvature_norms(kt, kt_points):
    b = chart.curvature_bundle(kt.spec, kt_points)
    P, M = ORACLE.tildeR_split()
    np.testing.assert_allclose(chart.curvature_norm_sq(b.tildeR, b.g, b.ginv),
                               ORACLE.curvature_norm_sq(ORACLE.tildeR), atol=1e-12)
    np.testing.assert_allclose(chart.curvature_norm_sq(b.tildeRplus, b.g, b.ginv),
                               ORACLE.curvature_norm_sq(P), atol=1e-12)
    np.testing.assert_allclose(chart.curvature_norm_sq(b.tildeRminus, b.g, b.ginv),
                               ORACLE.curvature_norm_sq(M), atol=1e-12)
    assert ORACLE.curvature_norm_sq(ORACLE.tildeR) == pytest.approx(5 / 8)
    assert ORACLE.curvature_norm_sq(P) == pytest.approx(1 / 8)
    assert ORACLE.curvature_norm_sq(M) == pytest.approx(1 / 2)


def test_kt_nested_ricci_matches_oracle(kt):
    X = kt.spec.domain.sample(3, seed=2)
    rj = chart.ricci_jet(kt.spec, X)
    np.testing.assert_allclose(rj.qJ, ORACLE.qJ, atol=1e-4)
    np.testing.assert_allclose(rj.phi_psi, ORACLE.phi_psi, atol=1e-4)
    nR = frame_directions(kt, rj.nablaRic, X)
    E = kt.frame(X)
    for k in range(4):
        got = np.linalg.solve(E, nR[:, k] @ E)
        np.testing.assert_allclose(got, np.broadcast_to(ORACLE.nablaRic[k], got.shape), atol=1e-5)


def test_oracle_frozen_values():
    assert ORACLE.qJ == pytest.approx(-0.75)
    assert ORACLE.phi_psi == pytest.approx(-0.375)
    np.testing.assert_allclose(ORACLE.tildeRic, np.eye(4) / 8)
    # R~ic = 1/2 (Ric*+ - Ric+)
    np.testing.assert_allclose(ORACLE.tildeRic, 0.5 * (ORACLE.plus(ORACLE.RicStar) - ORACLE.plus(ORACLE.Ric)))


@pytest.mark.parametrize("name, r1, r2", [("product-spheres", 1.0, 1.0), ("product-spheres-1-2", 1.0, 2.0)])
def test_sphere_curvature(name, r1, r2):
    entry = zoo.builtin(name)
    X = entry.spec.domain.sample(8, seed=4)
    b = chart.curvature_bundle(entry.spec, X)
    np.testing.assert_allclose(b.S, 2 / r1**2 + 2 / r2**2, rtol=1e-10)
    np.testing.assert_allclose(b.SStar, b.S, rtol=1e-10)
    ric = frame_of(entry, b.Ric, X)
    np.testing.assert_allclose(ric, np.broadcast_to(np.diag([1 / r1**2] * 2 + [1 / r2**2] * 2), ric.shape),
                               atol=1e-10)
    assert np.max(b.nablaJ_norm) <= 1e-10


def test_flat_torus_vanishing(flat4):
    X = flat4.spec.domain.sample(5)
    b = chart.curvature_bundle(flat4.spec, X)
    assert np.max(np.abs(b.Rm)) == 0.0
    assert np.max(np.abs(b.nablaJ)) == 0.0


def riemann_symmetries(Rm, g):
    low = np.einsum("pca,pcbij->pabij", g, Rm)  # R(d_i, d_j, d_b, d_a) lowered on ``a``
    return {
        "ij_antisym": np.max(np.abs(Rm + np.swapaxes(Rm, 3, 4))),
        "ab_antisym": np.max(np.abs(low + np.swapaxes(low, 1, 2))),
        "pair_sym": np.max(np.abs(low - np.einsum("pabij->pijab", low))),
        "bianchi": np.max(np.abs(np.einsum("pabij->pabij", Rm) + np.einsum("pajbi->pabij", Rm)
                                 + np.einsum("paijb->pabij", Rm))),
    }


@pytest.mark.parametrize("k", range(4))
def test_riemann_symmetries_on_perturbations(k):
    label, text, _ = zoo.perturbation_manifests(4, seed=7)[k]
    spec = zoo.parse_manifold(text)
    b = chart.curvature_bundle(spec, spec.domain.sample(4, seed=k))
    scale = 1 + np.max(np.abs(b.Rm))
    for name, value in riemann_symmetries(b.Rm, b.g).items():
        assert value <= 1e-6 * scale, (label, name, value)


def test_ricci_from_christoffel_matches_full_contraction():
    spec = zoo.parse_manifold(zoo.perturbation_manifests(1, seed=3)[0][1])
    jet = chart.make_jet(spec, spec.domain.sample(5, seed=1))
    Ric, S = chart.ricci(chart.riemann(jet), ginv=jet.ginv)
    Ric2, S2 = chart.ricci_from_christoffel(jet.Gamma, jet.dGamma, jet.ginv)
    np.testing.assert_allclose(Ric2, Ric, atol=1e-12)
    np.testing.assert_allclose(S2, S, atol=1e-12)


def test_star_ricci_three_routes(kt, kt_points):
    b = chart.curvature_bundle(kt.spec, kt_points)
    np.testing.assert_allclose(chart.star_ricci_bianchi(b.Rm, b.J, b.ginv), b.RicStar, atol=1e-12)
    np.testing.assert_allclose(chart.star_ricci_rotated(b.Rm, b.J, b.ginv), b.RicStar, atol=1e-12)


@pytest.mark.parametrize("name", ["kodaira-thurston", "product-spheres", "flat-torus-6"])
def test_volume_form_is_Omega_power(name):
    entry = zoo.builtin(name)
    b = chart.curvature_bundle(entry.spec, entry.spec.domain.sample(4))
    assert np.max(chart.volume_form_residual(b)) <= 1e-12


def test_d_omega(kt):
    broken = zoo.builtin("kodaira-thurston-broken").spec
    X = kt.spec.domain.sample(4)
    assert np.max(np.abs(chart.exterior_d_omega(chart.make_jet(kt.spec, X, 1)))) <= 1e-14
    assert np.max(np.abs(chart.exterior_d_omega(chart.make_jet(broken, X, 1)))) > 0.1


def test_divergence_of_gradient_on_flat_torus():
    spec = zoo.builtin("flat-torus-2").spec

    def grad(X):
        V = np.zeros_like(X)
        V[:, 0] = 2 * np.pi * np.cos(2 * np.pi * X[:, 0])
        return V

    # div grad sin(2 pi x) = -4 pi^2 sin(2 pi x): zero at x = 0, extremal at x = 1/4
    X = np.array([[0.25, 0.3], [0.0, 0.1], [0.75, 0.9]])
    got = chart.divergence(spec, grad, X)
    np.testing.assert_allclose(got, [-4 * np.pi**2, 0.0, 4 * np.pi**2], atol=1e-8)


def test_bochner_laplacian_J_on_kt(kt, kt_points):
    b = chart.curvature_bundle(kt.spec, kt_points)
    # differentiating J^2 = -1 twice gives <nabla* nabla J, J> = |nabla J|^2
    pair = endo_inner(b.bochnerJ, b.J, b.g, b.ginv)
    np.testing.assert_allclose(pair, b.nablaJ_sq, atol=1e-12)


def test_sphere_chart_domain():
    spec = zoo.builtin("product-spheres").spec
    with pytest.raises(ChartDomainError):
        chart.make_jet(spec, [[20.0, 0.0, 0.0, 0.0]])


def test_jet_errors(kt):
    with pytest.raises(ShapeError):
        chart.make_jet(kt.spec, [[0.1, 0.2]])
    with pytest.raises(ValueError):
        chart.make_jet(kt.spec, [[0.1] * 4], order=3)
    with pytest.raises(ValueError):
        chart.make_jet(kt.spec, [[0.1] * 4], fd=FDConfig(step=1e-12, use_analytic=False))
    with pytest.raises(ValueError):
        chart.make_jet(kt.spec, [[0.1] * 4], fd=FDConfig(step=0.13, use_analytic=False))


def test_domain_grid_and_sample():
    d = chart.Domain((0.0, 1.0), (2.0, 2.0))
    G = d.grid(4)
    assert G.shape == (16, 2)
    np.testing.assert_allclose(G[1], [0.0, 1.25])
    S = d.sample(50, seed=1)
    assert np.all((S >= [0, 1]) & (S < [2, 2]))
    np.testing.assert_array_equal(S, d.sample(50, seed=1))
    with pytest.raises(ValueError):
        chart.Domain((0.0,), (0.0,))


def test_batch_independence(kt):
    X = kt.spec.domain.sample(7, seed=9)
    full = chart.curvature_bundle(kt.spec, X, PURE_FD)
    one = chart.curvature_bundle(kt.spec, X[3:4], PURE_FD)
    np.testing.assert_array_equal(full.Ric[3], one.Ric[0])
