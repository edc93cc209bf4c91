import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from akv import point_algebra as pa
from akv.errors import ShapeError, StructureError, ValidationError

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def spd(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def compatible_J(g):
    """``E J0 E^-1`` with E a g-orthonormal frame."""
    n = len(g)
    E = np.linalg.inv(np.linalg.cholesky(g)).T
    J0 = np.zeros((n, n))
    for b in range(0, n, 2):
        J0[b + 1, b], J0[b, b + 1] = 1.0, -1.0
    return E @ J0 @ np.linalg.inv(E)


@pytest.mark.parametrize("n", [2, 4, 6])
@given(seed=st.integers(0, 10_000))
def test_compatible_J_passes_axioms(n, seed):
    g = spd(n, seed)
    diag = pa.validate_structure(g, compatible_J(g))
    assert diag.passed, diag.residuals


@given(seed=st.integers(0, 10_000), M=arrays(float, (4, 4), elements=finite),
       N=arrays(float, (4, 4), elements=finite))
def test_adjoint_defining_relation(seed, M, N):
    g = spd(4, seed)
    X, Y = M[0], N[0]
    A = M
    lhs = pa.inner(pa.adjoint(A, g) @ X, Y, g)
    rhs = pa.inner(X, A @ Y, g)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(rhs)))


@given(seed=st.integers(0, 10_000), A=arrays(float, (4, 4), elements=finite),
       B=arrays(float, (4, 4), elements=finite))
def test_endo_inner_symmetric_and_norm_nonnegative(seed, A, B):
    g = spd(4, seed)
    assert pa.endo_inner(A, B, g) == pytest.approx(pa.endo_inner(B, A, g), abs=1e-9)
    assert pa.endo_norm_sq(A, g) >= -1e-12


def test_endo_inner_euclidean_is_frobenius():
    A = np.arange(16.0).reshape(4, 4)
    B = np.sin(A)
    assert pa.endo_inner(A, B, np.eye(4)) == pytest.approx(np.sum(A * B))


def test_form_inner_is_half_contraction():
    xi = np.zeros((4, 4))
    xi[0, 1], xi[1, 0] = 1.0, -1.0
    # e^1 ^ e^2 has unit norm under 1/2 xi_kl xi^kl
    assert pa.form_norm_sq(xi, np.eye(4)) == pytest.approx(1.0)
    assert pa.form_norm_sq(2 * xi, np.eye(4) / 4) == pytest.approx(1.0 / 4)


def test_form_inner_rejects_non_antisymmetric():
    with pytest.raises(ValidationError):
        pa.form_inner(np.eye(4), np.eye(4), np.eye(4))


@given(seed=st.integers(0, 10_000), A=arrays(float, (4, 4), elements=finite))
def test_hermitian_split_properties(seed, A):
    g = spd(4, seed)
    J = compatible_J(g)
    P, M = pa.hermitian_split(A, J)
    np.testing.assert_allclose(P + M, A, atol=1e-12)
    assert np.max(np.abs(pa.commutator(P, J))) <= 1e-8 * (1 + np.abs(A).max())
    assert np.max(np.abs(pa.anticommutator(M, J))) <= 1e-8 * (1 + np.abs(A).max())
    # the two parts are orthogonal for a compatible J
    assert abs(pa.endo_inner(P, M, g)) <= 1e-8 * (1 + pa.endo_norm_sq(A, g))


def test_bracket_kinds():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = A.T
    np.testing.assert_array_equal(pa.bracket(A, B), A @ B - B @ A)
    np.testing.assert_array_equal(pa.bracket(A, B, "anticommutator"), A @ B + B @ A)
    with pytest.raises(ValueError):
        pa.bracket(A, B, "jordan")


def test_symmetric_and_skew_predicates():
    g = spd(4, 3)
    J = compatible_J(g)
    assert pa.is_skew(J, g)
    assert pa.is_symmetric(J @ J, g)
    assert pa.commutes_with(J @ J, J)


def test_sym_eigvals_match_generalised_problem():
    g = spd(4, 5)
    S = spd(4, 6)
    A = np.linalg.solve(g, S)  # g-self-adjoint
    ours = pa.sym_eigvals(A, g)
    ref = np.sort(np.linalg.eigvals(A).real)
    np.testing.assert_allclose(ours, ref, rtol=1e-10)


@pytest.mark.parametrize("g, residual", [
    (np.diag([1.0, 1.0, 0.0, 1.0]), "metric_positive_definite"),
    (np.diag([1.0, -1.0, 1.0, 1.0]), "metric_positive_definite"),
])
def test_degenerate_metric_rejected(g, residual):
    with pytest.raises(StructureError) as info:
        pa.check_metric(g)
    assert info.value.residual == residual


def test_asymmetric_metric_rejected():
    g = np.eye(4)
    g[0, 1] = 0.5
    with pytest.raises(ValidationError):
        pa.check_metric(g)


def test_check_metric_reports_point():
    g = np.stack([np.eye(2), np.diag([1.0, -1.0])])
    with pytest.raises(StructureError) as info:
        pa.check_metric(g, where=np.array([[0.0, 0.0], [0.5, 0.25]]))
    assert info.value.point == [0.5, 0.25]


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        pa.endo_inner(np.eye(4), np.eye(2), np.eye(4))
    with pytest.raises(ShapeError):
        pa.check_metric(np.ones((3, 2)))


def test_J_squared_violation_is_reported():
    J = np.array([[0.0, -1.0], [2.0, 0.0]])
    diag = pa.validate_structure(np.eye(2), J)
    assert "J2_plus_id" in diag.failed


@pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
def test_batched_broadcasting(scale):
    g = np.stack([spd(4, s) * scale for s in range(5)])
    A = np.random.default_rng(0).normal(size=(5, 4, 4))
    batched = pa.endo_norm_sq(A, g)
    single = [pa.endo_norm_sq(A[i], g[i]) for i in range(5)]
    np.testing.assert_allclose(batched, single, rtol=1e-12)
