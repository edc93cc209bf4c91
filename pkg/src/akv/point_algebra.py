"""Linear algebra on a single tangent space, in coordinate components.

Conventions used throughout the package:

* a metric ``g[..., a, b]`` holds ``g_ab``; its inverse ``ginv`` holds ``g^ab``;
* an endomorphism ``A[..., a, b]`` holds ``A^a_b`` so that ``(A X)^a = A^a_b X^b``;
* a 2-form ``xi[..., a, b]`` holds ``xi(d_a, d_b)``.

Every function broadcasts over arbitrary leading (batch) dimensions.
Nothing here assumes an orthonormal frame.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StructureError, ValidationError

#: thresholds used when accepting a metric
MIN_EIGENVALUE = 1e-10
MIN_DETERMINANT = 1e-10


def _check_square(*arrays):
    n = None
    for a in arrays:
        if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
            raise ShapeError(f"expected square trailing dimensions, got {a.shape}")
        if n is None:
            n = a.shape[-1]
        elif a.shape[-1] != n:
            raise ShapeError(f"dimension mismatch: {n} vs {a.shape[-1]}")
    return n


def _certainly_positive(sym):
    """Cheap sufficient test: Cholesky succeeds and ``det / tr^(n-1)`` bounds the
    smallest eigenvalue above ``MIN_EIGENVALUE``."""
    n = sym.shape[-1]
    try:
        L = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        return False
    det = np.prod(np.diagonal(L, axis1=-2, axis2=-1), axis=-1) ** 2
    tr = np.trace(sym, axis1=-2, axis2=-1)
    return bool(np.all(det > MIN_DETERMINANT) and np.all(det > MIN_EIGENVALUE * tr ** (n - 1)))


def check_metric(g, where=None):
    """Raise unless every ``g`` in the batch is symmetric positive definite."""
    g = np.asarray(g, dtype=float)
    _check_square(g)
    scale = 1.0 + np.max(np.abs(g))
    if np.max(np.abs(g - np.swapaxes(g, -1, -2))) > 1e-12 * scale:
        raise ValidationError("metric components are not symmetric")
    sym = 0.5 * (g + np.swapaxes(g, -1, -2))
    if _certainly_positive(sym):
        return sym
    eig = np.linalg.eigvalsh(sym)
    det = np.prod(eig, axis=-1)
    bad = (eig[..., 0] <= MIN_EIGENVALUE) | (det <= MIN_DETERMINANT)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        point = None
        if where is not None:
            point = np.asarray(where)[tuple(idx)].tolist() if np.ndim(where) > 1 else list(where)
        raise StructureError(
            "metric is not positive definite",
            residual="metric_positive_definite",
            point=point,
            value=float(np.atleast_1d(eig[..., 0])[tuple(idx)]),
        )
    return sym


@dataclass(frozen=True)
class Metric:
    components: np.ndarray
    inverse: np.ndarray = field(repr=False)

    @classmethod
    def from_components(cls, g):
        g = check_metric(g)
        return cls(g, np.linalg.inv(g))

    @property
    def dim(self):
        return self.components.shape[-1]


def inner(X, Y, g):
    """g(X, Y) for vectors with components on the last axis."""
    return np.einsum("...a,...ab,...b->...", X, g, Y)


def vector_norm(X, g):
    return np.sqrt(np.maximum(inner(X, X, g), 0.0))


def adjoint(A, g, ginv=None):
    """The g-adjoint ``A*`` with ``g(A* X, Y) = g(X, A Y)``."""
    _check_square(A, g)
    if ginv is None:
        ginv = np.linalg.inv(g)
    return np.einsum("...ac,...dc,...db->...ab", ginv, A, g)


def endo_inner(A, B, g, ginv=None):
    """<A, B> = tr(A o B*)."""
    _check_square(A, B, g)
    if ginv is None:
        ginv = np.linalg.inv(g)
    return np.einsum("...ba,...ac,...dc,...db->...", A, ginv, B, g)


def endo_norm_sq(A, g, ginv=None):
    return endo_inner(A, A, g, ginv)


def endo_norm(A, g, ginv=None):
    return np.sqrt(np.maximum(endo_norm_sq(A, g, ginv), 0.0))


def _check_antisymmetric(xi, name):
    scale = 1.0 + np.max(np.abs(xi)) if xi.size else 1.0
    if xi.size and np.max(np.abs(xi + np.swapaxes(xi, -1, -2))) > 1e-10 * scale:
        raise ValidationError(f"{name} is not antisymmetric")


def form_inner(xi, eta, ginv, check=True):
    """<xi, eta> = 1/2 xi_kl eta^kl for 2-forms, indices raised with ``ginv``."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check_square(xi, eta, ginv)
    if check:
        _check_antisymmetric(xi, "xi")
        _check_antisymmetric(eta, "eta")
    return 0.5 * np.einsum("...kl,...pq,...kp,...lq->...", xi, eta, ginv, ginv)


def form_norm_sq(xi, ginv, check=True):
    return form_inner(xi, xi, ginv, check=check)


def bracket(A, B, kind="commutator"):
    """Commutator ``AB - BA`` or anticommutator ``AB + BA``."""
    _check_square(A, B)
    AB = A @ B
    BA = B @ A
    if kind == "commutator":
        return AB - BA
    if kind == "anticommutator":
        return AB + BA
    raise ValueError(f"unknown bracket kind {kind!r}")


def commutator(A, B):
    return A @ B - B @ A


def anticommutator(A, B):
    return A @ B + B @ A


def hermitian_split(A, J):
    """Split ``A`` into the part commuting with ``J`` and the part anticommuting."""
    _check_square(A, J)
    JAJ = J @ A @ J
    return 0.5 * (A - JAJ), 0.5 * (A + JAJ)


def to_form(A, g):
    """The bilinear form ``(X, Y) -> g(A X, Y)``; a 2-form when A is skew."""
    return np.einsum("...ca,...cb->...ab", A, g)


def from_lowered(B, ginv):
    """Endomorphism ``A`` with ``g(A X, Y) = B(X, Y)``."""
    return np.einsum("...ac,...bc->...ab", ginv, B)


def is_symmetric(A, g, tol=1e-10):
    return bool(np.all(endo_norm(A - adjoint(A, g), g) <= tol))


def is_skew(A, g, tol=1e-10):
    return bool(np.all(endo_norm(A + adjoint(A, g), g) <= tol))


def commutes_with(A, J, tol=1e-10):
    return bool(np.max(np.abs(commutator(A, J))) <= tol)


def sym_eigvals(A, g):
    """Ascending eigenvalues of a g-self-adjoint endomorphism."""
    low = to_form(A, g)
    low = 0.5 * (low + np.swapaxes(low, -1, -2))
    L = np.linalg.cholesky(0.5 * (g + np.swapaxes(g, -1, -2)))
    Linv = np.linalg.inv(L)
    M = Linv @ low @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


@dataclass
class StructureDiagnostics:
    residuals: dict
    tol: float

    @property
    def failed(self):
        return [k for k, v in self.residuals.items() if not v <= self.tol]

    @property
    def passed(self):
        return not self.failed


def structure_residuals(g, J):
    """Per-point residuals of J^2 = -1, J-invariance of g and skewness of J."""
    J2 = J @ J
    eye = np.eye(J.shape[-1])
    Jt = np.swapaxes(J, -1, -2)
    return {
        "J2_plus_id": np.linalg.norm(J2 + eye, axis=(-2, -1)),
        "g_J_invariant": np.linalg.norm(Jt @ g @ J - g, axis=(-2, -1)),
        "J_skew": np.linalg.norm(Jt @ g + g @ J, axis=(-2, -1)),
    }


def validate_structure(g, J, tol=1e-10):
    """Check the almost Hermitian axioms; returns worst residual per axiom.

    A non-symmetric or indefinite ``g`` raises instead of being reported.
    """
    g = np.asarray(g, dtype=float)
    J = np.asarray(J, dtype=float)
    _check_square(g, J)
    check_metric(g)
    res = structure_residuals(g, J)
    return StructureDiagnostics({k: float(np.max(v)) for k, v in res.items()}, tol)
