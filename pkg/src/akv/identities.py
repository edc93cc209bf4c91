"""Registry of pointwise curvature identities as executable residual checks.

Each check maps an evaluation context (curvature bundle, nested Ricci data,
random test vectors) to one non-negative residual per point.  Residual norms:
endomorphisms use ``|A| = sqrt(tr(A A*))``, vectors the g-norm, scalars the
absolute value.  Vector-quantified identities take the maximum over
``DRAWS`` random g-unit vectors per point.
"""
from dataclasses import dataclass, field
from functools import cached_property
import math
import zlib

import numpy as np

from . import chart
from .chart import CurvatureBundle
from .errors import AKVError
from .fd import FDConfig
from .point_algebra import adjoint, endo_inner, endo_norm, form_inner, sym_eigvals

CLASSES = ("algebraic", "first_order", "second_order", "ricci_second_order", "dim4_only")

#: default tolerances when jets are exact
ANALYTIC_TOLERANCES = {
    "algebraic": 1e-10, "first_order": 1e-10, "second_order": 1e-10,
    "dim4_only": 1e-10, "ricci_second_order": 1e-4,
}
#: default tolerances when jets come from finite differences
FD_TOLERANCES = {
    "algebraic": 1e-10, "first_order": 1e-6, "second_order": 1e-6,
    "dim4_only": 1e-6, "ricci_second_order": 1e-4,
}

DRAWS = 8
#: residuals below this are treated as exact when estimating convergence orders
ROUNDING_FLOOR = 1e-12

#: equation numbers verified elsewhere or not checkable pointwise
QUADRATURE_OWNED = (72, 73, 74)
THEOREM_OWNED = (80, 81, 82, 83, 84, 86, 87, 88, 89, 90)
OUT_OF_SCOPE = (60, 68, 69)


@dataclass(frozen=True)
class IdentityCheck:
    id: str
    klass: str
    evaluator: object = field(repr=False)
    description: str = ""

    @property
    def needs_ricci_jet(self):
        return self.klass == "ricci_second_order" or self.id == "eq64"

    @property
    def number(self):
        return int("".join(c for c in self.id[2:] if c.isdigit()))


@dataclass(frozen=True)
class IdentityOutcome:
    id: str
    point: tuple
    residual: float
    tolerance: float
    passed: bool
    convergence_order: float = None

    def to_dict(self):
        return {
            "id": self.id, "point": list(self.point), "residual": self.residual,
            "tolerance": self.tolerance, "pass": self.passed,
            "convergence_order": self.convergence_order,
        }


# --------------------------------------------------------------------------- context

class EvalContext:
    """Lazily computed data shared by all checks at a batch of points."""

    def __init__(self, spec, X, fd=FDConfig(), seed=0, bundle=None, draws=DRAWS):
        self.spec = spec
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.fd = fd
        self.seed = seed
        self.draws = draws
        if bundle is not None:
            self.__dict__["bundle"] = bundle

    @cached_property
    def bundle(self) -> CurvatureBundle:
        return chart.curvature_bundle(self.spec, self.X, self.fd)

    @cached_property
    def ricci(self):
        return chart.ricci_jet(self.spec, self.X, self.fd, bundle=self.bundle)

    @cached_property
    def jet(self):
        return self.bundle.jet

    @property
    def g(self):
        return self.bundle.g

    @property
    def n(self):
        return self.spec.dim

    def vectors(self, key, count):
        """``count`` arrays ``[P, DRAWS, n]`` of g-unit vectors, seeded by ``key``."""
        ss = np.random.SeedSequence([self.seed, zlib.crc32(key.encode())])
        rng = np.random.default_rng(ss)
        P = len(self.X)
        out = []
        for _ in range(count):
            V = rng.standard_normal((P, self.draws, self.n))
            V = V / vnorm(V, self.g)[..., None]
            out.append(V)
        return out

    def endos(self, key):
        ss = np.random.SeedSequence([self.seed, zlib.crc32(key.encode()), 1])
        rng = np.random.default_rng(ss)
        return rng.standard_normal((len(self.X), self.draws, self.n, self.n))


# --------------------------------------------------------------------------- helpers

def vnorm(V, g):
    gg = g if V.ndim == g.ndim - 1 else g[:, None]
    return np.sqrt(np.maximum(np.einsum("...a,...ab,...b->...", V, gg, V), 0.0))


def gdot(X, Y, g):
    gg = g if X.ndim == g.ndim - 1 else g[:, None]
    return np.einsum("...a,...ab,...b->...", X, gg, Y)


def enorm(A, b):
    """Endomorphism norm with the metric broadcast over any draw axis."""
    g, ginv = b.g, b.ginv
    while g.ndim < A.ndim:
        g, ginv = g[:, None], ginv[:, None]
    return endo_norm(A, g, ginv)


def einner(A, B, b):
    return endo_inner(A, B, b.g, b.ginv)


def fnorm_sq(xi, b):
    return form_inner(xi, xi, b.ginv, check=False)


def finner(xi, eta, b):
    return form_inner(xi, eta, b.ginv, check=False)


def worst(r):
    """Max over the draw axis (and any trailing axes) per point."""
    r = np.abs(np.asarray(r))
    return r.reshape(r.shape[0], -1).max(axis=1) if r.ndim > 1 else r


def mv(A, X):
    """Apply endomorphisms to vectors, broadcasting a per-point ``A`` over draws."""
    if A.ndim == X.ndim:
        return np.einsum("pab,pdb->pda", A, X)
    return np.einsum("pdab,pdb->pda", A, X)


def mm(A, B):
    if A.ndim < B.ndim:
        A = A[:, None]
    if B.ndim < A.ndim:
        B = B[:, None]
    return A @ B


def nabla_dir(b, X):
    """``nabla_X J`` for draws ``X[P, D, n]``."""
    return np.einsum("pdi,piab->pdab", X, b.nablaJ)


def nabla2_dir(b, X, Y):
    return np.einsum("pdi,pdj,pijab->pdab", X, Y, b.nabla2J)


def curv_dir(T, X, Y):
    """``T(X, Y)`` for endomorphism-valued 2-tensors ``T[P, a, b, i, j]``."""
    return np.einsum("pabij,pdi,pdj->pdab", T, X, Y)


def varphi_dir(b, X, Y):
    return np.einsum("paij,pdi,pdj->pda", b.varphi, X, Y)


def comm(A, B):
    return mm(A, B) - mm(B, A)


def acomm(A, B):
    return mm(A, B) + mm(B, A)


def form_dir(w, X, Y):
    return np.einsum("pab,pda,pdb->pd", w, X, Y)


def coframe_endo_sum(b, T):
    """``(T_{X_k}) X^k`` for a one-form of endomorphisms ``T[P, k, a, l]``."""
    return np.einsum("pkl,pkal->pa", b.ginv, T)


def omega_pairing(b, A):
    """``<nabla_{A(X_k)} Omega, nabla_{X^k} Omega>`` for an endomorphism field ``A``."""
    nO = b.nablaOmega  # [p, m, a, b]
    return 0.5 * np.einsum(
        "pmk,pkl,pmab,plcd,pac,pbd->p", A, b.ginv, nO, nO, b.ginv, b.ginv, optimize=True
    )


def identity_like(b):
    return np.broadcast_to(np.eye(b.n), b.g.shape)


# --------------------------------------------------------------------------- registry

REGISTRY = {}


def register(tag, klass, description):
    if klass not in CLASSES:
        raise ValueError(f"unknown identity class {klass!r}")

    def deco(fn):
        if tag in REGISTRY:
            raise ValueError(f"duplicate identity {tag}")
        REGISTRY[tag] = IdentityCheck(tag, klass, fn, description)
        return fn

    return deco


# algebraic ---------------------------------------------------------------

@register("eq01", "algebraic", "J^2 = -1")
def _eq01(c):
    b = c.bundle
    return enorm(b.J @ b.J + identity_like(b), b)


@register("eq02", "algebraic", "g(JX, JY) = g(X, Y)")
def _eq02(c):
    b = c.bundle
    X, Y = c.vectors("eq02", 2)
    return worst(gdot(mv(b.J, X), mv(b.J, Y), b.g) - gdot(X, Y, b.g))


@register("eq07", "algebraic", "g(JX, Y) = -g(X, JY)")
def _eq07(c):
    b = c.bundle
    X, Y = c.vectors("eq07", 2)
    return worst(gdot(mv(b.J, X), Y, b.g) + gdot(X, mv(b.J, Y), b.g))


@register("eq08", "algebraic", "J* = -J")
def _eq08(c):
    b = c.bundle
    return enorm(adjoint(b.J, b.g, b.ginv) + b.J, b)


@register("eq13", "algebraic", "[{A, J}, J] = 0 and {[A, J], J} = 0 for any endomorphism A")
def _eq13(c):
    b = c.bundle
    A = c.endos("eq13")
    J = b.J[:, None]
    r1 = enorm(comm(acomm(A, J), J), b)
    r2 = enorm(acomm(comm(A, J), J), b)
    return worst(np.maximum(r1, r2))


# first order -------------------------------------------------------------

@register("eq03", "first_order", "dOmega = 0")
def _eq03(c):
    dO = chart.exterior_d_omega(c.jet)
    X, Y, Z = c.vectors("eq03", 3)
    return worst(np.einsum("pabc,pda,pdb,pdc->pd", dO, X, Y, Z))


@register("eq04", "first_order", "delta Omega = 0")
def _eq04(c):
    # coordinate codifferential (delta Omega)^b = -(1/sqrt g) d_a(sqrt g Omega^ab),
    # independent of the Christoffel route
    jet, b = c.jet, c.bundle
    ginv = b.ginv
    Om = b.Omega
    dOm = np.einsum("pkca,pcb->pkab", jet.dJ, jet.g) + np.einsum("pca,pkcb->pkab", jet.J, jet.dg)
    dginv = -np.einsum("pac,pkcd,pdb->pkab", ginv, jet.dg, ginv)
    Om_up = np.einsum("pac,pbd,pcd->pab", ginv, ginv, Om)
    div_up = (
        np.einsum("paac,pbd,pcd->pb", dginv, ginv, Om)
        + np.einsum("pac,pabd,pcd->pb", ginv, dginv, Om)
        + np.einsum("pac,pbd,pacd->pb", ginv, ginv, dOm)
    )
    half_dlog = 0.5 * np.einsum("pcd,pacd->pa", ginv, jet.dg)
    delta = -(div_up + np.einsum("pa,pab->pb", half_dlog, Om_up))
    return vnorm(delta, b.g)


@register("eq05", "first_order", "nabla_{JX} J = nabla_X J o J")
def _eq05(c):
    b = c.bundle
    (X,) = c.vectors("eq05", 1)
    return worst(enorm(nabla_dir(b, mv(b.J, X)) - mm(nabla_dir(b, X), b.J), b))


@register("eq06", "first_order",
          "g((nabla_X J)Y, Z) + g((nabla_Y J)Z, X) + g((nabla_Z J)X, Y) = 0")
def _eq06(c):
    b = c.bundle
    X, Y, Z = c.vectors("eq06", 3)
    t = (gdot(mv(nabla_dir(b, X), Y), Z, b.g) + gdot(mv(nabla_dir(b, Y), Z), X, b.g)
         + gdot(mv(nabla_dir(b, Z), X), Y, b.g))
    return worst(t)


@register("eq09", "first_order", "nabla_X J o J + J o nabla_X J = 0")
def _eq09(c):
    b = c.bundle
    (X,) = c.vectors("eq09", 1)
    return worst(enorm(acomm(nabla_dir(b, X), b.J), b))


@register("eq15", "first_order", "(nabla_{X_k} J) X^k = 0")
def _eq15(c):
    b = c.bundle
    return vnorm(coframe_endo_sum(b, b.nablaJ), b.g)


@register("eq36", "first_order", "varphi(JX, JY) = -varphi(X, Y)")
def _eq36(c):
    b = c.bundle
    X, Y = c.vectors("eq36", 2)
    r = varphi_dir(b, mv(b.J, X), mv(b.J, Y)) + varphi_dir(b, X, Y)
    return worst(vnorm(r, b.g))


@register("eq37", "first_order", "varphi(JX, Y) = varphi(X, JY) = -J varphi(X, Y)")
def _eq37(c):
    b = c.bundle
    X, Y = c.vectors("eq37", 2)
    a = varphi_dir(b, mv(b.J, X), Y)
    r1 = vnorm(a - varphi_dir(b, X, mv(b.J, Y)), b.g)
    r2 = vnorm(a + mv(b.J, varphi_dir(b, X, Y)), b.g)
    return worst(np.maximum(r1, r2))


@register("eq38", "first_order",
          "nabla_{varphi(X, Y)} J = -g((nabla_{X_k} J) X, Y) nabla_{X^k} J")
def _eq38(c):
    b = c.bundle
    X, Y = c.vectors("eq38", 2)
    lhs = nabla_dir(b, varphi_dir(b, X, Y))
    coef = np.einsum("pkab,pda,pdb->pdk", np.einsum("pkca,pcb->pkab", b.nablaJ, b.g), X, Y)
    rhs = -np.einsum("pdk,pkl,plab->pdab", coef, b.ginv, b.nablaJ)
    return worst(enorm(lhs - rhs, b))


@register("eq52", "first_order", "phi(X, Y) = phi(JX, JY) = -phi(Y, X)")
def _eq52(c):
    b = c.bundle
    X, Y = c.vectors("eq52", 2)
    p = form_dir(b.phi, X, Y)
    r1 = p - form_dir(b.phi, mv(b.J, X), mv(b.J, Y))
    r2 = p + form_dir(b.phi, Y, X)
    return worst(np.maximum(np.abs(r1), np.abs(r2)))


@register("eq53", "first_order", "phi(X, JY) = <nabla_X Omega, nabla_Y Omega>")
def _eq53(c):
    b = c.bundle
    X, Y = c.vectors("eq53", 2)
    lhs = form_dir(b.phi, X, mv(b.J, Y))
    nOX = np.einsum("pdk,pkab->pdab", X, b.nablaOmega)
    nOY = np.einsum("pdk,pkab->pdab", Y, b.nablaOmega)
    rhs = form_inner(nOX, nOY, b.ginv[:, None], check=False)
    return worst(lhs - rhs)


@register("eq59", "first_order", "g((nabla_{X_k} J o nabla_X J) X^k, Y) = -phi(X, JY)")
def _eq59(c):
    b = c.bundle
    X, Y = c.vectors("eq59", 2)
    nX = nabla_dir(b, X)
    # (nabla_k J o nabla_X J) applied to X^k, summed over k
    comp = np.einsum("pkl,pkac,pdcl->pda", b.ginv, b.nablaJ, nX)
    return worst(gdot(comp, Y, b.g) + form_dir(b.phi, X, mv(b.J, Y)))


# second order ------------------------------------------------------------

@register("eq10", "second_order",
          "R(X, Y) = nabla^2_{X,Y} - nabla^2_{Y,X}, applied to J: [R(X, Y), J]")
def _eq10(c):
    b = c.bundle
    X, Y = c.vectors("eq10", 2)
    lhs = nabla2_dir(b, X, Y) - nabla2_dir(b, Y, X)
    return worst(enorm(lhs - comm(curv_dir(b.Rm, X, Y), b.J), b))


@register("eq11", "second_order",
          "nabla^2_{X,JY} J = nabla^2_{X,Y} J o J + nabla_Y J o nabla_X J - nabla_{(nabla_X J)Y} J")
def _eq11(c):
    b = c.bundle
    X, Y = c.vectors("eq11", 2)
    nX, nY = nabla_dir(b, X), nabla_dir(b, Y)
    rhs = mm(nabla2_dir(b, X, Y), b.J) + nY @ nX - nabla_dir(b, mv(nX, Y))
    return worst(enorm(nabla2_dir(b, X, mv(b.J, Y)) - rhs, b))


@register("eq12", "second_order",
          "nabla^2_{X,JY} J = -J o nabla^2_{X,Y} J - nabla_X J o nabla_Y J - nabla_{(nabla_X J)Y} J")
def _eq12(c):
    b = c.bundle
    X, Y = c.vectors("eq12", 2)
    nX, nY = nabla_dir(b, X), nabla_dir(b, Y)
    rhs = -mm(b.J, nabla2_dir(b, X, Y)) - nX @ nY - nabla_dir(b, mv(nX, Y))
    return worst(enorm(nabla2_dir(b, X, mv(b.J, Y)) - rhs, b))


@register("eq14", "second_order", "{nabla^2_{X,Y} J, J} = -{nabla_X J, nabla_Y J}")
def _eq14(c):
    b = c.bundle
    X, Y = c.vectors("eq14", 2)
    r = acomm(nabla2_dir(b, X, Y), b.J) + acomm(nabla_dir(b, X), nabla_dir(b, Y))
    return worst(enorm(r, b))


@register("eq16", "second_order", "(nabla^2_{X, X_k} J) X^k = 0")
def _eq16(c):
    b = c.bundle
    (X,) = c.vectors("eq16", 1)
    v = np.einsum("pdi,pkl,pikal->pda", X, b.ginv, b.nabla2J)
    return worst(vnorm(v, b.g))


@register("eq17", "second_order", "Ric(X) = R(X, X_k) X^k agrees with the trace form")
def _eq17(c):
    b = c.bundle
    alt = np.einsum("pac,pcb->pab", b.ginv, chart.ricci_trace_form(b.Rm))
    return enorm(b.Ric - alt, b)


@register("eq18", "second_order", "Ric*(X) = R(JX, JX_k) X^k in the rotated frame J X_k")
def _eq18(c):
    b = c.bundle
    return enorm(b.RicStar - chart.star_ricci_rotated(b.Rm, b.J, b.ginv), b)


def _split_check(A, Aplus, Aminus, J, b):
    r1 = enorm(Aplus - (-0.5 * J @ (A @ J + J @ A)), b)
    r2 = enorm(Aminus - 0.5 * J @ (A @ J - J @ A), b)
    return r1, r2


@register("eq19", "second_order", "Ric+ = 1/2(Ric - J Ric J) = -1/2 J o {Ric, J}")
def _eq19(c):
    b = c.bundle
    return _split_check(b.Ric, b.RicPlus, b.RicMinus, b.J, b)[0]


@register("eq20", "second_order", "Ric- = 1/2(Ric + J Ric J) = 1/2 J o [Ric, J]")
def _eq20(c):
    b = c.bundle
    return _split_check(b.Ric, b.RicPlus, b.RicMinus, b.J, b)[1]


@register("eq21", "second_order", "Ric*+ = 1/2(Ric* - J Ric* J) = -1/2 J o {Ric*, J}")
def _eq21(c):
    b = c.bundle
    return _split_check(b.RicStar, b.RicStarPlus, b.RicStarMinus, b.J, b)[0]


@register("eq22", "second_order", "Ric*- = 1/2(Ric* + J Ric* J) = 1/2 J o [Ric*, J]")
def _eq22(c):
    b = c.bundle
    return _split_check(b.RicStar, b.RicStarPlus, b.RicStarMinus, b.J, b)[1]


@register("eq23", "second_order", "Ric = Ric+ + Ric-, Ric* = Ric*+ + Ric*-")
def _eq23(c):
    b = c.bundle
    return np.maximum(enorm(b.Ric - b.RicPlus - b.RicMinus, b),
                      enorm(b.RicStar - b.RicStarPlus - b.RicStarMinus, b))


@register("eq24", "second_order", "[Ric+, J] = {Ric-, J} = [Ric*+, J] = {Ric*-, J} = 0")
def _eq24(c):
    b = c.bundle
    J = b.J
    rs = [enorm(comm(b.RicPlus, J), b), enorm(acomm(b.RicMinus, J), b),
          enorm(comm(b.RicStarPlus, J), b), enorm(acomm(b.RicStarMinus, J), b)]
    return np.max(rs, axis=0)


@register("eq25", "second_order", "(Ric+-)* = Ric+-")
def _eq25(c):
    b = c.bundle
    return np.maximum(enorm(adjoint(b.RicPlus, b.g, b.ginv) - b.RicPlus, b),
                      enorm(adjoint(b.RicMinus, b.g, b.ginv) - b.RicMinus, b))


@register("eq26", "second_order", "Ric* = 1/2 R(X_k, J X^k) o J")
def _eq26(c):
    b = c.bundle
    return enorm(b.RicStar - chart.star_ricci_bianchi(b.Rm, b.J, b.ginv), b)


@register("eq27", "second_order", "(Ric*)* = -J o Ric* o J")
def _eq27(c):
    b = c.bundle
    return enorm(adjoint(b.RicStar, b.g, b.ginv) + b.J @ b.RicStar @ b.J, b)


@register("eq28", "second_order", "Ric*+ is symmetric and Ric*- is skew")
def _eq28(c):
    b = c.bundle
    return np.maximum(enorm(adjoint(b.RicStarPlus, b.g, b.ginv) - b.RicStarPlus, b),
                      enorm(adjoint(b.RicStarMinus, b.g, b.ginv) + b.RicStarMinus, b))


@register("eq29", "second_order", "rho(JX, JY) = rho(X, Y), rho*(JX, JY) = rho*(X, Y)")
def _eq29(c):
    b = c.bundle
    Jt = np.swapaxes(b.J, -1, -2)
    r1 = Jt @ b.rho @ b.J - b.rho
    r2 = Jt @ b.rho_star @ b.J - b.rho_star
    return np.sqrt(np.maximum(np.maximum(fnorm_sq(r1, b), fnorm_sq(r2, b)), 0.0))


@register("eq30", "second_order", "R~(X, Y)* = -R~(X, Y) = R~(Y, X)")
def _eq30(c):
    b = c.bundle
    X, Y = c.vectors("eq30", 2)
    T = curv_dir(b.tildeR, X, Y)
    g, ginv = b.g[:, None], b.ginv[:, None]
    r1 = enorm(adjoint(T, g, ginv) + T, b)
    r2 = enorm(T + curv_dir(b.tildeR, Y, X), b)
    return worst(np.maximum(r1, r2))


@register("eq31", "second_order", "{R~(X, Y), J} = 0")
def _eq31(c):
    b = c.bundle
    X, Y = c.vectors("eq31", 2)
    return worst(enorm(acomm(curv_dir(b.tildeR, X, Y), b.J), b))


@register("eq32", "second_order", "R~(JX, JY) = -R~(X, Y)")
def _eq32(c):
    b = c.bundle
    X, Y = c.vectors("eq32", 2)
    r = curv_dir(b.tildeR, mv(b.J, X), mv(b.J, Y)) + curv_dir(b.tildeR, X, Y)
    return worst(enorm(r, b))


@register("eq33", "second_order", "R~ = R~+ + R~-")
def _eq33(c):
    b = c.bundle
    X, Y = c.vectors("eq33", 2)
    r = curv_dir(b.tildeR - b.tildeRplus - b.tildeRminus, X, Y)
    return worst(enorm(r, b))


@register("eq34", "second_order", "R~+-(JX, Y) o J = +-R~+-(X, Y)")
def _eq34(c):
    b = c.bundle
    X, Y = c.vectors("eq34", 2)
    JX = mv(b.J, X)
    rp = mm(curv_dir(b.tildeRplus, JX, Y), b.J) - curv_dir(b.tildeRplus, X, Y)
    rm = mm(curv_dir(b.tildeRminus, JX, Y), b.J) + curv_dir(b.tildeRminus, X, Y)
    return worst(np.maximum(enorm(rp, b), enorm(rm, b)))


@register("eq35", "second_order", "R~+(X, Y) = 1/4 nabla_{varphi(X, Y)} J")
def _eq35(c):
    b = c.bundle
    X, Y = c.vectors("eq35", 2)
    r = curv_dir(b.tildeRplus, X, Y) - 0.25 * nabla_dir(b, varphi_dir(b, X, Y))
    return worst(enorm(r, b))


@register("eq39", "second_order", "R~+ = -1/4 nabla_{X_k} Omega (x) nabla_{X^k} J")
def _eq39(c):
    b = c.bundle
    X, Y = c.vectors("eq39", 2)
    coef = np.einsum("pkab,pda,pdb->pdk", b.nablaOmega, X, Y)
    rhs = -0.25 * np.einsum("pdk,pkl,plab->pdab", coef, b.ginv, b.nablaJ)
    return worst(enorm(curv_dir(b.tildeRplus, X, Y) - rhs, b))


@register("eq40", "second_order", "Ric~(X) = R~+(X, X_k) X^k")
def _eq40(c):
    b = c.bundle
    alt = np.einsum("pkl,palbk->pab", b.ginv, b.tildeRplus)
    return enorm(b.tildeRic - alt, b)


@register("eq41", "second_order", "Ric~ = -1/4 nabla_{X_k} J o nabla_{X^k} J")
def _eq41(c):
    b = c.bundle
    alt = -0.25 * np.einsum("pkl,pkac,plcb->pab", b.ginv, b.nablaJ, b.nablaJ)
    return enorm(b.tildeRic - alt, b)


@register("eq42", "second_order", "Ric~ is symmetric")
def _eq42(c):
    b = c.bundle
    return enorm(adjoint(b.tildeRic, b.g, b.ginv) - b.tildeRic, b)


@register("eq43", "second_order", "Ric~ >= 0")
def _eq43(c):
    b = c.bundle
    sym = 0.5 * (b.tildeRic + adjoint(b.tildeRic, b.g, b.ginv))
    return np.maximum(0.0, -sym_eigvals(sym, b.g)[..., 0])


@register("eq44", "second_order", "[Ric~, J] = 0")
def _eq44(c):
    b = c.bundle
    return enorm(comm(b.tildeRic, b.J), b)


@register("eq45", "second_order", "{nabla* nabla J, J} = -8 Ric~")
def _eq45(c):
    b = c.bundle
    return enorm(acomm(b.bochnerJ, b.J) + 8 * b.tildeRic, b)


@register("eq46", "second_order", "(nabla^2_{X_k, X} J) X^k = (J o Ric - Ric* o J) X")
def _eq46(c):
    b = c.bundle
    (X,) = c.vectors("eq46", 1)
    lhs = np.einsum("pdi,pkl,pkial->pda", X, b.ginv, b.nabla2J)
    rhs = mv(b.J @ b.Ric - b.RicStar @ b.J, X)
    return worst(vnorm(lhs - rhs, b.g))


@register("eq47", "second_order",
          "g((nabla^2_{V,X} J)Y, Z) + g((nabla^2_{V,Z} J)X, Y) + g((nabla^2_{V,Y} J)Z, X) = 0")
def _eq47(c):
    b = c.bundle
    V, X, Y, Z = c.vectors("eq47", 4)
    t = (gdot(mv(nabla2_dir(b, V, X), Y), Z, b.g) + gdot(mv(nabla2_dir(b, V, Z), X), Y, b.g)
         + gdot(mv(nabla2_dir(b, V, Y), Z), X, b.g))
    return worst(t)


@register("eq48", "second_order", "nabla* nabla J = 2(Ric* - Ric+) o J")
def _eq48(c):
    b = c.bundle
    return enorm(b.bochnerJ - 2 * (b.RicStar - b.RicPlus) @ b.J, b)


@register("eq49", "second_order", "Ric~ = 1/2(Ric*+ - Ric+)")
def _eq49(c):
    b = c.bundle
    return enorm(b.tildeRic - 0.5 * (b.RicStarPlus - b.RicPlus), b)


@register("eq50", "second_order",
          "(J o nabla^2_{X_k, X} J) X^k = (Ric*+ - Ric+) X - (Ric*- + Ric-) X")
def _eq50(c):
    b = c.bundle
    (X,) = c.vectors("eq50", 1)
    lhs = np.einsum("pac,pdi,pkl,pkicl->pda", b.J, X, b.ginv, b.nabla2J)
    rhs = mv(b.RicStarPlus - b.RicPlus - b.RicStarMinus - b.RicMinus, X)
    return worst(vnorm(lhs - rhs, b.g))


@register("eq51", "second_order", "S* - S = |nabla Omega|^2")
def _eq51(c):
    b = c.bundle
    return np.abs(b.SStar - b.S - b.nablaOmega_sq)


@register("eq54", "second_order", "|R~+|^2 = 1/2 |phi|^2")
def _eq54(c):
    b = c.bundle
    return np.abs(chart.curvature_norm_sq(b.tildeRplus, b.g, b.ginv) - 0.5 * fnorm_sq(b.phi, b))


@register("eq55", "second_order", "|R~|^2 = 1/2 |phi|^2 + |R~-|^2")
def _eq55(c):
    b = c.bundle
    lhs = chart.curvature_norm_sq(b.tildeR, b.g, b.ginv)
    rhs = 0.5 * fnorm_sq(b.phi, b) + chart.curvature_norm_sq(b.tildeRminus, b.g, b.ginv)
    return np.abs(lhs - rhs)


def _half_tr_J_n2(b, X, Y):
    return 0.5 * np.einsum("pab,pdba->pd", b.J, nabla2_dir(b, X, Y))


@register("eq56", "second_order",
          "g((nabla^2_{X, X_k} J) J X^k, Y) = 1/2 tr(J o nabla^2_{X,Y} J)")
def _eq56(c):
    b = c.bundle
    X, Y = c.vectors("eq56", 2)
    JXk = np.einsum("pcq,pkq->pck", b.J, b.ginv)  # (J X^k)^c
    v = np.einsum("pdi,pikac,pck->pda", X, b.nabla2J, JXk)
    return worst(gdot(v, Y, b.g) - _half_tr_J_n2(b, X, Y))


@register("eq57", "second_order", "1/2 tr(J o nabla^2_{X,Y} J) = phi(X, JY)")
def _eq57(c):
    b = c.bundle
    X, Y = c.vectors("eq57", 2)
    return worst(_half_tr_J_n2(b, X, Y) - form_dir(b.phi, X, mv(b.J, Y)))


@register("eq58", "second_order",
          "(nabla^2_{X, X_k} J) J X^k = -(nabla_{X_k} J o nabla_X J) X^k")
def _eq58(c):
    b = c.bundle
    (X,) = c.vectors("eq58", 1)
    JXk = np.einsum("pcq,pkq->pck", b.J, b.ginv)
    lhs = np.einsum("pdi,pikac,pck->pda", X, b.nabla2J, JXk)
    rhs = -np.einsum("pkl,pkac,pdcl->pda", b.ginv, b.nablaJ, nabla_dir(b, X))
    return worst(vnorm(lhs - rhs, b.g))


@register("eq61", "second_order", "2<rho, phi> = <nabla_{Ric(X_k)} Omega, nabla_{X^k} Omega>")
def _eq61(c):
    b = c.bundle
    return np.abs(2 * finner(b.rho, b.phi, b) - omega_pairing(b, b.Ric))


@register("eq62", "second_order", "<rho, nabla* nabla Omega> = 2<Ric, Ric~>")
def _eq62(c):
    b = c.bundle
    return np.abs(finner(b.rho, b.bochnerOmega, b) - 2 * einner(b.Ric, b.tildeRic, b))


@register("eq65", "second_order", "1/2 |nabla* nabla Omega|^2 = |Ric*-|^2 + 4|Ric~|^2")
def _eq65(c):
    b = c.bundle
    lhs = 0.5 * fnorm_sq(b.bochnerOmega, b)
    rhs = einner(b.RicStarMinus, b.RicStarMinus, b) + 4 * einner(b.tildeRic, b.tildeRic, b)
    return np.abs(lhs - rhs)


def _len_diff(b):
    return einner(b.RicStarPlus, b.RicStarPlus, b) - einner(b.RicPlus, b.RicPlus, b)


@register("eq66", "second_order", "|Ric~|^2 + <Ric, Ric~> = 1/4(|Ric*+|^2 - |Ric+|^2)")
def _eq66(c):
    b = c.bundle
    lhs = einner(b.tildeRic, b.tildeRic, b) + einner(b.Ric, b.tildeRic, b)
    return np.abs(lhs - 0.25 * _len_diff(b))


@register("eq67", "second_order", "2|Ric~|^2 + <Ric, Ric~> = <Ric*+, Ric~>")
def _eq67(c):
    b = c.bundle
    lhs = 2 * einner(b.tildeRic, b.tildeRic, b) + einner(b.Ric, b.tildeRic, b)
    return np.abs(lhs - einner(b.RicStarPlus, b.tildeRic, b))


@register("eq75", "second_order", "<Ric*+, Ric~> - |Ric~|^2 = 1/4(|Ric*+|^2 - |Ric+|^2)")
def _eq75(c):
    b = c.bundle
    lhs = einner(b.RicStarPlus, b.tildeRic, b) - einner(b.tildeRic, b.tildeRic, b)
    return np.abs(lhs - 0.25 * _len_diff(b))


@register("eq79", "second_order",
          "2<rho, phi> = <nabla_{Ric+(X_k)} Omega, nabla_{X^k} Omega>"
          " = <nabla_{Ric*+(X_k)} Omega, nabla_{X^k} Omega> - 2<nabla_{Ric~(X_k)} Omega, nabla_{X^k} Omega>")
def _eq79(c):
    b = c.bundle
    e1 = 2 * finner(b.rho, b.phi, b)
    e2 = omega_pairing(b, b.RicPlus)
    e3 = omega_pairing(b, b.RicStarPlus) - 2 * omega_pairing(b, b.tildeRic)
    return np.max([np.abs(e1 - e2), np.abs(e2 - e3), np.abs(e1 - e3)], axis=0)


# nested Ricci derivatives -----------------------------------------------

@register("eq63", "ricci_second_order",
          "1/4 g(J varphi(X^k, X^l), (nabla_{X_k} Ric) X_l - (nabla_{X_l} Ric) X_k) = <varphi, psi>")
def _eq63(c):
    return np.abs(c.ricci.eq63_lhs - c.ricci.phi_psi)


@register("eq64", "ricci_second_order",
          "2<Ric, Ric~> = 2<rho, phi> + 2<varphi, psi> + |Ric-|^2 + div(V2)")
def _eq64(c):
    b, r = c.bundle, c.ricci
    lhs = 2 * einner(b.Ric, b.tildeRic, b)
    rhs = (2 * finner(b.rho, b.phi, b) + 2 * r.phi_psi + einner(b.RicMinus, b.RicMinus, b)
           + r.divV2)
    return np.abs(lhs - rhs)


@register("eq70", "ricci_second_order",
          "q(J) equals both symmetrised forms of the second covariant derivative of Ric")
def _eq70(c):
    r = c.ricci
    return np.maximum(np.abs(r.qJ - r.qJ_sym), np.abs(r.qJ - r.qJ_Jsym))


@register("eq71", "ricci_second_order", "q(J) = 2<varphi, psi> + div(V3)")
def _eq71(c):
    r = c.ricci
    return np.abs(r.qJ - 2 * r.phi_psi - r.divV3)


# dimension four ----------------------------------------------------------

@register("eq76", "dim4_only", "Ric~ = 1/8 |nabla Omega|^2 Id")
def _eq76(c):
    b = c.bundle
    return enorm(b.tildeRic - b.nablaOmega_sq[:, None, None] / 8 * identity_like(b), b)


@register("eq77a", "dim4_only", "4(|Ric*+|^2 - |Ric+|^2) = |nabla Omega|^4 + 2S|nabla Omega|^2")
def _eq77a(c):
    b = c.bundle
    w = b.nablaOmega_sq
    return np.abs(4 * _len_diff(b) - (w**2 + 2 * b.S * w))


@register("eq77b", "dim4_only", "4(|Ric*+|^2 - |Ric+|^2) = 2S*|nabla Omega|^2 - |nabla Omega|^4")
def _eq77b(c):
    b = c.bundle
    w = b.nablaOmega_sq
    return np.abs(4 * _len_diff(b) - (2 * b.SStar * w - w**2))


@register("eq78", "dim4_only", "4(|Ric*+|^2 - |Ric+|^2) = (S + S*)|nabla Omega|^2")
def _eq78(c):
    b = c.bundle
    return np.abs(4 * _len_diff(b) - (b.S + b.SStar) * b.nablaOmega_sq)


def lhs83(b):
    return (chart.curvature_norm_sq(b.tildeRminus, b.g, b.ginv)
            + einner(b.RicStarMinus, b.RicStarMinus, b) + 2 * einner(b.RicStarPlus, b.tildeRic, b))


def lhs85(b):
    return (chart.curvature_norm_sq(b.tildeRminus, b.g, b.ginv)
            + einner(b.RicStarMinus, b.RicStarMinus, b) + b.SStar / 4 * b.nablaOmega_sq)


@register("eq85", "dim4_only",
          "|R~-|^2 + |Ric*-|^2 + 2<Ric*+, Ric~> = |R~-|^2 + |Ric*-|^2 + S*/4 |nabla Omega|^2")
def _eq85(c):
    b = c.bundle
    return np.abs(lhs83(b) - lhs85(b))


# --------------------------------------------------------------------------- queries

def _sort_key(tag):
    num = int("".join(ch for ch in tag[2:] if ch.isdigit()))
    return (num, tag)


def list_identities(dim):
    """Registered checks applicable in dimension ``dim``, in equation order."""
    if dim % 2:
        raise ValueError("dimension must be even")
    out = [c for c in REGISTRY.values() if c.klass != "dim4_only" or dim == 4]
    return sorted(out, key=lambda c: _sort_key(c.id))


def get_identity(tag):
    try:
        return REGISTRY[tag]
    except KeyError:
        raise KeyError(f"unknown identity {tag!r}") from None


def select(dim, tags=None):
    """Checks for ``dim``, optionally restricted to comma-separated ``tags``."""
    checks = list_identities(dim)
    if not tags:
        return checks
    if isinstance(tags, str):
        tags = [t.strip() for t in tags.split(",") if t.strip()]
    wanted = []
    for t in tags:
        chk = get_identity(t)
        if chk.klass == "dim4_only" and dim != 4:
            raise ValueError(f"{t} applies only in dimension 4")
        wanted.append(chk)
    return sorted(set(wanted), key=lambda c: _sort_key(c.id))


def default_tolerances(spec, fd):
    analytic = spec.analytic_jets is not None and fd.use_analytic
    return dict(ANALYTIC_TOLERANCES if analytic else FD_TOLERANCES)


# --------------------------------------------------------------------------- running

def evaluate(checks, ctx):
    """Residual arrays for each check on one context."""
    return {chk.id: np.asarray(chk.evaluator(ctx), dtype=float) for chk in checks}


def check_identity(tag, spec, x, fd=FDConfig(), rng_seed=0, tolerance=None):
    """Outcomes of a single identity at the points ``x``."""
    chk = get_identity(tag)
    if chk.klass == "dim4_only" and spec.dim != 4:
        raise ValueError(f"{tag} applies only in dimension 4")
    ctx = EvalContext(spec, x, fd, rng_seed)
    res = np.asarray(chk.evaluator(ctx), dtype=float)
    tol = default_tolerances(spec, fd)[chk.klass] if tolerance is None else tolerance
    outs = [IdentityOutcome(tag, tuple(float(v) for v in p), float(r), tol, bool(r <= tol))
            for p, r in zip(ctx.X, res)]
    return outs[0] if np.ndim(x) == 1 else outs


@dataclass
class SuiteReport:
    label: str
    outcomes: dict
    fd: dict
    tolerances: dict
    errors: list = field(default_factory=list)
    convergence: dict = field(default_factory=dict)

    @property
    def counts(self):
        total = sum(len(v) for v in self.outcomes.values())
        passed = sum(o.passed for v in self.outcomes.values() for o in v)
        return {"total": total, "passed": passed, "failed": total - passed,
                "errors": len(self.errors)}

    @property
    def worst(self):
        return {k: max((o.residual for o in v), default=0.0) for k, v in self.outcomes.items()}

    @property
    def failed_ids(self):
        return sorted((k for k, v in self.outcomes.items() if any(not o.passed for o in v)),
                      key=_sort_key)

    @property
    def passed(self):
        return not self.failed_ids and not self.errors

    def to_dict(self):
        return {
            "spec_label": self.label,
            "fd": self.fd,
            "tolerances": self.tolerances,
            "counts": self.counts,
            "worst": self.worst,
            "failed": self.failed_ids,
            "convergence": self.convergence,
            "errors": self.errors,
            "outcomes": [o.to_dict() for k in sorted(self.outcomes, key=_sort_key)
                         for o in self.outcomes[k]],
        }


def sample_points(spec, sampling):
    """``("grid", N)`` or ``("random", count, seed)``."""
    kind = sampling[0]
    if kind == "grid":
        return spec.domain.grid(int(sampling[1]))
    if kind == "random":
        seed = sampling[2] if len(sampling) > 2 else 0
        return spec.domain.sample(int(sampling[1]), seed)
    raise ValueError(f"unknown sampling {kind!r}")


#: points per evaluation chunk in ``run_suite``
SUITE_CHUNK = 512


def _residuals_at(checks, spec, X, fd, seed):
    ctx = EvalContext(spec, X, fd, seed)
    return evaluate(checks, ctx)


def convergence_order(r_coarse, r_fine, ratio=2.0):
    """Observed order from residuals at steps ``h`` and ``h / ratio``.

    ``None`` when both residuals sit at the rounding floor (exact stencils).
    """
    if r_coarse <= ROUNDING_FLOOR and r_fine <= ROUNDING_FLOOR:
        return None
    return math.log(max(r_coarse, 1e-300) / max(r_fine, 1e-300)) / math.log(ratio)


def run_suite(spec, sampling=("random", 16, 0), fd=FDConfig(), seed=0, identities=None,
              tolerances=None, threads=None):
    """Check every applicable identity at every sample point.

    Per-chunk failures (for example a degenerate metric at a stencil point)
    are recorded in ``errors`` and do not abort the suite.
    """
    checks = select(spec.dim, identities)
    tol = default_tolerances(spec, fd)
    if tolerances:
        tol.update({k: v for k, v in tolerances.items() if v is not None})
    X = sample_points(spec, sampling)
    outcomes = {c.id: [] for c in checks}
    errors = []
    starts = list(range(0, len(X), SUITE_CHUNK))

    def work(i):
        Xc = X[i:i + SUITE_CHUNK]
        try:
            return i, _residuals_at(checks, spec, Xc, fd, seed + i), None
        except (AKVError, ValueError, np.linalg.LinAlgError) as exc:
            return i, None, f"{type(exc).__name__}: {exc}"

    threads = threads or chart.max_threads()
    if threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(i) for i in starts]
    for i, res, err in results:
        Xc = X[i:i + SUITE_CHUNK]
        if err is not None:
            errors.append({"points": [list(map(float, p)) for p in Xc[:1]], "count": len(Xc),
                           "error": err})
            continue
        for chk in checks:
            t = tol[chk.klass]
            for p, r in zip(Xc, res[chk.id]):
                r = float(r)
                outcomes[chk.id].append(
                    IdentityOutcome(chk.id, tuple(float(v) for v in p), r, t, bool(r <= t)))
    report = SuiteReport(spec.label, outcomes, fd.to_dict(), tol, errors)
    if fd.richardson:
        report.convergence = measure_convergence(spec, X[:min(len(X), 16)], fd, checks, seed)
    return report


def measure_convergence(spec, X, fd, checks=None, seed=0, ratio=2.0):
    """Observed convergence order of each check's worst residual under plain FD.

    Residuals are evaluated with finite-difference jets at ``h`` and
    ``h / ratio``; entries are ``None`` when both are at the rounding floor.
    """
    checks = checks or list_identities(spec.dim)
    base = FDConfig(fd.step, fd.accuracy, False, fd.outer_factor, use_analytic=False)
    coarse = _residuals_at(checks, spec, X, base, seed)
    fine = _residuals_at(checks, spec, X, base.with_step(fd.step / ratio), seed)
    out = {}
    for chk in checks:
        rc, rf = float(np.max(coarse[chk.id])), float(np.max(fine[chk.id]))
        out[chk.id] = {"coarse": rc, "fine": rf, "order": convergence_order(rc, rf, ratio)}
    return out
