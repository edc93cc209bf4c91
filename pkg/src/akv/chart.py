"""Chart-level differential calculus for almost Hermitian structures.

Array index conventions (all arrays carry a leading batch axis ``P``):

=============  ==========================  ===============================
name           shape                       meaning
=============  ==========================  ===============================
``g``          ``[P, a, b]``               ``g_ab``
``dg``         ``[P, i, a, b]``            ``d_i g_ab``
``ddg``        ``[P, i, j, a, b]``         ``d_i d_j g_ab``
``J``          ``[P, a, b]``               ``J^a_b``
``Gamma``      ``[P, a, i, j]``            ``Gamma^a_ij`` (``nabla_i d_j = Gamma^a_ij d_a``)
``dGamma``     ``[P, k, a, i, j]``         ``d_k Gamma^a_ij``
``Rm``         ``[P, a, b, i, j]``         ``(R(d_i, d_j))^a_b``
``nablaJ``     ``[P, i, a, b]``            ``(nabla_i J)^a_b``
``nabla2J``    ``[P, i, j, a, b]``         ``(nabla^2_{d_i, d_j} J)^a_b``
``varphi``     ``[P, a, i, j]``            ``(nabla_i J) d_j - (nabla_j J) d_i``
2-forms        ``[P, a, b]``               ``xi(d_a, d_b)``
=============  ==========================  ===============================

Frame contractions such as ``R(X, X_k) X^k`` are carried out in the
coordinate frame with ``X^k = g^{kl} d_l``.
"""
from dataclasses import dataclass, field
from functools import cached_property
import os
import warnings

import numpy as np

from . import fd as fdlib
from .errors import ShapeError
from .fd import FDConfig
from .point_algebra import check_metric, hermitian_split


# --------------------------------------------------------------------------- specs

@dataclass(frozen=True)
class Domain:
    """Axis-aligned coordinate box; a fundamental domain when ``periodic``."""

    lower: tuple
    upper: tuple
    periodic: bool = True

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ShapeError("domain bounds differ in length")
        if any(not u > l for l, u in zip(self.lower, self.upper)):
            raise ValueError("domain periods must be positive")

    @property
    def scale(self):
        return np.asarray(self.upper, dtype=float) - np.asarray(self.lower, dtype=float)

    def sample(self, count, seed=0):
        rng = np.random.default_rng(seed)
        lo = np.asarray(self.lower, dtype=float)
        return lo + rng.random((count, len(lo))) * self.scale

    def grid(self, N):
        """Left-endpoint lattice of ``N`` points per axis, C order."""
        lo = np.asarray(self.lower, dtype=float)
        axes = [lo[k] + self.scale[k] * np.arange(N) / N for k in range(len(lo))]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True, eq=False)
class ManifoldSpec:
    """Chart description of an almost Hermitian manifold.

    ``g_fn`` and ``J_fn`` map points ``[..., n]`` to ``[..., n, n]``.
    ``analytic_jets(X, order)`` optionally returns exact partials as a dict
    with keys ``g, dg, ddg, J, dJ, ddJ``.
    """

    dim: int
    domain: Domain
    g_fn: object
    J_fn: object
    analytic_jets: object = None
    label: str = "manifold"
    compact: bool = False
    almost_kahler: bool = True
    chart_check: object = None

    def __post_init__(self):
        if self.dim % 2 or self.dim < 2:
            raise ValueError("dimension must be even and positive")
        if len(self.domain.lower) != self.dim:
            raise ShapeError("domain dimension does not match manifold dimension")

    @property
    def quadrature_eligible(self):
        return self.domain.periodic

    def steps(self, fd, factor=1.0):
        return fd.step * factor * self.domain.scale


# --------------------------------------------------------------------------- jets

@dataclass
class Jet:
    point: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray
    J: np.ndarray
    dJ: np.ndarray
    Gamma: np.ndarray
    ddg: np.ndarray = None
    ddJ: np.ndarray = None
    dGamma: np.ndarray = None

    @property
    def order(self):
        return 2 if self.ddg is not None else 1

    @property
    def n(self):
        return self.g.shape[-1]


def _check_steps(spec, h):
    scale = spec.domain.scale
    if np.any(h < 1e-9 * scale):
        raise ValueError("finite-difference step underflows relative to the domain scale")
    if spec.domain.periodic and np.any(4 * h >= 0.5 * scale):
        raise ValueError("finite-difference stencil spans more than half a period")


def _fd_raw(spec, X, order, fd, with_J=True):
    h = spec.steps(fd)
    _check_steps(spec, h)
    if fd.richardson:
        partial_fn = fdlib.richardson_partials
    else:
        partial_fn = fdlib.partials
    out = {}

    def g_checked(pts):
        vals = spec.g_fn(pts)
        check_metric(vals, where=pts)
        return vals

    out["g"], out["dg"], out["ddg"] = partial_fn(g_checked, X, h, fd.accuracy, order)
    if with_J:
        out["J"], out["dJ"], out["ddJ"] = partial_fn(spec.J_fn, X, h, fd.accuracy, order)
    return out


def raw_jets(spec, X, order=2, fd=FDConfig(), with_J=True):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[-1] != spec.dim:
        raise ShapeError(f"points have dimension {X.shape[-1]}, expected {spec.dim}")
    if spec.chart_check is not None:
        spec.chart_check(X)
    if spec.analytic_jets is not None and fd.use_analytic:
        raw = spec.analytic_jets(X, order)
        check_metric(raw["g"], where=X)
        return raw
    return _fd_raw(spec, X, order, fd, with_J)


def christoffel(g, ginv, dg, ddg=None):
    """Levi-Civita symbols and (if ``ddg`` given) their first partials."""
    P, n = g.shape[0], g.shape[-1]
    low = 0.5 * (np.einsum("pibj->pbij", dg) + np.einsum("pjbi->pbij", dg) - dg)
    Gamma = (ginv @ low.reshape(P, n, n * n)).reshape(P, n, n, n)
    if ddg is None:
        return Gamma, None
    dginv = -(ginv[:, None] @ dg @ ginv[:, None])
    dlow = 0.5 * (ddg.transpose(0, 1, 3, 2, 4) + ddg.transpose(0, 1, 3, 4, 2) - ddg)
    dGamma = dginv @ low.reshape(P, 1, n, n * n) + ginv[:, None] @ dlow.reshape(P, n, n, n * n)
    return Gamma, dGamma.reshape(P, n, n, n, n)


def make_jet(spec, x, order=2, fd=FDConfig()):
    """Sample g, J and their partials at points ``x[P, n]`` (or a single point)."""
    if order not in (1, 2):
        raise ValueError("jet order must be 1 or 2")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    raw = raw_jets(spec, X, order, fd)
    g = 0.5 * (raw["g"] + np.swapaxes(raw["g"], -1, -2))
    ginv = np.linalg.inv(g)
    ddg = raw.get("ddg") if order == 2 else None
    Gamma, dGamma = christoffel(g, ginv, raw["dg"], ddg)
    return Jet(
        point=X, g=g, ginv=ginv, dg=raw["dg"], J=raw["J"], dJ=raw["dJ"], Gamma=Gamma,
        ddg=ddg, ddJ=raw.get("ddJ") if order == 2 else None, dGamma=dGamma,
    )


def exterior_d_omega(jet):
    """Components ``dOmega[p, a, b, c]`` of the exterior derivative of Omega."""
    dOm = np.einsum("pkca,pcb->pkab", jet.dJ, jet.g) + np.einsum("pca,pkcb->pkab", jet.J, jet.dg)
    return dOm + np.einsum("pkab->pabk", dOm) + np.einsum("pkab->pbka", dOm)


# --------------------------------------------------------------------------- curvature

def riemann_from_christoffel(Gamma, dGamma):
    P, n = Gamma.shape[0], Gamma.shape[-1]
    # GG[p, a, i, j, b] = Gamma^a_im Gamma^m_jb
    GG = (Gamma.reshape(P, n * n, n) @ Gamma.reshape(P, n, n * n)).reshape(P, n, n, n, n)
    GG = np.einsum("paijb->pabij", GG)
    return (
        np.einsum("piajb->pabij", dGamma)
        - np.einsum("pjaib->pabij", dGamma)
        + GG
        - np.swapaxes(GG, -1, -2)
    )


def riemann(jet):
    """Curvature endomorphisms ``R(d_i, d_j)`` from an order-2 jet."""
    if jet.dGamma is None:
        raise ValueError("riemann needs an order-2 jet")
    return riemann_from_christoffel(jet.Gamma, jet.dGamma)


def ricci(Rm, g=None, ginv=None):
    """Ricci endomorphism ``Ric(X) = R(X, X_k) X^k`` and scalar curvature."""
    if ginv is None:
        ginv = np.linalg.inv(g)
    Ric = np.einsum("pkl,palbk->pab", ginv, Rm)
    return Ric, np.einsum("paa->p", Ric)


def ricci_from_christoffel(Gamma, dGamma, ginv):
    """Ricci endomorphism and scalar curvature without forming the full curvature."""
    P, n = Gamma.shape[0], Gamma.shape[-1]
    gvec = ginv.reshape(P, n * n, 1)
    gG = (Gamma.reshape(P, n, n * n) @ gvec)[..., 0]  # g^kl Gamma^m_kl
    t1 = (np.swapaxes(dGamma, 1, 2).reshape(P, n * n, n * n) @ gvec).reshape(P, n, n)
    t2 = (dGamma.transpose(0, 2, 3, 1, 4).reshape(P, n * n, n * n) @ gvec).reshape(P, n, n)
    t3 = np.einsum("pabm,pm->pab", Gamma, gG)
    T = np.swapaxes(Gamma, 2, 3) @ ginv[:, None]  # [p, a, m, l]
    t4 = T.reshape(P, n, n * n) @ Gamma.transpose(0, 1, 3, 2).reshape(P, n * n, n)
    Ric = t1 - t2 + t3 - t4
    return Ric, np.einsum("paa->p", Ric)


def ricci_trace_form(Rm):
    """Lowered Ricci form ``Ric(Y, Z) = tr(X -> R(X, Y) Z)``."""
    return np.einsum("pazay->pyz", Rm)


def star_ricci(Rm, J, g=None, ginv=None):
    """Star Ricci endomorphism ``Ric*(X) = R(JX, JX_k) X^k`` and its trace."""
    if ginv is None:
        ginv = np.linalg.inv(g)
    RicStar = np.einsum("pkl,pcb,pdk,palcd->pab", ginv, J, J, Rm)
    return RicStar, np.einsum("paa->p", RicStar)


def star_ricci_bianchi(Rm, J, ginv):
    """``1/2 R(X_k, J X^k) o J``, equal to Ric* by the first Bianchi identity."""
    RJ = np.einsum("pkl,pdl,paekd->pae", ginv, J, Rm)
    return 0.5 * RJ @ J


def star_ricci_rotated(Rm, J, ginv):
    """``-R(JX, X_k) J X^k``: the star Ricci contraction in the frame ``J X_k``."""
    return -np.einsum("pkl,pcb,pel,paeck->pab", ginv, J, J, Rm)


def cov_d_endo(A, dA, Gamma):
    """``(nabla_i A)^a_b`` for a (1,1)-tensor field."""
    return (
        dA
        + np.einsum("paim,pmb->piab", Gamma, A)
        - np.einsum("pmib,pam->piab", Gamma, A)
    )


def cov_d2_endo(A, dA, ddA, Gamma, dGamma):
    """``(nabla^2_{d_i, d_j} A)^a_b``; ``ddA`` symmetric in its derivative slots."""
    nA = cov_d_endo(A, dA, Gamma)
    d_nA = (
        ddA
        + np.einsum("piajm,pmb->pijab", dGamma, A)
        + np.einsum("pajm,pimb->pijab", Gamma, dA)
        - np.einsum("pimjb,pam->pijab", dGamma, A)
        - np.einsum("pmjb,piam->pijab", Gamma, dA)
    )
    return (
        d_nA
        - np.einsum("pmij,pmab->pijab", Gamma, nA)
        + np.einsum("paim,pjmb->pijab", Gamma, nA)
        - np.einsum("pmib,pjam->pijab", Gamma, nA)
    )


def covariant_dJ(jet):
    return cov_d_endo(jet.J, jet.dJ, jet.Gamma)


def second_covariant_dJ(jet):
    if jet.ddJ is None:
        raise ValueError("second_covariant_dJ needs an order-2 jet")
    return cov_d2_endo(jet.J, jet.dJ, jet.ddJ, jet.Gamma, jet.dGamma)


def varphi_from(nablaJ):
    """Vector-valued 2-form ``varphi(X, Y) = (nabla_X J) Y - (nabla_Y J) X``."""
    t = np.einsum("piaj->paij", nablaJ)
    return t - np.swapaxes(t, -1, -2)


def gray_tensors(nablaJ, Rm, J, g, ginv=None):
    """varphi, phi, R~, R~+, R~-, Ric~ at each point."""
    if ginv is None:
        ginv = np.linalg.inv(g)
    varphi = varphi_from(nablaJ)
    # phi(X, Y) = 1/2 tr(nabla_X J o nabla_{JY} J)
    nJ_rot = np.einsum("pcj,pcab->pjab", J, nablaJ)
    phi = 0.5 * np.einsum("piab,pjba->pij", nablaJ, nJ_rot)
    RJJ = np.einsum("pabcd,pci,pdj->pabij", Rm, J, J)
    D = np.moveaxis(Rm - RJJ, (1, 2), (3, 4))  # [p, i, j, a, b]
    Jb = J[:, None, None]
    Rt = np.moveaxis(0.25 * (D @ Jb - Jb @ D) @ Jb, (3, 4), (1, 2))
    RtJ = np.einsum("pci,pabcj->pabij", J, Rt)  # R~(J d_i, d_j)
    RtJ = np.moveaxis(np.moveaxis(RtJ, (1, 2), (3, 4)) @ Jb, (3, 4), (1, 2))
    RtP = 0.5 * (Rt + RtJ)
    RtM = 0.5 * (Rt - RtJ)
    RicT = np.einsum("pkl,palbk->pab", ginv, Rt)
    return varphi, phi, Rt, RtP, RtM, RicT


def bochner_from(nabla2J, ginv):
    """``nabla* nabla J = -nabla^2_{X_k, X^k} J``."""
    return -np.einsum("pkl,pklab->pab", ginv, nabla2J)


def curvature_norm_sq(T, g, ginv):
    """``sum_{k,l} |T(X_k, X_l)|^2`` for endomorphism-valued 2-tensors ``T[p, a, b, i, j]``."""
    return np.einsum("pik,pjl,pbaij,pac,pdckl,pdb->p", ginv, ginv, T, ginv, T, g, optimize=True)


# --------------------------------------------------------------------------- bundle

@dataclass
class CurvatureBundle:
    """All pointwise curvature quantities at a batch of points."""

    point: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    J: np.ndarray
    Gamma: np.ndarray
    dGamma: np.ndarray
    Rm: np.ndarray
    Ric: np.ndarray
    RicStar: np.ndarray
    S: np.ndarray
    SStar: np.ndarray
    nablaJ: np.ndarray
    nabla2J: np.ndarray
    varphi: np.ndarray
    phi: np.ndarray
    tildeR: np.ndarray
    tildeRplus: np.ndarray
    tildeRminus: np.ndarray
    tildeRic: np.ndarray
    jet: Jet = field(repr=False, default=None)

    @property
    def n(self):
        return self.g.shape[-1]

    @cached_property
    def RicPlus(self):
        return hermitian_split(self.Ric, self.J)[0]

    @cached_property
    def RicMinus(self):
        return hermitian_split(self.Ric, self.J)[1]

    @cached_property
    def RicStarPlus(self):
        return hermitian_split(self.RicStar, self.J)[0]

    @cached_property
    def RicStarMinus(self):
        return hermitian_split(self.RicStar, self.J)[1]

    @cached_property
    def Omega(self):
        return np.einsum("pca,pcb->pab", self.J, self.g)

    @cached_property
    def nablaOmega(self):
        """``(nabla_k Omega)(d_a, d_b) = g((nabla_k J) d_a, d_b)``."""
        return np.einsum("pkca,pcb->pkab", self.nablaJ, self.g)

    @cached_property
    def rho(self):
        return np.einsum("pca,pcb->pab", self.J @ self.RicPlus, self.g)

    @cached_property
    def rho_star(self):
        return np.einsum("pca,pcb->pab", self.J @ self.RicStarPlus, self.g)

    @cached_property
    def bochnerJ(self):
        return bochner_from(self.nabla2J, self.ginv)

    @cached_property
    def bochnerOmega(self):
        return np.einsum("pca,pcb->pab", self.bochnerJ, self.g)

    @cached_property
    def nablaOmega_sq(self):
        """``|nabla Omega|^2 = sum_k |nabla_{X_k} Omega|^2`` with the 2-form norm."""
        return 0.5 * np.einsum(
            "pkl,pkab,plcd,pac,pbd->p", self.ginv, self.nablaOmega, self.nablaOmega,
            self.ginv, self.ginv, optimize=True,
        )

    @cached_property
    def nablaJ_sq(self):
        return endo_frame_norm_sq(self.nablaJ, self.g, self.ginv)

    @cached_property
    def nablaJ_norm(self):
        return np.sqrt(np.maximum(self.nablaJ_sq, 0.0))

    @cached_property
    def sqrt_det_g(self):
        return np.sqrt(np.linalg.det(self.g))


def endo_frame_norm_sq(T, g, ginv):
    """``sum_k |T_{X_k}|^2`` for a one-form of endomorphisms ``T[p, i, a, b]``."""
    return np.einsum("pij,piba,pac,pjdc,pdb->p", ginv, T, ginv, T, g, optimize=True)


def bundle_from_jet(jet):
    if jet.order < 2:
        raise ValueError("curvature bundle needs an order-2 jet")
    Rm = riemann(jet)
    Ric, S = ricci(Rm, ginv=jet.ginv)
    RicStar, SStar = star_ricci(Rm, jet.J, ginv=jet.ginv)
    nJ = covariant_dJ(jet)
    n2J = second_covariant_dJ(jet)
    varphi, phi, Rt, RtP, RtM, RicT = gray_tensors(nJ, Rm, jet.J, jet.g, jet.ginv)
    return CurvatureBundle(
        point=jet.point, g=jet.g, ginv=jet.ginv, J=jet.J, Gamma=jet.Gamma,
        dGamma=jet.dGamma, Rm=Rm, Ric=Ric, RicStar=RicStar, S=S, SStar=SStar,
        nablaJ=nJ, nabla2J=n2J, varphi=varphi, phi=phi, tildeR=Rt, tildeRplus=RtP,
        tildeRminus=RtM, tildeRic=RicT, jet=jet,
    )


def max_threads():
    try:
        cap = int(os.environ.get("AKV_THREADS", "0"))
    except ValueError:
        cap = 0
    cpu = os.cpu_count() or 1
    return max(1, min(cap, cpu) if cap > 0 else cpu)


def map_chunks(func, X, chunk, threads=None):
    """Apply ``func`` to row chunks of ``X`` and concatenate in order.

    Every array field of the per-chunk results is concatenated along axis 0;
    the reduction order is fixed regardless of thread scheduling.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pieces = [X[i:i + chunk] for i in range(0, len(X), chunk)] or [X]
    threads = threads or max_threads()
    if threads > 1 and len(pieces) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(func, pieces))
    else:
        results = [func(p) for p in pieces]
    return results


def curvature_bundle(spec, x, fd=FDConfig()):
    return bundle_from_jet(make_jet(spec, x, 2, fd))


def bochner_laplacian_J(spec, x, fd=FDConfig()):
    """``nabla* nabla J`` at the given points."""
    return curvature_bundle(spec, x, fd).bochnerJ


# --------------------------------------------------------------------------- nested Ricci data

@dataclass
class PointFields:
    """Light per-point data needed on the nested-Ricci lattice."""

    g: np.ndarray
    ginv: np.ndarray
    J: np.ndarray
    Gamma: np.ndarray
    nablaJ: np.ndarray
    Ric: np.ndarray
    S: np.ndarray
    sqrt_det_g: np.ndarray


def point_fields(spec, X, fd=FDConfig()):
    jet = make_jet(spec, X, 2, fd)
    Ric, S = ricci_from_christoffel(jet.Gamma, jet.dGamma, jet.ginv)
    return PointFields(
        g=jet.g, ginv=jet.ginv, J=jet.J, Gamma=jet.Gamma, nablaJ=covariant_dJ(jet),
        Ric=Ric, S=S, sqrt_det_g=np.sqrt(np.linalg.det(jet.g)),
    )


class RicciLattice:
    """Integer offsets around a point supporting nested derivatives of Ric.

    Contains the first- and second-derivative stencils at the centre plus the
    first-derivative stencils at every first-derivative neighbour, which is
    what a divergence of a field built from ``nabla Ric`` requires.
    """

    def __init__(self, n, accuracy=4):
        self.n = n
        s1, w1 = fdlib.central_weights(1, accuracy)
        s2, w2 = fdlib.central_weights(2, accuracy)
        self.s1 = [(s, w) for s, w in zip(s1, w1) if w != 0.0]
        self.s2 = [(s, w) for s, w in zip(s2, w2) if w != 0.0]
        pts = {}

        def add(off):
            off = tuple(int(v) for v in off)
            if off not in pts:
                pts[off] = len(pts)
            return pts[off]

        zero = np.zeros(n, dtype=int)
        add(zero)
        r = max(abs(s) for s, _ in self.s1)
        for k in range(n):
            for a in range(-2 * r, 2 * r + 1):
                off = zero.copy()
                off[k] = a
                add(off)
            for j in range(n):
                if j == k:
                    continue
                for a, _ in self.s1:
                    for b, _ in self.s1:
                        off = zero.copy()
                        off[k] = a
                        off[j] = b
                        add(off)
        for s, _ in self.s2:
            for k in range(n):
                off = zero.copy()
                off[k] = s
                add(off)
        self.index = pts
        self.offsets = np.array(list(pts.keys()), dtype=float)
        # neighbours at which first derivatives are needed: (k, a) -> lattice index
        self.neighbours = [(k, a, w) for k in range(n) for a, w in self.s1]

    def __len__(self):
        return len(self.offsets)

    def idx(self, off):
        return self.index[tuple(int(v) for v in off)]

    def first_derivative(self, vals, h, base=None):
        """First partials of lattice samples ``vals[P, L, ...]`` at offset ``base``."""
        n = self.n
        base = np.zeros(n, dtype=int) if base is None else np.asarray(base, dtype=int)
        out = []
        for i in range(n):
            acc = 0.0
            for s, w in self.s1:
                off = base.copy()
                off[i] += s
                acc = acc + w * vals[:, self.idx(off)]
            out.append(acc / h[i])
        return np.stack(out, axis=1)

    def second_derivative(self, vals, h):
        n = self.n
        zero = np.zeros(n, dtype=int)
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                acc = 0.0
                if i == j:
                    for s, w in self.s2:
                        off = zero.copy()
                        off[i] = s
                        acc = acc + w * vals[:, self.idx(off)]
                else:
                    for a, wa in self.s1:
                        for b, wb in self.s1:
                            off = zero.copy()
                            off[i] = a
                            off[j] = b
                            acc = acc + wa * wb * vals[:, self.idx(off)]
                row.append(acc / (h[i] * h[j]))
            rows.append(np.stack(row, axis=1))
        return np.stack(rows, axis=1)


_LATTICES = {}


def ricci_lattice(n, accuracy):
    key = (n, accuracy)
    if key not in _LATTICES:
        _LATTICES[key] = RicciLattice(n, accuracy)
    return _LATTICES[key]


@dataclass
class RicciJet:
    """Nested-derivative data of the Ricci field at a batch of points."""

    Ric: np.ndarray
    dRic: np.ndarray
    ddRic: np.ndarray
    nablaRic: np.ndarray
    nabla2Ric: np.ndarray
    psi: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    divV2: np.ndarray
    divV3: np.ndarray
    qJ: np.ndarray
    qJ_sym: np.ndarray
    qJ_Jsym: np.ndarray
    phi_psi: np.ndarray
    eq63_lhs: np.ndarray
    S: np.ndarray
    dS: np.ndarray
    hessS: np.ndarray
    laplacianS: np.ndarray
    outer_steps: np.ndarray


def vector_V2(Ric, J, nablaJ, g, ginv):
    """``V2 = g(Ric(X^l), (J o nabla_{X_l} J) X^k) X_k``."""
    JnJ = np.einsum("pac,plcb->plab", J, nablaJ)
    return np.einsum("plr,pkq,pab,par,plbq->pk", ginv, ginv, g, Ric, JnJ, optimize=True)


def vector_V3(nablaRic, J, g, ginv):
    """``V3 = g((nabla_{X_l} Ric) J X^l, J X^k) X_k``."""
    return np.einsum(
        "plr,pkq,pab,plac,pcr,pbq->pk", ginv, ginv, g, nablaRic, J, J, optimize=True
    )


def psi_from(nablaRic, J):
    """Vector-valued 2-form built from ``[nabla Ric, J]``; returns ``psi[p, a, i, j]``."""
    C = nablaRic @ J[:, None] - J[:, None] @ nablaRic  # [p, i, a, b]
    CJ = np.einsum("pci,pcab->piab", J, C)  # C_{J d_i}
    t1 = np.einsum("piaj->paij", C)
    t2 = np.einsum("piam,pmj->paij", CJ, J)
    return 0.125 * ((t1 - np.swapaxes(t1, -1, -2)) - (t2 - np.swapaxes(t2, -1, -2)))


def pair_vv_forms(a, b, g, ginv):
    """``1/2 g(a(X^k, X^l), b(X_k, X_l))`` for vector-valued 2-forms ``[p, a, i, j]``."""
    return 0.5 * np.einsum("pab,pkr,plq,parq,pbkl->p", g, ginv, ginv, a, b, optimize=True)


def _ricci_chunk(spec, X, fd, bundle):
    n = spec.dim
    lat = ricci_lattice(n, fd.accuracy)
    h = spec.steps(fd, fd.outer_factor)
    P = len(X)
    L = len(lat)
    Z = (X[:, None, :] + lat.offsets[None] * h[None, None]).reshape(P * L, n)
    pf = point_fields(spec, Z, fd)

    def lat_view(a):
        return a.reshape((P, L) + a.shape[1:])

    Ric_l = lat_view(pf.Ric)
    S_l = lat_view(pf.S)
    dRic = lat.first_derivative(Ric_l, h)
    ddRic = lat.second_derivative(Ric_l, h)
    dS = lat.first_derivative(S_l, h)
    ddS = lat.second_derivative(S_l, h)
    Ric = Ric_l[:, 0]
    S = S_l[:, 0]

    g, ginv, J = bundle.g, bundle.ginv, bundle.J
    nRic = cov_d_endo(Ric, dRic, bundle.Gamma)
    n2Ric = cov_d2_endo(Ric, dRic, ddRic, bundle.Gamma, bundle.dGamma)
    hessS = ddS - np.einsum("pmij,pm->pij", bundle.Gamma, dS)
    lapS = -np.einsum("pij,pij->p", ginv, hessS)

    # q(J) and the two symmetrised forms
    JX = np.einsum("pcq,pkq->pck", J, ginv)  # (J X^k)^c
    qJ = np.einsum("pklac,pck,pab,pbl->p", n2Ric, JX, g, JX, optimize=True)
    n2s = n2Ric + np.swapaxes(n2Ric, 1, 2)
    qJ_sym = 0.5 * np.einsum("pklac,pck,pab,pbl->p", n2s, JX, g, JX, optimize=True)
    rot = np.einsum("pck,pdl,pcdab->pklab", J, J, n2s)
    qJ_Jsym = 0.5 * np.einsum("pklac,pkc,pab,plb->p", rot, ginv, g, ginv, optimize=True)

    psi = psi_from(nRic, J)
    varphi = bundle.varphi
    phi_psi = pair_vv_forms(varphi, psi, g, ginv)
    vphi_up = np.einsum("pkr,plq,parq->pakl", ginv, ginv, varphi)
    T = np.einsum("pkbl->pbkl", nRic)
    T = T - np.swapaxes(T, -1, -2)
    eq63 = 0.25 * np.einsum("pab,pac,pckl,pbkl->p", g, J, vphi_up, T, optimize=True)

    # divergences of V2 and V3 through first-derivative neighbours on the lattice
    def lat_pt(a, idx):
        return a.reshape((P, L) + a.shape[1:])[:, idx]

    divV2 = np.zeros(P)
    divV3 = np.zeros(P)
    sqrtg_c = np.sqrt(np.linalg.det(g))
    zero = np.zeros(n, dtype=int)
    cache = {}
    for k, a, w in lat.neighbours:
        off = zero.copy()
        off[k] = a
        key = tuple(off)
        if key not in cache:
            idx = lat.idx(off)
            Ric_y = Ric_l[:, idx]
            dRic_y = lat.first_derivative(Ric_l, h, base=off)
            g_y, ginv_y, J_y = lat_pt(pf.g, idx), lat_pt(pf.ginv, idx), lat_pt(pf.J, idx)
            nRic_y = cov_d_endo(Ric_y, dRic_y, lat_pt(pf.Gamma, idx))
            sg = lat_pt(pf.sqrt_det_g, idx)
            V2y = vector_V2(Ric_y, J_y, lat_pt(pf.nablaJ, idx), g_y, ginv_y)
            V3y = vector_V3(nRic_y, J_y, g_y, ginv_y)
            cache[key] = (sg[:, None] * V2y, sg[:, None] * V3y)
        W2, W3 = cache[key]
        divV2 += w * W2[:, k] / h[k]
        divV3 += w * W3[:, k] / h[k]
    divV2 /= sqrtg_c
    divV3 /= sqrtg_c

    V2 = vector_V2(Ric, J, bundle.nablaJ, g, ginv)
    V3 = vector_V3(nRic, J, g, ginv)
    return RicciJet(
        Ric=Ric, dRic=dRic, ddRic=ddRic, nablaRic=nRic, nabla2Ric=n2Ric, psi=psi,
        V2=V2, V3=V3, divV2=divV2, divV3=divV3, qJ=qJ, qJ_sym=qJ_sym, qJ_Jsym=qJ_Jsym,
        phi_psi=phi_psi, eq63_lhs=eq63, S=S, dS=dS, hessS=hessS, laplacianS=lapS,
        outer_steps=np.broadcast_to(h, (P, n)).copy(),
    )


#: lattice evaluations per nested-Ricci chunk; bounds peak memory
LATTICE_BUDGET = 8192


def _centre_fields(bundle, sl):
    keys = ("g", "ginv", "J", "Gamma", "dGamma", "varphi", "nablaJ")
    return _Centre(**{k: getattr(bundle, k)[sl] for k in keys})


@dataclass
class _Centre:
    g: np.ndarray
    ginv: np.ndarray
    J: np.ndarray
    Gamma: np.ndarray
    dGamma: np.ndarray
    varphi: np.ndarray
    nablaJ: np.ndarray


def ricci_jet(spec, x, fd=FDConfig(), bundle=None, threads=None):
    """Nested finite-difference derivatives of the Ricci field.

    Points are processed in chunks of at most ``LATTICE_BUDGET`` lattice
    evaluations; results are concatenated in input order.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if bundle is None:
        bundle = curvature_bundle(spec, X, fd)
    lat = ricci_lattice(spec.dim, fd.accuracy)
    chunk = max(1, LATTICE_BUDGET // len(lat))
    starts = list(range(0, len(X), chunk))

    def work(i):
        sl = slice(i, i + chunk)
        return _ricci_chunk(spec, X[sl], fd, _centre_fields(bundle, sl))

    threads = threads or max_threads()
    if threads > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(i) for i in starts]
    out = RicciJet(**{
        f: np.concatenate([getattr(p, f) for p in parts], axis=0)
        for f in RicciJet.__dataclass_fields__
    })
    scale = 1.0 + np.max(np.abs(out.Ric))
    noise = np.finfo(float).eps * scale * 16 / np.min(spec.steps(fd, fd.outer_factor)) ** 2
    if noise > 1e-4:
        warnings.warn(
            f"nested Ricci rounding estimate {noise:.2e} exceeds the 1e-4 budget",
            RuntimeWarning,
        )
    return out


def divergence(spec, vfield, x, fd=FDConfig()):
    """``(1/sqrt det g) d_k(sqrt det g V^k)`` by central differences."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    n = spec.dim
    h = spec.steps(fd)
    s1, w1 = fdlib.central_weights(1, fd.accuracy)
    total = np.zeros(len(X))
    for k in range(n):
        for s, w in zip(s1, w1):
            if w == 0.0:
                continue
            Y = X.copy()
            Y[:, k] += s * h[k]
            V = np.asarray(vfield(Y), dtype=float)
            sg = np.sqrt(np.linalg.det(spec.g_fn(Y)))
            total += w * sg * V[:, k] / h[k]
    return total / np.sqrt(np.linalg.det(spec.g_fn(X)))


def pfaffian(A):
    """Pfaffian of antisymmetric matrices ``A[..., n, n]`` by row expansion."""
    n = A.shape[-1]
    if n == 0:
        return np.ones(A.shape[:-2])
    if n % 2:
        return np.zeros(A.shape[:-2])
    total = np.zeros(A.shape[:-2])
    for j in range(1, n):
        keep = [k for k in range(n) if k not in (0, j)]
        sub = A[..., keep, :][..., :, keep]
        total = total + (-1) ** (j + 1) * A[..., 0, j] * pfaffian(sub)
    return total


def volume_form_residual(bundle):
    """``| |Omega^m / m!| - sqrt det g |``; the Pfaffian is the coefficient of ``Omega^m/m!``."""
    return np.abs(np.abs(pfaffian(bundle.Omega)) - bundle.sqrt_det_g)
