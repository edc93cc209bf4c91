"""Hypothesis margins and consistency checks for the integrability theorems.

A margin is a real number that is ``>= 0`` exactly when the hypothesis holds;
a hypothesis counts as satisfied when its margin is ``>= -tol`` so that FD
noise cannot flip a definiteness verdict.  Equalities use ``-max|difference|``.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import chart
from .errors import AKVError
from .fd import FDConfig
from .point_algebra import endo_inner, sym_eigvals
from .quadrature import cell_volume, weighted_sum


@dataclass(frozen=True)
class Tolerances:
    pointwise: float = 1e-6
    ricci: float = 1e-4
    integral: float = 1e-4
    nablaJ: float = 1e-6


@dataclass(frozen=True)
class HypothesisMargin:
    tag: str
    value: float
    worst_point: tuple = None
    tol: float = 0.0
    detail: str = ""

    @property
    def satisfied(self):
        return self.value >= -self.tol

    def to_dict(self):
        return {
            "tag": self.tag, "value": float(self.value), "tol": self.tol,
            "satisfied": self.satisfied,
            "worst_point": None if self.worst_point is None else list(self.worst_point),
            "detail": self.detail,
        }


def any_of(tag, margins):
    best = max(margins, key=lambda m: m.value + m.tol)
    names = "|".join(m.tag for m in margins)
    return HypothesisMargin(tag, best.value, best.worst_point, best.tol, f"any of {names}")


def flag(tag, ok, detail=""):
    return HypothesisMargin(tag, 0.0 if ok else -1.0, None, 0.0, detail)


# --------------------------------------------------------------------------- grid data

def grid_points(spec, grid):
    N = grid if isinstance(grid, int) else grid.N
    if N < 4:
        raise ValueError("grid needs at least 4 points per axis")
    return spec.domain.grid(N)


def _frame_norm2(T, g, ginv):
    """Norm squared of a 2-form of endomorphisms ``T[p, k, l, a, b]``."""
    return np.einsum("pki,plj,pklba,pac,pijdc,pdb->p", ginv, ginv, T, ginv, T, g, optimize=True)


def _vv2_norm2(T, g, ginv):
    """Norm squared of a vector-valued 2-tensor ``T[p, a, k, l]``."""
    return np.einsum("pab,pki,plj,pakl,pbij->p", g, ginv, ginv, T, T, optimize=True)


def _pointwise(bundle, rj, dO):
    """Scalar fields entering the hypotheses, one value per point."""
    b = bundle
    g, ginv, J, n = b.g, b.ginv, b.J, b.n

    def en(A, B):
        return endo_inner(A, B, g, ginv)

    out = {}
    for name, A in (("Ric", b.Ric), ("RicPlus", b.RicPlus), ("RicStarPlus", b.RicStarPlus)):
        sym = 0.5 * (A + np.einsum("pac,pdc,pdb->pab", ginv, A, g))
        ev = sym_eigvals(sym, g)
        out[f"{name}_min"] = ev[:, 0]
        out[f"{name}_max"] = ev[:, -1]
    lenP = en(b.RicStarPlus, b.RicStarPlus) - en(b.RicPlus, b.RicPlus)
    lenA = en(b.RicStar, b.RicStar) - en(b.Ric, b.Ric)
    out["lenPlus_diff"] = lenP
    out["len_diff"] = lenA
    out["eq75"] = en(b.RicStarPlus, b.tildeRic) - en(b.tildeRic, b.tildeRic) - 0.25 * lenP
    out["eq78"] = 4 * lenP - (b.S + b.SStar) * b.nablaOmega_sq
    eye = np.broadcast_to(np.eye(n), g.shape)
    E = b.Ric - b.S[:, None, None] / n * eye
    out["einstein"] = np.sqrt(np.maximum(en(E, E), 0.0))
    tRm = chart.curvature_norm_sq(b.tildeRminus, g, ginv)
    rs2 = en(b.RicStar, b.RicStar)
    out["ineq81"] = tRm + rs2 - b.S * b.SStar / n
    Es = b.RicStar - b.SStar[:, None, None] / n * eye
    out["ineq82"] = tRm + en(Es, Es) + b.SStar / n * b.nablaOmega_sq
    out["ineq83"] = tRm + en(b.RicStarMinus, b.RicStarMinus) + 2 * en(b.RicStarPlus, b.tildeRic)
    out["ineq84"] = tRm + rs2 - en(b.RicStarPlus, b.RicPlus)
    out["ineq85"] = tRm + en(b.RicStarMinus, b.RicStarMinus) + b.SStar / 4 * b.nablaOmega_sq
    out["S"] = b.S
    out["SStar"] = b.SStar
    out["nablaJ"] = b.nablaJ_norm
    out["d_omega"] = np.sqrt(np.maximum(np.einsum(
        "pabc,pdef,pad,pbe,pcf->p", dO, dO, ginv, ginv, ginv, optimize=True) / 6, 0.0))
    out["sqrt_det_g"] = b.sqrt_det_g

    # derivative conditions on Ric
    nR, n2R = rj.nablaRic, rj.nabla2Ric
    C86 = nR @ J[:, None] - J[:, None] @ nR
    out["eq86"] = np.sqrt(np.maximum(chart.endo_frame_norm_sq(C86, g, ginv), 0.0))
    out["nablaRic"] = np.sqrt(np.maximum(chart.endo_frame_norm_sq(nR, g, ginv), 0.0))
    n2s = n2R + np.swapaxes(n2R, 1, 2)
    C87 = n2s @ J[:, None, None] - J[:, None, None] @ n2s
    out["eq87"] = np.sqrt(np.maximum(_frame_norm2(C87, g, ginv), 0.0))
    rot = np.einsum("pck,pdl,pcdab->pklab", J, J, n2s)
    out["eq88"] = np.sqrt(np.maximum(_frame_norm2(rot - n2s, g, ginv), 0.0))
    c = 1.0 / (2 * (n - 1))
    dS = rj.dS
    T = np.einsum("pkal->pakl", nR)
    delta = np.eye(n)
    C89 = (T - np.swapaxes(T, -1, -2)
           - c * (np.einsum("pk,al->pakl", dS, delta) - np.einsum("pl,ak->pakl", dS, delta)))
    out["eq89"] = np.sqrt(np.maximum(_vv2_norm2(C89, g, ginv), 0.0))
    H = 0.5 * (rj.hessS + np.swapaxes(rj.hessS, -1, -2))
    # E[k, l, z]^a: both sides of the symmetrised second-derivative formula applied to d_z
    lhs = np.einsum("pklaz->pklza", n2s)
    rhs = (np.einsum("pkzal->pklza", n2R) + np.einsum("plzak->pklza", n2R)
           + c * (2 * np.einsum("pkl,az->pklza", H, delta)
                  - np.einsum("pkz,al->pklza", H, delta) - np.einsum("plz,ak->pklza", H, delta)))
    E90 = lhs - rhs
    out["eq90"] = np.sqrt(np.maximum(np.einsum(
        "pab,pki,plj,pzy,pklza,pijyb->p", g, ginv, ginv, ginv, E90, E90, optimize=True), 0.0))
    out["remark_v"] = np.abs(rj.qJ + c * rj.laplacianS)
    out["remark_ii"] = np.abs(rj.qJ + 0.5 * rj.laplacianS)
    out["qJ"] = rj.qJ
    out["two_phi_psi"] = 2 * rj.phi_psi
    return out


#: points per chunk when assembling grid data
CLASSIFY_CHUNK = 1024


@dataclass
class GridData:
    """Per-point hypothesis fields on a sampling grid."""

    spec_label: str
    N: int
    X: np.ndarray
    fields: dict
    eligible: bool
    fd: dict
    errors: list = field(default_factory=list)

    def worst(self, key, mode):
        """``(value, point)`` of the min or max of a field."""
        v = self.fields[key]
        i = int(np.argmin(v) if mode == "min" else np.argmax(v))
        return float(v[i]), tuple(float(c) for c in self.X[i])

    def integral(self, key, spec):
        if not self.eligible:
            return None
        return weighted_sum(self.fields[key], self.fields["sqrt_det_g"], cell_volume(spec, self.N))


def grid_data(spec, grid, fd=FDConfig(), threads=None):
    X = grid_points(spec, grid)
    N = grid if isinstance(grid, int) else grid.N

    def work(Xc):
        b = chart.curvature_bundle(spec, Xc, fd)
        rj = chart.ricci_jet(spec, Xc, fd, bundle=b, threads=1)
        return _pointwise(b, rj, chart.exterior_d_omega(b.jet))

    parts = chart.map_chunks(work, X, CLASSIFY_CHUNK, threads)
    fields_ = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return GridData(spec.label, N, X, fields_, spec.quadrature_eligible, fd.to_dict())


def _data(spec, grid, fd, data):
    return data if data is not None else grid_data(spec, grid, fd)


# --------------------------------------------------------------------------- margins

SIGN_FIELDS = ("Ric", "RicPlus", "RicStarPlus")


def semidefinite_margin(spec, field_name, sign, grid=8, fd=FDConfig(), tol=None, data=None):
    """min over the grid of ``sign * eigenvalue``; ``sign`` is ``"+"`` or ``"-"``."""
    if field_name not in SIGN_FIELDS:
        raise ValueError(f"field must be one of {SIGN_FIELDS}")
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    d = _data(spec, grid, fd, data)
    tol = Tolerances().pointwise if tol is None else tol
    if sign == "+":
        v, p = d.worst(f"{field_name}_min", "min")
        tag = f"{field_name}_semipositive"
    else:
        v, p = d.worst(f"{field_name}_max", "max")
        v = -v
        tag = f"{field_name}_semineg"
    return HypothesisMargin(tag, v, p, tol)


def _equality(d, key, tag, tol):
    v = np.abs(d.fields[key])
    i = int(np.argmax(v))
    return HypothesisMargin(tag, -float(v[i]), tuple(map(float, d.X[i])), tol)


def length_equalities(spec, grid=8, fd=FDConfig(), tol=None, data=None):
    d = _data(spec, grid, fd, data)
    tol = Tolerances().pointwise if tol is None else tol
    return {
        "lenRicStarPlus_eq_lenRicPlus": _equality(d, "lenPlus_diff", "lenRicStarPlus_eq_lenRicPlus", tol),
        "lenRicStar_eq_lenRic": _equality(d, "len_diff", "lenRicStar_eq_lenRic", tol),
        "eq75_combination": _equality(d, "eq75", "eq75_combination", tol),
        "eq78_combination": _equality(d, "eq78", "eq78_combination", tol),
    }


DERIVATIVE_TAGS = {
    "eq86": "nablaRic_commutes_J",
    "eq87": "sym_second_Ric_commutes",
    "eq88": "second_Ric_J_invariant",
    "eq89": "harmonic_weyl",
    "eq90": "eq90_symmetrised_second_Ric",
}


def derivative_conditions(spec, grid=8, fd=FDConfig(), tol=None, data=None):
    """Residual margins of the curvature-derivative conditions and the implications.

    ``remark_v``: when the harmonic-Weyl residual is within tolerance,
    ``|q(J) + Delta S / (2(n-1))|`` must be too.
    """
    d = _data(spec, grid, fd, data)
    tol = Tolerances().ricci if tol is None else tol
    out = {DERIVATIVE_TAGS[k]: _equality(d, k, DERIVATIVE_TAGS[k], tol) for k in DERIVATIVE_TAGS}
    premise = out["harmonic_weyl"].satisfied
    concl = float(np.max(d.fields["remark_v"]))
    out["remark_v"] = {
        "premise_holds": premise, "conclusion_residual": concl,
        "implication_holds": (not premise) or concl <= tol,
    }
    premise2 = out["sym_second_Ric_commutes"].satisfied
    concl2 = float(np.max(d.fields["remark_ii"]))
    out["remark_ii"] = {
        "premise_holds": premise2, "conclusion_residual": concl2,
        "implication_holds": (not premise2) or concl2 <= tol,
    }
    return out


def inequality_margins(spec, grid=8, fd=FDConfig(), tol=None, data=None, include_85=None):
    """Margins ``min(LHS - RHS)`` of the curvature inequalities.

    The dimension-4 form is included by default when ``dim == 4``; asking for
    it elsewhere raises.
    """
    if include_85 and spec.dim != 4:
        raise ValueError("the dimension-4 inequality needs dim = 4")
    include_85 = spec.dim == 4 if include_85 is None else include_85
    d = _data(spec, grid, fd, data)
    tol = Tolerances().pointwise if tol is None else tol
    out = {}
    for key in ("ineq81", "ineq83", "ineq84") + (("ineq85",) if include_85 else ()):
        v, p = d.worst(key, "min")
        out[key] = HypothesisMargin(key, v, p, tol)
    v82, p82 = d.worst("ineq82", "min")
    out["ineq82"] = HypothesisMargin("ineq82", v82, p82, tol)
    einstein = float(np.max(d.fields["einstein"])) <= tol
    gap = float(np.max(np.abs(d.fields["ineq81"] - d.fields["ineq82"])))
    out["ineq81_vs_82"] = {
        "einstein": einstein, "max_difference": gap,
        "consistent": (not einstein) or gap <= tol * 10,
    }
    return out


# --------------------------------------------------------------------------- classification

@dataclass
class TheoremEntry:
    theorem: str
    statement: str
    hypotheses: list
    predicted_if_hold: str
    status: str = "evaluated"
    measured_max_nablaJ: float = 0.0
    measured_d_omega: float = 0.0
    tol_nablaJ: float = 1e-6

    @property
    def hypotheses_all_hold(self):
        return self.status == "evaluated" and all(h.satisfied for h in self.hypotheses)

    @property
    def failed_hypotheses(self):
        return [h.tag for h in self.hypotheses if not h.satisfied]

    @property
    def predicted(self):
        return self.predicted_if_hold if self.hypotheses_all_hold else "no prediction"

    @property
    def consistent(self):
        if not self.hypotheses_all_hold:
            return True
        if self.predicted_if_hold == "Kähler":
            return self.measured_max_nablaJ <= self.tol_nablaJ
        # "not almost Kähler possible"
        return self.measured_d_omega > self.tol_nablaJ

    def to_dict(self):
        return {
            "theorem": self.theorem, "statement": self.statement, "status": self.status,
            "hypotheses": [h.to_dict() for h in self.hypotheses],
            "failed_hypotheses": self.failed_hypotheses,
            "hypotheses_all_hold": self.hypotheses_all_hold,
            "predicted": self.predicted,
            "measured_max_nablaJ": self.measured_max_nablaJ,
            "consistent": self.consistent,
        }


@dataclass
class ClassificationReport:
    spec_label: str
    N: int
    entries: list
    margins: dict
    derivative: dict
    inequalities: dict
    measured_max_nablaJ: float
    measured_d_omega: float
    QJ: float
    fd: dict
    tolerances: dict
    errors: list = field(default_factory=list)

    @property
    def consistent(self):
        return all(e.consistent for e in self.entries)

    @property
    def verdict(self):
        tol = self.tolerances["nablaJ"]
        if self.measured_d_omega > tol:
            return "not almost Kähler"
        if self.measured_max_nablaJ <= tol:
            return "Kähler"
        return "strictly almost Kähler"

    def entry(self, theorem):
        for e in self.entries:
            if e.theorem == theorem:
                return e
        raise KeyError(theorem)

    def to_dict(self):
        def dump(v):
            if isinstance(v, HypothesisMargin):
                return v.to_dict()
            if isinstance(v, dict):
                return {k: dump(x) for k, x in v.items()}
            return v

        return {
            "spec_label": self.spec_label,
            "N": self.N,
            "verdict": self.verdict,
            "consistent": self.consistent,
            "measured_max_nablaJ": self.measured_max_nablaJ,
            "measured_d_omega": self.measured_d_omega,
            "QJ": self.QJ,
            "margins": dump(self.margins),
            "derivative_conditions": dump(self.derivative),
            "inequalities": dump(self.inequalities),
            "entries": [e.to_dict() for e in self.entries],
            "fd": self.fd,
            "tolerances": self.tolerances,
            "errors": list(self.errors),
        }


NOT_EVALUABLE = "not evaluable: no global quadrature"

#: integral-dependent results, not evaluable without a periodic fundamental domain
INTEGRAL_RESULTS = ("Thm 3.1", "Thm 3.2", "Thm 3.3", "Rem 3.1", "Thm 3.4")


def classify(spec, grid=8, fd=FDConfig(), tolerances=Tolerances(), threads=None, data=None):
    """Evaluate every result's hypotheses and compare predictions with measured ``|nabla J|``."""
    tl = tolerances
    errors = []
    try:
        d = data if data is not None else grid_data(spec, grid, fd, threads)
    except (AKVError, ValueError, np.linalg.LinAlgError) as exc:
        raise AKVError(f"classification of {spec.label} failed: {exc}") from exc
    n = spec.dim
    mJ = float(np.max(d.fields["nablaJ"]))
    mdO = float(np.max(d.fields["d_omega"]))

    sign = {}
    for f in SIGN_FIELDS:
        for s in "+-":
            m = semidefinite_margin(spec, f, s, tol=tl.pointwise, data=d)
            sign[m.tag] = m
    lens = length_equalities(spec, tol=tl.pointwise, data=d)
    deriv = derivative_conditions(spec, tol=tl.ricci, data=d)
    ineq = inequality_margins(spec, tol=tl.pointwise, data=d)

    S_nonneg = HypothesisMargin("S_nonneg", *d.worst("S", "min"), tl.pointwise)
    v, p = d.worst("SStar", "min")
    SStar_nonneg = HypothesisMargin("SStar_nonneg", v, p, tl.pointwise)
    v, p = d.worst("SStar", "max")
    SStar_nonpos = HypothesisMargin("SStar_nonpos", -v, p, tl.pointwise)
    supp = np.abs(d.fields["S"] + d.fields["SStar"]) > tl.pointwise
    S_supp = HypothesisMargin("S_plus_SStar_support", float(np.mean(supp)) - 1.0, None, 0.0,
                              "fraction of grid points with S + S* != 0, minus one")
    v, p = d.worst("einstein", "max")
    einstein = HypothesisMargin("Einstein", -v, p, tl.pointwise)
    v, p = d.worst("nablaRic", "max")
    nonparallel = HypothesisMargin("Ric_nonparallel", v - tl.ricci, p, 0.0,
                                   "max |nabla Ric| minus the Ricci tolerance")
    almost_kahler = HypothesisMargin("almost_Kahler", -mdO, d.worst("d_omega", "max")[1], tl.pointwise,
                                     "max |d Omega|")
    compact = flag("compact", spec.compact, "declared by the manifold")
    dim4 = flag("dim_eq_4", n == 4)
    dim_ge4 = flag("dim_ge_4", n >= 4)
    QJ = d.integral("qJ", spec)
    if QJ is None:
        QJ_zero = HypothesisMargin("QJ_zero", -1.0, None, tl.integral, NOT_EVALUABLE)
    else:
        QJ_zero = HypothesisMargin("QJ_zero", -abs(QJ), None, tl.integral, "|int q(J) omega|")

    semipos = any_of("Ric_or_RicPlus_or_RicStarPlus_semipositive",
                     [sign["Ric_semipositive"], sign["RicPlus_semipositive"],
                      sign["RicStarPlus_semipositive"]])
    seminegs = any_of("Ric_or_RicPlus_or_RicStarPlus_semineg",
                      [sign["Ric_semineg"], sign["RicPlus_semineg"], sign["RicStarPlus_semineg"]])
    prop31_sign = any_of("Ric_or_RicPlus_semipositive_or_RicStarPlus_semineg",
                         [sign["Ric_semipositive"], sign["RicPlus_semipositive"],
                          sign["RicStarPlus_semineg"]])
    prop32_sign = any_of("S_nonneg_or_SStar_nonpos_or_support",
                         [S_nonneg, SStar_nonpos, S_supp])
    lenP = lens["lenRicStarPlus_eq_lenRicPlus"]
    lenA = lens["lenRicStar_eq_lenRic"]
    c86 = deriv["nablaRic_commutes_J"]
    weyl = deriv["harmonic_weyl"]

    K, NAK = "Kähler", "not almost Kähler possible"
    table = [
        ("Prop 3.1", "equal Hermitian Ricci lengths and a sign condition force Kähler",
         [almost_kahler, lenP, prop31_sign], K),
        ("Prop 3.2", "in dimension 4, equal Hermitian Ricci lengths with S >= 0, S* <= 0 or full support force Kähler",
         [dim4, almost_kahler, lenP, prop32_sign], K),
        ("Thm 3.1", "compact, a semi-negative Ricci-type tensor and |Ric*| = |Ric| force Kähler",
         [compact, almost_kahler, seminegs, lenA], K),
        ("Thm 3.2", "compact Einstein with |R~-|^2 + |Ric*|^2 >= S S*/n is Kähler",
         [compact, almost_kahler, einstein, ineq["ineq81"]], K),
        ("Cor 3.1", "compact Einstein with S* >= 0 is Kähler",
         [compact, almost_kahler, einstein, SStar_nonneg], K),
        ("Thm 3.3", "compact, a semi-positive Ricci-type tensor and Q(J) = 0 force integrability",
         [compact, almost_kahler, semipos, QJ_zero], K),
        ("Rem 3.1", "the sign condition of Thm 3.3 may be replaced by the weaker inequality",
         [compact, almost_kahler, ineq["ineq83"], QJ_zero], K),
        ("Thm 3.4", "compact 4-manifold with S* >= 0 and Q(J) = 0 is Kähler",
         [compact, almost_kahler, dim4, SStar_nonneg, QJ_zero], K),
        ("Cor 3.2", "compact, a semi-positive Ricci-type tensor and [nabla Ric, J] = 0 force Kähler",
         [compact, almost_kahler, semipos, c86], K),
        ("Cor 3.3", "compact 4-manifold with S* >= 0 and [nabla Ric, J] = 0 is Kähler",
         [compact, almost_kahler, dim4, SStar_nonneg, c86], K),
        ("Cor 3.4", "harmonic Weyl, non-parallel semi-positive Ric excludes almost Kähler",
         [compact, dim_ge4, weyl, nonparallel, sign["Ric_semipositive"]], NAK),
        ("Cor 3.5", "4-manifold with harmonic Weyl, non-parallel Ric and S >= 0 is not almost Kähler",
         [compact, dim4, weyl, nonparallel, S_nonneg], NAK),
    ]
    entries = []
    for tag, text, hyps, pred in table:
        status = "evaluated"
        if tag in INTEGRAL_RESULTS and not d.eligible:
            status = NOT_EVALUABLE
        entries.append(TheoremEntry(tag, text, hyps, pred, status, mJ, mdO, tl.nablaJ))
    margins = dict(sign)
    margins.update(lens)
    for m in (S_nonneg, SStar_nonneg, SStar_nonpos, S_supp, einstein, nonparallel, almost_kahler,
              QJ_zero):
        margins[m.tag] = m
    tol_dict = {"pointwise": tl.pointwise, "ricci": tl.ricci, "integral": tl.integral,
                "nablaJ": tl.nablaJ}
    QJv = None if QJ is None else float(QJ)
    if QJv is not None and not math.isfinite(QJv):
        errors.append("non-finite Q(J)")
        QJv = None
    return ClassificationReport(spec.label, d.N, entries, margins, deriv, ineq, mJ, mdO, QJv,
                                d.fd, tol_dict, errors + d.errors)
