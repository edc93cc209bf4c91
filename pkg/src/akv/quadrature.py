"""Periodic quadrature over fundamental domains and the integral formulas.

The volume form is evaluated as ``sqrt(det g) dx``; the rule is the uniform
left-endpoint (periodic trapezoid) rule, summed with ``math.fsum`` in grid
order so results do not depend on chunking or threads.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import chart
from .errors import UnsupportedDomainError
from .fd import FDConfig
from .point_algebra import endo_inner, form_inner

#: grid points per evaluation chunk when densities need curvature data
DENSITY_CHUNK = 2048


@dataclass(frozen=True)
class GridSpec:
    N: int
    rule: str = "periodic-trapezoid"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4:
            raise ValueError("grid needs at least 4 points per axis")
        if self.rule != "periodic-trapezoid":
            raise ValueError(f"unsupported quadrature rule {self.rule!r}")


def _grid(grid):
    return grid if isinstance(grid, GridSpec) else GridSpec(int(grid))


def require_eligible(spec):
    if not spec.quadrature_eligible:
        raise UnsupportedDomainError(
            f"{spec.label}: no periodic fundamental domain, global quadrature unavailable"
        )


def cell_volume(spec, N):
    return float(np.prod(spec.domain.scale)) / N ** spec.dim


def weighted_sum(values, sqrt_det_g, cell):
    """``sum f sqrt(det g) * cell`` with compensated summation."""
    terms = np.asarray(values, dtype=float) * np.asarray(sqrt_det_g, dtype=float)
    return math.fsum(terms.ravel().tolist()) * cell


def integrate(spec, f, grid):
    """``int f omega`` over the fundamental domain.

    ``f`` maps points ``[P, n]`` to values ``[P]``.
    """
    require_eligible(spec)
    grid = _grid(grid)
    X = spec.domain.grid(grid.N)
    vals = np.asarray(f(X), dtype=float).reshape(len(X))
    sg = np.sqrt(np.linalg.det(spec.g_fn(X)))
    return weighted_sum(vals, sg, cell_volume(spec, grid.N))


def volume(spec, grid):
    return integrate(spec, lambda X: np.ones(len(X)), grid)


# --------------------------------------------------------------------------- densities

DENSITY_KEYS = ("qJ", "two_phi_psi", "eq73", "eq74_rest", "divV2", "divV3", "one")


def curvature_densities(bundle, rj):
    """Pointwise integrands of the integral formulas from one bundle and Ricci jet."""
    b = bundle
    g, ginv = b.g, b.ginv

    def en(A, B):
        return endo_inner(A, B, g, ginv)

    tR = chart.curvature_norm_sq(b.tildeR, g, ginv)
    rho_phi = form_inner(b.rho, b.phi, ginv, check=False)
    eq73 = tR + en(b.RicStar, b.RicStar) - en(b.Ric, b.Ric) - 2 * rho_phi
    eq74 = tR + en(b.RicStarMinus, b.RicStarMinus) + 2 * en(b.RicStarPlus, b.tildeRic)
    return {
        "qJ": rj.qJ, "two_phi_psi": 2 * rj.phi_psi, "eq73": eq73, "eq74_rest": eq74,
        "divV2": rj.divV2, "divV3": rj.divV3, "one": np.ones(len(g)),
        "sqrt_det_g": b.sqrt_det_g,
    }


def grid_densities(spec, N, fd=FDConfig(), threads=None):
    """All integrands on the ``N``-point grid, evaluated chunkwise in grid order."""
    X = spec.domain.grid(N)

    def work(Xc):
        b = chart.curvature_bundle(spec, Xc, fd)
        rj = chart.ricci_jet(spec, Xc, fd, bundle=b, threads=1)
        return curvature_densities(b, rj)

    parts = chart.map_chunks(work, X, DENSITY_CHUNK, threads)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _coarsen(values, n, N):
    """Values on the ``N/2`` grid, which is every other point of the ``N`` grid."""
    idx = (slice(None, None, 2),) * n
    return values.reshape((N,) * n)[idx].ravel()


@dataclass
class IntegralReport:
    label: str
    N: int
    values: dict
    coarse_values: dict
    fd: dict
    notes: list = field(default_factory=list)

    @property
    def errors(self):
        """Refinement estimates ``|value(N) - value(N/2)|``."""
        return {k: abs(self.values[k] - self.coarse_values[k]) for k in self.values}

    @property
    def QJ(self):
        return (self.values["QJ_q"], self.values["QJ_phi_psi"])

    @property
    def eq72_residual(self):
        return abs(self.values["QJ_q"] - self.values["QJ_phi_psi"])

    @property
    def eq73_residual(self):
        return abs(self.values["eq73"])

    @property
    def eq74_residual(self):
        return abs(self.values["QJ_q"] + self.values["eq74_rest"])

    @property
    def div_V2(self):
        return self.values["div_V2"]

    @property
    def div_V3(self):
        return self.values["div_V3"]

    def to_dict(self):
        return {
            "N": self.N,
            "QJ": list(self.QJ),
            "eq72": self.eq72_residual,
            "eq73": self.eq73_residual,
            "eq74": self.eq74_residual,
            "div_V2": self.div_V2,
            "div_V3": self.div_V3,
            "volume": self.values["volume"],
            "refinement": {k: [self.values[k], self.coarse_values[k]]
                           for k in sorted(self.values)},
            "fd": self.fd,
            "notes": list(self.notes),
        }


_VALUE_KEYS = {
    "QJ_q": "qJ", "QJ_phi_psi": "two_phi_psi", "eq73": "eq73", "eq74_rest": "eq74_rest",
    "div_V2": "divV2", "div_V3": "divV3", "volume": "one",
}


def integral_identities(spec, grid, fd=FDConfig(), threads=None):
    """Both evaluations of Q(J), the two integral formulas and divergence checks."""
    require_eligible(spec)
    grid = _grid(grid)
    N, n = grid.N, spec.dim
    dens = grid_densities(spec, N, fd, threads)
    sg = dens["sqrt_det_g"]
    values = {k: weighted_sum(dens[src], sg, cell_volume(spec, N)) for k, src in _VALUE_KEYS.items()}
    notes = []
    if N % 2 == 0:
        sgc = _coarsen(sg, n, N)
        cell = cell_volume(spec, N // 2)
        coarse = {k: weighted_sum(_coarsen(dens[src], n, N), sgc, cell)
                  for k, src in _VALUE_KEYS.items()}
    else:
        cd = grid_densities(spec, N // 2, fd, threads)
        cell = cell_volume(spec, N // 2)
        coarse = {k: weighted_sum(cd[src], cd["sqrt_det_g"], cell) for k, src in _VALUE_KEYS.items()}
    if not spec.almost_kahler:
        notes.append("structure is not almost Kahler; the integral formulas need not hold")
    return IntegralReport(spec.label, N, values, coarse, fd.to_dict(), notes)


def big_Q(spec, grid, fd=FDConfig(), threads=None):
    """``(int q(J) omega, 2 int <varphi, psi> omega)``."""
    rep = integral_identities(spec, grid, fd, threads)
    return rep.QJ
