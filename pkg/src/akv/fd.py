"""Central finite-difference stencils for partial derivatives of chart fields."""
from dataclasses import dataclass, asdict
from functools import lru_cache
from math import factorial

import numpy as np


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference settings.

    ``step`` is relative to the per-axis scale of the chart domain (the period
    on periodic axes). Nested Ricci derivatives use ``outer_factor * step``.
    """

    step: float = 1e-3
    accuracy: int = 4
    richardson: bool = False
    outer_factor: float = 10.0
    use_analytic: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("fd step must be positive")
        if self.accuracy not in (2, 4, 6):
            raise ValueError("accuracy must be 2, 4 or 6")

    def to_dict(self):
        return asdict(self)

    def with_step(self, step):
        return FDConfig(step, self.accuracy, self.richardson, self.outer_factor, self.use_analytic)


@lru_cache(maxsize=None)
def central_weights(deriv, accuracy):
    """Offsets ``-p..p`` and weights of the central stencil for ``d^deriv/dx^deriv``."""
    p = (deriv + 1) // 2 - 1 + accuracy // 2
    s = np.arange(-p, p + 1, dtype=float)
    V = np.vander(s, increasing=True).T
    rhs = np.zeros(len(s))
    rhs[deriv] = factorial(deriv)
    w = np.linalg.solve(V, rhs)
    w[np.abs(w) < 1e-14] = 0.0
    return tuple(int(v) for v in s), tuple(w)


class Stencil:
    """Integer lattice offsets with weights for first and second partials.

    Weights are for unit step; divide by ``h_i`` (and ``h_i h_j``) on use.
    """

    def __init__(self, n, accuracy=4, order=2):
        self.n = n
        self.order = order
        pts = {}

        def add(off):
            off = tuple(off)
            if off not in pts:
                pts[off] = len(pts)
            return pts[off]

        add((0,) * n)
        s1, w1 = central_weights(1, accuracy)
        entries1 = []
        for i in range(n):
            for s, w in zip(s1, w1):
                if w == 0.0:
                    continue
                off = [0] * n
                off[i] = s
                entries1.append((add(off), i, w))
        entries2 = []
        if order >= 2:
            s2, w2 = central_weights(2, accuracy)
            for i in range(n):
                for s, w in zip(s2, w2):
                    if w == 0.0:
                        continue
                    off = [0] * n
                    off[i] = s
                    entries2.append((add(off), i, i, w))
                for j in range(i + 1, n):
                    for sa, wa in zip(s1, w1):
                        for sb, wb in zip(s1, w1):
                            if wa == 0.0 or wb == 0.0:
                                continue
                            off = [0] * n
                            off[i] = sa
                            off[j] = sb
                            m = add(off)
                            entries2.append((m, i, j, wa * wb))
                            entries2.append((m, j, i, wa * wb))
        self.index = pts
        self.offsets = np.array(list(pts.keys()), dtype=float)
        M = len(pts)
        self.W1 = np.zeros((M, n))
        for m, i, w in entries1:
            self.W1[m, i] += w
        self.W2 = np.zeros((M, n, n))
        for m, i, j, w in entries2:
            self.W2[m, i, j] += w

    def __len__(self):
        return len(self.offsets)


@lru_cache(maxsize=None)
def stencil(n, accuracy=4, order=2):
    return Stencil(n, accuracy, order)


def apply_stencil(values, st, h):
    """Turn stencil samples ``values[P, M, ...]`` into (centre, d1, d2).

    ``d1[P, i, ...]`` and ``d2[P, i, j, ...]``; ``d2`` is None for order-1 stencils.
    """
    h = np.asarray(h, dtype=float)
    P, M = values.shape[:2]
    tail = values.shape[2:]
    n = st.n
    flat = values.reshape(P, M, -1)
    centre = values[:, 0]
    d1 = (st.W1.T @ flat).reshape((P, n) + tail)
    d1 = d1 / h.reshape((1, -1) + (1,) * len(tail))
    d2 = None
    if st.order >= 2:
        d2 = (st.W2.reshape(M, n * n).T @ flat).reshape((P, n, n) + tail)
        hh = np.outer(h, h).reshape((1,) + (n,) * 2 + (1,) * len(tail))
        d2 = d2 / hh
    return centre, d1, d2


def partials(fn, X, h, accuracy=4, order=2):
    """Value, first and second partials of ``fn`` at points ``X[P, n]``.

    ``fn`` maps an array of points ``[..., n]`` to values ``[..., *shape]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[-1]
    st = stencil(n, accuracy, order)
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    pts = X[:, None, :] + st.offsets[None, :, :] * h[None, None, :]
    vals = fn(pts)
    return apply_stencil(vals, st, h)


def richardson_partials(fn, X, h, accuracy=4, order=2):
    """Partials with one Richardson step combining ``h`` and ``h/2``."""
    c0, a1, a2 = partials(fn, X, h, accuracy, order)
    _, b1, b2 = partials(fn, X, np.asarray(h) / 2, accuracy, order)
    f = 2.0 ** accuracy
    d1 = (f * b1 - a1) / (f - 1)
    d2 = None if a2 is None else (f * b2 - a2) / (f - 1)
    return c0, d1, d2
