"""Built-in example manifolds and the plain-text manifest parser.

Built-in entries carry exact partial derivatives generated symbolically
(sympy) and lambdified to numpy.  Manifest specs are evaluated through a
small whitelisted expression language and use finite differences.
"""
import ast
import math
import re
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from . import chart
from .chart import Domain, ManifoldSpec
from .errors import ChartDomainError, ManifestError, StructureError
from .fd import FDConfig
from .point_algebra import structure_residuals, check_metric


# --------------------------------------------------------------------------- symbolic jets

class _ArrayFunction:
    """Numpy evaluator for a sympy array in the given coordinates.

    Constant entries are filled once; only the remaining entries are
    lambdified, which keeps evaluation cheap for sparse derivative arrays.
    """

    def __init__(self, coords, array):
        arr = sp.Array(array)
        self.shape = tuple(arr.shape)
        flat = [sp.simplify(e) for e in sp.flatten(arr)]
        self.const = np.array([float(e) if e.is_number else 0.0 for e in flat])
        self.live = [k for k, e in enumerate(flat) if not e.is_number]
        self.fn = sp.lambdify(coords, [flat[k] for k in self.live], "numpy") if self.live else None

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        batch = X.shape[:-1]
        out = np.broadcast_to(self.const, batch + self.const.shape).copy()
        if self.fn is not None:
            vals = self.fn(*np.moveaxis(X, -1, 0))
            for k, v in zip(self.live, vals):
                out[..., k] = v
        return out.reshape(batch + self.shape)


class SymbolicFields:
    """g and J given as sympy matrices together with their exact partials."""

    def __init__(self, coords, g, J):
        self.coords = tuple(coords)
        g = sp.Array(sp.Matrix(g))
        J = sp.Array(sp.Matrix(J))
        dg = sp.derive_by_array(g, self.coords)
        dJ = sp.derive_by_array(J, self.coords)
        self.g = _ArrayFunction(self.coords, g)
        self.J = _ArrayFunction(self.coords, J)
        self.dg = _ArrayFunction(self.coords, dg)
        self.dJ = _ArrayFunction(self.coords, dJ)
        self.ddg = _ArrayFunction(self.coords, sp.derive_by_array(dg, self.coords))
        self.ddJ = _ArrayFunction(self.coords, sp.derive_by_array(dJ, self.coords))
        self.g_expr = g
        self.J_expr = J

    def jets(self, X, order=2):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = {"g": self.g(X), "dg": self.dg(X), "J": self.J(X), "dJ": self.dJ(X)}
        if order >= 2:
            out["ddg"] = self.ddg(X)
            out["ddJ"] = self.ddJ(X)
        return out


# --------------------------------------------------------------------------- zoo entries

@dataclass(frozen=True)
class OracleValue:
    value: object
    derivation: str


@dataclass(frozen=True, eq=False)
class ZooEntry:
    spec: ManifoldSpec
    oracle: dict = field(default_factory=dict)
    is_kahler: bool = False
    is_compact_periodic: bool = False
    frame: object = None  # x -> E[P, a, k]; columns are an orthonormal frame


def _symbolic_spec(name, coords, g, J, domain, compact, almost_kahler=True, chart_check=None):
    fields = SymbolicFields(coords, g, J)
    spec = ManifoldSpec(
        dim=len(coords), domain=domain, g_fn=fields.g, J_fn=fields.J,
        analytic_jets=fields.jets, label=name, compact=compact,
        almost_kahler=almost_kahler, chart_check=chart_check,
    )
    return spec, fields


def _standard_J(n):
    J = sp.zeros(n, n)
    for b in range(0, n, 2):
        J[b + 1, b] = 1
        J[b, b + 1] = -1
    return J


def make_flat_torus(m):
    """Unit flat torus T^{2m} with the standard complex structure."""
    if m < 1:
        raise ValueError("m must be at least 1")
    n = 2 * m
    coords = sp.symbols(f"x1:{n + 1}", real=True)
    spec, _ = _symbolic_spec(
        f"flat-torus-{n}", coords, sp.eye(n), _standard_J(n),
        Domain((0.0,) * n, (1.0,) * n, periodic=True), compact=True,
    )
    zero = np.zeros((n, n))
    oracle = {
        "S": OracleValue(0.0, "flat metric"),
        "SStar": OracleValue(0.0, "flat metric"),
        "nablaOmega_sq": OracleValue(0.0, "constant coefficients"),
        "Ric_frame": OracleValue(zero, "flat metric"),
        "Q": OracleValue(0.0, "flat metric"),
        "volume": OracleValue(1.0, "unit periods"),
    }
    return ZooEntry(spec, oracle, is_kahler=True, is_compact_periodic=True,
                    frame=lambda X: np.broadcast_to(np.eye(n), np.shape(X)[:-1] + (n, n)))


def _kt_frame_sym(x):
    """Columns e1..e4 dual to dx, dy, dz - x dy, dt."""
    return sp.Matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, x, 1, 0], [0, 0, 0, 1]])


def _kt_frame(X):
    X = np.asarray(X, dtype=float)
    E = np.broadcast_to(np.eye(4), X.shape[:-1] + (4, 4)).copy()
    E[..., 2, 1] = X[..., 0]
    return E


def make_kodaira_thurston(broken=False):
    """Kodaira-Thurston nilmanifold, coordinates (x, y, z, t) on [0, 1]^4.

    g = dx^2 + dy^2 + (dz - x dy)^2 + dt^2.  The default structure has
    J e1 = e3, J e2 = e4 in the orthonormal frame, so that
    Omega = e^1 ^ e^3 + e^2 ^ e^4 is closed.  ``broken=True`` uses
    J e1 = e2, J e3 = e4 instead, which is almost Hermitian with dOmega != 0.
    """
    x, y, z, t = coords = sp.symbols("x y z t", real=True)
    E = _kt_frame_sym(x)
    Einv = E.inv()
    g = Einv.T * Einv
    Jf = sp.zeros(4, 4)
    pairs = [(0, 1), (2, 3)] if broken else [(0, 2), (1, 3)]
    for a, b in pairs:
        Jf[b, a] = 1
        Jf[a, b] = -1
    J = sp.simplify(E * Jf * Einv)
    name = "kodaira-thurston-broken" if broken else "kodaira-thurston"
    spec, _ = _symbolic_spec(
        name, coords, g, J, Domain((0.0,) * 4, (1.0,) * 4, periodic=True),
        compact=True, almost_kahler=not broken,
    )
    if broken:
        return ZooEntry(spec, {"volume": OracleValue(1.0, "det g = 1")},
                        is_kahler=False, is_compact_periodic=True, frame=_kt_frame)
    oc = "left-invariant frame connection, computed symbolically"
    oracle = {
        "S": OracleValue(-0.5, oc),
        "SStar": OracleValue(0.5, oc),
        "nablaOmega_sq": OracleValue(1.0, oc),
        "nablaJ_sq": OracleValue(2.0, oc),
        "tildeRic_frame": OracleValue(np.eye(4) / 8, oc),
        "Ric_frame": OracleValue(np.diag([-0.5, -0.5, 0.5, 0.0]), oc),
        "RicPlus_frame": OracleValue(np.diag([0.0, -0.25, 0.0, -0.25]), oc),
        "RicStarPlus_frame": OracleValue(np.diag([0.25, 0.0, 0.25, 0.0]), oc),
        "qJ": OracleValue(-0.75, oc),
        "phi_psi": OracleValue(-0.375, oc),
        "tildeR_sq": OracleValue(0.625, oc),
        "Q": OracleValue(-0.75, oc + "; constant density over unit volume"),
        "volume": OracleValue(1.0, "e1^e2^e3^e4 = dx^dy^dz^dt"),
    }
    return ZooEntry(spec, oracle, is_kahler=False, is_compact_periodic=True, frame=_kt_frame)


#: stereographic coordinates further out than this are rejected
SPHERE_CHART_RADIUS = 10.0


def make_product_spheres(r1=1.0, r2=1.0):
    """S^2(r1) x S^2(r2) in a product of stereographic charts.

    Pointwise use only: the chart box [-1, 1]^4 is not a fundamental domain.
    """
    if not (r1 > 0 and r2 > 0):
        raise ValueError("radii must be positive")
    u1, u2, v1, v2 = coords = sp.symbols("u1 u2 v1 v2", real=True)
    r1s, r2s = sp.nsimplify(r1), sp.nsimplify(r2)
    l1 = 4 * r1s**2 / (1 + u1**2 + u2**2) ** 2
    l2 = 4 * r2s**2 / (1 + v1**2 + v2**2) ** 2
    g = sp.diag(l1, l1, l2, l2)

    def chart_check(X):
        X = np.asarray(X, dtype=float)
        rad = np.maximum(np.hypot(X[..., 0], X[..., 1]), np.hypot(X[..., 2], X[..., 3]))
        if np.any(rad > SPHERE_CHART_RADIUS):
            raise ChartDomainError(
                f"point outside the stereographic chart radius {SPHERE_CHART_RADIUS}"
            )

    spec, _ = _symbolic_spec(
        f"product-spheres-{r1:g}-{r2:g}", coords, g, _standard_J(4),
        Domain((-1.0,) * 4, (1.0,) * 4, periodic=False), compact=True,
        chart_check=chart_check,
    )
    c = "constant curvature 1/r^2 on each factor"
    ric = np.diag([1 / r1**2, 1 / r1**2, 1 / r2**2, 1 / r2**2])
    oracle = {
        "S": OracleValue(2 / r1**2 + 2 / r2**2, c),
        "SStar": OracleValue(2 / r1**2 + 2 / r2**2, c + "; Kahler"),
        "nablaOmega_sq": OracleValue(0.0, "Kahler"),
        "Ric_frame": OracleValue(ric, c),
        "Ric_eigenvalues": OracleValue(np.sort(np.diag(ric)), c),
    }

    def frame(X):
        X = np.asarray(X, dtype=float)
        a = np.sqrt(4 * r1**2 / (1 + X[..., 0] ** 2 + X[..., 1] ** 2) ** 2)
        b = np.sqrt(4 * r2**2 / (1 + X[..., 2] ** 2 + X[..., 3] ** 2) ** 2)
        E = np.zeros(X.shape[:-1] + (4, 4))
        E[..., 0, 0] = E[..., 1, 1] = 1 / a
        E[..., 2, 2] = E[..., 3, 3] = 1 / b
        return E

    return ZooEntry(spec, oracle, is_kahler=True, is_compact_periodic=False, frame=frame)


BUILTINS = {
    "flat-torus-2": lambda: make_flat_torus(1),
    "flat-torus-4": lambda: make_flat_torus(2),
    "flat-torus-6": lambda: make_flat_torus(3),
    "kodaira-thurston": lambda: make_kodaira_thurston(),
    "kodaira-thurston-broken": lambda: make_kodaira_thurston(broken=True),
    "product-spheres": lambda: make_product_spheres(1.0, 1.0),
    "product-spheres-1-2": lambda: make_product_spheres(1.0, 2.0),
}

_CACHE = {}


def builtin(name):
    """Zoo entry by name; entries are built once and shared."""
    if name not in BUILTINS:
        raise KeyError(f"unknown built-in manifold {name!r}; known: {', '.join(sorted(BUILTINS))}")
    if name not in _CACHE:
        _CACHE[name] = BUILTINS[name]()
    return _CACHE[name]


def to_frame(A, E):
    """Frame components ``E^{-1} A E`` of endomorphisms ``A[P, a, b]``."""
    return np.linalg.solve(E, A @ E)


# --------------------------------------------------------------------------- manifests

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
           ast.Div: np.divide, ast.Pow: np.power}


def compile_expression(text, n, line=None, col_offset=0):
    """Compile a manifest expression into ``f(X[..., n]) -> array``.

    Allowed: numbers, ``pi``, ``x1 .. xn``, ``+ - * / **``, unary minus,
    and calls to ``sin``, ``cos``, ``exp``.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ManifestError(f"syntax error in expression {text.strip()!r}", line,
                            col_offset + (exc.offset or 1)) from None

    def fail(node, msg):
        raise ManifestError(msg, line, col_offset + getattr(node, "col_offset", 0) + 1)

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                fail(node, f"unsupported constant {node.value!r}")
            v = float(node.value)
            return lambda X: v
        if isinstance(node, ast.Name):
            if node.id == "pi":
                return lambda X: math.pi
            m = re.fullmatch(r"x([1-9][0-9]*)", node.id)
            if not m or int(m.group(1)) > n:
                fail(node, f"unknown variable {node.id!r}")
            k = int(m.group(1)) - 1
            return lambda X: X[..., k]
        if isinstance(node, ast.BinOp):
            op = _BINOPS.get(type(node.op))
            if op is None:
                fail(node, "unsupported operator")
            a, b = build(node.left), build(node.right)
            return lambda X: op(a(X), b(X))
        if isinstance(node, ast.UnaryOp):
            a = build(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda X: np.negative(a(X))
            if isinstance(node.op, ast.UAdd):
                return a
            fail(node, "unsupported unary operator")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                fail(node, "unsupported function")
            if len(node.args) != 1 or node.keywords:
                fail(node, "functions take exactly one argument")
            f, a = _FUNCS[node.func.id], build(node.args[0])
            return lambda X: f(a(X))
        fail(node, f"unsupported syntax {type(node).__name__}")

    return build(tree)


@dataclass
class Manifest:
    dim: int
    periods: list
    lower: list
    g: dict
    J: dict
    almost_kahler: bool
    label: str


def _parse_manifest_text(text):
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        stripped = line.strip()
        col = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            m = re.fullmatch(r"\[\s*([a-z]+)\s*\]", stripped)
            if not m:
                raise ManifestError(f"malformed section header {stripped!r}", lineno, col)
            current = m.group(1)
            if current not in ("manifold", "metric", "acs", "claims"):
                raise ManifestError(f"unknown section [{current}]", lineno, col)
            if current in sections:
                raise ManifestError(f"duplicate section [{current}]", lineno, col)
            sections[current] = {}
            continue
        if current is None:
            raise ManifestError("entry outside of any section", lineno, col)
        if "=" not in line:
            raise ManifestError("expected 'key = value'", lineno, col)
        key, value = line.split("=", 1)
        key = re.sub(r"\s+", "", key)
        if key in sections[current]:
            raise ManifestError(f"duplicate key {key!r}", lineno, col)
        sections[current][key] = (value, lineno, line.index("=") + 1)
    return sections


def _index_key(key, prefix, n, lineno, col):
    m = re.fullmatch(prefix + r"\.([0-9]+)\.([0-9]+)", key)
    if not m:
        raise ManifestError(f"malformed key {key!r}", lineno, col)
    i, j = int(m.group(1)), int(m.group(2))
    if not (1 <= i <= n and 1 <= j <= n):
        raise ManifestError(f"index out of range in {key!r}", lineno, col)
    return i - 1, j - 1


def read_manifest(text):
    """Syntactic pass: sections, keys and compiled expressions."""
    sec = _parse_manifest_text(text)
    for name in ("manifold", "metric", "acs"):
        if name not in sec:
            raise ManifestError(f"missing section [{name}]")
    man = sec["manifold"]
    if "dim" not in man:
        raise ManifestError("missing 'dim' in [manifold]")
    dval, dline, dcol = man["dim"]
    try:
        n = int(dval.strip())
    except ValueError:
        raise ManifestError("dim must be an integer", dline, dcol + 1) from None
    if n < 2 or n % 2:
        raise ManifestError("dim must be even and at least 2", dline, dcol + 1)
    periods, lower = [None] * n, [0.0] * n
    label = "manifest"
    for key, (value, lineno, col) in man.items():
        if key == "dim":
            continue
        if key == "label":
            label = value.strip()
            continue
        m = re.fullmatch(r"(period|lower)\.([0-9]+)", key)
        if not m or not 1 <= int(m.group(2)) <= n:
            raise ManifestError(f"unknown key {key!r} in [manifold]", lineno, 1)
        v = compile_expression(value, n, lineno, col)(np.zeros(n))
        target = periods if m.group(1) == "period" else lower
        target[int(m.group(2)) - 1] = float(v)
    for k, p in enumerate(periods):
        if p is None:
            raise ManifestError(f"missing period.{k + 1} in [manifold]")
        if not p > 0:
            raise ManifestError(f"period.{k + 1} must be positive")
    g, J = {}, {}
    for name, prefix, target in (("metric", "g", g), ("acs", "J", J)):
        for key, (value, lineno, col) in sec[name].items():
            i, j = _index_key(key, prefix, n, lineno, 1)
            target[(i, j)] = compile_expression(value, n, lineno, col)
    ak = True
    for key, (value, lineno, col) in sec.get("claims", {}).items():
        if key != "almost_kahler":
            raise ManifestError(f"unknown claim {key!r}", lineno, 1)
        v = value.strip().lower()
        if v not in ("true", "false"):
            raise ManifestError("almost_kahler must be true or false", lineno, col + 1)
        ak = v == "true"
    return Manifest(n, periods, lower, g, J, ak, label)


def _field_fn(entries, n, symmetric):
    items = dict(entries)
    if symmetric:
        for (i, j), f in list(items.items()):
            items.setdefault((j, i), f)

    def fn(X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1] + (n, n))
        for (i, j), f in items.items():
            out[..., i, j] = f(X)
        return out

    return fn


#: points at which a parsed manifest is validated
VALIDATION_POINTS = 16


def d_omega_residual(spec, X, fd=FDConfig()):
    """Max over points of the components of dOmega."""
    jet = chart.make_jet(spec, X, 1, fd)
    return np.max(np.abs(chart.exterior_d_omega(jet)), axis=(1, 2, 3))


def validate_spec(spec, count=VALIDATION_POINTS, seed=0, tol=1e-10, fd=FDConfig(), d_omega_tol=1e-6):
    """Raise ``StructureError`` naming the failed residual and the worst point."""
    X = spec.domain.sample(count, seed)
    g = spec.g_fn(X)
    check_metric(g, where=X)
    res = structure_residuals(g, spec.J_fn(X))
    for name, vals in res.items():
        k = int(np.argmax(vals))
        if not vals[k] <= tol * (1 + np.max(np.abs(g))):
            raise StructureError(
                f"almost Hermitian axiom {name} violated: residual {vals[k]:.3e} at {X[k].tolist()}",
                residual=name, point=X[k].tolist(), value=float(vals[k]),
            )
    if spec.almost_kahler:
        d = d_omega_residual(spec, X, fd)
        k = int(np.argmax(d))
        if not d[k] <= d_omega_tol:
            raise StructureError(
                f"claimed almost Kahler but dOmega residual {d[k]:.3e} at {X[k].tolist()}",
                residual="d_omega", point=X[k].tolist(), value=float(d[k]),
            )
    return spec


def parse_manifold(manifest, validate=True):
    """Build a ``ManifoldSpec`` from manifest text.

    Missing metric entries default to 0 and ``g.i.j`` mirrors to ``g.j.i``
    unless both are given.  ``J.i.j`` is the component ``J^i_j``.
    """
    m = read_manifest(manifest)
    n = m.dim
    upper = tuple(lo + p for lo, p in zip(m.lower, m.periods))
    spec = ManifoldSpec(
        dim=n, domain=Domain(tuple(m.lower), upper, periodic=True),
        g_fn=_field_fn(m.g, n, True), J_fn=_field_fn(m.J, n, False),
        label=m.label, compact=True, almost_kahler=m.almost_kahler,
    )
    if validate:
        validate_spec(spec)
    return spec


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return parse_manifold(fh.read())


# --------------------------------------------------------------------------- manifest writers

def _fmt(M, prefix, symmetric):
    lines = []
    n = len(M)
    for i in range(n):
        for j in range(n):
            if symmetric and j < i:
                continue
            if M[i][j] not in ("0", ""):
                lines.append(f"{prefix}.{i + 1}.{j + 1} = {M[i][j]}")
    return lines


def manifest_text(n, g, J, label, almost_kahler=True, periods=None):
    """Serialise string matrices ``g`` and ``J`` into manifest text."""
    periods = periods or [1] * n
    out = ["[manifold]", f"label = {label}", f"dim = {n}"]
    out += [f"period.{k + 1} = {p}" for k, p in enumerate(periods)]
    out += ["", "[metric]"] + _fmt(g, "g", True)
    out += ["", "[acs]"] + _fmt(J, "J", False)
    out += ["", "[claims]", f"almost_kahler = {'true' if almost_kahler else 'false'}", ""]
    return "\n".join(out)


def _twist_blocks(n, a_exprs):
    """Metric and J of S^T S and S^-1 J0 S with S block [[1, 0], [a, 1]].

    Omega is constant, so dOmega = 0 whatever the functions ``a`` are.
    """
    g = [["0"] * n for _ in range(n)]
    J = [["0"] * n for _ in range(n)]
    for b, a in zip(range(0, n, 2), a_exprs):
        if a is None:
            g[b][b] = g[b + 1][b + 1] = "1"
            J[b + 1][b], J[b][b + 1] = "1", "-1"
            continue
        g[b][b] = f"1 + ({a})**2"
        g[b][b + 1] = g[b + 1][b] = f"{a}"
        g[b + 1][b + 1] = "1"
        J[b][b] = f"-({a})"
        J[b][b + 1] = "-1"
        J[b + 1][b] = f"1 + ({a})**2"
        J[b + 1][b + 1] = f"{a}"
    return g, J


def _shear_pullback(n, eps, src, dst):
    """Flat Kahler torus pulled back by x_dst -> x_dst + eps sin(2 pi x_src)."""
    c = f"{eps!r}*2*pi*cos(2*pi*x{src + 1})"
    # g = D^T D for D = I + c E_{dst,src}
    g = [["1" if i == j else "0" for j in range(n)] for i in range(n)]
    g[src][src] = f"1 + ({c})**2"
    g[src][dst] = g[dst][src] = c
    sym = sp.Symbol("c")
    D = sp.eye(n)
    D[dst, src] = sym
    Jsym = D.inv() * _standard_J(n) * D
    J = [[str(sp.expand(Jsym[i, j])).replace("c", f"({c})") for j in range(n)] for i in range(n)]
    return g, J


def perturbation_manifests(count=20, seed=0):
    """Seeded manifest variants: symplectic twists and flat Kahler shears.

    Returns a list of (label, text, is_kahler) triples.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = 4
        if k % 4 == 3:
            src = int(rng.integers(0, n))
            dst = int(rng.choice([j for j in range(n) if j != src]))
            eps = round(float(rng.uniform(0.02, 0.08)), 4)
            g, J = _shear_pullback(n, eps, src, dst)
            label = f"shear-{k:02d}"
            out.append((label, manifest_text(n, g, J, label), True))
            continue
        a_exprs = []
        for _ in range(n // 2):
            eps = round(float(rng.uniform(0.05, 0.3)), 4)
            # depend on the other block's coordinates; a 2-dimensional block
            # alone is always Kahler
            j = int(rng.integers(1, n + 1))
            if (j - 1) // 2 == len(a_exprs):
                j = (j + 1) % n + 1
            theta = round(float(rng.uniform(0, 2 * np.pi)), 4)
            a_exprs.append(f"{eps}*sin(2*pi*x{j} + {theta})")
        if k % 4 == 2:
            a_exprs[1] = None
        g, J = _twist_blocks(n, a_exprs)
        label = f"twist-{k:02d}"
        out.append((label, manifest_text(n, g, J, label), False))
    return out
