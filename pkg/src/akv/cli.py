"""Command-line driver.

Exit codes: 0 when every check passed, 1 when at least one failed, 2 on a
configuration, parse or I/O error.
"""
import argparse
from dataclasses import asdict, dataclass, field
import os
import sys

from . import identities, quadrature, report, theorems, zoo
from .errors import AKVError
from .fd import FDConfig

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

TOL_CLASSES = ("algebraic", "first_order", "second_order", "ricci_second_order", "dim4_only")


@dataclass
class RunConfig:
    command: str
    manifold: str = None
    manifest: str = None
    grid: int = None
    points: int = 16
    fd_step: float = 1e-3
    richardson: bool = False
    pure_fd: bool = False
    tolerances: dict = field(default_factory=dict)
    tol_integral: float = 1e-4
    tol_divergence: float = 1e-6
    identities: str = None
    seed: int = 0
    output: str = None
    format: str = "json"
    dim: int = None

    def __post_init__(self):
        if self.grid is not None and self.grid < 4:
            raise ValueError("--grid must be at least 4")
        if not 0 < self.fd_step < 0.1:
            raise ValueError("--fd-step must lie in (0, 0.1)")
        if self.points is not None and self.points < 1:
            raise ValueError("--points must be positive")
        if self.format not in ("json", "text"):
            raise ValueError("--format must be json or text")

    @property
    def fd(self):
        return FDConfig(step=self.fd_step, richardson=self.richardson, use_analytic=not self.pure_fd)

    def to_dict(self):
        d = asdict(self)
        d.pop("output")
        d["fd"] = self.fd.to_dict()
        return d


def build_parser():
    p = argparse.ArgumentParser(prog="akv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid_default=None):
        sp.add_argument("--manifold", help="built-in name or manifest path")
        sp.add_argument("--manifest", help="manifest path")
        sp.add_argument("--grid", type=int, default=grid_default, help="points per axis")
        sp.add_argument("--fd-step", type=float, default=1e-3)
        sp.add_argument("--richardson", action="store_true")
        sp.add_argument("--pure-fd", action="store_true", help="ignore analytic jets")
        for cls in TOL_CLASSES:
            sp.add_argument(f"--tol-{cls.replace('_', '-')}", type=float, default=None,
                            dest=f"tol_{cls}")
        sp.add_argument("--tol-integral", type=float, default=1e-4)
        sp.add_argument("--tol-divergence", type=float, default=1e-6)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output")
        sp.add_argument("--format", choices=("json", "text"), default="json")

    c = sub.add_parser("check", help="run the pointwise identity suite")
    common(c)
    c.add_argument("--points", type=int, default=16, help="random sample size")
    c.add_argument("--identities", help="comma-separated equation tags")
    common(sub.add_parser("integrate", help="integral formulas and Q(J)"), grid_default=8)
    common(sub.add_parser("classify", help="theorem hypotheses and consistency"), grid_default=8)
    ls = sub.add_parser("list", help="list identities and built-in manifolds")
    ls.add_argument("--dim", type=int, default=4)
    ls.add_argument("--output")
    ls.add_argument("--format", choices=("json", "text"), default="text")
    return p


def config_from_args(ns):
    tol = {cls: getattr(ns, f"tol_{cls}", None) for cls in TOL_CLASSES}
    return RunConfig(
        command=ns.command,
        manifold=getattr(ns, "manifold", None),
        manifest=getattr(ns, "manifest", None),
        grid=getattr(ns, "grid", None),
        points=getattr(ns, "points", None),
        fd_step=getattr(ns, "fd_step", 1e-3),
        richardson=getattr(ns, "richardson", False),
        pure_fd=getattr(ns, "pure_fd", False),
        tolerances={k: v for k, v in tol.items() if v is not None},
        tol_integral=getattr(ns, "tol_integral", 1e-4),
        tol_divergence=getattr(ns, "tol_divergence", 1e-6),
        identities=getattr(ns, "identities", None),
        seed=getattr(ns, "seed", 0),
        output=ns.output,
        format=ns.format,
        dim=getattr(ns, "dim", None),
    )


def resolve_spec(cfg):
    """Built-in name or manifest path; manifest errors propagate with their location."""
    if cfg.manifest:
        return zoo.load_manifest(cfg.manifest)
    name = cfg.manifold
    if not name:
        raise ValueError("one of --manifold or --manifest is required")
    if name in zoo.BUILTINS:
        return zoo.builtin(name).spec
    if os.path.exists(name):
        return zoo.load_manifest(name)
    raise ValueError(f"unknown manifold {name!r}; built-ins: {', '.join(zoo.BUILTINS)}")


def _check(cfg, spec):
    sampling = ("grid", cfg.grid) if cfg.grid else ("random", cfg.points, cfg.seed)
    rep = identities.run_suite(spec, sampling, cfg.fd, seed=cfg.seed, identities=cfg.identities,
                               tolerances=cfg.tolerances)
    d = rep.to_dict()
    outcomes = d.pop("outcomes")
    summary = {"counts": d["counts"], "failed": d["failed"], "worst": d["worst"],
               "passed": rep.passed, "tolerances": d["tolerances"], "errors": d["errors"],
               "convergence": d["convergence"]}
    doc = report.build_document(spec.label, cfg.to_dict(), outcomes=outcomes, summary=summary)
    return doc, rep.passed


def _integrate(cfg, spec):
    rep = quadrature.integral_identities(spec, cfg.grid, cfg.fd)
    ints = rep.to_dict()
    checks = {
        "eq72": ints["eq72"] <= cfg.tol_integral,
        "eq73": ints["eq73"] <= cfg.tol_integral,
        "eq74": ints["eq74"] <= cfg.tol_integral,
        "div_V2": abs(ints["div_V2"]) <= cfg.tol_divergence,
        "div_V3": abs(ints["div_V3"]) <= cfg.tol_divergence,
    }
    ok = all(checks.values())
    summary = {"checks": checks, "passed": ok, "errors": rep.errors}
    doc = report.build_document(spec.label, cfg.to_dict(), integrals=ints, summary=summary)
    return doc, ok


def _classify(cfg, spec):
    tl = theorems.Tolerances(integral=cfg.tol_integral)
    rep = theorems.classify(spec, cfg.grid, cfg.fd, tl)
    d = rep.to_dict()
    entries = d.pop("entries")
    failed = {e["theorem"]: e["failed_hypotheses"] for e in entries}
    summary = {"consistent": rep.consistent, "verdict": rep.verdict,
               "failed_hypotheses": failed, "passed": rep.consistent}
    doc = report.build_document(spec.label, cfg.to_dict(), classification=entries, summary=summary,
                                extra={"classification_detail": d})
    return doc, rep.consistent


def _list(cfg):
    rows = [{"id": c.id, "class": c.klass, "description": c.description}
            for c in identities.list_identities(cfg.dim)]
    doc = report.build_document("registry", cfg.to_dict(), summary={
        "identities": rows, "builtins": list(zoo.BUILTINS)})
    if cfg.format == "text":
        lines = [f"{r['id']:<7} {r['class']:<19} {r['description']}" for r in rows]
        lines.append("")
        lines.append("built-in manifolds: " + ", ".join(zoo.BUILTINS))
        return "\n".join(lines) + "\n", doc
    return None, doc


def run_cli(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = config_from_args(ns)
        if cfg.command == "list":
            text, doc = _list(cfg)
            if text is not None:
                if cfg.output:
                    report.write_atomic(cfg.output, text)
                else:
                    stdout.write(text)
            else:
                report.emit_report(doc, "json", cfg.output, stdout)
            return EXIT_OK
        spec = resolve_spec(cfg)
        runner = {"check": _check, "integrate": _integrate, "classify": _classify}[cfg.command]
        doc, ok = runner(cfg, spec)
    except (AKVError, ValueError, KeyError) as exc:
        stderr.write(f"akv: error: {exc}\n")
        return EXIT_CONFIG
    try:
        report.emit_report(doc, cfg.format, cfg.output, stdout)
    except OSError as exc:
        stderr.write(f"akv: error: cannot write report: {exc}\n")
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_FAIL


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
