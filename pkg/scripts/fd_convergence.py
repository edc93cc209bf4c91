"""Observed finite-difference convergence order of each identity.

Prints the worst residual per identity at each step under pure FD and the
order between consecutive steps (``-`` when both sit at the rounding floor).
"""
import argparse
from dataclasses import asdict, dataclass

import numpy as np

from akv import identities, zoo
from akv.fd import FDConfig


@dataclass
class ConvergenceConfig:
    manifold: str = "kodaira-thurston"
    manifest: str = ""
    klass: str = "first_order"
    steps: str = "4e-3,2e-3,1e-3"
    points: int = 8
    seed: int = 3


def load(cfg):
    if cfg.manifest:
        return zoo.load_manifest(cfg.manifest)
    return zoo.builtin(cfg.manifold).spec


def main(cfg: ConvergenceConfig):
    spec = load(cfg)
    steps = [float(s) for s in cfg.steps.split(",")]
    checks = [c for c in identities.list_identities(spec.dim) if c.klass == cfg.klass]
    X = spec.domain.sample(cfg.points, cfg.seed)
    table = []
    for h in steps:
        ctx = identities.EvalContext(spec, X, FDConfig(step=h, use_analytic=False), cfg.seed)
        table.append({k: float(np.max(v)) for k, v in identities.evaluate(checks, ctx).items()})
    print(f"{spec.label}: {cfg.klass}, steps {steps}")
    for c in checks:
        res = [row[c.id] for row in table]
        ords = [identities.convergence_order(a, b, h0 / h1)
                for a, b, h0, h1 in zip(res, res[1:], steps, steps[1:])]
        shown = " ".join("-" if o is None else f"{o:5.2f}" for o in ords)
        print(f"  {c.id:<6} " + " ".join(f"{r:.2e}" for r in res) + f"   order {shown}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, value in asdict(ConvergenceConfig()).items():
        p.add_argument(f"--{name}", type=type(value), default=value)
    main(ConvergenceConfig(**vars(p.parse_args())))
