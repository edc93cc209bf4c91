"""Classify every built-in manifold and seeded manifest perturbations.

A report is inconsistent when a result's hypotheses all hold but the
measured structure contradicts its conclusion.  Exits 1 on any inconsistency.
"""
import argparse
from dataclasses import asdict, dataclass
import sys
import time

from akv import theorems, zoo


@dataclass
class HarnessConfig:
    grid: int = 4
    perturbations: int = 20
    seed: int = 0
    skip_builtins: bool = False


def main(cfg: HarnessConfig):
    specs = [] if cfg.skip_builtins else [(n, zoo.builtin(n).spec) for n in zoo.BUILTINS]
    specs += [(label, zoo.parse_manifold(text))
              for label, text, _ in zoo.perturbation_manifests(cfg.perturbations, cfg.seed)]
    bad = 0
    for label, spec in specs:
        t = time.perf_counter()
        rep = theorems.classify(spec, cfg.grid)
        held = [e.theorem for e in rep.entries if e.hypotheses_all_hold]
        wrong = [e.theorem for e in rep.entries if not e.consistent]
        bad += len(wrong)
        print(f"{label:<26} {rep.verdict:<24} hypotheses hold: {', '.join(held) or '-'}"
              f"{'  INCONSISTENT: ' + ', '.join(wrong) if wrong else ''}  ({time.perf_counter() - t:.1f}s)")
    print(f"{len(specs)} reports, {bad} inconsistent")
    return 1 if bad else 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--perturbations", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-builtins", action="store_true")
    sys.exit(main(HarnessConfig(**vars(p.parse_args()))))
