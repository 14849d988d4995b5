"""Dirichlet convergence tables for every corpus domain and quantity.

    python3 scripts/convergence.py --levels 4
"""
import argparse
import json
from pathlib import Path

from torsionlab.harness import DEFAULT_CORPUS, QUANTITIES, convergence_study, default_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--mesh-size", type=float, default=0.1)
    ap.add_argument("--out", default="out/convergence")
    args = ap.parse_args()

    cfg = default_config(refinement_levels=args.levels, mesh_size=args.mesh_size)
    tables = []
    for spec in DEFAULT_CORPUS:
        for q in QUANTITIES:
            t = convergence_study(cfg, q, spec)
            tables.append(t.to_dict())
            ref = "" if t.reference is None else f"  final error {t.errors[-1]:.2e}"
            print(f"{t.domain:<28} {q:<9} order {t.estimated_order:5.2f}{ref}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.json").write_text(json.dumps(tables, indent=1))


if __name__ == "__main__":
    main()
