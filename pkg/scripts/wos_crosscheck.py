"""Compare the FEM torsion function with walk-on-spheres exit times at a few interior points.

    python3 scripts/wos_crosscheck.py --domain l_shape --walks 50000
"""
import argparse

import numpy as np

from torsionlab.geometry import make_canonical_domain, refine_n, triangulate
from torsionlab.linear import BoundaryCondition, solve_torsion
from torsionlab.wos import distance_to_boundary, wos_exit_time

DOMAINS = {
    "square": ("unit_square", ()),
    "l_shape": ("l_shape", ()),
    "disk": ("disk_polygon", (1.0, 256)),
    "annulus": ("annulus_polygon", (0.5, 1.0, 256)),
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--domain", choices=sorted(DOMAINS), default="l_shape")
    ap.add_argument("--walks", type=int, default=50_000)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--points", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    dom = make_canonical_domain(*DOMAINS[args.domain])
    mesh = refine_n(triangulate(dom, 0.1 * dom.diameter), args.levels - 1)
    u = solve_torsion(mesh, BoundaryCondition.dirichlet(), with_eigen=False).field

    rng = np.random.default_rng(args.seed)
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    pts = []
    while len(pts) < args.points:
        x = lo + rng.random(2) * (hi - lo)
        if distance_to_boundary(dom, x) > 0.05 * dom.diameter:
            pts.append(x)
    pts = np.array(pts)
    fem = u.at(pts)
    print(f"{'x':>8} {'y':>8} {'fem':>10} {'wos':>10} {'se':>9} {'z':>6}")
    for x, f in zip(pts, fem):
        est = wos_exit_time(dom, x, args.walks, seed=args.seed, workers=args.workers)
        z = (est.mean - f) / est.standard_error
        print(f"{x[0]:8.4f} {x[1]:8.4f} {f:10.6f} {est.mean:10.6f} {est.standard_error:9.2e} {z:6.2f}")


if __name__ == "__main__":
    main()
