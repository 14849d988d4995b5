"""Walk-on-spheres estimates of the Dirichlet torsion function u(x) = E_x[exit time].

The Brownian motion has generator Laplacian, so the mean exit time from a
disk of radius r started at its center is r^2 / (2m) with m = 2. This module
shares no code with the finite element solvers.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .geometry import PolygonalDomain, RadialDomain

__all__ = ["WosEstimate", "CappedWalkWarning", "distance_to_boundary", "wos_exit_time"]

STEP_CAP = 10_000
CHUNK = 4096


class CappedWalkWarning(UserWarning):
    """Some walks reached the step cap and were left out of the estimate."""


@dataclass(frozen=True)
class WosEstimate:
    point: tuple[float, float]
    mean: float
    standard_error: float
    n_walks: int
    eps_shell: float
    n_capped: int = 0
    mean_steps: float = 0.0


# geometry kernels ------------------------------------------------------------------
# kind 0: polygon given by segments; kind 1: disk of radius r1; kind 2: annulus r0 < |x| < r1


@numba.njit(cache=True, nogil=True)
def _dist(x, y, kind, segs, r0, r1):
    if kind == 1:
        return r1 - math.sqrt(x * x + y * y)
    if kind == 2:
        rho = math.sqrt(x * x + y * y)
        return min(rho - r0, r1 - rho)
    best = 1e300
    for s in range(segs.shape[0]):
        ax, ay = segs[s, 0, 0], segs[s, 0, 1]
        dx, dy = segs[s, 1, 0] - ax, segs[s, 1, 1] - ay
        px, py = x - ax, y - ay
        t = (px * dx + py * dy) / (dx * dx + dy * dy)
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx, qy = px - t * dx, py - t * dy
        d2 = qx * qx + qy * qy
        if d2 < best:
            best = d2
    return math.sqrt(best)


@numba.njit(cache=True, nogil=True)
def _walk_chunk(x0, y0, n, seed, eps, cap, kind, segs, r0, r1, out, steps):
    np.random.seed(seed)
    for i in range(n):
        x, y = x0, y0
        acc = 0.0
        k = 0
        while True:
            d = _dist(x, y, kind, segs, r0, r1)
            if d < eps:
                break
            if k >= cap:
                acc = -1.0  # marks a capped walk
                break
            acc += d * d / 4.0
            phi = 2.0 * math.pi * np.random.random()
            x += d * math.cos(phi)
            y += d * math.sin(phi)
            k += 1
        out[i] = acc
        steps[i] = k


def _geometry(domain):
    if isinstance(domain, RadialDomain):
        if domain.dimension != 2:
            raise ValueError("walk-on-spheres is implemented for planar domains")
        kind = 1 if domain.kind == "ball" else 2
        return kind, np.zeros((0, 2, 2)), float(domain.inner_radius), float(domain.outer_radius)
    if isinstance(domain, PolygonalDomain):
        return 0, np.ascontiguousarray(domain.segments(), dtype=float), 0.0, 0.0
    raise TypeError(f"unsupported domain type {type(domain).__name__}")


def _inside(domain, pts: np.ndarray) -> np.ndarray:
    if isinstance(domain, RadialDomain):
        rho = np.linalg.norm(pts, axis=1)
        inner = rho > domain.inner_radius if domain.kind == "shell" else True
        return (rho < domain.outer_radius) & inner
    return domain.contains(pts)


def distance_to_boundary(domain, x) -> np.ndarray | float:
    """Euclidean distance from x to the boundary, negated for points outside (0 on the boundary).

    ``x`` is one point (returns a float) or an (N, 2) array.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    kind, segs, r0, r1 = _geometry(domain)
    d = np.array([abs(_dist(px, py, kind, segs, r0, r1)) for px, py in pts])
    d = np.where(_inside(domain, pts), d, -d)
    return float(d[0]) if np.ndim(x) == 1 else d


def wos_exit_time(domain, x, n_walks: int, eps_shell: float | None = None, seed: int = 0,
                  workers: int = 1) -> WosEstimate:
    """Mean exit time from ``x`` over ``n_walks`` walks, with its standard error.

    Walks are grouped in fixed chunks; chunk j draws from a stream spawned
    from ``seed``, so the estimate does not depend on ``workers``. The walk
    stops within ``eps_shell`` of the boundary (default 1e-4 times the
    diameter); walks that reach the step cap are excluded and counted.
    """
    if n_walks < 1:
        raise ValueError("n_walks must be >= 1")
    if eps_shell is None:
        eps_shell = 1e-4 * domain.diameter
    if not eps_shell > 0:
        raise ValueError("eps_shell must be positive")
    x = np.asarray(x, dtype=float)
    if distance_to_boundary(domain, x) <= 0:
        raise ValueError(f"start point {tuple(x)} is not strictly inside the domain")
    kind, segs, r0, r1 = _geometry(domain)
    sizes = [CHUNK] * (n_walks // CHUNK) + ([n_walks % CHUNK] if n_walks % CHUNK else [])
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(sizes))]
    out = np.empty(n_walks)
    steps = np.empty(n_walks, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def run(j):
        lo, hi = offsets[j], offsets[j + 1]
        _walk_chunk(x[0], x[1], sizes[j], seeds[j], eps_shell, STEP_CAP, kind, segs, r0, r1,
                    out[lo:hi], steps[lo:hi])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(sizes))))
    else:
        for j in range(len(sizes)):
            run(j)
    capped = out < 0
    n_capped = int(capped.sum())
    if n_capped:
        warnings.warn(f"{n_capped} of {n_walks} walks hit the step cap {STEP_CAP}", CappedWalkWarning, stacklevel=2)
    vals = out[~capped]
    n = len(vals)
    if n == 0:
        raise RuntimeError("every walk hit the step cap")
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return WosEstimate((float(x[0]), float(x[1])), float(vals.mean()), se, n, float(eps_shell), n_capped,
                       float(steps[~capped].mean()))
