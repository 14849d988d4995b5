"""Computational domains, triangulation and uniform refinement.

Two families of domains are supported: planar polygons with holes
(:class:`PolygonalDomain`) and m-dimensional balls/annuli
(:class:`RadialDomain`). Every measure reported for a polygon is the exact
measure of the polygon itself, never of a smooth shape it approximates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import triangle

__all__ = [
    "GeometryError",
    "PolygonalDomain",
    "RadialDomain",
    "TriangleMesh",
    "make_canonical_domain",
    "triangulate",
    "refine",
    "refine_n",
    "measures",
    "unit_ball_volume",
    "write_mesh",
    "read_mesh",
]

CANONICAL_KINDS = ("unit_square", "rectangle", "disk_polygon", "annulus_polygon", "l_shape", "ball", "shell")


class GeometryError(ValueError):
    """Invalid domain parameters or a failed meshing step."""


def signed_area(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def loop_perimeter(loop: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.roll(loop, -1, axis=0) - loop, axis=1)))


def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    """Proper or touching intersection test, vectorised over pairs."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def _is_simple(loop: np.ndarray) -> bool:
    n = len(loop)
    if n < 3:
        return False
    a = loop
    b = np.roll(loop, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    # the first and last edge share a vertex
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    return not np.any(_segments_cross(a[i], b[i], a[j], b[j]))


def _loops_intersect(l1: np.ndarray, l2: np.ndarray) -> bool:
    a1, b1 = l1, np.roll(l1, -1, axis=0)
    a2, b2 = l2, np.roll(l2, -1, axis=0)
    return bool(np.any(_segments_cross(a1[:, None], b1[:, None], a2[None, :], b2[None, :])))


def points_in_loop(points: np.ndarray, loop: np.ndarray) -> np.ndarray:
    """Even-odd ray casting; points exactly on the loop may go either way."""
    points = np.atleast_2d(points)
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    xa, ya = loop[:, 0][None, :], loop[:, 1][None, :]
    xb, yb = np.roll(loop[:, 0], -1)[None, :], np.roll(loop[:, 1], -1)[None, :]
    straddle = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = xa + (y - ya) * (xb - xa) / (yb - ya)
    hits = straddle & (x < xcross)
    return np.sum(hits, axis=1) % 2 == 1


@dataclass(frozen=True)
class PolygonalDomain:
    """Planar polygon: a counterclockwise outer loop and clockwise holes."""

    name: str
    outer_loop: np.ndarray
    hole_loops: tuple[np.ndarray, ...] = ()
    dimension: int = field(default=2, init=False)

    def __post_init__(self):
        outer = np.asarray(self.outer_loop, dtype=float)
        holes = tuple(np.asarray(h, dtype=float) for h in self.hole_loops)
        object.__setattr__(self, "outer_loop", outer)
        object.__setattr__(self, "hole_loops", holes)
        if outer.ndim != 2 or outer.shape[1] != 2:
            raise GeometryError("outer_loop must be an (n, 2) array")
        if signed_area(outer) <= 0:
            raise GeometryError("outer loop must be counterclockwise with positive area")
        if not _is_simple(outer):
            raise GeometryError("outer loop is not simple")
        for k, h in enumerate(holes):
            if signed_area(h) >= 0:
                raise GeometryError(f"hole {k} must be clockwise")
            if not _is_simple(h):
                raise GeometryError(f"hole {k} is not simple")
            if not np.all(points_in_loop(h, outer)) or _loops_intersect(h, outer):
                raise GeometryError(f"hole {k} is not strictly inside the outer loop")
            for j in range(k):
                if _loops_intersect(h, holes[j]) or np.any(points_in_loop(h, holes[j])) or np.any(
                    points_in_loop(holes[j], h)
                ):
                    raise GeometryError(f"holes {j} and {k} overlap")
        if self.area <= 0:
            raise GeometryError("domain area must be positive")

    @property
    def loops(self) -> tuple[np.ndarray, ...]:
        return (self.outer_loop, *self.hole_loops)

    @property
    def area(self) -> float:
        return signed_area(self.outer_loop) + sum(signed_area(h) for h in self.hole_loops)

    @property
    def perimeter(self) -> float:
        return sum(loop_perimeter(lp) for lp in self.loops)

    @property
    def diameter(self) -> float:
        pts = self.outer_loop
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt(np.max(np.sum(d * d, axis=-1))))

    def segments(self) -> np.ndarray:
        """All boundary segments as an (S, 2, 2) array."""
        return np.concatenate([np.stack([lp, np.roll(lp, -1, axis=0)], axis=1) for lp in self.loops])

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = points_in_loop(pts, self.outer_loop)
        for h in self.hole_loops:
            inside &= ~points_in_loop(pts, h)
        return inside


def unit_ball_volume(m: int) -> float:
    """Volume of the unit ball in R^m."""
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


@dataclass(frozen=True)
class RadialDomain:
    """Ball (inner_radius = 0) or annulus in R^m."""

    kind: str
    inner_radius: float
    outer_radius: float
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in ("ball", "annulus"):
            raise GeometryError(f"unknown radial kind {self.kind!r}")
        if self.dimension < 2:
            raise GeometryError("dimension must be at least 2")
        if not (0 <= self.inner_radius < self.outer_radius):
            raise GeometryError("need 0 <= inner_radius < outer_radius")
        if self.kind == "ball" and self.inner_radius != 0:
            raise GeometryError("a ball has inner_radius 0")
        if self.kind == "annulus" and self.inner_radius == 0:
            raise GeometryError("an annulus needs inner_radius > 0")

    @property
    def name(self) -> str:
        return f"{self.kind}_m{self.dimension}"

    @property
    def area(self) -> float:
        m = self.dimension
        return unit_ball_volume(m) * (self.outer_radius**m - self.inner_radius**m)

    @property
    def perimeter(self) -> float:
        m = self.dimension
        s = m * unit_ball_volume(m)
        inner = s * self.inner_radius ** (m - 1) if self.inner_radius > 0 else 0.0
        return s * self.outer_radius ** (m - 1) + inner

    @property
    def diameter(self) -> float:
        return 2.0 * self.outer_radius


def _regular_polygon(radius: float, n: int, clockwise: bool = False) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n) / n
    loop = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return loop[::-1] if clockwise else loop


def make_canonical_domain(kind: str, params=()) -> PolygonalDomain | RadialDomain:
    """Build one of the standard corpus domains.

    ``params`` by kind: ``unit_square`` none; ``rectangle`` (width, height);
    ``disk_polygon`` (R, n); ``annulus_polygon`` (r_in, r_out, n);
    ``l_shape`` optional side length (default 1, the unit square minus
    its upper-right quarter); ``ball`` (R, m); ``shell`` (r_in, r_out, m).
    """
    params = [float(v) for v in params]

    def need(k):
        if len(params) != k:
            raise GeometryError(f"{kind} takes {k} parameters, got {len(params)}")

    def positive(*vals):
        if any(not (v > 0) or not math.isfinite(v) for v in vals):
            raise GeometryError(f"{kind}: sizes must be positive and finite")

    def count(n):
        if n != int(n) or n < 16:
            raise GeometryError(f"{kind}: segment count must be an integer >= 16")
        return int(n)

    if kind == "unit_square":
        need(0)
        return PolygonalDomain("unit_square", np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    if kind == "rectangle":
        need(2)
        w, h = params
        positive(w, h)
        return PolygonalDomain(f"rectangle_{w:g}x{h:g}", np.array([[0, 0], [w, 0], [w, h], [0, h]], float))
    if kind == "disk_polygon":
        need(2)
        r, n = params
        positive(r)
        n = count(n)
        return PolygonalDomain(f"disk_polygon_R{r:g}_n{n}", _regular_polygon(r, n))
    if kind == "annulus_polygon":
        need(3)
        r_in, r_out, n = params
        positive(r_in, r_out)
        if r_in >= r_out:
            raise GeometryError("annulus_polygon: inner radius must be below outer radius")
        n = count(n)
        return PolygonalDomain(
            f"annulus_polygon_{r_in:g}_{r_out:g}_n{n}",
            _regular_polygon(r_out, n),
            (_regular_polygon(r_in, n, clockwise=True),),
        )
    if kind == "l_shape":
        if len(params) > 1:
            raise GeometryError("l_shape takes at most one parameter")
        s = params[0] if params else 1.0
        positive(s)
        q = s / 2
        loop = np.array([[0, 0], [s, 0], [s, q], [q, q], [q, s], [0, s]], float)
        return PolygonalDomain("l_shape" if s == 1.0 else f"l_shape_{s:g}", loop)
    if kind == "ball":
        need(2)
        r, m = params
        positive(r)
        return RadialDomain("ball", 0.0, r, int(m))
    if kind == "shell":
        need(3)
        r_in, r_out, m = params
        positive(r_in, r_out)
        return RadialDomain("annulus", r_in, r_out, int(m))
    raise GeometryError(f"unknown domain kind {kind!r}; expected one of {CANONICAL_KINDS}")


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Conforming P1 triangulation with tagged, consistently oriented boundary edges.

    Boundary edge ``(i, j)`` is oriented so that the domain lies to its left,
    which makes outer loops counterclockwise and hole loops clockwise.
    ``boundary_tags`` holds the loop index (0 = outer, k = k-th hole).
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.ascontiguousarray(self.nodes, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary_edges", np.ascontiguousarray(self.boundary_edges, dtype=np.int64))
        object.__setattr__(self, "boundary_tags", np.ascontiguousarray(self.boundary_tags, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted node pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def h_max(self) -> float:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return float(np.sqrt(np.max(np.sum(d * d, axis=1))))

    @cached_property
    def boundary_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.sqrt(np.sum(d * d, axis=1))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three barycentric hat functions per triangle, shape (T, 3, 2)."""
        p = self.nodes[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.signed_areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / two_a[:, None]
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / two_a[:, None]
        return np.stack([gx, gy], axis=-1)

    def min_angle_degrees(self) -> float:
        p = self.nodes[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

    def field_gradient(self, values: np.ndarray) -> np.ndarray:
        """Elementwise gradient of a P1 field, shape (T, 2) or (T, 2, S) for stacked fields."""
        v = np.asarray(values)[self.triangles]
        return np.einsum("tkd,tk...->td...", self.gradients, v)

    def validate(self, rtol: float = 1e-12) -> None:
        """Raise :class:`GeometryError` if a mesh invariant is broken."""
        if np.any(self.signed_areas <= 0):
            raise GeometryError("mesh has a degenerate or clockwise triangle")
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = directed[:, 0] * self.n_nodes + directed[:, 1]
        if len(np.unique(key)) != len(key):
            raise GeometryError("an oriented edge appears twice: mesh is not conforming")
        rev = directed[:, 1] * self.n_nodes + directed[:, 0]
        lonely = directed[~np.isin(rev, key)]
        bkey = np.sort(self.boundary_edges[:, 0] * self.n_nodes + self.boundary_edges[:, 1])
        if not np.array_equal(np.sort(lonely[:, 0] * self.n_nodes + lonely[:, 1]), bkey):
            raise GeometryError("boundary edges do not match the mesh's free edges")


def _boundary_from_topology(tris: np.ndarray, n_nodes: int):
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = directed[:, 0] * n_nodes + directed[:, 1]
    rev = directed[:, 1] * n_nodes + directed[:, 0]
    return directed[~np.isin(rev, key)]


def _hole_point(loop: np.ndarray) -> np.ndarray:
    c = loop.mean(axis=0)
    if points_in_loop(c[None], loop)[0]:
        return c
    inner = triangle.triangulate({"vertices": loop, "segments": _loop_segments(0, len(loop))}, "p")
    tri = inner["triangles"][0]
    return inner["vertices"][tri].mean(axis=0)


def _loop_segments(offset: int, n: int) -> np.ndarray:
    idx = offset + np.arange(n)
    return np.column_stack([idx, np.roll(idx, -1)])


def _orient_ccw(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    cw = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris = tris.copy()
    tris[cw] = tris[cw][:, [0, 2, 1]]
    return tris


def _tag_edges(edges: np.ndarray, nodes: np.ndarray, domain: PolygonalDomain) -> np.ndarray:
    """Assign each boundary edge to the polygon loop whose segment contains its midpoint."""
    mid = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])
    tags = np.full(len(edges), -1, dtype=np.int64)
    best = np.full(len(edges), np.inf)
    for k, lp in enumerate(domain.loops):
        a, b = lp, np.roll(lp, -1, axis=0)
        ab = b - a
        rel = mid[:, None, :] - a[None]
        s = np.clip(np.sum(rel * ab[None], axis=-1) / np.sum(ab * ab, axis=-1)[None], 0.0, 1.0)
        d = np.linalg.norm(rel - s[..., None] * ab[None], axis=-1).min(axis=1)
        closer = d < best
        tags[closer] = k
        best[closer] = d[closer]
    return tags


def triangulate(domain: PolygonalDomain, h_target: float, min_angle: float = 20.0) -> TriangleMesh:
    """Constrained Delaunay quality mesh of ``domain`` with edges of order ``h_target``.

    Guarantees h_max <= 2 h_target and minimum angle >= ``min_angle``.
    """
    if not (h_target > 0):
        raise GeometryError("h_target must be positive")
    if not isinstance(domain, PolygonalDomain):
        raise GeometryError("triangulate needs a PolygonalDomain")
    verts, segs, holes = [], [], []
    offset = 0
    for k, lp in enumerate(domain.loops):
        verts.append(lp)
        segs.append(_loop_segments(offset, len(lp)))
        offset += len(lp)
        if k > 0:
            holes.append(_hole_point(lp))
    pslg = {"vertices": np.concatenate(verts), "segments": np.concatenate(segs)}
    if holes:
        pslg["holes"] = np.array(holes)
    # an equilateral triangle of side h has area sqrt(3)/4 h^2; aim a bit lower
    max_area = 0.3 * h_target**2
    for _ in range(8):
        out = triangle.triangulate(pslg, f"pq{min_angle:g}a{max_area:.17g}Q")
        nodes = np.asarray(out["vertices"], float)
        tris = _orient_ccw(nodes, np.asarray(out["triangles"], np.int64))
        edges = _boundary_from_topology(tris, len(nodes))
        mesh = TriangleMesh(nodes, tris, edges, _tag_edges(edges, nodes, domain))
        if mesh.h_max <= 2.0 * h_target:
            break
        max_area *= 0.5
    else:
        raise GeometryError("could not meet the h_max <= 2 h_target contract")
    mesh.validate()
    if mesh.min_angle_degrees() < min_angle - 1e-9:
        raise GeometryError(f"minimum angle {mesh.min_angle_degrees():.3f} below {min_angle}")
    return mesh


def refine(mesh: TriangleMesh) -> TriangleMesh:
    """Uniform red refinement: every triangle splits into four similar children."""
    n = mesh.n_nodes
    edges = mesh.edges
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    nodes = np.concatenate([mesh.nodes, mids])
    keys = edges[:, 0] * n + edges[:, 1]
    order = np.argsort(keys)
    sorted_keys = keys[order]

    def mid_index(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        pos = np.searchsorted(sorted_keys, lo * n + hi)
        return n + order[pos]

    t = mesh.triangles
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = mid_index(a, b), mid_index(b, c), mid_index(c, a)
    tris = np.concatenate(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([ab, b, bc]),
            np.column_stack([ca, bc, c]),
            np.column_stack([ab, bc, ca]),
        ]
    )
    be = mesh.boundary_edges
    bm = mid_index(be[:, 0], be[:, 1])
    bedges = np.concatenate([np.column_stack([be[:, 0], bm]), np.column_stack([bm, be[:, 1]])])
    btags = np.concatenate([mesh.boundary_tags, mesh.boundary_tags])
    return TriangleMesh(nodes, tris, bedges, btags)


def refine_n(mesh: TriangleMesh, levels: int) -> TriangleMesh:
    for _ in range(levels):
        mesh = refine(mesh)
    return mesh


def measures(obj) -> tuple[float, float]:
    """(area, boundary length) of a domain or mesh; m-dimensional volume and surface for radial domains."""
    if isinstance(obj, TriangleMesh):
        return float(np.sum(obj.areas)), float(np.sum(obj.boundary_lengths))
    if isinstance(obj, (PolygonalDomain, RadialDomain)):
        return obj.area, obj.perimeter
    raise TypeError(f"cannot measure {type(obj).__name__}")


def write_mesh(mesh: TriangleMesh, path) -> None:
    lines = [f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} boundary {len(mesh.boundary_edges)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{i} {j} {t}" for (i, j), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriangleMesh:
    rows = Path(path).read_text().split("\n")
    head = rows[0].split()
    if len(head) != 6 or head[0::2] != ["nodes", "triangles", "boundary"]:
        raise GeometryError(f"{path}: bad header {rows[0]!r}")
    n, t, b = (int(v) for v in head[1::2])
    body = rows[1 : 1 + n + t + b]
    if len(body) < n + t + b:
        raise GeometryError(f"{path}: truncated mesh file")
    nodes = np.array([[float(v) for v in r.split()] for r in body[:n]]).reshape(n, 2)
    tris = np.array([[int(v) for v in r.split()] for r in body[n : n + t]], dtype=np.int64).reshape(t, 3)
    bd = np.array([[int(v) for v in r.split()] for r in body[n + t :]], dtype=np.int64).reshape(b, 3)
    mesh = TriangleMesh(nodes, tris, bd[:, :2], bd[:, 2])
    mesh.validate()
    return mesh
