import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torsionlab.geometry import (
    GeometryError,
    PolygonalDomain,
    RadialDomain,
    make_canonical_domain,
    measures,
    read_mesh,
    refine,
    refine_n,
    triangulate,
    unit_ball_volume,
)


@pytest.mark.parametrize(
    "kind, params, area, perimeter",
    [
        ("unit_square", (), 1.0, 4.0),
        ("rectangle", (2.0, 1.0), 2.0, 6.0),
        ("l_shape", (), 0.75, 4.0),
        ("disk_polygon", (1.0, 256), 0.5 * 256 * math.sin(2 * math.pi / 256), 512 * math.sin(math.pi / 256)),
    ],
)
def test_canonical_measures(kind, params, area, perimeter):
    dom = make_canonical_domain(kind, params)
    assert dom.area == pytest.approx(area, rel=1e-12)
    assert dom.perimeter == pytest.approx(perimeter, rel=1e-12)


def test_annulus_has_one_clockwise_hole():
    dom = make_canonical_domain("annulus_polygon", (0.5, 1.0, 64))
    assert len(dom.hole_loops) == 1
    outer = 0.5 * 64 * math.sin(2 * math.pi / 64)
    assert dom.area == pytest.approx(outer * (1 - 0.25), rel=1e-12)


def test_radial_domains():
    ball = make_canonical_domain("ball", (2.0, 3))
    assert ball.area == pytest.approx(4 / 3 * math.pi * 8)
    assert ball.perimeter == pytest.approx(4 * math.pi * 4)
    shell = make_canonical_domain("shell", (0.5, 1.0, 2))
    assert shell.area == pytest.approx(math.pi * 0.75)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


@pytest.mark.parametrize(
    "kind, params",
    [("rectangle", (0.0, 1.0)), ("disk_polygon", (1.0, 8)), ("annulus_polygon", (1.0, 0.5, 64)), ("nope", ())],
)
def test_bad_parameters_rejected(kind, params):
    with pytest.raises((GeometryError, ValueError)):
        make_canonical_domain(kind, params)


def test_self_intersecting_loop_rejected():
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float)
    with pytest.raises(GeometryError):
        PolygonalDomain("bowtie", bowtie)


def test_clockwise_outer_loop_rejected():
    with pytest.raises(GeometryError):
        PolygonalDomain("cw", np.array([[0, 0], [0, 1], [1, 1], [1, 0]], float))


def test_hole_outside_rejected():
    outer = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    hole = np.array([[2, 2], [2, 3], [3, 3], [3, 2]], float)
    with pytest.raises(GeometryError):
        PolygonalDomain("bad", outer, (hole,))


@pytest.mark.parametrize("kind, params", [("unit_square", ()), ("l_shape", ()), ("annulus_polygon", (0.5, 1.0, 64))])
def test_triangulation_contracts(kind, params):
    dom = make_canonical_domain(kind, params)
    h = 0.1
    mesh = triangulate(dom, h)
    assert mesh.h_max <= 2 * h
    assert mesh.min_angle_degrees() >= 20 - 1e-9
    area, perim = measures(mesh)
    assert area == pytest.approx(dom.area, rel=1e-12)
    assert perim == pytest.approx(dom.perimeter, rel=1e-12)
    assert np.all(mesh.signed_areas > 0)


def test_refinement_halves_h_and_keeps_geometry():
    mesh = triangulate(make_canonical_domain("l_shape"), 0.2)
    fine = refine_n(mesh, 2)
    assert fine.h_max == pytest.approx(mesh.h_max / 4, rel=1e-12)
    assert fine.n_triangles == 16 * mesh.n_triangles
    assert measures(fine)[0] == pytest.approx(measures(mesh)[0], rel=1e-12)
    assert fine.min_angle_degrees() == pytest.approx(mesh.min_angle_degrees(), rel=1e-9)
    # nested: every coarse node survives
    np.testing.assert_array_equal(fine.nodes[: mesh.n_nodes], mesh.nodes)


def test_boundary_edges_follow_loops():
    dom = make_canonical_domain("annulus_polygon", (0.5, 1.0, 32))
    mesh = triangulate(dom, 0.2)
    tags = set(mesh.boundary_tags.tolist())
    assert tags == {0, 1}
    mid = mesh.nodes[mesh.boundary_edges].mean(axis=1)
    r = np.linalg.norm(mid, axis=1)
    assert np.all(r[mesh.boundary_tags == 0] > 0.9)
    assert np.all(r[mesh.boundary_tags == 1] < 0.6)


def test_mesh_file_roundtrip(tmp_path):
    mesh = triangulate(make_canonical_domain("unit_square"), 0.25)
    path = tmp_path / "m.txt"
    from torsionlab.geometry import write_mesh

    write_mesh(mesh, path)
    back = read_mesh(path)
    np.testing.assert_array_equal(back.nodes, mesh.nodes)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)
    np.testing.assert_array_equal(back.boundary_edges, mesh.boundary_edges)


def test_triangulate_rejects_radial_domain():
    with pytest.raises(GeometryError):
        triangulate(RadialDomain("ball", 0.0, 1.0, 2), 0.1)


def test_field_gradient_of_linear_function_is_exact():
    mesh = triangulate(make_canonical_domain("l_shape"), 0.2)
    vals = 3.0 * mesh.nodes[:, 0] - 2.0 * mesh.nodes[:, 1] + 1.0
    g = mesh.field_gradient(vals)
    np.testing.assert_allclose(g, np.tile([3.0, -2.0], (mesh.n_triangles, 1)), atol=1e-12)


@given(w=st.floats(0.2, 3.0), h=st.floats(0.2, 3.0))
def test_rectangle_measures_property(w, h):
    dom = make_canonical_domain("rectangle", (w, h))
    mesh = triangulate(dom, 0.25 * min(w, h) + 0.05)
    area, perim = measures(mesh)
    assert area == pytest.approx(w * h, rel=1e-10)
    assert perim == pytest.approx(2 * (w + h), rel=1e-10)


@given(n=st.integers(16, 80), r=st.floats(0.3, 2.0))
def test_disk_polygon_area_below_circle(n, r):
    dom = make_canonical_domain("disk_polygon", (r, n))
    assert dom.area < math.pi * r * r
    assert dom.area == pytest.approx(0.5 * n * r * r * math.sin(2 * math.pi / n), rel=1e-12)
