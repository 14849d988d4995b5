import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import corpus_mesh
from oracles import J01_SQ, SQUARE_CENTER, robin_disk_eigenvalue, robin_disk_torsion
from torsionlab.linear import (
    BoundaryCondition,
    dirichlet_spectrum,
    functional_inequality_margins,
    heat_trace_partial_sum,
    inequality_margins_for_fields,
    robin_spectrum,
    solve_torsion,
    torsional_rigidity,
)

DISK = ("disk_polygon", (1.0, 128))


def test_boundary_condition_validation():
    assert BoundaryCondition.dirichlet().is_dirichlet
    assert BoundaryCondition.robin(2.0).label() == "robin(b=2)"
    for bad in (0.0, -1.0, math.inf):
        with pytest.raises(ValueError):
            BoundaryCondition.robin(bad)
    with pytest.raises(ValueError):
        BoundaryCondition("neumann")


def test_dirichlet_disk_closed_form():
    mesh = corpus_mesh(*DISK, 2)
    sol = solve_torsion(mesh, BoundaryCondition.dirichlet())
    assert sol.sup_norm == pytest.approx(0.25, rel=5e-3)
    assert torsional_rigidity(sol) == pytest.approx(math.pi / 8, rel=5e-3)
    assert sol.lambda1 == pytest.approx(J01_SQ, rel=5e-3)
    # boundary nodes carry zero
    assert np.all(sol.field.values[mesh.boundary_nodes] == 0)


@pytest.mark.parametrize("b", [0.5, 1.0, 10.0])
def test_robin_disk_closed_form(b):
    mesh = corpus_mesh(*DISK, 2)
    sol = solve_torsion(mesh, b)
    sup, integral = robin_disk_torsion(b)
    assert sol.sup_norm == pytest.approx(sup, rel=5e-3)
    assert sol.l1_norm == pytest.approx(integral, rel=5e-3)
    assert sol.lambda1 == pytest.approx(robin_disk_eigenvalue(b), rel=5e-3)


def test_square_center_value():
    mesh = corpus_mesh("unit_square", (), 3)
    sol = solve_torsion(mesh, None, with_eigen=False)
    assert math.isnan(sol.lambda1)
    assert sol.field.at(np.array([[0.5, 0.5]]))[0] == pytest.approx(SQUARE_CENTER, rel=2e-3)


def test_robin_approaches_dirichlet_for_large_b():
    mesh = corpus_mesh("l_shape", (), 1)
    d = solve_torsion(mesh, None)
    sups = [solve_torsion(mesh, b).sup_norm for b in (10.0, 100.0, 1e4)]
    assert sups[0] > sups[1] > sups[2] > d.sup_norm
    assert sups[2] == pytest.approx(d.sup_norm, rel=1e-2)


def test_torsion_positive_and_source_linear():
    mesh = corpus_mesh("l_shape", (), 0)
    one = solve_torsion(mesh, 2.0, with_eigen=False)
    three = solve_torsion(mesh, 2.0, source=3.0, with_eigen=False)
    assert np.all(one.field.values > 0)
    np.testing.assert_allclose(three.field.values, 3 * one.field.values, rtol=1e-8)


def test_spectra_ordering():
    mesh = corpus_mesh("unit_square", (), 1)
    d = dirichlet_spectrum(mesh, 3).eigenvalues
    r = robin_spectrum(mesh, 1.0, 3).eigenvalues
    assert np.all(np.diff(d) >= -1e-10) and np.all(np.diff(r) >= -1e-10)
    assert np.all(r < d)
    spec = robin_spectrum(mesh, 1.0, 2)
    phi = spec.eigenfunction(0).values
    assert phi[np.argmax(np.abs(phi))] > 0
    with pytest.raises(ValueError):
        robin_spectrum(mesh, 0.0, 1)


def test_robin_eigenvalue_increasing_in_b():
    mesh = corpus_mesh("l_shape", (), 0)
    lams = [robin_spectrum(mesh, b, 1).eigenvalues[0] for b in (0.1, 1.0, 10.0)]
    assert lams[0] < lams[1] < lams[2]


def test_boundary_sobolev_margin_for_constant_field():
    # u = 1 on the unit square: L^4 norm squared is 1, C(2) (0 + perimeter) = 4/(2 sqrt(pi))
    mesh = corpus_mesh("unit_square", (), 0)
    rep = inequality_margins_for_fields(mesh, 1.0, 1.0, np.ones(mesh.n_nodes))
    assert rep.boundary_sobolev == pytest.approx(2 / math.sqrt(math.pi) - 1, rel=1e-10)
    assert rep.boundary_sobolev == pytest.approx(0.128379, abs=1e-6)


def test_strong_branches_absent_below_threshold():
    mesh = corpus_mesh("unit_square", (), 0)
    rep = inequality_margins_for_fields(mesh, 0.5, 4.0, np.ones(mesh.n_nodes))
    assert rep.nash_strong is None and rep.sobolev_strong is None
    with pytest.raises(ValueError):
        inequality_margins_for_fields(mesh, 1.0, 0.0, np.ones(mesh.n_nodes))


def test_random_field_margins_non_negative_and_reproducible():
    mesh = corpus_mesh("l_shape", (), 0)
    lam = robin_spectrum(mesh, 10.0, 1).eigenvalues[0]
    assert 10.0 >= math.sqrt(lam)
    a = functional_inequality_margins(mesh, 10.0, lam, 300, seed=7, batch=100)
    b = functional_inequality_margins(mesh, 10.0, lam, 300, seed=7, batch=300)
    assert a.n_samples == 300
    for name in ("nash_general", "nash_strong", "boundary_sobolev", "sobolev_general", "sobolev_strong"):
        assert getattr(a, name) >= 0
        assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-12)
    with pytest.raises(ValueError):
        functional_inequality_margins(mesh, 2.0, lam, 0, seed=0)


def test_heat_trace_partial_sum():
    vals = heat_trace_partial_sum([1.0, 2.0], [0.5, 1.0])
    assert vals == pytest.approx([math.exp(-0.5) + math.exp(-1.0), math.exp(-1.0) + math.exp(-2.0)])
    with pytest.raises(ValueError):
        heat_trace_partial_sum([1.0], [0.0])
    with pytest.raises(ValueError):
        heat_trace_partial_sum([], [1.0])


@given(st.lists(st.floats(0.1, 50), min_size=1, max_size=8), st.floats(0.01, 5))
def test_heat_trace_bounded_by_count_and_decreasing(lams, t):
    lo, hi = heat_trace_partial_sum(lams, [t, 2 * t])
    assert 0 < hi <= lo <= len(lams)


@given(st.floats(0.2, 20))
def test_robin_below_dirichlet_torsion(b):
    mesh = corpus_mesh("unit_square", (), 0)
    r = solve_torsion(mesh, b, with_eigen=False)
    d = solve_torsion(mesh, None, with_eigen=False)
    assert r.sup_norm > d.sup_norm
    assert r.l1_norm > d.l1_norm
