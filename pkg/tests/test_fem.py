import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from conftest import corpus_mesh
from torsionlab.fem import (
    ClusterWarning,
    ConvergenceError,
    DiscreteField,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    cg_solve,
    lumped_weights,
    restrict,
    smallest_eigenpairs,
)


@pytest.fixture(scope="module")
def lmesh():
    return corpus_mesh("l_shape", (), 1)


def test_matrices_symmetric_sorted(lmesh):
    for a in (assemble_stiffness(lmesh), assemble_mass(lmesh), assemble_boundary_mass(lmesh)):
        assert isinstance(a, sp.csr_matrix)
        assert a.has_sorted_indices
        assert abs(a - a.T).max() < 1e-14


def test_mass_and_boundary_totals(lmesh):
    one = np.ones(lmesh.n_nodes)
    assert one @ assemble_mass(lmesh) @ one == pytest.approx(0.75, rel=1e-12)
    assert one @ assemble_boundary_mass(lmesh) @ one == pytest.approx(4.0, rel=1e-12)
    assert lumped_weights(lmesh).sum() == pytest.approx(0.75, rel=1e-12)


def test_stiffness_kills_constants_and_reproduces_linear_energy(lmesh):
    k = assemble_stiffness(lmesh)
    assert np.abs(k @ np.ones(lmesh.n_nodes)).max() < 1e-12
    x = lmesh.nodes[:, 0]
    # the Dirichlet energy of u = x is the area
    assert x @ k @ x == pytest.approx(0.75, rel=1e-12)


def test_mass_exact_for_linear_products(lmesh):
    x, y = lmesh.nodes[:, 0], lmesh.nodes[:, 1]
    m = assemble_mass(lmesh)
    # int_L x y over the unit square minus its upper-right quarter
    assert x @ m @ y == pytest.approx(0.25 - 9 / 64, rel=1e-12)


def test_cg_matches_direct_solve(lmesh):
    a = restrict(assemble_stiffness(lmesh), lmesh.interior_nodes)
    rhs = np.random.default_rng(0).standard_normal(a.shape[0])
    x, stats = cg_solve(a, rhs, tol=1e-12)
    assert stats.converged
    np.testing.assert_allclose(x, sp.linalg.spsolve(a.tocsc(), rhs), rtol=1e-8, atol=1e-12)


def test_cg_zero_rhs():
    a = sp.identity(5, format="csr")
    x, stats = cg_solve(a, np.zeros(5))
    assert stats.iterations == 0 and np.all(x == 0)


def test_cg_iteration_cap_raises(lmesh):
    a = restrict(assemble_stiffness(lmesh), lmesh.interior_nodes)
    with pytest.raises(ConvergenceError) as err:
        cg_solve(a, np.ones(a.shape[0]), tol=1e-14, max_iter=2)
    assert err.value.stats.iterations == 2


def test_square_dirichlet_eigenvalues_and_cluster_warning():
    mesh = corpus_mesh("unit_square", (), 2)
    dofs = mesh.interior_nodes
    a, m = restrict(assemble_stiffness(mesh), dofs), restrict(assemble_mass(mesh), dofs)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        pairs = smallest_eigenpairs(a, m, 3, tol=1e-8)
    lams = [p.eigenvalue for p in pairs]
    assert lams[0] == pytest.approx(2 * math.pi**2, rel=5e-3)
    assert lams[1] == pytest.approx(5 * math.pi**2, rel=1e-2)
    assert lams[2] == pytest.approx(lams[1], rel=5e-3)
    for p in pairs:
        assert p.residual <= 1e-8
        assert p.vector @ (m @ p.vector) == pytest.approx(1.0, rel=1e-10)
    # the two modes sin(pi x)sin(2 pi y), sin(2 pi x)sin(pi y) are M-orthogonal
    assert abs(pairs[1].vector @ (m @ pairs[2].vector)) < 1e-8


def test_cluster_warning_on_exact_multiplicity():
    a = sp.diags([1.0, 2.0, 2.0, 5.0, 7.0, 9.0, 11.0, 13.0, 15.0, 17.0, 19.0, 21.0]).tocsr()
    m = sp.identity(12, format="csr")
    with pytest.warns(ClusterWarning):
        pairs = smallest_eigenpairs(a, m, 3)
    assert [round(p.eigenvalue, 10) for p in pairs] == [1.0, 2.0, 2.0]


def test_eigenvalues_decrease_under_refinement():
    lams = []
    for level in range(3):
        mesh = corpus_mesh("l_shape", (), level)
        dofs = mesh.interior_nodes
        a, m = restrict(assemble_stiffness(mesh), dofs), restrict(assemble_mass(mesh), dofs)
        lams.append(smallest_eigenpairs(a, m, 1)[0].eigenvalue)
    assert lams[0] > lams[1] > lams[2]


def test_discrete_field_norms_and_point_values(lmesh):
    x = lmesh.nodes[:, 0]
    f = DiscreteField(lmesh, x)
    assert f.integral() == pytest.approx(0.5 - 0.25 * 0.75, rel=1e-12)
    assert f.l2_norm() ** 2 == pytest.approx(1 / 3 - 0.5 * (1 - 0.125) / 3, rel=1e-12)
    assert f.sup_norm == pytest.approx(1.0)
    pts = np.array([[0.2, 0.3], [0.9, 0.1], [0.8, 0.8]])
    vals = f.at(pts)
    np.testing.assert_allclose(vals[:2], [0.2, 0.9], atol=1e-12)
    assert math.isnan(vals[2])
    with pytest.raises(ValueError):
        DiscreteField(lmesh, np.ones(3))


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_stiffness_energy_of_affine_fields(coef):
    mesh = corpus_mesh("unit_square", (), 0)
    a, b, c = coef
    u = a * mesh.nodes[:, 0] + b * mesh.nodes[:, 1] + c
    energy = u @ assemble_stiffness(mesh) @ u
    assert energy == pytest.approx(a * a + b * b, rel=1e-9, abs=1e-9)


@given(st.integers(0, 10_000))
def test_mass_matrix_positive_definite(seed):
    mesh = corpus_mesh("l_shape", (), 0)
    v = np.random.default_rng(seed).standard_normal(mesh.n_nodes)
    m = assemble_mass(mesh)
    w = lumped_weights(mesh)
    q = v @ m @ v
    assert q > 0
    # consistent mass is bounded by the lumped one for P1
    assert q <= np.sum(w * v * v) * (1 + 1e-12)
