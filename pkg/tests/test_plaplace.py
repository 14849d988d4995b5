import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import corpus_mesh
from oracles import J01_SQ, ball_p_torsion_sup, robin_ball3_eigenvalue, robin_disk_eigenvalue
from torsionlab.fem import DiscreteField
from torsionlab.linear import BoundaryCondition, robin_spectrum, solve_torsion
from torsionlab.plaplace import (
    caccioppoli_c2,
    caccioppoli_check,
    dirichlet_p_ratio,
    levelset_profile,
    p_constants,
    p_eigenvalue_2d,
    radial_p_eigenvalue,
    solve_p_torsion,
    level_set_check,
    level_set_lhs,
    level_set_verdict,
)

DISK = ("disk_polygon", (1.0, 128))


def test_p_constants_linear_plane():
    c = p_constants(2, 2.0)
    assert c.c1 == pytest.approx(2 / 3)
    assert c.c2 == pytest.approx(3 * 2 ** (2 / 3))
    assert c.c2 == pytest.approx(4.7622, abs=1e-4)
    assert c.c3 == pytest.approx(1 / 3)


@given(m=st.integers(2, 5), p=st.floats(1.1, 6))
def test_p_constants_positive(m, p):
    c = p_constants(m, p)
    assert 0 < c.c1 <= m and c.c2 > 0 and c.c3 > 0
    # c1 (p - 1) + c3 (p - 1)(m (p - 1) + 1) ... exponents balance: c1 = m c3 (p - 1)
    assert c.c1 == pytest.approx(m * c.c3 * (p - 1))


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_dirichlet_disk_p_torsion_sup(p):
    mesh = corpus_mesh(*DISK, 2)
    sol = solve_p_torsion(mesh, p, None)
    assert sol.converged
    assert sol.sup_norm == pytest.approx(ball_p_torsion_sup(2, p), rel=1e-2)


def test_p2_matches_linear_solver():
    mesh = corpus_mesh("l_shape", (), 1)
    for bc in (None, 3.0):
        lin = solve_torsion(mesh, bc, with_eigen=False)
        sol = solve_p_torsion(mesh, 2.0, bc)
        np.testing.assert_allclose(sol.field.values, lin.field.values, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("p,bc", [(1.5, 2.0), (3.0, 2.0), (3.0, None)])
def test_energy_history_monotone(p, bc):
    sol = solve_p_torsion(corpus_mesh("unit_square", (), 1), p, bc)
    e = np.array(sol.energy_history)
    assert np.all(np.diff(e) <= 1e-12 * np.abs(e[:-1]).max())
    assert sol.energy < 0


def test_p_torsion_validation():
    mesh = corpus_mesh("unit_square", (), 0)
    with pytest.raises(ValueError):
        solve_p_torsion(mesh, 1.0, None)


def test_radial_closed_forms():
    assert radial_p_eigenvalue(2, 2.0, 1.0, None) == pytest.approx(J01_SQ, rel=1e-7)
    assert radial_p_eigenvalue(3, 2.0, 1.0, None) == pytest.approx(math.pi**2, rel=1e-7)
    for b in (0.3, 1.0, 5.0):
        assert radial_p_eigenvalue(2, 2.0, 1.0, b) == pytest.approx(robin_disk_eigenvalue(b), rel=1e-7)
        assert radial_p_eigenvalue(3, 2.0, 1.0, b) == pytest.approx(robin_ball3_eigenvalue(b), rel=1e-7)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_radial_monotone_in_b_and_scaling(p):
    lams = [radial_p_eigenvalue(2, p, 1.0, b) for b in (1.0, 10.0, 1e3, 1e6)]
    assert all(x < y for x, y in zip(lams, lams[1:]))
    d = radial_p_eigenvalue(2, p, 1.0, None)
    assert lams[-1] < d
    # the gap to Dirichlet decays like b^(-1/(p-1)); beyond b ~ 1e4 it sinks below the bisection tolerance
    rate = math.log10((d - lams[2]) / (d - radial_p_eigenvalue(2, p, 1.0, 1e4)))
    assert rate == pytest.approx(1 / (p - 1), rel=5e-2)
    # Dirichlet scaling lambda(B_R) = R^-p lambda(B_1)
    assert radial_p_eigenvalue(2, p, 2.0, None) == pytest.approx(d * 2**-p, rel=1e-7)


def test_radial_validation():
    with pytest.raises(ValueError):
        radial_p_eigenvalue(1, 2.0, 1.0, None)
    with pytest.raises(ValueError):
        radial_p_eigenvalue(2, 2.0, 0.0, None)


def test_levelset_ramp():
    # u = x on the unit square: |U_t| = 1 - t, f(t) = (1 - t)^2 / 2
    mesh = corpus_mesh("unit_square", (), 1)
    prof = levelset_profile(DiscreteField(mesh, mesh.nodes[:, 0].copy()), n_levels=32)
    t = prof.t_grid
    np.testing.assert_allclose(prof.level_measure[:-1], 1 - t[:-1], atol=1e-12)
    np.testing.assert_allclose(prof.f_values, (1 - t) ** 2 / 2, atol=1e-12)
    assert prof.h_values[0] == pytest.approx(1.0)
    assert prof.sup_norm == pytest.approx(1.0)
    with pytest.raises(ValueError):
        levelset_profile(DiscreteField(mesh, mesh.nodes[:, 0].copy()), n_levels=8)


def test_levelset_profile_of_torsion():
    sol = solve_p_torsion(corpus_mesh("l_shape", (), 1), 2.0, 2.0)
    prof = levelset_profile(sol, 64)
    assert prof.f_values[0] == pytest.approx(sol.l1_norm, rel=1e-10)
    assert np.all(np.diff(prof.level_measure) <= 1e-14)
    assert np.all(np.diff(prof.f_values) <= 1e-14)
    assert np.all(np.diff(prof.h_values) >= -1e-12)
    assert prof.h_values[-1] == math.inf


def test_level_set_zero_field_and_pass():
    mesh = corpus_mesh("unit_square", (), 0)
    prof = levelset_profile(DiscreteField(mesh, np.zeros(mesh.n_nodes)), 16)
    assert level_set_lhs(prof, 2.0, 1.0) == 0.0
    v = level_set_check(prof, 2.0, 1.0, 2, 1.0)
    assert v.satisfied and v.lhs == 0.0


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_level_set_holds_on_l_shape(p):
    mesh = corpus_mesh("l_shape", (), 1)
    sol = solve_p_torsion(mesh, p, 1.0)
    lam = p_eigenvalue_2d(mesh, p, 1.0).eigenvalue
    v = level_set_verdict(sol, lam)
    assert v.satisfied
    assert v.inputs["grid_independent"]
    assert v.inputs["grid_change"] < 0.005


def test_caccioppoli_trivial_cutoffs():
    mesh = corpus_mesh("l_shape", (), 1)
    w = solve_torsion(mesh, None, with_eigen=False).field
    zero = caccioppoli_check(mesh, w, np.zeros(mesh.n_nodes), 2.0, 3.0)
    assert zero.lhs == 0.0 and zero.rhs == 0.0 and zero.satisfied
    # theta = 1 and p = 2: int |grad w|^2 = int w for the torsion function, so the margin is 2 int w
    one = caccioppoli_check(mesh, w, np.ones(mesh.n_nodes), 2.0, 3.0)
    assert one.margin == pytest.approx(2 * w.integral(), rel=1e-8)


def test_caccioppoli_random_cutoffs():
    mesh = corpus_mesh("l_shape", (), 1)
    w = solve_p_torsion(mesh, 3.0, None).field
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.6)
        d = np.linalg.norm(mesh.nodes - c, axis=1)
        theta = np.clip((r - d) / (0.5 * r), 0, 1)
        assert caccioppoli_check(mesh, w, theta, 3.0, 5.0).satisfied


def test_caccioppoli_c2():
    assert caccioppoli_c2(2.0, 3.0) == pytest.approx(2 + 3 * 3.0)
    for bad in (2.0, 1.0):
        with pytest.raises(ValueError):
            caccioppoli_c2(2.0, bad)


@given(p=st.floats(1.2, 5), excess=st.floats(0.01, 10))
def test_caccioppoli_c2_exceeds_threshold(p, excess):
    c1 = 2 ** (p - 1) + excess
    assert caccioppoli_c2(p, c1) > 2 ** (p - 1)


def test_p_eigenvalue_p2_matches_linear():
    mesh = corpus_mesh("l_shape", (), 1)
    lin = robin_spectrum(mesh, 2.0, 1).eigenvalues[0]
    res = p_eigenvalue_2d(mesh, 2.0, 2.0)
    assert res.eigenvalue == pytest.approx(lin, rel=1e-4)
    lam, fld = res
    assert lam == res.eigenvalue and np.all(fld.values >= -1e-12)


def test_p_eigenvalue_disk_against_radial():
    mesh = corpus_mesh(*DISK, 1)
    lam = p_eigenvalue_2d(mesh, 3.0, 1.0).eigenvalue
    assert lam == pytest.approx(radial_p_eigenvalue(2, 3.0, 1.0, 1.0), rel=2e-2)


@pytest.mark.parametrize("p,bc", [(1.5, 1.0), (3.0, None)])
def test_p_eigenvalue_is_rayleigh_quotient(p, bc):
    mesh = corpus_mesh("l_shape", (), 0)
    res = p_eigenvalue_2d(mesh, p, bc)
    u = res.field.values
    g = np.linalg.norm(mesh.field_gradient(u), axis=1)
    num = np.sum(mesh.areas * g**p)
    if bc is not None:
        e = mesh.boundary_edges
        ln = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
        # Gauss rule is exact enough for |u|^p on each boundary edge at this tolerance
        x = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])
        ue = u[e[:, 0], None] * (1 - x) + u[e[:, 1], None] * x
        num += bc * np.sum(ln * 0.5 * np.sum(np.abs(ue) ** p, axis=1))
    assert res.eigenvalue == pytest.approx(num, rel=1e-3)


def test_dirichlet_p_ratio_sandwich():
    # sup|w| lambda^(1/(p-1)) lies between 1 and a dimension- and p-dependent constant
    mesh = corpus_mesh(*DISK, 1)
    for p in (1.5, 3.0):
        sol = solve_p_torsion(mesh, p, None)
        lam = p_eigenvalue_2d(mesh, p, None).eigenvalue
        ratio = dirichlet_p_ratio(sol, lam)
        exact = ball_p_torsion_sup(2, p) * radial_p_eigenvalue(2, p, 1.0, None) ** (1 / (p - 1))
        assert ratio >= 1.0
        assert ratio == pytest.approx(exact, rel=5e-2)
