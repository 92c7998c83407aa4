import math

import numpy as np
import pytest
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from evohom import fem
from evohom.errors import InconsistentPairs, NonSPDCoefficient, NoConvergence
from evohom.mesh import GAMMA, build_box_mesh, build_collar_mesh

import oracles


def c_mass(X):
    X = np.asarray(X)
    return 1.0 + X[..., 0] * X[..., 1] + np.sin(X[..., 0])


def c_tensor(X):
    X = np.asarray(X)
    a = 2.0 + X[..., 0]
    b = 0.3 * np.cos(X[..., 1])
    c = 1.0 + X[..., 1] ** 2
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


@pytest.fixture(scope="module")
def mesh():
    return build_collar_mesh(0.35, 0.08, 0.1)


def test_matrices_match_element_loop(mesh):
    M_ref, K_ref = oracles.element_loop_matrices(mesh.vertices, mesh.triangles, c_mass, c_tensor)
    M = fem.assemble_mass(mesh, c_mass)
    K = fem.assemble_stiffness(mesh, c_tensor)
    assert abs(M - M_ref).max() < 1e-15
    assert abs(K - K_ref).max() < 1e-13


def test_convection_matches_element_loop(mesh):
    V = lambda X: np.stack([np.sin(X[..., 1]), X[..., 0] ** 2], -1)  # noqa: E731
    C = fem.assemble_convection(mesh, V).toarray()
    bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    ref = np.zeros_like(C)
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        T = np.array([p[1] - p[0], p[2] - p[0]]).T
        area = 0.5 * abs(np.linalg.det(T))
        G = np.linalg.solve(T.T, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]))
        for lam in bary:
            v = V(lam @ p)
            ref[np.ix_(tri, tri)] -= area / 3 * np.outer(lam, v @ G)
    assert np.max(np.abs(C - ref)) < 1e-15
    np.testing.assert_allclose(C @ np.ones(len(C)), 0.0, atol=1e-14)


def test_mass_and_stiffness_basic(mesh):
    M = fem.assemble_mass(mesh)
    K = fem.assemble_stiffness(mesh)
    one = np.ones(mesh.n_vertices)
    assert one @ M @ one == pytest.approx(mesh.area(), rel=1e-14)
    np.testing.assert_allclose(K @ one, 0.0, atol=1e-12)
    assert abs(K - K.T).max() < 1e-15
    x = mesh.vertices[:, 0]
    assert x @ K @ x == pytest.approx(mesh.area(), rel=1e-12)


def test_load_and_surface(mesh):
    b = fem.assemble_load(mesh, 3.0)
    assert b.sum() == pytest.approx(3.0 * mesh.area())
    e = mesh.edges(GAMMA)
    perim = np.sum(np.linalg.norm(np.diff(mesh.vertices[e], axis=1)[:, 0], axis=1))
    S = fem.assemble_surface_mass(mesh, GAMMA)
    one = np.ones(mesh.n_vertices)
    assert one @ S @ one == pytest.approx(perim)
    assert fem.assemble_surface_load(mesh, GAMMA, 2.0).sum() == pytest.approx(2.0 * perim)
    assert perim == pytest.approx(2 * math.pi * 0.35, rel=2e-3)
    assert fem.assemble_surface_mass(mesh, "Nope").nnz == 0


def test_stiffness_rhs_is_drive_of_linear_function(mesh):
    D = c_tensor
    e = np.array([0.3, -1.2])
    K = fem.assemble_stiffness(mesh, D)
    lin = mesh.vertices @ e
    np.testing.assert_allclose(fem.assemble_stiffness_rhs(mesh, D, e), -(K @ lin), atol=1e-12)


def test_nonspd_rejected(mesh):
    with pytest.raises(NonSPDCoefficient):
        fem.assemble_stiffness(mesh, -np.eye(2))
    with pytest.raises(ValueError):
        fem.assemble_mass(mesh, np.nan)
    with pytest.raises(ValueError):
        fem.assemble_mass(mesh, np.ones(7))


def test_solvers(mesh, rng):
    A = fem.assemble_mass(mesh) + fem.assemble_stiffness(mesh)
    b = rng.standard_normal(mesh.n_vertices)
    ref = spla.spsolve(A.tocsc(), b)
    np.testing.assert_allclose(fem.solve_spd(A, b, tol=1e-12), ref, rtol=1e-9, atol=1e-12)
    C = A + 5.0 * fem.assemble_convection(mesh, np.array([1.0, 0.5]))
    ref = spla.spsolve(C.tocsc(), b)
    np.testing.assert_allclose(fem.solve_general(C, b, tol=1e-12), ref, rtol=1e-8, atol=1e-10)
    np.testing.assert_array_equal(fem.solve_spd(A, np.zeros_like(b)), 0.0)
    with pytest.raises(NoConvergence):
        fem.solve_spd(A, b, tol=1e-14, max_iter=2)


def test_periodic_map_and_errors():
    P = fem.periodic_map(4, np.array([[3, 0]]))
    np.testing.assert_array_equal(P.toarray(), [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0]])
    for bad in ([[3, 0], [3, 1]], [[1, 1]], [[3, 0], [0, 2]], [[9, 0]]):
        with pytest.raises(InconsistentPairs):
            fem.periodic_map(4, np.array(bad))


def test_periodic_poisson_second_order():
    k = 2 * np.pi
    exact = lambda X: np.sin(k * X[..., 0]) * np.cos(k * X[..., 1])  # noqa: E731
    errs = []
    for n in (16, 32):
        m = build_box_mesh((1.0, 1.0), (n, n))
        mass = np.asarray(fem.assemble_mass(m).sum(axis=1)).ravel()
        red = fem.constrain_periodic_and_mean(fem.assemble_stiffness(m),
                                              fem.assemble_load(m, lambda X: 2 * k * k * exact(X)),
                                              m.periodic_pairs, True, mass)
        u = red.solve()
        assert abs(mass @ u) < 1e-12
        errs.append(fem.l2_error(m, u, exact))
    assert math.log2(errs[0] / errs[1]) > 1.9


def test_mean_zero_needs_mass():
    m = build_box_mesh((1.0, 1.0), (4, 4))
    with pytest.raises(ValueError):
        fem.constrain_periodic_and_mean(fem.assemble_stiffness(m), np.zeros(m.n_vertices), m.periodic_pairs, True)


def test_dump_matrix_round_trip(tmp_path, mesh):
    K = fem.assemble_stiffness(mesh, c_tensor)
    path = tmp_path / "K.mtx"
    fem.dump_matrix(K, path)
    back = sp.csr_matrix(scipy.io.mmread(path))
    assert abs(back - K).max() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_quadrature_exact_for_quadratics(a, b, c):
    m = build_box_mesh((1.0, 1.0), (3, 3))
    u = np.zeros(m.n_vertices)
    f = lambda X: a * X[..., 0] ** 2 + b * X[..., 0] * X[..., 1] + c * X[..., 1] ** 2  # noqa: E731
    assert fem.assemble_load(m, f).sum() == pytest.approx(a / 3 + b / 4 + c / 3, abs=1e-13)
    assert fem.l2_error(m, u, f) ** 2 == pytest.approx(
        a * a / 5 + b * b / 9 + c * c / 5 + 2 * a * b / 8 + 2 * a * c / 9 + 2 * b * c / 8, abs=1e-12)
