import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evohom import fem
from evohom.mesh import CellIndexer, build_box_mesh, build_micro_mesh
from evohom.twoscale import (cell_averages, cell_gauss_points, micro_norm, radius_error, two_scale_error,
                             unfold, unfolded_norm)


@pytest.fixture(scope="module")
def setup():
    idx = CellIndexer(0.25)
    return idx, build_micro_mesh(idx, 0.08, delta0=0.1), build_box_mesh((1.0, 1.0), (8, 8))


def brute_force_error(micro, u, idx, f0):
    """Per-cell quadrature of (T u(x, y) - f0(x))^2 with a tensor rule in x and the template rule in y."""
    tmpl = micro.template
    ed = fem.element_data(tmpl)
    pts, W = cell_gauss_points(idx, 4)
    total = 0.0
    for c in range(idx.n_cells):
        v = fem.p1_values(tmpl, u[micro.cell_nodes[c]])
        for x, w in zip(pts[c], W):
            total += idx.eps**2 * w * np.sum(ed.area * ((v - f0(x)) ** 2 @ ed.weights))
    return np.sqrt(total)


def test_unfolding_isometry(setup, rng):
    idx, micro, _ = setup
    for _ in range(3):
        u = rng.standard_normal(micro.n_vertices)
        assert unfolded_norm(micro, u, idx.eps) == pytest.approx(micro_norm(micro, u), rel=1e-12)
    assert unfold(micro, np.arange(micro.n_vertices)).shape == (idx.n_cells, micro.template.n_vertices)


def test_two_scale_error_against_brute_force(setup, rng):
    idx, micro, macro = setup
    u = rng.standard_normal(micro.n_vertices)
    a, b = 0.3, -0.7
    f0 = lambda x: 1.0 + a * x[0] + b * x[1]  # noqa: E731
    u0 = 1.0 + a * macro.vertices[:, 0] + b * macro.vertices[:, 1]
    got = two_scale_error(micro, u, idx, macro, u0)
    assert got == pytest.approx(brute_force_error(micro, u, idx, f0), rel=1e-12)


def test_two_scale_error_vanishes_for_matching_constant(setup):
    idx, micro, macro = setup
    assert two_scale_error(micro, np.full(micro.n_vertices, 2.5), idx, macro, np.full(macro.n_vertices, 2.5)) < 1e-13


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_cell_averages_of_affine(a, b, c):
    idx = CellIndexer(0.25)
    macro = build_box_mesh((1.0, 1.0), (8, 8))
    v = a + b * macro.vertices[:, 0] + c * macro.vertices[:, 1]
    m1, _ = cell_averages(macro, v, idx)
    ctr = idx.centers()
    np.testing.assert_allclose(m1, a + b * ctr[:, 0] + c * ctr[:, 1], atol=1e-12)


def test_radius_error(setup):
    idx, _, macro = setup
    Rm = 0.2 + 0.1 * macro.vertices[:, 0]
    ctr = idx.centers()
    R_cells = idx.eps * (0.2 + 0.1 * ctr[:, 0]).reshape(idx.shape)
    assert radius_error(R_cells, idx, macro, Rm) < 1e-14
    assert radius_error(R_cells + 0.01 * idx.eps, idx, macro, Rm) == pytest.approx(0.01)


def test_gauss_weights():
    pts, W = cell_gauss_points(CellIndexer(0.5))
    assert W.sum() == pytest.approx(1.0)
    assert pts.shape == (4, 64, 2)
