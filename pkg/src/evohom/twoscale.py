"""Periodic unfolding of micro fields and micro-to-macro error measures."""
from __future__ import annotations

import numpy as np

from . import fem
from .mesh import CellIndexer, Mesh, interpolate_p1

_GAUSS_ORDER = 8


def unfold(micro_mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Nodal values of ``T_eps u`` on the template, shape ``(n_cells, n_template_nodes)``."""
    return np.asarray(u)[micro_mesh.cell_nodes]


def template_mass(micro_mesh: Mesh):
    return fem.assemble_mass(micro_mesh.template)


def unfolded_norm(micro_mesh: Mesh, u: np.ndarray, eps: float) -> float:
    """``||T_eps u||`` in ``L2(Omega x Y*)`` from the template mass matrix."""
    v = unfold(micro_mesh, u)
    MY = template_mass(micro_mesh)
    return float(np.sqrt(eps**2 * np.einsum("ci,ci->", v, (MY @ v.T).T)))


def micro_norm(micro_mesh: Mesh, u: np.ndarray) -> float:
    M = fem.assemble_mass(micro_mesh)
    return float(np.sqrt(u @ (M @ u)))


def cell_gauss_points(indexer: CellIndexer, order: int = _GAUSS_ORDER):
    """Tensor Gauss points per cell, ``(n_cells, order**2, 2)``, with weights summing to one."""
    s, w = np.polynomial.legendre.leggauss(order)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    W = np.outer(w, w).ravel()
    local = np.stack([S1.ravel(), S2.ravel()], axis=1)
    pts = indexer.eps * (indexer.cells()[:, None, :] + local[None])
    return pts, W


def cell_averages(macro_mesh: Mesh, values: np.ndarray, indexer: CellIndexer,
                  order: int = _GAUSS_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Cell means of a macro P1 field and its variance about that mean."""
    pts, W = cell_gauss_points(indexer, order)
    v = interpolate_p1(macro_mesh, values, pts.reshape(-1, 2)).reshape(pts.shape[:2])
    mean = v @ W
    return mean, ((v - mean[:, None]) ** 2) @ W


def two_scale_error(micro_mesh: Mesh, u_micro: np.ndarray, indexer: CellIndexer,
                    macro_mesh: Mesh, u_macro: np.ndarray) -> float:
    """``|| T_eps u_eps - u_0 ||`` in ``L2(Omega x Y*)`` with ``u_0`` constant in ``y``.

    Per cell the square splits into the template norm of ``T_eps u_eps`` minus
    the cell mean of ``u_0`` plus ``|Y*|`` times the variance of ``u_0``.
    """
    MY = template_mass(micro_mesh)
    vol = float(MY.sum())
    mean, var = cell_averages(macro_mesh, u_macro, indexer)
    w = unfold(micro_mesh, u_micro) - mean[:, None]
    sq = np.einsum("ci,ci->c", w, (MY @ w.T).T) + vol * var
    return float(np.sqrt(indexer.eps**2 * np.sum(sq)))


def radius_error(R_cells: np.ndarray, indexer: CellIndexer, macro_mesh: Mesh,
                 R_macro: np.ndarray) -> float:
    """``L2(Omega)`` distance between ``R_k / eps`` and the cell means of the macro radius."""
    r = np.asarray(R_cells, float).reshape(-1) / indexer.eps
    a1, _ = cell_averages(macro_mesh, R_macro, indexer)
    return float(np.sqrt(indexer.eps**2 * np.sum((r - a1) ** 2)))
