"""P1 assembly, periodic/mean constraints and Jacobi-preconditioned Krylov solves.

Coefficients may be given as ``None`` (unit), a float, an array with one
value per element, an array with one value per quadrature point, or a
callable evaluated at the physical quadrature points.  Tensor coefficients
carry two trailing axes of length 2, vector coefficients one.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InconsistentPairs, NonSPDCoefficient, NoConvergence
from .mesh import Mesh

# barycentric points and weights (weights sum to one)
DEGREE2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)
_a, _b, _c, _d = 0.059715871789770, 0.470142064105115, 0.797426985353087, 0.101286507323456
DEGREE5 = (
    np.array([[1 / 3, 1 / 3, 1 / 3],
              [_a, _b, _b], [_b, _a, _b], [_b, _b, _a],
              [_c, _d, _d], [_d, _c, _d], [_d, _d, _c]]),
    np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
)
_g = 0.5 / math.sqrt(3.0)
EDGE_GAUSS2 = (np.array([0.5 - _g, 0.5 + _g]), np.array([0.5, 0.5]))


@dataclass(frozen=True)
class ElementData:
    area: np.ndarray        # (M,)
    grads: np.ndarray       # (M, 3, 2) gradients of the barycentric basis
    qpoints: np.ndarray     # (M, Q, 2)
    bary: np.ndarray        # (Q, 3)
    weights: np.ndarray     # (Q,)


def element_data(mesh: Mesh, rule=DEGREE2) -> ElementData:
    p = mesh.vertices[mesh.triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    inv = np.empty((len(p), 2, 2))
    inv[:, 0, 0], inv[:, 0, 1] = e2[:, 1] / det, -e2[:, 0] / det
    inv[:, 1, 0], inv[:, 1, 1] = -e1[:, 1] / det, e1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ak,mkj->maj", ref, inv)
    bary, w = rule
    qp = np.einsum("qa,mad->mqd", bary, p)
    return ElementData(0.5 * det, grads, qp, bary, w)


def edge_quadrature(mesh: Mesh, edges: np.ndarray, rule=EDGE_GAUSS2):
    """Physical points ``(E, Q, 2)``, edge lengths ``(E,)`` and the 1D rule."""
    s, w = rule
    p0, p1 = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    pts = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    return pts, np.linalg.norm(p1 - p0, axis=1), s, w


def _at_quad(coeff, qpoints: np.ndarray, rank: int) -> np.ndarray:
    """Broadcast a coefficient to shape ``(M, Q) + (2,)*rank``."""
    m, q = qpoints.shape[:2]
    tail = (2,) * rank
    if coeff is None:
        base = np.eye(2) if rank == 2 else (np.zeros(2) if rank == 1 else 1.0)
        return np.broadcast_to(base, (m, q) + tail)
    if callable(coeff):
        val = np.asarray(coeff(qpoints), dtype=float)
    else:
        val = np.asarray(coeff, dtype=float)
    if val.shape == tail:
        return np.broadcast_to(val, (m, q) + tail)
    if val.shape == (m,) + tail:
        return np.broadcast_to(val[:, None], (m, q) + tail)
    if val.shape == (m, q) + tail:
        return val
    raise ValueError(f"coefficient of shape {val.shape} does not fit {m} elements x {q} points")


def _check_finite(val, what):
    if not np.all(np.isfinite(val)):
        raise ValueError(f"non-finite {what} coefficient at a quadrature point")


def _csr(rows, cols, vals, n) -> sp.csr_matrix:
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def _pairs(tris):
    rows = np.repeat(tris[:, :, None], tris.shape[1], axis=2)
    cols = np.repeat(tris[:, None, :], tris.shape[1], axis=1)
    return rows, cols


def assemble_stiffness(mesh: Mesh, tensor=None, spd: bool = True, rule=DEGREE2) -> sp.csr_matrix:
    """``K_ij = int D grad(phi_j) . grad(phi_i)``."""
    ed = element_data(mesh, rule)
    D = _at_quad(tensor, ed.qpoints, 2)
    _check_finite(D, "tensor")
    if spd:
        sym = 0.5 * (D + np.swapaxes(D, -1, -2))
        if np.any(np.linalg.eigvalsh(sym)[..., 0] <= 0.0):
            raise NonSPDCoefficient("tensor coefficient has a nonpositive eigenvalue")
    Dbar = np.einsum("q,mqij->mij", ed.weights, D)
    Ke = ed.area[:, None, None] * np.einsum("mai,mij,mbj->mab", ed.grads, Dbar, ed.grads)
    rows, cols = _pairs(mesh.triangles)
    return _csr(rows, cols, Ke, mesh.n_vertices)


def assemble_mass(mesh: Mesh, scalar=None, rule=DEGREE2) -> sp.csr_matrix:
    """``M_ij = int c phi_j phi_i``."""
    ed = element_data(mesh, rule)
    c = _at_quad(scalar, ed.qpoints, 0)
    _check_finite(c, "scalar")
    Me = ed.area[:, None, None] * np.einsum("q,mq,qa,qb->mab", ed.weights, c, ed.bary, ed.bary)
    rows, cols = _pairs(mesh.triangles)
    return _csr(rows, cols, Me, mesh.n_vertices)


def assemble_convection(mesh: Mesh, vector=None, rule=DEGREE2) -> sp.csr_matrix:
    """``C_ij = -int (V . grad(phi_j)) phi_i``; not symmetric in general."""
    ed = element_data(mesh, rule)
    V = _at_quad(vector, ed.qpoints, 1)
    _check_finite(V, "vector")
    Vg = np.einsum("mqd,mbd->mqb", V, ed.grads)
    Ce = -ed.area[:, None, None] * np.einsum("q,qa,mqb->mab", ed.weights, ed.bary, Vg)
    rows, cols = _pairs(mesh.triangles)
    return _csr(rows, cols, Ce, mesh.n_vertices)


def assemble_surface_mass(mesh: Mesh, tag: str, scalar=None, rule=EDGE_GAUSS2) -> sp.csr_matrix:
    """``int_Gamma c phi_j phi_i dsigma`` over the edges carrying ``tag``."""
    edges = mesh.edges(tag)
    n = mesh.n_vertices
    if len(edges) == 0:
        return sp.csr_matrix((n, n))
    pts, length, s, w = edge_quadrature(mesh, edges, rule)
    c = _at_quad(scalar, pts, 0)
    _check_finite(c, "surface")
    phi = np.stack([1.0 - s, s], axis=1)
    Se = length[:, None, None] * np.einsum("q,eq,qa,qb->eab", w, c, phi, phi)
    rows, cols = _pairs(edges)
    return _csr(rows, cols, Se, n)


def assemble_load(mesh: Mesh, scalar=None, rule=DEGREE2) -> np.ndarray:
    """``b_i = int f phi_i``."""
    ed = element_data(mesh, rule)
    f = _at_quad(scalar, ed.qpoints, 0)
    _check_finite(f, "load")
    be = ed.area[:, None] * np.einsum("q,mq,qa->ma", ed.weights, f, ed.bary)
    return np.bincount(mesh.triangles.ravel(), be.ravel(), minlength=mesh.n_vertices)


def assemble_surface_load(mesh: Mesh, tag: str, scalar=None, rule=EDGE_GAUSS2) -> np.ndarray:
    edges = mesh.edges(tag)
    if len(edges) == 0:
        return np.zeros(mesh.n_vertices)
    pts, length, s, w = edge_quadrature(mesh, edges, rule)
    c = _at_quad(scalar, pts, 0)
    phi = np.stack([1.0 - s, s], axis=1)
    be = length[:, None] * np.einsum("q,eq,qa->ea", w, c, phi)
    return np.bincount(edges.ravel(), be.ravel(), minlength=mesh.n_vertices)


def assemble_stiffness_rhs(mesh: Mesh, tensor, direction: np.ndarray, rule=DEGREE2) -> np.ndarray:
    """``b_i = -int D e . grad(phi_i)`` for a constant or per-point vector ``e``."""
    ed = element_data(mesh, rule)
    D = _at_quad(tensor, ed.qpoints, 2)
    e = _at_quad(direction, ed.qpoints, 1)
    De = np.einsum("q,mqij,mqj->mi", ed.weights, D, e)
    be = -ed.area[:, None] * np.einsum("mai,mi->ma", ed.grads, De)
    return np.bincount(mesh.triangles.ravel(), be.ravel(), minlength=mesh.n_vertices)


def p1_values(mesh: Mesh, u: np.ndarray, rule=DEGREE2) -> np.ndarray:
    """Nodal field evaluated at quadrature points, shape ``(M, Q)``."""
    return np.einsum("qa,ma->mq", rule[0], np.asarray(u)[mesh.triangles])


def p1_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    ed = element_data(mesh)
    return np.einsum("ma,mad->md", np.asarray(u)[mesh.triangles], ed.grads)


def l2_error(mesh: Mesh, u: np.ndarray, exact) -> float:
    ed = element_data(mesh, DEGREE5)
    diff = p1_values(mesh, u, DEGREE5) - exact(ed.qpoints)
    return float(math.sqrt(np.sum(ed.area * (diff**2 @ ed.weights))))


def h1_semi_error(mesh: Mesh, u: np.ndarray, grad_exact) -> float:
    ed = element_data(mesh, DEGREE5)
    gh = np.einsum("ma,mad->md", np.asarray(u)[mesh.triangles], ed.grads)
    diff = gh[:, None, :] - grad_exact(ed.qpoints)
    return float(math.sqrt(np.sum(ed.area * (np.sum(diff**2, axis=-1) @ ed.weights))))


def _jacobi(A) -> spla.LinearOperator:
    d = A.diagonal().astype(float)
    d = np.where(d != 0.0, d, 1.0)
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(A @ x - b) / nb) if nb > 0 else 0.0


def solve_spd(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients with a checked relative residual."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    A = sp.csr_matrix(A)
    max_iter = 20 * A.shape[0] if max_iter is None else max_iter
    x, _ = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=_jacobi(A))
    r = _relres(A, x, b)
    # the preconditioned residual drives CG; accept a small slack on the true one
    if not r <= 10.0 * tol:
        raise NoConvergence(f"CG stopped with relative residual {r:.3e} > {tol:.1e}")
    return x


def solve_general(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None) -> np.ndarray:
    """Jacobi-preconditioned BiCGStab, falling back to restarted GMRES(30)."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    A = sp.csr_matrix(A)
    max_iter = 20 * A.shape[0] if max_iter is None else max_iter
    M = _jacobi(A)
    x, info = spla.bicgstab(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    if info != 0 or not _relres(A, x, b) <= 10.0 * tol:
        x, info = spla.gmres(A, b, x0=x0, rtol=tol, atol=0.0, restart=30, maxiter=max_iter, M=M)
    r = _relres(A, x, b)
    if not r <= 10.0 * tol:
        raise NoConvergence(f"BiCGStab/GMRES stopped with relative residual {r:.3e} > {tol:.1e}")
    return x


def periodic_map(n: int, pairs: np.ndarray) -> sp.csr_matrix:
    """Prolongation ``P`` (n x n_free) sending master values to their slaves."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs):
        slaves, masters = pairs[:, 0], pairs[:, 1]
        if np.any(pairs < 0) or np.any(pairs >= n):
            raise InconsistentPairs("periodic pair index out of range")
        if len(np.unique(slaves)) != len(slaves):
            raise InconsistentPairs("a node is paired to more than one master")
        if np.any(slaves == masters) or np.any(np.isin(masters, slaves)):
            raise InconsistentPairs("periodic masters must be free nodes")
    owner = np.arange(n)
    if len(pairs):
        owner[pairs[:, 0]] = pairs[:, 1]
    free = np.setdiff1d(np.arange(n), pairs[:, 0] if len(pairs) else [])
    col = np.full(n, -1)
    col[free] = np.arange(len(free))
    return sp.csr_matrix((np.ones(n), (np.arange(n), col[owner])), shape=(n, len(free)))


@dataclass
class ReducedSystem:
    A: sp.csr_matrix
    b: np.ndarray
    P: sp.csr_matrix
    mean_zero: bool

    def expand(self, x: np.ndarray) -> np.ndarray:
        k = self.P.shape[1]
        return self.P @ np.asarray(x)[:k]

    def solve(self) -> np.ndarray:
        # the bordered saddle-point matrix is indefinite and has a zero pivot
        x = spla.spsolve(self.A.tocsc(), self.b) if self.mean_zero else solve_spd(self.A, self.b)
        return self.expand(x)


def constrain_periodic_and_mean(A, b, periodic_pairs, mean_zero: bool,
                                mass_vector: np.ndarray | None = None) -> ReducedSystem:
    """Merge periodic DOFs and optionally border with a mean-zero multiplier row."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    P = periodic_map(n, periodic_pairs)
    Ar = (P.T @ A @ P).tocsr()
    br = P.T @ np.asarray(b, dtype=float)
    if mean_zero:
        if mass_vector is None:
            raise ValueError("mean-zero constraint needs the coefficient-1 mass vector")
        m = P.T @ np.asarray(mass_vector, dtype=float)
        Ar = sp.bmat([[Ar, sp.csr_matrix(m[:, None])], [sp.csr_matrix(m[None, :]), None]]).tocsr()
        br = np.append(br, 0.0)
    return ReducedSystem(Ar, br, P, mean_zero)


def dump_matrix(A, path) -> None:
    """MatrixMarket coordinate dump, written atomically."""
    tmp = f"{path}.tmp.mtx"
    scipy.io.mmwrite(tmp, sp.coo_matrix(A), precision=17)
    os.replace(tmp, path)
