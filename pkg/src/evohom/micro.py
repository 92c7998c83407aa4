"""Rothe scheme for the transformed micro problem on the fixed perforated domain.

Every step first moves the cell radii explicitly with the lagged surface
averaged rate, then rebuilds the transformed coefficients at the new radii
and performs one linear solve for the concentration.  Radii are stored per
cell in length units; all geometric factors are evaluated on the shared
template at the dimensionless radius ``R_k / eps``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fem
from .errors import JacobianBoundViolation, MissingSurface, RadiusBoundViolation, TimeStepTooLarge
from .geometry import CENTER, _frame, hanzawa_det, hanzawa_grad, hanzawa_velocity
from .kinetics import ProblemData
from .mesh import GAMMA, CellIndexer, Mesh, build_micro_mesh
from .validation import check_step

log = logging.getLogger(__name__)

_JAC_SLACK = 1e-12


@dataclass(frozen=True)
class MicroState:
    t: float
    u: np.ndarray
    R: np.ndarray        # (n1, n2) radii in length units
    J_prev: np.ndarray   # (M, Q) Jacobian at quadrature points
    step: int = 0


@dataclass(frozen=True)
class StepCoefficients:
    S: np.ndarray
    F: np.ndarray
    J: np.ndarray
    D: np.ndarray
    V: np.ndarray
    f: np.ndarray
    G: np.ndarray
    J_gamma: np.ndarray


@dataclass
class MicroRun:
    states: list
    rows: list
    energy_bound: float

    @property
    def final(self) -> MicroState:
        return self.states[-1]


def inv2x2(F: np.ndarray):
    """Closed-form inverse and determinant of a stack of 2x2 matrices."""
    a, b, c, d = F[..., 0, 0], F[..., 0, 1], F[..., 1, 0], F[..., 1, 1]
    det = a * d - b * c
    inv = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[..., None, None]
    return inv, det


class MicroSolver:
    """Time stepper for the transformed micro problem at scale ``eps``."""

    def __init__(self, data: ProblemData, eps: float, h_cell: float = 0.05, extents=(1, 1),
                 template: Mesh | None = None, tol: float = 1e-12, check_coercivity: bool = True):
        self.data = data
        self.geom = data.geometry
        self.indexer = CellIndexer(eps, extents)
        self.eps = self.indexer.eps
        self.mesh = build_micro_mesh(self.indexer, h_cell, self.geom.r_hi, template,
                                     self.geom.profile.delta0)
        self.template = self.mesh.template
        self.tol = tol
        self.check_coercivity = check_coercivity
        t = self.template
        ed = fem.element_data(t)
        self._ty = ed.qpoints                                   # (Mt, Q, 2)
        self._nc = self.indexer.n_cells
        hole = t.edges(GAMMA)
        if len(hole) == 0:
            raise MissingSurface("template cell has no GammaHole edges")
        pts, length, s, w = fem.edge_quadrature(t, hole)
        self._ey, self._elen, self._es, self._ew = pts, length, s, w
        # outward normal of the perforated domain on the hole points into the hole
        self._en = -(pts - CENTER) / np.linalg.norm(pts - CENTER, axis=-1)[..., None]
        origin = self.eps * self.indexer.cells().astype(float)
        self._origin_q = np.repeat(origin, t.n_triangles, axis=0)[:, None, :]
        self.M0 = fem.assemble_mass(self.mesh)
        self.K0 = fem.assemble_stiffness(self.mesh)
        self.J_lo, self.J_hi = self.geom.jacobian_bounds()

    # -- geometry on the template -------------------------------------------------
    def _r(self, R) -> np.ndarray:
        R = np.asarray(R, dtype=float).reshape(-1)
        return R / self.eps

    def _flat(self, arr):
        """(nc, Mt, Q, ...) -> (M, Q, ...)."""
        return arr.reshape((-1,) + arr.shape[2:])

    def deformed_points(self, R) -> np.ndarray:
        r = self._r(R)[:, None, None]
        _, nu, chi, _, _ = _frame(self._ty, self.geom)
        x = self.eps * self._ty[None]
        S = x + (self.eps * (r - self.geom.r_hi) * chi[None])[..., None] * nu[None]
        return self._flat(S) + self._origin_q

    def jacobian_q(self, R) -> np.ndarray:
        r = self._r(R)[:, None, None]
        return self._flat(hanzawa_det(self._ty[None], r, self.geom))

    def nodal_deformed(self, R) -> np.ndarray:
        """``S_eps(x)`` at mesh vertices; faces are outside the collar so duplicates agree."""
        r = self._r(R)[:, None]
        y = self.template.vertices
        _, nu, chi, _, _ = _frame(y, self.geom)
        S = self.eps * (y[None] + ((r - self.geom.r_hi) * chi[None])[..., None] * nu[None])
        S = S + self.eps * self.indexer.cells()[:, None, :]
        out = np.empty((self.mesh.n_vertices, 2))
        out[self.mesh.cell_nodes.ravel()] = S.reshape(-1, 2)
        return out

    # -- scheme ---------------------------------------------------------------------
    def initial_state(self, R0=None) -> MicroState:
        if R0 is None:
            R0 = self.eps * self.data.R_init(self.indexer.centers())
        R0 = np.asarray(R0, dtype=float).reshape(self.indexer.shape)
        self.geom.bounds.check(R0, scale=self.eps)
        u0 = np.asarray(self.data.u_init(self.nodal_deformed(R0)), dtype=float)
        u0 = np.broadcast_to(u0, (self.mesh.n_vertices,)).copy()
        return MicroState(0.0, u0, R0, self.jacobian_q(R0), 0)

    def _edge_u(self, u) -> np.ndarray:
        e = self.mesh.edges(GAMMA)
        s = self._es
        vals = u[e[:, 0], None] * (1.0 - s) + u[e[:, 1], None] * s
        return vals.reshape(self._nc, -1, len(s))

    def surface_average_G(self, u, R) -> np.ndarray:
        """Per-cell ``eps`` times the edge-quadrature mean of ``g(u, R_k/eps)`` over the hole."""
        r = self._r(R)
        g = self.data.kinetics.g(self._edge_u(u), r[:, None, None])
        wl = self._elen[:, None] * self._ew[None, :]
        avg = np.einsum("ceq,eq->c", g, wl) / wl.sum()
        return (self.eps * avg).reshape(self.indexer.shape)

    def radius_step(self, state: MicroState, dt: float):
        kin = self.data.kinetics
        if dt > kin.max_radius_step() * (1.0 + 1e-12):
            raise TimeStepTooLarge(f"dt={dt} exceeds the radius restriction {kin.max_radius_step()}")
        G = self.surface_average_G(state.u, state.R)
        R_new = state.R + dt * G
        lo, hi = self.eps * self.geom.r_lo, self.eps * self.geom.r_hi
        tol = 1e-12 * self.eps
        if np.any(R_new < lo - tol) or np.any(R_new > hi + tol):
            raise RadiusBoundViolation(
                f"radius left [{lo}, {hi}]: range [{R_new.min()}, {R_new.max()}] after step to t={state.t + dt}"
            )
        return np.clip(R_new, lo, hi), G

    def build_step_coefficients(self, R_new, R_old, dt: float, t: float = 0.0) -> StepCoefficients:
        geom = self.geom
        r = self._r(R_new)[:, None, None]
        rate = ((np.asarray(R_new) - np.asarray(R_old)).reshape(-1) / dt)[:, None, None]
        F = self._flat(hanzawa_grad(self._ty[None], r, geom))
        J = self._flat(hanzawa_det(self._ty[None], r, geom))
        if np.any(J < self.J_lo - _JAC_SLACK) or np.any(J > self.J_hi + _JAC_SLACK):
            raise JacobianBoundViolation(f"Jacobian range [{J.min()}, {J.max()}] outside bounds")
        Finv, _ = inv2x2(F)
        S = self.deformed_points(R_new)
        Dx = self.data.D_at(S)
        D = J[..., None, None] * np.einsum("mqij,mqjk,mqlk->mqil", Finv, Dx, Finv)
        V = self._flat(hanzawa_velocity(self._ty[None], r, rate, geom))
        f = self.data.f_at(t, S)
        J_gamma = hanzawa_det(self._ey[None], self._r(R_new)[:, None, None], geom).reshape(-1, len(self._es))
        G = (np.asarray(R_new) - np.asarray(R_old)) / dt
        return StepCoefficients(S, F, J, D, V, f, G, J_gamma)

    def coercivity_margin(self, co: StepCoefficients) -> tuple[float, float, float]:
        """``(C_V, d, dt_max)`` with ``dt_max = c0_J / (2 C_V^2 / d + 1)``."""
        C_V = float(np.max(np.linalg.norm(co.V, axis=-1)))
        d = float(np.min(np.linalg.eigvalsh(co.D)[..., 0]))
        return C_V, d, self.J_lo / (2.0 * C_V**2 / d + 1.0)

    def rothe_step(self, state: MicroState, dt: float):
        R_new, G = self.radius_step(state, dt)
        t_new = state.t + dt
        co = self.build_step_coefficients(R_new, state.R, dt, t_new)
        C_V, d, dt_max = self.coercivity_margin(co)
        if self.check_coercivity and dt > dt_max:
            raise TimeStepTooLarge(f"dt={dt} violates the coercivity margin {dt_max:.3e}")
        mesh = self.mesh
        Mprev = fem.assemble_mass(mesh, state.J_prev / dt)
        A = Mprev + fem.assemble_stiffness(mesh, co.D) + fem.assemble_convection(mesh, co.V)
        b = Mprev @ state.u
        if not self.data.is_zero_source():
            b = b + fem.assemble_load(mesh, co.J * co.f)
        if np.any(G):
            Gc = G.reshape(-1)[:, None, None]
            coef = -Gc * (self._edge_u(state.u) - self.data.rho) * co.J_gamma.reshape(self._nc, -1, len(self._es))
            b = b + fem.assemble_surface_load(mesh, GAMMA, coef.reshape(-1, len(self._es)))
        u = fem.solve_general(A, b, tol=self.tol, x0=state.u)
        new = MicroState(t_new, u, R_new, co.J, state.step + 1)
        row = {
            "t": t_new,
            "l2_u": float(np.sqrt(u @ (self.M0 @ u))),
            "grad_u_sq": float(u @ (self.K0 @ u)),
            "mass_Ju": self.mass(u, co.J),
            "max_abs_G": float(np.max(np.abs(G))),
            "C_V": C_V,
            "d_min": d,
            "J_min": float(co.J.min()),
            "J_max": float(co.J.max()),
            "R_min": float(R_new.min()),
            "R_max": float(R_new.max()),
        }
        return new, row, co

    def mass(self, u, J) -> float:
        """``int J u dx`` with ``J`` at quadrature points."""
        return float(np.sum(fem.assemble_mass(self.mesh, J) @ u))

    def piola_residual(self, R_new, R_old, dt: float) -> np.ndarray:
        """Nodal residual of ``dJ/dt = div V`` tested against every P1 basis function."""
        mesh = self.mesh
        co = self.build_step_coefficients(R_new, R_old, dt)
        r = fem.assemble_load(mesh, (co.J - self.jacobian_q(R_old)) / dt)
        ed = fem.element_data(mesh)
        vg = np.einsum("q,mqd,mad->ma", ed.weights, co.V, ed.grads) * ed.area[:, None]
        r += np.bincount(mesh.triangles.ravel(), vg.ravel(), minlength=mesh.n_vertices)
        rate = co.G.reshape(-1)[:, None, None]
        Vg = hanzawa_velocity(self._ey[None], self._r(R_new)[:, None, None], rate, self.geom)
        vn = np.einsum("ceqd,eqd->ceq", Vg, self._en).reshape(-1, len(self._es))
        r -= fem.assemble_surface_load(mesh, GAMMA, vn)
        return r

    def run(self, T: float, dt: float, state: MicroState | None = None, keep: int = 0,
            callback=None) -> MicroRun:
        """Advance to ``T``; ``keep > 0`` stores every ``keep``-th state besides the last."""
        n = check_step(T, dt)
        state = self.initial_state() if state is None else state
        states, rows = [state], []
        max_l2 = float(np.sqrt(state.u @ (self.M0 @ state.u)))
        dissip = 0.0
        for _ in range(n):
            state, row, co = self.rothe_step(state, dt)
            max_l2 = max(max_l2, row["l2_u"])
            dissip += dt * row["grad_u_sq"]
            row["energy"] = max_l2 + dissip
            rows.append(row)
            if callback is not None:
                callback(state, row, co)
            if keep and state.step % keep == 0:
                states.append(state)
        if states[-1] is not state:
            states.append(state)
        energy = max_l2 + dissip
        log.info("micro run eps=%g T=%g dt=%g energy=%.6g", self.eps, T, dt, energy)
        return MicroRun(states, rows, energy)
