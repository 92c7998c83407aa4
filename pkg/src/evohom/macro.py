"""Upscaled parabolic equation coupled to the pointwise radius ODE on the unperforated domain."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fem
from .effective import EffectiveTable, XDependentCellCache
from .errors import RadiusBoundViolation, TimeStepTooLarge
from .kinetics import ProblemData
from .mesh import Mesh, build_box_mesh
from .validation import check_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MacroState:
    t: float
    u: np.ndarray
    R: np.ndarray   # nodal dimensionless radii
    step: int = 0


@dataclass
class MacroRun:
    states: list
    rows: list

    @property
    def final(self) -> MacroState:
        return self.states[-1]


class MacroSolver:
    """Backward-Euler/explicit-radius stepper with tabulated effective coefficients.

    With ``explicit_q`` the drift term is assembled from ``dJbar/dR`` and the
    mass coefficient is ``Jbar^j``; otherwise the two cancel analytically and the
    mass coefficient is ``Jbar^{j-1}``.
    """

    def __init__(self, data: ProblemData, table: EffectiveTable, n: int = 32, extents=(1, 1),
                 tol: float = 1e-12, explicit_q: bool = False, mesh: Mesh | None = None):
        self.data = data
        self.table = table
        ext = tuple(int(e) for e in extents)
        self.mesh = build_box_mesh(ext, (n * ext[0], n * ext[1])) if mesh is None else mesh
        self.tol = tol
        self.explicit_q = explicit_q
        self.M0 = fem.assemble_mass(self.mesh)
        self.K0 = fem.assemble_stiffness(self.mesh)
        self._cache = None
        if not data.x_constant_D:
            self._cache = XDependentCellCache(data.D, table.radii, geom=data.geometry)

    def initial_state(self) -> MacroState:
        x = self.mesh.vertices
        u0 = np.broadcast_to(np.asarray(self.data.u_init(x), float), (len(x),)).copy()
        R0 = np.broadcast_to(np.asarray(self.data.R_init(x), float), (len(x),)).copy()
        self.data.geometry.bounds.check(R0)
        return MacroState(0.0, u0, R0, 0)

    def radius_step(self, state: MacroState, dt: float):
        kin = self.data.kinetics
        if dt > kin.max_radius_step() * (1.0 + 1e-12):
            raise TimeStepTooLarge(f"dt={dt} exceeds the radius restriction {kin.max_radius_step()}")
        rate = kin.g(state.u, state.R)
        R_new = state.R + dt * rate
        b = self.data.geometry.bounds
        if np.any(R_new < b.r_lo - 1e-12) or np.any(R_new > b.r_hi + 1e-12):
            raise RadiusBoundViolation(f"nodal radius left [{b.r_lo}, {b.r_hi}] at t={state.t + dt}")
        return np.clip(R_new, b.r_lo, b.r_hi), rate

    def _tensor_q(self, Rq: np.ndarray) -> np.ndarray:
        if self._cache is None:
            return self.table.D_star(Rq)
        ed = fem.element_data(self.mesh)
        bary = ed.qpoints.mean(axis=1)
        Del = self._cache(bary, Rq.mean(axis=1))
        return np.broadcast_to(Del[:, None], Rq.shape + (2, 2))

    def pde_step(self, state: MacroState, R_new: np.ndarray, rate: np.ndarray, dt: float):
        """Concentration update; returns the new field and the drift-cancellation measure."""
        mesh, tab = self.mesh, self.table
        R_old_q = fem.p1_values(mesh, state.R)
        R_new_q = fem.p1_values(mesh, R_new)
        J_old = tab.Jbar_at(R_old_q)
        J_new = tab.Jbar_at(R_new_q)
        t_new = state.t + dt
        K = fem.assemble_stiffness(mesh, self._tensor_q(R_new_q))
        M_old = fem.assemble_mass(mesh, J_old / dt)
        rate_q = fem.p1_values(mesh, rate)
        Mq = fem.assemble_mass(mesh, tab.q_at(R_new_q, rate_q))
        MdJ = fem.assemble_mass(mesh, (J_new - J_old) / dt)
        if self.explicit_q:
            A = fem.assemble_mass(mesh, J_new / dt) - Mq + K
        else:
            A = M_old + K
        b = M_old @ state.u
        ed = fem.element_data(mesh)
        if not self.data.is_zero_source():
            b = b + fem.assemble_load(mesh, J_new * self.data.f_at(t_new, ed.qpoints))
        if np.any(rate):
            u_q = fem.p1_values(mesh, state.u)
            react = tab.gamma_at(R_new_q) * rate_q * (u_q - self.data.rho)
            b = b - fem.assemble_load(mesh, react)
        u = fem.solve_spd(A, b, tol=self.tol, x0=state.u) if not self.explicit_q else \
            fem.solve_general(A, b, tol=self.tol, x0=state.u)
        nu = np.linalg.norm(u)
        q_cancel = float(np.linalg.norm((Mq - MdJ) @ u) / nu) if nu > 0 else 0.0
        return u, q_cancel

    def step(self, state: MacroState, dt: float):
        R_new, rate = self.radius_step(state, dt)
        u, q_cancel = self.pde_step(state, R_new, rate, dt)
        new = MacroState(state.t + dt, u, R_new, state.step + 1)
        Jq = self.table.Jbar_at(fem.p1_values(self.mesh, R_new))
        row = {
            "t": new.t,
            "l2_u": float(np.sqrt(u @ (self.M0 @ u))),
            "mass_Jbar_u": float(np.sum(fem.assemble_mass(self.mesh, Jq) @ u)),
            "R_min": float(R_new.min()),
            "R_max": float(R_new.max()),
            "q_cancel": q_cancel,
        }
        return new, row

    def mass(self, state: MacroState) -> float:
        Jq = self.table.Jbar_at(fem.p1_values(self.mesh, state.R))
        return float(np.sum(fem.assemble_mass(self.mesh, Jq) @ state.u))

    def run(self, T: float, dt: float, state: MacroState | None = None, keep: int = 0) -> MacroRun:
        n = check_step(T, dt)
        state = self.initial_state() if state is None else state
        states, rows = [state], []
        for _ in range(n):
            state, row = self.step(state, dt)
            rows.append(row)
            if keep and state.step % keep == 0:
                states.append(state)
        if states[-1] is not state:
            states.append(state)
        log.info("macro run T=%g dt=%g steps=%d", T, dt, n)
        return MacroRun(states, rows)


def homogeneous_rhs(table: EffectiveTable, data: ProblemData, f0: float = 0.0):
    """Right-hand side of the reduced pair ``(u, R)`` for spatially constant data."""
    kin = data.kinetics

    def rhs(t, y):
        u, R = y
        R = min(max(R, table.radii[0]), table.radii[-1])
        g = float(kin.g(u, R))
        J = float(table.Jbar_at(R))
        du = (J * f0 - float(table.gamma_at(R)) * g * (u - data.rho)) / J
        return [du, g]

    return rhs
