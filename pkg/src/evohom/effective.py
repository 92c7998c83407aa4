"""Cell problems on the deformed reference cell and the tabulated effective coefficients."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import fem
from .errors import NonSPDCoefficient
from .geometry import (CENTER, DEFAULT_GEOMETRY, CellGeometry, CutoffProfile, RadiusBounds,
                       hanzawa_det, hanzawa_det_dR, hanzawa_grad, hanzawa_inverse, hanzawa_velocity)
from .mesh import GAMMA, Mesh, build_box_mesh, build_collar_mesh
from .micro import inv2x2
from .validation import check_radii, check_tensor

DEFAULT_H = 0.025
COLUMNS = ("D11", "D12", "D22", "Jbar", "dJbar_dR", "gamma")


def transformed_tensor(y, R, D=np.eye(2), geom: CellGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """``J F^{-1} D F^{-T}`` at reference points ``y``."""
    F = hanzawa_grad(y, R, geom)
    J = hanzawa_det(y, R, geom)
    Finv, _ = inv2x2(F)
    return J[..., None, None] * np.einsum("...ij,jk,...lk->...il", Finv, np.asarray(D, float), Finv)


@dataclass
class CellSolution:
    R: float
    w: np.ndarray                 # (2, N) correctors
    D_star: np.ndarray
    residuals: np.ndarray
    mesh: Mesh
    zero_corrector: np.ndarray = field(default=None)  # int D0 over the cell


def _periodic_cell_solve(mesh: Mesh, Dq, rhs_dir, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Correctors for ``-div(Dq (grad w + e_i)) = 0`` with ``e_i`` replaced by ``rhs_dir[i]``."""
    K = fem.assemble_stiffness(mesh, Dq)
    P = fem.periodic_map(mesh.n_vertices, mesh.periodic_pairs)
    Kr = (P.T @ K @ P).tocsr()
    mass = np.asarray(fem.assemble_mass(mesh).sum(axis=1)).ravel()
    ws, res = [], []
    for d in rhs_dir:
        full = fem.assemble_stiffness_rhs(mesh, Dq, d)
        b = P.T @ full
        # compatibility: the reduced operator annihilates constants
        b -= b.mean()
        nb = np.linalg.norm(b)
        if nb <= 1e-13 * np.linalg.norm(full):
            x, nb = np.zeros(Kr.shape[0]), 0.0
        else:
            x = fem.solve_spd(Kr, b, tol=tol)
        res.append(float(np.linalg.norm(Kr @ x - b) / nb) if nb > 0 else 0.0)
        w = P @ x
        w -= (mass @ w) / mass.sum()
        ws.append(w)
    return np.array(ws), np.array(res)


def _energy_tensor(mesh: Mesh, Dq, w, dirs) -> np.ndarray:
    """``int Dq (grad w_i + d_i) . (grad w_j + d_j)``."""
    ed = fem.element_data(mesh)
    vecs = []
    for wi, d in zip(w, dirs):
        g = np.einsum("ma,mad->md", wi[mesh.triangles], ed.grads)[:, None, :]
        vecs.append(g + np.broadcast_to(d, ed.qpoints.shape))
    D = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            val = np.einsum("mqab,mqb,mqa->mq", Dq, vecs[j], vecs[i])
            D[i, j] = np.sum(ed.area * (val @ ed.weights))
    return D


def _volume_integral(mesh: Mesh, vals) -> np.ndarray:
    ed = fem.element_data(mesh)
    return np.einsum("m,q,mq...->...", ed.area, ed.weights, vals)


def solve_cell_problems(R: float, mesh: Mesh, D=np.eye(2), geom: CellGeometry = DEFAULT_GEOMETRY,
                        tol: float = 1e-12) -> CellSolution:
    """Periodic correctors and effective tensor on the reference mesh at radius ``R``.

    With ``mesh.hole_radius`` equal to ``geom.r_hi`` the deformation is applied; a
    mesh without a hole (or with ``R == r_hi``) gives the untransformed problem.
    """
    D = check_tensor(D)
    ed = fem.element_data(mesh)
    if mesh.hole_radius is None:
        D0 = np.broadcast_to(D, ed.qpoints.shape[:2] + (2, 2))
    else:
        D0 = transformed_tensor(ed.qpoints, R, D, geom)
    dirs = np.eye(2)
    w, res = _periodic_cell_solve(mesh, D0, dirs, tol)
    Ds = _energy_tensor(mesh, D0, w, dirs)
    return CellSolution(float(R), w, Ds, res, mesh, _volume_integral(mesh, D0))


def effective_tensor(sol: CellSolution) -> np.ndarray:
    return sol.D_star


def moving_cell_crosscheck(R: float, mesh_moving: Mesh, D=np.eye(2),
                           geom: CellGeometry = DEFAULT_GEOMETRY, tol: float = 1e-12) -> np.ndarray:
    """Effective tensor from the untransformed problem on a mesh whose hole has radius ``R``.

    The corrector drive is ``F^{-T}(S^{-1}(z)) e_i``; the tensor is the energy
    ``int D (grad w_i + F^{-T} e_i) . (grad w_j + F^{-T} e_j)`` over the moving cell.
    """
    if mesh_moving.hole_radius is None or abs(mesh_moving.hole_radius - R) > 1e-14:
        raise ValueError("the moving-cell mesh must have hole radius R")
    D = check_tensor(D)
    ed = fem.element_data(mesh_moving)
    yq = hanzawa_inverse(ed.qpoints, R, geom)
    Finv, _ = inv2x2(hanzawa_grad(yq, R, geom))
    dirs = [np.swapaxes(Finv, -1, -2)[..., :, i] for i in range(2)]
    Dq = np.broadcast_to(D, ed.qpoints.shape[:2] + (2, 2))
    w, _ = _periodic_cell_solve(mesh_moving, Dq, dirs, tol)
    return _energy_tensor(mesh_moving, Dq, w, dirs)


def moving_cell_mesh(R: float, h: float = DEFAULT_H, geom: CellGeometry = DEFAULT_GEOMETRY) -> Mesh:
    """Mesh of the physically deformed cell with the same layer layout as the reference mesh."""
    return build_collar_mesh(R, min(h, R / 4.0), geom.profile.delta0)


def standard_moving_cell_tensor(R: float, mesh_moving: Mesh, D=np.eye(2), tol: float = 1e-12) -> np.ndarray:
    """Classical cell problem with constant drive ``e_i`` on the cell with hole radius ``R``."""
    D = check_tensor(D)
    ed = fem.element_data(mesh_moving)
    Dq = np.broadcast_to(D, ed.qpoints.shape[:2] + (2, 2))
    dirs = np.eye(2)
    w, _ = _periodic_cell_solve(mesh_moving, Dq, dirs, tol)
    return _energy_tensor(mesh_moving, Dq, w, dirs)


@dataclass(frozen=True)
class AveragedQuantities:
    Jbar: float
    dJbar_dR: float
    q: float
    gamma: float
    gamma_quadrature: float


def averaged_quantities(R: float, dR_dt: float, mesh: Mesh,
                        geom: CellGeometry = DEFAULT_GEOMETRY) -> AveragedQuantities:
    """Cell volume, its radius derivative, drift ``q`` and hole perimeter at radius ``R``."""
    geom.bounds.check(R)
    ed = fem.element_data(mesh)
    Jbar = _volume_integral(mesh, hanzawa_det(ed.qpoints, R, geom))
    dJ = _volume_integral(mesh, hanzawa_det_dR(ed.qpoints, R, geom))
    edges = mesh.edges(GAMMA)
    pts, length, _, w = fem.edge_quadrature(mesh, edges)
    n_out = -(pts - CENTER) / np.linalg.norm(pts - CENTER, axis=-1)[..., None]
    V = hanzawa_velocity(pts, R, dR_dt, geom)
    q = float(np.sum(length * (np.einsum("eqd,eqd->eq", V, n_out) @ w)))
    gq = float(np.sum(length * (hanzawa_det(pts, R, geom) @ w)))
    return AveragedQuantities(float(Jbar), float(dJ), q, 2.0 * math.pi * R, gq)


@dataclass
class EffectiveTable:
    """Tabulated effective quantities on a uniform radius grid with monotone cubic interpolation."""

    radii: np.ndarray
    D: np.ndarray          # (n, 2, 2)
    Jbar: np.ndarray
    dJbar_dR: np.ndarray
    gamma: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, float)
        self.D = np.asarray(self.D, float).reshape(-1, 2, 2)
        self.Jbar = np.asarray(self.Jbar, float)
        self.dJbar_dR = np.asarray(self.dJbar_dR, float)
        self.gamma = np.asarray(self.gamma, float)
        r = self.radii
        self._interp = {
            "D11": PchipInterpolator(r, self.D[:, 0, 0]),
            "D12": PchipInterpolator(r, self.D[:, 0, 1]),
            "D22": PchipInterpolator(r, self.D[:, 1, 1]),
            "Jbar": PchipInterpolator(r, self.Jbar),
            "dJbar_dR": PchipInterpolator(r, self.dJbar_dR),
        }
        self.bounds = RadiusBounds(float(r[0]), float(r[-1]))

    def _r(self, R):
        R = np.asarray(R, dtype=float)
        return check_radii(R, self.bounds).reshape(R.shape)

    def D_star(self, R) -> np.ndarray:
        r = self._r(R)
        d11, d12, d22 = (self._interp[k](r) for k in ("D11", "D12", "D22"))
        return np.stack([np.stack([d11, d12], -1), np.stack([d12, d22], -1)], -2)

    def Jbar_at(self, R):
        return self._interp["Jbar"](self._r(R))

    def dJbar_at(self, R):
        return self._interp["dJbar_dR"](self._r(R))

    def gamma_at(self, R):
        return 2.0 * math.pi * self._r(R)

    def q_at(self, R, dR_dt):
        return self.dJbar_at(R) * np.asarray(dR_dt, dtype=float)

    def to_json(self) -> dict:
        return {
            "radii": self.radii.tolist(),
            "D": self.D.reshape(-1, 4).tolist(),
            "Jbar": self.Jbar.tolist(),
            "dJbar_dR": self.dJbar_dR.tolist(),
            "gamma": self.gamma.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EffectiveTable":
        return cls(obj["radii"], obj["D"], obj["Jbar"], obj["dJbar_dR"], obj["gamma"], obj.get("meta", {}))

    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EffectiveTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_effective_table(mesh: Mesh | None = None, D=np.eye(2), grid_size: int = 64,
                          geom: CellGeometry = DEFAULT_GEOMETRY, h: float = DEFAULT_H,
                          tol: float = 1e-12, radii=None, n_probe: int = 5,
                          n_spd_probe: int = 1024) -> EffectiveTable:
    """Solve the cell problems on a uniform radius grid and check the interpolant."""
    if radii is None:
        if grid_size < 8:
            raise ValueError("grid_size must be at least 8")
        radii = np.linspace(geom.r_lo, geom.r_hi, grid_size)
    radii = np.asarray(radii, dtype=float)
    mesh = build_collar_mesh(geom.r_hi, h, geom.profile.delta0) if mesh is None else mesh
    D = check_tensor(D)
    Ds, Jb, dJ, gam = [], [], [], []
    for R in radii:
        sol = solve_cell_problems(R, mesh, D, geom, tol)
        aq = averaged_quantities(R, 0.0, mesh, geom)
        Ds.append(sol.D_star)
        Jb.append(aq.Jbar)
        dJ.append(aq.dJbar_dR)
        gam.append(aq.gamma)
    meta = {"h": mesh.h, "tol": tol, "mesh_hash": mesh.digest(), "n_vertices": mesh.n_vertices,
            "r_lo": geom.r_lo, "r_hi": geom.r_hi, "delta0": geom.profile.delta0,
            "D": D.tolist()}
    table = EffectiveTable(radii, np.array(Ds), Jb, dJ, gam, meta)
    probe = np.linspace(radii[0], radii[-1], n_spd_probe)
    ev = np.linalg.eigvalsh(table.D_star(probe))
    if np.any(ev[:, 0] <= 0.0):
        raise NonSPDCoefficient("interpolated effective tensor lost positive definiteness")
    if n_probe:
        mids = 0.5 * (radii[:-1] + radii[1:])
        pick = mids[np.linspace(0, len(mids) - 1, n_probe).round().astype(int)]
        errs = []
        for R in pick:
            direct = solve_cell_problems(R, mesh, D, geom, tol).D_star[0, 0]
            errs.append(abs(table.D_star(R)[0, 0] - direct) / abs(direct))
        meta["probe_radii"] = pick.tolist()
        meta["probe_rel_err_D11"] = [float(e) for e in errs]
    return table


class HomogenizedCoefficients(BaseEstimator):
    """Estimator front-end for the radius-dependent effective coefficients.

    ``fit`` solves the cell problems on a radius grid (``X`` may supply the grid),
    ``predict`` returns the interpolated tensor ``D*(R)`` and ``transform`` the
    columns ``D11, D12, D22, Jbar, dJbar_dR, gamma``.
    """

    def __init__(self, h=DEFAULT_H, grid_size=64, r_lo=0.15, r_hi=0.35, delta0=0.1,
                 D=((1.0, 0.0), (0.0, 1.0)), tol=1e-12, n_probe=5):
        self.h = h
        self.grid_size = grid_size
        self.r_lo = r_lo
        self.r_hi = r_hi
        self.delta0 = delta0
        self.D = D
        self.tol = tol
        self.n_probe = n_probe

    def _geometry(self) -> CellGeometry:
        return CellGeometry(RadiusBounds(self.r_lo, self.r_hi), CutoffProfile(self.delta0))

    def fit(self, X=None, y=None):
        geom = self._geometry()
        radii = None if X is None else np.sort(check_radii(X, geom.bounds))
        self.table_ = build_effective_table(None, np.asarray(self.D, float), self.grid_size, geom,
                                            self.h, self.tol, radii, self.n_probe)
        self.radii_ = self.table_.radii
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "table_")
        return self.table_.D_star(check_radii(X, self.table_.bounds))

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "table_")
        r = check_radii(X, self.table_.bounds)
        D = self.table_.D_star(r)
        return np.column_stack([D[:, 0, 0], D[:, 0, 1], D[:, 1, 1], self.table_.Jbar_at(r),
                                self.table_.dJbar_at(r), self.table_.gamma_at(r)])

    @classmethod
    def from_table(cls, table: EffectiveTable) -> "HomogenizedCoefficients":
        m = table.meta
        est = cls(h=m.get("h", DEFAULT_H), grid_size=len(table.radii), r_lo=float(table.radii[0]),
                  r_hi=float(table.radii[-1]), delta0=m.get("delta0", 0.1),
                  D=tuple(map(tuple, m.get("D", np.eye(2).tolist()))), tol=m.get("tol", 1e-12))
        est.table_ = table
        est.radii_ = table.radii
        return est


def full_cell_tensor(D=np.eye(2), n: int = 8) -> np.ndarray:
    """Effective tensor of the unperforated cell; equals ``D`` for constant ``D``."""
    mesh = build_box_mesh((1.0, 1.0), (n, n))
    return solve_cell_problems(0.0, mesh, D).D_star


class XDependentCellCache:
    """Per-point cell solves for x-dependent ``D``, keyed by macro tile and nearest grid radius."""

    def __init__(self, D_field, radii, mesh: Mesh | None = None, geom: CellGeometry = DEFAULT_GEOMETRY,
                 tile: float = 1.0 / 8.0, h: float = DEFAULT_H):
        self.D_field = D_field
        self.radii = np.asarray(radii, float)
        self.mesh = build_collar_mesh(geom.r_hi, h, geom.profile.delta0) if mesh is None else mesh
        self.geom = geom
        self.tile = tile
        self._cache: dict = {}

    def __call__(self, x, R) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        R = np.atleast_1d(np.asarray(R, float))
        out = np.empty((len(x), 2, 2))
        for i, (xi, Ri) in enumerate(zip(x, R)):
            kt = tuple(np.floor(xi / self.tile).astype(int))
            kr = int(np.argmin(np.abs(self.radii - Ri)))
            key = kt + (kr,)
            if key not in self._cache:
                xc = (np.asarray(kt) + 0.5) * self.tile
                Dx = check_tensor(self.D_field(xc))
                self._cache[key] = solve_cell_problems(self.radii[kr], self.mesh, Dx, self.geom).D_star
            out[i] = self._cache[key]
        return out
