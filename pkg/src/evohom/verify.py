"""Self-checks driven by the ``verify`` and ``mms`` commands; each returns a JSON-ready report."""
from __future__ import annotations

import math
import time

import numpy as np

from . import fem
from .effective import (DEFAULT_H, averaged_quantities, moving_cell_crosscheck, moving_cell_mesh,
                        solve_cell_problems)
from .geometry import (CENTER, DEFAULT_GEOMETRY, CellGeometry, CutoffProfile, RadiusBounds, hanzawa_det,
                       hanzawa_grad, hanzawa_map)
from .kinetics import Kinetics, ProblemData
from .macro import MacroSolver
from .mesh import (CellIndexer, build_box_mesh, build_collar_mesh, build_micro_mesh,
                   build_reference_cell_mesh, check_mesh)


def _check(name, passed, measured, tolerance, **extra):
    return {"name": name, "passed": bool(passed), "measured": measured, "tolerance": tolerance, **extra}


def _summary(checks, t0):
    return {"passed": all(c["passed"] for c in checks), "checks": checks,
            "seconds": time.perf_counter() - t0}


def random_cell_points(n: int, rng, geom: CellGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """Uniform points of the unit cell outside the reference hole."""
    out = np.empty((0, 2))
    while len(out) < n:
        y = rng.random((2 * n, 2))
        out = np.concatenate([out, y[np.linalg.norm(y - CENTER, axis=1) >= geom.r_hi]])
    return out[:n]


def sample_grid(geom: CellGeometry = DEFAULT_GEOMETRY, n: int = 100, n_r: int = 50):
    """``n x n`` cell grid (hole removed) times ``n_r`` radii."""
    s = (np.arange(n) + 0.5) / n
    Y = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    Y = Y[np.linalg.norm(Y - CENTER, axis=1) >= geom.r_hi]
    R = np.linspace(geom.r_lo, geom.r_hi, n_r)
    return Y, R


def verify_geometry(geom: CellGeometry = DEFAULT_GEOMETRY, seed: int = 0) -> dict:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = []
    y = random_cell_points(10_000, rng, geom)
    R = rng.uniform(geom.r_lo, geom.r_hi, len(y))
    F = hanzawa_grad(y, R, geom)
    err = float(np.max(np.abs(hanzawa_det(y, R, geom) - np.linalg.det(F))))
    checks.append(_check("determinant_closed_form", err <= 1e-12, err, 1e-12))
    sym = float(np.max(np.abs(F - np.swapaxes(F, -1, -2))))
    checks.append(_check("gradient_symmetric", sym <= 1e-14, sym, 1e-14))

    Y, Rg = sample_grid(geom)
    lo, hi = geom.jacobian_bounds()
    J = hanzawa_det(Y[None], Rg[:, None], geom)
    viol = int(np.sum((J < lo - 1e-12) | (J > hi + 1e-12)))
    checks.append(_check("jacobian_bounds", viol == 0, viol, 0, range=[float(J.min()), float(J.max())],
                         bounds=[lo, hi]))

    yp = random_cell_points(1000, rng, geom)
    Rp = rng.uniform(geom.r_lo, geom.r_hi, len(yp))
    step = 1e-5
    fd = np.empty((len(yp), 2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        fd[:, :, j] = (hanzawa_map(yp + e, Rp, geom) - hanzawa_map(yp - e, Rp, geom)) / (2 * step)
    G = hanzawa_grad(yp, Rp, geom)
    rel = float(np.max(np.linalg.norm(fd - G, axis=(1, 2)) / np.linalg.norm(G, axis=(1, 2))))
    checks.append(_check("gradient_vs_finite_differences", rel <= 1e-6, rel, 1e-6))

    far = random_cell_points(2000, rng, geom)
    far = far[geom.signed_distance(far) >= geom.profile.delta0]
    moved = float(np.max(np.abs(hanzawa_map(far, geom.r_lo, geom) - far))) if len(far) else 0.0
    checks.append(_check("identity_outside_collar", moved == 0.0, moved, 0.0))

    th = 2 * np.pi * np.arange(64) / 64
    e = np.stack([np.cos(th), np.sin(th)], 1)
    r = np.linspace(geom.r_hi, geom.r_hi + geom.profile.delta0, 400)
    pts = CENTER + r[None, :, None] * e[:, None, :]
    mono = True
    for Rv in (geom.r_lo, 0.5 * (geom.r_lo + geom.r_hi)):
        rad = np.linalg.norm(hanzawa_map(pts, Rv, geom) - CENTER, axis=-1)
        mono &= bool(np.all(np.diff(rad, axis=1) > 0))
    checks.append(_check("radial_monotonicity", mono, mono, True))
    return _summary(checks, t0)


def verify_mesh(h: float = 0.05, geom: CellGeometry = DEFAULT_GEOMETRY) -> dict:
    t0 = time.perf_counter()
    checks = []
    errs = []
    for hh in (h, h / 2, h / 4):
        m = build_reference_cell_mesh(geom.r_hi, hh)
        inv = check_mesh(m)
        checks.append(_check(f"reference_invariants_h{hh:g}", all(v[0] for v in inv.values()),
                             {k: v[1] for k, v in inv.items()}, "all hold"))
        errs.append(abs(m.area() - (1 - math.pi * geom.r_hi**2)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    checks.append(_check("area_error_ratio", all(3.5 <= r <= 4.5 for r in ratios), ratios, [3.5, 4.5]))
    mm = build_micro_mesh(CellIndexer(0.25), h, geom.r_hi, delta0=geom.profile.delta0)
    inv = check_mesh(mm)
    checks.append(_check("micro_invariants", all(v[0] for v in inv.values()),
                         {k: v[1] for k, v in inv.items()}, "all hold"))
    return _summary(checks, t0)


def verify_kinetics(kin: Kinetics | None = None, n: int = 1_000_000, seed: int = 0) -> dict:
    t0 = time.perf_counter()
    kin = Kinetics() if kin is None else kin
    geom = kin.geometry
    rng = np.random.default_rng(seed)
    u = rng.uniform(-20.0, 20.0, n)
    half = 0.5 * kin.window
    r_up = rng.uniform(geom.r_hi - half, geom.r_hi, n)
    r_dn = rng.uniform(geom.r_lo, geom.r_lo + half, n)
    v_up = int(np.sum(kin.g(u, r_up) > 0.0))
    v_dn = int(np.sum(kin.g(u, r_dn) < 0.0))
    r_all = rng.uniform(geom.r_lo, geom.r_hi, n)
    gmax = float(np.max(np.abs(kin.g(u, r_all))))
    return _summary([
        _check("upper_window_nonpositive", v_up == 0, v_up, 0, window=[geom.r_hi - half, geom.r_hi]),
        _check("lower_window_nonnegative", v_dn == 0, v_dn, 0, window=[geom.r_lo, geom.r_lo + half]),
        _check("rate_bounded_by_cap", gmax <= kin.cap, gmax, kin.cap),
    ], t0)


def periodic_cell_mms(ns=(16, 32, 64, 128)) -> dict:
    """Periodic Poisson on the full unit cell with ``u = sin(2 pi x) cos(2 pi y)``."""
    t0 = time.perf_counter()
    k = 2.0 * np.pi

    def exact(X):
        return np.sin(k * X[..., 0]) * np.cos(k * X[..., 1])

    def grad(X):
        return np.stack([k * np.cos(k * X[..., 0]) * np.cos(k * X[..., 1]),
                         -k * np.sin(k * X[..., 0]) * np.sin(k * X[..., 1])], -1)

    l2, h1, hs = [], [], []
    for n in ns:
        m = build_box_mesh((1.0, 1.0), (n, n))
        K = fem.assemble_stiffness(m)
        b = fem.assemble_load(m, lambda X: 2.0 * k * k * exact(X))
        mass = np.asarray(fem.assemble_mass(m).sum(axis=1)).ravel()
        sysr = fem.constrain_periodic_and_mean(K, b, m.periodic_pairs, True, mass)
        u = sysr.solve()
        l2.append(fem.l2_error(m, u, exact))
        h1.append(fem.h1_semi_error(m, u, grad))
        hs.append(1.0 / n)
    rl2 = [math.log2(l2[i] / l2[i + 1]) for i in range(len(ns) - 1)]
    rh1 = [math.log2(h1[i] / h1[i + 1]) for i in range(len(ns) - 1)]
    return {"h": hs, "l2": l2, "h1": h1, "rate_l2": rl2, "rate_h1": rh1,
            "passed": min(rl2) >= 1.9 and min(rh1) >= 0.9, "seconds": time.perf_counter() - t0}


def macro_mms(table, ns=(8, 16, 32), dt: float = 0.05, T: float = 0.2) -> dict:
    """Frozen radius ``r_hi``: heat equation with ``u = (1 + t) cos(pi x) cos(pi y)``."""
    t0 = time.perf_counter()
    r = float(table.radii[-1])
    d = float(table.D_star(r)[0, 0])
    Jb = float(table.Jbar_at(r))

    def exact(t, X):
        return (1.0 + t) * np.cos(np.pi * X[..., 0]) * np.cos(np.pi * X[..., 1])

    def f(t, X):
        c = np.cos(np.pi * X[..., 0]) * np.cos(np.pi * X[..., 1])
        return c + 2.0 * np.pi**2 * d * (1.0 + t) * c / Jb

    kin = Kinetics(k_rate=0.0, geometry=table_geometry(table))
    data = ProblemData(kinetics=kin, D=np.eye(2), f=f, u_init=lambda X: exact(0.0, X),
                       R_init=lambda X: np.full(np.asarray(X).shape[:-1], r))
    errs = []
    for n in ns:
        s = MacroSolver(data, table, n=n)
        fin = s.run(T, dt).final
        errs.append(fem.l2_error(s.mesh, fin.u, lambda X: exact(T, X)))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(len(ns) - 1)]
    return {"n": list(ns), "l2": errs, "rate_l2": rates, "passed": min(rates) >= 1.9,
            "seconds": time.perf_counter() - t0}


def table_geometry(table) -> CellGeometry:
    m = table.meta
    return CellGeometry(RadiusBounds(float(table.radii[0]), float(table.radii[-1])),
                        CutoffProfile(m.get("delta0", 0.1)))


def verify_cells(h: float = DEFAULT_H, geom: CellGeometry = DEFAULT_GEOMETRY) -> dict:
    t0 = time.perf_counter()
    checks = []
    mesh = build_collar_mesh(geom.r_hi, h, geom.profile.delta0)
    for R in (geom.r_lo, 0.5 * (geom.r_lo + geom.r_hi), geom.r_hi):
        sol = solve_cell_problems(R, mesh, geom=geom)
        D = sol.D_star
        mc = moving_cell_crosscheck(R, moving_cell_mesh(R, h, geom), geom=geom)
        gap = float(np.max(np.abs(D - mc)) / np.max(np.abs(mc)))
        checks.append(_check(f"moving_cell_gap_R{R:g}", gap <= 0.02, gap, 0.02))
        iso = float((abs(D[0, 1]) + abs(D[0, 0] - D[1, 1])) / D[0, 0])
        checks.append(_check(f"isotropy_R{R:g}", iso <= 1e-4, iso, 1e-4))
        aq = averaged_quantities(R, 1.0, mesh, geom)
        checks.append(_check(f"volume_R{R:g}", abs(aq.Jbar - (1 - math.pi * R * R)) <= 10 * h * h,
                             aq.Jbar - (1 - math.pi * R * R), 10 * h * h))
        checks.append(_check(f"surface_R{R:g}", abs(aq.gamma_quadrature - aq.gamma) <= 10 * h * h,
                             aq.gamma_quadrature - aq.gamma, 10 * h * h))
    return _summary(checks, t0)


TARGETS = {
    "geometry": verify_geometry,
    "mesh": verify_mesh,
    "kinetics": verify_kinetics,
    "fem": periodic_cell_mms,
    "cells": verify_cells,
}


def verify(target: str = "all") -> dict:
    names = list(TARGETS) if target == "all" else [target]
    reports = {n: TARGETS[n]() for n in names}
    return {"passed": all(r["passed"] for r in reports.values()), "reports": reports}
