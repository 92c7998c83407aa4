"""Precipitation/dissolution rate and the data of the coupled problem."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonSPDCoefficient
from .geometry import DEFAULT_GEOMETRY, CellGeometry

_P = np.polynomial.Polynomial((0.0, 0.0, 0.0, 10.0, -15.0, 6.0))
_DP = _P.deriv()
_DP_MAX = 15.0 / 8.0  # sup of the smoothstep derivative on [0, 1]


def smooth_pos(x, eta: float):
    """C1 positive part: 0 below 0, quadratic on (0, eta), ``x - eta/2`` beyond."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.0, 0.0, np.where(x < eta, x * x / (2.0 * eta), x - 0.5 * eta))


def smooth_pos_deriv(x, eta: float):
    x = np.asarray(x, dtype=float)
    return np.clip(x / eta, 0.0, 1.0)


def _ramp(s):
    """Smoothstep value and derivative with ``s`` clipped to [0, 1]."""
    inside = (s > 0.0) & (s < 1.0)
    sc = np.clip(s, 0.0, 1.0)
    return _P(sc), np.where(inside, _DP(sc), 0.0)


@dataclass(frozen=True)
class Kinetics:
    """Bounded, sign-windowed rate ``g(u, r)`` in 1/time.

    ``g = s(g_raw) phi_up(r) - s(-g_raw) phi_down(r)`` where ``s`` is a smoothed
    positive part and ``g_raw = cap tanh(k (u - u_eq) / cap)``.  ``phi_up`` cuts
    growth off within ``window/2`` of ``r_hi``; ``phi_down`` cuts dissolution
    off within ``window/2`` of ``r_lo``.
    """

    u_eq: float = 1.0
    k_rate: float = 1.0
    cap: float = 2.0
    eta: float = 1e-3
    window: float = 0.05
    geometry: CellGeometry = field(default_factory=lambda: DEFAULT_GEOMETRY)
    windowed: bool = True

    def __post_init__(self):
        if self.cap <= 0.0 or self.eta <= 0.0 or self.k_rate < 0.0:
            raise ValueError("need cap > 0, eta > 0 and k_rate >= 0")
        if not 0.0 < self.window < 0.5 * (self.geometry.r_hi - self.geometry.r_lo):
            raise ValueError("rate window must be positive and below half the radius range")

    def g_raw(self, u):
        u = np.asarray(u, dtype=float)
        if self.k_rate == 0.0:
            return np.zeros_like(u)
        return self.cap * np.tanh(self.k_rate * (u - self.u_eq) / self.cap)

    def _windows(self, r):
        w = self.window
        up, dup = _ramp((r - (self.geometry.r_hi - w)) / (0.5 * w))
        down, ddown = _ramp(((self.geometry.r_lo + w) - r) / (0.5 * w))
        return 1.0 - up, -dup / (0.5 * w), 1.0 - down, ddown / (0.5 * w)

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        # the unwindowed variant is a negative control and may be probed outside the bounds
        if self.windowed:
            self.geometry.bounds.check(r)
        return r

    def g(self, u, r):
        """Rate at concentration ``u`` and dimensionless radius ``r``."""
        r = self._check(r)
        gr = self.g_raw(u)
        pos, neg = smooth_pos(gr, self.eta), smooth_pos(-gr, self.eta)
        if not self.windowed:
            return pos - neg
        phi_up, _, phi_down, _ = self._windows(r)
        return pos * phi_up - neg * phi_down

    def dg(self, u, r):
        """Partial derivatives ``(dg/du, dg/dr)``."""
        r = self._check(r)
        u = np.asarray(u, dtype=float)
        gr = self.g_raw(u)
        if self.k_rate == 0.0:
            dgr = np.zeros_like(gr)
        else:
            dgr = self.k_rate / np.cosh(self.k_rate * (u - self.u_eq) / self.cap) ** 2
        pos, neg = smooth_pos(gr, self.eta), smooth_pos(-gr, self.eta)
        dpos, dneg = smooth_pos_deriv(gr, self.eta), smooth_pos_deriv(-gr, self.eta)
        if not self.windowed:
            return (dpos + dneg) * dgr, np.zeros(np.broadcast(u, r).shape)
        phi_up, dphi_up, phi_down, dphi_down = self._windows(r)
        du = dpos * dgr * phi_up + dneg * dgr * phi_down
        dr = pos * dphi_up - neg * dphi_down
        return du, dr

    @property
    def sup_abs(self) -> float:
        """Upper bound of ``|g|``; zero when the rate vanishes identically."""
        return 0.0 if self.k_rate == 0.0 else self.cap

    def lipschitz(self) -> float:
        """``max(sup|dg/du|, sup|dg/dr|)`` from the closed-form factors."""
        if self.k_rate == 0.0:
            return 0.0
        dr = self.cap * _DP_MAX / (0.5 * self.window) if self.windowed else 0.0
        return max(self.k_rate, dr)

    def max_radius_step(self) -> float:
        """Largest dt for which an explicit radius step cannot jump across a sign window."""
        s = self.sup_abs
        return np.inf if s == 0.0 else 0.5 * self.window / s


def _as_tensor_field(D):
    if callable(D):
        return D
    A = np.asarray(D, dtype=float)
    if A.shape != (2, 2):
        raise ValueError("diffusion tensor must be 2x2 or a callable")
    return A


@dataclass
class ProblemData:
    """Coefficients and initial data of the coupled problem.

    ``D`` is a 2x2 array or a callable of points ``(..., 2)``; ``f`` is a float
    or a callable ``f(t, x)``; ``u_init`` and ``R_init`` are callables of points
    (``R_init`` returns dimensionless radii, micro cells use their centre value).
    """

    kinetics: Kinetics = field(default_factory=Kinetics)
    D: object = field(default_factory=lambda: np.eye(2))
    f: object = 0.0
    rho: float = 2.0
    u_init: Callable = field(default=lambda x: 1.0 + 0.3 * np.cos(np.pi * np.asarray(x)[..., 0]))
    R_init: Callable = field(default=lambda x: 0.25 + 0.02 * np.cos(np.pi * np.asarray(x)[..., 1]))

    def __post_init__(self):
        self.D = _as_tensor_field(self.D)
        if self.rho <= 0.0:
            raise ValueError("density rho must be positive")
        if not callable(self.D):
            ev = np.linalg.eigvalsh(0.5 * (self.D + self.D.T))
            if ev[0] <= 0.0 or not np.allclose(self.D, self.D.T):
                raise NonSPDCoefficient("diffusion tensor must be symmetric positive definite")

    @property
    def geometry(self) -> CellGeometry:
        return self.kinetics.geometry

    @property
    def x_constant_D(self) -> bool:
        return not callable(self.D)

    def D_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if callable(self.D):
            return np.asarray(self.D(x), dtype=float)
        return np.broadcast_to(self.D, x.shape[:-1] + (2, 2))

    def f_at(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if callable(self.f):
            return np.asarray(self.f(t, x), dtype=float) * np.ones(x.shape[:-1])
        return np.full(x.shape[:-1], float(self.f))

    def is_zero_source(self) -> bool:
        return not callable(self.f) and float(self.f) == 0.0
