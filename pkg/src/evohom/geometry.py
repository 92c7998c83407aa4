"""Closed-form Hanzawa deformation of the perforated unit cell.

The reference cell is ``Y = (0, 1)^2`` with a disc of radius ``r_hi`` removed
around its centre ``m``.  A radius ``R`` in ``[r_lo, r_hi]`` is realised by
pushing points inside a collar of width ``delta0`` along the radial direction::

    S(y; R) = y + (R - r_hi) * chi(|y - m| - r_hi) * (y - m) / |y - m|

Everything here is vectorised over leading axes: points have shape
``(..., 2)`` and radii broadcast against ``points[..., 0]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RadiusOutOfRange

CENTER = np.array([0.5, 0.5])
SMOOTHSTEP = (0.0, 0.0, 0.0, 10.0, -15.0, 6.0)

# relative slack when checking radii that went through a few flops
_RADIUS_SLACK = 1e-12


@dataclass(frozen=True)
class RadiusBounds:
    """Admissible dimensionless radii, ``0 < r_lo < r_hi < 1/2``."""

    r_lo: float = 0.15
    r_hi: float = 0.35

    def __post_init__(self):
        if not 0.0 < self.r_lo < self.r_hi < 0.5:
            raise ValueError(
                f"need 0 < r_lo < r_hi < 1/2, got r_lo={self.r_lo}, r_hi={self.r_hi}"
            )

    def check(self, R, scale: float = 1.0) -> np.ndarray:
        """Return ``R`` as an array, raising if any entry leaves ``scale*[r_lo, r_hi]``."""
        R = np.asarray(R, dtype=float)
        lo = scale * self.r_lo * (1.0 - _RADIUS_SLACK)
        hi = scale * self.r_hi * (1.0 + _RADIUS_SLACK)
        bad = ~((R >= lo) & (R <= hi))
        if np.any(bad):
            worst = R[bad].ravel()[0]
            raise RadiusOutOfRange(
                f"radius {worst!r} outside [{scale * self.r_lo!r}, {scale * self.r_hi!r}]"
            )
        return R


@dataclass(frozen=True)
class CutoffProfile:
    """Even cutoff ``chi`` with plateau ``|z| <= delta0/2`` and support ``|z| < delta0``.

    On the transition band ``chi(z) = 1 - p(s)`` with ``s = (|z| - delta0/2) / (delta0/2)``
    and ``p`` the polynomial with ascending coefficients ``coeffs``.  The default
    is the quintic smoothstep, which makes ``chi`` twice continuously
    differentiable.
    """

    delta0: float = 0.1
    coeffs: tuple = SMOOTHSTEP

    def __post_init__(self):
        if not self.delta0 > 0.0:
            raise ValueError("delta0 must be positive")

    @property
    def half_width(self) -> float:
        return 0.5 * self.delta0

    @property
    def chi_sup_norm_deriv(self) -> float:
        """``sup |chi'|``; closed form ``15 / (4 delta0)`` for the smoothstep."""
        if tuple(self.coeffs) == SMOOTHSTEP:
            return 15.0 / (4.0 * self.delta0)
        dp = np.polynomial.Polynomial(self.coeffs).deriv()
        s = np.linspace(0.0, 1.0, 20001)
        return float(np.max(np.abs(dp(s)))) / self.half_width

    def transition(self, s):
        p = np.polynomial.Polynomial(self.coeffs)
        return p(s), p.deriv()(s)


def cutoff_eval(z, profile: CutoffProfile = CutoffProfile()):
    """Return ``(chi(z), chi'(z))`` for scalar or array ``z``."""
    z = np.asarray(z, dtype=float)
    a = np.abs(z)
    hw = profile.half_width
    s = np.clip((a - hw) / hw, 0.0, 1.0)
    p, dp = profile.transition(s)
    band = (a > hw) & (a < profile.delta0)
    chi = np.where(a <= hw, 1.0, np.where(band, 1.0 - p, 0.0))
    chi_prime = np.where(band, -dp / hw * np.sign(z), 0.0)
    return chi, chi_prime


@dataclass(frozen=True)
class CellGeometry:
    """Radius bounds plus cutoff; validates ``0 < delta0 < min(1/2 - r_hi, r_hi)``."""

    bounds: RadiusBounds = field(default_factory=RadiusBounds)
    profile: CutoffProfile = field(default_factory=CutoffProfile)
    dim: int = 2

    def __post_init__(self):
        d0, rh = self.profile.delta0, self.bounds.r_hi
        if not 0.0 < d0 < min(0.5 - rh, rh):
            raise ValueError(
                f"cutoff window delta0={d0} must lie in (0, min(1/2 - r_hi, r_hi))"
            )

    @property
    def r_lo(self) -> float:
        return self.bounds.r_lo

    @property
    def r_hi(self) -> float:
        return self.bounds.r_hi

    def jacobian_bounds(self) -> tuple[float, float]:
        lo = (self.r_lo / self.r_hi) ** (self.dim - 1)
        hi = 1.0 + self.profile.chi_sup_norm_deriv * (self.r_hi - self.r_lo)
        return lo, hi

    def signed_distance(self, y):
        """``|y - m| - r_hi``: positive in the perforated cell, zero on the hole boundary."""
        return np.linalg.norm(np.asarray(y, dtype=float) - CENTER, axis=-1) - self.r_hi

    def normal(self, y):
        """Outward unit normal ``(y - m)/|y - m|`` of the hole, extended radially (0 at m)."""
        d = np.asarray(y, dtype=float) - CENTER
        rho = np.linalg.norm(d, axis=-1)
        safe = np.where(rho > 0.0, rho, 1.0)
        return np.where((rho > 0.0)[..., None], d / safe[..., None], 0.0)


DEFAULT_GEOMETRY = CellGeometry()


def _frame(y, geom: CellGeometry):
    y = np.asarray(y, dtype=float)
    d = y - CENTER
    rho = np.linalg.norm(d, axis=-1)
    safe = np.where(rho > 0.0, rho, 1.0)
    nu = np.where((rho > 0.0)[..., None], d / safe[..., None], 0.0)
    chi, dchi = cutoff_eval(rho - geom.r_hi, geom.profile)
    # chi vanishes near the centre, so the 1/rho factor never blows up
    chi_over_rho = np.where(rho > 0.0, chi / safe, 0.0)
    return y, nu, chi, dchi, chi_over_rho


def hanzawa_map(y, R, geom: CellGeometry = DEFAULT_GEOMETRY):
    """Image ``S(y; R)`` of reference points ``y`` for dimensionless radius ``R``."""
    R = geom.bounds.check(R)
    y, nu, chi, _, _ = _frame(y, geom)
    a = np.asarray(R - geom.r_hi)
    return y + (a * chi)[..., None] * nu


def hanzawa_grad(y, R, geom: CellGeometry = DEFAULT_GEOMETRY):
    """Deformation gradient, shape ``(..., 2, 2)``.

    ``(1 + a chi/rho) I + a (chi' - chi/rho) nu nu^T`` with ``a = R - r_hi``.
    """
    R = geom.bounds.check(R)
    _, nu, chi, dchi, cor = _frame(y, geom)
    a = np.asarray(R - geom.r_hi)
    iso = 1.0 + a * cor
    rad = a * (dchi - cor)
    eye = np.eye(geom.dim)
    return iso[..., None, None] * eye + rad[..., None, None] * nu[..., :, None] * nu[..., None, :]


def hanzawa_det(y, R, geom: CellGeometry = DEFAULT_GEOMETRY, n: int | None = None):
    """Jacobian ``(1 + chi' a) (1 + chi a / rho)^(n-1)`` via the matrix determinant lemma."""
    R = geom.bounds.check(R)
    n = geom.dim if n is None else n
    _, _, _, dchi, cor = _frame(y, geom)
    a = np.asarray(R - geom.r_hi)
    return (1.0 + dchi * a) * (1.0 + cor * a) ** (n - 1)


def hanzawa_det_dR(y, R, geom: CellGeometry = DEFAULT_GEOMETRY):
    """Derivative of the 2D Jacobian with respect to the radius."""
    R = geom.bounds.check(R)
    _, _, _, dchi, cor = _frame(y, geom)
    a = np.asarray(R - geom.r_hi)
    return dchi * (1.0 + cor * a) + (1.0 + dchi * a) * cor


def hanzawa_velocity(y, R, dR_dt, geom: CellGeometry = DEFAULT_GEOMETRY):
    """Geometric flux ``J F^{-T} dS/dt`` with ``dS/dt = dR_dt * chi * nu``.

    Because ``nu`` is an eigenvector of the symmetric gradient with eigenvalue
    ``1 + a chi'``, this reduces to ``(1 + a chi/rho) * dR_dt * chi * nu``.
    """
    R = geom.bounds.check(R)
    _, nu, chi, _, cor = _frame(y, geom)
    a = np.asarray(R - geom.r_hi)
    return ((1.0 + a * cor) * np.asarray(dR_dt) * chi)[..., None] * nu


def hanzawa_inverse(z, R, geom: CellGeometry = DEFAULT_GEOMETRY, iters: int = 80):
    """Preimage under ``S(.; R)`` of points in the deformed cell ``Y \\ B_R(m)``.

    The radial profile ``r -> r + a chi(r - r_hi)`` is strictly increasing on
    ``r >= r_hi``, so plain bisection on that ray is enough.
    """
    R = geom.bounds.check(R)
    z = np.asarray(z, dtype=float)
    d = z - CENTER
    rz = np.linalg.norm(d, axis=-1)
    a = np.broadcast_to(np.asarray(R - geom.r_hi, dtype=float), rz.shape)
    lo = np.full_like(rz, geom.r_hi)
    hi = np.full_like(rz, geom.r_hi + geom.profile.delta0)
    collar = rz < geom.r_hi + geom.profile.delta0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = mid + a * cutoff_eval(mid - geom.r_hi, geom.profile)[0] - rz
        lo = np.where(f < 0.0, mid, lo)
        hi = np.where(f < 0.0, hi, mid)
    r = np.where(collar, 0.5 * (lo + hi), rz)
    safe = np.where(rz > 0.0, rz, 1.0)
    return CENTER + (r / safe)[..., None] * d


def micro_map_coeffs(x, radii, eps: float, indexer, geom: CellGeometry = DEFAULT_GEOMETRY):
    """Scaled transformation data at physical points of the tiled domain.

    ``radii`` holds the per-cell radius in length units, indexed ``radii[k1, k2]``.
    Returns ``(S, F, J)`` evaluated at every point of ``x``; ``F`` and ``J`` are
    those of the reference map at ``y = frac(x/eps)`` and ``R = R_cell/eps``.
    """
    x = np.asarray(x, dtype=float)
    k = indexer.cell_of_point(x)
    y = x * indexer.n_per_unit - k
    R_cell = np.asarray(radii, dtype=float)[k[..., 0], k[..., 1]]
    geom.bounds.check(R_cell, scale=eps)
    r = R_cell / eps
    _, nu, chi, _, _ = _frame(y, geom)
    S = x + ((R_cell - eps * geom.r_hi) * chi)[..., None] * nu
    return S, hanzawa_grad(y, r, geom), hanzawa_det(y, r, geom)
