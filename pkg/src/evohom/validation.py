"""Input checks shared by the estimator front-ends and the CLI."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import TableRangeError
from .geometry import RadiusBounds


def check_radii(R, bounds: RadiusBounds, slack: float = 1e-12) -> np.ndarray:
    """1D float array of finite radii inside ``bounds``; raises TableRangeError otherwise."""
    try:
        arr = check_array(np.atleast_1d(np.asarray(R, dtype=float)), ensure_2d=False, allow_nd=True,
                          ensure_all_finite=True, dtype=np.float64)
    except ValueError as exc:
        raise TableRangeError(f"radii must be finite numbers: {exc}") from exc
    arr = arr.reshape(-1)
    lo, hi = bounds.r_lo - slack, bounds.r_hi + slack
    bad = (arr < lo) | (arr > hi)
    if np.any(bad):
        raise TableRangeError(f"radius {arr[bad][0]!r} outside [{bounds.r_lo}, {bounds.r_hi}]")
    return np.clip(arr, bounds.r_lo, bounds.r_hi)


def check_tensor(D) -> np.ndarray:
    D = check_array(np.asarray(D, dtype=float), ensure_all_finite=True)
    if D.shape != (2, 2):
        raise ValueError(f"expected a 2x2 tensor, got shape {D.shape}")
    return D


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


def check_step(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` reaching ``T``; rejects non-integer ratios."""
    check_positive("dt", dt)
    if T < 0.0:
        raise ValueError("T must be nonnegative")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n
