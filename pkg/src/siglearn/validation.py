"""Input-validation helpers shared by the public estimator surfaces."""

from __future__ import annotations

import numpy as np


def check_observations(obs, k: int, name: str = "obs") -> np.ndarray:
    """Coerce to float64 and require shape (N, k) or (B, N, k)."""
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim not in (2, 3) or arr.shape[-1] != k:
        raise ValueError(
            f"{name} must have shape (N, {k}) or (B, N, {k}), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_actions(actions, n_phases: int, n: int, name: str = "actions") -> np.ndarray:
    arr = np.asarray(actions)
    if arr.shape[-1] != n:
        raise ValueError(f"{name} must cover {n} intersections, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must be integers")
    if arr.min(initial=0) < 0 or arr.max(initial=0) >= n_phases:
        raise ValueError(f"{name} must lie in [0, {n_phases})")
    return arr.astype(np.intp)


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value
