"""Input validation helpers shared by the public entry points."""

import numpy as np


def as_real_matrix(M, name, shape=None):
    """Return ``M`` as a finite 2-D float array, checking ``shape`` if given.

    ``None`` entries in ``shape`` are wildcards.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1) if shape is None or shape[1] in (None, 1) else M.reshape(1, -1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got ndim={M.ndim}")
    if shape is not None:
        for axis, expected in enumerate(shape):
            if expected is not None and M.shape[axis] != expected:
                raise ValueError(f"{name} has shape {M.shape}, expected {shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def check_vector(v, name, size=None):
    v = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and v.size != size:
        raise ValueError(f"{name} has length {v.size}, expected {size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_frequency_grid(grid, name="grid"):
    """Sorted, deduplicated, non-negative frequency array (rad/s)."""
    w = np.unique(np.asarray(grid, dtype=float).reshape(-1))
    if w.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError(f"{name} must contain finite non-negative frequencies")
    return w


def check_in_box(K, K_min, K_max, name="K", atol=0.0):
    K = np.asarray(K, dtype=float)
    if np.any(K < K_min - atol) or np.any(K > K_max + atol):
        raise ValueError(f"{name} lies outside the parameter box")
    return K


def check_positive_vector(v, name, size=None):
    v = check_vector(v, name, size)
    if np.any(v <= 0):
        raise ValueError(f"{name} must be componentwise positive")
    return v
