"""Input validation helpers shared by the public entry points."""

import numpy as np


class DegenerateEnsembleError(RuntimeError):
    """Measurement null space intersects the current tangent space."""


def as_matrix(Z, name: str = "Z") -> np.ndarray:
    """Coerce to a finite 2-d float64/complex128 array."""
    Z = np.asarray(Z)
    if Z.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got ndim={Z.ndim}")
    if np.iscomplexobj(Z):
        Z = Z.astype(np.complex128, copy=False)
    else:
        Z = Z.astype(np.float64, copy=False)
    if not np.all(np.isfinite(Z.view(np.float64) if Z.dtype == np.complex128 else Z)):
        raise ValueError(f"{name} contains non-finite entries")
    return Z


def as_vector(y, name: str = "y", length: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be a 1-d array, got ndim={y.ndim}")
    if np.iscomplexobj(y):
        y = y.astype(np.complex128, copy=False)
    else:
        y = y.astype(np.float64, copy=False)
    if length is not None and y.shape[0] != length:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {length}")
    if not np.all(np.isfinite(y.view(np.float64) if y.dtype == np.complex128 else y)):
        raise ValueError(f"{name} contains non-finite entries")
    return y


def check_rank(r: int, shape: tuple[int, int], name: str = "r") -> int:
    r = int(r)
    if r < 1:
        raise ValueError(f"{name} must be >= 1, got {r}")
    if r > min(shape):
        raise ValueError(f"{name}={r} exceeds min dimension of shape {shape}")
    return r


def check_index(k: int, s: int) -> int:
    k = int(k)
    if not 0 <= k < s:
        raise IndexError(f"operator index {k} out of range for s={s}")
    return k
