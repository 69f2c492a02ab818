"""Small input validation helpers shared by the solvers."""

from __future__ import annotations

import numbers

import numpy as np


def check_rng(seed) -> np.random.Generator:
    """Turn None, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot seed a numpy Generator")


def check_positive(value, name: str, strict: bool = True) -> float:
    v = float(value)
    if not np.isfinite(v) or (v <= 0 if strict else v < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value}")
    return v


def check_fraction(value, name: str) -> float:
    v = float(value)
    if not 0 < v < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return v


def check_hermitian_psd(A, name: str = "matrix", tol: float = 1e-9) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.conj().T)) > tol * scale:
        raise ValueError(f"{name} must be Hermitian")
    if np.linalg.eigvalsh((A + A.conj().T) / 2)[0] < -tol * scale:
        raise ValueError(f"{name} must be positive semidefinite")
    return (A + A.conj().T) / 2


def check_single_path(real) -> None:
    if len(real.gains.bi) != 1 or real.gains.iu.shape != (1, 1):
        raise ValueError("the single-user design needs one user and single-path links")


def check_thresholds(thresholds, K: int) -> np.ndarray:
    t = np.broadcast_to(np.asarray(thresholds, dtype=float), (K,)).copy()
    if np.any(t < 0):
        raise ValueError("SINR thresholds must be nonnegative")
    return t
