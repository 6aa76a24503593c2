"""Dense real linear algebra substrate.

A "matrix" throughout the toolkit is a 2-D C-contiguous float64 ndarray
(row-major). All optimization and analysis runs in 64-bit precision;
32-bit floats appear only at file boundaries. Every randomized operation
takes an explicit 64-bit seed and draws from a PCG64 generator, so results
are bit-identical for identical seeds.

All functions here are pure: no global state, safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ConfigError, ShapeError

__all__ = [
    "SvdResult",
    "as_matrix",
    "rng_from_seed",
    "matmul",
    "svd",
    "pinv",
    "random_rotation",
    "sylvester_hadamard",
    "randomized_hadamard",
    "channel_abs_max",
    "frobenius",
    "infinity_norm",
]

DEFAULT_RCOND = 1e-10


def rng_from_seed(seed: int) -> np.random.Generator:
    """PCG64 generator for the given 64-bit seed (the toolkit-wide PRNG)."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and coerce to a 2-D finite float64 array.

    Used at API and file boundaries; internal code passes ndarrays through.
    """
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD A = U diag(s) V^T with s non-increasing and non-negative."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.v.T


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def svd(a: np.ndarray) -> SvdResult:
    """Thin SVD via LAPACK; singular values sorted descending.

    Raises ConvergenceError if the LAPACK iteration fails to converge
    (essentially unreachable for finite inputs).
    """
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge on shape {a.shape}: {exc}",
                               iterations=_LAPACK_SVD_ITERATION_CAP) from exc
    return SvdResult(u=u, singular_values=s, v=vt.T)


# LAPACK gesdd's internal sweep cap, reported in ConvergenceError diagnostics.
_LAPACK_SVD_ITERATION_CAP = 30


def pinv(a: np.ndarray, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Reciprocals of singular values below rcond * sigma_max are zeroed.
    """
    if not 0.0 < rcond < 1.0:
        raise ConfigError(f"rcond must lie in (0, 1), got {rcond}")
    res = svd(a)
    s = res.singular_values
    smax = s[0] if s.size else 0.0
    keep = s >= rcond * smax
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (res.v * inv) @ res.u.T


def random_rotation(d: int, seed: int) -> np.ndarray:
    """Random d x d rotation (orthogonal, det +1).

    QR of a Gaussian draw, with column signs fixed so R has a positive
    diagonal (making the draw Haar-distributed), then one column negated
    if needed to force det +1.
    """
    if d < 1:
        raise ConfigError(f"rotation dimension must be >= 1, got {d}")
    g = rng_from_seed(seed).standard_normal((d, d))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def sylvester_hadamard(d: int) -> np.ndarray:
    """Unnormalized +-1 Walsh-Hadamard matrix H_d (d a power of two)."""
    if d < 1 or (d & (d - 1)) != 0:
        raise ConfigError(f"Hadamard dimension must be a power of two, got {d}")
    h = np.ones((1, 1))
    while h.shape[0] < d:
        h = np.block([[h, h], [h, -h]])
    return h


def randomized_hadamard(d: int, seed: int) -> np.ndarray:
    """(1/sqrt(d)) H_d D with D a random +-1 diagonal; orthogonal.

    Applying it to a one-hot vector equalizes all entry magnitudes, which
    is the outlier-flattening property this toolkit leans on.
    """
    h = sylvester_hadamard(d) / np.sqrt(d)
    signs = rng_from_seed(seed).integers(0, 2, size=d).astype(np.float64) * 2.0 - 1.0
    return h * signs[np.newaxis, :]


def channel_abs_max(a: np.ndarray, axis: str) -> np.ndarray:
    """Per-row (axis="rows") or per-column (axis="cols") max absolute value."""
    if axis == "rows":
        return np.abs(a).max(axis=1) if a.size else np.zeros(a.shape[0])
    if axis == "cols":
        return np.abs(a).max(axis=0) if a.size else np.zeros(a.shape[1])
    raise ConfigError(f'axis must be "rows" or "cols", got {axis!r}')


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def infinity_norm(a: np.ndarray) -> float:
    """Largest absolute entry (not the induced operator norm)."""
    return float(np.abs(a).max()) if a.size else 0.0
