"""Synthetic weight generators used by the test suites and experiment scripts."""

from __future__ import annotations

import numpy as np

from .linalg import rng_from_seed

__all__ = ["heavy_tailed", "coupled_pair", "square_outlier_pair"]


def heavy_tailed(rows: int, cols: int, seed: int, outlier_frac: float = 0.01,
                 outlier_scale: float = 100.0) -> np.ndarray:
    """Standard Gaussian matrix with a fraction of entries scaled up.

    Mimics the outlier structure that inflates uniform-quantization ranges.
    """
    rng = rng_from_seed(seed)
    w = rng.standard_normal((rows, cols))
    mask = rng.random((rows, cols)) < outlier_frac
    w[mask] *= outlier_scale
    return w


def coupled_pair(d_outer: int, d_inner: int, seed: int, n_outlier_channels: int = 3,
                 outlier_scale: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian pair (d_outer x d_inner, d_inner x d_outer) with planted
    outlier channels along the shared inner dimension.

    The rectangular shape (inner < outer) mirrors attention value/output
    projections, whose healthy conditioning is what makes pseudoinverse
    compensation effective.
    """
    rng = rng_from_seed(seed)
    w1 = rng.standard_normal((d_outer, d_inner))
    w2 = rng.standard_normal((d_inner, d_outer))
    w1[:, rng.choice(d_inner, size=n_outlier_channels, replace=False)] *= outlier_scale
    w2[rng.choice(d_inner, size=n_outlier_channels, replace=False), :] *= outlier_scale
    return w1, w2


def square_outlier_pair(d: int, seed: int, n_outlier_channels: int = 4,
                        outlier_scale: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Square d x d Gaussian pair with planted outlier channels on the
    shared dimension; used for paired-transform (not adaptive) experiments."""
    return coupled_pair(d, d, seed, n_outlier_channels, outlier_scale)
