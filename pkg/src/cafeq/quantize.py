"""Scalar uniform quantization with grouped scales, plus error metrics.

A group is the set of weights sharing one (min, scale) pair:

* ``per_tensor``   -- one group for the whole matrix.
* ``per_channel``  -- one group per channel; channels are enumerated along
  ``axis`` (the contraction dimension), so ``axis="rows"`` gives one group
  per row.
* ``subchannel``   -- each channel is split into contiguous blocks of
  ``block_size`` elements, each with its own (min, scale).

Group parameters are stored flat, enumerated row-major over the
(channel, block) grid. Encoding per group: scale = range / (2^N - 1),
code = round((w - min) / scale), dequantized value = scale * code + min.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import frobenius, rng_from_seed

__all__ = [
    "QuantConfig",
    "QuantizedMatrix",
    "BoundReport",
    "quantize",
    "quantize_stochastic",
    "dequantize",
    "relative_error",
    "pqe",
    "elementwise_error_bound",
]

GRANULARITIES = ("per_tensor", "per_channel", "subchannel")
ROUNDINGS = ("nearest", "stochastic")
AXES = ("rows", "cols")


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 4
    granularity: str = "per_channel"
    axis: str = "rows"
    block_size: int | None = None
    rounding: str = "nearest"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ConfigError(f"bits must be in [1, 8], got {self.bits}")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if self.axis not in AXES:
            raise ConfigError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.rounding not in ROUNDINGS:
            raise ConfigError(f"unknown rounding {self.rounding!r}")
        if self.granularity == "subchannel":
            if self.block_size is None or self.block_size < 1:
                raise ConfigError("subchannel granularity requires a positive block_size")

    @property
    def levels(self) -> int:
        """Top code value 2^N - 1."""
        return (1 << self.bits) - 1

    def with_rounding(self, rounding: str, seed: int | None = None) -> "QuantConfig":
        return replace(self, rounding=rounding, seed=self.seed if seed is None else seed)


@dataclass(frozen=True)
class QuantizedMatrix:
    codes: np.ndarray        # uint8, same shape as the source matrix
    group_min: np.ndarray    # float64, one per group
    group_scale: np.ndarray  # float64, one per group, >= 0
    config: QuantConfig

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    @property
    def n_groups(self) -> int:
        return self.group_min.shape[0]


def _channel_block(shape: tuple[int, int], cfg: QuantConfig) -> tuple[int, int]:
    """(channel_count, block_length) of the grouping grid; validates divisibility."""
    rows, cols = shape
    if cfg.granularity == "per_tensor":
        return 1, rows * cols
    channels, channel_len = (rows, cols) if cfg.axis == "rows" else (cols, rows)
    if cfg.granularity == "per_channel":
        return channels, channel_len
    if channel_len % cfg.block_size != 0:
        raise ConfigError(
            f"block_size {cfg.block_size} does not divide channel length {channel_len} "
            f"(shape {shape}, axis {cfg.axis!r})")
    return channels, cfg.block_size


def _grouped(w: np.ndarray, cfg: QuantConfig) -> np.ndarray:
    """View of w as (n_groups, block_len), groups enumerated row-major."""
    channels, block = _channel_block(w.shape, cfg)
    base = w if (cfg.axis == "rows" or cfg.granularity == "per_tensor") else w.T
    return base.reshape(-1, block)


def _ungroup(g: np.ndarray, shape: tuple[int, int], cfg: QuantConfig) -> np.ndarray:
    rows, cols = shape
    if cfg.granularity == "per_tensor" or cfg.axis == "rows":
        return g.reshape(rows, cols)
    return g.reshape(cols, rows).T


def _group_params(w: np.ndarray, cfg: QuantConfig):
    g = _grouped(w, cfg)
    gmin = g.min(axis=1)
    gmax = g.max(axis=1)
    scale = (gmax - gmin) / cfg.levels
    return g, gmin, scale


def quantize(w: np.ndarray, cfg: QuantConfig) -> QuantizedMatrix:
    """Uniform quantization of w under cfg (nearest or stochastic rounding).

    Nearest rounding maps the shifted value (w - min)/scale to the closest
    code, ties at .5 rounding up. Constant groups (zero range) store
    scale 0 and code 0 and dequantize back to the constant exactly.
    """
    w = np.ascontiguousarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ConfigError("cannot quantize non-finite weights")
    g, gmin, scale = _group_params(w, cfg)
    safe = np.where(scale == 0.0, 1.0, scale)
    x = (g - gmin[:, None]) / safe[:, None]
    if cfg.rounding == "nearest":
        codes = np.floor(x + 0.5)
    else:
        # One uniform draw per element, consumed in row-major order over
        # the original matrix so results are reproducible given the seed.
        u = rng_from_seed(cfg.seed).random(w.shape)
        ug = _grouped(u, cfg)
        lo = np.floor(x)
        codes = lo + (ug < x - lo)
    codes = np.clip(codes, 0, cfg.levels)
    codes = np.where(scale[:, None] == 0.0, 0.0, codes)
    codes = _ungroup(codes, w.shape, cfg).astype(np.uint8)
    return QuantizedMatrix(codes=codes, group_min=gmin, group_scale=scale, config=cfg)


def quantize_stochastic(w: np.ndarray, cfg: QuantConfig) -> QuantizedMatrix:
    """Unbiased stochastic rounding: code = floor(x) + Bernoulli(frac(x))."""
    if cfg.rounding != "stochastic":
        raise ConfigError("quantize_stochastic requires rounding='stochastic'")
    return quantize(w, cfg)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    cfg = q.config
    codes = _grouped(q.codes.astype(np.float64), cfg)
    g = q.group_scale[:, None] * codes + q.group_min[:, None]
    return _ungroup(g, q.codes.shape, cfg)


def relative_error(w: np.ndarray, w_hat: np.ndarray) -> float:
    """||w - w_hat||_F / ||w||_F."""
    if w.shape != w_hat.shape:
        raise ShapeError(f"shape mismatch: {w.shape} vs {w_hat.shape}")
    ref = frobenius(w)
    if ref == 0.0:
        raise ValueError("relative_error undefined for a zero-norm reference")
    return frobenius(w - w_hat) / ref


def pqe(w1: np.ndarray, w2: np.ndarray, w1_hat: np.ndarray, w2_hat: np.ndarray,
        relative: bool = False) -> float:
    """Paired quantization error ||W1_hat W2_hat - W1 W2||_F.

    With relative=True the result is divided by ||W1 W2||_F.
    """
    if w1.shape != w1_hat.shape or w2.shape != w2_hat.shape:
        raise ShapeError(
            f"quantized shapes {w1_hat.shape}, {w2_hat.shape} do not match "
            f"originals {w1.shape}, {w2.shape}")
    if w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"cannot multiply {w1.shape} by {w2.shape}: inner dimensions differ")
    err = frobenius(w1_hat @ w2_hat - w1 @ w2)
    if relative:
        ref = frobenius(w1 @ w2)
        if ref == 0.0:
            raise ValueError("relative PQE undefined for a zero-norm product")
        return err / ref
    return err


@dataclass(frozen=True)
class BoundReport:
    ok: bool
    worst_error: float
    worst_bound: float
    worst_index: tuple[int, int] | None


_BOUND_SLACK = 1e-12


def elementwise_error_bound(q: QuantizedMatrix, w: np.ndarray) -> BoundReport:
    """Check |w - dequantize(q)| <= range/(2(2^N - 1)) element-wise.

    The per-element bound is half the group's scale (plus float slack);
    it holds for nearest rounding by construction. Returns the worst
    violator when the check fails.
    """
    if q.config.rounding != "nearest":
        raise ConfigError("the element-wise bound only applies to nearest rounding")
    if w.shape != q.shape:
        raise ShapeError(f"shape mismatch: {w.shape} vs {q.shape}")
    cfg = q.config
    err = np.abs(_grouped(np.asarray(w, dtype=np.float64), cfg) - _grouped(dequantize(q), cfg))
    bound = q.group_scale[:, None] / 2.0 + _BOUND_SLACK
    excess = err - bound
    flat = int(np.argmax(excess))
    gi, ei = divmod(flat, err.shape[1])
    ok = bool(excess[gi, ei] <= 0.0)
    full_index = np.unravel_index(
        int(np.argmax(_ungroup(excess, q.shape, cfg))), q.shape)
    return BoundReport(
        ok=ok,
        worst_error=float(err[gi, ei]),
        worst_bound=float(bound[gi, ei]),
        worst_index=None if ok else (int(full_index[0]), int(full_index[1])),
    )
