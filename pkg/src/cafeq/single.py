"""Learned block-diagonal transforms for single weight matrices.

The transform M (block-diagonal, blocks k x k) is applied on the
contraction side: the matrix actually quantized is M W, and inference
undoes it with M^{-1} at a cost of d*k multiply-adds per activation
vector. M is learned by descending a surrogate for the expected squared
reconstruction error under stochastic rounding with per-row grouping:

    loss = d2 / (2^N - 1)^2 * sum_{i,j} (M^{-1})_{i,j}^2 * max_c |(M W)_{j,c}|^2

Because M is block diagonal the loss is an independent sum over blocks,
so blocks are optimized jointly as a batched computation but remain
mathematically independent. M is unconstrained during optimization
(invertibility is monitored per block); final quantization uses nearest
rounding even though the loss models stochastic rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .linalg import random_rotation, randomized_hadamard
from .optim import Adam
from .quantize import QuantConfig, QuantizedMatrix, dequantize, quantize

__all__ = [
    "BlockDiagTransform",
    "SingleLossConfig",
    "init_blocks",
    "hadamard_blocks",
    "surrogate_loss",
    "surrogate_grad",
    "optimize_single",
    "SingleOptResult",
    "quantize_with_transform",
    "reconstruct_single",
]

_MIN_BLOCK_DET = 1e-12


@dataclass
class BlockDiagTransform:
    """Invertible block-diagonal matrix, stored as stacked blocks.

    blocks has shape (d/k, k, k); inverse_blocks is kept in sync by
    refresh_inverse(). Off-block entries are identically zero.
    """

    blocks: np.ndarray
    inverse_blocks: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ShapeError(f"blocks must be (n, k, k), got {self.blocks.shape}")
        if self.inverse_blocks is None:
            self.refresh_inverse()

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def dim(self) -> int:
        return self.blocks.shape[0] * self.blocks.shape[1]

    @property
    def mac_per_vector(self) -> int:
        """Multiply-adds to apply the transform to one d-vector: d * k."""
        return self.dim * self.block_size

    def refresh_inverse(self):
        dets = np.linalg.det(self.blocks)
        bad = np.abs(dets) <= _MIN_BLOCK_DET
        if bad.any():
            raise NumericalError(
                f"transform block {int(np.argmax(bad))} is singular "
                f"(|det| = {np.abs(dets).min():.3e})",
                block_index=int(np.argmax(bad)))
        self.inverse_blocks = np.linalg.inv(self.blocks)

    def as_dense(self) -> np.ndarray:
        return _assemble(self.blocks)

    def inverse_dense(self) -> np.ndarray:
        return _assemble(self.inverse_blocks)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """M @ w, block-wise."""
        return _block_apply(self.blocks, w)

    def apply_inverse(self, w: np.ndarray) -> np.ndarray:
        """M^{-1} @ w, block-wise."""
        return _block_apply(self.inverse_blocks, w)


def _assemble(blocks: np.ndarray) -> np.ndarray:
    n, k, _ = blocks.shape
    m = np.zeros((n * k, n * k))
    for i in range(n):
        m[i * k:(i + 1) * k, i * k:(i + 1) * k] = blocks[i]
    return m


def _block_apply(blocks: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, k, _ = blocks.shape
    if w.shape[0] != n * k:
        raise ShapeError(f"transform dim {n * k} does not match matrix rows {w.shape[0]}")
    return (blocks @ w.reshape(n, k, -1)).reshape(w.shape)


def _block_seeds(seed: int, n: int) -> list[int]:
    state = np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def init_blocks(d: int, k: int, seed: int) -> BlockDiagTransform:
    """Block-diagonal transform of independent random k x k rotations."""
    if k < 1 or d % k != 0:
        raise ConfigError(f"block size {k} does not divide dimension {d}")
    seeds = _block_seeds(seed, d // k)
    blocks = np.stack([random_rotation(k, s) for s in seeds])
    return BlockDiagTransform(blocks=blocks)


def hadamard_blocks(d: int, k: int, seed: int) -> BlockDiagTransform:
    """Block-diagonal transform of independent randomized Hadamard blocks."""
    if k < 1 or d % k != 0:
        raise ConfigError(f"block size {k} does not divide dimension {d}")
    seeds = _block_seeds(seed, d // k)
    blocks = np.stack([randomized_hadamard(k, s) for s in seeds])
    return BlockDiagTransform(blocks=blocks)


@dataclass(frozen=True)
class SingleLossConfig:
    bits: int = 4
    inf_norm: str = "exact"   # exact (argmax subgradient) | smoothed (log-sum-exp)
    tau: float = 100.0        # smoothing temperature, smoothed mode only
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 20_000
    trace_every: int = 100

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ConfigError(f"bits must be in [1, 8], got {self.bits}")
        if self.inf_norm not in ("exact", "smoothed"):
            raise ConfigError(f"inf_norm must be 'exact' or 'smoothed', got {self.inf_norm!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.inf_norm == "smoothed" and self.tau <= 0:
            raise ConfigError("tau must be positive")


def _check_blocks(blocks: np.ndarray):
    dets = np.linalg.det(blocks)
    bad = np.abs(dets) <= _MIN_BLOCK_DET
    if bad.any():
        idx = int(np.argmax(bad))
        raise NumericalError(f"block {idx} is numerically singular", block_index=idx)


def _row_max(t: np.ndarray, cfg: SingleLossConfig):
    """Per-row infinity norm of the stacked products, exact or smoothed.

    Returns (mx, aux) where aux carries what the matching gradient needs.
    """
    abs_t = np.abs(t)
    if cfg.inf_norm == "exact":
        cmax = abs_t.argmax(axis=2)
        nb, k, _ = t.shape
        ii = np.arange(nb)[:, None]
        jj = np.arange(k)[None, :]
        tv = t[ii, jj, cmax]  # signed entry at the (first) argmax
        return np.abs(tv), (cmax, tv)
    z = cfg.tau * abs_t
    zmax = z.max(axis=2, keepdims=True)
    e = np.exp(z - zmax)
    sm = e.sum(axis=2, keepdims=True)
    mx = (zmax[..., 0] + np.log(sm[..., 0])) / cfg.tau
    weights = e / sm  # softmax over columns
    return mx, weights


def _loss_grad_blocks(blocks: np.ndarray, wb: np.ndarray, cfg: SingleLossConfig,
                      want_grad: bool):
    """Per-block surrogate loss (and gradient) for stacked blocks.

    blocks: (nb, k, k); wb: (nb, k, d2) rows of W grouped by block.
    """
    _check_blocks(blocks)
    d2 = wb.shape[2]
    c = d2 / float(((1 << cfg.bits) - 1) ** 2)
    inv = np.linalg.inv(blocks)
    a = (inv ** 2).sum(axis=1)  # (nb, k): squared column norms of each inverse
    t = blocks @ wb
    mx, aux = _row_max(t, cfg)
    loss_b = c * (a * mx ** 2).sum(axis=1)
    if not want_grad:
        return loss_b, None
    # d(M^{-1}) = -M^{-1} dM M^{-1} gives the inverse-side term; the row-max
    # side differentiates through the argmax entry (or the softmax weights).
    inv_t = inv.transpose(0, 2, 1)
    g_inv = -2.0 * c * ((inv_t @ inv) * (mx ** 2)[:, None, :]) @ inv_t
    if cfg.inf_norm == "exact":
        cmax, tv = aux
        p = np.zeros_like(t)
        nb, k, _ = t.shape
        p[np.arange(nb)[:, None], np.arange(k)[None, :], cmax] = a * tv
        g_max = 2.0 * c * p @ wb.transpose(0, 2, 1)
    else:
        weights = aux
        r = weights * np.sign(t)
        g_max = 2.0 * c * ((a * mx)[:, :, None] * r) @ wb.transpose(0, 2, 1)
    return loss_b, g_inv + g_max


def _split_rows(w: np.ndarray, n_blocks: int) -> np.ndarray:
    return w.reshape(n_blocks, w.shape[0] // n_blocks, w.shape[1])


def surrogate_loss(m: BlockDiagTransform, w: np.ndarray, cfg: SingleLossConfig) -> float:
    """Surrogate loss of transform m on weights w (sum over blocks)."""
    if m.dim != w.shape[0]:
        raise ShapeError(f"transform dim {m.dim} does not match matrix rows {w.shape[0]}")
    loss_b, _ = _loss_grad_blocks(m.blocks, _split_rows(w, m.blocks.shape[0]), cfg, False)
    return float(loss_b.sum())


def surrogate_grad(m: BlockDiagTransform, w: np.ndarray, cfg: SingleLossConfig) -> np.ndarray:
    """Analytic gradient of the surrogate loss w.r.t. each block; (nb, k, k)."""
    if m.dim != w.shape[0]:
        raise ShapeError(f"transform dim {m.dim} does not match matrix rows {w.shape[0]}")
    _, g = _loss_grad_blocks(m.blocks, _split_rows(w, m.blocks.shape[0]), cfg, True)
    return g


@dataclass
class SingleOptResult:
    transform: BlockDiagTransform
    init_loss: float
    best_loss: float
    trace: list[tuple[int, int, float]]  # (iteration, block_index, loss)

    def trace_csv(self) -> str:
        lines = ["iteration,block_index,loss"]
        lines += [f"{it},{b},{v:.10g}" for it, b, v in self.trace]
        return "\n".join(lines) + "\n"


def optimize_single(w: np.ndarray, k: int, cfg: SingleLossConfig, seed: int) -> SingleOptResult:
    """Adam descent of the surrogate loss from a random-rotation init.

    Each block keeps its own best-loss iterate (the loss decomposes over
    blocks), so the returned transform is at least as good as the
    initialization. Raises NumericalError with the iterate index if the
    loss goes non-finite; callers retry with a lower learning rate.
    """
    d = w.shape[0]
    if k < 1 or d % k != 0:
        raise ConfigError(f"block size {k} does not divide dimension {d}")
    nb = d // k
    wb = _split_rows(np.asarray(w, dtype=np.float64), nb)
    blocks = init_blocks(d, k, seed).blocks
    loss_b, _ = _loss_grad_blocks(blocks, wb, cfg, False)
    init_loss = float(loss_b.sum())
    best_loss = loss_b.copy()
    best_blocks = blocks.copy()
    trace = [(0, b, float(loss_b[b])) for b in range(nb)]
    if init_loss == 0.0:  # e.g. W = 0: nothing to optimize
        return SingleOptResult(BlockDiagTransform(blocks=best_blocks),
                               init_loss, 0.0, trace)
    opt = Adam(blocks.shape, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    for it in range(1, cfg.iterations + 1):
        loss_b, grad = _loss_grad_blocks(blocks, wb, cfg, True)
        if not np.all(np.isfinite(loss_b)):
            raise NumericalError(f"surrogate loss diverged at iteration {it}",
                                 iteration=it)
        improved = loss_b < best_loss
        if improved.any():
            best_loss = np.where(improved, loss_b, best_loss)
            best_blocks[improved] = blocks[improved]
        if it % cfg.trace_every == 0:
            trace.extend((it, b, float(loss_b[b])) for b in range(nb))
        blocks = blocks - opt.step(grad)
    return SingleOptResult(BlockDiagTransform(blocks=best_blocks),
                           init_loss, float(best_loss.sum()), trace)


def quantize_with_transform(w: np.ndarray, m: BlockDiagTransform,
                            qcfg: QuantConfig) -> QuantizedMatrix:
    """Quantize M @ w; pair with reconstruct_single to undo the transform."""
    return quantize(m.apply(w), qcfg)


def reconstruct_single(q: QuantizedMatrix, m: BlockDiagTransform) -> np.ndarray:
    """M^{-1} @ dequantize(q), the effective inference-time weight."""
    return m.apply_inverse(dequantize(q))
