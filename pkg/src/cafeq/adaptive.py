"""Alternating pseudoinverse-compensated rounding for coupled pairs.

Quantizing W1 and W2 independently ignores that only their product
matters. This scheme quantizes W1 first, then repeatedly re-quantizes
each matrix against the other's quantized form: the compensation target
for W2 is pinv(W1_hat) W1 W2, chosen so W1_hat @ target ~= W1 W2. Both
outputs stay ordinary quantized matrices decodable by the plain
dequantizer.

Alternating compensation is not guaranteed monotone, so the pair with
the lowest product error seen anywhere along the way (including the
initial independent rounding) is returned; the reported error therefore
never exceeds independent rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .linalg import DEFAULT_RCOND, frobenius, pinv
from .quantize import QuantConfig, QuantizedMatrix, dequantize, quantize

__all__ = [
    "AdaptiveRoundConfig",
    "AdaptiveRoundResult",
    "adaptive_round",
    "compensation_target",
    "complexity_report",
]


@dataclass(frozen=True)
class AdaptiveRoundConfig:
    base: QuantConfig = field(default_factory=QuantConfig)
    iterations: int = 3          # 0 = half iteration: one W2 compensation only
    rcond: float = DEFAULT_RCOND
    early_stop_rel: float = 1e-6

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not 0.0 < self.rcond < 1.0:
            raise ConfigError(f"rcond must lie in (0, 1), got {self.rcond}")


@dataclass
class AdaptiveRoundResult:
    q1: QuantizedMatrix | None   # None when a custom quantize_fn returns no codes
    q2: QuantizedMatrix | None
    deq1: np.ndarray
    deq2: np.ndarray
    pqe: float
    trace: list[tuple[int, str, float]]  # (step, side, pqe)
    note: str = ""

    def trace_csv(self) -> str:
        lines = ["step,side,pqe"]
        lines += [f"{s},{side},{v:.10g}" for s, side, v in self.trace]
        return "\n".join(lines) + "\n"


def compensation_target(w1_hat_deq: np.ndarray, w1: np.ndarray, w2: np.ndarray,
                        rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """pinv(W1_hat) W1 W2, the matrix W2 is re-quantized against.

    When W1_hat equals W1 and has full column rank this is exactly W2.
    """
    if w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"cannot multiply {w1.shape} by {w2.shape}: inner dimensions differ")
    if w1_hat_deq.shape != w1.shape:
        raise ShapeError(f"quantized shape {w1_hat_deq.shape} does not match {w1.shape}")
    return pinv(w1_hat_deq, rcond) @ (w1 @ w2)


def adaptive_round(w1: np.ndarray, w2: np.ndarray, cfg: AdaptiveRoundConfig,
                   quantize_fn=None) -> AdaptiveRoundResult:
    """Alternating compensation rounding of (w1, w2) under cfg.base.

    quantize_fn overrides the base quantizer for experiments; it maps a
    matrix to (codes_or_None, dequantized_matrix). The identity map
    (lambda w: (None, w)) recovers the unquantized fixed point.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.shape[1] != w2.shape[0]:
        raise ShapeError(f"cannot multiply {w1.shape} by {w2.shape}: inner dimensions differ")
    if quantize_fn is None:
        def quantize_fn(w):
            q = quantize(w, cfg.base)
            return q, dequantize(q)

    prod = w1 @ w2
    q1, d1 = quantize_fn(w1)
    q2, d2 = quantize_fn(w2)
    p = frobenius(d1 @ d2 - prod)
    trace = [(0, "init", p)]
    best = (p, q1, q2, d1, d2)
    note = ""

    if p == 0.0:  # both matrices exactly representable: nothing to compensate
        return AdaptiveRoundResult(q1, q2, d1, d2, p, trace)
    if frobenius(prod) == 0.0:
        note = "zero product; kept independent rounding"
        return AdaptiveRoundResult(q1, q2, d1, d2, p, trace, note=note)

    def w2_halfstep(step):
        nonlocal q2, d2, best
        q2, d2 = quantize_fn(pinv(d1, cfg.rcond) @ prod)
        p = frobenius(d1 @ d2 - prod)
        trace.append((step, "w2", p))
        if p < best[0]:
            best = (p, q1, q2, d1, d2)
        return p

    def w1_halfstep(step):
        nonlocal q1, d1, best
        q1, d1 = quantize_fn(prod @ pinv(d2, cfg.rcond))
        p = frobenius(d1 @ d2 - prod)
        trace.append((step, "w1", p))
        if p < best[0]:
            best = (p, q1, q2, d1, d2)
        return p

    if cfg.iterations == 0:
        w2_halfstep(1)
    else:
        prev = p
        step = 0
        for _ in range(cfg.iterations):
            p = w2_halfstep(step + 1)
            p = w1_halfstep(step + 2)
            step += 2
            if prev - p < cfg.early_stop_rel * max(prev, 1e-30):
                break
            prev = p

    p, q1, q2, d1, d2 = best
    return AdaptiveRoundResult(q1, q2, d1, d2, p, trace, note=note)


def complexity_report(d: int, h: int, iterations: int) -> float:
    """SVD-dominated flop estimate for adaptive rounding of a d x h pair.

    Each (half-)iteration is dominated by one pseudoinverse, itself an
    SVD costing on the order of d * h * min(d, h); the half-iteration
    mode (iterations = 0) computes a single SVD.
    """
    if d < 1 or h < 1:
        raise ConfigError(f"dimensions must be positive, got d={d}, h={h}")
    if iterations < 0:
        raise ConfigError("iterations must be >= 0")
    return float(max(iterations, 1) * d * h * min(d, h))
