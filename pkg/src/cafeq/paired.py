"""Learned dense transforms for coupled matrix pairs.

For consecutive layers W1 (d1 x d2) and W2 (d2 x d3) with no nonlinearity
in between, any invertible M preserves the computation exactly:
(W1 M)(M^{-1} W2) = W1 W2, so the transform costs nothing at inference.
M is learned to make U = W1 M and V = M^{-1} W2 easy to quantize, by
minimizing a pseudo-loss over the channel-wise maxima

    m_u(i) = max_j |U[i, j]|        (row maxima of U)
    m_v(j) = max_i |V[i, j]|        (column maxima of V)

Pseudo-losses: "logsumexp" (smooth max at temperature t, computed with
max subtraction), "sumsq" (mean of squared maxima) and "sumsq_weighted"
(each side's mean weighted by the partner's Frobenius norm). Optimizers:
unconstrained Adam with an optional orthonormality penalty, or Cayley SGD
constrained to rotations. Progress is scored by the relative paired
quantization error under 4-bit per-channel nearest rounding, and the
best-scoring iterate is returned (initialization M = I makes plain
independent quantization the starting baseline).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .optim import Adam
from .quantize import QuantConfig, dequantize, quantize
from .linalg import frobenius

__all__ = [
    "LOSS_KINDS",
    "PairedOptConfig",
    "PairedTransform",
    "channel_maxima",
    "logsumexp_of_maxima",
    "paired_pseudo_loss",
    "orth_penalty",
    "paired_grad",
    "cayley_step",
    "optimize_paired",
]

LOSS_KINDS = ("logsumexp", "sumsq", "sumsq_weighted")

_SIGMA_WARN_THRESHOLD = 1e3


@dataclass(frozen=True)
class PairedOptConfig:
    loss_kind: str = "logsumexp"
    t: float = 5.0                 # logsumexp temperature
    optimizer: str = "adam"        # adam | cayley
    lr: float = 1e-2
    beta1: float = 0.1             # Adam first-moment decay
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.1          # Cayley SGD momentum
    lam_orth: float = 0.1          # orthonormality penalty weight (Adam only)
    iterations: int = 100_000
    checkpoint_every: int = 1000   # PQE evaluation cadence
    reorth_every: int = 1000       # Cayley QR drift control cadence
    pqe_bits: int = 4              # bit width of the checkpoint quantizer

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.optimizer not in ("adam", "cayley"):
            raise ConfigError(f"optimizer must be 'adam' or 'cayley', got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if self.lam_orth < 0:
            raise ConfigError("lam_orth must be non-negative")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass
class PairedTransform:
    """An invertible d2 x d2 transform with provenance of how it was learned."""

    m: np.ndarray
    m_inv: np.ndarray = field(default=None)  # type: ignore[assignment]
    loss_kind: str = "logsumexp"
    optimizer: str = "adam"
    final_pseudo_loss: float = float("nan")
    final_pqe: float = float("nan")
    min_sigma: float = float("nan")
    max_sigma: float = float("nan")

    def __post_init__(self):
        if self.m_inv is None:
            self.m_inv = _invert(self.m)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    def apply(self, w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(W1 M, M^{-1} W2)."""
        return w1 @ self.m, self.m_inv @ w2


def _invert(m: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"transform is singular: {exc}") from exc


def channel_maxima(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row maxima of U and column maxima of V (absolute values)."""
    m_u = np.abs(u).max(axis=1) if u.size else np.zeros(u.shape[0])
    m_v = np.abs(v).max(axis=0) if v.size else np.zeros(v.shape[1])
    return m_u, m_v


def logsumexp_of_maxima(m_u: np.ndarray, m_v: np.ndarray, t: float) -> float:
    """(1/t) log(sum_i e^{t m_u(i)} + sum_j e^{t m_v(j)}), max-subtracted."""
    m_all = np.concatenate([m_u, m_v])
    if m_all.size == 0:
        raise ConfigError("logsumexp needs at least one channel")
    top = m_all.max()
    return float(top + np.log(np.exp(t * (m_all - top)).sum()) / t)


def _uv(w1: np.ndarray, w2: np.ndarray, m: np.ndarray):
    if w1.shape[1] != m.shape[0] or m.shape[0] != m.shape[1] or m.shape[1] != w2.shape[0]:
        raise ShapeError(
            f"incompatible shapes: w1 {w1.shape}, m {m.shape}, w2 {w2.shape}")
    k = _invert(m)
    return w1 @ m, k @ w2, k


def paired_pseudo_loss(w1: np.ndarray, w2: np.ndarray, m: np.ndarray,
                       kind: str = "logsumexp", t: float = 5.0) -> float:
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown pseudo-loss {kind!r}")
    u, v, _ = _uv(w1, w2, m)
    m_u, m_v = channel_maxima(u, v)
    if kind == "logsumexp":
        return logsumexp_of_maxima(m_u, m_v, t)
    su = (m_u ** 2).sum() / max(len(m_u), 1)
    sv = (m_v ** 2).sum() / max(len(m_v), 1)
    if kind == "sumsq":
        return float(su + sv)
    return float(frobenius(v) * su + frobenius(u) * sv)


def orth_penalty(m: np.ndarray) -> float:
    """||M M^T - I||_F / sqrt(d)."""
    if m.shape[0] != m.shape[1]:
        raise ShapeError(f"orth_penalty needs a square matrix, got {m.shape}")
    d = m.shape[0]
    return frobenius(m @ m.T - np.eye(d)) / np.sqrt(d)


def _orth_penalty_grad(m: np.ndarray) -> np.ndarray:
    d = m.shape[0]
    e = m @ m.T - np.eye(d)
    norm = np.linalg.norm(e)
    if norm < 1e-30:  # at the minimum the subgradient is zero
        return np.zeros_like(m)
    return 2.0 * (e @ m) / (np.sqrt(d) * norm)


def paired_grad(w1: np.ndarray, w2: np.ndarray, m: np.ndarray,
                kind: str = "logsumexp", lam_orth: float = 0.0,
                t: float = 5.0) -> np.ndarray:
    """Analytic gradient of pseudo-loss + lam_orth * orth_penalty w.r.t. M.

    Channel maxima differentiate through their (first) argmax entry; the
    M^{-1} dependence of V uses d(M^{-1}) = -M^{-1} dM M^{-1}.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown pseudo-loss {kind!r}")
    u, v, k = _uv(w1, w2, m)
    d1 = u.shape[0]
    d3 = v.shape[1]
    iu = np.abs(u).argmax(axis=1) if u.size else np.zeros(d1, dtype=int)
    mu_signed = u[np.arange(d1), iu] if u.size else np.zeros(d1)
    jv = np.abs(v).argmax(axis=0) if v.size else np.zeros(d3, dtype=int)
    mv_signed = v[jv, np.arange(d3)] if v.size else np.zeros(d3)
    m_u = np.abs(mu_signed)
    m_v = np.abs(mv_signed)

    if kind == "logsumexp":
        m_all = np.concatenate([m_u, m_v])
        z = t * (m_all - m_all.max())
        p = np.exp(z)
        p /= p.sum()
        gu, gv = p[:d1], p[d1:]
    elif kind == "sumsq":
        gu = 2.0 * m_u / max(d1, 1)
        gv = 2.0 * m_v / max(d3, 1)
    else:
        nu, nv = frobenius(u), frobenius(v)
        gu = nv * 2.0 * m_u / max(d1, 1)
        gv = nu * 2.0 * m_v / max(d3, 1)

    su = np.zeros_like(u)
    if u.size:
        su[np.arange(d1), iu] = gu * np.sign(mu_signed)
    sv = np.zeros_like(v)
    if v.size:
        sv[jv, np.arange(d3)] = gv * np.sign(mv_signed)
    grad = w1.T @ su - k.T @ (sv @ v.T)

    if kind == "sumsq_weighted":
        # The Frobenius weights also depend on M.
        nu, nv = frobenius(u), frobenius(v)
        su_mean = (m_u ** 2).sum() / max(d1, 1)
        sv_mean = (m_v ** 2).sum() / max(d3, 1)
        if nv > 0:
            grad += su_mean * (-(k.T @ (v @ v.T)) / nv)
        if nu > 0:
            grad += sv_mean * (w1.T @ u) / nu
    if lam_orth > 0:
        grad += lam_orth * _orth_penalty_grad(m)
    return grad


def cayley_step(m: np.ndarray, grad: np.ndarray, lr: float,
                momentum_state: np.ndarray | None = None,
                beta: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """One Cayley-retraction step on the rotation manifold.

    The Riemannian direction A = G M^T - M G^T (skew-symmetric) is blended
    with momentum, then M <- (I + lr/2 A)^{-1} (I - lr/2 A) M, which keeps
    M orthogonal up to roundoff. A singular solve rejects the step and
    retries with the rate halved.
    """
    d = m.shape[0]
    a = grad @ m.T - m @ grad.T
    if momentum_state is not None:
        a = beta * momentum_state + a
    eye = np.eye(d)
    step = lr
    for _ in range(60):
        try:
            new_m = np.linalg.solve(eye + (step / 2.0) * a, (eye - (step / 2.0) * a) @ m)
            return new_m, a
        except np.linalg.LinAlgError:
            step /= 2.0
    raise NumericalError("Cayley step could not be made non-singular")


def _sigma_range(m: np.ndarray) -> tuple[float, float]:
    s = np.linalg.svd(m, compute_uv=False)
    return float(s[-1]), float(s[0])


def _checkpoint_pqe(w1, w2, m, prod, prod_norm, bits):
    qcfg = QuantConfig(bits=bits, granularity="per_channel", axis="rows")
    try:
        u, v, _ = _uv(w1, w2, m)
        du = dequantize(quantize(u, qcfg))
        dv = dequantize(quantize(v, qcfg))
    except NumericalError:
        return None  # singular iterate: skip this checkpoint
    return frobenius(du @ dv - prod) / prod_norm


def optimize_paired(w1: np.ndarray, w2: np.ndarray, cfg: PairedOptConfig,
                    seed: int = 0) -> tuple[PairedTransform, list[tuple]]:
    """Learn M for the pair, returning the lowest-PQE checkpoint.

    M starts at the identity, so the first checkpoint is exactly plain
    independent quantization and the returned transform can only match or
    improve it. Trace rows: (iteration, pseudo_loss, relative_pqe,
    orth_penalty, min_sigma, max_sigma); relative_pqe is NaN at skipped
    (singular) checkpoints. The seed is unused by the optimizers (the
    procedure is deterministic) but kept for interface uniformity.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    d2 = w1.shape[1]
    if w2.shape[0] != d2:
        raise ShapeError(f"cannot couple {w1.shape} with {w2.shape}")
    prod = w1 @ w2
    prod_norm = frobenius(prod)
    if prod_norm == 0.0:
        raise ValueError("cannot optimize a pair with a zero product")

    m = np.eye(d2)
    adam = Adam(m.shape, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    momentum = np.zeros_like(m) if cfg.optimizer == "cayley" else None

    trace: list[tuple] = []
    best_pqe = np.inf
    best_m = m.copy()

    def record(it, m_now):
        nonlocal best_pqe, best_m
        loss = paired_pseudo_loss(w1, w2, m_now, cfg.loss_kind, cfg.t)
        rel = _checkpoint_pqe(w1, w2, m_now, prod, prod_norm, cfg.pqe_bits)
        lo, hi = _sigma_range(m_now)
        trace.append((it, loss, np.nan if rel is None else rel, orth_penalty(m_now), lo, hi))
        if rel is not None and rel < best_pqe:
            best_pqe = rel
            best_m = m_now.copy()

    record(0, m)
    for it in range(1, cfg.iterations + 1):
        lam = cfg.lam_orth if cfg.optimizer == "adam" else 0.0
        grad = paired_grad(w1, w2, m, cfg.loss_kind, lam, cfg.t)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"pseudo-loss gradient diverged at iteration {it}",
                                 iteration=it, trace=trace)
        if cfg.optimizer == "adam":
            m = m - adam.step(grad)
        else:
            m, momentum = cayley_step(m, grad, cfg.lr, momentum, cfg.momentum)
            if it % cfg.reorth_every == 0:
                q, r = np.linalg.qr(m)
                m = q * np.sign(np.diag(r))
        if not np.all(np.isfinite(m)):
            raise NumericalError(f"transform diverged at iteration {it}",
                                 iteration=it, trace=trace)
        if it % cfg.checkpoint_every == 0 or it == cfg.iterations:
            record(it, m)

    lo, hi = _sigma_range(best_m)
    if hi > _SIGMA_WARN_THRESHOLD:
        warnings.warn(
            f"learned transform has extreme singular values (max sigma = {hi:.3g}); "
            "reconstruction at low precision may be inaccurate",
            RuntimeWarning, stacklevel=2)
    transform = PairedTransform(
        m=best_m,
        loss_kind=cfg.loss_kind,
        optimizer=cfg.optimizer,
        final_pseudo_loss=paired_pseudo_loss(w1, w2, best_m, cfg.loss_kind, cfg.t),
        final_pqe=float(best_pqe),
        min_sigma=lo,
        max_sigma=hi,
    )
    return transform, trace


def paired_trace_csv(trace: list[tuple]) -> str:
    lines = ["iteration,pseudo_loss,relative_pqe,orth_penalty,min_sigma,max_sigma"]
    lines += [f"{it},{pl:.10g},{pq:.10g},{op:.10g},{lo:.10g},{hi:.10g}"
              for it, pl, pq, op, lo, hi in trace]
    return "\n".join(lines) + "\n"
