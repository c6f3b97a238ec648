"""Entropic-regularized transport: Gibbs kernel and Sinkhorn-Knopp scaling.

The scaling loop runs entirely in the log domain (log-sum-exp reductions),
since materializing exp(-eta * C) underflows once eta * max(C) passes ~700.
Row and column reductions are chunked with a fixed block size, so results are
bit-deterministic for a fixed input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measures import (
    CostMatrix,
    Coupling,
    SimplexWeights,
    entropy,
)

__all__ = [
    "SinkhornConfig",
    "SinkhornState",
    "SinkhornResult",
    "GibbsKernel",
    "gibbs_kernel",
    "sinkhorn_knopp",
    "sinkhorn_distance",
    "default_eta",
]

MAX_ITERS_CAP = 1_000_000
_KERNEL_FLOOR = 1e-300  # positivity floor when materializing the kernel
_CHUNK = 512


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs: regularization eta, marginal tolerance, iteration cap.

    ``max_iters=None`` resolves to 10 * ceil(1 / epsilon), capped at 1e6.
    """

    eta: float
    epsilon: float = 1e-6
    max_iters: int | None = None

    def __post_init__(self):
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError(f"max_iters must be positive, got {self.max_iters!r}")

    def resolved_max_iters(self) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        return int(min(10 * np.ceil(1.0 / self.epsilon), MAX_ITERS_CAP))


@dataclass(frozen=True)
class SinkhornState:
    """Accumulated log-domain scalings: the plan is diag(e^x) A0 diag(e^y)."""

    x: np.ndarray
    y: np.ndarray
    iteration: int


@dataclass(frozen=True)
class SinkhornResult:
    coupling: Coupling
    state: SinkhornState
    distance_value: float          # <P, C>
    regularized_objective: float   # <P, C> - (1/eta) H(P)
    converged: bool
    marginal_error: float


@dataclass(frozen=True)
class GibbsKernel:
    """The kernel e^(-eta * C), held as log-values -eta * C."""

    log_k: np.ndarray
    eta: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_k.shape

    def materialize(self) -> np.ndarray:
        """Entrywise exponential, floored at a tiny positive value."""
        return np.maximum(np.exp(self.log_k), _KERNEL_FLOOR)


def gibbs_kernel(cost, eta: float) -> GibbsKernel:
    if not (np.isfinite(eta) and eta > 0):
        raise ValueError(f"eta must be positive, got {eta!r}")
    c = cost.c if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    return GibbsKernel(-eta * c, float(eta))


def default_eta(cost) -> float:
    """CLI default regularization: 10 / median(C), so eta*C has O(10) scale."""
    c = cost.c if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    med = float(np.median(c))
    if med > 0:
        return 10.0 / med
    positive = c[c > 0]
    if positive.size:
        return 10.0 / float(np.mean(positive))
    return 1.0


def _lse_rows(logk: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log(sum_j exp(logk[i, j] + y[j])) per row, chunked for bounded temporaries."""
    n = logk.shape[0]
    out = np.empty(n)
    for lo in range(0, n, _CHUNK):
        block = logk[lo : lo + _CHUNK] + y[None, :]
        mx = block.max(axis=1)
        safe = np.where(np.isfinite(mx), mx, 0.0)
        out[lo : lo + _CHUNK] = safe + np.log(np.exp(block - safe[:, None]).sum(axis=1))
    return out


def _lse_cols(logk: np.ndarray, x: np.ndarray) -> np.ndarray:
    m = logk.shape[1]
    out = np.empty(m)
    for lo in range(0, m, _CHUNK):
        block = logk[:, lo : lo + _CHUNK] + x[:, None]
        mx = block.max(axis=0)
        safe = np.where(np.isfinite(mx), mx, 0.0)
        out[lo : lo + _CHUNK] = safe + np.log(np.exp(block - safe[None, :]).sum(axis=0))
    return out


def _log_weights(w: np.ndarray) -> np.ndarray:
    out = np.full(w.shape, -np.inf)
    np.log(w, out=out, where=w > 0)
    return out


def sinkhorn_knopp(
    cost,
    p,
    q,
    cfg: SinkhornConfig,
    initial_x=None,
    initial_y=None,
) -> SinkhornResult:
    """Alternating row/column rescaling of the Gibbs kernel toward M(p, q).

    Follows the classic scheme literally: the kernel is first normalized by
    its total mass, scalings start at zero (unless warm-started), odd
    iterations fix the rows, even iterations fix the columns, and the loop
    exits once the L1 marginal residual drops to ``cfg.epsilon``.  The 0/0 = 1
    convention freezes zero-weight rows and columns at zero plan mass.
    Non-convergence within ``max_iters`` is reported, not raised.

    The returned plan gets one final exact row rescale, so its row marginals
    hold to machine precision while the diagonal-scaling structure survives.
    """
    if not isinstance(p, SimplexWeights):
        p = SimplexWeights(np.asarray(p, dtype=float))
    if not isinstance(q, SimplexWeights):
        q = SimplexWeights(np.asarray(q, dtype=float))
    if isinstance(cost, GibbsKernel):
        kernel = cost
        c = -kernel.log_k / kernel.eta
    elif isinstance(cost, CostMatrix):
        kernel = gibbs_kernel(cost, cfg.eta)
        c = cost.c
    else:
        c = np.asarray(cost, dtype=float)
        kernel = gibbs_kernel(c, cfg.eta)
    n, m = kernel.shape
    if (n, m) != (len(p), len(q)):
        raise ValueError(
            f"kernel shape {kernel.shape} does not match weights ({len(p)}, {len(q)})"
        )

    # normalized kernel A0 = A / ||A||_1, in log form
    log_norm = _lse_rows(kernel.log_k, np.zeros(m))
    total = float(np.max(log_norm) + np.log(np.exp(log_norm - np.max(log_norm)).sum()))
    log_a0 = kernel.log_k - total

    pv, qv = p.w, q.w
    log_p = _log_weights(pv)
    log_q = _log_weights(qv)
    x = np.zeros(n) if initial_x is None else np.asarray(initial_x, dtype=float).copy()
    y = np.zeros(m) if initial_y is None else np.asarray(initial_y, dtype=float).copy()

    def row_residual(row_lse):
        return float(np.abs(np.exp(x + row_lse) - pv).sum())

    def col_residual(col_lse):
        return float(np.abs(np.exp(y + col_lse) - qv).sum())

    row_lse = _lse_rows(log_a0, y)   # log sum_j A0 e^y, per row (excludes x)
    col_lse = _lse_cols(log_a0, x)
    violation = row_residual(row_lse) + col_residual(col_lse)

    max_iters = cfg.resolved_max_iters()
    iteration = 0
    while violation > cfg.epsilon and iteration < max_iters:
        iteration += 1
        if iteration % 2 == 1:
            # row pass: rows now sum to p exactly, track the column residual
            x = log_p - row_lse
            col_lse = _lse_cols(log_a0, x)
            violation = col_residual(col_lse)
        else:
            y = log_q - col_lse
            row_lse = _lse_rows(log_a0, y)
            violation = row_residual(row_lse)

    plan = np.exp(x[:, None] + y[None, :] + log_a0)
    row_sums = plan.sum(axis=1)
    scale = np.divide(pv, row_sums, out=np.zeros(n), where=row_sums > 0)
    plan *= scale[:, None]

    final_violation = float(
        np.abs(plan.sum(axis=1) - pv).sum() + np.abs(plan.sum(axis=0) - qv).sum()
    )
    converged = final_violation <= cfg.epsilon

    distance_value = float(np.sum(plan * c))
    regularized = distance_value - entropy(plan) / kernel.eta

    coupling = Coupling(plan, p, q, distance_value)
    state = SinkhornState(x, y, iteration)
    return SinkhornResult(
        coupling=coupling,
        state=state,
        distance_value=distance_value,
        regularized_objective=regularized,
        converged=converged,
        marginal_error=final_violation,
    )


def sinkhorn_distance(result: SinkhornResult) -> float:
    """The regularized objective <P, C> - (1/eta) H(P) of a solver result.

    The plain transport cost <P, C> is available as ``result.distance_value``.
    """
    return result.regularized_objective
