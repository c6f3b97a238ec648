"""Low-rank column-sampled approximation of the Gibbs kernel, and a Sinkhorn
loop that runs entirely through the rank-s factors.

The kernel never exists as an n x n array: the factorization keeps the s
sampled columns (the sketch R) and the pseudo-inverse of the s x s selected
block, so every matrix-vector product costs O(n s) time and memory.  For a
transport problem between two clouds the factorization is built on their
union, and the cross block of the reconstruction drives the scaling loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .measures import Coupling, SimplexWeights
from .sinkhorn import SinkhornConfig, SinkhornState

__all__ = [
    "ColumnSelection",
    "NystromFactors",
    "FactoredPlan",
    "NysSinkResult",
    "select_columns",
    "gibbs_kernel_columns",
    "nystrom_factors",
    "nystrom_apply",
    "nys_sink",
]

DEFAULT_RANK_TOLERANCE = 1e-10
_POSITIVITY_FLOOR = 1e-300
_RELATIVE_FLOOR = 1e-30
MATERIALIZE_ENTRY_LIMIT = 4_000_000


@dataclass(frozen=True)
class ColumnSelection:
    """Distinct column indices sampled for the sketch, reproducible per seed."""

    indices: np.ndarray
    seed: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("need at least one selected column")
        if idx.min() < 0:
            raise ValueError("column indices must be nonnegative")
        if np.unique(idx).size != idx.size:
            raise ValueError("column indices must be distinct")
        idx = np.ascontiguousarray(idx)
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.size


def select_columns(n: int, s: int, seed: int) -> ColumnSelection:
    """Uniform sample of s distinct indices from range(n).

    Implemented as the s-prefix of a seeded random permutation, so selections
    with the same seed are nested across increasing s.
    """
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= n, got s={s}, n={n}")
    rng = np.random.default_rng(seed)
    return ColumnSelection(rng.permutation(n)[:s], seed)


def gibbs_kernel_columns(points: np.ndarray, eta: float):
    """Column oracle for the kernel exp(-eta ||z_i - z_j||^2) on one point set."""
    points = np.asarray(points, dtype=float)
    if not (np.isfinite(eta) and eta > 0):
        raise ValueError(f"eta must be positive, got {eta!r}")

    def columns(indices) -> np.ndarray:
        sel = np.asarray(indices, dtype=np.int64)
        return np.exp(-eta * cdist(points, points[sel], "sqeuclidean"))

    return columns


@dataclass(frozen=True)
class NystromFactors:
    """Sketch columns R (n, s) and the pseudo-inverse core (s, s).

    The implied approximation is K ~= R @ core @ R.T, symmetric with
    rank at most s.
    """

    r: np.ndarray
    core: np.ndarray
    rank_tolerance: float

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def rank(self) -> int:
        return self.r.shape[1]

    def dense(self) -> np.ndarray:
        """Materialize the full approximation; small problems only."""
        if self.n * self.n > MATERIALIZE_ENTRY_LIMIT:
            raise ValueError(f"refusing to materialize {self.n}x{self.n} kernel")
        return self.r @ self.core @ self.r.T


def nystrom_factors(
    kernel_columns,
    sel: ColumnSelection,
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE,
) -> NystromFactors:
    """Build the rank-s factorization from on-demand kernel columns.

    The core is the Moore-Penrose pseudo-inverse of the selected s x s block,
    with eigenvalues below ``rank_tolerance`` times the largest zeroed out
    (sampled Gibbs blocks are routinely numerically rank-deficient).
    """
    idx = sel.indices
    r = np.asarray(kernel_columns(idx), dtype=float)
    if r.ndim != 2 or r.shape[1] != idx.size:
        raise ValueError(f"column oracle returned shape {r.shape} for {idx.size} columns")
    if idx.max() >= r.shape[0]:
        raise ValueError("selection indices exceed kernel size")
    if not np.all(np.isfinite(r)):
        raise ValueError("kernel columns must be finite")
    block = r[idx, :]
    block = 0.5 * (block + block.T)
    eigvals, eigvecs = np.linalg.eigh(block)
    lam_max = float(eigvals.max(initial=0.0))
    if lam_max <= 0.0:
        raise ValueError("selected kernel block is all zero (or not positive)")
    keep = eigvals > rank_tolerance * lam_max
    vecs = eigvecs[:, keep]
    core = (vecs / eigvals[keep]) @ vecs.T
    core = 0.5 * (core + core.T)
    return NystromFactors(r=r, core=core, rank_tolerance=float(rank_tolerance))


def nystrom_apply(factors: NystromFactors, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with the implied approximation, never formed."""
    v = np.asarray(v, dtype=float)
    if (v.ndim == 1 and v.size != factors.n) or (v.ndim == 2 and v.shape[0] != factors.n):
        raise ValueError(f"vector shape {v.shape} does not match kernel size {factors.n}")
    return factors.r @ (factors.core @ (factors.r.T @ v))


# --------------------------------------------------------------------------
# Factored Sinkhorn
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FactoredPlan:
    """Transport plan D1 @ A_tilde @ D2 held in factored form.

    ``row_factors @ core @ col_factors.T`` is the cross block of the union
    kernel approximation; x and y are the accumulated log scalings, and
    ``log_norm`` the log of the kernel's total mass.
    """

    row_factors: np.ndarray
    col_factors: np.ndarray
    core: np.ndarray
    x: np.ndarray
    y: np.ndarray
    log_norm: float

    @property
    def shape(self) -> tuple[int, int]:
        return (self.row_factors.shape[0], self.col_factors.shape[0])

    @staticmethod
    def _shifted_exp(v_log: np.ndarray) -> tuple[np.ndarray, float]:
        shift = float(v_log.max(initial=-np.inf))
        if not np.isfinite(shift):
            shift = 0.0
        return np.exp(v_log - shift), shift

    def apply_right(self, v: np.ndarray) -> np.ndarray:
        """P @ v without materializing P; v may be a vector or an (m, k) matrix."""
        v = np.asarray(v, dtype=float)
        ex, xs = self._shifted_exp(self.x)
        ey, ys = self._shifted_exp(self.y)
        w = ey[:, None] * v if v.ndim == 2 else ey * v
        out = self.row_factors @ (self.core @ (self.col_factors.T @ w))
        out = ex[:, None] * out if v.ndim == 2 else ex * out
        return out * np.exp(xs + ys - self.log_norm)

    def apply_left(self, v: np.ndarray) -> np.ndarray:
        """P.T @ v without materializing P; v may be a vector or an (n, k) matrix."""
        v = np.asarray(v, dtype=float)
        ex, xs = self._shifted_exp(self.x)
        ey, ys = self._shifted_exp(self.y)
        w = ex[:, None] * v if v.ndim == 2 else ex * v
        out = self.col_factors @ (self.core @ (self.row_factors.T @ w))
        out = ey[:, None] * out if v.ndim == 2 else ey * out
        return out * np.exp(xs + ys - self.log_norm)

    def row_sums(self) -> np.ndarray:
        return self.apply_right(np.ones(self.shape[1]))

    def col_sums(self) -> np.ndarray:
        return self.apply_left(np.ones(self.shape[0]))

    def materialize(self) -> np.ndarray:
        n, m = self.shape
        if n * m > MATERIALIZE_ENTRY_LIMIT:
            raise ValueError(f"refusing to materialize {n}x{m} plan")
        ex, xs = self._shifted_exp(self.x)
        ey, ys = self._shifted_exp(self.y)
        block = self.row_factors @ self.core @ self.col_factors.T
        plan = ex[:, None] * block * ey[None, :]
        plan *= np.exp(xs + ys - self.log_norm)
        return np.maximum(plan, 0.0)

    def transport_cost(self, source: np.ndarray, target: np.ndarray) -> float:
        """<P, C> for squared-Euclidean costs, via the low-rank cost structure."""
        rs = self.row_sums()
        cs = self.col_sums()
        sq_src = np.einsum("ij,ij->i", source, source)
        sq_tgt = np.einsum("ij,ij->i", target, target)
        cross = self.apply_right(target)  # (n, p): rows are P @ Y coordinates
        inner = float(np.einsum("ij,ij->", source, cross))
        return float(rs @ sq_src + cs @ sq_tgt - 2.0 * inner)


@dataclass(frozen=True)
class NysSinkResult:
    """Sinkhorn result computed through the rank-s factors.

    ``coupling`` is populated when the dense plan fits the materialization
    budget; ``plan`` is always available in factored form.
    """

    plan: FactoredPlan
    state: SinkhornState
    distance_value: float
    regularized_objective: float
    converged: bool
    marginal_error: float
    clamp_count: int
    coupling: Coupling | None


def _log_apply(factors_left, core, factors_right, v_log, counter):
    """log(A~ @ exp(v_log)) via the factors, with a positivity floor.

    Max-shifts the exponentials so the product stays in range.  Entries driven
    nonpositive (or negligibly small) by the approximation error are floored
    at 1e-30 of the largest entry and counted; a relative floor keeps the
    subsequent scalings bounded, where an absolute one lets them blow up.
    """
    shift = v_log.max(initial=-np.inf)
    if not np.isfinite(shift):
        shift = 0.0
    t = np.exp(v_log - shift)
    out = factors_left @ (core @ (factors_right.T @ t))
    mx = float(out.max(initial=0.0))
    floor = mx * _RELATIVE_FLOOR if mx > 0 else _POSITIVITY_FLOOR
    bad = int(np.count_nonzero(out < floor))
    if bad:
        counter[0] += bad
        out = np.maximum(out, floor)
    return np.log(out) + shift


def nys_sink(
    source_points,
    target_points,
    p,
    q,
    cfg: SinkhornConfig,
    rank: int,
    seed: int,
) -> NysSinkResult:
    """Sinkhorn scaling against a rank-s approximation of the Gibbs kernel.

    The factorization is built once on the union of the two point clouds
    (cost O(N s^2 + N s p) with N = n + m), after which each scaling sweep
    costs O(N s).  Peak auxiliary memory stays O(N s); nothing quadratic in N
    is ever allocated unless the caller materializes the plan.
    """
    source = np.asarray(source_points, dtype=float)
    target = np.asarray(target_points, dtype=float)
    if source.ndim != 2 or target.ndim != 2 or source.shape[1] != target.shape[1]:
        raise ValueError("point clouds must be (n, p) and (m, p)")
    if not isinstance(p, SimplexWeights):
        p = SimplexWeights(np.asarray(p, dtype=float))
    if not isinstance(q, SimplexWeights):
        q = SimplexWeights(np.asarray(q, dtype=float))
    n, m = source.shape[0], target.shape[0]
    if n != len(p) or m != len(q):
        raise ValueError("weights do not match point counts")
    total_points = n + m
    if not 1 <= rank <= total_points:
        raise ValueError(f"need 1 <= rank <= {total_points}, got {rank}")

    union = np.vstack([source, target])
    sel = select_columns(total_points, rank, seed)
    factors = nystrom_factors(gibbs_kernel_columns(union, cfg.eta), sel)
    rx = factors.r[:n]
    ry = factors.r[n:]
    core = factors.core

    clamp = [0]
    pv, qv = p.w, q.w
    log_p = np.full(n, -np.inf)
    np.log(pv, out=log_p, where=pv > 0)
    log_q = np.full(m, -np.inf)
    np.log(qv, out=log_q, where=qv > 0)

    # ||A~||_1 over the cross block, for the initial normalization
    row_mass = _log_apply(rx, core, ry, np.zeros(m), clamp)
    shift = row_mass.max()
    log_norm = float(shift + np.log(np.exp(row_mass - shift).sum()))

    x = np.zeros(n)
    y = np.zeros(m)

    row_lse = _log_apply(rx, core, ry, y, clamp) - log_norm
    col_lse = _log_apply(ry, core.T, rx, x, clamp) - log_norm

    def row_residual():
        return float(np.abs(np.exp(x + row_lse) - pv).sum())

    def col_residual():
        return float(np.abs(np.exp(y + col_lse) - qv).sum())

    violation = row_residual() + col_residual()
    max_iters = cfg.resolved_max_iters()
    iteration = 0
    while violation > cfg.epsilon and iteration < max_iters:
        if not np.isfinite(violation):
            break  # approximation too coarse for the scaling to be meaningful
        iteration += 1
        if iteration % 2 == 1:
            x = log_p - row_lse
            col_lse = _log_apply(ry, core.T, rx, x, clamp) - log_norm
            violation = col_residual()
        else:
            y = log_q - col_lse
            row_lse = _log_apply(rx, core, ry, y, clamp) - log_norm
            violation = row_residual()

    # final exact row rescale, matching the dense solver's contract
    # (row_lse depends only on y, so it is current whichever pass ran last)
    x = np.where(pv > 0, log_p - row_lse, -np.inf)

    plan = FactoredPlan(
        row_factors=rx,
        col_factors=ry,
        core=core,
        x=x,
        y=y,
        log_norm=log_norm,
    )
    final_violation = float(
        np.abs(plan.row_sums() - pv).sum() + np.abs(plan.col_sums() - qv).sum()
    )
    converged = final_violation <= cfg.epsilon

    distance_value = plan.transport_cost(source, target)

    coupling = None
    if n * m <= MATERIALIZE_ENTRY_LIMIT:
        dense = plan.materialize()
        coupling = Coupling(dense, p, q, distance_value)
        positive = dense[dense > 0]
        entropy_value = float(-np.sum(positive * np.log(positive)))
    else:
        # entropy surrogate: treats the factored kernel as exp(-eta C), exact
        # in the full-rank limit
        rs = plan.row_sums()
        cs = plan.col_sums()
        mass = float(rs.sum())
        finite_x = np.where(np.isfinite(x), x, 0.0)
        finite_y = np.where(np.isfinite(y), y, 0.0)
        entropy_value = float(
            cfg.eta * distance_value
            - rs @ finite_x
            - cs @ finite_y
            + mass * log_norm
        )
    regularized = distance_value - entropy_value / cfg.eta

    state = SinkhornState(x, y, iteration)
    return NysSinkResult(
        plan=plan,
        state=state,
        distance_value=distance_value,
        regularized_objective=regularized,
        converged=converged,
        marginal_error=final_violation,
        clamp_count=clamp[0],
        coupling=coupling,
    )
