"""Projection-based Monge-map estimation.

One-dimensional transport reduces to sorting (quantile coupling), so a
p-dimensional map can be assembled from a stream of one-dimensional matches:
randomly drawn directions, batches of directions averaged per step (sliced),
or data-driven directions from a two-slice average-variance contrast (the
projection-pursuit variant).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, qmc

from .measures import SimplexWeights, TransportMapEstimate, _weights_vector

__all__ = [
    "Direction",
    "IterationTrace",
    "SaveResult",
    "Otm1dResult",
    "ProjectionConfig",
    "otm_1d",
    "random_direction",
    "seeded_directions",
    "low_discrepancy_directions",
    "sliced_wasserstein",
    "random_projection_otm",
    "sliced_otm",
    "save_direction",
    "ppmm",
]

_SOBOL_SCRAMBLE_SEED = 922337


@dataclass(frozen=True)
class Direction:
    """A unit vector in R^p."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("direction must be a nonempty vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("direction must be finite")
        norm_v = float(np.linalg.norm(v))
        if norm_v == 0.0:
            raise ValueError("direction must be nonzero")
        v = v / norm_v
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.v.size


@dataclass(frozen=True)
class IterationTrace:
    """Per-iteration audit record of a projected-descent run.

    ``directions`` has shape (K, L, p): L = 1 for the single-direction
    methods.  ``costs`` holds the mean one-dimensional transport cost of the
    step, ``update_norms`` the Frobenius norm of the applied update, and
    ``residuals`` the diagnostic sliced distance after the step.
    """

    directions: np.ndarray
    costs: np.ndarray
    update_norms: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    stop_reason: str


@dataclass(frozen=True)
class SaveResult:
    """Average-variance contrast kernel and its leading direction.

    ``m`` lives in the whitened scale, where ``whitened_direction`` is its
    top eigenvector; ``top_direction`` is that eigenvector mapped back to the
    data scale (and is what the projection loop projects along).
    """

    m: np.ndarray
    top_direction: Direction
    top_eigenvalue: float
    whitened_direction: Direction


@dataclass(frozen=True)
class Otm1dResult:
    """One-dimensional transport: barycentric map, cost, and sparse plan."""

    transport_map: TransportMapEstimate
    cost: float
    plan_source: np.ndarray
    plan_target: np.ndarray
    plan_mass: np.ndarray
    n_targets: int

    def plan_dense(self) -> np.ndarray:
        n = self.transport_map.source.shape[0]
        plan = np.zeros((n, self.n_targets))
        np.add.at(plan, (self.plan_source, self.plan_target), self.plan_mass)
        return plan


@dataclass(frozen=True)
class ProjectionConfig:
    """Stopping rule and seeding for the projected-descent estimators.

    The loop halts once the diagnostic sliced distance (over
    ``diagnostic_slices`` fixed directions) drops below ``tol_abs_factor``
    times the data spread, or once its running best improves by less than
    ``tol_rel`` over ``patience`` iterations.  ``max_iters=None`` resolves to
    500 * p.
    """

    seed: int = 0
    max_iters: int | None = None
    tol_abs_factor: float = 1e-6
    tol_rel: float = 1e-4
    patience: int = 10
    diagnostic_slices: int = 50

    def resolved_max_iters(self, p: int) -> int:
        if self.max_iters is not None:
            return int(self.max_iters)
        return 500 * p


# --------------------------------------------------------------------------
# One-dimensional transport
# --------------------------------------------------------------------------

def _quantile_coupling(xv, wx, yv, wy):
    """Monotone coupling of two weighted 1-d atom lists.

    Returns (source_idx, target_idx, mass) triples in quantile order plus the
    squared-displacement cost.  Ties in value keep original index order.
    """
    ox = np.argsort(xv, kind="stable")
    oy = np.argsort(yv, kind="stable")
    i = j = 0
    n, m = xv.size, yv.size
    rem_x = wx[ox[0]]
    rem_y = wy[oy[0]]
    src, tgt, mass = [], [], []
    cost = 0.0
    while i < n and j < m:
        t = min(rem_x, rem_y)
        if t > 0.0:
            a, b = ox[i], oy[j]
            src.append(a)
            tgt.append(b)
            mass.append(t)
            cost += t * (xv[a] - yv[b]) ** 2
        rem_x -= t
        rem_y -= t
        if rem_x == 0.0:
            i += 1
            rem_x = wx[ox[i]] if i < n else 0.0
        if rem_y == 0.0:
            j += 1
            rem_y = wy[oy[j]] if j < m else 0.0
    return (
        np.asarray(src, dtype=np.int64),
        np.asarray(tgt, dtype=np.int64),
        np.asarray(mass, dtype=float),
        cost,
    )


def otm_1d(x, y, x_weights=None, y_weights=None) -> Otm1dResult:
    """One-dimensional optimal transport by sorting.

    With equal sizes and uniform weights this pairs order statistics; in
    general it runs the quantile (northwest-corner) coupling over the sorted
    atoms and returns the plan-induced barycentric image of each source atom.
    The cost is the squared 2-Wasserstein distance of the coupling.
    """
    xv = np.asarray(x, dtype=float).reshape(-1)
    yv = np.asarray(y, dtype=float).reshape(-1)
    if xv.size == 0 or yv.size == 0:
        raise ValueError("empty input")
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise ValueError("values must be finite")
    wx = (
        np.full(xv.size, 1.0 / xv.size)
        if x_weights is None
        else _weights_vector(SimplexWeights(np.asarray(x_weights, dtype=float)))
    )
    wy = (
        np.full(yv.size, 1.0 / yv.size)
        if y_weights is None
        else _weights_vector(SimplexWeights(np.asarray(y_weights, dtype=float)))
    )
    src, tgt, mass, cost = _quantile_coupling(xv, wx, yv, wy)

    image_num = np.zeros(xv.size)
    np.add.at(image_num, src, mass * yv[tgt])
    image = np.where(wx > 0, image_num / np.where(wx > 0, wx, 1.0), xv)
    tmap = TransportMapEstimate(xv[:, None], image[:, None])
    return Otm1dResult(tmap, float(cost), src, tgt, mass, yv.size)


def _matched_displacement(xs: np.ndarray, ys: np.ndarray):
    """Displacement field of the sorting match between equal uniform samples."""
    ox = np.argsort(xs, kind="stable")
    oy = np.argsort(ys, kind="stable")
    diff = ys[oy] - xs[ox]
    d = np.empty_like(xs)
    d[ox] = diff
    return d, float(np.mean(diff**2))


# --------------------------------------------------------------------------
# Projection directions
# --------------------------------------------------------------------------

def random_direction(p: int, rng: np.random.Generator) -> Direction:
    """Uniform direction on the unit sphere (normalized standard Gaussian)."""
    if p < 1:
        raise ValueError(f"dimension must be >= 1, got {p}")
    g = rng.standard_normal(p)
    while np.linalg.norm(g) == 0.0:  # pragma: no cover
        g = rng.standard_normal(p)
    return Direction(g)


def seeded_directions(p: int, count: int, seed: int) -> np.ndarray:
    """(count, p) array of unit directions from a dedicated seeded stream."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, p))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return g / norms


def low_discrepancy_directions(p: int, count: int) -> list[Direction]:
    """Deterministic well-spread directions from a base-2 digital net.

    A scrambled Sobol point set on [0, 1)^p (fixed internal seed) is pushed
    through the Gaussian inverse CDF per coordinate and normalized, which
    spreads the directions evenly over the sphere.  Prefixes are extensible:
    the first k of count > k directions match a count = k call.
    """
    if p < 1:
        raise ValueError(f"dimension must be >= 1, got {p}")
    if count < 1:
        return []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        engine = qmc.Sobol(d=p, scramble=True, seed=_SOBOL_SCRAMBLE_SEED)
        u = engine.random(count)
    u = np.clip(u, 2.0**-53, 1.0 - 2.0**-53)
    g = norm.ppf(u)
    norms = np.linalg.norm(g, axis=1)
    for i in np.flatnonzero(norms < 1e-12):  # pragma: no cover
        g[i, 0] = 1.0
        norms[i] = np.linalg.norm(g[i])
    return [Direction(row) for row in g]


# --------------------------------------------------------------------------
# Sliced distance
# --------------------------------------------------------------------------

def _projected_cost_uniform(x_proj: np.ndarray, y_proj: np.ndarray) -> np.ndarray:
    """Per-direction squared 1-d transport cost for equal uniform samples."""
    xs = np.sort(x_proj, axis=0)
    ys = np.sort(y_proj, axis=0)
    return np.mean((xs - ys) ** 2, axis=0)


def sliced_wasserstein(X, Y, n_slices: int = 50, seed: int = 0, directions=None) -> float:
    """Root-mean of 1-d squared transport costs over seeded directions."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if n_slices < 1:
        raise ValueError("need at least one direction")
    dirs = seeded_directions(X.shape[1], n_slices, seed) if directions is None else np.asarray(directions, dtype=float)
    x_proj = X @ dirs.T
    y_proj = Y @ dirs.T
    if X.shape[0] == Y.shape[0]:
        costs = _projected_cost_uniform(x_proj, y_proj)
    else:
        wx = np.full(X.shape[0], 1.0 / X.shape[0])
        wy = np.full(Y.shape[0], 1.0 / Y.shape[0])
        costs = np.array(
            [
                _quantile_coupling(x_proj[:, l], wx, y_proj[:, l], wy)[3]
                for l in range(dirs.shape[0])
            ]
        )
    return float(np.sqrt(max(np.mean(costs), 0.0)))


# --------------------------------------------------------------------------
# Projected-descent engine
# --------------------------------------------------------------------------

def _centered_rms(X: np.ndarray) -> float:
    centered = X - X.mean(axis=0)
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", centered, centered))))


def _iterate(X, Y, cfg: ProjectionConfig, choose, n_slices: int):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("samples must be (n, p) matrices")
    if X.shape != Y.shape:
        raise ValueError(
            f"sample shapes {X.shape} and {Y.shape} differ; map estimation "
            "needs equal sizes (use a plan-based method otherwise)"
        )
    n, p = X.shape
    update_ss, diag_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(update_ss)
    diag_dirs = seeded_directions(p, cfg.diagnostic_slices, diag_ss.generate_state(1)[0])

    scale = max(_centered_rms(X), _centered_rms(Y))
    tol_abs = cfg.tol_abs_factor * scale
    max_iters = cfg.resolved_max_iters(p)

    def residual_of(Z):
        return sliced_wasserstein(Z, Y, directions=diag_dirs)

    directions, costs, update_norms, residuals = [], [], [], []
    best_history: list[float] = []
    Xk = X.copy()
    residual = residual_of(Xk)
    stop_reason = "max_iters"
    converged = False
    if residual <= tol_abs:
        stop_reason = "tol_abs"
        converged = True
        max_iters = 0

    for _ in range(max_iters):
        dirs = choose(Xk, rng)  # (L, p) unit rows
        x_proj = Xk @ dirs.T
        y_proj = Y @ dirs.T
        update = np.zeros_like(Xk)
        step_costs = np.empty(dirs.shape[0])
        for l in range(dirs.shape[0]):
            d, c1 = _matched_displacement(x_proj[:, l], y_proj[:, l])
            update += np.outer(d, dirs[l])
            step_costs[l] = c1
        update /= dirs.shape[0]
        Xk = Xk + update
        residual = residual_of(Xk)

        directions.append(dirs)
        costs.append(float(step_costs.mean()))
        update_norms.append(float(np.linalg.norm(update)))
        residuals.append(residual)
        best_history.append(min(residual, best_history[-1]) if best_history else residual)

        if residual <= tol_abs:
            stop_reason = "tol_abs"
            converged = True
            break
        k = len(best_history)
        if k > cfg.patience:
            earlier = best_history[k - 1 - cfg.patience]
            if best_history[-1] > (1.0 - cfg.tol_rel) * earlier:
                stop_reason = "stagnation"
                converged = True
                break

    iterations = len(directions)
    trace = IterationTrace(
        directions=np.asarray(directions) if directions else np.zeros((0, n_slices, p)),
        costs=np.asarray(costs),
        update_norms=np.asarray(update_norms),
        residuals=np.asarray(residuals),
        converged=converged,
        iterations=iterations,
        stop_reason=stop_reason,
    )
    return TransportMapEstimate(X, Xk), trace


def _gaussian_chooser(n_slices: int):
    def choose(_Xk, rng):
        g = rng.standard_normal((n_slices, _Xk.shape[1]))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return g / norms

    return choose


def random_projection_otm(X, Y, cfg: ProjectionConfig | None = None):
    """Monge-map estimation by iterated 1-d matching along random directions.

    Each step draws one direction, matches the projected samples by sorting,
    and moves every source point along the direction by its matched
    displacement, so the updated projections coincide with the target's.
    """
    cfg = cfg or ProjectionConfig()
    return _iterate(X, Y, cfg, _gaussian_chooser(1), n_slices=1)


def sliced_otm(X, Y, n_slices: int, cfg: ProjectionConfig | None = None):
    """Like ``random_projection_otm`` but averaging the displacement fields of
    ``n_slices`` directions per iteration.  With n_slices=1 and the same seed
    the run is identical to ``random_projection_otm``.
    """
    if n_slices < 1:
        raise ValueError("need at least one direction per iteration")
    cfg = cfg or ProjectionConfig()
    return _iterate(X, Y, cfg, _gaussian_chooser(n_slices), n_slices=n_slices)


# --------------------------------------------------------------------------
# Average-variance contrast direction (two-slice SAVE) and projection pursuit
# --------------------------------------------------------------------------

def save_direction(X, Y, ridge: float = 1e-8, eig_floor: float = 1e-12) -> SaveResult:
    """Most informative projection direction between two samples.

    Pools the samples, standardizes by the pooled covariance (ridge-repaired
    inverse square root), and forms the two-slice average-variance kernel
    M = f_X (I - S_X)^2 + f_Y (I - S_Y)^2 from the standardized slice
    covariances.  The leading eigenvector of M, mapped back through the
    whitening transform, is the direction along which the slices' first two
    moments differ most.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError("samples must be (n, p) and (m, p)")
    n, p = X.shape
    m = Y.shape[0]
    if n < p + 1 or m < p + 1:
        raise ValueError(f"need at least p + 1 = {p + 1} points per sample")

    pooled = np.vstack([X, Y])
    mean = pooled.mean(axis=0)
    centered = pooled - mean
    cov = centered.T @ centered / pooled.shape[0]
    cov = cov + (ridge * np.trace(cov) / p) * np.eye(p)
    lam, U = np.linalg.eigh(cov)
    lam_max = float(lam.max())
    if lam_max <= 0.0:
        raise ValueError("pooled covariance is singular beyond ridge repair")
    lam = np.maximum(lam, eig_floor * lam_max)
    whiten = (U / np.sqrt(lam)) @ U.T

    xs = (X - mean) @ whiten
    ys = (Y - mean) @ whiten
    xc = xs - xs.mean(axis=0)
    yc = ys - ys.mean(axis=0)
    sx = xc.T @ xc / n
    sy = yc.T @ yc / m
    fx = n / (n + m)
    fy = m / (n + m)
    eye = np.eye(p)
    dx = eye - sx
    dy = eye - sy
    kernel = fx * (dx @ dx) + fy * (dy @ dy)
    kernel = 0.5 * (kernel + kernel.T)

    evals, evecs = np.linalg.eigh(kernel)
    top_value = float(evals[-1])
    u = evecs[:, -1]
    d = whiten @ u
    # canonical sign: first non-negligible coordinate of the data-scale
    # direction is positive
    nz = np.flatnonzero(np.abs(d) > 1e-12 * max(np.abs(d).max(), 1e-300))
    pivot = nz[0] if nz.size else 0
    if d[pivot] < 0:
        d = -d
        u = -u
    return SaveResult(
        m=kernel,
        top_direction=Direction(d),
        top_eigenvalue=top_value,
        whitened_direction=Direction(u),
    )


def ppmm(X, Y, cfg: ProjectionConfig | None = None):
    """Projection-pursuit Monge map: the random direction of each step is
    replaced by the current most informative direction between the moved
    source and the target.
    """
    cfg = cfg or ProjectionConfig()
    Y_arr = np.asarray(Y, dtype=float)

    def choose(Xk, _rng):
        return save_direction(Xk, Y_arr).top_direction.v[None, :]

    return _iterate(X, Y, cfg, choose, n_slices=1)
