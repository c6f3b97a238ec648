"""Core data types for discrete transport problems.

Weighted point clouds, squared-Euclidean cost matrices, transport plans and
transport-map estimates, plus the small numeric helpers (entropy, marginal
residuals) shared by every solver.  Also implements the CSV measure format
used by the command-line front end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "WEIGHT_SUM_TOLERANCE",
    "MeasureFormatError",
    "SimplexWeights",
    "DiscreteMeasure",
    "CostMatrix",
    "Coupling",
    "TransportMapEstimate",
    "make_cost_matrix",
    "entropy",
    "marginal_violation",
    "load_measure_csv",
    "write_measure_csv",
]

# Construction rejects weight vectors whose raw sum strays further than this
# from 1; anything closer is silently renormalized (file rounding noise).
WEIGHT_SUM_TOLERANCE = 1e-6


class MeasureFormatError(ValueError):
    """Raised when a measure CSV file cannot be parsed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative weights over n atoms, normalized to sum to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-d vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(
                f"weights sum to {total:.9g}; expected 1 within {WEIGHT_SUM_TOLERANCE:g}"
            )
        object.__setattr__(self, "w", _frozen(w / total))

    def __len__(self) -> int:
        return self.w.size

    @staticmethod
    def uniform(n: int) -> "SimplexWeights":
        if n < 1:
            raise ValueError("need at least one atom")
        return SimplexWeights(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class DiscreteMeasure:
    """A discrete measure: support points (n, p) with simplex weights of length n."""

    points: np.ndarray
    weights: SimplexWeights

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.size == 0:
            raise ValueError("points must be a nonempty (n, p) matrix")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if len(self.weights) != pts.shape[0]:
            raise ValueError(
                f"{len(self.weights)} weights for {pts.shape[0]} points"
            )
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @staticmethod
    def from_points(points, weights=None) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        if weights is None:
            weights = SimplexWeights.uniform(pts.shape[0])
        elif not isinstance(weights, SimplexWeights):
            weights = SimplexWeights(np.asarray(weights, dtype=float))
        return DiscreteMeasure(pts, weights)


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise squared-Euclidean costs, shape (n, m)."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 2 or c.size == 0:
            raise ValueError("cost matrix must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost entries must be finite")
        if c.min() < 0:
            raise ValueError("cost entries must be nonnegative")
        object.__setattr__(self, "c", _frozen(c))

    @property
    def shape(self) -> tuple[int, int]:
        return self.c.shape


@dataclass(frozen=True)
class Coupling:
    """A transport plan in the polytope M(p, q), with its objective <P, C>."""

    plan: np.ndarray
    row_marginal: SimplexWeights
    col_marginal: SimplexWeights
    objective: float

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=float)
        if plan.ndim != 2:
            raise ValueError("plan must be 2-d")
        if plan.shape != (len(self.row_marginal), len(self.col_marginal)):
            raise ValueError(
                f"plan shape {plan.shape} does not match marginals "
                f"({len(self.row_marginal)}, {len(self.col_marginal)})"
            )
        if not np.all(np.isfinite(plan)):
            raise ValueError("plan entries must be finite")
        if plan.min() < -1e-12:
            raise ValueError(f"plan has negative entry {plan.min():.3e}")
        plan = np.maximum(plan, 0.0)  # clear roundoff-level negatives
        object.__setattr__(self, "plan", _frozen(plan))
        object.__setattr__(self, "objective", float(self.objective))

    def violation(self) -> float:
        return marginal_violation(self.plan, self.row_marginal, self.col_marginal)


@dataclass(frozen=True)
class TransportMapEstimate:
    """Row-aligned source points and their images under an estimated map."""

    source: np.ndarray
    image: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=float)
        img = np.asarray(self.image, dtype=float)
        if src.shape != img.shape:
            raise ValueError(f"source shape {src.shape} != image shape {img.shape}")
        if src.ndim != 2:
            raise ValueError("source/image must be (n, p) matrices")
        object.__setattr__(self, "source", _frozen(src))
        object.__setattr__(self, "image", _frozen(img))

    @property
    def displacement(self) -> np.ndarray:
        return self.image - self.source


def make_cost_matrix(a, b) -> CostMatrix:
    """Squared-Euclidean cost matrix between two point sets.

    c[i, j] = ||a_i - b_j||^2.  When ``a`` and ``b`` are the same point set the
    result is exactly symmetric with an exactly zero diagonal.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("point sets must be (n, p) matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("points must be finite")
    c = cdist(a, b, "sqeuclidean")
    np.maximum(c, 0.0, out=c)
    if a is b or (a.shape == b.shape and np.array_equal(a, b)):
        # mirror the strict upper triangle for exact symmetry and zero diagonal
        upper = np.triu(c, 1)
        c = upper + upper.T
    return CostMatrix(c)


def entropy(plan) -> float:
    """Shannon entropy sum_ij P_ij log(1 / P_ij), with 0 log(1/0) = 0."""
    p = np.asarray(plan, dtype=float)
    if p.size and p.min() < 0:
        raise ValueError(f"entropy undefined for negative entry {p.min():.3e}")
    positive = p[p > 0]
    return float(-np.sum(positive * np.log(positive)))


def _weights_vector(w) -> np.ndarray:
    return w.w if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float)


def marginal_violation(plan, p, q) -> float:
    """L1 distance of a plan's marginals from (p, q):

    ||plan 1 - p||_1 + ||plan^T 1 - q||_1.
    """
    plan = np.asarray(plan, dtype=float)
    pv = _weights_vector(p)
    qv = _weights_vector(q)
    if plan.shape != (pv.size, qv.size):
        raise ValueError(
            f"plan shape {plan.shape} does not match marginals ({pv.size}, {qv.size})"
        )
    row_res = np.abs(plan.sum(axis=1) - pv).sum()
    col_res = np.abs(plan.sum(axis=0) - qv).sum()
    return float(row_res + col_res)


# --------------------------------------------------------------------------
# CSV measure format (shared with the CLI): header x1..xp[,weight], one
# support point per row; missing weight column means uniform 1/n.
# --------------------------------------------------------------------------

def load_measure_csv(path) -> DiscreteMeasure:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise MeasureFormatError(f"{path}: empty file, header row required")
            header = [h.strip() for h in header]
            has_weight = bool(header) and header[-1] == "weight"
            coord_names = header[:-1] if has_weight else header
            dim = len(coord_names)
            expected = [f"x{i + 1}" for i in range(dim)]
            if dim == 0 or coord_names != expected:
                raise MeasureFormatError(
                    f"{path}:1: header must be x1..xp followed by optional "
                    f"'weight', got {','.join(header)!r}"
                )
            rows = []
            weights = []
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue  # ignore blank lines
                if len(row) != len(header):
                    raise MeasureFormatError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                try:
                    values = [float(v) for v in row]
                except ValueError as exc:
                    raise MeasureFormatError(f"{path}:{lineno}: {exc}") from None
                rows.append(values[:dim])
                if has_weight:
                    weights.append(values[dim])
            if not rows:
                raise MeasureFormatError(f"{path}: no support points")
            points = np.asarray(rows, dtype=float)
            if not np.all(np.isfinite(points)):
                raise MeasureFormatError(f"{path}: non-finite coordinate")
            try:
                if has_weight:
                    return DiscreteMeasure.from_points(points, np.asarray(weights))
                return DiscreteMeasure.from_points(points)
            except ValueError as exc:
                raise MeasureFormatError(f"{path}: {exc}") from None
    except OSError as exc:
        raise MeasureFormatError(f"{path}: {exc}") from None


def write_measure_csv(path, measure: DiscreteMeasure, include_weights: bool = True) -> None:
    path = Path(path)
    dim = measure.dim
    header = [f"x{i + 1}" for i in range(dim)]
    if include_weights:
        header.append("weight")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(measure.n):
            row = [repr(float(v)) for v in measure.points[i]]
            if include_weights:
                row.append(repr(float(measure.weights.w[i])))
            writer.writerow(row)
