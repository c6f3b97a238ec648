"""Desk-scale benchmark suites for the scaling behavior of the solvers.

Each suite writes one CSV row per configuration with the median wall time of
three repetitions, the iteration count, and the computed distance, so log-log
slopes can be fitted offline.  Iteration caps are fixed per suite so that per
size the solvers do identical work and timings compare cleanly.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .exact import wasserstein_distance
from .measures import SimplexWeights, make_cost_matrix
from .nystrom import nys_sink
from .projection import ProjectionConfig, ppmm, random_projection_otm
from .sinkhorn import SinkhornConfig, default_eta, sinkhorn_knopp

__all__ = [
    "SUITES",
    "DENSE_SIZE_LIMIT",
    "FACTORED_SIZE_LIMIT",
    "make_gaussian_pair",
    "make_clustered_pair",
    "run_suite",
    "write_rows_csv",
    "fit_loglog_slope",
]

SUITES = ("sinkhorn-scaling", "nys-scaling", "ppmm-vs-random")
DENSE_SIZE_LIMIT = 5000
FACTORED_SIZE_LIMIT = 100_000
_REPS = 3
_BENCH_ITERS = 40
_BENCH_RANK = 50

DEFAULT_SIZES = {
    "sinkhorn-scaling": (250, 500, 1000),
    "nys-scaling": (2000, 4000, 8000, 16000),
    "ppmm-vs-random": (500,),
}


def make_gaussian_pair(n: int, p: int, seed: int, shift=None, scales=None):
    """A standard-Gaussian cloud and its diagonal-affine image.

    The target is Y = X * scales + shift applied to the same draw, so the
    exact empirical transport between the pair is the affine map itself.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    shift_vec = np.zeros(p) if shift is None else np.asarray(shift, dtype=float)
    scale_vec = np.ones(p) if scales is None else np.asarray(scales, dtype=float)
    Y = X * scale_vec + shift_vec
    return X, Y


def make_clustered_pair(n: int, p: int, seed: int, clusters: int = 10, spread: float = 0.15):
    """Two clustered clouds whose Gibbs kernel is numerically low-rank."""
    rng = np.random.default_rng(seed)
    centers_x = rng.uniform(-1.0, 1.0, size=(clusters, p))
    centers_y = rng.uniform(-1.0, 1.0, size=(clusters, p))
    labels_x = rng.integers(clusters, size=n)
    labels_y = rng.integers(clusters, size=n)
    X = centers_x[labels_x] + spread * rng.standard_normal((n, p))
    Y = centers_y[labels_y] + spread * rng.standard_normal((n, p))
    return X, Y


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - start) * 1000.0


def _median_time(fn):
    result = None
    times = []
    for _ in range(_REPS):
        result, ms = _timed(fn)
        times.append(ms)
    return result, float(np.median(times))


def run_suite(suite: str, sizes=None, seed: int = 0) -> list[dict]:
    """Run one scaling suite and return its result rows."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    sizes = tuple(sizes) if sizes else DEFAULT_SIZES[suite]
    rows: list[dict] = []

    if suite == "sinkhorn-scaling":
        for n in sizes:
            if n > DENSE_SIZE_LIMIT:
                raise ValueError(f"dense size {n} exceeds limit {DENSE_SIZE_LIMIT}")
            X, Y = make_clustered_pair(n, 2, seed)
            cost = make_cost_matrix(X, Y)
            weights = SimplexWeights.uniform(n)
            cfg = SinkhornConfig(
                eta=default_eta(cost), epsilon=1e-12, max_iters=_BENCH_ITERS
            )
            result, ms = _median_time(
                lambda: sinkhorn_knopp(cost, weights, weights, cfg)
            )
            rows.append(
                _row("sinkhorn", n, "", 2, ms, result.state.iteration,
                     float(np.sqrt(max(result.distance_value, 0.0))))
            )
    elif suite == "nys-scaling":
        for n in sizes:
            if n > FACTORED_SIZE_LIMIT:
                raise ValueError(f"factored size {n} exceeds limit {FACTORED_SIZE_LIMIT}")
            X, Y = make_clustered_pair(n, 2, seed)
            weights = SimplexWeights.uniform(n)
            sample = make_cost_matrix(X[: min(n, 500)], Y[: min(n, 500)])
            cfg = SinkhornConfig(
                eta=default_eta(sample), epsilon=1e-12, max_iters=_BENCH_ITERS
            )
            result, ms = _median_time(
                lambda: nys_sink(X, Y, weights, weights, cfg, rank=_BENCH_RANK, seed=seed)
            )
            rows.append(
                _row("nys-sink", n, _BENCH_RANK, 2, ms, result.state.iteration,
                     float(np.sqrt(max(result.distance_value, 0.0))))
            )
    else:  # ppmm-vs-random
        for n in sizes:
            for p, shift, scales in ((2, (5.0, 0.0), None), (10, (6.0,) + (0.0,) * 9, None)):
                X, Y = make_gaussian_pair(n, p, seed, shift=shift, scales=scales)
                cfg = ProjectionConfig(seed=seed)
                (ppmm_map, ppmm_trace), ppmm_ms = _timed(lambda: ppmm(X, Y, cfg))
                (rand_map, rand_trace), rand_ms = _timed(
                    lambda: random_projection_otm(X, Y, cfg)
                )
                rows.append(
                    _row("ppmm", n, "", p, ppmm_ms, ppmm_trace.iterations,
                         wasserstein_distance(ppmm_map))
                )
                rows.append(
                    _row("random-projection", n, "", p, rand_ms,
                         rand_trace.iterations, wasserstein_distance(rand_map))
                )
    return rows


def _row(method, n, s, p, wall_ms, iterations, distance) -> dict:
    return {
        "method": method,
        "n": n,
        "s": s,
        "p": p,
        "wall_time_ms": wall_ms,
        "iterations": iterations,
        "distance": distance,
    }


def write_rows_csv(path, rows: list[dict], omit_timing: bool = False) -> None:
    fields = ["method", "n", "s", "p", "wall_time_ms", "iterations", "distance"]
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            if omit_timing:
                out["wall_time_ms"] = 0.0
            out["wall_time_ms"] = repr(float(out["wall_time_ms"]))
            out["distance"] = repr(float(out["distance"]))
            writer.writerow(out)


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 2:
        raise ValueError("need at least two points to fit a slope")
    slope, _ = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope)
