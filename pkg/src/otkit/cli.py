"""Command-line front end: ``otkit <distance|plan|map|bench>``.

Prints one JSON report per invocation on stdout; bulk numeric artifacts
(plans, maps, scaling tables) go to ``--out`` files as CSV.  Every command is
deterministic for a fixed ``--seed``; wall-clock fields are the only
run-to-run variation and can be zeroed with ``--omit-timing`` when outputs
are diffed byte-for-byte.

Exit codes: 0 success, 2 input error, 3 non-convergence, 4 resource limit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .exact import solve_exact_ot, wasserstein_distance
from .measures import (
    DiscreteMeasure,
    MeasureFormatError,
    make_cost_matrix,
    load_measure_csv,
)
from .nystrom import MATERIALIZE_ENTRY_LIMIT, nys_sink
from .projection import (
    ProjectionConfig,
    ppmm,
    random_projection_otm,
    sliced_otm,
)
from .sinkhorn import SinkhornConfig, default_eta, sinkhorn_knopp

__all__ = ["RunReport", "main"]

SCHEMA_VERSION = 1
PLAN_ENTRY_LIMIT = 4_000_000
PLAN_MASS_CUTOFF = 1e-12

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_RESOURCE = 4

PLAN_METHODS = ("exact", "sinkhorn", "nys-sink")
MAP_METHODS = ("random-projection", "sliced", "ppmm")
ALL_METHODS = PLAN_METHODS + MAP_METHODS


class ResourceLimitError(RuntimeError):
    """Request exceeds a configured size budget."""


@dataclass
class RunReport:
    """Machine-readable record of one CLI run."""

    schema_version: int
    method: str
    distance: float
    iterations: int
    wall_time_ms: float
    converged: bool
    seed: int
    config: dict
    inputs: dict
    details: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_digests(source: Path, target: Path) -> dict:
    return {
        "source": {"path": str(source), "sha256": _sha256(source)},
        "target": {"path": str(target), "sha256": _sha256(target)},
    }


def _load_pair(args) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    src = load_measure_csv(args.source)
    tgt = load_measure_csv(args.target)
    if src.dim != tgt.dim:
        raise MeasureFormatError(
            f"dimension mismatch: {args.source} has p={src.dim}, "
            f"{args.target} has p={tgt.dim}"
        )
    return src, tgt


def _require_uniform_equal(src: DiscreteMeasure, tgt: DiscreteMeasure) -> None:
    if src.n != tgt.n:
        raise MeasureFormatError(
            f"map methods need equal sample sizes, got {src.n} and {tgt.n} "
            "(use a plan-based method instead)"
        )
    for name, measure in (("source", src), ("target", tgt)):
        if not np.allclose(measure.weights.w, 1.0 / measure.n, rtol=0, atol=1e-12):
            raise MeasureFormatError(f"map methods need uniform {name} weights")


def _threads(args) -> int:
    if args.threads is not None:
        return int(args.threads)
    env = os.environ.get("OTKIT_THREADS")
    return int(env) if env else 1


def _resolve_eta(args, src: DiscreteMeasure, tgt: DiscreteMeasure) -> float:
    if args.eta is not None:
        return float(args.eta)
    ns = min(src.n, 500)
    nt = min(tgt.n, 500)
    sample = make_cost_matrix(src.points[:ns], tgt.points[:nt])
    return default_eta(sample)


def _solve(args, src: DiscreteMeasure, tgt: DiscreteMeasure):
    """Dispatch on --method; returns (distance, iterations, converged,
    config, details, plan_or_map)."""
    method = args.method
    seed = args.seed
    if method == "exact":
        cost = make_cost_matrix(src.points, tgt.points)
        sol = solve_exact_ot(cost, src.weights, tgt.weights)
        distance = float(np.sqrt(max(sol.optimal_cost, 0.0)))
        config = {"threads": _threads(args)}
        details = {
            "transport_cost": sol.optimal_cost,
            "marginal_violation": sol.coupling.violation(),
        }
        return distance, sol.iterations, True, config, details, sol.coupling.plan
    if method == "sinkhorn":
        cost = make_cost_matrix(src.points, tgt.points)
        eta = args.eta if args.eta is not None else default_eta(cost)
        cfg = SinkhornConfig(eta=eta, epsilon=args.epsilon, max_iters=args.max_iters)
        res = sinkhorn_knopp(cost, src.weights, tgt.weights, cfg)
        distance = float(np.sqrt(max(res.distance_value, 0.0)))
        config = {
            "eta": eta,
            "epsilon": cfg.epsilon,
            "max_iters": cfg.resolved_max_iters(),
            "threads": _threads(args),
        }
        details = {
            "transport_cost": res.distance_value,
            "regularized_objective": res.regularized_objective,
            "marginal_violation": res.marginal_error,
        }
        return distance, res.state.iteration, res.converged, config, details, res.coupling.plan
    if method == "nys-sink":
        eta = _resolve_eta(args, src, tgt)
        rank = args.rank if args.rank is not None else min(100, src.n + tgt.n)
        cfg = SinkhornConfig(eta=eta, epsilon=args.epsilon, max_iters=args.max_iters)
        res = nys_sink(src.points, tgt.points, src.weights, tgt.weights, cfg,
                       rank=rank, seed=seed)
        distance = float(np.sqrt(max(res.distance_value, 0.0)))
        config = {
            "eta": eta,
            "epsilon": cfg.epsilon,
            "max_iters": cfg.resolved_max_iters(),
            "rank": rank,
            "threads": _threads(args),
        }
        details = {
            "transport_cost": res.distance_value,
            "regularized_objective": res.regularized_objective,
            "marginal_violation": res.marginal_error,
            "clamped_entries": res.clamp_count,
        }
        plan = res.coupling.plan if res.coupling is not None else None
        return distance, res.state.iteration, res.converged, config, details, plan

    # map methods
    _require_uniform_equal(src, tgt)
    cfg = ProjectionConfig(seed=seed, max_iters=args.max_iters)
    if method == "random-projection":
        tmap, trace = random_projection_otm(src.points, tgt.points, cfg)
    elif method == "sliced":
        tmap, trace = sliced_otm(src.points, tgt.points, args.slices, cfg)
    else:
        tmap, trace = ppmm(src.points, tgt.points, cfg)
    distance = wasserstein_distance(tmap, weights=src.weights)
    config = {"max_iters": cfg.resolved_max_iters(src.dim), "threads": _threads(args)}
    if method == "sliced":
        config["slices"] = args.slices
    details = {
        "stop_reason": trace.stop_reason,
        "final_residual": float(trace.residuals[-1]) if trace.iterations else 0.0,
    }
    return distance, trace.iterations, trace.converged, config, details, tmap


def _emit(report: RunReport, args) -> None:
    if args.omit_timing:
        report.wall_time_ms = 0.0
    print(report.to_json())


def _cmd_distance(args) -> int:
    src, tgt = _load_pair(args)
    start = time.perf_counter()
    distance, iterations, converged, config, details, _ = _solve(args, src, tgt)
    wall = (time.perf_counter() - start) * 1000.0
    report = RunReport(
        schema_version=SCHEMA_VERSION,
        method=args.method,
        distance=distance,
        iterations=iterations,
        wall_time_ms=wall,
        converged=converged,
        seed=args.seed,
        config=config,
        inputs=_input_digests(Path(args.source), Path(args.target)),
        details=details,
    )
    _emit(report, args)
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def _write_plan_csv(path: Path, plan: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("i,j,mass\n")
        rows, cols = np.nonzero(plan > PLAN_MASS_CUTOFF)
        for i, j in zip(rows, cols):
            fh.write(f"{i},{j},{float(plan[i, j])!r}\n")


def _cmd_plan(args) -> int:
    if args.method not in PLAN_METHODS:
        raise MeasureFormatError(
            f"plan output needs a plan-based method ({', '.join(PLAN_METHODS)})"
        )
    src, tgt = _load_pair(args)
    if src.n * tgt.n > PLAN_ENTRY_LIMIT:
        raise ResourceLimitError(
            f"dense plan of {src.n}x{tgt.n} entries exceeds the "
            f"{PLAN_ENTRY_LIMIT} limit"
        )
    start = time.perf_counter()
    distance, iterations, converged, config, details, plan = _solve(args, src, tgt)
    if plan is None:
        raise ResourceLimitError("plan could not be materialized within budget")
    _write_plan_csv(Path(args.out), plan)
    wall = (time.perf_counter() - start) * 1000.0
    details = dict(details)
    details["plan_file"] = str(args.out)
    details["plan_entries"] = int(np.count_nonzero(plan > PLAN_MASS_CUTOFF))
    report = RunReport(
        schema_version=SCHEMA_VERSION,
        method=args.method,
        distance=distance,
        iterations=iterations,
        wall_time_ms=wall,
        converged=converged,
        seed=args.seed,
        config=config,
        inputs=_input_digests(Path(args.source), Path(args.target)),
        details=details,
    )
    _emit(report, args)
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def _write_map_csv(path: Path, source: np.ndarray, image: np.ndarray) -> None:
    p = source.shape[1]
    header = [f"x{k + 1}" for k in range(p)] + [f"phi{k + 1}" for k in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(source.shape[0]):
            fields = [repr(float(v)) for v in source[i]]
            fields += [repr(float(v)) for v in image[i]]
            fh.write(",".join(fields) + "\n")


def _cmd_map(args) -> int:
    if args.method not in MAP_METHODS:
        raise MeasureFormatError(
            f"map output needs a map-based method ({', '.join(MAP_METHODS)})"
        )
    src, tgt = _load_pair(args)
    start = time.perf_counter()
    distance, iterations, converged, config, details, tmap = _solve(args, src, tgt)
    _write_map_csv(Path(args.out), tmap.source, tmap.image)
    wall = (time.perf_counter() - start) * 1000.0
    details = dict(details)
    details["map_file"] = str(args.out)
    report = RunReport(
        schema_version=SCHEMA_VERSION,
        method=args.method,
        distance=distance,
        iterations=iterations,
        wall_time_ms=wall,
        converged=converged,
        seed=args.seed,
        config=config,
        inputs=_input_digests(Path(args.source), Path(args.target)),
        details=details,
    )
    _emit(report, args)
    return EXIT_OK if converged else EXIT_NO_CONVERGENCE


def _cmd_bench(args) -> int:
    sizes = None
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError:
            raise MeasureFormatError(f"--sizes must be comma-separated integers, got {args.sizes!r}")
    start = time.perf_counter()
    try:
        rows = bench_mod.run_suite(args.suite, sizes=sizes, seed=args.seed)
    except ValueError as exc:
        if "exceeds" in str(exc):
            raise ResourceLimitError(str(exc)) from None
        raise
    bench_mod.write_rows_csv(args.out, rows, omit_timing=args.omit_timing)
    wall = 0.0 if args.omit_timing else (time.perf_counter() - start) * 1000.0
    summary = {
        "schema_version": SCHEMA_VERSION,
        "suite": args.suite,
        "rows": len(rows),
        "out": str(args.out),
        "seed": args.seed,
        "wall_time_ms": wall,
    }
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomized choices")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal parallelism (default 1; env OTKIT_THREADS)")
    parser.add_argument("--omit-timing", action="store_true",
                        help="zero wall-clock fields for byte-stable output")


def _add_method_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--eta", type=float, default=None,
                        help="entropic regularization (default 10 / median cost)")
    parser.add_argument("--epsilon", type=float, default=1e-6,
                        help="marginal tolerance for the scaling loops")
    parser.add_argument("--max-iters", type=int, default=None, help="iteration cap")
    parser.add_argument("--rank", type=int, default=None,
                        help="columns sampled by the low-rank kernel path")
    parser.add_argument("--slices", type=int, default=20,
                        help="directions per iteration for the sliced method")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otkit",
        description="Discrete optimal-transport toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dist = sub.add_parser("distance", help="transport distance between two measure files")
    p_dist.add_argument("source")
    p_dist.add_argument("target")
    p_dist.add_argument("--method", required=True, choices=ALL_METHODS)
    _add_method_flags(p_dist)
    _add_common(p_dist)
    p_dist.set_defaults(func=_cmd_distance)

    p_plan = sub.add_parser("plan", help="write the transport plan as i,j,mass CSV")
    p_plan.add_argument("source")
    p_plan.add_argument("target")
    p_plan.add_argument("--method", required=True, choices=PLAN_METHODS)
    p_plan.add_argument("--out", required=True)
    _add_method_flags(p_plan)
    _add_common(p_plan)
    p_plan.set_defaults(func=_cmd_plan)

    p_map = sub.add_parser("map", help="write the estimated transport map as CSV")
    p_map.add_argument("source")
    p_map.add_argument("target")
    p_map.add_argument("--method", required=True, choices=MAP_METHODS)
    p_map.add_argument("--out", required=True)
    _add_method_flags(p_map)
    _add_common(p_map)
    p_map.set_defaults(func=_cmd_map)

    p_bench = sub.add_parser("bench", help="run a scaling suite and write a CSV table")
    p_bench.add_argument("--suite", required=True, choices=bench_mod.SUITES)
    p_bench.add_argument("--sizes", default=None,
                         help="comma-separated problem sizes (suite default otherwise)")
    p_bench.add_argument("--out", required=True)
    _add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ResourceLimitError as exc:
        print(f"otkit: resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (MeasureFormatError, OSError) as exc:
        print(f"otkit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"otkit: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
