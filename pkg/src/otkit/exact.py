"""Exact Kantorovich solvers and Wasserstein-distance evaluation.

``solve_exact_ot`` is a network-simplex transportation solver (Bland's rule,
fully deterministic).  ``brute_force_ot`` enumerates polytope vertices and is
meant as an independent test oracle on tiny instances only.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .measures import (
    CostMatrix,
    Coupling,
    SimplexWeights,
    TransportMapEstimate,
    _weights_vector,
)

__all__ = ["ExactSolution", "solve_exact_ot", "brute_force_ot", "wasserstein_distance"]

BRUTE_FORCE_CELL_LIMIT = 25
BRUTE_FORCE_ASSIGNMENT_LIMIT = 6


@dataclass(frozen=True)
class ExactSolution:
    """Optimal coupling, its cost <P, C>, and the solver's iteration count."""

    coupling: Coupling
    optimal_cost: float
    iterations: int


def _as_cost_array(cost) -> np.ndarray:
    return cost.c if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)


# --------------------------------------------------------------------------
# Network simplex on the bipartite transportation graph.
#
# Nodes 0..n-1 are rows (supplies p), nodes n..n+m-1 are columns (demands q).
# The basis is a spanning tree held as parallel lists of basic cells.
# --------------------------------------------------------------------------

def _northwest_corner(p: np.ndarray, q: np.ndarray):
    """Initial basic feasible solution with exactly n + m - 1 basic cells."""
    n, m = p.size, q.size
    rows, cols, flows = [], [], []
    a = p.copy()
    b = q.copy()
    i = j = 0
    while True:
        t = min(a[i], b[j])
        rows.append(i)
        cols.append(j)
        flows.append(t)
        a[i] -= t
        b[j] -= t
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (a[i] <= b[j] and i < n - 1):
            i += 1
        else:
            j += 1
    return rows, cols, flows


def _tree_adjacency(rows, cols, n):
    adj: dict[int, list[tuple[int, int]]] = {}
    for k, (i, j) in enumerate(zip(rows, cols)):
        adj.setdefault(i, []).append((n + j, k))
        adj.setdefault(n + j, []).append((i, k))
    return adj


def _tree_duals(rows, cols, c, n, m):
    """Solve u_i + v_j = c_ij on the basic tree, anchored at u_0 = 0."""
    adj = _tree_adjacency(rows, cols, n)
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    stack = [0]
    seen = {0}
    while stack:
        node = stack.pop()
        for other, k in adj.get(node, ()):
            if other in seen:
                continue
            seen.add(other)
            i, j = rows[k], cols[k]
            if other >= n:
                v[j] = c[i, j] - u[i]
            else:
                u[i] = c[i, j] - v[j]
            stack.append(other)
    return u, v, adj


def _tree_path(adj, start, goal):
    """Basic-cell indices along the unique tree path from start to goal."""
    parent_edge = {start: -1}
    parent_node = {start: start}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for other, k in adj.get(node, ()):
            if other not in parent_edge:
                parent_edge[other] = k
                parent_node[other] = node
                stack.append(other)
    path = []
    node = goal
    while node != start:
        path.append(parent_edge[node])
        node = parent_node[node]
    path.reverse()
    return path


DEGENERATE_STREAK_LIMIT = 50


def solve_exact_ot(cost, p, q) -> ExactSolution:
    """Minimize <P, C> over the coupling polytope M(p, q).

    Network simplex with a deterministic pivot rule: most-negative reduced
    cost (first cell in row-major order on ties), switching to Bland's
    first-negative rule whenever a streak of degenerate pivots suggests
    cycling.  Bland's rule guarantees escape from any degenerate cycle, so
    the hybrid terminates, and repeated runs on the same input produce
    identical plans.
    """
    c = _as_cost_array(cost)
    if not isinstance(p, SimplexWeights):
        p = SimplexWeights(np.asarray(p, dtype=float))
    if not isinstance(q, SimplexWeights):
        q = SimplexWeights(np.asarray(q, dtype=float))
    n, m = c.shape
    if (n, m) != (len(p), len(q)):
        raise ValueError(f"cost shape {c.shape} does not match weights ({len(p)}, {len(q)})")

    pv = p.w.copy()
    qv = q.w.copy()
    rows, cols, flows = _northwest_corner(pv, qv)
    tol = 1e-12 * max(1.0, float(np.abs(c).max()))

    iterations = 0
    degenerate_streak = 0
    max_pivots = 1000 + 50 * n * m * (n + m)
    while True:
        u, v, adj = _tree_duals(rows, cols, c, n, m)
        if np.isnan(u).any() or np.isnan(v).any():
            raise RuntimeError("basis lost its spanning-tree structure")
        reduced = c - u[:, None] - v[None, :]
        for i, j in zip(rows, cols):
            reduced[i, j] = 0.0
        candidates = reduced < -tol
        if not candidates.any():
            break
        iterations += 1
        if iterations > max_pivots:
            raise RuntimeError("network simplex failed to terminate")
        if degenerate_streak < DEGENERATE_STREAK_LIMIT:
            flat = int(np.argmin(reduced))
        else:
            flat = int(np.argmax(candidates))  # Bland: first improving cell
        ei, ej = divmod(flat, m)

        # entering cell closes a unique cycle with the tree path col -> row
        path = _tree_path(adj, n + ej, ei)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flows[k] for k in minus)
        leave = min(
            (k for k in minus if flows[k] <= theta),
            key=lambda k: (rows[k], cols[k]),
        )
        degenerate_streak = degenerate_streak + 1 if theta <= tol else 0
        for k in minus:
            flows[k] -= theta
        for k in plus:
            flows[k] += theta
        rows[leave] = ei
        cols[leave] = ej
        flows[leave] = theta

    plan = np.zeros((n, m))
    for i, j, f in zip(rows, cols, flows):
        plan[i, j] += max(f, 0.0)
    objective = float(np.sum(plan * c))
    coupling = Coupling(plan, p, q, objective)
    return ExactSolution(coupling, objective, iterations)


# --------------------------------------------------------------------------
# Brute-force oracle: enumerate every vertex of M(p, q) via spanning trees of
# the complete bipartite transportation graph.
# --------------------------------------------------------------------------

def _tree_flows(edges, n, m, p, q):
    """Unique flow on a spanning tree, by leaf stripping; None if infeasible."""
    total = n + m
    degree = [0] * total
    incident = [[] for _ in range(total)]
    for idx, (i, j) in enumerate(edges):
        degree[i] += 1
        degree[n + j] += 1
        incident[i].append(idx)
        incident[n + j].append(idx)
    balance = np.concatenate([p, q])
    flows = [0.0] * len(edges)
    removed = [False] * len(edges)
    leaves = [v for v in range(total) if degree[v] == 1]
    while leaves:
        v = leaves.pop()
        edge_idx = next((k for k in incident[v] if not removed[k]), None)
        if edge_idx is None:
            continue
        f = balance[v]
        if f < -1e-12:
            return None
        flows[edge_idx] = max(f, 0.0)
        removed[edge_idx] = True
        i, j = edges[edge_idx]
        other = n + j if v == i else i
        balance[other] -= f
        balance[v] = 0.0
        degree[other] -= 1
        degree[v] -= 1
        if degree[other] == 1:
            leaves.append(other)
    return flows


def _enumerate_vertices(c, p, q):
    """Yield (cost, plan) for every basic feasible solution; tiny n*m only."""
    n, m = c.shape
    all_edges = [(i, j) for i in range(n) for j in range(m)]
    target = n + m - 1
    best_cost = np.inf
    best_plan = None
    count = 0

    # backtracking over lexicographic edge subsets, pruning cycles early
    def extend(start, chosen, parent):
        nonlocal best_cost, best_plan, count
        if len(chosen) == target:
            flows = _tree_flows(chosen, n, m, p, q)
            if flows is None:
                return
            count += 1
            cost = sum(f * c[i, j] for f, (i, j) in zip(flows, chosen))
            if cost < best_cost - 1e-15:
                best_cost = cost
                plan = np.zeros((n, m))
                for f, (i, j) in zip(flows, chosen):
                    plan[i, j] = f
                best_plan = plan
            return
        remaining = len(all_edges) - start
        if remaining < target - len(chosen):
            return
        for idx in range(start, len(all_edges)):
            if len(all_edges) - idx < target - len(chosen):
                break
            i, j = all_edges[idx]
            ri = _find(parent, i)
            rj = _find(parent, n + j)
            if ri == rj:
                continue  # would close a cycle
            next_parent = parent.copy()
            next_parent[ri] = rj
            chosen.append((i, j))
            extend(idx + 1, chosen, next_parent)
            chosen.pop()

    extend(0, [], list(range(n + m)))
    return best_cost, best_plan, count


def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def brute_force_ot(cost, p, q) -> ExactSolution:
    """Exhaustive minimizer over the vertices of M(p, q).

    Guarded to n*m <= 25 cells.  For uniform equal weights the optimum is a
    permutation, so an assignment enumeration extends the oracle to n <= 6
    and cross-checks the vertex enumeration where both run.
    """
    c = _as_cost_array(cost)
    if not isinstance(p, SimplexWeights):
        p = SimplexWeights(np.asarray(p, dtype=float))
    if not isinstance(q, SimplexWeights):
        q = SimplexWeights(np.asarray(q, dtype=float))
    n, m = c.shape
    if (n, m) != (len(p), len(q)):
        raise ValueError(f"cost shape {c.shape} does not match weights ({len(p)}, {len(q)})")

    uniform_equal = (
        n == m
        and np.allclose(p.w, 1.0 / n, rtol=0, atol=1e-12)
        and np.allclose(q.w, 1.0 / n, rtol=0, atol=1e-12)
    )
    run_vertices = n * m <= BRUTE_FORCE_CELL_LIMIT
    run_assignment = uniform_equal and n <= BRUTE_FORCE_ASSIGNMENT_LIMIT
    if not (run_vertices or run_assignment):
        raise ValueError(
            f"instance too large for brute force: {n}x{m} "
            f"(limit {BRUTE_FORCE_CELL_LIMIT} cells, or uniform n <= "
            f"{BRUTE_FORCE_ASSIGNMENT_LIMIT})"
        )

    vertex_cost = vertex_plan = None
    count = 0
    if run_vertices:
        vertex_cost, vertex_plan, count = _enumerate_vertices(c, p.w, q.w)

    assign_cost = assign_plan = None
    if run_assignment:
        best = np.inf
        best_perm = None
        for perm in itertools.permutations(range(n)):
            total = sum(c[i, perm[i]] for i in range(n)) / n
            if total < best - 1e-15:
                best = total
                best_perm = perm
            count += 1
        assign_cost = best
        assign_plan = np.zeros((n, n))
        for i, j in enumerate(best_perm):
            assign_plan[i, j] = 1.0 / n

    if vertex_cost is not None and assign_cost is not None:
        if abs(vertex_cost - assign_cost) > 1e-9:
            raise RuntimeError(
                f"oracle disagreement: vertices {vertex_cost!r} vs "
                f"assignments {assign_cost!r}"
            )
    cost_value = vertex_cost if vertex_cost is not None else assign_cost
    plan = vertex_plan if vertex_plan is not None else assign_plan
    coupling = Coupling(plan, p, q, float(cost_value))
    return ExactSolution(coupling, float(cost_value), count)


# --------------------------------------------------------------------------
# Wasserstein distance
# --------------------------------------------------------------------------

def wasserstein_distance(obj, cost=None, weights=None, k: int = 2) -> float:
    """Wasserstein distance of order k from a coupling or a map estimate.

    Coupling form: (sum_ij P_ij * C_ij^(k/2))^(1/k) with C squared-Euclidean,
    which is <P, C>^(1/2) for k = 2.  Map form: the weighted k-th displacement
    moment (sum_i w_i ||x_i - phi(x_i)||^k)^(1/k), uniform weights by default.
    """
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ValueError(f"order k must be a positive integer, got {k!r}")
    if isinstance(obj, TransportMapEstimate):
        disp = np.linalg.norm(obj.displacement, axis=1)
        n = disp.size
        w = np.full(n, 1.0 / n) if weights is None else _weights_vector(weights)
        if w.size != n:
            raise ValueError(f"{w.size} weights for {n} map rows")
        return float(np.sum(w * disp**k) ** (1.0 / k))
    if isinstance(obj, Coupling):
        if cost is None:
            raise ValueError("coupling form needs the cost matrix")
        c = _as_cost_array(cost)
        if c.shape != obj.plan.shape:
            raise ValueError(f"cost shape {c.shape} != plan shape {obj.plan.shape}")
        if k == 2:
            return float(np.sqrt(max(np.sum(obj.plan * c), 0.0)))
        d = np.sqrt(c)
        return float(np.sum(obj.plan * d**k) ** (1.0 / k))
    raise TypeError(f"expected Coupling or TransportMapEstimate, got {type(obj).__name__}")
