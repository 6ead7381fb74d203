"""Discrete optimal transport between weighted point clouds.

Two solvers: an exact one (transportation simplex, with a fast assignment
path for uniform equal-count instances, where the optimum is a permutation)
and an entropically regularized one (log-domain Sinkhorn).  On top of those:
trajectory coupling with optional batching, and earth-mover distances.

A module-level counter tracks how many transport solves have run, so callers
can verify that couplings are computed once and reused.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .measures import (
    Coupling,
    EmpiricalSnapshot,
    PopulationTrajectory,
    check_coupling_marginals,
)

logger = logging.getLogger(__name__)

_solve_count = 0


def reset_solve_count() -> None:
    global _solve_count
    _solve_count = 0


def get_solve_count() -> int:
    return _solve_count


def _count_solve() -> None:
    global _solve_count
    _solve_count += 1


@dataclass
class OtConfig:
    """How consecutive snapshots get coupled."""

    method: str = "exact"
    epsilon: float = 1.0
    max_iters: int = 2000
    tolerance: float = 1e-6
    batch_size: int = 1000
    seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.method not in ("exact", "sinkhorn"):
            raise ValueError(f"method must be 'exact' or 'sinkhorn', got {self.method!r}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def cost_matrix(x: np.ndarray, y: np.ndarray, cost_exponent: int = 2) -> np.ndarray:
    if cost_exponent == 2:
        return cdist(x, y, "sqeuclidean")
    if cost_exponent == 1:
        return cdist(x, y, "euclidean")
    raise ValueError(f"cost_exponent must be 1 or 2, got {cost_exponent}")


def transport_cost(
    coupling: Coupling,
    source: EmpiricalSnapshot,
    target: EmpiricalSnapshot,
    cost_exponent: int = 2,
) -> float:
    """Objective value of a plan: sum of mass times pairwise cost."""
    diff = source.points[coupling.source_indices] - target.points[coupling.target_indices]
    dist_sq = (diff**2).sum(axis=1)
    if cost_exponent == 2:
        return float(coupling.masses @ dist_sq)
    return float(coupling.masses @ np.sqrt(dist_sq))


# ---------------------------------------------------------------------------
# exact solver


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.abs(w - 1.0 / w.shape[0]).max() < 1e-12)


class _SimplexError(RuntimeError):
    pass


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    """Initial basic feasible solution: n + m - 1 cells forming a spanning tree."""
    n, m = a.shape[0], b.shape[0]
    remaining_a = a.copy()
    remaining_b = b.copy()
    alloc: dict[tuple[int, int], float] = {}
    i = j = 0
    while True:
        q = min(remaining_a[i], remaining_b[j])
        alloc[(i, j)] = q
        remaining_a[i] -= q
        remaining_b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        # advance exactly one index per step so the basis stays a tree
        if j == m - 1 or (remaining_a[i] <= remaining_b[j] and i < n - 1):
            i += 1
        else:
            j += 1
    return alloc


def _transport_simplex(
    a: np.ndarray, b: np.ndarray, cost: np.ndarray
) -> dict[tuple[int, int], float]:
    """Minimize <cost, plan> over plans with marginals (a, b).

    Entering variable: most negative reduced cost, first in row-major order on
    ties; after a pivot budget, falls back to Bland's rule (first negative in
    row-major order), which cannot cycle.  Leaving variable: smallest
    allocation on the shrinking arcs, lowest (i, j) on ties.
    """
    n, m = cost.shape
    alloc = _northwest_corner(a, b)
    # tree adjacency over nodes: rows 0..n-1, columns n..n+m-1
    adj: list[set[int]] = [set() for _ in range(n + m)]
    for (i, j) in alloc:
        adj[i].add(n + j)
        adj[n + j].add(i)

    scale = max(1.0, float(np.abs(cost).max()))
    opt_tol = 1e-11 * scale
    bland_after = 50 * (n + m)
    max_pivots = 2000 + 400 * (n + m)

    u = np.empty(n)
    v = np.empty(m)
    parent = np.empty(n + m, dtype=np.int64)
    order = np.empty(n + m, dtype=np.int64)

    for pivot in range(max_pivots):
        # duals from u[0] = 0 by walking the spanning tree
        parent.fill(-1)
        order[0] = 0
        parent[0] = 0
        u[0] = 0.0
        head, count = 0, 1
        while head < count:
            node = order[head]
            head += 1
            for nb in adj[node]:
                if parent[nb] == -1:
                    parent[nb] = node
                    order[count] = nb
                    count += 1
                    if nb >= n:
                        v[nb - n] = cost[node, nb - n] - u[node]
                    else:
                        u[nb] = cost[nb, parent[nb] - n] - v[parent[nb] - n]
        if count != n + m:
            raise _SimplexError("basis lost connectivity")

        reduced = cost - u[:, None] - v[None, :]
        if pivot < bland_after:
            flat = int(np.argmin(reduced))  # argmin takes the first hit: lowest (i, j)
            ei, ej = divmod(flat, m)
            if reduced[ei, ej] >= -opt_tol:
                break
        else:
            candidates = np.argwhere(reduced < -opt_tol)
            if candidates.shape[0] == 0:
                break
            ei, ej = int(candidates[0, 0]), int(candidates[0, 1])

        # cycle: entering arc plus the unique tree path between its endpoints
        path = _tree_path(adj, ei, n + ej, n + m)
        # path edges alternate -,+,-,... starting and ending with - (odd length)
        minus_edges = []
        plus_edges = []
        for k in range(len(path) - 1):
            x, y = path[k], path[k + 1]
            cell = (x, y - n) if x < n else (y, x - n)
            (minus_edges if k % 2 == 0 else plus_edges).append(cell)
        theta = min(alloc[c] for c in minus_edges)
        leaving = min(c for c in minus_edges if alloc[c] <= theta)
        for c in minus_edges:
            alloc[c] -= theta
        for c in plus_edges:
            alloc[c] += theta
        alloc[(ei, ej)] = theta
        del alloc[leaving]
        adj[ei].add(n + ej)
        adj[n + ej].add(ei)
        adj[leaving[0]].discard(n + leaving[1])
        adj[n + leaving[1]].discard(leaving[0])
    else:
        raise _SimplexError(
            f"transportation simplex exceeded {max_pivots} pivots "
            "(degenerate cycling); inputs may be pathological"
        )
    return alloc


def _tree_path(adj: list[set[int]], start: int, goal: int, n_nodes: int) -> list[int]:
    parent = {start: start}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                stack.append(nb)
    path = [goal]
    while path[-1] != start:
        path.append(parent[path[-1]])
    path.reverse()
    return path


def solve_exact(
    source: EmpiricalSnapshot,
    target: EmpiricalSnapshot,
    cost_exponent: int = 2,
    source_time: int | None = None,
    target_time: int | None = None,
) -> Coupling:
    """Optimal plan between two snapshots under squared (2) or plain (1) distance.

    Deterministic: ties in pivoting are broken toward the lexicographically
    lowest cell.  For uniform weights with equal particle counts the plan is a
    permutation and is found by assignment instead of simplex.
    """
    _count_solve()
    st = source.time_index if source_time is None else source_time
    tt = target.time_index if target_time is None else target_time
    if tt <= st:
        tt = st + 1
    cost = cost_matrix(source.points, target.points, cost_exponent)
    n, m = cost.shape
    if n == m and _is_uniform(source.weights) and _is_uniform(target.weights):
        rows, cols = linear_sum_assignment(cost)
        masses = np.full(n, 1.0 / n)
        coupling = Coupling(st, tt, rows, cols, masses)
    else:
        alloc = _transport_simplex(source.weights, target.weights, cost)
        cells = sorted(c for c, q in alloc.items() if q > 0)
        src = np.array([c[0] for c in cells], dtype=np.int64)
        tgt = np.array([c[1] for c in cells], dtype=np.int64)
        masses = np.array([alloc[c] for c in cells])
        coupling = Coupling(st, tt, src, tgt, masses / masses.sum())
    check_coupling_marginals(coupling, source, target)
    return coupling


# ---------------------------------------------------------------------------
# entropic solver


def solve_sinkhorn(
    source: EmpiricalSnapshot,
    target: EmpiricalSnapshot,
    epsilon: float = 1.0,
    max_iters: int = 2000,
    tolerance: float = 1e-6,
    cost_exponent: int = 2,
    source_time: int | None = None,
    target_time: int | None = None,
) -> Coupling:
    """Entropically regularized plan via log-domain Sinkhorn iterations.

    Converged when both marginals match within ``tolerance`` in L1.  If the
    iteration cap is hit first, the best iterate is returned with
    ``converged=False`` and a warning is logged.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    _count_solve()
    st = source.time_index if source_time is None else source_time
    tt = target.time_index if target_time is None else target_time
    if tt <= st:
        tt = st + 1
    cost = cost_matrix(source.points, target.points, cost_exponent)
    with np.errstate(divide="ignore"):
        log_a = np.log(source.weights)
        log_b = np.log(target.weights)
    f = np.zeros(cost.shape[0])
    g = np.zeros(cost.shape[1])
    converged = False
    for _ in range(max_iters):
        f = epsilon * (log_a - logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - cost) / epsilon, axis=0))
        finite_f = f[source.weights > 0]
        if not np.all(np.isfinite(finite_f)):
            raise FloatingPointError(
                "Sinkhorn potentials overflowed; epsilon is too small for this "
                "cost scale, increase it"
            )
        # column marginals are exact right after the g update; track rows too
        log_plan = (f[:, None] + g[None, :] - cost) / epsilon
        row_err = float(np.abs(np.exp(logsumexp(log_plan, axis=1)) - source.weights).sum())
        col_err = float(np.abs(np.exp(logsumexp(log_plan, axis=0)) - target.weights).sum())
        if row_err < tolerance and col_err < tolerance:
            converged = True
            break
    if not converged:
        logger.warning(
            "Sinkhorn did not reach tolerance %.1e in %d iterations "
            "(marginal errors %.2e / %.2e); returning best iterate",
            tolerance,
            max_iters,
            row_err,
            col_err,
        )
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    src, tgt = np.nonzero(plan > 0)
    masses = plan[src, tgt]
    return Coupling(st, tt, src, tgt, masses / masses.sum(), converged=converged)


# ---------------------------------------------------------------------------
# trajectory-level operations


def _solve_pair(
    source: EmpiricalSnapshot, target: EmpiricalSnapshot, config: OtConfig
) -> Coupling:
    if config.method == "exact":
        return solve_exact(source, target)
    return solve_sinkhorn(
        source,
        target,
        epsilon=config.epsilon,
        max_iters=config.max_iters,
        tolerance=config.tolerance,
    )


def _couple_batched(
    source: EmpiricalSnapshot, target: EmpiricalSnapshot, config: OtConfig
) -> Coupling:
    """Split both snapshots into aligned random batches, solve each pair of
    batches independently, then merge with each sub-plan carrying its batch's
    share of the total mass (1/num_batches for equal-sized batches)."""
    n_batches = int(np.ceil(max(source.n_particles, target.n_particles) / config.batch_size))
    rng = np.random.default_rng(
        np.random.SeedSequence(config.seed, spawn_key=(source.time_index, target.time_index))
    )
    src_parts = np.array_split(rng.permutation(source.n_particles), n_batches)
    tgt_parts = np.array_split(rng.permutation(target.n_particles), n_batches)
    all_src, all_tgt, all_mass = [], [], []
    for src_idx, tgt_idx in zip(src_parts, tgt_parts):
        sw = source.weights[src_idx]
        tw = target.weights[tgt_idx]
        share = float(sw.sum())
        sub_source = EmpiricalSnapshot(source.points[src_idx], sw / sw.sum(), source.time_index)
        sub_target = EmpiricalSnapshot(target.points[tgt_idx], tw / tw.sum(), target.time_index)
        sub = _solve_pair(sub_source, sub_target, config)
        all_src.append(src_idx[sub.source_indices])
        all_tgt.append(tgt_idx[sub.target_indices])
        all_mass.append(sub.masses * share)
    return Coupling(
        source.time_index,
        target.time_index,
        np.concatenate(all_src),
        np.concatenate(all_tgt),
        np.concatenate(all_mass),
    )


def couple_snapshots(
    source: EmpiricalSnapshot, target: EmpiricalSnapshot, config: OtConfig
) -> Coupling:
    if max(source.n_particles, target.n_particles) > config.batch_size:
        coupling = _couple_batched(source, target, config)
    else:
        coupling = _solve_pair(source, target, config)
    check_coupling_marginals(coupling, source, target)
    return coupling


def couple_trajectory(
    trajectory: PopulationTrajectory, config: OtConfig | None = None
) -> list[Coupling]:
    """Couple every consecutive snapshot pair; independent pairs may run on
    ``config.jobs`` threads, with output order fixed by timestep."""
    config = config or OtConfig()
    pairs = list(zip(trajectory.snapshots[:-1], trajectory.snapshots[1:]))
    if config.jobs > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            return list(pool.map(lambda p: couple_snapshots(p[0], p[1], config), pairs))
    return [couple_snapshots(s, t, config) for s, t in pairs]


def emd(source: EmpiricalSnapshot, target: EmpiricalSnapshot) -> float:
    """Earth mover's distance: optimal cost under the plain Euclidean metric
    (no root, the cost is already a distance)."""
    coupling = solve_exact(source, target, cost_exponent=1)
    return transport_cost(coupling, source, target, cost_exponent=1)


def trajectory_emd(
    predicted: PopulationTrajectory, reference: PopulationTrajectory
) -> tuple[float, float, list[float]]:
    """EMD between predicted and reference snapshots at times 1..T.

    Returns (mean, population std, per-step values).
    """
    if predicted.n_snapshots != reference.n_snapshots:
        raise ValueError(
            f"trajectories disagree on length: {predicted.n_snapshots} vs {reference.n_snapshots}"
        )
    values = [
        emd(p, r)
        for p, r in zip(predicted.snapshots[1:], reference.snapshots[1:])
    ]
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std()), values
