"""Concave-program upper bound on the optimal mechanism's expected objective.

The program maximises ``sum_i Ḡ_i(q_i)`` over marginals with ``sum_{i in S} q_i <= rank(S)``.
Each ``Ḡ_i`` is concave and piecewise linear, so writing ``q_i`` as the sum of
how far it runs along each rising hull segment turns it into a linear program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, csr_matrix, hstack

from .errors import CapacityError, MechlabError
from .mech import (
    Instance,
    benchmark_for,
    build_greedy_spm,
    expected_performance,
    reduction_quantities,
    win_probabilities,
)
from .montecarlo import Estimate
from .setsys import EXHAUSTIVE_LIMIT, PartitionMatroid, UniformMatroid, subset_bits, weighted_rank_table

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class RankConstraints:
    """Rows ``sum_{i in S} q_i <= rank(S)`` as a 0/1 matrix and right-hand side."""

    rows: np.ndarray
    rhs: np.ndarray

    def violation(self, q: np.ndarray) -> float:
        if len(self.rhs) == 0:
            return 0.0
        return float(max(0.0, np.max(self.rows @ q - self.rhs)))


def rank_constraints(sys) -> RankConstraints:
    """Constraint rows for ``sys``: structural for uniform and partition kinds, enumerated otherwise.

    Enumeration keeps singletons and every set whose rank is below its size;
    the remaining sets are implied by the singleton rows.
    """
    n = sys.n
    if isinstance(sys, UniformMatroid):
        rows = np.vstack([np.ones((1, n)), np.eye(n)])
        return RankConstraints(rows, np.concatenate([[sys.k], np.ones(n)]))
    if isinstance(sys, PartitionMatroid):
        rows, rhs = [], []
        for part, cap in zip(sys.parts, sys.caps):
            row = np.zeros(n)
            row[list(part)] = 1.0
            rows.append(row)
            rhs.append(min(cap, len(part)))
        return RankConstraints(np.vstack(rows + [np.eye(n)]), np.concatenate([rhs, np.ones(n)]))
    if n > EXHAUSTIVE_LIMIT:
        raise CapacityError("rank-constraint enumeration", n, EXHAUSTIVE_LIMIT)
    bits = subset_bits(n)
    sizes = bits.sum(axis=1)
    ranks = np.rint(weighted_rank_table(sys, np.ones(n)))
    keep = (sizes > 0) & ((ranks < sizes) | (sizes == 1))
    return RankConstraints(bits[keep].astype(float), ranks[keep])


@dataclass(frozen=True, eq=False)
class CPSolution:
    q_star: np.ndarray
    value: float
    constraints: RankConstraints


def solve_cp(instance: Instance) -> CPSolution:
    """Optimal marginals and value of the concave program for ``instance``."""
    n = instance.n
    cons = rank_constraints(instance.sys)
    curves = [instance.curve(i, instance.objective) for i in range(n)]
    # one variable per rising hull segment, then the n marginals
    seg_agent, seg_slope, seg_len = [], [], []
    for i, c in enumerate(curves):
        up = np.flatnonzero(c.slopes > 0)
        seg_agent.extend([i] * len(up))
        seg_slope.extend(c.slopes[up])
        seg_len.extend(np.diff(c.qs)[up])
    m = len(seg_agent)
    base = float(sum(c.values[0] for c in curves))
    if m == 0:
        return CPSolution(np.zeros(n), base, cons)
    cost = np.concatenate([-np.asarray(seg_slope), np.zeros(n)])
    link = hstack([coo_matrix((-np.ones(m), (seg_agent, np.arange(m))), shape=(n, m)),
                   csr_matrix(np.eye(n))]).tocsr()
    ub = hstack([csr_matrix((len(cons.rhs), m)), csr_matrix(cons.rows)]).tocsr()
    bounds = [(0.0, L) for L in seg_len] + [(0.0, None)] * n
    res = linprog(cost, A_ub=ub, b_ub=cons.rhs, A_eq=link, b_eq=np.zeros(n),
                  bounds=bounds, method="highs")
    if res.status != 0:
        raise MechlabError(f"concave program failed: {res.message}")
    q = np.clip(res.x[m:], 0.0, 1.0)
    value = base + float(np.asarray(seg_slope) @ res.x[:m])
    return CPSolution(q, value, cons)


@dataclass(frozen=True)
class UpperBoundCheck:
    cp_value: float
    myerson: Estimate
    ew_rank: Estimate
    ok: bool


def upper_bound_check(instance: Instance, samples: int, seed: int = 42, workers: int | None = None,
                      sigmas: float = 3.0) -> UpperBoundCheck:
    """Compare the program value with the simulated optimal mechanism and ``ew_rank``."""
    cp = solve_cp(instance)
    wp = win_probabilities(instance, samples=samples, seed=seed, workers=workers)
    policy = build_greedy_spm(instance, wp.q)
    red = reduction_quantities(instance, policy, samples, seed, workers=workers)
    opt = expected_performance(instance, benchmark_for(instance.objective), samples, seed, tag=3,
                               workers=workers)
    ok = (cp.value >= opt.mean - sigmas * opt.stderr - FEAS_TOL
          and cp.value >= red.ew_rank.mean - sigmas * red.ew_rank.stderr - FEAS_TOL)
    return UpperBoundCheck(cp.value, opt, red.ew_rank, bool(ok))
