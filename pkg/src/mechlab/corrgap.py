"""Multilinear extensions, the binomial function Φ(n, k) and correlation gaps.

The correlation gap of a set function ``f`` at marginals ``q`` compares the best
correlated distribution with marginals ``q`` (a linear program over all subsets)
against the independent one (the multilinear extension).  ``0/0`` is read as 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .errors import CapacityError, DomainError, MechlabError
from .montecarlo import Estimate, estimate
from .setsys import (
    SetSystem,
    UniformMatroid,
    greedy_order,
    greedy_table,
    subset_bits,
    weighted_rank,
    weighted_rank_table,
)

EXACT_LIMIT = 20
LP_LIMIT = 12
GAP_TOL = 1e-9


# -- set functions -----------------------------------------------------------------


class SetFunction:
    """A set function on ``{0..n-1}`` that can also tabulate itself over all masks."""

    def __call__(self, S: Iterable[int]) -> float:
        raise NotImplementedError

    def table(self, n: int) -> np.ndarray:
        if n > EXACT_LIMIT:
            raise CapacityError("set-function table", n, EXACT_LIMIT)
        bits = subset_bits(n)
        return np.array([self(np.flatnonzero(row)) for row in bits], dtype=float)


@dataclass(frozen=True)
class KUniformRank(SetFunction):
    """``min(|S|, k)``."""

    k: int

    def __call__(self, S):
        return float(min(len(list(S)), self.k))

    def table(self, n):
        if n > EXACT_LIMIT:
            raise CapacityError("set-function table", n, EXACT_LIMIT)
        return np.minimum(subset_bits(n).sum(axis=1), self.k).astype(float)


@dataclass(frozen=True)
class WeightedRank(SetFunction):
    """Weighted rank ``w*(S)`` of a set system."""

    sys: SetSystem
    w: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))

    def __call__(self, S):
        return weighted_rank(self.sys, S, self.w)

    def table(self, n=None):
        if n is not None and n != self.sys.n:
            raise DomainError("ground-set size mismatch")
        if self.sys.n > EXACT_LIMIT:
            raise CapacityError("weighted-rank table", self.sys.n, EXACT_LIMIT)
        return weighted_rank_table(self.sys, self.w)


@dataclass(frozen=True)
class TableFunction(SetFunction):
    """A set function given by its values on all masks."""

    values: tuple[float, ...]

    def __call__(self, S):
        mask = sum(1 << int(i) for i in S)
        return self.values[mask]

    def table(self, n):
        if len(self.values) != 1 << n:
            raise DomainError("table size does not match 2**n")
        return np.asarray(self.values, dtype=float)


def _uniform_weights(f: SetFunction) -> tuple[int, float] | None:
    """``(k, c)`` when ``f = c * min(|S|, k)``, else None."""
    if isinstance(f, KUniformRank):
        return f.k, 1.0
    if isinstance(f, WeightedRank) and isinstance(f.sys, UniformMatroid):
        w = np.asarray(f.w)
        if w.size and np.all(w == w[0]):
            return f.sys.k, float(w[0])
    return None


def _tabulate(f: SetFunction | Callable, n: int) -> np.ndarray:
    if isinstance(f, SetFunction):
        return f.table(n)
    if n > EXACT_LIMIT:
        raise CapacityError("set-function table", n, EXACT_LIMIT)
    return np.array([f(np.flatnonzero(row)) for row in subset_bits(n)], dtype=float)


# -- multilinear extension ---------------------------------------------------------


def _marginals(q: Sequence[float], n: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if n is not None and q.size != n:
        raise DomainError(f"marginal vector must have length {n}")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise DomainError("marginals must lie in [0, 1]")
    return q


def count_distribution(q: Sequence[float]) -> np.ndarray:
    """Poisson-binomial law of ``|S|`` under independent inclusion."""
    dist = np.zeros(len(q) + 1)
    dist[0] = 1.0
    for i, qi in enumerate(q):
        dist[1:i + 2] = dist[1:i + 2] * (1 - qi) + dist[:i + 1] * qi
        dist[0] *= 1 - qi
    return dist


def independent_probs(q: Sequence[float]) -> np.ndarray:
    """Probability of every mask under independent inclusion; bit ``i`` is element ``i``."""
    p = np.ones(1)
    for qi in q:
        p = np.concatenate([p * (1 - qi), p * qi])
    return p


def _uniform_weighted_multilinear(w: np.ndarray, k: int, q: np.ndarray) -> float:
    # element i contributes w_i when present and fewer than k heavier elements are present
    total = 0.0
    dist = np.zeros(k + 1)
    dist[0] = 1.0
    for i in greedy_order(w):
        total += w[i] * q[i] * dist[:k].sum()
        shifted = np.zeros(k + 1)
        shifted[1:] = dist[:k]
        shifted[k] += dist[k]
        dist = dist * (1 - q[i]) + shifted * q[i]
    return float(total)


def multilinear(f: SetFunction | Callable, q: Sequence[float]) -> float:
    """Exact ``E[f(S)]`` with each ``i`` in ``S`` independently with probability ``q_i``.

    ``min(|S|, k)`` and weighted uniform ranks use a counting recursion at any
    size; other functions are tabulated, which needs ``n <= 20``.
    """
    q = _marginals(q)
    n = q.size
    sym = _uniform_weights(f) if isinstance(f, SetFunction) else None
    if sym is not None:
        k, c = sym
        counts = count_distribution(q)
        return c * float(np.minimum(np.arange(n + 1), k) @ counts)
    if isinstance(f, WeightedRank) and isinstance(f.sys, UniformMatroid):
        return _uniform_weighted_multilinear(np.asarray(f.w), f.sys.k, q)
    if n > EXACT_LIMIT:
        raise CapacityError("exact multilinear extension", n, EXACT_LIMIT)
    return float(_tabulate(f, n) @ independent_probs(q))


def multilinear_mc(f: SetFunction | Callable, q: Sequence[float], samples: int,
                   seed: int = 42) -> Estimate:
    """Monte-Carlo estimate of the multilinear extension."""
    q = _marginals(q)
    if samples < 1:
        raise DomainError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    draws = rng.random((samples, q.size)) < q
    return estimate(np.array([f(np.flatnonzero(row)) for row in draws], dtype=float))


# -- Φ(n, k) -------------------------------------------------------------------------


def _counts(n, k):
    if int(n) != n or int(k) != k:
        raise DomainError("n and k must be integers")
    n, k = int(n), int(k)
    if k < 1 or n < 1:
        raise DomainError("need n >= 1 and k >= 1")
    if k > n:
        raise DomainError(f"k={k} exceeds n={n}")
    return n, k


def phi(n: int, k: int) -> float:
    """``E[min(X, k)]`` for ``X ~ Binomial(n, k/n)``."""
    n, k = _counts(n, k)
    if k == n:
        return float(n)
    t = np.arange(k, dtype=float)
    p = k / n
    logpmf = (gammaln(n + 1) - gammaln(t + 1) - gammaln(n - t + 1)
              + t * math.log(p) + (n - t) * math.log1p(-p))
    # E[min(X,k)] = k - sum_{t<k} (k-t) Pr[X=t]
    return k - math.fsum((k - t) * np.exp(logpmf))


def phi_limit(k: int) -> float:
    """Limit of ``phi(n, k)`` as ``n`` grows: ``k - k^(k+1) / (e^k k!)``."""
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer")
    k = int(k)
    return k - math.exp((k + 1) * math.log(k) - k - math.lgamma(k + 1))


def kuniform_gap(n: int, k: int) -> float:
    """Correlation gap of ``min(|S|, k)`` on ``n`` elements."""
    return k / phi(n, k)


# -- correlated optimum ----------------------------------------------------------------


@dataclass(frozen=True)
class SetDistribution:
    """Finitely supported distribution over subsets."""

    support: tuple[tuple[frozenset[int], float], ...]

    def __post_init__(self):
        probs = [p for _, p in self.support]
        if any(p < -GAP_TOL for p in probs) or abs(sum(probs) - 1) > 1e-9:
            raise DomainError("probabilities must be non-negative and sum to 1")

    def marginals(self, n: int) -> np.ndarray:
        q = np.zeros(n)
        for S, p in self.support:
            for i in S:
                q[i] += p
        return q

    def expectation(self, f: Callable[[Iterable[int]], float]) -> float:
        return math.fsum(p * f(S) for S, p in self.support)


@lru_cache(maxsize=16)
def _marginal_matrix(n: int) -> np.ndarray:
    bits = subset_bits(n).T.astype(float)
    return np.vstack([bits, np.ones((1, 1 << n))])


def _lp_max(values: np.ndarray, q: np.ndarray) -> tuple[float, np.ndarray]:
    n = q.size
    res = linprog(-values, A_eq=_marginal_matrix(n), b_eq=np.append(q, 1.0),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise MechlabError(f"correlated LP failed: {res.message}")
    x = np.clip(res.x, 0.0, None)
    return float(values @ x), x


def max_correlated_value(f: SetFunction | Callable, q: Sequence[float],
                         table: np.ndarray | None = None) -> tuple[float, SetDistribution]:
    """Best ``E[f(S)]`` over all distributions with marginals ``q``, with a witness."""
    q = _marginals(q)
    n = q.size
    if n > LP_LIMIT:
        raise CapacityError("correlated LP", n, LP_LIMIT)
    values = _tabulate(f, n) if table is None else table
    value, x = _lp_max(values, q)
    keep = np.flatnonzero(x > 1e-12)
    probs = x[keep] / x[keep].sum()
    bits = subset_bits(n)
    support = tuple((frozenset(np.flatnonzero(bits[m]).tolist()), float(p)) for m, p in zip(keep, probs))
    return value, SetDistribution(support)


def _ratio(num: float, den: float) -> float:
    if abs(den) <= 1e-15:
        return 1.0 if abs(num) <= 1e-15 else math.inf
    return num / den


# -- gap search --------------------------------------------------------------------


@dataclass(frozen=True)
class GapReport:
    numerator: float
    denominator: float
    gap: float
    witness: SetDistribution | None
    method: str
    q: np.ndarray = field(compare=False)
    closed_form: float | None = None
    evaluations: int = 0


def _diagonal_levels(n: int) -> list[float]:
    levels = {j / n for j in range(1, n + 1)} | {j / 10 for j in range(1, 11)}
    return sorted(levels)


class _Search:
    """Coordinate search over marginals for the best (or worst) value of ``score``."""

    def __init__(self, score: Callable[[np.ndarray], float], n: int, budget: int, sign: float):
        self.score = score
        self.n = n
        self.budget = budget
        self.sign = sign
        self.evals = 0
        self.best_q: np.ndarray | None = None
        self.best = -math.inf

    def eval(self, q: np.ndarray) -> float:
        self.evals += 1
        s = self.sign * self.score(q)
        if s > self.best:
            self.best, self.best_q = s, q.copy()
        return s

    def exhausted(self) -> bool:
        return self.evals >= self.budget

    def ascend(self, q: np.ndarray, value: float, step: float = 0.1, tol: float = 1e-6):
        n = self.n
        dirs = [np.eye(n)[i] * s for i in range(n) for s in (1.0, -1.0)]
        dirs += [np.ones(n), -np.ones(n)]
        while step >= tol and not self.exhausted():
            improved = False
            for d in dirs:
                if self.exhausted():
                    break
                cand = np.clip(q + step * d, 0.0, 1.0)
                if np.array_equal(cand, q):
                    continue
                v = self.eval(cand)
                if v > value + 1e-15:
                    q, value, improved = cand, v, True
            if not improved:
                step /= 2
        return q, value


def correlation_gap(f: SetFunction | Callable, n: int, search: str = "coordinate_ascent",
                    budget: int = 400, seed: int = 0, starts: int = 3) -> GapReport:
    """Search marginals for the largest correlated/independent ratio.

    The result is attained at the reported ``q`` and so is a certified lower
    bound on the gap.  Diagonal marginals ``q_i = t`` are always tried first;
    ``grid`` then tries random points, ``coordinate_ascent`` climbs from the
    best few starting points.  For ``min(|S|, k)`` the closed form is attached.
    """
    if n > LP_LIMIT:
        raise CapacityError("correlation-gap search", n, LP_LIMIT)
    if search not in ("grid", "coordinate_ascent"):
        raise DomainError(f"unknown search {search!r}")
    table = _tabulate(f, n)
    sym = _uniform_weights(f) if isinstance(f, SetFunction) else None
    closed = kuniform_gap(n, min(sym[0], n)) if sym is not None else None

    def score(q):
        num, _ = _lp_max(table, q)
        return _ratio(num, float(table @ independent_probs(q)))

    srch = _Search(score, n, budget, 1.0)
    rng = np.random.default_rng(seed)
    seen = []
    for t in _diagonal_levels(n):
        q = np.full(n, t)
        seen.append((srch.eval(q), q))
    if search == "grid":
        while not srch.exhausted():
            srch.eval(rng.random(n))
    else:
        for _ in range(starts):
            q = rng.random(n)
            seen.append((srch.eval(q), q))
        seen.sort(key=lambda e: -e[0])
        for value, q in seen[:starts]:
            if srch.exhausted():
                break
            srch.ascend(q, value)

    q = srch.best_q
    num, witness = max_correlated_value(f, q, table=table)
    den = float(table @ independent_probs(q))
    return GapReport(num, den, _ratio(num, den), witness, "lp_exact", q, closed, srch.evals)


def closed_form_gap(n: int, k: int) -> GapReport:
    """Gap of ``min(|S|, k)`` from the closed form, attained at ``q_i = k/n``."""
    value = kuniform_gap(n, k)
    q = np.full(n, k / n)
    return GapReport(float(k), phi(n, k), value, None, "closed_form", q, value, 0)


# -- greedy as a gap certificate ------------------------------------------------------


@dataclass(frozen=True)
class GreedyGapCheck:
    holds: bool
    worst_ratio: float
    worst_q: np.ndarray = field(compare=False)
    evaluations: int = 0

    def __bool__(self) -> bool:
        return self.holds


def greedy_verifies_gap(sys: SetSystem, w: Sequence[float], beta: float, trials: int = 200,
                        seed: int = 0, tol: float = 1e-9) -> GreedyGapCheck:
    """Search for marginals where greedy under independence falls below ``1/beta`` of the correlated optimum.

    The ratio is ``E_indep[greedy(S)] / max_correlated E[w*(S)]``.  Candidates
    are diagonal marginals, ``trials`` random points and a descent from the
    worst few.
    """
    n = sys.n
    if n > LP_LIMIT:
        raise CapacityError("greedy gap check", n, LP_LIMIT)
    if beta <= 0:
        raise DomainError("beta must be positive")
    rank_t = weighted_rank_table(sys, w)
    greedy_t = greedy_table(sys, w)

    def score(q):
        num = float(greedy_t @ independent_probs(q))
        den, _ = _lp_max(rank_t, q)
        return _ratio(num, den)

    budget = trials + len(_diagonal_levels(n)) + 40 * (2 * n + 2)
    srch = _Search(score, n, budget, -1.0)
    rng = np.random.default_rng(seed)
    seen = []
    for t in _diagonal_levels(n):
        q = np.full(n, t)
        seen.append((srch.eval(q), q))
    for _ in range(trials):
        # mix dense and sparse random marginals
        q = rng.random(n) * (rng.random(n) < rng.uniform(0.3, 1.0))
        seen.append((srch.eval(q), q))
    seen.sort(key=lambda e: -e[0])
    for value, q in seen[:3]:
        srch.ascend(q, value, step=0.05, tol=1e-4)
    worst = -srch.best
    return GreedyGapCheck(worst >= 1.0 / beta - tol, worst, srch.best_q, srch.evals)


# -- lower-bound construction ---------------------------------------------------------


@dataclass(frozen=True)
class MinisetRow:
    n: int
    dependent: float
    independent: float
    ratio: float
    mc_mean: float | None = None
    mc_stderr: float | None = None


def expected_max_binomial(n: int) -> float:
    """``E[max_i X_i]`` for ``n`` independent ``X_i ~ Binomial(n, 1/n)``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    p = 1.0 / n
    pmf = [math.comb(n, t) * p ** t * (1 - p) ** (n - t) for t in range(n + 1)]
    cdf = np.cumsum(pmf)
    # E[max] = sum_{m>=1} Pr[max >= m] = sum_m (1 - Pr[X <= m-1]^n)
    return math.fsum(1 - min(1.0, cdf[m - 1]) ** n for m in range(1, n + 1))


def miniset_gap_profile(n_list: Sequence[int], samples: int = 0, seed: int = 42) -> list[MinisetRow]:
    """Correlated versus independent value of the miniset rank for each ``n``.

    The correlated distribution picks a row uniformly and takes all of it, so
    its value is ``n``.  Independently, every element appears with probability
    ``1/n`` and the rank is the fullest row.  ``samples > 0`` adds a Monte-Carlo
    cross-check of the independent value.
    """
    rows = []
    for n in n_list:
        indep = expected_max_binomial(int(n))
        mc_mean = mc_err = None
        if samples > 0:
            rng = np.random.default_rng([seed, int(n)])
            draws = rng.random((samples, n, n)) < 1.0 / n
            est = estimate(draws.sum(axis=2).max(axis=1))
            mc_mean, mc_err = est.mean, est.stderr
        rows.append(MinisetRow(int(n), float(n), indep, n / indep, mc_mean, mc_err))
    return rows
