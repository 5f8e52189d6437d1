"""Mechanisms over a set system: the optimal benchmark, VCG, VCG with reserves and greedy posted prices.

Everything runs on batches of value profiles (shape ``(B, n)``).  Profiles are
drawn first and posted prices second from the same stream, so a posted-price
mechanism and VCG with reserves see identical draws for a given seed.
Ties between agents are broken by ascending id throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .corrgap import WeightedRank, independent_probs, multilinear
from .errors import CapacityError, DomainError, UnsupportedError
from .montecarlo import Estimate, estimate, run_chunks
from .setsys import (
    TABLE_LIMIT,
    SetSystem,
    greedy_order,
    greedy_select,
    greedy_table,
    max_weight_feasible,
)
from .valuation import (
    DEFAULT_GRID,
    Discrete,
    REVENUE,
    IronedCurve,
    Objective,
    PricePolicy,
    ValuationDistribution,
    exact_slope,
    gain_curve,
    iron,
    optimal_price_policy,
)

BISECTION_STEPS = 64
GRID_ENUM_LIMIT = 10 ** 7


# -- instances ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instance:
    """Independent agents with value laws ``dists`` competing for feasible sets of ``sys``."""

    dists: tuple[ValuationDistribution, ...]
    sys: SetSystem
    objective: Objective = REVENUE
    grid_size: int = DEFAULT_GRID
    _curves: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dists", tuple(self.dists))
        if len(self.dists) != self.sys.n:
            raise DomainError(f"{len(self.dists)} agents but the set system has {self.sys.n} elements")

    @property
    def n(self) -> int:
        return len(self.dists)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([d.support_bound for d in self.dists])

    def curve(self, i: int, objective: Objective | None = None) -> IronedCurve:
        """Ironed gain curve of agent ``i`` (revenue unless another objective is given)."""
        obj = REVENUE if objective is None else objective
        key = (self.dists[i], obj.kind, id(obj.gain))
        if key not in self._curves:
            self._curves[key] = iron(gain_curve(self.dists[i], obj, self.grid_size))
        return self._curves[key]

    def sample_profiles(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.column_stack([d.sample(rng, size) for d in self.dists])

    def check_profile(self, v: Sequence[float]) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise DomainError(f"profile must have {self.n} values")
        if np.any(v < 0) or np.any(v > self.bounds + 1e-12):
            raise DomainError("profile values must lie in [0, L_i]")
        return v


@dataclass(frozen=True)
class MechanismOutcome:
    winners: frozenset[int]
    payments: tuple[float, ...]
    objective_value: float


@dataclass(frozen=True, eq=False)
class BatchOutcome:
    """Outcomes of ``B`` profiles: winner indicators, payments and objective values."""

    winners: np.ndarray
    payments: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def outcome(self, b: int) -> MechanismOutcome:
        return MechanismOutcome(frozenset(np.flatnonzero(self.winners[b]).tolist()),
                                tuple(self.payments[b].tolist()), float(self.values[b]))

    @staticmethod
    def concat(parts: Sequence["BatchOutcome"]) -> "BatchOutcome":
        return BatchOutcome(np.concatenate([p.winners for p in parts]),
                            np.concatenate([p.payments for p in parts]),
                            np.concatenate([p.values for p in parts]))


def _objective_values(objective: Objective, profiles, winners, payments) -> np.ndarray:
    gains = np.where(winners, objective.g(profiles, payments), 0.0)
    return gains.sum(axis=1)


# -- ironed virtual values -----------------------------------------------------------


def ironed_virtual(dist: ValuationDistribution, ironed: IronedCurve, v):
    """Left derivative of the ironed revenue curve at ``q = Pr[V >= v]``.

    On stretches where no ironing happened and the law has a density, the exact
    derivative of the revenue curve is used, clipped to the neighbouring hull
    slopes so the result stays monotone.
    """
    arr = np.asarray(v, dtype=float)
    q = np.asarray(dist.tail_prob(arr), dtype=float)
    j = ironed.segment_index(q)
    slopes = ironed.slopes
    out = slopes[j]
    ex = exact_slope(dist, REVENUE, q)
    if ex is not None:
        last = len(slopes) - 1
        upper = np.where(j > 0, slopes[np.maximum(j - 1, 0)], np.inf)
        lower = np.where(j < last, slopes[np.minimum(j + 1, last)], -np.inf)
        ex = np.asarray(ex, dtype=float)
        use = ironed.tight[j] & np.isfinite(ex)
        out = np.where(use, np.clip(np.where(np.isfinite(ex), ex, 0.0), lower, upper), out)
    return float(out) if np.ndim(out) == 0 else out


# -- allocation with thresholds ------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    """Winner ``i`` keeps winning while its weight beats ``value`` (strictly if ``strict``)."""

    agent: int
    value: float
    strict: bool

    def beaten_by(self, x):
        return x > self.value if self.strict else x >= self.value


def _matroid_thresholds(sys: SetSystem, w: np.ndarray) -> tuple[list[int], list[Threshold]]:
    active = [i for i in greedy_order(w) if w[i] > 0]
    winners = greedy_select(sys, active)
    out = []
    for i in winners:
        # run greedy without i; the first acceptance that spans i is its competitor
        A: list[int] = []
        th = Threshold(i, 0.0, True)
        for j in active:
            if j == i or not sys._can_add(A, j):
                continue
            A.append(j)
            if not sys._can_add(A, i):
                th = Threshold(i, float(w[j]), i > j)
                break
        out.append(th)
    return winners, out


def _general_thresholds(sys: SetSystem, w: np.ndarray) -> tuple[list[int], list[Threshold]]:
    wpos = np.where(w > 0, w, 0.0)
    everyone = range(sys.n)
    _, W = max_weight_feasible(sys, everyone, wpos)
    winners = sorted(W)
    big = float(wpos.sum()) + 1.0
    out = []
    for i in winners:
        w0 = wpos.copy()
        w0[i] = 0.0
        without = max_weight_feasible(sys, everyone, w0)[0]
        w1 = wpos.copy()
        w1[i] = big
        rest = max_weight_feasible(sys, everyone, w1)[0] - big
        c = max(0.0, without - rest)
        if c <= 1e-12:
            out.append(Threshold(i, 0.0, True))
        else:
            out.append(Threshold(i, c, False))
    return winners, out


def allocate(sys: SetSystem, w: Sequence[float]) -> tuple[list[int], list[Threshold]]:
    """Max-weight feasible set over positive weights, plus each winner's critical weight."""
    w = np.asarray(w, dtype=float)
    if sys.is_matroid:
        return _matroid_thresholds(sys, w)
    return _general_thresholds(sys, w)


def _snap(dist: ValuationDistribution, v):
    """Smallest support point at or above ``v``."""
    return dist.price_at(dist.tail_prob(v))


def _invert_virtual(dist, ironed, ths: list[Threshold], caps: np.ndarray) -> np.ndarray:
    """Smallest value whose ironed virtual value beats each threshold, snapped to the support."""
    c = np.array([t.value for t in ths])
    strict = np.array([t.strict for t in ths])

    def ok(x):
        phi = ironed_virtual(dist, ironed, x)
        return np.where(strict, phi > c, phi >= c)

    lo = np.zeros_like(caps)
    hi = caps.copy()
    done = ok(lo)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        good = ok(mid)
        hi = np.where(good, mid, hi)
        lo = np.where(good, lo, mid)
    v = np.where(done, 0.0, hi)
    return np.minimum(np.asarray(_snap(dist, v), dtype=float), caps)


# -- mechanisms ---------------------------------------------------------------------


class Mechanism:
    name = "mechanism"

    def run_batch(self, instance: Instance, profiles: np.ndarray, rng: np.random.Generator) -> BatchOutcome:
        raise NotImplementedError


@dataclass(frozen=True)
class OptimalMechanism(Mechanism):
    """Ironed-virtual-value maximiser (``myerson``) or value maximiser (``vcg``) with threshold payments."""

    kind: str = "myerson"

    def __post_init__(self):
        if self.kind not in ("myerson", "vcg"):
            raise DomainError(f"unknown optimal mechanism {self.kind!r}")

    @property
    def name(self):
        return self.kind

    def weights(self, instance: Instance, profiles: np.ndarray) -> np.ndarray:
        if self.kind == "vcg":
            return profiles.astype(float)
        return np.column_stack([ironed_virtual(instance.dists[i], instance.curve(i), profiles[:, i])
                                for i in range(instance.n)])

    def run_batch(self, instance, profiles, rng=None):
        profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
        B, n = profiles.shape
        w = self.weights(instance, profiles)
        winners = np.zeros((B, n), dtype=bool)
        payments = np.zeros((B, n))
        pending: list[list[tuple[int, Threshold]]] = [[] for _ in range(n)]
        for b in range(B):
            W, ths = allocate(instance.sys, w[b])
            winners[b, W] = True
            for t in ths:
                if self.kind == "vcg":
                    payments[b, t.agent] = t.value
                else:
                    pending[t.agent].append((b, t))
        for i, reqs in enumerate(pending):
            if reqs:
                rows = np.array([b for b, _ in reqs])
                caps = profiles[rows, i]
                payments[rows, i] = _invert_virtual(instance.dists[i], instance.curve(i),
                                                    [t for _, t in reqs], caps)
        values = _objective_values(instance.objective, profiles, winners, payments)
        return BatchOutcome(winners, payments, values)


MYERSON = OptimalMechanism("myerson")
VCG = OptimalMechanism("vcg")


def benchmark_for(objective: Objective) -> OptimalMechanism:
    if objective.kind == "revenue":
        return MYERSON
    if objective.kind == "welfare":
        return VCG
    raise UnsupportedError(f"no optimal benchmark for the {objective.kind} objective")


def optimal_mechanism(instance: Instance, profile: Sequence[float]) -> MechanismOutcome:
    """Myerson for revenue, VCG for welfare, on a single profile."""
    v = instance.check_profile(profile)
    return benchmark_for(instance.objective).run_batch(instance, v[None, :]).outcome(0)


def critical_value(instance: Instance, mech: OptimalMechanism, profile: Sequence[float], i: int,
                   snap: bool = True, tol: float = 1e-10) -> float:
    """Threshold of agent ``i`` found by bisection on the full allocation rule.

    Slow reference for the payment rule; ``snap`` moves the result to the support.
    """
    v = instance.check_profile(profile).copy()

    def wins(x):
        v[i] = x
        return bool(mech.run_batch(instance, v[None, :]).winners[0, i])

    cap = float(profile[i])
    if not wins(cap):
        return 0.0
    lo, hi = 0.0, cap
    if wins(lo):
        hi = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if wins(mid) else (mid, hi)
    return float(_snap(instance.dists[i], hi)) if snap else hi


# -- greedy posted prices -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SPMPolicy:
    """Posted-price schedule: visiting order, per-agent price lotteries and effective prices.

    Agents without a policy (zero target probability) are never offered a price.
    """

    order: tuple[int, ...]
    policies: tuple[PricePolicy | None, ...]
    effective_weights: np.ndarray
    q: np.ndarray
    objective: Objective = REVENUE

    def draw_prices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cols = [np.full(size, np.inf) if p is None else p.sample(rng, size) for p in self.policies]
        return np.column_stack(cols)


def build_greedy_spm(instance: Instance, q: Sequence[float]) -> SPMPolicy:
    """Price each agent to sell with probability ``q_i`` and order by effective gain ``Ḡ_i(q_i)/q_i``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (instance.n,):
        raise DomainError(f"need {instance.n} marginals")
    if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
        raise DomainError("marginals must lie in [0, 1]")
    obj = instance.objective
    policies: list[PricePolicy | None] = []
    phat = np.zeros(instance.n)
    for i, (dist, qi) in enumerate(zip(instance.dists, q)):
        if qi <= 0.0:
            policies.append(None)
            continue
        ironed = iron(gain_curve(dist, obj, instance.grid_size, extra_q=[qi]))
        policies.append(optimal_price_policy(dist, ironed, float(qi)))
        phat[i] = float(ironed(qi)) / qi
    active = [i for i in range(instance.n) if policies[i] is not None]
    order = tuple(greedy_order(phat, active))
    return SPMPolicy(order, tuple(policies), phat, q.copy(), obj)


def _spm_rows(sys: SetSystem, order, profiles, prices):
    B, n = profiles.shape
    winners = np.zeros((B, n), dtype=bool)
    demand = profiles >= prices
    for b in range(B):
        A: list[int] = []
        row = demand[b]
        for i in order:
            if row[i] and sys._can_add(A, i):
                A.append(i)
        winners[b, A] = True
    payments = np.where(winners, prices, 0.0)
    return winners, payments, demand


@dataclass(frozen=True, eq=False)
class PostedPriceMechanism(Mechanism):
    policy: SPMPolicy
    name = "greedy_spm"

    def run_batch(self, instance, profiles, rng):
        prices = self.policy.draw_prices(rng, len(profiles))
        return self.run_with_prices(instance, profiles, prices)

    def run_with_prices(self, instance, profiles, prices) -> BatchOutcome:
        winners, payments, _ = _spm_rows(instance.sys, self.policy.order, profiles, prices)
        return BatchOutcome(winners, payments,
                            _objective_values(instance.objective, profiles, winners, payments))


def run_spm(policy: SPMPolicy, sys: SetSystem, profile: Sequence[float],
            price_draw_seed: int | None = None, prices: Sequence[float] | None = None
            ) -> tuple[MechanismOutcome, frozenset[int]]:
    """Offer prices in policy order, skipping agents that no longer fit.

    Prices are drawn from ``price_draw_seed`` unless given.  Returns the outcome
    and the demand set of all agents whose value meets their price.
    """
    v = np.asarray(profile, dtype=float)
    if prices is None:
        prices = policy.draw_prices(np.random.default_rng(price_draw_seed), 1)[0]
    p = np.asarray(prices, dtype=float)
    winners, payments, demand = _spm_rows(sys, policy.order, v[None, :], p[None, :])
    value = _objective_values(policy.objective, v[None, :], winners, payments)[0]
    out = MechanismOutcome(frozenset(np.flatnonzero(winners[0]).tolist()), tuple(payments[0].tolist()),
                           float(value))
    return out, frozenset(np.flatnonzero(demand[0]).tolist())


def _reserve_rows(sys: SetSystem, profiles, reserves):
    if not sys.is_matroid:
        raise UnsupportedError("VCG with reserves is only supported on matroids")
    B, n = profiles.shape
    winners = np.zeros((B, n), dtype=bool)
    payments = np.zeros((B, n))
    kept = profiles >= reserves
    for b in range(B):
        W, ths = _matroid_thresholds(sys, np.where(kept[b], profiles[b], 0.0))
        for t in ths:
            winners[b, t.agent] = True
            payments[b, t.agent] = max(t.value, reserves[b, t.agent])
    return winners, payments


@dataclass(frozen=True, eq=False)
class ReserveVCG(Mechanism):
    """VCG among agents meeting their reserve; reserves are drawn like posted prices."""

    policy: SPMPolicy
    name = "vcg_reserves"

    def run_batch(self, instance, profiles, rng):
        reserves = self.policy.draw_prices(rng, len(profiles))
        return self.run_with_prices(instance, profiles, reserves)

    def run_with_prices(self, instance, profiles, reserves) -> BatchOutcome:
        winners, payments = _reserve_rows(instance.sys, profiles, reserves)
        return BatchOutcome(winners, payments,
                            _objective_values(instance.objective, profiles, winners, payments))


def vcg_with_reserves(instance: Instance, reserves: Sequence[float], profile: Sequence[float]) -> MechanismOutcome:
    """Drop agents below their reserve, run VCG, charge ``max(threshold, reserve)``."""
    v = instance.check_profile(profile)
    r = np.asarray(reserves, dtype=float)
    if r.shape != v.shape:
        raise DomainError("one reserve per agent")
    winners, payments = _reserve_rows(instance.sys, v[None, :], r[None, :])
    values = _objective_values(instance.objective, v[None, :], winners, payments)
    return BatchOutcome(winners, payments, values).outcome(0)


# -- simulation --------------------------------------------------------------------


def _simulate_chunk(instance: Instance, mech: Mechanism, size: int, seedseq) -> tuple[np.ndarray, BatchOutcome]:
    rng = np.random.default_rng(seedseq)
    profiles = instance.sample_profiles(rng, size)
    return profiles, mech.run_batch(instance, profiles, rng)


def resolve_mechanism(instance: Instance, mech) -> Mechanism:
    if isinstance(mech, Mechanism):
        return mech
    if isinstance(mech, SPMPolicy):
        return PostedPriceMechanism(mech)
    if mech in ("optimal", None):
        return benchmark_for(instance.objective)
    if mech in ("myerson", "vcg"):
        return OptimalMechanism(mech)
    raise DomainError(f"unknown mechanism {mech!r}")


def simulate(instance: Instance, mech, samples: int, seed: int = 42, tag: int = 0,
             workers: int | None = None, keep_profiles: bool = False):
    """Run ``mech`` on ``samples`` random profiles; deterministic in ``(seed, tag, workers)``."""
    mech = resolve_mechanism(instance, mech)
    parts = run_chunks(partial(_simulate_chunk, instance, mech), samples, seed, tag, workers)
    out = BatchOutcome.concat([o for _, o in parts])
    if keep_profiles:
        return np.concatenate([p for p, _ in parts]), out
    return out


def expected_performance(instance: Instance, mech, samples: int, seed: int = 42, tag: int = 0,
                         workers: int | None = None) -> Estimate:
    """Monte-Carlo mean objective value with its standard error."""
    if samples < 1:
        raise DomainError("samples must be >= 1")
    return estimate(simulate(instance, mech, samples, seed, tag, workers).values)


@dataclass(frozen=True, eq=False)
class WinProbabilities:
    q: np.ndarray
    stderr: np.ndarray
    method: str


def _discretize(dist: ValuationDistribution, res: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(dist, Discrete):
        return np.asarray(dist.values, dtype=float), np.asarray(dist.probs, dtype=float)
    levels = (np.arange(res) + 0.5) / res
    return np.asarray(dist.quantile(levels), dtype=float), np.full(res, 1.0 / res)


def win_probabilities(instance: Instance, mech="optimal", mode: str = "monte_carlo", samples: int = 100_000,
                      seed: int = 42, res: int = 32, workers: int | None = None) -> WinProbabilities:
    """Probability that each agent wins under ``mech``.

    ``exact_grid`` enumerates every profile of a discretised instance: discrete
    laws keep their atoms, continuous ones use ``res`` quantile midpoints.
    """
    mech = resolve_mechanism(instance, mech)
    if mode == "monte_carlo":
        out = simulate(instance, mech, samples, seed, tag=1, workers=workers)
        q = out.winners.mean(axis=0)
        se = out.winners.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.full(instance.n, np.inf)
        return WinProbabilities(q, se, "monte_carlo")
    if mode != "exact_grid":
        raise DomainError(f"unknown mode {mode!r}")
    grids = [_discretize(d, res) for d in instance.dists]
    total = math.prod(len(v) for v, _ in grids)
    if total > GRID_ENUM_LIMIT:
        raise CapacityError("profile enumeration", total, GRID_ENUM_LIMIT)
    q = np.zeros(instance.n)
    rng = np.random.default_rng(seed)
    combos = itertools.product(*[range(len(v)) for v, _ in grids])
    while True:
        block = np.array(list(itertools.islice(combos, 65536)), dtype=np.int64)
        if block.size == 0:
            break
        profiles = np.column_stack([grids[i][0][block[:, i]] for i in range(instance.n)])
        weight = np.prod(np.column_stack([grids[i][1][block[:, i]] for i in range(instance.n)]), axis=1)
        winners = mech.run_batch(instance, profiles, rng).winners
        q += weight @ winners
    return WinProbabilities(q, np.zeros(instance.n), "exact_grid")


# -- reduction quantities --------------------------------------------------------------


@dataclass(frozen=True)
class ReductionQuantities:
    """Effective-price rank of optimal winners (``ew_rank``) and of demand sets (``ed_rank``).

    ``ed_greedy`` is the expected effective price collected by greedy on the
    demand set, which is what the posted-price mechanism earns; it equals
    ``ed_rank`` on matroids.
    """

    ew_rank: Estimate
    ed_rank: float
    ed_greedy: float


def demand_rank(sys: SetSystem, phat: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    """Exact ``E[w*(D)]`` and ``E[greedy weight of D]`` for independent demand with marginals ``q``."""
    ed_rank = multilinear(WeightedRank(sys, tuple(phat)), q)
    if sys.is_matroid:
        return ed_rank, ed_rank
    if sys.n > TABLE_LIMIT:
        raise CapacityError("exact demand-set expectation", sys.n, TABLE_LIMIT)
    return ed_rank, float(greedy_table(sys, phat) @ independent_probs(q))


def reduction_quantities(instance: Instance, policy: SPMPolicy, samples: int, seed: int = 42,
                         workers: int | None = None) -> ReductionQuantities:
    out = simulate(instance, benchmark_for(policy.objective), samples, seed, tag=2, workers=workers)
    # winner sets are feasible, so their weighted rank is just their total weight
    ew = estimate(out.winners @ policy.effective_weights)
    ed_rank, ed_greedy = demand_rank(instance.sys, policy.effective_weights, policy.q)
    return ReductionQuantities(ew, ed_rank, ed_greedy)
