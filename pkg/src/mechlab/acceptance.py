"""The fixed acceptance suite: thirteen checks, one result row each.

Every check is deterministic for a given seed.  Theoretical bounds are read
through ``experiment.theoretical_beta`` at call time, so a wrong bound table
shows up as failing rows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import experiment
from .bounds import solve_cp
from .corrgap import (
    WeightedRank,
    correlation_gap,
    greedy_verifies_gap,
    miniset_gap_profile,
    phi,
    phi_limit,
)
from .mech import (
    MYERSON,
    Instance,
    PostedPriceMechanism,
    ReserveVCG,
    benchmark_for,
    build_greedy_spm,
    expected_performance,
    reduction_quantities,
    simulate,
    win_probabilities,
)
from .errors import DomainError
from .setsys import (
    GraphicMatroid,
    MatchingSystem,
    PartitionMatroid,
    TransversalMatroid,
    UniformMatroid,
    independence_ratio,
)
from .valuation import WELFARE, Discrete, Uniform

SIGMAS = 3.0
E_RATIO = math.e / (math.e - 1)

K4_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
MATCHING_EDGES = ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2))


@dataclass(frozen=True)
class Row:
    criterion: int
    kind: str
    n: int
    k_or_p: float
    estimate: float
    stderr: float | None
    bound: float
    passed: bool
    detail: str = ""
    seconds: float = field(default=0.0, compare=False)

    def as_dict(self) -> dict:
        return dict(criterion=self.criterion, kind=self.kind, n=self.n, k_or_p=self.k_or_p,
                    estimate=self.estimate, stderr=self.stderr, bound=self.bound, passed=self.passed)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.criterion:2d} {verdict}: {self.detail} ({self.seconds:.1f}s)"


def _uniform_instance(n: int, k: int, objective=None) -> Instance:
    u = Uniform(0.0, 1.0)
    if objective is None:
        return Instance((u,) * n, UniformMatroid(n, k))
    return Instance((u,) * n, UniformMatroid(n, k), objective)


def _binomial_phi(n: int, k: int) -> float:
    """Exact rational binomial sum for ``E[min(Binomial(n, k/n), k)]``."""
    p = Fraction(k, n)
    total = sum(Fraction(math.comb(n, t)) * p ** t * (1 - p) ** (n - t) * min(t, k) for t in range(n + 1))
    return float(total)


def _timed(limit: float | None):
    def wrap(fn: Callable[[int], Row]) -> Callable[[int], Row]:
        def run(seed: int) -> Row:
            t0 = time.perf_counter()
            row = fn(seed)
            dt = time.perf_counter() - t0
            ok = row.passed and (limit is None or dt < limit)
            detail = row.detail if limit is None else f"{row.detail}; runtime {dt:.1f}s < {limit:g}s"
            return Row(row.criterion, row.kind, row.n, row.k_or_p, row.estimate, row.stderr, row.bound,
                       bool(ok), detail, dt)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


# -- Φ ---------------------------------------------------------------------------------


@_timed(1.0)
def phi_closed_forms(seed: int) -> Row:
    """phi(n,1) against 1-(1-1/n)^n for n <= 100, and phi(10,2) against a rational binomial sum."""
    err = max(abs(phi(n, 1) - (1 - (1 - 1 / n) ** n)) for n in range(1, 101))
    err2 = abs(phi(10, 2) - _binomial_phi(10, 2))
    ok = err <= 1e-12 and err2 <= 1e-9
    return Row(1, "uniform", 100, 1, max(err, err2), None, 1e-12, ok,
               f"max |phi(n,1)-closed form| = {err:.2e}, phi(10,2) = {phi(10, 2):.9f} (error {err2:.1e})")


@_timed(5.0)
def phi_limit_check(seed: int) -> Row:
    """phi(10^4, k) within 0.2% of the limit for k in {1,2,3,5}."""
    rel = max(abs(phi(10 ** 4, k) - phi_limit(k)) / phi_limit(k) for k in (1, 2, 3, 5))
    return Row(2, "uniform", 10 ** 4, 5, rel, None, 0.002, rel < 0.002,
               f"max relative gap to the limit = {rel:.2e}")


@_timed(10.0)
def phi_monotone(seed: int) -> Row:
    """phi(n,k) increases in k and decreases in n over 1 <= k < n <= 200."""
    N = 201
    table = {(n, k): phi(n, k) for n in range(1, N + 1) for k in range(1, n + 1)}
    bad = 0
    for n in range(2, N):
        for k in range(1, n):
            if not table[(n, k + 1)] > table[(n, k)]:
                bad += 1
            if not table[(n + 1, k)] < table[(n, k)]:
                bad += 1
    return Row(3, "uniform", 200, 199, float(bad), None, 0.0, bad == 0, f"{bad} violations")


# -- correlation gaps ------------------------------------------------------------------


@_timed(30.0)
def exact_kuniform_gap(seed: int) -> Row:
    """LP gap search reproduces 1/phi(5,1) and 2/phi(6,2)."""
    errs = []
    found = []
    for n, k in ((5, 1), (6, 2)):
        rep = correlation_gap(WeightedRank(UniformMatroid(n, k), (1.0,) * n), n, seed=seed)
        errs.append(abs(rep.gap - k / phi(n, k)))
        found.append(rep.gap)
    err = max(errs)
    return Row(4, "uniform", 6, 2, err, None, 1e-6, err <= 1e-6,
               f"gaps {found[0]:.6f} (1/phi(5,1)={1 / phi(5, 1):.6f}), {found[1]:.6f} (2/phi(6,2)={2 / phi(6, 2):.6f})")


def submodular_test_systems():
    return [
        UniformMatroid(6, 2),
        UniformMatroid(8, 3),
        PartitionMatroid(((0, 1, 2), (3, 4, 5)), (1, 1)),
        PartitionMatroid(((0, 1, 2), (3, 4, 5, 6)), (1, 2)),
        GraphicMatroid(K4_EDGES),
        TransversalMatroid(((0, 1), (1, 2), (2, 3), (0, 3), (0, 1, 2, 3), (2,))),
    ]


@_timed(300.0)
def submodular_gap_bound(seed: int, weights_per_kind: int = 50, budget: int = 60) -> Row:
    """Gap search never exceeds e/(e-1) on matroid weighted ranks."""
    rng = np.random.default_rng([seed, 5])
    worst = 0.0
    for sys in submodular_test_systems():
        for t in range(weights_per_kind):
            w = rng.uniform(0.05, 1.0, sys.n)
            rep = correlation_gap(WeightedRank(sys, tuple(w)), sys.n, budget=budget, seed=t, starts=1)
            worst = max(worst, rep.gap)
    bound = E_RATIO + 1e-6
    return Row(5, "matroid", 8, 1, worst, None, bound, worst <= bound,
               f"largest gap found {worst:.6f} over {len(submodular_test_systems())} kinds x {weights_per_kind} weights")


@_timed(None)
def partition_gap(seed: int) -> Row:
    """Two parts of three elements with unit weights have gap 1/phi(3,1)."""
    sys = PartitionMatroid(((0, 1, 2), (3, 4, 5)), (1, 1))
    rep = correlation_gap(WeightedRank(sys, (1.0,) * 6), 6, seed=seed)
    target = 1 / phi(3, 1)
    err = abs(rep.gap - target)
    return Row(6, "partition", 6, 1, rep.gap, None, target, err <= 1e-6,
               f"gap {rep.gap:.6f} vs 1/phi(3,1) = {target:.6f}")


# -- revenue and welfare chains ---------------------------------------------------------


def _spm_from_benchmark(inst: Instance, samples: int, seed: int):
    wp = win_probabilities(inst, benchmark_for(inst.objective), samples=samples, seed=seed)
    return build_greedy_spm(inst, wp.q)


def _ratio_row_parts(inst: Instance, samples: int, seed: int):
    policy = _spm_from_benchmark(inst, samples, seed)
    opt = expected_performance(inst, benchmark_for(inst.objective), samples, seed, tag=10)
    spm = expected_performance(inst, PostedPriceMechanism(policy), samples, seed, tag=12)
    beta = experiment.theoretical_beta(inst.sys)
    return policy, opt, spm, beta, experiment.ratio_check(opt, spm, beta)


@_timed(120.0)
def revenue_chain(seed: int, samples: int = 100_000) -> Row:
    """Myerson versus greedy posted prices for 2 of 10 units and for a single item with two bidders."""
    _, opt, spm, beta, chk = _ratio_row_parts(_uniform_instance(10, 2), samples, seed)
    _, opt2, spm2, beta2, chk2 = _ratio_row_parts(_uniform_instance(2, 1), samples, seed)
    derived_ok = opt2.within(5 / 12, SIGMAS) and spm2.within(0.380859375, SIGMAS)
    ok = chk.passed and chk2.passed and derived_ok and chk2.ratio <= 4 / 3
    return Row(7, "uniform", 10, 2, chk.ratio, chk.ratio_stderr, beta, bool(ok),
               f"k=2,n=10: {opt} vs {spm}, ratio {chk.ratio:.4f} <= beta {beta:.4f}; "
               f"n=2: {opt2} (5/12) vs {spm2} (0.380859), ratio {chk2.ratio:.4f} <= {beta2:.4f}")


@_timed(None)
def reduction_identities(seed: int, samples: int = 100_000) -> Row:
    """Demand-set rank equals posted-price revenue; winner-set rank dominates Myerson."""
    inst = _uniform_instance(2, 1)
    policy = _spm_from_benchmark(inst, samples, seed)
    red = reduction_quantities(inst, policy, samples, seed)
    spm = expected_performance(inst, PostedPriceMechanism(policy), samples, seed, tag=12)
    opt = expected_performance(inst, MYERSON, samples, seed, tag=10)
    ed_ok = abs(red.ed_rank - spm.mean) <= SIGMAS * spm.stderr
    ew = red.ew_rank
    ew_ok = ew.within(0.46875, SIGMAS) and ew.mean >= opt.mean - SIGMAS * math.hypot(ew.stderr, opt.stderr)
    return Row(8, "uniform", 2, 1, ew.mean, ew.stderr, 0.46875, bool(ed_ok and ew_ok),
               f"ed_rank {red.ed_rank:.6f} vs spm revenue {spm}; ew_rank {ew} (0.46875) vs myerson {opt}")


def bound_test_instances() -> list[tuple[str, Instance]]:
    u = Uniform(0.0, 1.0)
    d = Discrete((1.0, 4.0), (0.5, 0.5))
    return [
        ("uniform", _uniform_instance(2, 1)),
        ("uniform", _uniform_instance(10, 2)),
        ("graphic", Instance((u,) * 6, GraphicMatroid(K4_EDGES))),
        ("matching", Instance((u,) * 6, MatchingSystem(MATCHING_EDGES))),
        ("uniform", Instance((d,) * 3, UniformMatroid(3, 1))),
    ]


@_timed(None)
def cp_upper_bound(seed: int, samples: int = 20_000) -> Row:
    """Concave-program value dominates ew_rank, which dominates Myerson, on every test instance."""
    cp2 = solve_cp(_uniform_instance(2, 1)).value
    ok = abs(cp2 - 0.5) <= 1e-9
    worst = math.inf
    parts = []
    for kind, inst in bound_test_instances():
        cp = solve_cp(inst).value
        policy = _spm_from_benchmark(inst, samples, seed)
        ew = reduction_quantities(inst, policy, samples, seed).ew_rank
        opt = expected_performance(inst, MYERSON, samples, seed, tag=10)
        good = (cp >= ew.mean - SIGMAS * ew.stderr
                and ew.mean >= opt.mean - SIGMAS * math.hypot(ew.stderr, opt.stderr))
        ok = ok and good
        worst = min(worst, cp - ew.mean)
        parts.append(f"{kind}(n={inst.n}) cp {cp:.4f} ew {ew.mean:.4f} opt {opt.mean:.4f}")
    return Row(9, "mixed", 2, 1, cp2, None, 0.5, bool(ok), f"cp(n=2) = {cp2:.12f}; " + "; ".join(parts))


@_timed(None)
def matroid_welfare(seed: int, samples: int = 100_000) -> Row:
    """VCG welfare against posted-price welfare on the graphic matroid of K4."""
    inst = Instance((Uniform(0.0, 1.0),) * 6, GraphicMatroid(K4_EDGES), WELFARE)
    _, opt, spm, beta, chk = _ratio_row_parts(inst, samples, seed)
    return Row(10, "graphic", 6, 1, chk.ratio, chk.ratio_stderr, beta, bool(chk.passed),
               f"vcg welfare {opt} vs spm welfare {spm}, ratio {chk.ratio:.4f} <= beta {beta:.4f}")


@_timed(None)
def p_independent(seed: int, samples: int = 20_000) -> Row:
    """Matching on six edges: p = 2, greedy certifies gap 3, and the revenue ratio stays below 3."""
    sys = MatchingSystem(MATCHING_EDGES)
    p = independence_ratio(sys, exhaustive=True)
    inst = Instance((Uniform(0.0, 1.0),) * 6, sys)
    policy, opt, spm, beta, chk = _ratio_row_parts(inst, samples, seed)
    checks = [greedy_verifies_gap(sys, np.ones(6), beta, seed=seed),
              greedy_verifies_gap(sys, np.maximum(policy.effective_weights, 1e-9), beta, seed=seed)]
    rng = np.random.default_rng([seed, 11])
    checks += [greedy_verifies_gap(sys, rng.uniform(0.05, 1.0, 6), beta, trials=100, seed=seed + t)
               for t in range(3)]
    worst = min(c.worst_ratio for c in checks)
    ok = p == 2 and beta == 3 and all(checks) and chk.passed
    return Row(11, "matching", 6, p, chk.ratio, chk.ratio_stderr, beta, bool(ok),
               f"p = {p:g}, worst greedy ratio {worst:.4f} >= 1/{beta:g}; revenue {opt} vs {spm}, "
               f"ratio {chk.ratio:.4f}")


@_timed(None)
def miniset_profile(seed: int) -> Row:
    """Miniset lower bound: dependent value n, independent 1.375 at n=2, ratio increasing."""
    rows = miniset_gap_profile(range(2, 9))
    dep_ok = all(r.dependent == r.n for r in rows)
    n2_ok = abs(rows[0].independent - 1.375) <= 1e-12
    ratios = [r.ratio for r in rows]
    inc = all(b > a for a, b in zip(ratios, ratios[1:]))
    return Row(12, "miniset", 8, 8, ratios[-1], None, ratios[0], bool(dep_ok and n2_ok and inc),
               "ratios " + ", ".join(f"{x:.4f}" for x in ratios))


def dominance_test_instances() -> list[tuple[str, Instance]]:
    d = Discrete((1.0, 4.0), (0.5, 0.5))
    return [
        ("uniform", _uniform_instance(10, 2)),
        ("graphic", Instance((Uniform(0.0, 1.0),) * 6, GraphicMatroid(K4_EDGES))),
        ("uniform", Instance((d,) * 3, UniformMatroid(3, 1))),
    ]


@_timed(None)
def reserve_dominance(seed: int, samples: int = 10_000) -> Row:
    """VCG with reserves earns at least the posted-price revenue on every shared draw."""
    bad = 0
    total = 0
    for _, inst in dominance_test_instances():
        policy = _spm_from_benchmark(inst, 20_000, seed)
        spm = simulate(inst, PostedPriceMechanism(policy), samples, seed, tag=12)
        res = simulate(inst, ReserveVCG(policy), samples, seed, tag=12)
        bad += int(np.sum(res.values < spm.values - 1e-12))
        total += samples
    return Row(13, "matroid", 10, 2, float(bad), None, 0.0, bad == 0,
               f"{bad} violations over {total} shared profiles")


CRITERIA: dict[int, Callable[[int], Row]] = {
    1: phi_closed_forms,
    2: phi_limit_check,
    3: phi_monotone,
    4: exact_kuniform_gap,
    5: submodular_gap_bound,
    6: partition_gap,
    7: revenue_chain,
    8: reduction_identities,
    9: cp_upper_bound,
    10: matroid_welfare,
    11: p_independent,
    12: miniset_profile,
    13: reserve_dominance,
}


def run_criteria(ids=None, seed: int = 42, log: Callable[[str], None] | None = None) -> list[Row]:
    rows = []
    for cid in sorted(CRITERIA) if ids is None else ids:
        if cid not in CRITERIA:
            raise DomainError(f"unknown criterion {cid}")
        row = CRITERIA[cid](seed)
        if log is not None:
            log(row.line())
        rows.append(row)
    return rows
