import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mechlab.errors import DomainError
from mechlab.valuation import (
    REVENUE,
    SURPLUS,
    WELFARE,
    Discrete,
    Objective,
    PiecewiseCDF,
    Uniform,
    distribution_from_config,
    gain_curve,
    iron,
    ironed_curve,
    optimal_price_policy,
    revenue_curve,
)

U = Uniform(0.0, 1.0)
TWO_POINT = Discrete((1.0, 4.0), (0.5, 0.5))


# -- oracles ---------------------------------------------------------------------------


def hull_by_pairs(qs, rs, q):
    """Concave closure at q as the best chord through any two grid points around q."""
    best = -np.inf
    for a in range(len(qs)):
        for b in range(a, len(qs)):
            if qs[a] <= q <= qs[b]:
                if qs[b] == qs[a]:
                    val = rs[a]
                else:
                    t = (q - qs[a]) / (qs[b] - qs[a])
                    val = (1 - t) * rs[a] + t * rs[b]
                best = max(best, val)
    return best


def best_two_price_mix(dist, q, extra_prices=()):
    """Largest revenue of a lottery over two posted prices that sells with probability exactly q."""
    prices = sorted(set(dist.values) | set(extra_prices)) + [np.inf]
    best = 0.0
    for p1, p2 in itertools.product(prices, repeat=2):
        s1, s2 = dist.tail_prob(p1), dist.tail_prob(p2)
        r1 = 0.0 if np.isinf(p1) else p1 * s1
        r2 = 0.0 if np.isinf(p2) else p2 * s2
        if abs(s1 - s2) < 1e-15:
            if abs(s1 - q) < 1e-12:
                best = max(best, r1, r2)
            continue
        lam = (q - s2) / (s1 - s2)
        if -1e-12 <= lam <= 1 + 1e-12:
            best = max(best, lam * r1 + (1 - lam) * r2)
    return best


discrete_laws = st.integers(1, 5).flatmap(lambda m: st.tuples(
    st.lists(st.floats(0.0, 10.0, allow_nan=False), min_size=m, max_size=m, unique=True),
    st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m),
)).map(lambda vp: Discrete(tuple(sorted(vp[0])), tuple(np.array(vp[1]) / sum(vp[1]))))


# -- worked examples -------------------------------------------------------------------


def test_cdf_examples():
    assert U.cdf(0.5) == 0.5
    assert TWO_POINT.cdf(2.0) == 0.5
    assert U.cdf(1.0) == 1.0
    with pytest.raises(DomainError):
        U.cdf(1.5)
    with pytest.raises(DomainError):
        TWO_POINT.cdf(-0.1)


def test_quantile_examples():
    assert U.quantile(0.625) == pytest.approx(0.625)
    assert TWO_POINT.quantile(0.7) == 4.0
    for d in (U, TWO_POINT, Uniform(0.2, 3.0), PiecewiseCDF(((0.0, 0.0), (1.0, 0.0), (2.0, 1.0)))):
        assert d.quantile(0.0) == pytest.approx(d.support_min)


def test_revenue_curve_examples():
    r = revenue_curve(U)
    assert r(0.5) == pytest.approx(0.25)
    assert r(1.0) == pytest.approx(0.0)
    assert revenue_curve(TWO_POINT)(0.5) == pytest.approx(2.0)
    assert revenue_curve(TWO_POINT)(0.0) == 0.0


def test_iron_examples():
    curve = revenue_curve(U)
    hull = iron(curve)
    assert np.allclose(hull(curve.qs), curve.values, atol=1e-12)
    two = ironed_curve(TWO_POINT)
    assert two.hull_points == [(0.0, 0.0), (0.5, 2.0), (1.0, 1.0)]
    assert two(0.75) == pytest.approx(1.5)
    zero = iron(gain_curve(Discrete((0.0,), (1.0,))))
    assert np.all(zero.values == 0)


def test_policy_examples():
    pol = optimal_price_policy(U, ironed_curve(U, extra_q=[0.375]), 0.375)
    assert pol.deterministic and pol.low_price == pytest.approx(0.625)
    assert pol.expected_gain(U) == pytest.approx(0.234375)
    mix = optimal_price_policy(TWO_POINT, ironed_curve(TWO_POINT), 0.75)
    assert (mix.low_price, mix.high_price, mix.prob_low) == (1.0, 4.0, 0.5)
    assert mix.expected_gain(TWO_POINT) == pytest.approx(1.5)
    assert mix.selling_probability(TWO_POINT) == pytest.approx(0.75)
    vertex = optimal_price_policy(TWO_POINT, ironed_curve(TWO_POINT), 0.5)
    assert vertex.prob_low in (0.0, 1.0) and vertex.low_price == 4.0
    with pytest.raises(DomainError):
        optimal_price_policy(U, iron(revenue_curve(U)), 0.0)


def test_gain_curve_examples():
    assert gain_curve(U, WELFARE)(0.5) == pytest.approx(0.375)
    assert np.allclose(gain_curve(U, REVENUE).values, revenue_curve(U).values)
    assert gain_curve(U, SURPLUS)(1.0) == pytest.approx(0.5)
    custom = Objective("custom", lambda v, p: v - p)
    assert gain_curve(U, custom, grid_size=9)(0.5) == pytest.approx(gain_curve(U, SURPLUS)(0.5), abs=1e-8)


def test_config_round_trip():
    for d in (U, TWO_POINT, PiecewiseCDF(((0.0, 0.0), (1.0, 0.5), (3.0, 1.0)))):
        assert distribution_from_config(d.to_config()) == d
    with pytest.raises(DomainError):
        distribution_from_config({"type": "beta"})
    with pytest.raises(DomainError):
        Discrete((1.0, 2.0), (0.5, 0.6))


# -- properties ----------------------------------------------------------------------


@given(discrete_laws)
def test_hull_matches_pairwise_oracle(dist):
    curve = revenue_curve(dist, grid_size=9)
    hull = iron(curve)
    for q in np.linspace(0, 1, 13):
        assert hull(q) == pytest.approx(hull_by_pairs(curve.qs, curve.values, q), abs=1e-9)


@given(st.lists(st.floats(0, 5), min_size=2, max_size=30), st.integers(0, 10 ** 6))
def test_hull_is_concave_dominating_and_tight(values, seed):
    qs = np.linspace(0, 1, len(values))
    rs = np.array(values)
    rs[0] = 0.0
    from mechlab.valuation import RevenueCurve

    hull = iron(RevenueCurve(qs, rs, U))
    assert np.all(np.diff(hull.slopes) <= 1e-9)
    assert np.all(hull(qs) >= rs - 1e-9)
    assert np.allclose(rs[hull.source_index], hull.values)


@given(discrete_laws, st.floats(0.01, 1.0))
def test_two_price_policy_beats_brute_force(dist, q):
    hull = ironed_curve(dist, extra_q=[q])
    pol = optimal_price_policy(dist, hull, q)
    assert pol.selling_probability(dist) == pytest.approx(q, abs=1e-9)
    assert pol.expected_gain(dist) == pytest.approx(hull(q), abs=1e-9)
    grid = np.linspace(0, dist.support_bound, 40)
    assert best_two_price_mix(dist, q, grid) <= pol.expected_gain(dist) + 1e-6
    assert pol.low_price <= pol.high_price and 0 <= pol.prob_low <= 1


@given(st.floats(0.0, 2.0), st.floats(0.1, 3.0), st.floats(0.01, 1.0))
def test_uniform_policy_is_deterministic_at_target(lo, width, q):
    d = Uniform(lo, lo + width)
    pol = optimal_price_policy(d, ironed_curve(d, extra_q=[q]), q)
    assert pol.selling_probability(d) == pytest.approx(q, abs=1e-9)
    assert pol.expected_gain(d) >= q * float(d.price_at(q)) - 1e-9


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=5), st.floats(0.01, 1.0))
def test_piecewise_policy_and_round_trip(levels, q):
    fs = np.sort(np.array(levels))
    fs[-1] = 1.0
    pts = tuple((float(i), float(f)) for i, f in enumerate(fs))
    d = PiecewiseCDF(pts)
    grid = np.linspace(0, d.support_bound, 17)
    F = d.cdf(grid)
    back = d.cdf(d.quantile(F))
    assert np.allclose(back, F, atol=1e-9)
    hull = ironed_curve(d, extra_q=[q], grid_size=257)
    pol = optimal_price_policy(d, hull, q)
    assert pol.selling_probability(d) == pytest.approx(q, abs=1e-9)
    assert pol.expected_gain(d) == pytest.approx(hull(q), abs=1e-9)


def test_surplus_hull_uses_same_recipe():
    d = Discrete((1.0, 2.0, 6.0), (0.5, 0.3, 0.2))
    hull = ironed_curve(d, SURPLUS)
    curve = gain_curve(d, SURPLUS)
    assert np.all(hull(curve.qs) >= curve.values - 1e-12)
    # at q=1 the price is the support minimum
    assert hull(1.0) == pytest.approx(float(np.dot(d.values, d.probs)) - 1.0)
