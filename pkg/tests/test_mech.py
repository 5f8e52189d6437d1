import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from mechlab.errors import DomainError, UnsupportedError
from mechlab.mech import (
    MYERSON,
    VCG,
    Instance,
    PostedPriceMechanism,
    ReserveVCG,
    allocate,
    build_greedy_spm,
    critical_value,
    expected_performance,
    ironed_virtual,
    optimal_mechanism,
    reduction_quantities,
    run_spm,
    simulate,
    vcg_with_reserves,
    win_probabilities,
)
from mechlab.setsys import GraphicMatroid, MatchingSystem, UniformMatroid, is_feasible
from mechlab.valuation import WELFARE, Discrete, Uniform, ironed_curve

U = Uniform(0.0, 1.0)
TWO_POINT = Discrete((1.0, 4.0), (0.5, 0.5))
K4 = GraphicMatroid(((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)))
MATCHING = MatchingSystem(((0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)))


def single_item(n=2, dist=U, objective=None):
    if objective is None:
        return Instance((dist,) * n, UniformMatroid(n, 1))
    return Instance((dist,) * n, UniformMatroid(n, 1), objective)


def myerson_two_uniform_by_quadrature():
    """Expected positive virtual surplus max(2v1-1, 2v2-1, 0) over the unit square."""
    val, _ = integrate.dblquad(lambda y, x: max(2 * x - 1, 2 * y - 1, 0.0), 0, 1, 0, 1, epsabs=1e-10)
    return val


# -- ironed virtual values -----------------------------------------------------------


def test_ironed_virtual_examples():
    hull = ironed_curve(U)
    v = np.linspace(0, 1, 11)
    assert np.allclose(ironed_virtual(U, hull, v), 2 * v - 1, atol=1e-9)
    assert ironed_virtual(U, hull, 1.0) == pytest.approx(1.0)
    point = Discrete((0.7,), (1.0,))
    assert ironed_virtual(point, ironed_curve(point), 0.7) == pytest.approx(0.7)
    assert ironed_virtual(TWO_POINT, ironed_curve(TWO_POINT), 4.0) == pytest.approx(4.0)
    assert ironed_virtual(TWO_POINT, ironed_curve(TWO_POINT), 1.0) == pytest.approx(-2.0)


@given(st.lists(st.floats(0.0, 5.0), min_size=30, max_size=30))
def test_ironed_virtual_non_decreasing_in_value(vs):
    d = Discrete((0.5, 1.0, 2.0, 5.0), (0.4, 0.1, 0.3, 0.2))
    hull = ironed_curve(d)
    v = np.sort(np.array(vs))
    phi = ironed_virtual(d, hull, v)
    assert np.all(np.diff(phi) >= -1e-12)


# -- optimal mechanism --------------------------------------------------------------


def test_optimal_mechanism_examples():
    one = Instance((U,), UniformMatroid(1, 1))
    out = optimal_mechanism(one, [0.7])
    assert out.winners == {0} and out.payments[0] == pytest.approx(0.5, abs=1e-9)
    assert optimal_mechanism(one, [0.3]).winners == frozenset()
    assert expected_performance(one, "optimal", 40_000, seed=1).within(0.25, 3)
    vcg = optimal_mechanism(single_item(objective=WELFARE), [0.8, 0.3])
    assert vcg.winners == {0} and vcg.payments == (0.3, 0.0) and vcg.objective_value == 0.8


def test_myerson_two_uniform_matches_quadrature():
    target = myerson_two_uniform_by_quadrature()
    assert target == pytest.approx(5 / 12, abs=1e-8)
    est = expected_performance(single_item(), MYERSON, 100_000, seed=7)
    assert est.within(target, 3)


def test_profile_validation():
    with pytest.raises(DomainError):
        optimal_mechanism(single_item(), [0.5, 1.5])
    with pytest.raises(DomainError):
        optimal_mechanism(single_item(), [0.5])
    with pytest.raises(UnsupportedError):
        optimal_mechanism(single_item(objective=__import__("mechlab").valuation.SURPLUS), [0.5, 0.2])


CASES = [
    ("uniform", Instance((U,) * 4, UniformMatroid(4, 2))),
    ("discrete", Instance((TWO_POINT, Discrete((0.5, 1.0, 3.0), (0.3, 0.5, 0.2)), TWO_POINT), UniformMatroid(3, 1))),
    ("graphic", Instance((U, Uniform(0.2, 1.5), U, U, Uniform(0, 2), U), K4)),
    ("matching", Instance((U, U, Uniform(0.1, 2), U, U, U), MATCHING)),
]


@pytest.mark.parametrize("name,inst", CASES, ids=[c[0] for c in CASES])
@pytest.mark.parametrize("mech", [MYERSON, VCG], ids=["myerson", "vcg"])
def test_payments_match_bisection_oracle(name, inst, mech):
    rng = np.random.default_rng(11)
    profiles = inst.sample_profiles(rng, 15)
    out = mech.run_batch(inst, profiles)
    for b in range(len(profiles)):
        for i in np.flatnonzero(out.winners[b]):
            ref = critical_value(inst, mech, profiles[b], i, snap=mech is MYERSON)
            assert out.payments[b, i] == pytest.approx(ref, abs=1e-7)


@pytest.mark.parametrize("name,inst", CASES, ids=[c[0] for c in CASES])
def test_outcomes_feasible_and_individually_rational(name, inst):
    rng = np.random.default_rng(2)
    profiles = inst.sample_profiles(rng, 300)
    for mech in (MYERSON, VCG):
        out = mech.run_batch(inst, profiles)
        for b in range(len(profiles)):
            assert is_feasible(inst.sys, np.flatnonzero(out.winners[b]))
        assert np.all(out.payments >= 0)
        assert np.all(out.payments[~out.winners] == 0)
        assert np.all(out.payments <= profiles + 1e-9)


def test_allocation_ties_go_to_lower_id():
    W, ths = allocate(UniformMatroid(3, 1), [0.5, 0.5, 0.2])
    assert W == [0]
    assert ths[0].value == 0.5 and not ths[0].strict


# -- win probabilities ------------------------------------------------------------------


def test_win_probability_examples():
    wp = win_probabilities(single_item(), samples=100_000, seed=3)
    assert np.all(np.abs(wp.q - 0.375) <= 3 * wp.stderr)
    exact = win_probabilities(single_item(2, TWO_POINT), mode="exact_grid")
    assert np.allclose(exact.q, [0.5, 0.25])
    zero = Instance((Discrete((0.0,), (1.0,)), U), UniformMatroid(2, 1))
    assert win_probabilities(zero, mode="exact_grid", res=64).q[0] == 0
    sym = win_probabilities(Instance((U,) * 3, UniformMatroid(3, 2)), mode="exact_grid", res=20).q
    assert np.allclose(sym, sym[0], atol=0.02)


def test_exact_grid_capacity():
    from mechlab.errors import CapacityError

    with pytest.raises(CapacityError):
        win_probabilities(Instance((U,) * 5, UniformMatroid(5, 1)), mode="exact_grid", res=100)


# -- greedy posted prices ------------------------------------------------------------


def test_build_greedy_spm_examples():
    pol = build_greedy_spm(single_item(), [0.375, 0.375])
    assert pol.order == (0, 1)
    assert [p.low_price for p in pol.policies] == pytest.approx([0.625, 0.625])
    assert np.allclose(pol.effective_weights, 0.625)
    one = build_greedy_spm(Instance((Uniform(0.3, 1.0),), UniformMatroid(1, 1)), [1.0])
    assert one.policies[0].low_price == pytest.approx(0.3)
    mixed = build_greedy_spm(Instance((U, U, U), UniformMatroid(3, 1)), [0.1, 0.5, 0.3])
    assert mixed.order == (0, 2, 1)
    assert np.all(np.diff(mixed.effective_weights[list(mixed.order)]) < 0)
    dropped = build_greedy_spm(single_item(), [0.0, 0.4])
    assert dropped.order == (1,) and dropped.policies[0] is None
    with pytest.raises(DomainError):
        build_greedy_spm(single_item(), [1.2, 0.1])


@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_effective_price_identity(q):
    inst = Instance((U, TWO_POINT, Discrete((0.5, 1.0, 3.0), (0.3, 0.5, 0.2))), UniformMatroid(3, 2))
    pol = build_greedy_spm(inst, q)
    for i, d in enumerate(inst.dists):
        hull = ironed_curve(d, extra_q=[q[i]])
        assert pol.effective_weights[i] * q[i] == pytest.approx(hull(q[i]), abs=1e-9)
        assert pol.policies[i].selling_probability(d) == pytest.approx(q[i], abs=1e-9)
    keys = [(-pol.effective_weights[i], i) for i in pol.order]
    assert keys == sorted(keys)


def test_run_spm_examples():
    pol = build_greedy_spm(single_item(), [0.375, 0.375])
    out, demand = run_spm(pol, UniformMatroid(2, 1), [0.7, 0.9], price_draw_seed=0)
    assert out.winners == {0} and out.payments[0] == pytest.approx(0.625)
    assert demand == {0, 1}
    none, d2 = run_spm(pol, UniformMatroid(2, 1), [0.1, 0.2], price_draw_seed=0)
    assert none.winners == frozenset() and none.objective_value == 0 and d2 == frozenset()
    two = build_greedy_spm(Instance((U, U), UniformMatroid(2, 2)), [0.5, 0.5])
    both, _ = run_spm(two, UniformMatroid(2, 2), [0.9, 0.8], price_draw_seed=0)
    assert both.winners == {0, 1}


def test_spm_trace_is_ir_and_demand_is_exact():
    inst = Instance((TWO_POINT,) * 4, K4.__class__(((0, 1), (1, 2), (2, 3), (0, 3))))
    pol = build_greedy_spm(inst, [0.75, 0.6, 0.3, 0.5])
    rng = np.random.default_rng(5)
    for _ in range(200):
        v = inst.sample_profiles(rng, 1)[0]
        prices = pol.draw_prices(rng, 1)[0]
        out, demand = run_spm(pol, inst.sys, v, prices=prices)
        assert demand == {i for i in range(4) if v[i] >= prices[i]}
        assert out.winners <= demand
        for i in out.winners:
            assert out.payments[i] == prices[i] <= v[i]


def test_vcg_with_reserves_examples():
    inst = single_item()
    out = vcg_with_reserves(inst, [0.625, 0.625], [0.7, 0.9])
    assert out.winners == {1} and out.payments[1] == pytest.approx(0.7)
    assert vcg_with_reserves(inst, [0.625, 0.625], [0.2, 0.3]).winners == frozenset()
    plain = vcg_with_reserves(inst, [0.0, 0.0], [0.7, 0.9])
    vcg = VCG.run_batch(inst, np.array([[0.7, 0.9]])).outcome(0)
    assert plain.winners == vcg.winners and plain.payments == vcg.payments
    with pytest.raises(UnsupportedError):
        vcg_with_reserves(Instance((U,) * 6, MATCHING), [0.1] * 6, [0.5] * 6)


def test_reserves_dominate_posted_prices_per_profile():
    inst = Instance((U, TWO_POINT, U, Uniform(0, 2), TWO_POINT, U), K4)
    pol = build_greedy_spm(inst, [0.4, 0.7, 0.3, 0.5, 0.6, 0.2])
    spm = simulate(inst, PostedPriceMechanism(pol), 3000, seed=8)
    res = simulate(inst, ReserveVCG(pol), 3000, seed=8)
    assert np.all(res.values >= spm.values - 1e-12)


# -- expectations and reduction quantities ---------------------------------------------


def test_expected_performance_examples():
    pol = build_greedy_spm(single_item(), [0.375, 0.375])
    est = expected_performance(single_item(), pol, 100_000, seed=5)
    assert est.within(0.625 * 0.375 * (1 + 0.625), 3)
    zero = Instance((Discrete((0.0,), (1.0,)),) * 2, UniformMatroid(2, 1))
    assert expected_performance(zero, "optimal", 100).mean == 0
    with pytest.raises(DomainError):
        expected_performance(zero, "optimal", 0)


def test_reduction_quantity_examples():
    inst = single_item()
    pol = build_greedy_spm(inst, [0.375, 0.375])
    red = reduction_quantities(inst, pol, 100_000, seed=4)
    assert red.ed_rank == pytest.approx(0.625 * (1 - 0.625 ** 2), abs=1e-12)
    assert red.ew_rank.within(0.46875, 3)
    zero = build_greedy_spm(inst, [0.0, 0.0])
    red0 = reduction_quantities(inst, zero, 1000)
    assert red0.ed_rank == 0 and red0.ew_rank.mean == 0


def test_posted_price_revenue_equals_demand_greedy_on_matching():
    inst = Instance((U, TWO_POINT, U, U, Uniform(0, 2), U), MATCHING)
    pol = build_greedy_spm(inst, [0.3, 0.5, 0.4, 0.2, 0.5, 0.3])
    red = reduction_quantities(inst, pol, 2000, seed=1)
    est = expected_performance(inst, pol, 100_000, seed=2)
    assert est.within(red.ed_greedy, 3)
    assert red.ed_greedy <= red.ed_rank + 1e-12


# -- determinism ---------------------------------------------------------------------------


def test_simulation_is_deterministic_per_seed_and_workers():
    inst = Instance((U,) * 4, UniformMatroid(4, 2))
    a = simulate(inst, MYERSON, 2000, seed=9)
    b = simulate(inst, MYERSON, 2000, seed=9)
    assert np.array_equal(a.payments, b.payments)
    c = simulate(inst, MYERSON, 2000, seed=9, workers=2)
    d = simulate(inst, MYERSON, 2000, seed=9, workers=2)
    assert np.array_equal(c.payments, d.payments)
    assert not np.array_equal(a.payments, simulate(inst, MYERSON, 2000, seed=10).payments)


def test_worker_count_from_environment(monkeypatch):
    inst = Instance((U,) * 3, UniformMatroid(3, 1))
    monkeypatch.setenv("MECHLAB_WORKERS", "2")
    env = simulate(inst, MYERSON, 500, seed=1)
    explicit = simulate(inst, MYERSON, 500, seed=1, workers=2)
    assert np.array_equal(env.values, explicit.values)
