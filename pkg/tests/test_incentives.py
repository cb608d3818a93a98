import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spectrumchain.incentives import (FollowerProfile, LeaderOffer, allocate_and_compensate,
                                      follower_best_response, follower_utility, jain_index,
                                      leader_optimal_price, price_grid, revenue, run_market)

# reference values from tests/oracles/compute_oracles.py
LEADER_V10_20_Q4 = (5.0, 20.0)
RATIONED_Q2_P5 = ((0.5, 1.5), (1.25, 3.75))


def profiles(*vs):
    return [FollowerProfile(f"sp{i}", v) for i, v in enumerate(vs)]


def test_best_response_examples():
    assert follower_best_response(5, 10) == 1.0
    assert follower_best_response(5, 20) == 3.0
    assert follower_best_response(20, 10) == 0.0
    with pytest.raises(ValueError):
        follower_best_response(0, 10)


@given(st.floats(0.1, 100), st.floats(0.1, 100))
def test_best_response_is_a_maximum(p, v):
    q = follower_best_response(p, v)
    h = 1e-4
    u = follower_utility(q, p, v)
    assert follower_utility(q + h, p, v) <= u + 1e-12
    if q > h:
        assert follower_utility(q - h, p, v) <= u + 1e-12
        # first-order condition by central difference
        grad = (follower_utility(q + h, p, v) - follower_utility(q - h, p, v)) / (2 * h)
        assert abs(grad) < 1e-5 * max(1.0, v)


def test_leader_worked_example():
    p, r = leader_optimal_price(profiles(10, 20), 4)
    assert (p, r) == pytest.approx(LEADER_V10_20_Q4, abs=1e-9)


def test_leader_ties_go_low():
    p, _ = leader_optimal_price(profiles(10), 1.0, grid=[4.0, 5.0, 6.0])
    # revenue is p*min(1, 10/p-1): 4 and 5 both give full capacity, 5 earns more
    assert p == 5.0
    p, _ = leader_optimal_price(profiles(10), 100.0, grid=[1.0, 2.0])
    # demand-limited revenue 10-p: 9 vs 8
    assert p == 1.0


@given(st.integers(0, 10 ** 6))
def test_leader_matches_brute_force(seed):
    rnd = random.Random(seed)
    vs = [rnd.uniform(1, 50) for _ in range(rnd.randint(1, 6))]
    cap = rnd.uniform(0.5, 20)
    grid = price_grid(vs, 0.01)
    p, r = leader_optimal_price(profiles(*vs), cap, grid)
    brute = max((revenue(float(q), vs, cap), -float(q)) for q in grid)
    assert r == pytest.approx(brute[0], rel=1e-12)
    assert p == pytest.approx(-brute[1], abs=1e-12)
    # neighbours on the grid never earn more
    for q in (p - 0.01, p + 0.01):
        if q > 0:
            assert revenue(q, vs, cap) <= r + 1e-9


def test_price_grid():
    g = price_grid([10.0, 20.0], 5.0)
    assert list(g) == [5.0, 10.0, 15.0, 20.0]
    assert len(price_grid([20.0])) == 1000
    with pytest.raises(ValueError):
        price_grid([1.0], 0.0)


def test_rationing_example():
    out = allocate_and_compensate(profiles(10, 20), LeaderOffer(5.0, 2.0), alpha=0.5)
    assert out.allocation == pytest.approx(RATIONED_Q2_P5[0], abs=1e-12)
    assert out.compensation == pytest.approx(RATIONED_Q2_P5[1], abs=1e-12)
    assert out.rationed
    assert out.revenue == pytest.approx(5.0 * 2 - 5.0, abs=1e-12)
    assert out.jain > out.jain_before


def test_no_rationing_no_compensation():
    out = allocate_and_compensate(profiles(10, 20), LeaderOffer(5.0, 10.0))
    assert out.allocation == out.demand and not out.rationed


def test_compensation_capped_at_gross_revenue():
    out = allocate_and_compensate(profiles(1000, 1000), LeaderOffer(1.0, 0.01), alpha=1.0)
    assert math.fsum(out.compensation) <= 1.0 * 0.01 + 1e-12
    assert out.revenue >= -1e-12


@given(st.lists(st.floats(1, 100), min_size=1, max_size=8), st.floats(0.1, 50),
       st.floats(0, 1))
def test_allocation_never_exceeds_capacity(vs, cap, alpha):
    out = run_market(profiles(*vs), cap, alpha, step=0.1)
    assert math.fsum(out.allocation) <= cap * (1 + 1e-12)
    assert all(0 <= a <= d + 1e-12 for a, d in zip(out.allocation, out.demand))
    assert 0 < out.jain <= 1 + 1e-12


def test_jain_index():
    assert jain_index([1, 1, 1]) == 1.0
    assert jain_index([1, 0]) == 0.5
    assert jain_index([]) == 1.0
    assert jain_index(np.array([2.0, 2.0])) == 1.0


def test_bad_inputs():
    with pytest.raises(ValueError):
        FollowerProfile("x", 0.0)
    with pytest.raises(ValueError):
        LeaderOffer(-1, 1)
    with pytest.raises(ValueError):
        allocate_and_compensate(profiles(1), LeaderOffer(1, 1), alpha=1.5)
