import math

import pytest
from hypothesis import given, strategies as st

from spectrumchain.ledger import (GenesisConfig, LedgerError, SpectrumGrant, genesis,
                                  units_to_mw)
from spectrumchain.radio import Location, ProtectionPoint, RadioParams
from spectrumchain.runner import admission_counts
from spectrumchain.scenario import build_world, load_scenario
from spectrumchain.tiers import (COORDINATED, STATIC, AdmissionScenario, admit_entrants,
                                 allocate_units, contribution_units, equal_allocation,
                                 proportional_allocation, request_budget_adjustment,
                                 slack_units, tier_totals)
from conftest import DEMO

# reference values from tests/oracles/compute_oracles.py
EQUAL_M80_4 = -86.02059991327963
PROPORTIONAL_M80_123_MW = [1.6666666666666667e-09, 3.3333333333333334e-09, 5e-09]


def test_equal_allocation_examples():
    assert equal_allocation(-80.0, 4) == pytest.approx(EQUAL_M80_4, abs=1e-12)
    assert equal_allocation(0.0, 10) == pytest.approx(-10.0, abs=1e-12)
    assert equal_allocation(-80.0, 1) == -80.0
    with pytest.raises(ValueError):
        equal_allocation(-80.0, 0)


def test_proportional_allocation_examples():
    got = [10 ** (d / 10) for d in proportional_allocation(-80.0, [1, 2, 3])]
    assert got == pytest.approx(PROPORTIONAL_M80_123_MW, rel=1e-12)
    for bad in ([], [1, 0], [-1.0]):
        with pytest.raises(ValueError):
            proportional_allocation(-80.0, bad)


@given(st.floats(-120, -40), st.lists(st.floats(0.01, 100), min_size=1, max_size=40))
def test_allocations_sum_to_threshold(threshold, weights):
    total = math.fsum(10 ** (d / 10) for d in proportional_allocation(threshold, weights))
    assert total == pytest.approx(10 ** (threshold / 10), rel=1e-9)
    units = allocate_units(threshold, weights)
    assert sum(units) == math.floor(10 ** (threshold / 10) / units_to_mw(1))
    assert all(u >= 0 for u in units)


@given(st.floats(-120, -40), st.integers(1, 200))
def test_equal_sum_property(threshold, n):
    per = 10 ** (equal_allocation(threshold, n) / 10)
    assert n * per == pytest.approx(10 ** (threshold / 10), rel=1e-9)


POINT = ProtectionPoint("pp", Location(0, 0), -80.0)


def grant(gid, tier, budget, x=1000.0):
    return SpectrumGrant(gid, f"h-{gid}", Location(x, 0), RadioParams(10.0, 0), tier,
                         {"pp": budget})


def state_with_slack(model, slacks, requester_budget=0):
    base = contribution_units(grant("t", 1, 0), POINT, model)
    grants = [grant(f"u{i}", 1, base + s) for i, s in enumerate(slacks)]
    grants.append(grant("low", 2, requester_budget))
    _, state = genesis(GenesisConfig(grants, {}, [POINT]))
    return state


def test_greedy_takes_largest_slack_first(model):
    state = state_with_slack(model, [3, 5, 2])
    assert [slack_units(state.grants[f"u{i}"], POINT, model) for i in range(3)] == [3, 5, 2]
    txs = request_budget_adjustment(state.grants["low"], units_to_mw(6), state, model, "pp")
    assert [(t.donor_grant, t.deltas[0][1]) for t in txs] == [("u1", 5), ("u0", 1)]


def test_denial_when_slack_too_small(model):
    state = state_with_slack(model, [3, 5, 2])
    assert request_budget_adjustment(state.grants["low"], units_to_mw(11), state, model,
                                     "pp") is None


def test_exact_fit(model):
    state = state_with_slack(model, [3, 5, 2])
    txs = request_budget_adjustment(state.grants["low"], units_to_mw(10), state, model, "pp")
    assert sum(t.deltas[0][1] for t in txs) == 10


def test_top_tier_cannot_borrow(model):
    state = state_with_slack(model, [1])
    with pytest.raises(ValueError):
        request_budget_adjustment(state.grants["u0"], units_to_mw(1), state, model, "pp")


def test_budget_conserved_through_transfers(model):
    from spectrumchain.ledger import apply_transaction
    state = state_with_slack(model, [3, 5, 2])
    before = state.budget_total("pp")
    for tx in request_budget_adjustment(state.grants["low"], units_to_mw(7), state, model,
                                        "pp"):
        state = apply_transaction(state, tx)
    assert state.budget_total("pp") == before
    assert tier_totals(state, "pp")[2] == 7


def test_dominance_on_small_example(model):
    # one entrant that needs more than its static share but fits with borrowed slack
    need = contribution_units(grant("t", 2, 0, x=900.0), POINT, model)
    state = state_with_slack(model, [need // 2, need // 2])
    entrant = grant("new", 2, need // 4, x=900.0)
    adm = AdmissionScenario(state, [entrant], model)
    static = admit_entrants(adm, STATIC)
    coord = admit_entrants(adm, COORDINATED)
    assert static.count == 0
    assert coord.count == 1 and len(coord.adjustments) == 2
    assert coord.state.budget_total("pp") == state.budget_total("pp") + need // 4
    with pytest.raises(ValueError):
        admit_entrants(adm, "bogus")


@given(st.integers(0, 10 ** 6))
def test_coordinated_never_admits_fewer(seed):
    world = build_world(load_scenario(DEMO), seed)
    static, coord = admission_counts(world)
    assert coord >= static


def test_demo_strict_dominance():
    sc = load_scenario(DEMO)
    static, coord = admission_counts(build_world(sc, sc.seed))
    assert coord > static


def test_duplicate_grant_rejected_by_genesis():
    with pytest.raises(LedgerError):
        genesis(GenesisConfig([grant("a", 1, 1), grant("a", 2, 1)], {}, [POINT]))
