import dataclasses
import itertools
import math

import pytest
from hypothesis import given, strategies as st

from conftest import DEMO
from spectrumchain.consensus import point_interference_mw
from spectrumchain.crosschain import (NotaryCommittee, atomicity_audit, make_regions,
                                      region_of)
from spectrumchain.ledger import (GenesisConfig, LedgerError, Lock, Phase, SpectrumGrant,
                                  apply_transaction, genesis)
from spectrumchain.radio import Location, ProtectionPoint, RadioParams
from spectrumchain.runner import mean_pending_queue, simulate
from spectrumchain.scenario import load_scenario, loads_scenario

AREA = (0.0, 0.0, 2000.0, 2000.0)


@pytest.mark.parametrize("k", range(1, 10))
def test_region_layout(k):
    regs = make_regions(AREA, k)
    assert len(regs) == k and len({r.id for r in regs}) == k
    side = math.isqrt(k)
    if side * side == k:
        assert len({r.box[0] for r in regs}) == side


@given(st.integers(1, 9), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_regions_partition_the_plane(k, x, y):
    regs = make_regions(AREA, k)
    loc = Location(x, y)
    assert sum(r.contains(loc) for r in regs) == 1
    assert region_of(regs, loc).contains(loc)


def test_region_boundary_goes_right():
    regs = make_regions(AREA, 2)
    assert region_of(regs, Location(1000, 5)).id == "R1"
    with pytest.raises(ValueError):
        make_regions(AREA, 0)


@pytest.mark.parametrize("n", range(1, 6))
def test_quorum_truth_table(n):
    members = tuple(f"cm{i}" for i in range(n))
    for m in range(1, n + 1):
        c = NotaryCommittee(members, m)
        for r in range(n + 1):
            for subset in itertools.combinations(members, r):
                assert c.reached(subset) == (r >= m)
        # outsiders and repeats do not count
        assert not c.reached(["zz"] * 10) and c.reached(members * 2) is True
    with pytest.raises(ValueError):
        NotaryCommittee(members, n + 1)
    with pytest.raises(ValueError):
        NotaryCommittee(members, 0)


def test_locked_grant_still_interferes():
    pp = ProtectionPoint("pp", Location(0, 0), -80.0)
    g = SpectrumGrant("g", "a", Location(100, 0), RadioParams(20.0, 0), 1, {})
    _, s = genesis(GenesisConfig([g], {}, [pp]))
    from spectrumchain.radio import PropagationModel
    model = PropagationModel()
    before = point_interference_mw(list(s.grants.values()), s, model)
    locked = apply_transaction(s, Lock("g", "a", "t", 100))
    assert "g" in locked.grants
    assert point_interference_mw(list(locked.grants.values()), locked, model) == before
    with pytest.raises(LedgerError):
        apply_transaction(locked, Lock("g", "a", "u", 100))


TWO_REGIONS = """schema: 1
seed: 5
nodes:
  list:
    - {id: a, x: 100, y: 100}
    - {id: b, x: 1500, y: 100}
    - {id: c, x: 1600, y: 900}
consensus: {sensitivity_dbm: -100.0}
network: {base_latency: 5, jitter: 5}
regions: {chains: 2, lock_timeout: %d}
notaries: {count: 3, quorum: 2}
workload:
  script:
%s
"""


def two_region(script, lock_timeout=400):
    return simulate(loads_scenario(TWO_REGIONS % (lock_timeout, script)), "zone")


def test_cross_trade_commits_atomically():
    res = two_region("    - {at: 1, seller_grant: g-a, buyer: b}")
    (t,) = res.cross.trades.values()
    assert t.phase is Phase.COMMITTED and t.zone_size >= 1
    assert "g-a" not in res.states["R0"].grants
    assert t.mint.grant.grant_id in res.states["R1"].grants
    phases = [tx.phase for blk in res.chains["decision"] for tx in blk.txs]
    assert phases == [Phase.LOCKED, Phase.ATTESTED, Phase.COMMITTED]
    assert atomicity_audit(res).ok


def test_second_lock_on_same_grant_aborts():
    res = two_region("    - {at: 1, seller_grant: g-a, buyer: b}\n"
                     "    - {at: 1, seller_grant: g-a, buyer: c}")
    phases = sorted(t.phase.name for t in res.cross.trades.values())
    assert phases == ["ABORTED", "COMMITTED"]
    rep = atomicity_audit(res)
    assert rep.ok, rep.problems
    assert (rep.committed, rep.aborted) == (1, 1)


@pytest.mark.parametrize("timeout, unlocked", [(1, False), (15, True)])
def test_lock_expiry_aborts_and_unlocks(timeout, unlocked):
    # 1: the lock request arrives already expired; 15: it expires mid-protocol
    res = two_region("    - {at: 1, seller_grant: g-a, buyer: b}", lock_timeout=timeout)
    (t,) = res.cross.trades.values()
    assert t.phase is Phase.ABORTED
    kinds = [type(tx).__name__ for blk in res.chains["R0"] for tx in blk.txs]
    assert ("Unlock" in kinds) is unlocked and ("Lock" in kinds) is unlocked
    assert "g-a" in res.states["R0"].grants and not res.states["R0"].locks
    assert not res.states["R1"].grants.keys() - {"g-b", "g-c"}
    assert atomicity_audit(res).ok


def test_lossy_run_stays_atomic():
    sc = load_scenario(DEMO).with_overrides(seed=3, chains=4)
    sc.network = dataclasses.replace(sc.network, loss_prob=0.2)
    res = simulate(sc, "zone")
    rep = atomicity_audit(res)
    assert rep.trades > 0 and rep.ok, rep.problems[:5]
    assert rep.committed + rep.aborted == rep.trades


def test_sharding_shortens_queues():
    sc = load_scenario(DEMO)
    one = simulate(sc, "zone")
    four = simulate(sc.with_overrides(chains=4), "zone")
    assert (mean_pending_queue(four.engines, four.net.now)
            < mean_pending_queue(one.engines, one.net.now))
