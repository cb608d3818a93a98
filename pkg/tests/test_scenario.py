import pytest

from conftest import DEMO
from spectrumchain.scenario import (ConfigError, build_world, grant_id_for, load_scenario,
                                    loads_scenario)

BASE = """schema: 1
nodes:
  generate: {count: 4, tx_power_dbm: 20.0, channels: [0], balance: 1}
"""


def error_of(text):
    with pytest.raises(ConfigError) as exc:
        loads_scenario(text)
    return exc.value


def test_minimal_defaults():
    sc = loads_scenario(BASE)
    assert sc.consensus.sensitivity_dbm == -90.0
    assert sc.consensus.vote_timeout == sc.network.round_trip + 1
    assert sc.chains == 1 and sc.workload.size == 0


def test_demo_loads():
    sc = load_scenario(DEMO)
    assert sc.name == "demo" and sc.seed == 7 and sc.workload.size == 200
    assert (sc.band.low_mhz, sc.band.high_mhz) == (3550.0, 3700.0)


@pytest.mark.parametrize("text, line, words", [
    (BASE + "bogus: 1\n", 4, "bogus"),
    (BASE + "consensus:\n  sensitivity_dbm: -90.05\n", 5, "sensitivity_dbm"),
    (BASE + "network: {loss_prob: 1.5}\n", 4, "loss_prob"),
    (BASE + "notaries: {count: 2, quorum: 3}\n", 4, "quorum"),
    (BASE + "workload:\n  script:\n    - {at: 1, kind: swap}\n", 6, "swap"),
    ("schema: 2\nnodes: {}\n", 1, "schema"),
    (BASE + "tiers: 3\ntiers: 2\n", 5, "tiers"),
    (BASE + "area: [0, 0, 0, 10]\n", 4, "area"),
])
def test_errors_carry_line_numbers(text, line, words):
    err = error_of(text)
    assert err.line == line and words in str(err)
    assert str(err).startswith(f"line {line}:")


def test_missing_nodes():
    assert "nodes" in str(error_of("schema: 1\n"))


def test_tenth_db_precision_accepted():
    sc = loads_scenario(BASE + "consensus: {tolerance_dbm: -60.1}\n")
    assert sc.consensus.tolerance_dbm == -60.1


LISTED = """schema: 1
nodes:
  list:
    - {id: a, x: 0, y: 0}
    - {id: b, x: 10, y: 0, grant: false}
protection_points:
  list: [{id: p, x: 500, y: 500}]
workload:
  script:
"""


def test_script_references_checked():
    ok = LISTED + "    - {at: 1, seller_grant: g-a, buyer: b, x: 1, y: 1}\n"
    assert loads_scenario(ok).workload.size == 1
    for bad, word in [("{at: 1, seller_grant: g-b, buyer: a}", "g-b"),
                      ("{at: 1, seller_grant: g-a, buyer: zz}", "zz"),
                      ("{at: 1, kind: budget_adjust, donor: g-a, recipient: g-a, point: q}",
                       "q")]:
        err = error_of(LISTED + f"    - {bad}\n")
        assert err.line == 10 and word in str(err)


def test_power_out_of_limits():
    err = error_of("schema: 1\nnodes:\n  list:\n    - {id: a, x: 0, y: 0, tx_power_dbm: 40.0}\n")
    assert err.line == 4


def test_overrides_and_world_determinism():
    sc = load_scenario(DEMO)
    w1, w2 = build_world(sc, 3), build_world(sc, 3)
    assert w1.grants == w2.grants and w1.points == w2.points
    assert build_world(sc, 4).grants != w1.grants
    sc2 = sc.with_overrides(seed=11, chains=4)
    assert (sc2.seed, sc2.chains, sc2.network.seed) == (11, 4, 11)
    assert sc.seed == 7
    assert grant_id_for("n001") == "g-n001"
