"""Scenario execution, metrics and ledger audit."""
from __future__ import annotations

import csv
import json
import math
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .consensus import ConsensusEngine, TxRecord, safety_margins_db
from .incentives import FollowerProfile, run_market
from .ledger import (BudgetAdjust, Chain, LedgerError, LedgerState, Trade, Transaction,
                     apply_transaction, genesis, mw_to_units)
from .radio import NEG_INF, PropagationModel
from .scenario import Scenario, ScriptTx, World, build_world
from .simnet import Network, TraceRecord, write_trace
from .tiers import COORDINATED, STATIC, AdmissionScenario, admit_entrants

SAFETY_TOLERANCE_DB = 1e-6

TX_COLUMNS = ("index", "tx_id", "kind", "chain", "proposer", "submit_time", "finalize_time",
              "latency_ticks", "zone_size", "accepted", "committed")
MARKET_COLUMNS = ("follower", "valuation", "price", "demand", "allocation", "utility_before",
                  "compensation", "utility", "revenue", "jain_before", "jain")
RUN_COLUMNS = ("seed", "mode", "chains", "workload", "accepted", "committed",
               "admitted_static", "admitted_coordinated", "median_latency_zone",
               "median_latency_flood", "mean_zone_size", "cross_chain_trades",
               "cross_chain_abort_rate", "mean_pending_queue", "market_price",
               "market_revenue", "market_jain_before", "market_jain", "max_margin_db")


# -- workload -----------------------------------------------------------------


def busy_grants(engine: ConsensusEngine) -> set[str]:
    """Grants already in flight on ``engine`` (voting or awaiting a block)."""
    out: set[str] = set()
    for rnd in engine.rounds.values():
        out |= rnd.tx.grants_touched()
    for p in engine.pending:
        out |= p.tx.grants_touched()
    return out | set(engine.state.locks)


def random_trade(rng: random.Random, sc: Scenario, engine: ConsensusEngine,
                 now: int) -> Trade | None:
    """A trade of a random idle grant to a random other node, who will
    transmit from its own location with the grant's radio settings."""
    busy = busy_grants(engine)
    grants = [g for gid, g in sorted(engine.state.grants.items()) if gid not in busy]
    if not grants:
        return None
    g = rng.choice(grants)
    return _trade_to(rng, sc, g, engine.env.nodes, now)


def _trade_to(rng, sc, g, nodes, now) -> Trade | None:
    candidates = [n for n in sorted(nodes) if n != g.holder]
    radius = sc.workload.buyer_radius
    if radius is not None:
        near = [n for n in candidates if nodes[n].location.distance(g.location) <= radius]
        candidates = near or candidates
    if not candidates:
        return None
    buyer = rng.choice(candidates)
    return Trade(g.grant_id, g.holder, buyer, nodes[buyer].location, g.radio,
                 sc.workload.price, timestamp=now)


def scripted_tx(item: ScriptTx, state: LedgerState, nodes, now: int) -> Transaction | None:
    if item.kind == "trade":
        g = state.grants.get(item.seller_grant)
        if g is None or item.buyer not in nodes:
            return None
        loc = item.location or nodes[item.buyer].location
        return Trade(g.grant_id, g.holder, item.buyer, loc, g.radio, item.price, timestamp=now)
    donor = state.grants.get(item.donor)
    if donor is None:
        return None
    return BudgetAdjust(item.donor, donor.holder, item.recipient,
                        ((item.point, max(1, mw_to_units(item.amount_mw))),), now)


@dataclass
class Slot:
    """One workload item and the transaction it produced, if any."""

    index: int
    at: int
    tx_id: str = ""
    chain: str = ""


def schedule_workload(sc: Scenario, engine: ConsensusEngine, seed: int) -> list[Slot]:
    rng = random.Random(f"workload:{seed}")
    slots: list[Slot] = []
    wl = sc.workload

    def make(slot: Slot, build: Callable[[int], Transaction | None]):
        def source(eng: ConsensusEngine, now: int):
            tx = build(now)
            if tx is not None:
                slot.tx_id = tx.tx_id
                slot.chain = eng.agent
            return tx
        return source

    if wl.script is not None:
        for i, item in enumerate(wl.script):
            slot = Slot(i, item.at)
            slots.append(slot)
            engine.submit(make(slot, lambda now, item=item: scripted_tx(
                item, engine.state, engine.env.nodes, now)), item.at)
    else:
        for i in range(wl.trades):
            slot = Slot(i, wl.start + i * wl.interval)
            slots.append(slot)
            engine.submit(make(slot, lambda now: random_trade(rng, sc, engine, now)), slot.at)
    return slots


# -- single-chain simulation --------------------------------------------------


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    mode: str
    world: World
    genesis_state: LedgerState
    net: Network
    chains: dict[str, Chain]
    states: dict[str, LedgerState]
    engines: list[ConsensusEngine]
    slots: list[Slot]
    rows: list[dict[str, Any]] = field(default_factory=list)
    cross: Any = None

    @property
    def records(self) -> list[TxRecord]:
        return [r for e in self.engines for r in e.records]

    @property
    def chain(self) -> Chain:
        return next(iter(self.chains.values()))

    @property
    def state(self) -> LedgerState:
        return next(iter(self.states.values()))

    @property
    def trace(self) -> list[TraceRecord]:
        return self.net.trace


def simulate(sc: Scenario, mode: str = "zone", seed: int | None = None) -> SimResult:
    """Run the scenario to quiescence. Multi-region scenarios go through the
    cross-chain coordinator."""
    sc = sc.with_overrides(seed=seed)
    if sc.chains > 1:
        from .crosschain import simulate_regions
        return simulate_regions(sc, mode)
    world = build_world(sc)
    chain, state = genesis(world.genesis_config())
    net = Network(sc.network)
    engine = ConsensusEngine(net, world.env, sc.consensus, chain, state, mode)
    slots = schedule_workload(sc, engine, sc.seed)
    net.run_until()
    res = SimResult(sc, sc.seed, mode, world, state, net, {"main": engine.chain},
                    {"main": engine.state}, [engine], slots)
    res.rows = tx_rows(slots, [engine])
    return res


def tx_rows(slots: list[Slot], engines: list[ConsensusEngine]) -> list[dict[str, Any]]:
    by_id = {r.tx_id: (e, r) for e in engines for r in e.records}
    rows = []
    for s in slots:
        hit = by_id.get(s.tx_id)
        if hit is None:
            rows.append(dict(index=s.index, tx_id="", kind="none", chain="", proposer="",
                             submit_time=s.at, finalize_time="", latency_ticks="",
                             zone_size=0, accepted=0, committed=0))
            continue
        eng, r = hit
        rows.append(dict(index=s.index, tx_id=r.tx_id, kind=r.kind, chain=eng.agent,
                         proposer=r.proposer, submit_time=r.submit_time,
                         finalize_time=_blank(r.finalize_time), latency_ticks=_blank(r.latency),
                         zone_size=r.zone_size, accepted=int(r.accepted),
                         committed=int(r.committed)))
    return rows


def _blank(v):
    return "" if v is None else v


def median_latency(rows: list[dict[str, Any]]) -> float | None:
    lat = [r["latency_ticks"] for r in rows if r["latency_ticks"] != ""]
    return statistics.median(lat) if lat else None


def mean_pending_queue(engines: list[ConsensusEngine], horizon: int) -> float:
    """Time-averaged number of transactions per chain that are proposed but
    not yet in a block, dropped or rejected (Little's law over sojourns)."""
    if horizon <= 0 or not engines:
        return 0.0
    total = math.fsum(r.end_time - r.submit_time for e in engines for r in e.records
                      if r.end_time is not None)
    return total / (horizon * len(engines))


# -- audit --------------------------------------------------------------------


@dataclass
class AuditReport:
    blocks: int = 0
    max_margin_db: float = NEG_INF
    violations: list[tuple[int, str, float]] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and not self.violations


def audit_chain(chain, model: PropagationModel,
                tolerance_db: float = SAFETY_TOLERANCE_DB) -> AuditReport:
    """Replay ``chain`` and compute, by brute force, the aggregate-minus-
    threshold margin at every protection point after every block."""
    rep = AuditReport()
    state = LedgerState()
    for blk in chain:
        try:
            for tx in blk.txs:
                state = apply_transaction(state, tx)
        except LedgerError as exc:
            rep.error = f"block {blk.height}: {exc}"
            return rep
        rep.blocks += 1
        for pid, margin in safety_margins_db(state, model).items():
            rep.max_margin_db = max(rep.max_margin_db, margin)
            if margin > tolerance_db:
                rep.violations.append((blk.height, pid, margin))
    return rep


# -- output -------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if v == NEG_INF:
            return "-inf"
        return repr(round(v, 9))
    return str(v)


def write_rows(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def admission_counts(world: World) -> tuple[int, int]:
    if not world.entrants:
        return 0, 0
    _, state = genesis(world.genesis_config())
    adm = AdmissionScenario(state, list(world.entrants), world.scenario.model)
    return admit_entrants(adm, STATIC).count, admit_entrants(adm, COORDINATED).count


def run_metrics(res: SimResult, other_median: float | None) -> dict[str, Any]:
    sc = res.scenario
    rows = res.rows
    static, coord = admission_counts(res.world)
    med = median_latency(rows)
    zone_sizes = [r["zone_size"] for r in rows if r["kind"] != "none"]
    worst = NEG_INF
    for name, chain in sorted(res.chains.items()):
        worst = max(worst, audit_chain(chain, sc.model).max_margin_db)
    out = dict(seed=res.seed, mode=res.mode, chains=sc.chains, workload=len(rows),
               accepted=sum(r["accepted"] for r in rows),
               committed=sum(r["committed"] for r in rows),
               admitted_static=static, admitted_coordinated=coord,
               median_latency_zone=med if res.mode == "zone" else other_median,
               median_latency_flood=med if res.mode == "flood" else other_median,
               mean_zone_size=statistics.fmean(zone_sizes) if zone_sizes else None,
               cross_chain_trades=0, cross_chain_abort_rate=None,
               mean_pending_queue=mean_pending_queue(res.engines, res.net.now),
               max_margin_db=worst)
    if res.cross is not None:
        n = len(res.cross.trades)
        out["cross_chain_trades"] = n
        out["cross_chain_abort_rate"] = res.cross.aborted / n if n else None
    if sc.market is not None:
        m = market_outcome(sc)
        out.update(market_price=m.price, market_revenue=m.revenue,
                   market_jain_before=m.jain_before, market_jain=m.jain)
    return out


def market_outcome(sc: Scenario):
    return run_market([FollowerProfile(i, v) for i, v in sc.market.valuations],
                      sc.market.capacity, sc.market.alpha, sc.market.step)


def market_rows(sc: Scenario) -> list[dict[str, Any]]:
    m = market_outcome(sc)
    return [dict(follower=fid, valuation=v, price=m.price, demand=m.demand[i],
                 allocation=m.allocation[i], utility_before=m.utility_before[i],
                 compensation=m.compensation[i], utility=m.utility[i], revenue=m.revenue,
                 jain_before=m.jain_before, jain=m.jain)
            for i, (fid, v) in enumerate(sc.market.valuations)]


def ledger_files(res: SimResult) -> dict[str, Chain]:
    if len(res.chains) == 1:
        return {"ledger.bin": res.chain}
    return {("decision.bin" if name == "decision" else f"ledger-{name}.bin"): ch
            for name, ch in sorted(res.chains.items())}


def run(sc: Scenario, out_dir, mode: str = "zone", seed: int | None = None) -> dict[str, Any]:
    """Simulate and write ledger(s), trace.tsv, metrics.csv, run_metrics.csv
    and summary.json into ``out_dir``. Returns the per-run metrics."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = simulate(sc, mode, seed)
    other = simulate(sc, "flood" if mode == "zone" else "zone", seed)
    metrics = run_metrics(res, median_latency(other.rows))
    files = []
    for name, chain in ledger_files(res).items():
        chain.save(out / name)
        files.append(name)
    write_trace(res.trace, out / "trace.tsv")
    write_rows(out / "metrics.csv", TX_COLUMNS, res.rows)
    write_rows(out / "run_metrics.csv", RUN_COLUMNS, [metrics])
    files += ["trace.tsv", "metrics.csv", "run_metrics.csv"]
    if sc.market is not None:
        write_rows(out / "market.csv", MARKET_COLUMNS, market_rows(sc))
        files.append("market.csv")
    files.append("summary.json")
    summary = {"scenario": sc.name, "files": files,
               "metrics": {k: _json_value(v) for k, v in metrics.items()}}
    with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return metrics


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# -- trace cross-check --------------------------------------------------------


def derive_from_trace(trace: list[TraceRecord]) -> dict[str, dict[str, Any]]:
    """Recompute per-transaction latency, zone size and outcome from trace
    annotations alone. Cross-chain trades are keyed by trade id."""
    start: dict[str, int] = {}
    final: dict[str, tuple[int, bool]] = {}
    zones: dict[str, int] = {}
    mint_of: dict[str, str] = {}
    cross: set[str] = set()
    for r in trace:
        if r.kind == "round" or r.kind == "xsubmit":
            start.setdefault(r.tx_id, r.time)
            if r.kind == "xsubmit":
                cross.add(r.tx_id)
        elif r.kind == "zone":
            zones[r.tx_id] = zones.get(r.tx_id, 0) + 1
        elif r.kind.startswith("finalize:") and r.tx_id not in cross:
            final.setdefault(r.tx_id, (r.time, r.kind == "finalize:accepted"))
        elif r.kind.startswith("xdecide:"):
            final[r.tx_id] = (r.time, r.kind == "xdecide:committed")
        elif r.kind.startswith("xmint:"):
            mint_of[r.tx_id] = r.kind.split(":", 1)[1]
    out = {}
    for tx_id, t0 in start.items():
        t1, ok = final.get(tx_id, (None, False))
        zone = zones.get(mint_of.get(tx_id, ""), 0) if tx_id in cross else zones.get(tx_id, 0)
        out[tx_id] = {"latency_ticks": "" if t1 is None else t1 - t0,
                      "zone_size": zone, "accepted": int(ok)}
    return out


def check_rows_against_trace(rows: list[dict[str, str]],
                             trace: list[TraceRecord]) -> list[str]:
    """Mismatches between metrics.csv rows (as read back) and the trace."""
    derived = derive_from_trace(trace)
    problems = []
    for row in rows:
        if row["kind"] == "none":
            continue
        d = derived.get(row["tx_id"])
        if d is None:
            problems.append(f"row {row['index']}: {row['tx_id'][:12]} missing from trace")
            continue
        for col in ("latency_ticks", "zone_size", "accepted"):
            if str(d[col]) != row[col]:
                problems.append(f"row {row['index']}: {col} {row[col]!r} != trace {d[col]!r}")
    return problems
