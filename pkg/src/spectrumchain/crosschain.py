"""Regional chains joined by notaries and a decision chain.

A trade whose buyer sits in another region runs in two phases:

1. The source chain locks the seller's grant. The destination chain runs
   zone consensus on minting the relocated grant; if accepted, the grant is
   reserved there (counted as an interferer, not yet active).
2. Notaries that saw both the lock and the destination verdict attest to the
   decision actor. At quorum the decision chain records ``ATTESTED``, which
   is the commit point: retire on the source and mint on the destination are
   then delivered with retries until both are acknowledged (``COMMITTED``).
   A destination rejection or an expired lock records ``ABORTED`` and the
   source unlocks.

Every request that must eventually arrive is retried until acknowledged;
notary traffic is best effort, so a silent notary can only cause an abort.
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field

from .consensus import ConsensusEngine, Outcome, TxRecord
from .ledger import (Block, Chain, CrossMint, CrossRetire, DecisionTx, LedgerError,
                     LedgerState, Lock, Phase, SpectrumGrant, Trade, Transaction, Unlock,
                     GenesisGrant, apply_transaction, genesis, replay, verify_chain,
                     ZERO_HASH)
from .radio import Location
from .scenario import Scenario, build_world
from .simnet import Event, Network

DecisionRecord = DecisionTx
DECISION_ACTOR = "decision"
WORKLOAD_ACTOR = "workload"


# -- regions ------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    id: str
    box: tuple[float, float, float, float]

    @property
    def agent(self) -> str:
        return f"chain:{self.id}"

    def contains(self, loc: Location) -> bool:
        x0, y0, x1, y1 = self.box
        return x0 <= loc.x < x1 and y0 <= loc.y < y1


def make_regions(area: tuple[float, float, float, float], k: int) -> list[Region]:
    """Partition the plane into ``k`` boxes: a square grid when ``k`` is a
    perfect square, vertical strips otherwise. Outer edges extend to
    infinity so every location falls in exactly one region."""
    if k < 1:
        raise ValueError("need at least one region")
    x0, y0, x1, y1 = area
    side = math.isqrt(k)
    cols, rows = (side, side) if side * side == k else (k, 1)

    def cuts(lo, hi, n):
        inner = [lo + (hi - lo) * i / n for i in range(1, n)]
        return [-math.inf] + inner + [math.inf]

    xs, ys = cuts(x0, x1, cols), cuts(y0, y1, rows)
    out = []
    for r in range(rows):
        for c in range(cols):
            out.append(Region(f"R{len(out)}", (xs[c], ys[r], xs[c + 1], ys[r + 1])))
    return out


def region_of(regions: list[Region], loc: Location) -> Region:
    for reg in regions:
        if reg.contains(loc):
            return reg
    raise ValueError(f"location {loc} outside every region")


@dataclass(frozen=True)
class NotaryCommittee:
    members: tuple[str, ...]
    quorum: int

    def __post_init__(self):
        if not 1 <= self.quorum <= len(self.members):
            raise ValueError("quorum must satisfy 1 <= m <= n")
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate notary ids")

    def reached(self, attesters) -> bool:
        return len(set(attesters) & set(self.members)) >= self.quorum


# -- decision chain -----------------------------------------------------------


class DecisionChain:
    """Hash chain of phase changes; one transaction per block."""

    def __init__(self):
        self.chain = Chain([Block.build(0, ZERO_HASH, [])])
        self.state = LedgerState()

    def phase(self, trade_id: str) -> Phase | None:
        rec = self.state.decisions.get(trade_id)
        return rec.phase if rec else None

    def record(self, tx: DecisionTx) -> None:
        self.state = apply_transaction(self.state, tx)
        self.chain.append(Block.build(self.chain.next_height, self.chain.tip_hash, [tx]))


# -- protocol -----------------------------------------------------------------


@dataclass
class CrossTrade:
    index: int
    trade_id: str
    submit_time: int
    seller: str
    buyer: str
    source: Region
    dest: Region
    lock: Lock
    mint: CrossMint
    phase: Phase | None = None
    final_time: int | None = None
    zone_size: int = 0
    attesters: set[str] = field(default_factory=set)
    acks: set[str] = field(default_factory=set)

    @property
    def committed(self) -> bool:
        return self.phase is Phase.COMMITTED


def cross_trade_id(grant_id: str, buyer: str, loc: Location, now: int, index: int) -> str:
    h = hashlib.sha256(f"{grant_id}|{buyer}|{loc.x!r}|{loc.y!r}|{now}|{index}".encode())
    return h.hexdigest()


@dataclass
class _Notary:
    lock_ok: set[str] = field(default_factory=set)
    dest: dict[str, bool] = field(default_factory=dict)
    sent: set[str] = field(default_factory=set)


class CrossChainCoordinator:
    def __init__(self, net: Network, engines: dict[str, ConsensusEngine], regions: list[Region],
                 committee: NotaryCommittee, lock_timeout: int, retry: int):
        self.net = net
        self.engines = engines
        self.regions = regions
        self.by_agent = {e.agent: e for e in engines.values()}
        self.committee = committee
        self.lock_timeout = lock_timeout
        self.retry = retry
        self.decision = DecisionChain()
        self.trades: dict[str, CrossTrade] = {}
        self._by_mint: dict[str, CrossTrade] = {}
        self._outstanding: dict[tuple[str, str, str], tuple] = {}
        self._lock_results: dict[str, bool] = {}
        self._mint_started: set[str] = set()
        self._minted: set[str] = set()
        self._dest_aborted: set[str] = set()
        self._notaries = {n: _Notary() for n in committee.members}
        for e in engines.values():
            e.on_message = self._on_message
            e.on_final = self._on_final
        for n in committee.members:
            net.add_node(n, self._on_message)
        net.add_node(DECISION_ACTOR, self._on_message)

    @property
    def aborted(self) -> int:
        return sum(1 for t in self.trades.values() if t.phase is Phase.ABORTED)

    @property
    def in_flight(self) -> set[str]:
        """Grants of cross trades not yet decided."""
        return {t.lock.grant_id for t in self.trades.values() if t.final_time is None}

    def engine_of(self, region: Region) -> ConsensusEngine:
        return self.engines[region.id]

    # transport ------------------------------------------------------------

    def _reliable(self, kind: str, src: str, dst: str, trade_id: str, payload=None) -> None:
        key = (kind, trade_id, dst)
        self._outstanding[key] = (kind, src, dst, trade_id, payload)
        self._transmit(key)

    def _transmit(self, key) -> None:
        kind, src, dst, trade_id, payload = self._outstanding[key]
        self.net.send(kind, src, dst, trade_id, payload)
        self.net.set_timer(src, self.retry, "retry", trade_id, payload=key)

    def _ack(self, ev: Event, result=None) -> None:
        self.net.send(ev.kind + "_ack", ev.target, ev.source, ev.tx_id, payload=result)

    # workload -------------------------------------------------------------

    def start_trade(self, index: int, grant: SpectrumGrant, buyer: str, loc: Location,
                    now: int) -> CrossTrade:
        source = region_of(self.regions, grant.location)
        dest = region_of(self.regions, loc)
        tid = cross_trade_id(grant.grant_id, buyer, loc, now, index)
        minted = SpectrumGrant("x-" + tid[:16], buyer, loc, grant.radio, grant.tier)
        t = CrossTrade(index, tid, now, grant.holder, buyer, source, dest,
                       Lock(grant.grant_id, grant.holder, tid, now + self.lock_timeout, now),
                       CrossMint(minted, tid, now))
        self.trades[tid] = t
        self._by_mint[t.mint.tx_id] = t
        self.net.note("xsubmit", t.seller, source.agent, tid)
        self._reliable("lock", t.seller, source.agent, tid)
        return t

    # dispatch -------------------------------------------------------------

    def _on_message(self, ev: Event) -> None:
        if ev.kind == "retry":
            if ev.payload in self._outstanding:
                self._transmit(ev.payload)
            return
        if ev.kind.endswith("_ack"):
            key = (ev.kind[:-4], ev.tx_id, ev.source)
            if self._outstanding.pop(key, None) is None:
                return  # duplicate acknowledgement
        t = self.trades.get(ev.tx_id)
        if t is None:
            return
        handler = getattr(self, "_h_" + ev.kind, None)
        if handler is None:
            raise ValueError(f"unexpected message kind {ev.kind!r}")
        handler(t, ev)

    # source chain ---------------------------------------------------------

    def _h_lock(self, t: CrossTrade, ev: Event) -> None:
        if t.trade_id not in self._lock_results:
            ok = self.net.now < t.lock.expires
            if ok:
                # a lock request that arrives after its own expiry is refused
                try:
                    self.engine_of(t.source).apply_system(t.lock)
                except LedgerError:
                    ok = False
            self._lock_results[t.trade_id] = ok
            if ok:
                for n in self.committee.members:
                    self.net.send("lock_evidence", t.source.agent, n, t.trade_id)
                self.net.set_timer(t.source.agent, t.lock.expires - self.net.now,
                                   "lock_expiry", t.trade_id)
        self._ack(ev, self._lock_results[t.trade_id])

    def _locked_by(self, t: CrossTrade) -> bool:
        lock = self.engine_of(t.source).state.locks.get(t.lock.grant_id)
        return lock is not None and lock.trade_id == t.trade_id

    def _h_lock_expiry(self, t: CrossTrade, ev: Event) -> None:
        # the source never unlocks on its own; the decision chain decides
        if self._locked_by(t):
            self._reliable("abort_request", t.source.agent, DECISION_ACTOR, t.trade_id)

    def _h_commit_retire(self, t: CrossTrade, ev: Event) -> None:
        if self._locked_by(t):
            self.engine_of(t.source).apply_system(CrossRetire(t.lock.grant_id, t.trade_id,
                                                              self.net.now))
        self._ack(ev)

    def _h_abort(self, t: CrossTrade, ev: Event) -> None:
        if ev.target == t.source.agent:
            if self._locked_by(t):
                self.engine_of(t.source).apply_system(Unlock(t.lock.grant_id, t.trade_id,
                                                             self.net.now))
        else:
            self._dest_aborted.add(t.trade_id)
            self.engine_of(t.dest).release(t.mint.grant.grant_id)
        self._ack(ev)

    # seller and buyer -----------------------------------------------------

    def _h_lock_ack(self, t: CrossTrade, ev: Event) -> None:
        if ev.payload:
            self._reliable("xpropose", t.seller, t.buyer, t.trade_id)
        else:
            self._reliable("abort_request", t.seller, DECISION_ACTOR, t.trade_id)

    def _h_xpropose(self, t: CrossTrade, ev: Event) -> None:
        self._ack(ev)
        if t.trade_id in self._mint_started:
            return
        self._mint_started.add(t.trade_id)
        self.net.note(f"xmint:{t.mint.tx_id}", t.buyer, t.dest.agent, t.trade_id)
        rec = self.engine_of(t.dest).start(t.mint)
        t.zone_size = rec.zone_size

    def _on_final(self, rec: TxRecord, tx: Transaction, outcome: Outcome) -> None:
        t = self._by_mint.get(tx.tx_id) if isinstance(tx, CrossMint) else None
        if t is None:
            return
        accepted = outcome is Outcome.ACCEPTED
        if accepted and t.trade_id not in self._dest_aborted:
            self.engine_of(t.dest).reserve(t.mint.grant)
        for n in self.committee.members:
            self.net.send("dest_result", t.buyer, n, t.trade_id, payload=accepted)

    # notaries -------------------------------------------------------------

    def _h_lock_evidence(self, t: CrossTrade, ev: Event) -> None:
        self._notaries[ev.target].lock_ok.add(t.trade_id)
        self._notary_check(ev.target, t)

    def _h_dest_result(self, t: CrossTrade, ev: Event) -> None:
        self._notaries[ev.target].dest[t.trade_id] = bool(ev.payload)
        self._notary_check(ev.target, t)

    def _notary_check(self, notary: str, t: CrossTrade) -> None:
        st = self._notaries[notary]
        tid = t.trade_id
        if tid in st.sent or tid not in st.dest:
            return
        if not st.dest[tid]:
            st.sent.add(tid)
            self.net.send("reject", notary, DECISION_ACTOR, tid)
        elif tid in st.lock_ok:
            st.sent.add(tid)
            self.net.send("attest", notary, DECISION_ACTOR, tid)

    # decision actor -------------------------------------------------------

    def _record(self, t: CrossTrade, phase: Phase) -> None:
        self.decision.record(DecisionTx(t.trade_id, t.source.id, t.dest.id, t.lock.grant_id,
                                        phase, tuple(t.attesters), self.net.now))
        t.phase = phase
        if phase in (Phase.COMMITTED, Phase.ABORTED):
            t.final_time = self.net.now
            self.net.note(f"xdecide:{phase.name.lower()}", DECISION_ACTOR, t.source.agent,
                          t.trade_id)

    def _abort(self, t: CrossTrade) -> None:
        self._record(t, Phase.ABORTED)
        self._reliable("abort", DECISION_ACTOR, t.source.agent, t.trade_id)
        self._reliable("abort", DECISION_ACTOR, t.dest.agent, t.trade_id)

    def _h_attest(self, t: CrossTrade, ev: Event) -> None:
        if t.phase is None:
            self._record(t, Phase.LOCKED)
        if t.phase is not Phase.LOCKED:
            return
        t.attesters.add(ev.source)
        if self.committee.reached(t.attesters):
            self._record(t, Phase.ATTESTED)
            self._reliable("commit_retire", DECISION_ACTOR, t.source.agent, t.trade_id)
            self._reliable("commit_mint", DECISION_ACTOR, t.dest.agent, t.trade_id)

    def _h_reject(self, t: CrossTrade, ev: Event) -> None:
        if t.phase in (None, Phase.LOCKED):
            self._abort(t)

    def _h_abort_request(self, t: CrossTrade, ev: Event) -> None:
        self._ack(ev)
        if t.phase in (None, Phase.LOCKED):
            self._abort(t)

    def _h_commit_retire_ack(self, t: CrossTrade, ev: Event) -> None:
        self._commit_ack(t, "retire")

    def _h_commit_mint_ack(self, t: CrossTrade, ev: Event) -> None:
        self._commit_ack(t, "mint")

    def _commit_ack(self, t: CrossTrade, part: str) -> None:
        t.acks.add(part)
        if t.acks == {"retire", "mint"} and t.phase is Phase.ATTESTED:
            self._record(t, Phase.COMMITTED)

    # destination chain ----------------------------------------------------

    def _h_commit_mint(self, t: CrossTrade, ev: Event) -> None:
        eng = self.engine_of(t.dest)
        # idempotent per trade: the minted grant may since have moved on
        if t.trade_id not in self._minted:
            self._minted.add(t.trade_id)
            eng.release(t.mint.grant.grant_id)
            eng.apply_system(CrossMint(t.mint.grant, t.trade_id, self.net.now))
        self._ack(ev)

    def _h_abort_ack(self, t: CrossTrade, ev: Event) -> None:
        pass

    def _h_xpropose_ack(self, t: CrossTrade, ev: Event) -> None:
        pass

    def _h_abort_request_ack(self, t: CrossTrade, ev: Event) -> None:
        pass


# -- simulation ---------------------------------------------------------------


def simulate_regions(sc: Scenario, mode: str = "zone"):
    """Run a multi-region scenario to quiescence (see ``runner.simulate``)."""
    from .consensus import RadioEnvironment
    from .runner import SimResult, Slot, busy_grants, tx_rows

    world = build_world(sc)
    regions = make_regions(sc.area, sc.chains)
    net = Network(sc.network)
    engines: dict[str, ConsensusEngine] = {}
    genesis_states = {}
    for reg in regions:
        nodes = {n: v for n, v in world.nodes.items() if reg.contains(v.location)}
        cfg = world.genesis_config(
            grants=[g for g in world.grants if reg.contains(g.location)],
            points=[p for p in world.points if reg.contains(p.location)],
            balances={n: b for n, b in world.balances.items() if n in nodes})
        chain, state = genesis(cfg)
        genesis_states[reg.id] = state
        engines[reg.id] = ConsensusEngine(net, RadioEnvironment(nodes, sc.model), sc.consensus,
                                          chain, state, mode, reg.id)
    committee = NotaryCommittee(tuple(f"cm{i}" for i in range(sc.notaries)), sc.quorum)
    coord = CrossChainCoordinator(net, engines, regions, committee, sc.lock_timeout,
                                  sc.network.round_trip + 1)

    rng = random.Random(f"workload:{sc.seed}")
    slots: list[Slot] = []
    wl = sc.workload

    def idle_grants():
        out = []
        flying = coord.in_flight
        for reg in regions:
            eng = engines[reg.id]
            busy = busy_grants(eng) | flying
            out += [g for gid, g in eng.state.grants.items() if gid not in busy]
        return sorted(out, key=lambda g: g.grant_id)

    def owner(gid):
        for reg in regions:
            g = engines[reg.id].state.grants.get(gid)
            if g is not None:
                return reg, g
        return None, None

    def fire(ev: Event) -> None:
        slot = slots[ev.payload]
        now = net.now
        if wl.script is not None:
            item = wl.script[slot.index]
            if item.kind != "trade":
                raise ValueError("multi-region runs support scripted trades only")
            reg, g = owner(item.seller_grant)
            if g is None or item.buyer not in world.nodes:
                return
            loc = item.location or world.nodes[item.buyer].location
            buyer = item.buyer
        else:
            grants = idle_grants()
            if not grants:
                return
            g = rng.choice(grants)
            reg = region_of(regions, g.location)
            candidates = [n for n in sorted(world.nodes) if n != g.holder]
            if wl.cross_only:
                candidates = [n for n in candidates
                              if not reg.contains(world.nodes[n].location)]
            if wl.buyer_radius is not None:
                near = [n for n in candidates
                        if world.nodes[n].location.distance(g.location) <= wl.buyer_radius]
                candidates = near or candidates
            if not candidates:
                return
            buyer = rng.choice(candidates)
            loc = world.nodes[buyer].location
        if reg.contains(loc):
            tx = Trade(g.grant_id, g.holder, buyer, loc, g.radio, wl.price, timestamp=now)
            engines[reg.id].start(tx)
            slot.tx_id, slot.chain = tx.tx_id, reg.agent
        else:
            t = coord.start_trade(slot.index, g, buyer, loc, now)
            slot.tx_id, slot.chain = t.trade_id, "cross"

    net.add_node(WORKLOAD_ACTOR, fire)
    items = (wl.script if wl.script is not None
             else [wl.start + i * wl.interval for i in range(wl.trades)])
    for i, item in enumerate(items):
        at = item.at if wl.script is not None else item
        slots.append(Slot(i, at))
        net.set_timer(WORKLOAD_ACTOR, at, "submit", payload=i)
    net.run_until()

    chains = {reg.id: engines[reg.id].chain for reg in regions}
    chains["decision"] = coord.decision.chain
    states = {reg.id: engines[reg.id].state for reg in regions}
    states["decision"] = coord.decision.state
    res = SimResult(sc, sc.seed, mode, world, genesis_states, net, chains, states,
                    [engines[r.id] for r in regions], slots)
    res.cross = coord
    res.rows = tx_rows(slots, res.engines)
    for row, slot in zip(res.rows, slots):
        t = coord.trades.get(slot.tx_id)
        if t is not None:
            done = t.committed
            row.update(tx_id=t.trade_id, kind="cross", chain=f"{t.source.agent}>{t.dest.agent}",
                       proposer=t.seller, submit_time=t.submit_time,
                       finalize_time="" if t.final_time is None else t.final_time,
                       latency_ticks="" if t.final_time is None
                       else t.final_time - t.submit_time,
                       zone_size=t.zone_size, accepted=int(done), committed=int(done))
    return res


# -- audit --------------------------------------------------------------------


def _lineage(tx: Transaction) -> tuple[list[str], list[str]]:
    """Grant ids a transaction creates and retires."""
    if isinstance(tx, GenesisGrant):
        return [tx.grant.grant_id], []
    if isinstance(tx, Trade):
        return [tx.new_grant_id], [tx.seller_grant]
    if isinstance(tx, CrossMint):
        return [tx.grant.grant_id], []
    if isinstance(tx, CrossRetire):
        return [], [tx.grant_id]
    return [], []


@dataclass
class AtomicityReport:
    trades: int = 0
    committed: int = 0
    aborted: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def atomicity_audit(res) -> AtomicityReport:
    """Scan every chain at quiescence and check each cross trade left its
    grant active on exactly one chain."""
    coord: CrossChainCoordinator = res.cross
    rep = AtomicityReport(len(coord.trades))
    regional = {k: v for k, v in res.chains.items() if k != "decision"}
    where: dict[str, list[str]] = {}
    refs: dict[tuple[str, str], list[str]] = {}
    created: dict[str, int] = {}
    consumed: dict[str, int] = {}
    for name, chain in sorted(regional.items()):
        if verify_chain(chain) is not None:
            rep.problems.append(f"{name}: hash chain broken")
        state = replay(chain)
        if state.encode() != res.states[name].encode():
            rep.problems.append(f"{name}: replay disagrees with live state")
        if state.locks:
            rep.problems.append(f"{name}: locks left {sorted(state.locks)}")
        for gid in state.grants:
            where.setdefault(gid, []).append(name)
        for blk in chain:
            for tx in blk.txs:
                if isinstance(tx, (Lock, Unlock, CrossRetire, CrossMint)):
                    refs.setdefault((type(tx).__name__, tx.trade_id), []).append(name)
                born, gone = _lineage(tx)
                for g in born:
                    created[g] = created.get(g, 0) + 1
                for g in gone:
                    consumed[g] = consumed.get(g, 0) + 1
    for gid, names in sorted(where.items()):
        if len(names) > 1:
            rep.problems.append(f"grant {gid} active on {names}")
    for gid in sorted(set(created) | set(consumed)):
        fate = consumed.get(gid, 0) + len(where.get(gid, []))
        if created.get(gid, 0) != 1 or fate != 1:
            rep.problems.append(f"grant {gid}: created {created.get(gid, 0)}x, "
                                f"retired {consumed.get(gid, 0)}x, active on {where.get(gid)}")
    before = sum(len(s.grants) for s in res.genesis_state.values())
    after = sum(len(where[g]) for g in where)
    if before != after:
        rep.problems.append(f"grant count {before} -> {after}")
    try:
        dstate = replay(res.chains["decision"])
    except LedgerError as exc:
        rep.problems.append(f"decision chain: {exc}")
        dstate = coord.decision.state
    for eng in res.engines:
        if eng.reserved:
            rep.problems.append(f"{eng.agent}: reservations left {sorted(eng.reserved)}")
    for tid, t in sorted(coord.trades.items()):
        rec = dstate.decisions.get(tid)
        phase = rec.phase if rec else None
        new = t.mint.grant.grant_id

        def on(kind, tid=tid):
            return refs.get((kind, tid), [])

        if phase is Phase.COMMITTED:
            rep.committed += 1
            if on("CrossRetire") != [t.source.id] or on("CrossMint") != [t.dest.id]:
                rep.problems.append(f"{tid[:12]}: committed without exactly one retire and mint")
        elif phase is Phase.ABORTED:
            rep.aborted += 1
            if new in where or on("CrossMint") or on("CrossRetire"):
                rep.problems.append(f"{tid[:12]}: aborted trade retired or minted a grant")
            if on("Lock") and on("Unlock") != [t.source.id]:
                rep.problems.append(f"{tid[:12]}: aborted lock never released")
        else:
            rep.problems.append(f"{tid[:12]}: left in phase {phase}")
    return rep
