"""Interference-based transaction validation.

A transaction is proposed to its validation zone, the participants whose
interference environment it changes. Every zone member votes on the
hypothetical post-transaction state; the transaction is final only when all
members approve. Accepted transactions are batched into blocks, re-validated
in (timestamp, tx_id) order against the running state.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .ledger import (BUDGET_UNIT_MW, Block, BudgetAdjust, BudgetError, Chain, CrossMint, LedgerError,
                     LedgerState, SpectrumGrant, Trade, Transaction, apply_transaction)
from .radio import (NEG_INF, Location, PropagationModel, RadioNode, ValidationZone,
                    mw_to_dbm, path_loss_db, validation_zone)
from .simnet import Event, Network


class ProtocolError(RuntimeError):
    pass


class Reason(enum.Enum):
    OK = "ok"
    OWNERSHIP = "ownership"
    BUDGET = "budget-violation"
    OWN_INTERFERENCE = "own-interference"


class Outcome(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Vote:
    voter: str
    tx_id: str
    approve: bool
    reason: Reason = Reason.OK


@dataclass
class ConsensusConfig:
    sensitivity_dbm: float = -95.0
    tolerance_dbm: float = -60.0
    node_tolerance_dbm: Mapping[str, float] = field(default_factory=dict)
    vote_timeout: int = 61
    block_interval: int = 20

    def __post_init__(self):
        if self.vote_timeout <= 0:
            raise ValueError("vote timeout must be positive")
        if self.block_interval <= 0:
            raise ValueError("block interval must be positive")

    def tolerance(self, node: str) -> float:
        return self.node_tolerance_dbm.get(node, self.tolerance_dbm)


@dataclass
class RadioEnvironment:
    """Static radio facts the validators share: node receivers and the
    propagation model. Protection points come from the ledger state."""

    nodes: dict[str, RadioNode]
    model: PropagationModel

    def participants(self, state: LedgerState) -> dict[str, Location]:
        out = {n: node.location for n, node in self.nodes.items()}
        for pid, point in state.protection_points.items():
            out[pid] = point.location
        return out


# -- interference evaluation --------------------------------------------------


def _grant_arrays(grants: Sequence[SpectrumGrant], owner_code: Mapping[str, int]):
    return (np.array([g.location.x for g in grants], dtype=np.float64),
            np.array([g.location.y for g in grants], dtype=np.float64),
            np.array([g.radio.tx_power for g in grants], dtype=np.float64),
            np.array([g.channel for g in grants], dtype=np.int64),
            np.array([owner_code.get(g.holder, -2) for g in grants], dtype=np.int64))


def point_interference_mw(grants: Sequence[SpectrumGrant], state: LedgerState,
                          model: PropagationModel) -> dict[str, float]:
    """Aggregate interference at every protection point, all channels."""
    points = [state.protection_points[k] for k in sorted(state.protection_points)]
    if not points:
        return {}
    sx, sy, sp, sch, sown = _grant_arrays(grants, {})
    n = len(points)
    mw = kernels.aggregate_mw(
        sx, sy, sp, sch, sown,
        np.array([p.location.x for p in points], dtype=np.float64),
        np.array([p.location.y for p in points], dtype=np.float64),
        np.full(n, -1, dtype=np.int64), np.full(n, -1, dtype=np.int64),
        *model.kernel_args)
    return {p.id: float(v) for p, v in zip(points, mw)}


def node_interference_mw(grants: Sequence[SpectrumGrant], nodes: Sequence[RadioNode],
                         model: PropagationModel) -> dict[str, float]:
    """Co-channel interference at each node's receiver from grants it does not hold."""
    if not nodes:
        return {}
    code = {n.id: i for i, n in enumerate(nodes)}
    sx, sy, sp, sch, sown = _grant_arrays(grants, code)
    mw = kernels.aggregate_mw(
        sx, sy, sp, sch, sown,
        np.array([n.location.x for n in nodes], dtype=np.float64),
        np.array([n.location.y for n in nodes], dtype=np.float64),
        np.array([n.radio.channel for n in nodes], dtype=np.int64),
        np.arange(len(nodes), dtype=np.int64),
        *model.kernel_args)
    return {n.id: float(v) for n, v in zip(nodes, mw)}


def contribution_mw(grant: SpectrumGrant, at: Location, model: PropagationModel) -> float:
    rx = grant.radio.tx_power - path_loss_db(model, grant.location.distance(at))
    return 10.0 ** (rx / 10.0)


@dataclass
class Assessment:
    """Everything a voter needs about one transaction against one state."""

    tx_id: str
    validity: Reason
    point_mw: dict[str, float] = field(default_factory=dict)
    node_mw: dict[str, float] = field(default_factory=dict)
    post_state: LedgerState | None = None

    def point_violation(self, state: LedgerState) -> str | None:
        for pid in sorted(self.point_mw):
            if mw_to_dbm(self.point_mw[pid]) > state.protection_points[pid].threshold_dbm:
                return pid
        return None


def assess(tx: Transaction, state: LedgerState, env: RadioEnvironment,
           extra_grants: Sequence[SpectrumGrant] = ()) -> Assessment:
    """Evaluate ``tx`` applied hypothetically to ``state`` alone.

    ``extra_grants`` are counted as interferers without being in the state
    (reserved incoming cross-chain grants).
    """
    try:
        post = apply_transaction(state, tx)
    except BudgetError:
        return Assessment(tx.tx_id, Reason.BUDGET)
    except LedgerError:
        return Assessment(tx.tx_id, Reason.OWNERSHIP)
    validity = Reason.OK
    if isinstance(tx, BudgetAdjust):
        donor = post.grants[tx.donor_grant]
        for pid, _ in tx.deltas:
            point = post.protection_points.get(pid)
            if point is None:
                return Assessment(tx.tx_id, Reason.OWNERSHIP)
            used = math.ceil(contribution_mw(donor, point.location, env.model) / BUDGET_UNIT_MW)
            if donor.budget.get(pid, 0) < used:
                validity = Reason.BUDGET
    grants = list(post.grants.values()) + list(extra_grants)
    return Assessment(tx.tx_id, validity,
                      point_interference_mw(grants, post, env.model),
                      node_interference_mw(grants, list(env.nodes.values()), env.model),
                      post)


def node_vote(voter: str, tx: Transaction, state: LedgerState, env: RadioEnvironment,
              config: ConsensusConfig, zone: ValidationZone,
              assessment: Assessment | None = None) -> Vote:
    """Approve iff ownership holds, no protection point is pushed over its
    threshold, and the voter's own receiver stays within its tolerance.
    Failures are reported in that order."""
    if voter not in zone:
        raise ProtocolError(f"{voter} is not in the validation zone of {tx.tx_id[:12]}")
    a = assessment or assess(tx, state, env)
    if a.validity is Reason.OWNERSHIP:
        return Vote(voter, tx.tx_id, False, Reason.OWNERSHIP)
    if a.validity is Reason.BUDGET or a.point_violation(a.post_state) is not None:
        return Vote(voter, tx.tx_id, False, Reason.BUDGET)
    if voter in env.nodes:
        if mw_to_dbm(a.node_mw[voter]) > config.tolerance(voter):
            return Vote(voter, tx.tx_id, False, Reason.OWN_INTERFERENCE)
    return Vote(voter, tx.tx_id, True, Reason.OK)


def finalize(tx_id: str, votes: Iterable[Vote], zone: Iterable[str]) -> Outcome:
    """Accepted only with an approve vote from every zone member and no
    reject or equivocation from any of them. Votes from outside the zone are
    ignored."""
    members = set(zone)
    verdicts: dict[str, set[bool]] = {}
    for v in votes:
        if v.tx_id == tx_id and v.voter in members:
            verdicts.setdefault(v.voter, set()).add(v.approve)
    for m in members:
        if verdicts.get(m) != {True}:
            return Outcome.REJECTED
    return Outcome.ACCEPTED


# -- zones --------------------------------------------------------------------


def proposer_of(tx: Transaction) -> str:
    if isinstance(tx, Trade):
        return tx.seller
    if isinstance(tx, BudgetAdjust):
        return tx.authorizer
    if isinstance(tx, CrossMint):
        return tx.grant.holder
    raise ProtocolError(f"{type(tx).__name__} is not proposed to a validation zone")


def zone_for(tx: Transaction, state: LedgerState, env: RadioEnvironment,
             sensitivity: float) -> ValidationZone:
    participants = env.participants(state)
    if isinstance(tx, Trade):
        try:
            grant = state.grants[tx.seller_grant]
        except KeyError:
            raise LedgerError(f"unknown seller grant {tx.seller_grant!r}") from None
        return validation_zone(tx.tx_id, tx.seller, tx.buyer,
                               (grant.location, grant.radio.tx_power),
                               (tx.location, tx.radio.tx_power),
                               participants, env.model, sensitivity)
    if isinstance(tx, BudgetAdjust):
        members = {tx.authorizer}
        recipient = state.grants.get(tx.recipient_grant)
        if recipient is not None:
            members.add(recipient.holder)
        return ValidationZone(tx.tx_id, frozenset(members & set(participants)))
    if isinstance(tx, CrossMint):
        g = tx.grant
        return validation_zone(tx.tx_id, g.holder, g.holder, None,
                               (g.location, g.radio.tx_power), participants, env.model,
                               sensitivity)
    raise ProtocolError(f"no zone rule for {type(tx).__name__}")


# -- block formation ----------------------------------------------------------


@dataclass
class PendingTx:
    tx: Transaction
    zone: ValidationZone


def revalidate(tx: Transaction, zone: ValidationZone, state: LedgerState,
               env: RadioEnvironment, config: ConsensusConfig,
               extra_grants: Sequence[SpectrumGrant] = ()) -> bool:
    a = assess(tx, state, env, extra_grants)
    votes = [node_vote(m, tx, state, env, config, zone, a) for m in zone.sorted()]
    return finalize(tx.tx_id, votes, zone) is Outcome.ACCEPTED


def form_block(pending: Sequence[PendingTx], chain: Chain, state: LedgerState,
               env: RadioEnvironment, config: ConsensusConfig,
               prefix: Sequence[Transaction] = (),
               extra_grants: Sequence[SpectrumGrant] = ()
               ) -> tuple[Block | None, LedgerState, list[PendingTx]]:
    """Batch accepted transactions into the next block.

    ``prefix`` holds transactions already applied to ``state`` (cross-chain
    locks and commits); they lead the block unchanged. Returns (block or
    None, state after the block, dropped transactions).
    """
    ordered = sorted(pending, key=lambda p: (p.tx.timestamp, p.tx.tx_id))
    included: list[PendingTx] = []
    dropped: list[PendingTx] = []
    for p in ordered:
        if revalidate(p.tx, p.zone, state, env, config, extra_grants):
            state = apply_transaction(state, p.tx)
            included.append(p)
        else:
            dropped.append(p)
    if not (prefix or included):
        return None, state, dropped
    block = Block.build(chain.next_height, chain.tip_hash,
                        list(prefix) + [p.tx for p in included],
                        [()] * len(prefix) + [p.zone.members for p in included])
    return block, state, dropped


# -- event-driven engine ------------------------------------------------------


@dataclass
class TxRecord:
    index: int
    tx_id: str
    kind: str
    proposer: str
    submit_time: int
    zone_size: int
    finalize_time: int | None = None
    accepted: bool = False
    committed: bool = False
    #: When the transaction left the chain's queue (block, drop or reject).
    end_time: int | None = None

    @property
    def latency(self) -> int | None:
        return None if self.finalize_time is None else self.finalize_time - self.submit_time


@dataclass
class _Round:
    tx: Transaction
    zone: ValidationZone
    proposer: str
    record: TxRecord
    assessment: Assessment
    votes: list[Vote] = field(default_factory=list)
    done: bool = False


TxSource = Callable[["ConsensusEngine", int], Transaction | None]


class ConsensusEngine:
    """Runs zone (or flood) validation for one chain over a ``Network``.

    Ledger replicas are not materialized per node: every participant reads
    the chain's committed state, and ``commit`` messages only model the
    block broadcast on the wire.
    """

    def __init__(self, net: Network, env: RadioEnvironment, config: ConsensusConfig,
                 chain: Chain, state: LedgerState, mode: str = "zone", name: str = "main"):
        if mode not in ("zone", "flood"):
            raise ValueError("mode must be 'zone' or 'flood'")
        self.net = net
        self.env = env
        self.config = config
        self.chain = chain
        self.state = state
        self.mode = mode
        self.agent = f"chain:{name}"
        self.records: list[TxRecord] = []
        self.pending: list[PendingTx] = []
        self.reserved: dict[str, SpectrumGrant] = {}
        self.rounds: dict[str, _Round] = {}
        self.on_final: Callable[[TxRecord, Transaction, Outcome], None] | None = None
        self.on_block: Callable[[Block], None] | None = None
        #: Receives messages and timers the consensus protocol does not own.
        self.on_message: Callable[[Event], None] | None = None
        self.system: list[Transaction] = []
        self._queued = 0
        self._block_timer = False
        self._assessments: dict[str, Assessment] = {}
        self._assessed_at = 0
        #: Bumped whenever ``state`` or ``reserved`` changes.
        self.version = 0
        self.queue_samples: list[int] = []
        net.add_node(self.agent, self._on_agent)
        for pid in list(env.nodes) + sorted(state.protection_points):
            net.add_node(pid, self._on_participant)

    # workload -----------------------------------------------------------

    def submit(self, source: Transaction | TxSource, at: int) -> None:
        self._queued += 1
        self.net.set_timer(self.agent, at - self.net.now, "submit", payload=source)

    def start(self, tx: Transaction) -> TxRecord:
        """Propose ``tx`` now from its authorizing node."""
        proposer = proposer_of(tx)
        try:
            if self.mode == "flood":
                zone = ValidationZone(tx.tx_id,
                                      frozenset(self.env.participants(self.state)))
            else:
                zone = zone_for(tx, self.state, self.env, self.config.sensitivity_dbm)
        except LedgerError:
            zone = ValidationZone(tx.tx_id, frozenset({proposer}))
        rec = TxRecord(len(self.records), tx.tx_id, tx.kind.name.lower(), proposer,
                       self.net.now, len(zone))
        self.records.append(rec)
        rnd = _Round(tx, zone, proposer, rec, self._assess(tx))
        self.rounds[tx.tx_id] = rnd
        self.net.note("round", proposer, self.agent, tx.tx_id)
        for member in zone.sorted():
            self.net.note("zone", proposer, member, tx.tx_id)
        if proposer in zone:
            rnd.votes.append(self._vote(proposer, rnd))
        for member in zone.sorted():
            if member != proposer:
                self.net.send("propose", proposer, member, tx.tx_id, payload=tx.tx_id)
        if self._complete(rnd):
            self._finalize(rnd)
        else:
            self.net.set_timer(proposer, self.config.vote_timeout, "timeout", tx.tx_id)
        return rec

    def apply_system(self, tx: Transaction) -> None:
        """Apply a non-voted transaction (lock, unlock, cross-chain retire or
        mint) immediately; it leads the next block. Raises ``LedgerError``."""
        self.state = apply_transaction(self.state, tx)
        self.system.append(tx)
        self.version += 1
        self._arm_block_timer()

    def reserve(self, grant: SpectrumGrant) -> None:
        """Count an incoming grant as an interferer before it is minted."""
        self.reserved[grant.grant_id] = grant
        self.version += 1

    def release(self, grant_id: str) -> None:
        if self.reserved.pop(grant_id, None) is not None:
            self.version += 1

    # internals ------------------------------------------------------------

    def _assess(self, tx: Transaction) -> Assessment:
        if self._assessed_at != self.version:
            self._assessments.clear()
            self._assessed_at = self.version
        a = self._assessments.get(tx.tx_id)
        if a is None:
            a = assess(tx, self.state, self.env, list(self.reserved.values()))
            self._assessments[tx.tx_id] = a
        return a

    def _vote(self, voter: str, rnd: _Round) -> Vote:
        return node_vote(voter, rnd.tx, self.state, self.env, self.config, rnd.zone,
                         self._assess(rnd.tx))

    def _complete(self, rnd: _Round) -> bool:
        return {v.voter for v in rnd.votes} >= rnd.zone.members

    def _on_agent(self, ev: Event) -> None:
        if ev.kind == "submit":
            self._queued -= 1
            source = ev.payload
            tx = source(self, self.net.now) if callable(source) else source
            if tx is not None:
                self.start(tx)
        elif ev.kind == "block":
            self._block_timer = False
            self._make_block()
        elif self.on_message is not None:
            self.on_message(ev)

    def _on_participant(self, ev: Event) -> None:
        if ev.kind not in ("propose", "vote", "timeout"):
            if self.on_message is not None:
                self.on_message(ev)
            return
        rnd = self.rounds.get(ev.tx_id)
        if rnd is None or rnd.done:
            return
        if ev.kind == "propose":
            vote = self._vote(ev.target, rnd)
            self.net.send("vote", ev.target, ev.source, ev.tx_id, payload=vote)
        elif ev.kind == "vote":
            rnd.votes.append(ev.payload)
            if self._complete(rnd):
                self._finalize(rnd)
        elif ev.kind == "timeout":
            self._finalize(rnd)

    def _finalize(self, rnd: _Round) -> None:
        rnd.done = True
        del self.rounds[rnd.tx.tx_id]
        outcome = finalize(rnd.tx.tx_id, rnd.votes, rnd.zone.members)
        rec = rnd.record
        rec.finalize_time = self.net.now
        rec.accepted = outcome is Outcome.ACCEPTED
        self.net.note(f"finalize:{outcome.value}", rnd.proposer, self.agent, rnd.tx.tx_id)
        if rec.accepted and not isinstance(rnd.tx, CrossMint):
            self.pending.append(PendingTx(rnd.tx, rnd.zone))
            self._arm_block_timer()
        else:
            # rejected, or an incoming grant that waits for the decision chain
            rec.end_time = self.net.now
        if self.on_final is not None:
            self.on_final(rec, rnd.tx, outcome)

    def _arm_block_timer(self) -> None:
        if not self._block_timer:
            self._block_timer = True
            self.net.set_timer(self.agent, self.config.block_interval, "block")

    def _make_block(self) -> None:
        self.queue_samples.append(len(self.pending) + len(self.rounds))
        block, state, dropped = form_block(self.pending, self.chain, self.state,
                                           self.env, self.config, self.system,
                                           list(self.reserved.values()))
        self.pending = []
        self.system = []
        by_id = {r.tx_id: r for r in self.records}
        if block is not None:
            self.chain.append(block)
            self.state = state
            self.version += 1
            for tx in block.txs:
                if tx.tx_id in by_id:
                    by_id[tx.tx_id].committed = True
                    by_id[tx.tx_id].end_time = self.net.now
            for pid in sorted(self.env.participants(self.state)):
                self.net.send("commit", self.agent, pid, block.block_hash.hex()[:16])
            if self.on_block is not None:
                self.on_block(block)
        for p in dropped:
            by_id[p.tx.tx_id].end_time = self.net.now
            self.net.note("drop", self.agent, self.agent, p.tx.tx_id)
        if self.rounds:
            self._arm_block_timer()

    def idle(self) -> bool:
        return not (self.rounds or self.pending or self.system or self._queued)


def safety_margins_db(state: LedgerState, model: PropagationModel) -> dict[str, float]:
    """Brute-force aggregate minus threshold (dB) at every protection point,
    computed scalar by scalar without the kernels."""
    out = {}
    for pid, point in sorted(state.protection_points.items()):
        total = math.fsum(contribution_mw(g, point.location, model)
                          for g in state.grants.values())
        agg = mw_to_dbm(total)
        out[pid] = (agg - point.threshold_dbm) if agg != NEG_INF else NEG_INF
    return out
