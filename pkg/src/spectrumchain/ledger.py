"""Append-only hash-chained ledger of spectrum transactions.

The ledger is an account-style registry: grants are named objects whose
holder, location and interference allowances change through transactions.
State is never stored on the chain; it is always derivable by replaying the
blocks from genesis.

Interference allowances are integers in units of ``BUDGET_UNIT_MW`` so that
budget transfers conserve exactly.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from . import wire
from .radio import Location, ProtectionPoint, RadioParams, dbm_to_mw, mw_to_dbm

BUDGET_UNIT_MW = 1e-21
ZERO_HASH = bytes(32)


class LedgerError(ValueError):
    """A transaction or block that cannot be applied."""


class BudgetError(LedgerError):
    """A budget transfer larger than the donor's allowance."""


def mw_to_units(mw: float) -> int:
    return round(mw / BUDGET_UNIT_MW)


def units_to_mw(units: int) -> float:
    return units * BUDGET_UNIT_MW


# -- grants -----------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumGrant:
    grant_id: str
    holder: str
    location: Location
    radio: RadioParams
    tier: int = 1
    budget: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.tier < 1:
            raise ValueError("tier rank starts at 1")
        if any(v < 0 for v in self.budget.values()):
            raise ValueError("negative allowance")
        object.__setattr__(self, "budget", dict(sorted(self.budget.items())))

    @property
    def channel(self) -> int:
        return self.radio.channel

    def allowance_mw(self, point: str) -> float:
        return units_to_mw(self.budget.get(point, 0))

    def allowance_dbm(self, point: str) -> float:
        return mw_to_dbm(self.allowance_mw(point))

    def encode(self) -> bytes:
        out = [wire.text(self.grant_id), wire.text(self.holder),
               wire.i64(wire.milli(self.location.x)), wire.i64(wire.milli(self.location.y)),
               wire.i64(wire.milli(self.radio.tx_power)), wire.u32(self.radio.channel),
               wire.u32(self.tier), wire.u32(len(self.budget))]
        for point, units in self.budget.items():
            out.append(wire.text(point))
            out.append(wire.u64(units))
        return b"".join(out)

    @classmethod
    def decode(cls, r: wire.Reader) -> SpectrumGrant:
        gid, holder = r.text(), r.text()
        x, y, p = r.i64(), r.i64(), r.i64()
        channel, tier, n = r.u32(), r.u32(), r.u32()
        budget = {}
        for _ in range(n):
            point = r.text()
            budget[point] = r.u64()
        try:
            return cls(gid, holder, Location(x / 1000, y / 1000), RadioParams(p / 1000, channel),
                       tier, budget)
        except ValueError as exc:
            raise wire.DecodeError(str(exc)) from None


def _encode_location(loc: Location) -> bytes:
    return wire.i64(wire.milli(loc.x)) + wire.i64(wire.milli(loc.y))


def _decode_location(r: wire.Reader) -> Location:
    return Location(r.i64() / 1000, r.i64() / 1000)


# -- transactions -------------------------------------------------------------


class TxKind(enum.IntEnum):
    GENESIS = 0
    TRADE = 1
    BUDGET_ADJUST = 2
    LOCK = 3
    UNLOCK = 4
    CROSS_MINT = 5
    CROSS_RETIRE = 6
    DECISION = 7


class Phase(enum.IntEnum):
    LOCKED = 0
    ATTESTED = 1
    COMMITTED = 2
    ABORTED = 3


_GENESIS_GRANT, _GENESIS_BALANCE, _GENESIS_POINT = 0, 1, 2


@dataclass(frozen=True)
class Transaction:
    """Base class; subclasses define ``kind`` and ``_payload``."""

    kind = TxKind.GENESIS

    def _payload(self) -> bytes:
        raise NotImplementedError

    def encode(self) -> bytes:
        return wire.u8(int(self.kind)) + wire.u64(self.timestamp) + self._payload()

    @cached_property
    def tx_id(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()

    def grants_touched(self) -> frozenset[str]:
        return frozenset()


@dataclass(frozen=True)
class GenesisGrant(Transaction):
    grant: SpectrumGrant
    timestamp: int = 0

    def _payload(self):
        return wire.u8(_GENESIS_GRANT) + self.grant.encode()


@dataclass(frozen=True)
class GenesisBalance(Transaction):
    node: str
    amount: int
    timestamp: int = 0

    def _payload(self):
        return wire.u8(_GENESIS_BALANCE) + wire.text(self.node) + wire.u64(self.amount)


@dataclass(frozen=True)
class GenesisProtectionPoint(Transaction):
    point: ProtectionPoint
    timestamp: int = 0

    def _payload(self):
        return (wire.u8(_GENESIS_POINT) + wire.text(self.point.id)
                + _encode_location(self.point.location)
                + wire.i64(wire.milli(self.point.threshold_dbm)))


@dataclass(frozen=True)
class Trade(Transaction):
    """Sell ``seller_grant`` to ``buyer``, who will transmit at ``location``.

    ``seller`` is the authorizing holder; signatures are modelled by naming
    the holder.
    """

    seller_grant: str
    seller: str
    buyer: str
    location: Location
    radio: RadioParams
    price: int = 0
    timestamp: int = 0
    kind = TxKind.TRADE

    def __post_init__(self):
        if self.price < 0:
            raise ValueError("price must be non-negative")

    def _payload(self):
        return (wire.text(self.seller_grant) + wire.text(self.seller) + wire.text(self.buyer)
                + _encode_location(self.location) + wire.i64(wire.milli(self.radio.tx_power))
                + wire.u32(self.radio.channel) + wire.u64(self.price))

    @property
    def new_grant_id(self) -> str:
        return "g-" + self.tx_id[:16]

    def grants_touched(self):
        return frozenset({self.seller_grant})


@dataclass(frozen=True)
class BudgetAdjust(Transaction):
    """Move interference allowance (budget units per protection point)."""

    donor_grant: str
    authorizer: str
    recipient_grant: str
    deltas: tuple[tuple[str, int], ...]
    timestamp: int = 0
    kind = TxKind.BUDGET_ADJUST

    def __post_init__(self):
        if not self.deltas or any(d <= 0 for _, d in self.deltas):
            raise ValueError("budget deltas must be positive")
        object.__setattr__(self, "deltas", tuple(sorted(self.deltas)))

    def _payload(self):
        out = [wire.text(self.donor_grant), wire.text(self.authorizer),
               wire.text(self.recipient_grant), wire.u32(len(self.deltas))]
        for point, units in self.deltas:
            out += [wire.text(point), wire.u64(units)]
        return b"".join(out)

    def grants_touched(self):
        return frozenset({self.donor_grant, self.recipient_grant})


@dataclass(frozen=True)
class Lock(Transaction):
    grant_id: str
    holder: str
    trade_id: str
    expires: int
    timestamp: int = 0
    kind = TxKind.LOCK

    def _payload(self):
        return (wire.text(self.grant_id) + wire.text(self.holder) + wire.text(self.trade_id)
                + wire.u64(self.expires))

    def grants_touched(self):
        return frozenset({self.grant_id})


@dataclass(frozen=True)
class Unlock(Transaction):
    grant_id: str
    trade_id: str
    timestamp: int = 0
    kind = TxKind.UNLOCK

    def _payload(self):
        return wire.text(self.grant_id) + wire.text(self.trade_id)

    def grants_touched(self):
        return frozenset({self.grant_id})


@dataclass(frozen=True)
class CrossRetire(Transaction):
    grant_id: str
    trade_id: str
    timestamp: int = 0
    kind = TxKind.CROSS_RETIRE

    def _payload(self):
        return wire.text(self.grant_id) + wire.text(self.trade_id)

    def grants_touched(self):
        return frozenset({self.grant_id})


@dataclass(frozen=True)
class CrossMint(Transaction):
    grant: SpectrumGrant
    trade_id: str
    timestamp: int = 0
    kind = TxKind.CROSS_MINT

    def _payload(self):
        return self.grant.encode() + wire.text(self.trade_id)

    def grants_touched(self):
        return frozenset({self.grant.grant_id})


@dataclass(frozen=True)
class DecisionTx(Transaction):
    """One phase change of a cross-chain trade on the decision chain."""

    trade_id: str
    source: str
    dest: str
    grant_id: str
    phase: Phase
    notaries: tuple[str, ...] = ()
    timestamp: int = 0
    kind = TxKind.DECISION

    def __post_init__(self):
        object.__setattr__(self, "notaries", tuple(sorted(set(self.notaries))))

    def _payload(self):
        out = [wire.text(self.trade_id), wire.text(self.source), wire.text(self.dest),
               wire.text(self.grant_id), wire.u8(int(self.phase)), wire.u32(len(self.notaries))]
        out += [wire.text(n) for n in self.notaries]
        return b"".join(out)


def decode_tx(data: bytes) -> Transaction:
    r = wire.Reader(data)
    try:
        kind = TxKind(r.u8())
    except ValueError as exc:
        raise wire.DecodeError(str(exc)) from None
    ts = r.u64()
    try:
        tx = _decode_body(kind, ts, r)
    except ValueError as exc:
        if isinstance(exc, wire.DecodeError):
            raise
        raise wire.DecodeError(str(exc)) from None
    r.expect_done()
    return tx


def _decode_body(kind: TxKind, ts: int, r: wire.Reader) -> Transaction:
    if kind is TxKind.GENESIS:
        sub = r.u8()
        if sub == _GENESIS_GRANT:
            return GenesisGrant(SpectrumGrant.decode(r), ts)
        if sub == _GENESIS_BALANCE:
            return GenesisBalance(r.text(), r.u64(), ts)
        if sub == _GENESIS_POINT:
            pid = r.text()
            loc = _decode_location(r)
            return GenesisProtectionPoint(ProtectionPoint(pid, loc, r.i64() / 1000), ts)
        raise wire.DecodeError(f"unknown genesis subtype {sub}")
    if kind is TxKind.TRADE:
        g, s, b = r.text(), r.text(), r.text()
        loc = _decode_location(r)
        p = r.i64()
        ch = r.u32()
        return Trade(g, s, b, loc, RadioParams(p / 1000, ch), r.u64(), ts)
    if kind is TxKind.BUDGET_ADJUST:
        donor, auth, rec = r.text(), r.text(), r.text()
        deltas = []
        for _ in range(r.u32()):
            point = r.text()
            deltas.append((point, r.u64()))
        return BudgetAdjust(donor, auth, rec, tuple(deltas), ts)
    if kind is TxKind.LOCK:
        return Lock(r.text(), r.text(), r.text(), r.u64(), ts)
    if kind is TxKind.UNLOCK:
        return Unlock(r.text(), r.text(), ts)
    if kind is TxKind.CROSS_RETIRE:
        return CrossRetire(r.text(), r.text(), ts)
    if kind is TxKind.CROSS_MINT:
        grant = SpectrumGrant.decode(r)
        return CrossMint(grant, r.text(), ts)
    trade, src, dst, gid = r.text(), r.text(), r.text(), r.text()
    phase = Phase(r.u8())
    notaries = tuple(r.text() for _ in range(r.u32()))
    return DecisionTx(trade, src, dst, gid, phase, notaries, ts)


# -- state --------------------------------------------------------------------


@dataclass
class LedgerState:
    grants: dict[str, SpectrumGrant] = field(default_factory=dict)
    balances: dict[str, int] = field(default_factory=dict)
    protection_points: dict[str, ProtectionPoint] = field(default_factory=dict)
    locks: dict[str, Lock] = field(default_factory=dict)
    decisions: dict[str, DecisionTx] = field(default_factory=dict)

    def copy(self) -> LedgerState:
        return LedgerState(dict(self.grants), dict(self.balances),
                           dict(self.protection_points), dict(self.locks),
                           dict(self.decisions))

    def total_tokens(self) -> int:
        return sum(self.balances.values())

    def budget_total(self, point: str) -> int:
        return sum(g.budget.get(point, 0) for g in self.grants.values())

    def encode(self) -> bytes:
        """Canonical snapshot; equal states encode to equal bytes."""
        out = [wire.u32(len(self.grants))]
        out += [self.grants[k].encode() for k in sorted(self.grants)]
        out.append(wire.u32(len(self.balances)))
        for k in sorted(self.balances):
            out += [wire.text(k), wire.u64(self.balances[k])]
        out.append(wire.u32(len(self.protection_points)))
        out += [GenesisProtectionPoint(self.protection_points[k]).encode()
                for k in sorted(self.protection_points)]
        out.append(wire.u32(len(self.locks)))
        out += [self.locks[k].encode() for k in sorted(self.locks)]
        out.append(wire.u32(len(self.decisions)))
        out += [self.decisions[k].encode() for k in sorted(self.decisions)]
        return b"".join(out)


def _need_grant(state: LedgerState, gid: str) -> SpectrumGrant:
    try:
        return state.grants[gid]
    except KeyError:
        raise LedgerError(f"unknown grant {gid!r}") from None


def apply_transaction(state: LedgerState, tx: Transaction) -> LedgerState:
    """Return the state after ``tx``; raises ``LedgerError`` and leaves
    ``state`` untouched when the transaction is not applicable."""
    new = state.copy()
    if isinstance(tx, GenesisGrant):
        if tx.grant.grant_id in new.grants:
            raise LedgerError(f"duplicate grant id {tx.grant.grant_id!r}")
        new.grants[tx.grant.grant_id] = tx.grant
    elif isinstance(tx, GenesisBalance):
        new.balances[tx.node] = new.balances.get(tx.node, 0) + tx.amount
    elif isinstance(tx, GenesisProtectionPoint):
        if tx.point.id in new.protection_points:
            raise LedgerError(f"duplicate protection point {tx.point.id!r}")
        new.protection_points[tx.point.id] = tx.point
    elif isinstance(tx, Trade):
        grant = _need_grant(new, tx.seller_grant)
        if grant.holder != tx.seller:
            raise LedgerError(f"{tx.seller} does not hold {tx.seller_grant}")
        if tx.seller_grant in new.locks:
            raise LedgerError(f"grant {tx.seller_grant} is locked")
        if tx.radio.channel != grant.channel:
            raise LedgerError("a trade cannot change the granted channel")
        if tx.new_grant_id in new.grants:
            raise LedgerError(f"duplicate grant id {tx.new_grant_id}")
        if tx.price:
            if new.balances.get(tx.buyer, 0) < tx.price:
                raise LedgerError(f"{tx.buyer} cannot pay {tx.price}")
            new.balances[tx.buyer] -= tx.price
            new.balances[tx.seller] = new.balances.get(tx.seller, 0) + tx.price
        del new.grants[tx.seller_grant]
        new.grants[tx.new_grant_id] = replace(
            grant, grant_id=tx.new_grant_id, holder=tx.buyer, location=tx.location,
            radio=tx.radio)
    elif isinstance(tx, BudgetAdjust):
        donor = _need_grant(new, tx.donor_grant)
        recipient = _need_grant(new, tx.recipient_grant)
        if donor.holder != tx.authorizer:
            raise LedgerError(f"{tx.authorizer} does not hold {tx.donor_grant}")
        if tx.donor_grant == tx.recipient_grant:
            raise LedgerError("donor and recipient must differ")
        d_budget, r_budget = dict(donor.budget), dict(recipient.budget)
        for point, units in tx.deltas:
            if d_budget.get(point, 0) < units:
                raise BudgetError(f"{tx.donor_grant} lacks {units} units at {point}")
            d_budget[point] -= units
            r_budget[point] = r_budget.get(point, 0) + units
        new.grants[donor.grant_id] = replace(donor, budget=d_budget)
        new.grants[recipient.grant_id] = replace(recipient, budget=r_budget)
    elif isinstance(tx, Lock):
        grant = _need_grant(new, tx.grant_id)
        if grant.holder != tx.holder:
            raise LedgerError(f"{tx.holder} does not hold {tx.grant_id}")
        if tx.grant_id in new.locks:
            raise LedgerError(f"grant {tx.grant_id} already locked")
        new.locks[tx.grant_id] = tx
    elif isinstance(tx, (Unlock, CrossRetire)):
        lock = new.locks.get(tx.grant_id)
        if lock is None or lock.trade_id != tx.trade_id:
            raise LedgerError(f"grant {tx.grant_id} not locked by {tx.trade_id}")
        del new.locks[tx.grant_id]
        if isinstance(tx, CrossRetire):
            del new.grants[tx.grant_id]
    elif isinstance(tx, CrossMint):
        if tx.grant.grant_id in new.grants:
            raise LedgerError(f"duplicate grant id {tx.grant.grant_id}")
        new.grants[tx.grant.grant_id] = tx.grant
    elif isinstance(tx, DecisionTx):
        prev = new.decisions.get(tx.trade_id)
        if not phase_transition_ok(prev.phase if prev else None, tx.phase):
            raise LedgerError(f"illegal phase change for {tx.trade_id}: "
                              f"{prev.phase.name if prev else None} -> {tx.phase.name}")
        new.decisions[tx.trade_id] = tx
    else:
        raise LedgerError(f"unsupported transaction {type(tx).__name__}")
    return new


def phase_transition_ok(prev: Phase | None, nxt: Phase) -> bool:
    if prev is None:
        return nxt in (Phase.LOCKED, Phase.ABORTED)
    if prev is Phase.LOCKED:
        return nxt in (Phase.ATTESTED, Phase.ABORTED)
    if prev is Phase.ATTESTED:
        return nxt is Phase.COMMITTED
    return False


# -- blocks and chains --------------------------------------------------------


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    zones: tuple[tuple[str, ...], ...]
    block_hash: bytes = b""

    @classmethod
    def build(cls, height: int, prev_hash: bytes, txs: Sequence[Transaction],
              zones: Sequence[Iterable[str]] | None = None) -> Block:
        if zones is None:
            zones = [()] * len(txs)
        if len(zones) != len(txs):
            raise ValueError("one zone record per transaction")
        blk = cls(height, prev_hash, tuple(txs), tuple(tuple(sorted(z)) for z in zones))
        return replace(blk, block_hash=block_hash(blk))

    def header_bytes(self) -> bytes:
        out = [wire.u64(self.height), self.prev_hash, wire.u32(len(self.txs))]
        out += [wire.blob(tx.encode()) for tx in self.txs]
        for zone in self.zones:
            out.append(wire.u32(len(zone)))
            out += [wire.text(z) for z in zone]
        return b"".join(out)

    def encode(self) -> bytes:
        return self.header_bytes() + self.block_hash

    @classmethod
    def decode(cls, data: bytes) -> Block:
        r = wire.Reader(data)
        height = r.u64()
        prev = r.raw(32)
        n = r.u32()
        txs = tuple(decode_tx(r.blob()) for _ in range(n))
        zones = tuple(tuple(r.text() for _ in range(r.u32())) for _ in range(n))
        stored = r.raw(32)
        r.expect_done()
        return cls(height, prev, txs, zones, stored)


def block_hash(block: Block) -> bytes:
    """SHA-256 over height, previous hash, transactions and zone records."""
    return hashlib.sha256(block.header_bytes()).digest()


class Chain:
    def __init__(self, blocks: Iterable[Block] = ()):
        self.blocks: list[Block] = []
        for b in blocks:
            self.append(b)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    @property
    def next_height(self) -> int:
        return len(self.blocks)

    def append(self, block: Block) -> None:
        if block.height != self.next_height:
            raise LedgerError(f"expected height {self.next_height}, got {block.height}")
        if block.prev_hash != self.tip_hash:
            raise LedgerError(f"block {block.height} does not link to the tip")
        if block.block_hash != block_hash(block):
            raise LedgerError(f"block {block.height} carries a wrong hash")
        self.blocks.append(block)

    def encode(self) -> bytes:
        return b"".join(wire.blob(b.encode()) for b in self.blocks)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.encode())

    @classmethod
    def load(cls, path) -> Chain:
        with open(path, "rb") as fh:
            data = fh.read()
        bad = verify_bytes(data)
        if bad is not None:
            raise LedgerError(f"ledger file fails verification at height {bad}")
        return cls(Block.decode(raw) for raw in split_blocks(data))


def append_block(chain: Chain, block: Block) -> Chain:
    chain.append(block)
    return chain


def verify_chain(chain: Iterable[Block]) -> int | None:
    """``None`` when every hash and link checks out, else the lowest bad height."""
    prev = ZERO_HASH
    for i, blk in enumerate(chain):
        if blk.height != i or blk.prev_hash != prev or blk.block_hash != block_hash(blk):
            return i
        prev = blk.block_hash
    return None


def split_blocks(data: bytes) -> list[bytes]:
    r = wire.Reader(data)
    out = []
    while not r.done():
        out.append(r.blob())
    return out


def verify_bytes(data: bytes) -> int | None:
    """Verify a ledger file image. Framing or decode errors are attributed to
    the block being read when they occur."""
    r = wire.Reader(data)
    prev = ZERO_HASH
    i = 0
    while not r.done():
        try:
            blk = Block.decode(r.blob())
        except wire.DecodeError:
            return i
        if blk.height != i or blk.prev_hash != prev or blk.block_hash != block_hash(blk):
            return i
        prev = blk.block_hash
        i += 1
    return None


def replay(chain: Iterable[Block], upto: int | None = None) -> LedgerState:
    """Rebuild the state from genesis through block ``upto`` (inclusive)."""
    state = LedgerState()
    for blk in chain:
        if upto is not None and blk.height > upto:
            break
        for tx in blk.txs:
            state = apply_transaction(state, tx)
    return state


# -- genesis ------------------------------------------------------------------


@dataclass
class GenesisConfig:
    grants: list[SpectrumGrant] = field(default_factory=list)
    balances: dict[str, int] = field(default_factory=dict)
    protection_points: list[ProtectionPoint] = field(default_factory=list)


def genesis(config: GenesisConfig) -> tuple[Chain, LedgerState]:
    ids = [g.grant_id for g in config.grants]
    if len(set(ids)) != len(ids):
        raise LedgerError("duplicate grant ids in genesis config")
    txs: list[Transaction] = [GenesisProtectionPoint(p)
                              for p in sorted(config.protection_points, key=lambda p: p.id)]
    txs += [GenesisGrant(g) for g in sorted(config.grants, key=lambda g: g.grant_id)]
    txs += [GenesisBalance(n, a) for n, a in sorted(config.balances.items())]
    state = LedgerState()
    for tx in txs:
        state = apply_transaction(state, tx)
    chain = Chain([Block.build(0, ZERO_HASH, txs)])
    return chain, state


def budget_units_from_dbm(dbm: float) -> int:
    return mw_to_units(dbm_to_mw(dbm))
