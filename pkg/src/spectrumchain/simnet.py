"""Seeded discrete-event network simulator.

Integer tick clock. Events fire in (fire_time, sequence) order; sequence
numbers are unique and assigned at scheduling time. All randomness (loss and
jitter) comes from one ``random.Random`` seeded from the network config, so a
(scenario, seed) pair always yields the same trace.
"""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable, NamedTuple


@dataclass(frozen=True)
class NetworkConfig:
    base_latency: int = 10
    jitter: int = 20
    loss_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss_prob must be in [0, 1)")

    @property
    def round_trip(self) -> int:
        """Worst-case request/response time."""
        return 2 * (self.base_latency + self.jitter)


@dataclass
class Event:
    fire_time: int
    seq: int
    target: str
    source: str
    kind: str
    tx_id: str = ""
    payload: Any = None
    message: bool = True


class TraceRecord(NamedTuple):
    time: int
    seq: int
    kind: str
    src: str
    dst: str
    tx_id: str

    def line(self) -> str:
        return f"{self.time}\t{self.seq}\t{self.kind}\t{self.src}\t{self.dst}\t{self.tx_id}"

    @classmethod
    def parse(cls, line: str) -> TraceRecord:
        t, s, kind, src, dst, tx = line.rstrip("\n").split("\t")
        return cls(int(t), int(s), kind, src, dst, tx)


TRACE_HEADER = "time\tseq\tkind\tfrom\tto\ttx_id"

Handler = Callable[[Event], None]


class UnknownNode(KeyError):
    pass


class Network:
    def __init__(self, config: NetworkConfig):
        self.config = config
        self.rng = random.Random(f"simnet:{config.seed}")
        self.now = 0
        self.handlers: dict[str, Handler] = {}
        self.trace: list[TraceRecord] = []
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._current_seq = -1
        self.scheduled = 0
        self.processed = 0
        self.sent = 0
        self.dropped = 0

    def add_node(self, node_id: str, handler: Handler) -> None:
        if node_id in self.handlers:
            raise ValueError(f"node {node_id!r} registered twice")
        self.handlers[node_id] = handler

    def _push(self, ev: Event) -> Event:
        if ev.fire_time < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (ev.fire_time, ev.seq, ev))
        self.scheduled += 1
        return ev

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def send(self, kind: str, src: str, dst: str, tx_id: str = "",
             payload: Any = None) -> Event | None:
        """Schedule delivery, or drop silently with probability ``loss_prob``."""
        for n in (src, dst):
            if n not in self.handlers:
                raise UnknownNode(n)
        self.sent += 1
        lost = self.rng.random() < self.config.loss_prob
        extra = self.rng.randint(0, self.config.jitter) if self.config.jitter else 0
        if lost:
            self.dropped += 1
            return None
        return self._push(Event(self.now + self.config.base_latency + extra,
                                self._next_seq(), dst, src, kind, tx_id, payload))

    def set_timer(self, node: str, delay: int, kind: str, tx_id: str = "",
                  payload: Any = None) -> Event:
        if node not in self.handlers:
            raise UnknownNode(node)
        if delay < 0:
            raise ValueError("timer delay must be non-negative")
        return self._push(Event(self.now + delay, self._next_seq(), node, node, kind, tx_id,
                                payload, message=False))

    def note(self, kind: str, src: str, dst: str, tx_id: str = "") -> None:
        """Add a protocol annotation to the trace at the current instant."""
        self.trace.append(TraceRecord(self.now, self._current_seq, kind, src, dst, tx_id))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek_time(self) -> int | None:
        return self._queue[0][0] if self._queue else None

    def step(self) -> Event:
        t, seq, ev = heapq.heappop(self._queue)
        self.now = t
        self._current_seq = seq
        self.processed += 1
        self.trace.append(TraceRecord(t, seq, ev.kind, ev.source, ev.target, ev.tx_id))
        self.handlers[ev.target](ev)
        return ev

    def run_until(self, t_max: int | None = None) -> list[TraceRecord]:
        """Process events until the queue is empty or the next event is later
        than ``t_max``. Returns the full trace so far."""
        while self._queue and (t_max is None or self._queue[0][0] <= t_max):
            self.step()
        if t_max is not None and t_max > self.now:
            self.now = t_max
        return self.trace


def write_trace(records: Iterable[TraceRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in records:
            fh.write(r.line() + "\n")


def read_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != TRACE_HEADER:
            raise ValueError(f"not a trace file: {path}")
        return [TraceRecord.parse(line) for line in fh if line.strip()]


def measure_consensus_latency(scenario, mode: str = "zone", seed: int | None = None) -> list[int]:
    """Per-transaction consensus latency (ticks) for ``scenario`` in ``mode``.

    Latency is finalize time minus propose time. Flood mode sends every
    proposal to all participants directly.
    """
    from .runner import simulate

    result = simulate(scenario, mode=mode, seed=seed)
    return [r.latency for r in result.records if r.latency is not None]
