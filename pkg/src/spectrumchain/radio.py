"""Radio environment: geometry, log-distance path loss, interference
aggregation, interference graphs and validation zones.

Everything here is a pure function of its inputs. Power levels at the API
boundary are dBm; sums are always taken in linear milliwatts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels

NEG_INF = -math.inf

#: Coordinates are stored at millimetre resolution so they survive the
#: integer wire format unchanged.
_COORD_SCALE = 1000
#: Powers are stored at millidB resolution for the same reason.
_POWER_SCALE = 1000


def quantize_coord(v: float) -> float:
    return round(float(v) * _COORD_SCALE) / _COORD_SCALE


def quantize_db(v: float) -> float:
    return round(float(v) * _POWER_SCALE) / _POWER_SCALE


def dbm_to_mw(dbm: float) -> float:
    if dbm == NEG_INF:
        return 0.0
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        return NEG_INF
    return 10.0 * math.log10(mw)


@dataclass(frozen=True, order=True)
class Location:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite location ({self.x}, {self.y})")
        object.__setattr__(self, "x", quantize_coord(self.x))
        object.__setattr__(self, "y", quantize_coord(self.y))

    def distance(self, other: Location) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class BandPlan:
    """A contiguous band split into equal-width channels."""

    low_mhz: float = 3550.0
    high_mhz: float = 3700.0
    channels: int = 15

    def __post_init__(self):
        if self.channels < 1 or self.high_mhz <= self.low_mhz:
            raise ValueError("band plan needs high > low and at least one channel")

    @property
    def channel_width_mhz(self) -> float:
        return (self.high_mhz - self.low_mhz) / self.channels

    def center_mhz(self, channel: int) -> float:
        self.check(channel)
        return self.low_mhz + (channel + 0.5) * self.channel_width_mhz

    def check(self, channel: int) -> None:
        if not 0 <= channel < self.channels:
            raise ValueError(f"channel {channel} outside band plan 0..{self.channels - 1}")


@dataclass(frozen=True)
class RadioParams:
    tx_power: float
    channel: int = 0

    def __post_init__(self):
        if not math.isfinite(self.tx_power):
            raise ValueError("tx_power must be finite")
        object.__setattr__(self, "tx_power", quantize_db(self.tx_power))
        if self.channel < 0:
            raise ValueError("channel index must be non-negative")

    def check(self, band: BandPlan, min_power: float, max_power: float) -> None:
        band.check(self.channel)
        if not min_power <= self.tx_power <= max_power:
            raise ValueError(f"tx_power {self.tx_power} dBm outside [{min_power}, {max_power}]")


@dataclass(frozen=True)
class PropagationModel:
    ref_loss_db: float = 40.0
    d0: float = 1.0
    exponent: float = 3.5
    min_distance: float = 1.0

    def __post_init__(self):
        if self.exponent <= 0 or self.d0 <= 0 or self.ref_loss_db < 0 or self.min_distance <= 0:
            raise ValueError("propagation model needs exponent > 0, d0 > 0, "
                             "ref_loss_db >= 0, min_distance > 0")

    @property
    def kernel_args(self) -> tuple[float, float, float, float]:
        return (float(self.ref_loss_db), float(self.d0), float(self.exponent),
                float(self.min_distance))


def path_loss_db(model: PropagationModel, d: float) -> float:
    if d < 0:
        raise ValueError("distance must be non-negative")
    return model.ref_loss_db + 10.0 * model.exponent * math.log10(
        max(d, model.min_distance) / model.d0)


def received_power_dbm(tx_power: float, pl: float) -> float:
    return tx_power - pl


def aggregate_interference_dbm(levels: Iterable[float]) -> float:
    """Sum dBm levels in the linear domain; no levels gives ``NEG_INF``."""
    total = math.fsum(dbm_to_mw(level) for level in levels)
    return mw_to_dbm(total)


@dataclass(frozen=True)
class RadioNode:
    """A participant's receiver (and default transmitter) in the plane."""

    id: str
    location: Location
    radio: RadioParams


@dataclass
class InterferenceGraph:
    sensitivity_dbm: float
    nodes: list[str]
    edges: dict[tuple[str, str], float] = field(default_factory=dict)

    def neighbors_out(self, node: str) -> list[str]:
        return sorted(j for (i, j) in self.edges if i == node)

    def neighbors_in(self, node: str) -> list[str]:
        return sorted(i for (i, j) in self.edges if j == node)


def build_interference_graph(nodes: Sequence[RadioNode], model: PropagationModel,
                             sensitivity: float) -> InterferenceGraph:
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate node id in interference graph input")
    graph = InterferenceGraph(sensitivity_dbm=sensitivity, nodes=ids)
    if len(nodes) < 2:
        return graph
    xs = np.array([n.location.x for n in nodes], dtype=np.float64)
    ys = np.array([n.location.y for n in nodes], dtype=np.float64)
    ps = np.array([n.radio.tx_power for n in nodes], dtype=np.float64)
    rx = kernels.pairwise_rx_dbm(xs, ys, ps, xs, ys, *model.kernel_args)
    for j, dst in enumerate(ids):
        for i, src in enumerate(ids):
            if i != j and rx[j, i] >= sensitivity:
                graph.edges[(src, dst)] = float(rx[j, i])
    return graph


@dataclass(frozen=True)
class ValidationZone:
    tx_id: str
    members: frozenset[str]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.sorted())

    def sorted(self) -> list[str]:
        return sorted(self.members)


def hearing_set(source: Location, tx_power: float, points: Mapping[str, Location],
                model: PropagationModel, sensitivity: float) -> set[str]:
    """Ids of ``points`` receiving at least ``sensitivity`` dBm from ``source``."""
    if not points:
        return set()
    if sensitivity == NEG_INF:
        return set(points)
    ids = list(points)
    rx = kernels.pairwise_rx_dbm(
        np.array([source.x]), np.array([source.y]), np.array([float(tx_power)]),
        np.array([points[i].x for i in ids], dtype=np.float64),
        np.array([points[i].y for i in ids], dtype=np.float64),
        *model.kernel_args)[:, 0]
    return {i for i, r in zip(ids, rx) if r >= sensitivity}


def validation_zone(tx_id: str, seller: str, buyer: str,
                    old: tuple[Location, float] | None,
                    new: tuple[Location, float] | None,
                    participants: Mapping[str, Location],
                    model: PropagationModel, sensitivity: float) -> ValidationZone:
    """Nodes whose interference environment a relocation changes.

    ``old`` and ``new`` are (transmitter location, tx power) before and after
    the trade; either may be ``None`` for one-sided moves (mint / retire).
    ``participants`` maps every voting participant (radio nodes and
    protection-point agents) to its receiver location.
    """
    members = {seller, buyer}
    for side in (old, new):
        if side is not None:
            members |= hearing_set(side[0], side[1], participants, model, sensitivity)
    unknown = members - set(participants)
    if unknown:
        raise KeyError(f"zone members not in participant set: {sorted(unknown)}")
    return ValidationZone(tx_id=tx_id, members=frozenset(members))


@dataclass(frozen=True)
class ProtectionPoint:
    """An incumbent receiver whose aggregate interference is capped."""

    id: str
    location: Location
    threshold_dbm: float

    def __post_init__(self):
        if not math.isfinite(self.threshold_dbm):
            raise ValueError("protection threshold must be finite")
        object.__setattr__(self, "threshold_dbm", quantize_db(self.threshold_dbm))

    @property
    def threshold_mw(self) -> float:
        return dbm_to_mw(self.threshold_dbm)
