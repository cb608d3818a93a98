"""Leader/follower spectrum pricing with compensation under rationing.

One operator (leader) posts a unit price for a fixed capacity; each service
provider (follower) with valuation ``v`` buys the quantity maximising
``v*ln(1+q) - p*q``. The leader picks the revenue-maximising price on a grid
by backward induction. When demand at that price exceeds capacity, supply is
rationed proportionally and the leader pays back a share ``alpha`` of the
shortfall's value to each rationed follower.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FollowerProfile:
    id: str
    valuation: float

    def __post_init__(self):
        if not (math.isfinite(self.valuation) and self.valuation > 0):
            raise ValueError("valuation must be finite and positive")


@dataclass(frozen=True)
class LeaderOffer:
    price: float
    capacity: float

    def __post_init__(self):
        if self.price < 0 or not self.capacity > 0:
            raise ValueError("offer needs price >= 0 and capacity > 0")


def follower_utility(q: float, p: float, v: float) -> float:
    return v * math.log1p(q) - p * q


def follower_best_response(p: float, v: float) -> float:
    if p <= 0:
        raise ValueError("price must be positive (demand is unbounded at zero price)")
    return max(0.0, v / p - 1.0)


def revenue(p: float, valuations: Sequence[float], capacity: float) -> float:
    demand = math.fsum(follower_best_response(p, v) for v in valuations)
    return p * min(capacity, demand)


def price_grid(valuations: Sequence[float], step: float | None = None) -> np.ndarray:
    """Prices step, 2*step, ... up to the largest valuation."""
    top = max(valuations)
    if step is None:
        step = 0.001 * top
    if not step > 0:
        raise ValueError("grid step must be positive")
    n = int(math.floor(top / step + 1e-9))
    return step * np.arange(1, n + 1, dtype=np.float64)


def leader_optimal_price(profiles: Sequence[FollowerProfile], capacity: float,
                         grid: Sequence[float] | None = None) -> tuple[float, float]:
    """Grid-search the revenue-maximising price; ties go to the lower price."""
    if not profiles:
        if grid is None or len(grid) == 0:
            return 0.0, 0.0
        return float(min(grid)), 0.0
    vs = np.array([f.valuation for f in profiles], dtype=np.float64)
    prices = np.asarray(price_grid(vs) if grid is None else grid, dtype=np.float64)
    demand = np.maximum(0.0, vs[None, :] / prices[:, None] - 1.0).sum(axis=1)
    rev = prices * np.minimum(capacity, demand)
    best = rev.max()
    # lowest price among the maximisers
    idx = int(np.flatnonzero(rev == best)[np.argmin(prices[rev == best])])
    return float(prices[idx]), float(rev[idx])


def jain_index(values: Sequence[float]) -> float:
    vals = list(values)
    sq = math.fsum(u * u for u in vals)
    if not vals or sq == 0:
        return 1.0
    return math.fsum(vals) ** 2 / (len(vals) * sq)


@dataclass
class MarketOutcome:
    price: float
    capacity: float
    demand: list[float]
    allocation: list[float]
    compensation: list[float]
    utility_before: list[float]
    utility: list[float]
    revenue: float
    jain_before: float
    jain: float

    @property
    def rationed(self) -> bool:
        return any(c > 0 for c in self.compensation)


def allocate_and_compensate(profiles: Sequence[FollowerProfile], offer: LeaderOffer,
                            alpha: float = 0.5) -> MarketOutcome:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    p, cap = offer.price, offer.capacity
    demand = [follower_best_response(p, f.valuation) for f in profiles]
    total = math.fsum(demand)
    if total <= cap:
        alloc = list(demand)
        comp = [0.0] * len(demand)
    else:
        alloc = [q * cap / total for q in demand]
        comp = [alpha * p * (q - a) for q, a in zip(demand, alloc)]
        gross = p * cap
        paid = math.fsum(comp)
        if paid > gross:
            # heavy oversubscription: pay out at most the gross revenue
            comp = [c * gross / paid for c in comp]
    before = [follower_utility(a, p, f.valuation) for a, f in zip(alloc, profiles)]
    after = [u + c for u, c in zip(before, comp)]
    rev = p * math.fsum(alloc) - math.fsum(comp)
    return MarketOutcome(p, cap, demand, alloc, comp, before, after, rev,
                         jain_index(before), jain_index(after))


def run_market(profiles: Sequence[FollowerProfile], capacity: float, alpha: float = 0.5,
               step: float | None = None) -> MarketOutcome:
    """Leader prices at the grid optimum, then allocation and compensation."""
    grid = price_grid([f.valuation for f in profiles], step) if profiles else None
    p, _ = leader_optimal_price(profiles, capacity, grid)
    return allocate_and_compensate(profiles, LeaderOffer(p, capacity), alpha)
