"""Multi-tier interference budgets at incumbent protection points.

A protection point tolerates a fixed aggregate interference; that budget is
split across secondary grants either statically (equal share or fixed
proportions) or, on-chain, by letting a lower-tier device borrow unused
allowance ("slack") from upper-tier grants through ``BudgetAdjust``
transactions.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Sequence

from .consensus import RadioEnvironment, Reason, assess, contribution_mw, point_interference_mw
from .ledger import (BudgetAdjust, LedgerState, SpectrumGrant, apply_transaction,
                     mw_to_units, units_to_mw)
from .radio import ProtectionPoint, PropagationModel, dbm_to_mw, mw_to_dbm

STATIC = "static-equal"
COORDINATED = "chain-coordinated"


def equal_allocation(threshold_dbm: float, n: int) -> float:
    """Per-device allowance (dBm) so that ``n`` equal devices sum to the threshold."""
    if n < 1:
        raise ValueError("equal allocation needs at least one device")
    return threshold_dbm - 10.0 * math.log10(n)


def proportional_allocation(threshold_dbm: float, weights: Sequence[float]) -> list[float]:
    if not weights or any(not (w > 0) for w in weights):
        raise ValueError("weights must be a non-empty list of positive numbers")
    total = math.fsum(weights)
    budget = dbm_to_mw(threshold_dbm)
    return [mw_to_dbm(w / total * budget) for w in weights]


def allocate_units(threshold_dbm: float, weights: Sequence[float]) -> list[int]:
    """Integer budget units per device, summing exactly to the floor of the
    threshold in units (largest-remainder rounding)."""
    if not weights or any(not (w > 0) for w in weights):
        raise ValueError("weights must be a non-empty list of positive numbers")
    total_units = math.floor(dbm_to_mw(threshold_dbm) / units_to_mw(1))
    # exact rationals: totals exceed 2**53, where float shares drift
    ws = [Fraction(w) for w in weights]
    wsum = sum(ws)
    exact = [w * total_units / wsum for w in ws]
    base = [math.floor(e) for e in exact]
    short = total_units - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def contribution_units(grant: SpectrumGrant, point: ProtectionPoint,
                       model: PropagationModel) -> int:
    """Own contribution at ``point`` rounded up, so allowance accounting
    never under-counts."""
    return math.ceil(contribution_mw(grant, point.location, model) / units_to_mw(1))


def slack_units(grant: SpectrumGrant, point: ProtectionPoint, model: PropagationModel) -> int:
    """Unused allowance: allowance minus own contribution, never negative."""
    return max(0, grant.budget.get(point.id, 0) - contribution_units(grant, point, model))


def request_budget_adjustment(requester: SpectrumGrant, needed_mw: float, state: LedgerState,
                              model: PropagationModel, point: str,
                              timestamp: int = 0) -> list[BudgetAdjust] | None:
    """Collect ``needed_mw`` of allowance at ``point`` for ``requester``.

    Upper-tier grants are drained greedily in descending slack order (ties by
    grant id). Returns the transfers, or ``None`` when the available slack
    cannot cover the need.
    """
    if requester.tier <= 1:
        raise ValueError(f"grant {requester.grant_id} is in the top tier; nobody can donate")
    pp = state.protection_points[point]
    need = mw_to_units(needed_mw)
    if need <= 0:
        return []
    donors = []
    for g in state.grants.values():
        if g.tier < requester.tier and g.grant_id != requester.grant_id:
            s = slack_units(g, pp, model)
            if s > 0:
                donors.append((-s, g.grant_id, g))
    donors.sort(key=lambda d: (d[0], d[1]))
    if sum(-d[0] for d in donors) < need:
        return None
    txs = []
    for neg_slack, gid, g in donors:
        if need == 0:
            break
        take = min(-neg_slack, need)
        txs.append(BudgetAdjust(gid, g.holder, requester.grant_id, ((point, take),), timestamp))
        need -= take
    return txs


@dataclass
class AdmissionScenario:
    """Genesis state (with allowances) plus lower-tier candidates in arrival
    order. Each candidate carries its static allowance in ``budget``."""

    state: LedgerState
    entrants: list[SpectrumGrant]
    model: PropagationModel


@dataclass
class AdmissionResult:
    policy: str
    admitted: list[str] = field(default_factory=list)
    adjustments: list[BudgetAdjust] = field(default_factory=list)
    state: LedgerState | None = None

    @property
    def count(self) -> int:
        return len(self.admitted)


def _deficits(grant: SpectrumGrant, state: LedgerState, model: PropagationModel) -> dict[str, int]:
    out = {}
    for pid, pp in sorted(state.protection_points.items()):
        over = contribution_units(grant, pp, model) - grant.budget.get(pid, 0)
        if over > 0:
            out[pid] = over
    return out


def _safe(state: LedgerState, model: PropagationModel) -> bool:
    agg = point_interference_mw(list(state.grants.values()), state, model)
    return all(mw_to_dbm(agg[p]) <= state.protection_points[p].threshold_dbm for p in agg)


def admit_entrants(scenario: AdmissionScenario, policy: str) -> AdmissionResult:
    if policy not in (STATIC, COORDINATED):
        raise ValueError(f"unknown admission policy {policy!r}")
    state = scenario.state.copy()
    env = RadioEnvironment({}, scenario.model)
    result = AdmissionResult(policy)
    for entrant in scenario.entrants:
        trial = state.copy()
        trial.grants[entrant.grant_id] = entrant
        deficits = _deficits(entrant, trial, scenario.model)
        txs: list[BudgetAdjust] = []
        if deficits and policy == COORDINATED and entrant.tier > 1:
            for pid, units in deficits.items():
                got = request_budget_adjustment(trial.grants[entrant.grant_id],
                                                units_to_mw(units), trial, scenario.model, pid)
                if got is None:
                    txs = []
                    break
                for tx in got:
                    # each transfer is validated like any other on-chain tx
                    if assess(tx, trial, env).validity is not Reason.OK:
                        txs = []
                        break
                    trial = apply_transaction(trial, tx)
                    txs.append(tx)
                else:
                    continue
                break
            deficits = _deficits(trial.grants[entrant.grant_id], trial, scenario.model)
        if deficits or not _safe(trial, scenario.model):
            continue
        state = trial
        result.admitted.append(entrant.grant_id)
        result.adjustments.extend(txs)
    result.state = state
    return result


def admitted_count(scenario: AdmissionScenario, policy: str) -> int:
    return admit_entrants(scenario, policy).count


def tier_totals(state: LedgerState, point: str) -> dict[int, int]:
    """Allowance units per tier at one protection point."""
    out: dict[int, int] = {}
    for g in state.grants.values():
        out[g.tier] = out.get(g.tier, 0) + g.budget.get(point, 0)
    return dict(sorted(out.items()))
