"""Welfare, regret, revenue, and utility accounting.

These functions use the true click rates and valuations, so they belong to
the evaluation side only; the mechanism never sees them. Regret is counted
with a tolerance: allocating any agent whose welfare sits within ``delta``
of the best choice for its slot costs nothing, and only larger gaps accrue.
Tolerance regret accrues in exploration and exploitation rounds alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .core import AgentProfile, RoundRecord

SINGLE_SLOT = (1.0,)


def welfare(profile: AgentProfile) -> float:
    """Expected per-impression value of showing this agent: ctr * valuation."""
    return profile.ctr * profile.valuation


def welfare_at_slot(profile: AgentProfile, slot: int, prominences: Sequence[float]) -> float:
    """Slot-discounted welfare: prominence_m * ctr * valuation."""
    return prominences[slot - 1] * welfare(profile)


def welfare_ranking(profiles: Sequence[AgentProfile]) -> list:
    """Agent ids ordered by true welfare, best first; ties break toward the lower id."""
    return [p.id for p in sorted(profiles, key=lambda p: (-welfare(p), p.id))]


def delta_set(profiles: Sequence[AgentProfile], delta: float) -> set:
    """Agents whose welfare gap to the best is strictly below the tolerance."""
    best = max(welfare(p) for p in profiles)
    return {p.id for p in profiles if best - welfare(p) < delta}


def delta_set_for_slot(
    profiles: Sequence[AgentProfile], delta: float, slot: int, prominences: Sequence[float]
) -> set:
    """Agents within tolerance of the slot's ideal occupant (the slot-th best agent)."""
    ranking = welfare_ranking(profiles)
    ideal = profiles[ranking[slot - 1] - 1]
    ideal_welfare = welfare_at_slot(ideal, slot, prominences)
    return {
        p.id for p in profiles if ideal_welfare - welfare_at_slot(p, slot, prominences) < delta
    }


def delta_regret_increment(
    allocation: dict,
    profiles: Sequence[AgentProfile],
    delta: float,
    prominences: Optional[Sequence[float]] = None,
) -> float:
    """Tolerance regret of one round's allocation (sums over slots for multi-slot)."""
    prominences = SINGLE_SLOT if prominences is None else prominences
    ranking = welfare_ranking(profiles)
    total = 0.0
    for slot, agent in allocation.items():
        members = delta_set_for_slot(profiles, delta, slot, prominences)
        if agent not in members:
            ideal = profiles[ranking[slot - 1] - 1]
            gap = welfare_at_slot(ideal, slot, prominences) - welfare_at_slot(
                profiles[agent - 1], slot, prominences
            )
            total += gap
    return total


def standard_regret_increment(
    allocation: dict,
    profiles: Sequence[AgentProfile],
    prominences: Optional[Sequence[float]] = None,
) -> float:
    """Plain welfare regret of one round's allocation, with no tolerance."""
    prominences = SINGLE_SLOT if prominences is None else prominences
    ranking = welfare_ranking(profiles)
    total = 0.0
    for slot, agent in allocation.items():
        ideal = profiles[ranking[slot - 1] - 1]
        total += welfare_at_slot(ideal, slot, prominences) - welfare_at_slot(
            profiles[agent - 1], slot, prominences
        )
    return total


def agent_utility(record: RoundRecord, agent: int, valuation: float) -> float:
    """Per-round utility: valuation minus payment, only when allocated and clicked."""
    if agent not in record.allocation.values():
        return 0.0
    if not record.click_of(agent):
        return 0.0
    return valuation - record.payment_of(agent)


@dataclass(frozen=True)
class RunSummary:
    """Aggregates of one seeded run."""

    mechanism: str
    num_agents: int
    num_slots: int
    horizon: int
    delta: float
    v_max: float
    seed: int
    exploration_budget: int
    exploration_rounds_used: int
    total_delta_regret: float
    exploration_delta_regret: float
    exploitation_delta_regret: float
    total_standard_regret: float
    total_revenue: float
    total_welfare: float
    per_agent_utility: dict
    winners: tuple
    flags: tuple = ()


@dataclass(frozen=True)
class RunResult:
    """A run's summary plus, when requested, its outcome object and round records."""

    summary: RunSummary
    outcome: object = None
    records: Optional[list] = None
