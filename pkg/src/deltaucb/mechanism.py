"""Single-slot auction mechanism: free round-robin learning, then a fixed per-click price.

For a budgeted number of free rounds the slot rotates over agents in id
order, ignoring bids entirely, and only the shown agent's click is
observed. At the end of the budget the agent with the highest bid-weighted
upper-confidence score wins every remaining round; per click it pays the
runner-up's score divided by its own upper confidence index. Indices never
change after the budget.

``run_single_slot`` computes aggregates through a vectorized path;
``iter_rounds`` is the literal round-by-round reference that also produces
the per-round records. The two are checked against each other in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import (
    AgentProfile,
    AuctionConfig,
    ConfigError,
    LearnerState,
    Phase,
    RoundRecord,
    confidence_radius,
    exploration_budget,
    validate_config,
    validate_profiles,
)
from .environment import ClickRealization, draw_realization, realized_click
from . import metrics
from .metrics import RunResult, RunSummary

ROUNDS_LOG_LEVELS = ("none", "all", "exploit-only")


@dataclass(frozen=True)
class SingleSlotOutcome:
    """Winner, runner-up, and the per-click price fixed at the end of exploration."""

    winner: int
    runner_up: Optional[int]
    payment_per_click: float
    learner: LearnerState


def ucb_pair(empirical_ctr: float, pull_count: int, horizon: float, scale: float = 1.0):
    """Upper and lower confidence values around an empirical click rate; unclipped."""
    radius = confidence_radius(pull_count, horizon, scale)
    return empirical_ctr + radius, empirical_ctr - radius


def exploration_agent(t: int, num_agents: int) -> int:
    """Round-robin allocation for free rounds: ((t-1) mod K) + 1."""
    return ((t - 1) % num_agents) + 1


def bid_vector(profiles: Sequence[AgentProfile], bids, config: AuctionConfig) -> np.ndarray:
    """Bids as a float array in agent order, defaulting to the profiles' declared bids."""
    if bids is None:
        arr = np.array([p.bid for p in profiles], dtype=float)
    else:
        arr = np.asarray(bids, dtype=float)
        if arr.shape != (config.num_agents,):
            raise ConfigError("bids must have one entry per agent")
    if np.any(arr < 0.0) or np.any(arr > config.v_max):
        raise ConfigError("bid must lie in [0, v_max]")
    return arr


def exploration_step(
    state: LearnerState,
    realization: ClickRealization,
    t: int,
    profiles: Sequence[AgentProfile],
    config: AuctionConfig,
    budget: Optional[int] = None,
) -> RoundRecord:
    """One free round: allocate by rotation, observe that click, update only that agent's indices."""
    budget = exploration_budget(config) if budget is None else budget
    if t > min(budget, config.horizon):
        raise ValueError(f"exploration is over after round {min(budget, config.horizon)}")
    agent = exploration_agent(t, config.num_agents)
    click = realized_click(realization, agent, 1, t)
    state.record_pull(agent, float(click))
    state.round = t
    allocation = {1: agent}
    return RoundRecord(
        round=t,
        phase=Phase.EXPLORATION,
        allocation=allocation,
        clicks={agent: click},
        payments={agent: 0.0},
        delta_regret_increment=metrics.delta_regret_increment(allocation, profiles, config.delta),
        welfare_increment=metrics.welfare(profiles[agent - 1]),
    )


def declare_winner(state: LearnerState, bids) -> SingleSlotOutcome:
    """Fix the winner, runner-up, and per-click price from the current indices.

    Scores are ucb * bid; ties break toward the lower agent id. With a
    single agent there is no competition and the price is zero.
    """
    bids = np.asarray(bids, dtype=float)
    if np.any(state.pull_count == 0):
        raise ValueError("every agent must be pulled at least once before declaring a winner")
    scores = state.ucb * bids
    order = np.argsort(-scores, kind="stable")
    winner = int(order[0]) + 1
    winner_ucb = float(state.ucb[winner - 1])
    # after one pull the index is at least its radius, hence > 0
    assert winner_ucb > 0.0
    if len(order) > 1:
        runner_up = int(order[1]) + 1
        payment = float(scores[runner_up - 1]) / winner_ucb
    else:
        runner_up = None
        payment = 0.0
    state.freeze(int(i) + 1 for i in order)
    return SingleSlotOutcome(
        winner=winner, runner_up=runner_up, payment_per_click=payment, learner=state
    )


def exploitation_step(
    outcome: SingleSlotOutcome,
    realization: ClickRealization,
    t: int,
    profiles: Sequence[AgentProfile],
    config: AuctionConfig,
) -> RoundRecord:
    """One committed round: the winner is shown and pays the fixed price only on a click."""
    winner = outcome.winner
    click = realized_click(realization, winner, 1, t)
    outcome.learner.round = t
    allocation = {1: winner}
    return RoundRecord(
        round=t,
        phase=Phase.EXPLOITATION,
        allocation=allocation,
        clicks={winner: click},
        payments={winner: outcome.payment_per_click * click},
        delta_regret_increment=metrics.delta_regret_increment(allocation, profiles, config.delta),
        welfare_increment=metrics.welfare(profiles[winner - 1]),
    )


def iter_rounds(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    bids=None,
    realization: Optional[ClickRealization] = None,
    budget_override: Optional[int] = None,
) -> Iterator[RoundRecord]:
    """Replay the whole mechanism round by round (reference path)."""
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    if config.num_slots != 1:
        raise ConfigError("single-slot mechanism requires num_slots == 1")
    bids_arr = bid_vector(profiles, bids, config)
    if realization is None:
        realization = draw_realization(config, profiles)
    budget = exploration_budget(config) if budget_override is None else budget_override
    explore_until = min(budget, config.horizon)

    state = LearnerState.fresh(config.num_agents, config.horizon)
    for t in range(1, explore_until + 1):
        yield exploration_step(state, realization, t, profiles, config, budget=budget)
    if budget < config.horizon:
        outcome = declare_winner(state, bids_arr)
        for t in range(explore_until + 1, config.horizon + 1):
            yield exploitation_step(outcome, realization, t, profiles, config)


def run_single_slot(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    bids=None,
    realization: Optional[ClickRealization] = None,
    rounds_log: str = "none",
    budget_override: Optional[int] = None,
    mechanism_label: str = "delta-ucb-single",
) -> RunResult:
    """Run the full single-slot mechanism and aggregate regret, revenue, welfare, and utilities."""
    if rounds_log not in ROUNDS_LOG_LEVELS:
        raise ConfigError(f"rounds_log must be one of {ROUNDS_LOG_LEVELS}")
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    if config.num_slots != 1:
        raise ConfigError("single-slot mechanism requires num_slots == 1")
    bids_arr = bid_vector(profiles, bids, config)
    if realization is None:
        realization = draw_realization(config, profiles)

    horizon = config.horizon
    num_agents = config.num_agents
    budget = exploration_budget(config) if budget_override is None else budget_override
    explore_until = min(budget, horizon)

    welfares = np.array([metrics.welfare(p) for p in profiles])
    best_welfare = float(welfares.max())
    tolerated = metrics.delta_set(profiles, config.delta)
    gaps = best_welfare - welfares
    delta_gaps = np.where([p.id not in tolerated for p in profiles], gaps, 0.0)

    state = LearnerState.fresh(num_agents, horizon)
    intrinsic = realization.intrinsic_clicks
    per_agent_utility = {p.id: 0.0 for p in profiles}
    explore_delta = 0.0
    explore_standard = 0.0
    total_welfare = 0.0
    for p in profiles:
        i = p.id - 1
        pull_rounds = np.arange(p.id, explore_until + 1, num_agents)
        pulls = len(pull_rounds)
        if pulls:
            clicks = intrinsic[i, pull_rounds - 1].astype(np.float64)
            click_total = float(np.cumsum(clicks)[-1])
            state.pull_count[i] = pulls
            state.sample_sum[i] = click_total
            state.empirical_ctr[i] = click_total / pulls
            state.ucb[i], state.lcb[i] = ucb_pair(click_total / pulls, pulls, horizon)
            per_agent_utility[p.id] += p.valuation * click_total
        explore_delta += pulls * delta_gaps[i]
        explore_standard += pulls * gaps[i]
        total_welfare += pulls * welfares[i]
    state.round = explore_until

    outcome = None
    winners = ()
    flags = ()
    exploit_delta = 0.0
    exploit_standard = 0.0
    total_revenue = 0.0
    if budget >= horizon:
        flags = ("exploration-only",)
    else:
        outcome = declare_winner(state, bids_arr)
        w = outcome.winner
        exploit_rounds = horizon - explore_until
        winner_clicks = int(intrinsic[w - 1, explore_until:horizon].sum())
        price = outcome.payment_per_click
        total_revenue = price * winner_clicks
        per_agent_utility[w] += (profiles[w - 1].valuation - price) * winner_clicks
        exploit_delta = exploit_rounds * float(delta_gaps[w - 1])
        exploit_standard = exploit_rounds * float(gaps[w - 1])
        total_welfare += exploit_rounds * float(welfares[w - 1])
        winners = (w,)
        state.round = horizon

    records = None
    if rounds_log != "none":
        records = list(iter_rounds(config, profiles, bids, realization, budget_override))
        if rounds_log == "exploit-only":
            records = [r for r in records if r.phase is Phase.EXPLOITATION]

    summary = RunSummary(
        mechanism=mechanism_label,
        num_agents=num_agents,
        num_slots=1,
        horizon=horizon,
        delta=config.delta,
        v_max=config.v_max,
        seed=realization.seed,
        exploration_budget=budget,
        exploration_rounds_used=explore_until,
        total_delta_regret=explore_delta + exploit_delta,
        exploration_delta_regret=explore_delta,
        exploitation_delta_regret=exploit_delta,
        total_standard_regret=explore_standard + exploit_standard,
        total_revenue=total_revenue,
        total_welfare=total_welfare,
        per_agent_utility=per_agent_utility,
        winners=winners,
        flags=flags,
    )
    return RunResult(summary=summary, outcome=outcome, records=records)
