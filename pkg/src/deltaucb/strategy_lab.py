"""Counterfactual replay checks and reference mechanisms.

Truthfulness is checked the strong way: fix the click realization and the
other agents' bids, sweep the deviator's bid over a grid, and demand that
the truthful bid is at least as good in *every single round*, not just in
expectation. Because learning rounds ignore bids, the learner state at the
end of exploration is shared across all counterfactuals, which is what
makes this replay exact.

Also provides reference mechanisms for regret comparisons: a clairvoyant
allocator, a plain bid-weighted UCB learner with no payments, and a
variant of the main mechanism whose free-round budget grows like T^(2/3)
instead of log T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

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
from .environment import ClickRealization, draw_realization
from .mechanism import bid_vector, declare_winner, run_single_slot
from .mechanism_multi import SlotModel, declare_ranking, run_multi_slot
from . import metrics
from .metrics import RunResult, RunSummary

DSIC_TOLERANCE = 1e-12
PIVOT_PROBE = 1e-6
TIE_NUDGE = 1e-9


@dataclass(frozen=True)
class DeviationScenario:
    """One agent's counterfactual bid sweep against fixed competitors and randomness."""

    deviator: int
    bid_grid: tuple
    fixed_others: tuple
    realization: ClickRealization


@dataclass(frozen=True)
class DsicReport:
    """Worst per-round gain any grid bid achieved over the truthful bid."""

    deviator: int
    holds: bool
    worst_violation: float
    witness_round: Optional[int]
    witness_bid: Optional[float]
    grid_size: int


@dataclass(frozen=True)
class IrReport:
    """Smallest per-round utility any truthful agent ever received."""

    holds: bool
    worst_utility: float
    witness_agent: Optional[int]
    witness_round: Optional[int]


def _agent_slot_rounds(agent: int, slot: int, num_agents: int, until: int) -> np.ndarray:
    """Rounds in 1..until where the rotation puts this agent at this slot."""
    first = ((agent - slot) % num_agents) + 1
    return np.arange(first, until + 1, num_agents)


def per_round_utilities(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    realization: ClickRealization,
    outcome,
    agent: int,
    explore_until: int,
) -> np.ndarray:
    """Utility of one agent in every round, given a committed outcome.

    Exploration rounds are free, so utility there is just valuation times
    the own click whenever the rotation shows the agent; those rounds never
    depend on bids. Exploitation utility is (valuation - price) per click
    at the slot the outcome assigns, or zero if unallocated.
    """
    horizon = config.horizon
    valuation = profiles[agent - 1].valuation
    intrinsic = realization.intrinsic_clicks
    util = np.zeros(horizon)
    for m in range(1, config.num_slots + 1):
        rounds = _agent_slot_rounds(agent, m, config.num_agents, explore_until)
        if len(rounds) == 0:
            continue
        clicks = intrinsic[agent - 1, rounds - 1]
        if realization.observations is not None:
            clicks = clicks & realization.observations[m - 1, rounds - 1]
        util[rounds - 1] += valuation * clicks

    if outcome is None or explore_until >= horizon:
        return util

    if config.num_slots == 1:
        if outcome.winner == agent:
            clicks = intrinsic[agent - 1, explore_until:horizon]
            util[explore_until:] = (valuation - outcome.payment_per_click) * clicks
    else:
        rank = outcome.ranking.index(agent)
        if rank < config.num_slots:
            clicks = intrinsic[agent - 1, explore_until:horizon]
            if realization.observations is not None:
                clicks = clicks & realization.observations[rank, explore_until:horizon]
            price = outcome.payments_per_click[rank]
            util[explore_until:] = (valuation - price) * clicks
    return util


def _declare(config: AuctionConfig, state: LearnerState, bids: np.ndarray):
    if config.num_slots == 1:
        return declare_winner(state, bids)
    return declare_ranking(state, bids, SlotModel.from_config(config))


def build_scenario(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    realization: ClickRealization,
    deviator: int,
    grid_points: int = 21,
) -> DeviationScenario:
    """Bid grid over [0, v_max] plus probes just above and below the rank-flipping bids.

    The probe bids are where the deviator's score would tie the strongest
    competitor scores; exact ties are nudged away so the deterministic
    tie-break never decides a comparison.
    """
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    others = bid_vector(profiles, None, config)

    result = _run_mechanism(config, profiles, others, realization)
    probes = []
    if result.outcome is not None:
        ucb = result.outcome.learner.ucb
        own = float(ucb[deviator - 1])
        other_scores = np.delete(ucb * others, deviator - 1)
        pivots = np.sort(other_scores)[::-1]
        targets = [pivots[0]]
        second_idx = min(config.num_slots, len(pivots) - 1)
        if second_idx > 0:
            targets.append(pivots[second_idx])
        for target in targets:
            pivot_bid = target / own
            for probe in (pivot_bid - PIVOT_PROBE, pivot_bid + PIVOT_PROBE):
                probes.append(min(max(probe, 0.0), config.v_max))

    uniform = np.linspace(0.0, config.v_max, max(2, grid_points - len(probes)))
    grid = list(uniform) + probes

    if result.outcome is not None:
        own = float(result.outcome.learner.ucb[deviator - 1])
        other_scores = set(np.delete(result.outcome.learner.ucb * others, deviator - 1).tolist())
        for k, x in enumerate(grid):
            nudge = TIE_NUDGE
            while own * x in other_scores:
                x = x + nudge if x + nudge <= config.v_max else x - nudge
                nudge *= 2
            grid[k] = x

    return DeviationScenario(
        deviator=deviator,
        bid_grid=tuple(float(x) for x in grid),
        fixed_others=tuple(float(b) for b in others),
        realization=realization,
    )


def _run_mechanism(config, profiles, bids, realization) -> RunResult:
    bids = np.array(bids, dtype=float)
    runner = run_single_slot if config.num_slots == 1 else run_multi_slot
    return runner(config, profiles, bids=bids, realization=realization)


def verify_dsic(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    scenario: DeviationScenario,
) -> DsicReport:
    """Check that no grid bid ever beats the truthful bid in any round.

    Runs the mechanism once with the deviator truthful and once per grid
    bid, all against the scenario's shared realization and fixed
    competitor bids, and compares utilities round by round.
    """
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    deviator = scenario.deviator
    realization = scenario.realization
    truthful_value = profiles[deviator - 1].valuation

    truthful_bids = np.array(scenario.fixed_others, dtype=float)
    truthful_bids[deviator - 1] = truthful_value
    base = _run_mechanism(config, profiles, truthful_bids, realization)
    explore_until = base.summary.exploration_rounds_used
    truth_util = per_round_utilities(
        config, profiles, realization, base.outcome, deviator, explore_until
    )

    worst = -math.inf
    witness_round = None
    witness_bid = None
    for bid in scenario.bid_grid:
        if base.outcome is None:
            dev_util = truth_util  # exploration-only: bids never enter
        else:
            bids = truthful_bids.copy()
            bids[deviator - 1] = bid
            outcome = _declare(config, base.outcome.learner.copy(), bids)
            dev_util = per_round_utilities(
                config, profiles, realization, outcome, deviator, explore_until
            )
        gain = dev_util - truth_util
        idx = int(np.argmax(gain))
        if gain[idx] > worst:
            worst = float(gain[idx])
            witness_round = idx + 1
            witness_bid = float(bid)
    return DsicReport(
        deviator=deviator,
        holds=worst <= DSIC_TOLERANCE,
        worst_violation=worst,
        witness_round=witness_round,
        witness_bid=witness_bid,
        grid_size=len(scenario.bid_grid),
    )


def verify_ir(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    realization: ClickRealization,
) -> IrReport:
    """Check every truthful agent's per-round utility is nonnegative, exactly."""
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    truthful = np.array([p.valuation for p in profiles])
    base = _run_mechanism(config, profiles, truthful, realization)
    explore_until = base.summary.exploration_rounds_used

    worst = math.inf
    agent_hit = None
    round_hit = None
    for p in profiles:
        util = per_round_utilities(
            config, profiles, realization, base.outcome, p.id, explore_until
        )
        idx = int(np.argmin(util))
        if util[idx] < worst:
            worst = float(util[idx])
            agent_hit = p.id
            round_hit = idx + 1
    return IrReport(
        holds=worst >= 0.0, worst_utility=worst, witness_agent=agent_hit, witness_round=round_hit
    )


def max_tolerance_width(learner: LearnerState, profiles: Sequence[AgentProfile]) -> float:
    """Largest 2 * radius * valuation across agents, recomputed from pull counts."""
    widest = 0.0
    for p in profiles:
        radius = confidence_radius(
            int(learner.pull_count[p.id - 1]), learner.horizon, learner.eps_scale
        )
        widest = max(widest, 2.0 * radius * p.valuation)
    return widest


def welfare_interval_violations(
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    realization: Optional[ClickRealization] = None,
) -> int:
    """Count (agent, round) pairs whose welfare interval misses the true welfare.

    For each round the interval in force is the one from the agent's most
    recent pull; after exploration the indices are frozen, so the final
    interval is counted once per remaining round.
    """
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    if config.num_slots != 1:
        raise ConfigError("interval coverage counting is defined on single-slot runs")
    if realization is None:
        realization = draw_realization(config, profiles)
    horizon = config.horizon
    explore_until = min(exploration_budget(config), horizon)
    total = 0
    for p in profiles:
        rounds = np.arange(p.id, explore_until + 1, config.num_agents)
        pulls = len(rounds)
        if pulls == 0:
            continue
        clicks = realization.intrinsic_clicks[p.id - 1, rounds - 1].astype(np.float64)
        counts = np.arange(1, pulls + 1)
        means = np.cumsum(clicks) / counts
        radii = np.sqrt(2.0 * math.log(horizon) / counts)
        low = (means - radii) * p.valuation
        high = (means + radii) * p.valuation
        target = metrics.welfare(p)
        violated = (target < low) | (target > high)
        spans = np.full(pulls, config.num_agents, dtype=np.int64)
        spans[-1] = horizon - rounds[-1] + 1
        total += int((violated * spans).sum())
    return total


class BaselineKind(Enum):
    """Reference mechanisms for regret comparisons."""

    ORACLE_ALLOCATION = "oracle"
    PLAIN_UCB = "plain-ucb"
    EXPLORATION_SEPARATED_T23 = "explore-t23"


def t23_budget(num_agents: int, horizon: int) -> int:
    """Free-round budget of the polynomial-exploration reference: ceil(K * T^(2/3))."""
    return math.ceil(num_agents * horizon ** (2.0 / 3.0))


def run_baseline(
    kind: BaselineKind,
    config: AuctionConfig,
    profiles: Sequence[AgentProfile],
    bids=None,
    realization: Optional[ClickRealization] = None,
    rounds_log: str = "none",
) -> RunResult:
    """Run one of the reference mechanisms on the shared realization."""
    kind = BaselineKind(kind)
    config = validate_config(config)
    profiles = validate_profiles(profiles, config)
    if config.num_slots != 1:
        raise ConfigError("baselines are single-slot only")
    if realization is None:
        realization = draw_realization(config, profiles)
    if kind is BaselineKind.EXPLORATION_SEPARATED_T23:
        return run_single_slot(
            config,
            profiles,
            bids=bids,
            realization=realization,
            rounds_log=rounds_log,
            budget_override=t23_budget(config.num_agents, config.horizon),
            mechanism_label="explore-t23",
        )
    if kind is BaselineKind.ORACLE_ALLOCATION:
        return _run_oracle(config, profiles, realization, rounds_log)
    return _run_plain_ucb(config, profiles, bids, realization, rounds_log)


def _run_oracle(config, profiles, realization, rounds_log) -> RunResult:
    """Clairvoyant reference: always show the true-welfare maximizer, charge nothing."""
    winner = metrics.welfare_ranking(profiles)[0]
    horizon = config.horizon
    n_clicks = int(realization.intrinsic_clicks[winner - 1].sum())
    per_agent_utility = {p.id: 0.0 for p in profiles}
    per_agent_utility[winner] = profiles[winner - 1].valuation * n_clicks
    records = None
    if rounds_log != "none":
        records = [
            RoundRecord(
                round=t,
                phase=Phase.EXPLOITATION,
                allocation={1: winner},
                clicks={winner: int(realization.intrinsic_clicks[winner - 1, t - 1])},
                payments={winner: 0.0},
                delta_regret_increment=0.0,
                welfare_increment=metrics.welfare(profiles[winner - 1]),
            )
            for t in range(1, horizon + 1)
        ]
    summary = RunSummary(
        mechanism="oracle",
        num_agents=config.num_agents,
        num_slots=1,
        horizon=horizon,
        delta=config.delta,
        v_max=config.v_max,
        seed=realization.seed,
        exploration_budget=0,
        exploration_rounds_used=0,
        total_delta_regret=0.0,
        exploration_delta_regret=0.0,
        exploitation_delta_regret=0.0,
        total_standard_regret=0.0,
        total_revenue=0.0,
        total_welfare=horizon * metrics.welfare(profiles[winner - 1]),
        per_agent_utility=per_agent_utility,
        winners=(winner,),
        flags=(),
    )
    return RunResult(summary=summary, outcome=None, records=records)


def _run_plain_ucb(config, profiles, bids, realization, rounds_log) -> RunResult:
    """Non-truthful reference: re-pick argmax ucb * bid every round, learn forever, charge nothing.

    The first K rounds show each agent once so every index is defined.
    """
    bids_arr = bid_vector(profiles, bids, config)
    horizon = config.horizon
    num_agents = config.num_agents
    welfares = np.array([metrics.welfare(p) for p in profiles])
    gaps = float(welfares.max()) - welfares
    tolerated = metrics.delta_set(profiles, config.delta)
    delta_gaps = np.where([p.id not in tolerated for p in profiles], gaps, 0.0)

    state = LearnerState.fresh(num_agents, horizon)
    per_agent_utility = {p.id: 0.0 for p in profiles}
    delta_total = 0.0
    standard_total = 0.0
    welfare_total = 0.0
    records = [] if rounds_log != "none" else None
    for t in range(1, horizon + 1):
        if t <= num_agents:
            agent = t
        else:
            agent = int(np.argmax(state.ucb * bids_arr)) + 1
        click = int(realization.intrinsic_clicks[agent - 1, t - 1])
        state.record_pull(agent, float(click))
        state.round = t
        per_agent_utility[agent] += profiles[agent - 1].valuation * click
        delta_total += delta_gaps[agent - 1]
        standard_total += gaps[agent - 1]
        welfare_total += welfares[agent - 1]
        if records is not None:
            records.append(
                RoundRecord(
                    round=t,
                    phase=Phase.EXPLORATION,
                    allocation={1: agent},
                    clicks={agent: click},
                    payments={agent: 0.0},
                    delta_regret_increment=float(delta_gaps[agent - 1]),
                    welfare_increment=float(welfares[agent - 1]),
                )
            )
    summary = RunSummary(
        mechanism="plain-ucb",
        num_agents=num_agents,
        num_slots=1,
        horizon=horizon,
        delta=config.delta,
        v_max=config.v_max,
        seed=realization.seed,
        exploration_budget=horizon,
        exploration_rounds_used=horizon,
        total_delta_regret=float(delta_total),
        exploration_delta_regret=float(delta_total),
        exploitation_delta_regret=0.0,
        total_standard_regret=float(standard_total),
        total_revenue=0.0,
        total_welfare=float(welfare_total),
        per_agent_utility=per_agent_utility,
        winners=(),
        flags=("continual-learning",),
    )
    return RunResult(summary=summary, outcome=None, records=records)
