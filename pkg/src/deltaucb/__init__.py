"""Seeded simulator and property checks for tolerance-aware UCB auction mechanisms."""

from .core import (
    AgentProfile,
    AuctionConfig,
    ConfigError,
    LearnerState,
    Phase,
    RoundRecord,
    exploration_budget,
    validate_config,
    validate_profiles,
)
from .environment import (
    ClickRealization,
    draw_realization,
    dump_realization,
    load_realization,
    realized_click,
)
from .mechanism import SingleSlotOutcome, declare_winner, run_single_slot, ucb_pair
from .mechanism_multi import (
    MultiSlotOutcome,
    SlotModel,
    gammas_from_lambdas,
    multi_slot_payment,
    run_multi_slot,
)
from .metrics import RunResult, RunSummary, agent_utility, delta_set, welfare
from .strategy_lab import (
    BaselineKind,
    DeviationScenario,
    build_scenario,
    run_baseline,
    verify_dsic,
    verify_ir,
)

__version__ = "0.1.0"
