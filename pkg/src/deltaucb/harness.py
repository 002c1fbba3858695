"""CLI entry point: seeded runs, experiment sweeps, and property checks.

Config files are flat ``key = value`` text; unknown keys are errors. Every
emitted file is a pure function of the config and seed — no timestamps, no
environment leakage — so identical invocations produce byte-identical
output. Exit codes: 0 success, 1 property violation, 2 config error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import AgentProfile, AuctionConfig, ConfigError, validate_config, validate_profiles
from .environment import draw_realization
from .mechanism import run_single_slot
from .mechanism_multi import run_multi_slot
from .strategy_lab import BaselineKind, build_scenario, run_baseline, verify_dsic, verify_ir
from . import metrics

_PROFILE_LAYER = 2
_INSTANCE_LAYER = 3

MECHANISMS = ("delta-ucb-single", "delta-ucb-multi", "oracle", "plain-ucb", "explore-t23")

ROUND_LOG_COLUMNS = (
    "t",
    "phase",
    "slot",
    "agent",
    "click",
    "payment",
    "delta_regret_cum",
    "regret_cum",
    "revenue_cum",
)

SUMMARY_COLUMNS = (
    "mechanism",
    "seed",
    "num_agents",
    "num_slots",
    "horizon",
    "delta",
    "v_max",
    "exploration_budget",
    "exploration_rounds_used",
    "total_delta_regret",
    "exploration_delta_regret",
    "exploitation_delta_regret",
    "total_standard_regret",
    "total_revenue",
    "total_welfare",
    "delta_regret_over_logT",
    "winners",
    "per_agent_utility",
    "flags",
)

_INT_KEYS = {"num_agents", "num_slots", "horizon", "seed", "sweep_seeds", "jobs"}
_FLOAT_KEYS = {"delta", "v_max"}
_FLOAT_LIST_KEYS = {
    "prominences",
    "lambdas",
    "ctrs",
    "valuations",
    "bids",
    "ctr_range",
    "valuation_range",
    "sweep_delta",
}
_INT_LIST_KEYS = {"sweep_horizon", "sweep_num_agents", "sweep_num_slots", "agents_choices"}
_STR_KEYS = {"mechanism"}
_KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _FLOAT_LIST_KEYS | _INT_LIST_KEYS | _STR_KEYS


@dataclass
class ExperimentSpec:
    """A parsed config file: base auction parameters plus experiment directives."""

    config: AuctionConfig
    mechanism: str
    ctrs: Optional[tuple] = None
    valuations: Optional[tuple] = None
    bids: Optional[tuple] = None
    ctr_range: tuple = (0.05, 0.95)
    valuation_range: Optional[tuple] = None
    sweep: dict = field(default_factory=dict)
    sweep_seeds: int = 1
    agents_choices: Optional[tuple] = None
    jobs: int = 1


def parse_config_file(path) -> ExperimentSpec:
    """Parse a flat key=value config file; any unknown key is an error."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in text.split("=", 1))
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config key: {key}")
        if key in raw:
            raise ConfigError(f"duplicate config key: {key}")
        raw[key] = value
    return spec_from_values(raw)


def _parse_value(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _FLOAT_LIST_KEYS:
            return tuple(float(x) for x in value.split(","))
        if key in _INT_LIST_KEYS:
            return tuple(int(x) for x in value.split(","))
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {value}") from err
    return value


def spec_from_values(raw: dict) -> ExperimentSpec:
    """Build an ExperimentSpec from already-split key/value strings."""
    values = {key: _parse_value(key, value) for key, value in raw.items()}
    for required in ("num_agents", "horizon", "delta"):
        if required not in values:
            raise ConfigError(f"missing required config key: {required}")
    config = AuctionConfig(
        num_agents=values["num_agents"],
        horizon=values["horizon"],
        delta=values["delta"],
        num_slots=values.get("num_slots", 1),
        v_max=values.get("v_max", 1.0),
        prominences=values.get("prominences"),
        lambdas=values.get("lambdas"),
        seed=values.get("seed", 0),
    )
    config = validate_config(config)
    mechanism = values.get(
        "mechanism", "delta-ucb-single" if config.num_slots == 1 else "delta-ucb-multi"
    )
    if mechanism not in MECHANISMS:
        raise ConfigError(f"unknown mechanism: {mechanism}")
    sweep = {}
    for axis in ("horizon", "delta", "num_agents", "num_slots"):
        key = f"sweep_{axis}"
        if key in values:
            sweep[axis] = tuple(values[key])
    spec = ExperimentSpec(
        config=config,
        mechanism=mechanism,
        ctrs=values.get("ctrs"),
        valuations=values.get("valuations"),
        bids=values.get("bids"),
        ctr_range=values.get("ctr_range", (0.05, 0.95)),
        valuation_range=values.get("valuation_range"),
        sweep=sweep,
        sweep_seeds=values.get("sweep_seeds", 1),
        agents_choices=values.get("agents_choices"),
        jobs=values.get("jobs", 1),
    )
    if spec.ctrs is not None and len(spec.ctrs) != config.num_agents:
        raise ConfigError("ctrs length must equal num_agents")
    if spec.valuations is not None and len(spec.valuations) != config.num_agents:
        raise ConfigError("valuations length must equal num_agents")
    if spec.bids is not None and len(spec.bids) != config.num_agents:
        raise ConfigError("bids length must equal num_agents")
    return spec


def build_profiles(spec: ExperimentSpec, config: AuctionConfig) -> list:
    """Agent profiles for one cell: explicit lists, or draws from the generator ranges."""
    if spec.ctrs is not None:
        if len(spec.ctrs) != config.num_agents:
            raise ConfigError("explicit ctrs cannot be combined with a num_agents sweep")
        valuations = spec.valuations or tuple(config.v_max for _ in spec.ctrs)
        bids = spec.bids or valuations
        profiles = [
            AgentProfile(id=i + 1, ctr=spec.ctrs[i], valuation=valuations[i], bid=bids[i])
            for i in range(config.num_agents)
        ]
    else:
        rng = np.random.default_rng(
            np.random.SeedSequence([int(config.seed), _PROFILE_LAYER])
        )
        lo, hi = spec.ctr_range
        vlo, vhi = spec.valuation_range or (0.1 * config.v_max, config.v_max)
        ctrs = rng.uniform(lo, hi, config.num_agents)
        valuations = rng.uniform(vlo, vhi, config.num_agents)
        profiles = [
            AgentProfile(id=i + 1, ctr=float(ctrs[i]), valuation=float(valuations[i]))
            for i in range(config.num_agents)
        ]
    return validate_profiles(profiles, config)


def dispatch_run(mechanism: str, config, profiles, realization=None, rounds_log="none"):
    """Run the named mechanism and return its RunResult."""
    if mechanism == "delta-ucb-single":
        return run_single_slot(config, profiles, realization=realization, rounds_log=rounds_log)
    if mechanism == "delta-ucb-multi":
        return run_multi_slot(config, profiles, realization=realization, rounds_log=rounds_log)
    if mechanism in tuple(kind.value for kind in BaselineKind):
        return run_baseline(
            BaselineKind(mechanism), config, profiles, realization=realization, rounds_log=rounds_log
        )
    raise ConfigError(f"unknown mechanism: {mechanism}")


def fmt_num(x: float) -> str:
    """Render a number with 12 significant digits; zero is all zeros."""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    if x == 0.0:
        return "0.000000000000"
    return np.format_float_positional(x, precision=12, unique=False, fractional=False, trim="k")


def round_log_rows(records, profiles, config):
    """Flatten records into one row per slot per round with running totals."""
    config = validate_config(config)
    prominences = config.prominences
    delta_cum = 0.0
    regret_cum = 0.0
    revenue_cum = 0.0
    for record in records:
        for slot in sorted(record.allocation):
            agent = record.allocation[slot]
            single = {slot: agent}
            delta_cum += metrics.delta_regret_increment(
                single, profiles, config.delta, prominences
            )
            regret_cum += metrics.standard_regret_increment(single, profiles, prominences)
            revenue_cum += record.payment_of(agent)
            yield {
                "t": record.round,
                "phase": record.phase.value,
                "slot": slot,
                "agent": agent,
                "click": record.click_of(agent),
                "payment": record.payment_of(agent),
                "delta_regret_cum": delta_cum,
                "regret_cum": regret_cum,
                "revenue_cum": revenue_cum,
            }


def emit_round_log(records, path, fmt, profiles, config) -> None:
    """Write the per-round log as CSV (12-significant-digit numbers) or JSONL."""
    rows = round_log_rows(records, profiles, config)
    lines = []
    if fmt == "csv":
        lines.append(",".join(ROUND_LOG_COLUMNS))
        for row in rows:
            lines.append(
                ",".join(
                    [
                        str(row["t"]),
                        row["phase"],
                        str(row["slot"]),
                        str(row["agent"]),
                        str(row["click"]),
                        fmt_num(row["payment"]),
                        fmt_num(row["delta_regret_cum"]),
                        fmt_num(row["regret_cum"]),
                        fmt_num(row["revenue_cum"]),
                    ]
                )
            )
    elif fmt == "jsonl":
        for row in rows:
            lines.append(json.dumps(row, sort_keys=True))
    else:
        raise ConfigError(f"unknown format: {fmt}")
    Path(path).write_text("\n".join(lines) + "\n")


def summary_row(summary) -> dict:
    log_horizon = math.log(summary.horizon) if summary.horizon > 1 else float("nan")
    utilities = ";".join(
        fmt_num(summary.per_agent_utility[agent]) for agent in sorted(summary.per_agent_utility)
    )
    return {
        "mechanism": summary.mechanism,
        "seed": summary.seed,
        "num_agents": summary.num_agents,
        "num_slots": summary.num_slots,
        "horizon": summary.horizon,
        "delta": summary.delta,
        "v_max": summary.v_max,
        "exploration_budget": summary.exploration_budget,
        "exploration_rounds_used": summary.exploration_rounds_used,
        "total_delta_regret": summary.total_delta_regret,
        "exploration_delta_regret": summary.exploration_delta_regret,
        "exploitation_delta_regret": summary.exploitation_delta_regret,
        "total_standard_regret": summary.total_standard_regret,
        "total_revenue": summary.total_revenue,
        "total_welfare": summary.total_welfare,
        "delta_regret_over_logT": summary.total_delta_regret / log_horizon
        if log_horizon == log_horizon and log_horizon > 0
        else float("nan"),
        "winners": ";".join(str(w) for w in summary.winners),
        "per_agent_utility": utilities,
        "flags": ";".join(summary.flags),
    }


def emit_summary(summaries, path, fmt) -> None:
    """Write one summary record per run/cell as CSV or JSONL."""
    rows = [summary_row(s) for s in summaries]
    lines = []
    if fmt == "csv":
        lines.append(",".join(SUMMARY_COLUMNS))
        for row in rows:
            rendered = []
            for col in SUMMARY_COLUMNS:
                value = row[col]
                rendered.append(fmt_num(value) if isinstance(value, float) else str(value))
            lines.append(",".join(rendered))
    elif fmt == "jsonl":
        for row in rows:
            lines.append(json.dumps(row, sort_keys=True))
    else:
        raise ConfigError(f"unknown format: {fmt}")
    Path(path).write_text("\n".join(lines) + "\n")


def derive_subseed(master_seed: int, cell: dict) -> int:
    """Sub-seed from the master seed and the cell's parameter *values*.

    Keyed by values rather than enumeration position, so reordering sweep
    axes (or the values inside an axis) never changes any cell's results.
    """
    canon = repr((int(master_seed), tuple(sorted((k, repr(v)) for k, v in cell.items()))))
    digest = hashlib.sha256(canon.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def sweep_cells(spec: ExperimentSpec) -> list:
    """Cartesian product of the sweep axes, in canonical order."""
    axes = dict(spec.sweep)
    axes["seed_index"] = tuple(range(spec.sweep_seeds))
    names = sorted(axes)
    cells = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    cells.sort(key=lambda cell: tuple(sorted((k, repr(v)) for k, v in cell.items())))
    return cells


def _cell_config(spec: ExperimentSpec, cell: dict) -> AuctionConfig:
    overrides = {k: v for k, v in cell.items() if k != "seed_index"}
    config = spec.config
    if "num_slots" in overrides and config.prominences is not None:
        wanted = overrides["num_slots"]
        if len(config.prominences) < wanted:
            raise ConfigError("prominences too short for num_slots sweep")
        config = replace(config, prominences=config.prominences[:wanted])
    config = replace(config, seed=derive_subseed(spec.config.seed, cell), **overrides)
    return validate_config(config)


def run_cell(spec: ExperimentSpec, cell: dict):
    """Run one sweep cell and return its summary."""
    config = _cell_config(spec, cell)
    profiles = build_profiles(spec, config)
    result = dispatch_run(spec.mechanism, config, profiles)
    return result.summary


def _run_cell_star(args):
    return run_cell(*args)


def _draw_instance(spec: ExperimentSpec, index: int):
    """Random instance for the property checks: sizes, rates, values, and competitor bids."""
    base = spec.config
    rng = np.random.default_rng(np.random.SeedSequence([int(base.seed), _INSTANCE_LAYER, index]))
    num_agents = base.num_agents
    if spec.agents_choices:
        num_agents = int(rng.choice(np.array(spec.agents_choices)))
        if num_agents < base.num_slots:
            raise ConfigError("agents_choices must all be at least num_slots")
    config = validate_config(
        replace(base, num_agents=num_agents, seed=derive_subseed(base.seed, {"instance": index}))
    )
    lo, hi = spec.ctr_range
    vlo, vhi = spec.valuation_range or (0.1 * config.v_max, config.v_max)
    ctrs = rng.uniform(lo, hi, num_agents)
    valuations = rng.uniform(vlo, vhi, num_agents)
    bids = rng.uniform(0.0, config.v_max, num_agents)
    profiles = [
        AgentProfile(id=i + 1, ctr=float(ctrs[i]), valuation=float(valuations[i]), bid=float(bids[i]))
        for i in range(num_agents)
    ]
    return config, validate_profiles(profiles, config)


def dsic_check(spec: ExperimentSpec, instances: int, out=None):
    """Sweep deviators and bid grids over random instances; returns the list of violations."""
    out = out if out is not None else sys.stdout
    findings = []
    worst = -math.inf
    scenarios = 0
    for index in range(instances):
        config, profiles = _draw_instance(spec, index)
        realization = draw_realization(config, profiles)
        for deviator in range(1, config.num_agents + 1):
            scenario = build_scenario(config, profiles, realization, deviator)
            report = verify_dsic(config, profiles, scenario)
            scenarios += 1
            worst = max(worst, report.worst_violation)
            if not report.holds:
                findings.append((index, report))
                print(
                    f"finding: instance={index} deviator={report.deviator} "
                    f"bid={report.witness_bid:.6g} round={report.witness_round} "
                    f"gain={report.worst_violation:.6g}",
                    file=out,
                )
    print(
        f"dsic-check: {instances} instances, {scenarios} scenarios, "
        f"worst per-round gain {worst:.3e}, violations {len(findings)}",
        file=out,
    )
    return findings


def ir_check(spec: ExperimentSpec, instances: int, out=None):
    """Check nonnegative truthful utilities over random instances; returns violations."""
    out = out if out is not None else sys.stdout
    findings = []
    worst = math.inf
    for index in range(instances):
        config, profiles = _draw_instance(spec, index)
        realization = draw_realization(config, profiles)
        report = verify_ir(config, profiles, realization)
        worst = min(worst, report.worst_utility)
        if not report.holds:
            findings.append((index, report))
            print(
                f"finding: instance={index} agent={report.witness_agent} "
                f"round={report.witness_round} utility={report.worst_utility:.6g}",
                file=out,
            )
    print(
        f"ir-check: {instances} instances, worst per-round utility {worst:.3e}, "
        f"violations {len(findings)}",
        file=out,
    )
    return findings


def _load_spec(args) -> ExperimentSpec:
    spec = parse_config_file(args.config)
    if getattr(args, "seed", None) is not None:
        spec.config = validate_config(replace(spec.config, seed=args.seed))
    return spec


def _cmd_validate(args) -> int:
    spec = _load_spec(args)
    build_profiles(spec, spec.config)
    print("config ok")
    return 0


def _cmd_run(args) -> int:
    spec = _load_spec(args)
    config = spec.config
    profiles = build_profiles(spec, config)
    realization = draw_realization(config, profiles)
    result = dispatch_run(
        spec.mechanism, config, profiles, realization=realization, rounds_log=args.rounds_log
    )
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        ext = "csv" if args.format == "csv" else "jsonl"
        emit_summary([result.summary], out_dir / f"summary.{ext}", args.format)
        if result.records is not None:
            emit_round_log(result.records, out_dir / f"rounds.{ext}", args.format, profiles, config)
    row = summary_row(result.summary)
    print(
        f"run: mechanism={row['mechanism']} seed={row['seed']} "
        f"delta_regret={fmt_num(row['total_delta_regret'])} "
        f"revenue={fmt_num(row['total_revenue'])} flags={row['flags'] or '-'}"
    )
    return 0


def _cmd_sweep(args) -> int:
    spec = _load_spec(args)
    cells = sweep_cells(spec)
    print(f"sweep grid: {len(cells)} cells", file=sys.stderr)
    jobs = args.jobs or spec.jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_cell_star, [(spec, cell) for cell in cells]))
    else:
        summaries = [run_cell(spec, cell) for cell in cells]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "jsonl"
    emit_summary(summaries, out_dir / f"summary.{ext}", args.format)
    print(f"sweep: wrote {len(summaries)} rows")
    return 0


def _cmd_dsic_check(args) -> int:
    spec = _load_spec(args)
    findings = dsic_check(spec, args.instances)
    return 1 if findings else 0


def _cmd_ir_check(args) -> int:
    spec = _load_spec(args)
    findings = ir_check(spec, args.instances)
    return 1 if findings else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deltaucb",
        description="Seeded auction-mechanism simulations and property checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="path to a key=value config file")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_run = sub.add_parser("run", help="one seeded simulation")
    common(p_run)
    p_run.add_argument("--out", default=None, help="directory for summary/rounds files")
    p_run.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_run.add_argument(
        "--rounds-log", choices=("none", "all", "exploit-only"), default="none", dest="rounds_log"
    )
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="cartesian experiment grid")
    common(p_sweep)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p_sweep.add_argument("--jobs", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_dsic = sub.add_parser("dsic-check", help="counterfactual truthfulness check")
    common(p_dsic)
    p_dsic.add_argument("--instances", type=int, default=10)
    p_dsic.set_defaults(func=_cmd_dsic_check)

    p_ir = sub.add_parser("ir-check", help="nonnegative truthful utility check")
    common(p_ir)
    p_ir.add_argument("--instances", type=int, default=10)
    p_ir.set_defaults(func=_cmd_ir_check)

    p_val = sub.add_parser("validate", help="config lint")
    common(p_val, seed=False)
    p_val.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    """CLI entry; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())
