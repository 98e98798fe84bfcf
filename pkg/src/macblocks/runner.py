"""Experiment orchestration: builtin scenarios, baseline comparison,
block-selection frequencies, the exhaustive sweep and report files."""
from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .agent import AgentCheckpoint, AgentState, BlockSelector, derive_seed
from .domain import (
    DEFAULT_BER,
    LOAD_LEVELS,
    BlockConfig,
    RewardSpec,
    Scenario,
    TrainingConfig,
    default_csma_ca_config,
)
from .logic import enumerate_valid, validate
from .simcore import DEFAULT_TIMING, Simulator, TimingParams


class BudgetExceededError(RuntimeError):
    pass


# (nodes, load label, noise) per builtin scenario
_BUILTIN_ROWS = (
    (5, "Low", False),
    (5, "Low", True),
    (15, "Average", False),
    (15, "Average", True),
    (20, "High", False),
    (20, "High", True),
    (50, "Saturated", False),
    (50, "Saturated", True),
)


def builtin_scenarios(duration_sec: float = 10.0, seed: int = 0) -> list:
    return [
        Scenario(
            node_count=nodes,
            offered_load_pkt_per_sec=LOAD_LEVELS[load],
            noise=noise,
            ber=DEFAULT_BER if noise else 0.0,
            duration_sec=duration_sec,
            seed=seed,
            name=f"S{i}-{nodes}-{load}-{'noise' if noise else 'clean'}",
        )
        for i, (nodes, load, noise) in enumerate(_BUILTIN_ROWS, start=1)
    ]


def join_ramp(start_nodes: int, end_nodes: int, every_sec: float, load: float,
              seed: int = 0, name: str = "") -> Scenario:
    """One node joins every ``every_sec`` seconds until ``end_nodes`` are present.

    The run lasts one interval past the last join.
    """
    joins = end_nodes - start_nodes
    schedule = tuple((every_sec * (k + 1), 1) for k in range(joins))
    return Scenario(start_nodes, load, duration_sec=every_sec * (joins + 1), seed=seed,
                    join_schedule=schedule, name=name)


def low_load_ramp(seed: int = 0) -> Scenario:
    return join_ramp(1, 15, 3.0, LOAD_LEVELS["Low"], seed, "low-load-ramp")


def high_load_ramp(seed: int = 0) -> Scenario:
    return join_ramp(25, 50, 2.0, LOAD_LEVELS["High"], seed, "high-load-ramp")


def seed_list(base: int, count: int) -> list:
    if count < 1:
        raise ValueError("need at least one seed")
    return [base + i for i in range(count)]


# -- policy rollouts ------------------------------------------------------

@dataclass
class Rollout:
    seed: int
    arm: str
    throughput_mbps: float
    curve: list  # (bucket start time, Mbps)
    configs: list = field(default_factory=list)


def run_policy(scenario: Scenario, seed: int, policy: Callable, epoch_sec: float,
               timing: TimingParams = DEFAULT_TIMING, arm: str = "",
               history_len: int = 15) -> Rollout:
    """Simulate ``scenario`` while ``policy(state) -> config`` re-picks the
    configuration every ``epoch_sec``."""
    config = default_csma_ca_config()
    sim = Simulator(config, scenario.with_seed(seed), timing)
    state = AgentState.initial(config, history_len)
    chosen = []
    t = 0.0
    last_bits = 0
    while t < sim.duration - 1e-12:
        config = policy(state)
        chosen.append(config)
        sim.set_config(config)
        end = min(t + epoch_sec, sim.duration)
        sim.run_until(end)
        bits = sim.stats.delivered_bits
        state = state.advance(config, (bits - last_bits) / (end - t) / 1e6)
        last_bits, t = bits, end
    stats = sim.snapshot()
    bucket = sim.bucket_sec
    curve = []
    for i, bits in enumerate(sim.delivered_by_bucket):
        start = i * bucket
        if start >= sim.duration - 1e-12:
            break
        width = min(bucket, sim.duration - start)
        curve.append((start, bits / width / 1e6))
    return Rollout(seed, arm, stats.avg_throughput_mbps, curve, chosen)


def fixed_policy(config: BlockConfig) -> Callable:
    return lambda state: config


def greedy_policy(agent: AgentCheckpoint) -> Callable:
    return lambda state: agent.actions[agent.greedy_action(state)]


@dataclass
class ComparisonReport:
    scenario: Scenario
    rollouts: list  # Rollout per (seed, arm)

    def arm(self, name: str) -> list:
        return [r for r in self.rollouts if r.arm == name]

    def summary(self) -> dict:
        out = {}
        for name in ("baseline", "agent"):
            vals = np.array([r.throughput_mbps for r in self.arm(name)])
            out[name] = {
                "mean_mbps": float(vals.mean()) if vals.size else 0.0,
                "std_mbps": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                "per_seed": {str(r.seed): r.throughput_mbps for r in self.arm(name)},
            }
        return out


def compare_baseline(scenario: Scenario, seeds: Sequence[int], agent: Optional[AgentCheckpoint],
                     timing: TimingParams = DEFAULT_TIMING,
                     epoch_sec: Optional[float] = None) -> ComparisonReport:
    """Default CSMA/CA against the agent's greedy choices on the same seeds."""
    if agent is None:
        raise ValueError("compare needs a trained agent checkpoint")
    epoch = epoch_sec or agent.training_config.sim_epoch_sec
    hist = agent.training_config.history_len
    baseline = fixed_policy(default_csma_ca_config())
    greedy = greedy_policy(agent)
    rollouts = []
    for seed in seeds:
        rollouts.append(run_policy(scenario, seed, baseline, epoch, timing, "baseline", hist))
        rollouts.append(run_policy(scenario, seed, greedy, epoch, timing, "agent", hist))
    return ComparisonReport(scenario, rollouts)


def bootstrap_mean_diff(a, b, n_boot: int = 10_000, seed: int = 0, paired: bool = True):
    """Bootstrap distribution of mean(a) - mean(b); returns (point, resampled array)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if paired:
        d = a - b
        idx = rng.integers(len(d), size=(n_boot, len(d)))
        return float(d.mean()), d[idx].mean(axis=1)
    ia = rng.integers(len(a), size=(n_boot, len(a)))
    ib = rng.integers(len(b), size=(n_boot, len(b)))
    return float(a.mean() - b.mean()), a[ia].mean(axis=1) - b[ib].mean(axis=1)


# -- block selection -----------------------------------------------------

BLOCK_FIELDS = ("backoff", "ack", "fragmentation", "aggregation", "rtsCts", "cwMin",
                "carrierSense", "dataRateMbps")


@dataclass
class SelectionFrequencyTable:
    repeats: int
    selections: list  # BlockConfig per repeat

    def block_counts(self) -> dict:
        counts = {name: Counter() for name in BLOCK_FIELDS}
        for cfg in self.selections:
            for name, value in cfg.to_dict().items():
                counts[name][_fmt_value(value)] += 1
        return counts

    def config_counts(self) -> Counter:
        return Counter(cfg.label() for cfg in self.selections)

    def count_where(self, predicate) -> int:
        return sum(1 for cfg in self.selections if predicate(cfg))


def _fmt_value(value) -> str:
    if value is None:
        return "Off"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def select_blocks(scenario: Scenario, repeats: int = 20,
                  training_config: Optional[TrainingConfig] = None,
                  reward_spec: Optional[RewardSpec] = None,
                  timing: Optional[TimingParams] = None, seed: int = 0,
                  progress: Optional[Callable] = None):
    """Train ``repeats`` independent agents and tabulate their final choices."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    picks, models = [], []
    for r in range(repeats):
        model = BlockSelector(training_config, reward_spec, timing, seed=derive_seed(seed, r))
        model.fit(scenario)
        picks.append(model.best_config_)
        models.append(model)
        if progress:
            progress(r, model)
    return SelectionFrequencyTable(repeats, picks), models


# -- exhaustive sweep ----------------------------------------------------

@dataclass(frozen=True)
class SweepBudget:
    max_configs: int = 4096
    max_seeds: int = 3
    max_sim_sec: float = 10.0

    @property
    def cap(self) -> float:
        return self.max_configs * self.max_seeds * self.max_sim_sec


@dataclass
class SweepRow:
    rank: int
    index: int
    config: BlockConfig
    mean_mbps: float
    per_seed: tuple


def _sweep_one(config, scenario, seeds, timing):
    return tuple(
        Simulator(config, scenario.with_seed(s), timing).run().avg_throughput_mbps for s in seeds
    )


def exhaustive_sweep(scenario: Scenario, seeds: Sequence[int],
                     timing: TimingParams = DEFAULT_TIMING,
                     budget: SweepBudget = SweepBudget(), configs=None,
                     n_jobs: int = 1) -> list:
    """Simulate every valid config on every seed; rank by mean throughput.

    Ties keep enumeration order, so the ranking is a total order.
    """
    configs = list(enumerate_valid() if configs is None else configs)
    seeds = list(seeds)
    cost = len(configs) * len(seeds) * scenario.duration_sec
    if cost > budget.cap:
        raise BudgetExceededError(
            f"sweep needs {len(configs)} configs x {len(seeds)} seeds x {scenario.duration_sec:g} s "
            f"= {cost:.0f} simulated config-seconds, budget is {budget.cap:.0f}"
        )
    if n_jobs == 1:
        results = [_sweep_one(c, scenario, seeds, timing) for c in configs]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_sweep_one)(c, scenario, seeds, timing) for c in configs
        )
    means = [math.fsum(r) / len(r) for r in results]
    order = sorted(range(len(configs)), key=lambda i: (-means[i], i))
    return [SweepRow(rank + 1, i, configs[i], means[i], results[i]) for rank, i in enumerate(order)]


# -- reports --------------------------------------------------------------

def fmt(x) -> str:
    """Numbers as 6 significant digits, locale independent."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.6g}"
    return str(x)


def write_csv(path, header: Sequence[str], rows) -> str:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return str(path)


def write_json(path, doc) -> str:
    try:
        with open(path, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return str(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(fmt(float(obj))) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


CURVE_HEADER = ("time_sec", "arm", "seed", "throughput_mbps")
COMPARISON_HEADER = ("seed", "arm", "throughput_mbps")
SELECTION_HEADER = ("block", "value", "count")
SWEEP_HEADER = ("rank", "index", "label", "mean_mbps", "per_seed_mbps")


def emit_reports(out_dir, comparison: Optional[ComparisonReport] = None,
                 selection: Optional[SelectionFrequencyTable] = None,
                 sweep: Optional[list] = None, summary: Optional[dict] = None) -> list:
    """Write whatever results are given; empty inputs give header-only files."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if comparison is not None:
        curve_rows = [
            (t, r.arm, r.seed, tp) for r in comparison.rollouts for t, tp in r.curve
        ]
        written.append(write_csv(os.path.join(out_dir, "throughput_vs_time.csv"),
                                 CURVE_HEADER, curve_rows))
        written.append(write_csv(os.path.join(out_dir, "comparison.csv"), COMPARISON_HEADER,
                                 [(r.seed, r.arm, r.throughput_mbps) for r in comparison.rollouts]))
    if selection is not None:
        counts = selection.block_counts()
        rows = [(name, value, n) for name in BLOCK_FIELDS for value, n in sorted(counts[name].items())]
        written.append(write_csv(os.path.join(out_dir, "selection_frequency.csv"),
                                 SELECTION_HEADER, rows))
        written.append(write_csv(os.path.join(out_dir, "selected_configs.csv"), ("label", "count"),
                                 sorted(selection.config_counts().items(), key=lambda kv: (-kv[1], kv[0]))))
    if sweep is not None:
        written.append(write_csv(
            os.path.join(out_dir, "sweep.csv"), SWEEP_HEADER,
            [(r.rank, r.index, r.config.label(), r.mean_mbps,
              ";".join(fmt(v) for v in r.per_seed)) for r in sweep],
        ))
    if summary is not None:
        written.append(write_json(os.path.join(out_dir, "summary.json"), summary))
    return written


def check_emitted_configs(configs) -> None:
    for cfg in configs:
        if not validate(cfg).valid:
            raise AssertionError(f"report contains invalid config {cfg.label()}")
