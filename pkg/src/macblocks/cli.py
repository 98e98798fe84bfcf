"""Command line entry point (``macblocks``)."""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import replace

from . import __version__
from .agent import (
    BlockSelector,
    CheckpointMismatchError,
    TrainingDivergedError,
    load_agent,
    save_agent,
)
from .domain import (
    ConfigError,
    RewardSpec,
    Scenario,
    TrainingConfig,
    load_config,
    load_json,
    load_scenario,
)
from .logic import (
    InvalidConfigError,
    action_space_fingerprint,
    enumerate_valid,
    rules_to_json,
    validate,
)
from .runner import (
    BLOCK_FIELDS,
    BudgetExceededError,
    SweepBudget,
    builtin_scenarios,
    compare_baseline,
    emit_reports,
    exhaustive_sweep,
    greedy_policy,
    high_load_ramp,
    low_load_ramp,
    run_policy,
    seed_list,
    select_blocks,
    write_csv,
    write_json,
)
from .simcore import DEFAULT_TIMING, Simulator, TimingParams

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_IO = 4


def _scenario(arg: str, seed) -> Scenario:
    """A scenario file, a builtin name (S1..S8) or one of the join ramps."""
    named = {f"S{i}": s for i, s in enumerate(builtin_scenarios(), start=1)}
    named["low-ramp"] = low_load_ramp()
    named["high-ramp"] = high_load_ramp()
    if os.path.exists(arg):
        scenario = load_scenario(arg)
    elif arg in named:
        scenario = named[arg]
    else:
        raise FileNotFoundError(f"no scenario file or builtin scenario named {arg!r}")
    return scenario.with_seed(seed) if seed is not None else scenario


def _timing(args) -> TimingParams:
    return TimingParams.from_dict(load_json(args.timing)) if args.timing else DEFAULT_TIMING


def _training(args) -> TrainingConfig:
    cfg = TrainingConfig.from_dict(load_json(args.training)) if args.training else TrainingConfig()
    if getattr(args, "episodes", None) is not None:
        cfg = replace(cfg, episodes=args.episodes)
    return cfg


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _base_seed(args) -> int:
    return 0 if args.seed is None else args.seed


def cmd_validate(args) -> int:
    report = validate(load_config(args.config))
    doc = report.to_dict()
    print(json.dumps(doc, indent=2))
    if args.out:
        write_json(os.path.join(_out(args), "validation.json"), doc)
    return EXIT_OK if report.valid else EXIT_VALIDATION


def cmd_enumerate(args) -> int:
    rules = [] if args.no_rules else None
    actions = enumerate_valid(rules)
    out = _out(args)
    write_csv(os.path.join(out, "actions.csv"), ("index", "label", *BLOCK_FIELDS),
              [(i, c.label(), *c.to_dict().values()) for i, c in enumerate(actions)])
    write_json(os.path.join(out, "summary.json"), {
        "count": len(actions),
        "fingerprint": action_space_fingerprint(actions),
        "rules": [] if args.no_rules else rules_to_json(),
    })
    print(f"{len(actions)} configurations")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    scenario = _scenario(args.scenario, args.seed)
    out = _out(args)
    trace_cm = open(os.path.join(out, "trace.tsv"), "w") if args.trace else nullcontext()
    with trace_cm as trace:
        sim = Simulator(config, scenario, _timing(args), trace=trace)
        stats = sim.run()
    curve = [
        (i * sim.bucket_sec, "config", scenario.seed,
         bits / min(sim.bucket_sec, sim.duration - i * sim.bucket_sec) / 1e6)
        for i, bits in enumerate(sim.delivered_by_bucket)
        if i * sim.bucket_sec < sim.duration - 1e-12
    ]
    write_csv(os.path.join(out, "throughput_vs_time.csv"),
              ("time_sec", "arm", "seed", "throughput_mbps"), curve)
    write_json(os.path.join(out, "stats.json"), {
        "config": config.to_dict(),
        "scenario": scenario.to_dict(),
        "stats": stats.to_dict(),
    })
    print(f"throughput {stats.avg_throughput_mbps:.6g} Mbps")
    return EXIT_OK


def cmd_train(args) -> int:
    scenario = _scenario(args.scenario, args.seed)
    cfg = _training(args)
    reward = RewardSpec.parse(args.reward)
    model = BlockSelector(cfg, reward, _timing(args), seed=_base_seed(args)).fit(scenario)
    out = _out(args)
    save_agent(os.path.join(out, "checkpoint.json"), model.params_, cfg, model.actions_,
               model.best_config_, model.final_state_)
    rows = [
        (ep, step, a, tp, r)
        for ep, rec in enumerate(model.episodes_)
        for step, (a, tp, r) in enumerate(zip(rec.actions, rec.throughputs, rec.rewards))
    ]
    write_csv(os.path.join(out, "training_curve.csv"),
              ("episode", "step", "action", "throughput_mbps", "reward"), rows)
    write_json(os.path.join(out, "summary.json"), {
        "scenario": scenario.to_dict(),
        "reward": {"w0": reward.w0, "w1": reward.w1},
        "training_config": cfg.to_dict(),
        "best_action": model.best_action_,
        "best_config": model.best_config_.to_dict(),
        "fingerprint": model.fingerprint_,
    })
    print(f"best config: {model.best_config_.label()}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    agent = load_agent(args.checkpoint)
    scenario = _scenario(args.scenario, None)
    seeds = seed_list(_base_seed(args), args.seeds)
    epoch = agent.training_config.sim_epoch_sec
    rollouts = [run_policy(scenario, s, greedy_policy(agent), epoch, _timing(args), "agent",
                           agent.training_config.history_len) for s in seeds]
    out = _out(args)
    write_csv(os.path.join(out, "evaluation.csv"), ("seed", "throughput_mbps", "distinct_configs"),
              [(r.seed, r.throughput_mbps, len({c.label() for c in r.configs})) for r in rollouts])
    mean = sum(r.throughput_mbps for r in rollouts) / len(rollouts)
    write_json(os.path.join(out, "summary.json"), {
        "scenario": scenario.to_dict(),
        "seeds": seeds,
        "mean_throughput_mbps": mean,
        "best_config": agent.best_config.to_dict() if agent.best_config else None,
    })
    print(f"mean throughput {mean:.6g} Mbps over {len(seeds)} seeds")
    return EXIT_OK


def cmd_compare(args) -> int:
    agent = load_agent(args.checkpoint)
    scenario = _scenario(args.scenario, None)
    seeds = seed_list(_base_seed(args), args.seeds)
    report = compare_baseline(scenario, seeds, agent, _timing(args))
    summary = report.summary()
    summary["scenario"] = scenario.to_dict()
    summary["seeds"] = seeds
    emit_reports(_out(args), comparison=report, summary=summary)
    print(f"baseline {summary['baseline']['mean_mbps']:.6g} Mbps, "
          f"agent {summary['agent']['mean_mbps']:.6g} Mbps")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _scenario(args.scenario, None)
    seeds = seed_list(_base_seed(args), args.seeds)
    budget = SweepBudget(args.max_configs, args.max_seeds, args.max_sim_sec)
    rows = exhaustive_sweep(scenario, seeds, _timing(args), budget, n_jobs=args.jobs)
    emit_reports(_out(args), sweep=rows, summary={
        "scenario": scenario.to_dict(),
        "seeds": seeds,
        "count": len(rows),
        "top": [{"rank": r.rank, "config": r.config.to_dict(), "mean_mbps": r.mean_mbps}
                for r in rows[:10]],
    })
    print(f"best: {rows[0].config.label()} ({rows[0].mean_mbps:.6g} Mbps)")
    return EXIT_OK


def cmd_select_blocks(args) -> int:
    scenario = _scenario(args.scenario, None)
    table, _ = select_blocks(scenario, args.repeats, _training(args),
                             RewardSpec.parse(args.reward), _timing(args), seed=_base_seed(args))
    counts = table.block_counts()
    emit_reports(_out(args), selection=table, summary={
        "scenario": scenario.to_dict(),
        "repeats": table.repeats,
        "block_counts": {k: dict(sorted(v.items())) for k, v in counts.items()},
        "selections": [c.to_dict() for c in table.selections],
    })
    print(f"ack counts: {dict(counts['ack'])}")
    return EXIT_OK


def _common(suppress: bool) -> argparse.ArgumentParser:
    # the subcommand copy suppresses defaults so flags given before the
    # subcommand are not overwritten
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=d(None), help="base seed (default: 0 / scenario seed)")
    common.add_argument("--out", default=d("out"), help="output directory")
    common.add_argument("--timing", default=d(None), help="TimingParams JSON file")
    common.add_argument("--trace", action="store_true", default=d(False),
                        help="write an event trace (simulate)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macblocks", parents=[_common(False)],
                                     description="Composable MAC protocol blocks with a DQN selector")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("validate", cmd_validate, "check a block configuration against the rules")
    p.add_argument("config")
    p = add("enumerate", cmd_enumerate, "list the valid design space")
    p.add_argument("--no-rules", action="store_true", default=False)
    p = add("simulate", cmd_simulate, "run one configuration on one scenario")
    p.add_argument("config")
    p.add_argument("scenario")
    for name, func, help_text in (("train", cmd_train, "train an agent on a scenario"),
                                  ("select-blocks", cmd_select_blocks, "train repeatedly and count choices")):
        p = add(name, func, help_text)
        p.add_argument("scenario")
        p.add_argument("--reward", default="1,0", help="w0,w1")
        p.add_argument("--training", default=None, help="TrainingConfig JSON file")
        p.add_argument("--episodes", type=int, default=None)
        if name == "select-blocks":
            p.add_argument("--repeats", type=int, default=20)
    p = add("evaluate", cmd_evaluate, "greedy rollouts of a trained agent")
    p.add_argument("checkpoint")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, default=20)
    p = add("compare", cmd_compare, "agent against default CSMA/CA")
    p.add_argument("checkpoint")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, default=20)
    p = add("sweep", cmd_sweep, "simulate every valid configuration")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--max-configs", type=int, default=4096)
    p.add_argument("--max-seeds", type=int, default=3)
    p.add_argument("--max-sim-sec", type=float, default=10.0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidConfigError, CheckpointMismatchError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
