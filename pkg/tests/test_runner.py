import csv

import numpy as np
import pytest

from macblocks.agent import AgentCheckpoint
from macblocks.domain import BlockConfig, Scenario, TrainingConfig, default_csma_ca_config
from macblocks.logic import action_space_fingerprint, enumerate_valid
from macblocks import neural
from macblocks.runner import (
    BudgetExceededError,
    SelectionFrequencyTable,
    SweepBudget,
    bootstrap_mean_diff,
    builtin_scenarios,
    compare_baseline,
    emit_reports,
    exhaustive_sweep,
    fixed_policy,
    fmt,
    high_load_ramp,
    join_ramp,
    low_load_ramp,
    run_policy,
    seed_list,
    select_blocks,
)


def test_builtin_scenarios():
    rows = builtin_scenarios()
    assert len(rows) == 8
    first, last = rows[0], rows[-1]
    assert (first.node_count, first.offered_load_pkt_per_sec, first.noise) == (5, 8.0, False)
    assert (last.node_count, last.offered_load_pkt_per_sec, last.noise) == (50, 470.0, True)
    assert last.ber == 1e-4 and first.ber == 0.0
    assert len({s.name for s in rows}) == 8


def test_join_ramps():
    low = low_load_ramp()
    assert low.node_count == 1 and len(low.join_schedule) == 14
    assert low.duration_sec == pytest.approx(45.0)
    high = high_load_ramp()
    assert high.node_count == 25 and sum(n for _, n in high.join_schedule) == 25
    ramp = join_ramp(2, 4, 1.5, 10.0)
    assert [t for t, _ in ramp.join_schedule] == [1.5, 3.0]


def test_seed_list():
    assert seed_list(7, 3) == [7, 8, 9]
    with pytest.raises(ValueError):
        seed_list(0, 0)


def _flat_agent(config_index=0):
    actions = enumerate_valid()
    params = neural.init_params([44, 4, len(actions)], seed=0)
    weights = list(params.weights)
    biases = list(params.biases)
    weights[-1] = np.zeros_like(weights[-1])
    b = np.zeros(len(actions))
    b[config_index] = 1.0
    biases[-1] = b
    params = neural.NNParams(params.layer_sizes, tuple(weights), tuple(biases))
    return AgentCheckpoint(params, TrainingConfig(sim_epoch_sec=0.5), action_space_fingerprint(actions), actions)


def test_compare_with_baseline_agent_gives_identical_arms():
    default_index = enumerate_valid().index(default_csma_ca_config())
    sc = Scenario(4, 100.0, duration_sec=2.0)
    report = compare_baseline(sc, [1, 2, 3], _flat_agent(default_index))
    assert len(report.rollouts) == 6
    summary = report.summary()
    assert summary["agent"]["per_seed"] == summary["baseline"]["per_seed"]
    point, boots = bootstrap_mean_diff([r.throughput_mbps for r in report.arm("agent")],
                                       [r.throughput_mbps for r in report.arm("baseline")], n_boot=200)
    assert point == 0 and (boots == 0).all()


def test_compare_needs_agent():
    with pytest.raises(ValueError):
        compare_baseline(Scenario(1, 8.0, duration_sec=1), [0], None)


def test_run_policy_curve_covers_run():
    roll = run_policy(Scenario(2, 100.0, duration_sec=2.5), 0, fixed_policy(default_csma_ca_config()), 0.5)
    assert [t for t, _ in roll.curve] == [0.0, 1.0, 2.0]
    assert len(roll.configs) == 5
    bits = sum(tp * min(1.0, 2.5 - t) for t, tp in roll.curve)
    assert bits / 2.5 == pytest.approx(roll.throughput_mbps)


def test_bootstrap_detects_clear_difference():
    a = np.arange(20) + 5.0
    b = np.arange(20) + 0.0
    point, boots = bootstrap_mean_diff(a, b, n_boot=1000)
    assert point == 5.0 and np.percentile(boots, 5) == 5.0
    point, boots = bootstrap_mean_diff(a, b, n_boot=1000, paired=False)
    assert point == 5.0 and np.percentile(boots, 5) > 0


def test_select_blocks_single_repeat():
    cfg = TrainingConfig(episodes=1, steps_per_episode=3, sim_epoch_sec=0.1, hidden_sizes=(8,))
    table, models = select_blocks(Scenario(3, 8.0), repeats=1, training_config=cfg)
    assert table.repeats == 1 and len(models) == 1
    for counter in table.block_counts().values():
        assert sum(counter.values()) == 1
    pick = table.selections[0]
    assert not (pick.fragmentation and pick.aggregation)
    with pytest.raises(ValueError):
        select_blocks(Scenario(3, 8.0), repeats=0)


def test_selection_counts():
    table = SelectionFrequencyTable(3, [
        default_csma_ca_config(),
        BlockConfig(backoff="None", ack="NoAck"),
        BlockConfig(backoff="None", ack="NoAck", aggregation=2000),
    ])
    counts = table.block_counts()
    assert counts["ack"] == {"NoAck": 2, "ImmediateAck": 1}
    assert counts["aggregation"] == {"Off": 2, "2000": 1}
    assert table.count_where(lambda c: c.ack == "NoAck") == 2


SUBSET = enumerate_valid()[:40]


def test_sweep_ranks_everything_deterministically():
    sc = Scenario(3, 100.0, duration_sec=1.0)
    rows = exhaustive_sweep(sc, [0, 1], configs=SUBSET)
    assert len(rows) == len(SUBSET)
    assert [r.rank for r in rows] == list(range(1, len(SUBSET) + 1))
    means = [r.mean_mbps for r in rows]
    assert means == sorted(means, reverse=True)
    again = exhaustive_sweep(sc, [0, 1], configs=SUBSET)
    assert [(r.index, r.mean_mbps) for r in again] == [(r.index, r.mean_mbps) for r in rows]
    parallel = exhaustive_sweep(sc, [0, 1], configs=SUBSET, n_jobs=2)
    assert [(r.index, r.per_seed) for r in parallel] == [(r.index, r.per_seed) for r in rows]


def test_sweep_top_beats_default():
    sc = Scenario(3, 470.0, duration_sec=2.0)
    configs = enumerate_valid()[::50] + [default_csma_ca_config()]
    rows = exhaustive_sweep(sc, [0], configs=configs)
    default_row = next(r for r in rows if r.config == default_csma_ca_config())
    assert rows[0].mean_mbps >= default_row.mean_mbps


def test_sweep_budget():
    with pytest.raises(BudgetExceededError, match="budget"):
        exhaustive_sweep(Scenario(3, 8.0, duration_sec=100.0), [0, 1, 2, 3])
    tiny = SweepBudget(max_configs=1, max_seeds=1, max_sim_sec=1.0)
    with pytest.raises(BudgetExceededError):
        exhaustive_sweep(Scenario(3, 8.0, duration_sec=1.0), [0], budget=tiny, configs=SUBSET[:2])


def test_fmt_six_significant_digits():
    assert fmt(6.252203) == "6.2522"
    assert fmt(1234567.0) == "1.23457e+06"
    assert fmt(0.1) == "0.1"
    assert fmt(3) == "3"
    assert fmt(True) == "true"


def test_reports(tmp_path):
    sc = Scenario(2, 100.0, duration_sec=1.0)
    rows = exhaustive_sweep(sc, [0], configs=SUBSET[:3])
    written = emit_reports(tmp_path, sweep=rows, summary={"x": 1.0 / 3})
    with open(tmp_path / "sweep.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["rank", "index", "label", "mean_mbps", "per_seed_mbps"]
    assert len(table) == 4
    assert (tmp_path / "summary.json").read_text().count("0.333333") == 1
    assert len(written) == 2


def test_empty_results_give_header_only_files(tmp_path):
    emit_reports(tmp_path, sweep=[], selection=SelectionFrequencyTable(0, []))
    assert (tmp_path / "sweep.csv").read_text() == "rank,index,label,mean_mbps,per_seed_mbps\n"
    assert (tmp_path / "selection_frequency.csv").read_text() == "block,value,count\n"
