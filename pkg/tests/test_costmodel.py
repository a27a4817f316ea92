"""Operation accounting and the discrete-event cycle proxy.

Counting rules are cross-checked on a toy network small enough to tally by
hand; simulator invariants (DMA serialization, double-buffer closed form,
monotonicity) are asserted on the deployment architecture.
"""

import csv
import math

import numpy as np
import pytest

from spikedec.costmodel import (
    DEFAULT_SPIKE_RATES,
    STRATEGIES,
    AccountingRule,
    AnnConfig,
    MachineModel,
    access_ratio,
    compare_strategies,
    count_ops,
    simulate_inference,
    spike_counts_from_rates,
    write_report_csv,
    write_timeline_csv,
)
from spikedec.network import NetworkConfig, default_architecture

TOY = NetworkConfig(layer_sizes=(3, 4, 2), v_th=(0.4,))


def test_toy_counts_by_hand_baseline():
    report = count_ops(TOY, "snn-baseline")
    l1, l2 = report.layers
    # layer 1: dense 3x4 MACs + 4 membrane MACs
    assert l1.macs == 16 and l1.adds == 0
    # layer 2: binary input, 4x2 column adds + 2 membrane MACs
    assert l2.macs == 2 and l2.adds == 8
    # weights padded to 16 bits on the readout, 4 aux bytes per neuron
    assert l1.bytes_in == 4 * 3 * 1 + 4 * 4
    assert l2.bytes_in == 2 * 4 * 2 + 4 * 2
    assert report.total_dma_transfers == 4


def test_toy_counts_by_hand_sparse():
    report = count_ops(TOY, "snn-sparse", spike_counts=[2.5])
    l1, l2 = report.layers
    assert l1.macs == 16  # layer 1 unchanged: input is real-valued
    assert l2.adds == 2.5 * 2
    assert l2.bytes_in == 2.5 * (2 * 2)  # fractional mean columns, 16-bit rows
    assert l2.dma_transfers == 2.5


def test_mem_access_identity_everywhere():
    rule = AccountingRule()
    counts = spike_counts_from_rates(default_architecture(), DEFAULT_SPIKE_RATES)
    for strategy in STRATEGIES:
        report = count_ops(default_architecture(), strategy, counts)
        for layer in report.layers:
            assert layer.mem_accesses == 4 * layer.macs + 3 * layer.adds
        assert report.total_mem_accesses == pytest.approx(
            4 * report.total_macs + 3 * report.total_adds
        )


def test_custom_accounting_rule_is_honored():
    rule = AccountingRule(loads_per_mac=1, stores_per_mac=0, loads_per_add=1, stores_per_add=0)
    report = count_ops(TOY, "snn-baseline", rule=rule)
    assert report.total_mem_accesses == report.total_macs + report.total_adds


def test_sparse_bytes_scale_with_spikes_and_stay_below_baseline():
    config = default_architecture()
    baseline = count_ops(config, "snn-baseline")
    prev_bytes = -1.0
    for rate in (0.0, 0.1, 0.5, 1.0):
        counts = spike_counts_from_rates(config, (rate, rate, rate))
        sparse = count_ops(config, "snn-sparse", counts)
        hidden_bytes = sum(l.bytes_in for l in sparse.layers[1:])
        assert hidden_bytes > prev_bytes or rate == 0.0
        prev_bytes = hidden_bytes
        for ls, lb in zip(sparse.layers[1:], baseline.layers[1:]):
            assert ls.bytes_in <= lb.bytes_in + 1e-9
    # at 100% rates the weight columns match the baseline exactly; the
    # baseline block additionally stages 4 aux bytes per neuron
    full = spike_counts_from_rates(config, (1.0, 1.0, 1.0))
    sparse_full = count_ops(config, "snn-sparse", full)
    for ls, lb in zip(sparse_full.layers[1:], baseline.layers[1:]):
        out_dim = config.layer_sizes[ls.layer]
        assert ls.bytes_in == lb.bytes_in - 4 * out_dim


def test_zero_spikes_mean_no_column_traffic():
    config = default_architecture()
    report = count_ops(config, "snn-sparse", [0.0, 0.0, 0.0])
    for layer in report.layers[1:]:
        assert layer.adds == 0.0
        assert layer.bytes_in == 0.0
        assert layer.dma_transfers == 0.0
        assert layer.macs == config.layer_sizes[layer.layer]  # membranes only
    sim = simulate_inference(MachineModel(), config, "snn-sparse", [0.0, 0.0, 0.0])
    cols = [ev for ev in sim.timeline if ev.label.endswith(".col")]
    assert cols == []


def test_ann_counts_match_config():
    report = count_ops(TOY, "ann", ann=AnnConfig())
    assert report.total_macs == 529000
    assert report.total_mem_accesses == 4 * 529000
    assert report.total_bytes_in == 526000


def test_unknown_strategy_raises():
    with pytest.raises(ValueError, match="ann"):
        count_ops(TOY, "dense-magic")
    with pytest.raises(ValueError):
        simulate_inference(MachineModel(), TOY, "nope")


def test_spike_count_validation():
    with pytest.raises(ValueError):
        count_ops(TOY, "snn-sparse")  # counts required
    with pytest.raises(ValueError):
        count_ops(TOY, "snn-sparse", [1.0, 2.0])  # wrong length
    with pytest.raises(ValueError):
        count_ops(TOY, "snn-sparse", [5.0])  # exceeds layer size
    with pytest.raises(ValueError):
        spike_counts_from_rates(TOY, (1.5,))


def test_simulation_totals_equal_per_layer_sum():
    config = default_architecture()
    counts = spike_counts_from_rates(config, DEFAULT_SPIKE_RATES)
    for strategy in STRATEGIES:
        report = simulate_inference(MachineModel(), config, strategy, counts)
        assert report.total_cycles == pytest.approx(
            sum(l.cycles for l in report.layers)
        )
        assert report.end_to_end_cycles == pytest.approx(
            report.preamble_cycles + report.total_cycles
        )
        for layer in report.layers:
            assert layer.bottleneck in ("compute", "dma")


def test_dma_engine_is_serialized():
    config = default_architecture()
    counts = spike_counts_from_rates(config, DEFAULT_SPIKE_RATES)
    report = simulate_inference(MachineModel(), config, "snn-sparse", counts)
    dma = sorted(
        (ev for ev in report.timeline if ev.resource == "dma"),
        key=lambda ev: ev.start,
    )
    for a, b in zip(dma, dma[1:]):
        assert b.start >= a.end - 1e-9  # one transfer at a time


def test_cycles_monotone_in_spike_count():
    config = default_architecture()
    machine = MachineModel()
    prev = -1.0
    for spikes in (0, 20, 60, 120, 200, 256):
        counts = [float(spikes), 48.64, 23.04]
        report = simulate_inference(machine, config, "snn-sparse", counts)
        cycles = report.layers[1].cycles
        assert cycles >= prev
        prev = cycles


def test_double_buffer_closed_form_when_bandwidth_ample():
    # with fast DMA the second block's transfer hides entirely under the
    # first block's execution: layer time = tx(b1) + exec(b1) + exec(b2)
    machine = MachineModel(dma_bytes_per_cycle=256.0)
    config = default_architecture()
    report = simulate_inference(machine, config, "snn-baseline", None)
    layer1 = report.layers[0]
    bytes_total = 256 * (96 * 1 + 4)
    tx1 = machine.dma_queue_cost_cycles + (bytes_total / 2) / machine.dma_bytes_per_cycle
    exec_block = math.ceil((96 * 256 / 2) / (8 * 4)) + math.ceil((256 / 2) / (8 * 2))
    assert layer1.cycles == pytest.approx(tx1 + 2 * exec_block, abs=1e-6)
    assert layer1.bottleneck == "compute"


def test_simulation_is_deterministic():
    config = default_architecture()
    counts = spike_counts_from_rates(config, DEFAULT_SPIKE_RATES)
    a = simulate_inference(MachineModel(), config, "snn-sparse", counts)
    b = simulate_inference(MachineModel(), config, "snn-sparse", counts)
    assert [l.cycles for l in a.layers] == [l.cycles for l in b.layers]
    assert [(e.start, e.end, e.label) for e in a.timeline] == [
        (e.start, e.end, e.label) for e in b.timeline
    ]


def test_sparse_buffer_overflow_is_reported_not_raised():
    machine = MachineModel(sparse_buffer_bytes=2048)  # 8 columns of 256 B
    config = default_architecture()
    counts = [200.0, 5.0, 3.0]  # 200 columns into layer 2 overflow the buffer
    report = simulate_inference(machine, config, "snn-sparse", counts)
    assert 2 in report.overflow_layers
    assert 3 not in report.overflow_layers


def test_capacity_checks_raise_for_oversized_models():
    tiny_l2 = MachineModel(l2_bytes=1024)
    with pytest.raises(ValueError, match="L2"):
        simulate_inference(tiny_l2, default_architecture(), "snn-baseline", None)


def test_compare_strategies_ratios():
    config = default_architecture()
    counts = spike_counts_from_rates(config, DEFAULT_SPIKE_RATES)
    cmp = compare_strategies(MachineModel(), config, counts)
    assert set(cmp.reports) == set(STRATEGIES)
    sparse, base = cmp.reports["snn-sparse"], cmp.reports["snn-baseline"]
    assert cmp.mem_ratios["snn-sparse/snn-baseline"] == pytest.approx(
        access_ratio(sparse, base)
    )
    assert cmp.mem_ratios["snn-sparse/ann"] < 0.1  # ~12x fewer accesses
    assert cmp.cycle_ratios["snn-sparse/snn-baseline"] < 1.0


def test_report_and_timeline_csv(tmp_path):
    config = default_architecture()
    counts = spike_counts_from_rates(config, DEFAULT_SPIKE_RATES)
    reports = [
        simulate_inference(MachineModel(), config, s, counts) for s in STRATEGIES
    ]
    rpath = tmp_path / "report.csv"
    write_report_csv(reports, str(rpath))
    with open(rpath) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "strategy"
    assert len(rows) == 1 + sum(len(r.layers) for r in reports)
    tpath = tmp_path / "timeline.csv"
    write_timeline_csv(reports[-1], str(tpath))
    with open(tpath) as fh:
        trows = list(csv.reader(fh))
    assert trows[0] == ["start", "end", "resource", "label"]
    assert len(trows) > 5


def test_machine_model_validation():
    with pytest.raises(ValueError):
        MachineModel(worker_cores=0)
    with pytest.raises(ValueError):
        MachineModel(dma_queue_cost_cycles=-1.0)
    with pytest.raises(ValueError):
        AnnConfig(layer_macs=(10,), layer_params=(5, 5))
