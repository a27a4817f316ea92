"""Deployment cost model: operation accounting and a cycle-proxy simulator.

Three execution strategies of the same decoder are compared on a two-level
memory hierarchy (parameters resident in L2, execution out of L1):

* ``ann``: a dense reference network executed layer by layer with double
  buffering; every connection is a MAC.
* ``snn-baseline``: the spiking decoder without sparsity; layer 1 performs
  dense MACs on the real-valued input, later layers add full weight columns
  (binary input), every neuron spends one extra MAC on its membrane update,
  and every layer moves its full parameter block L2 to L1 in row blocks
  ahead of execution.
* ``snn-sparse``: like the baseline, but layers after the first transfer
  only the weight columns selected by incoming spikes. A worker core that
  detects a spike immediately queues a one-column DMA transfer for the next
  layer, so transfer setup shows up in the source layer's execution time
  while the bytes move concurrently through a single serialized DMA queue.

Memory accesses follow a fixed accounting rule (three loads and one store
per MAC, two loads and one store per ADD), so accesses = 4*MAC + 3*ADD.

The simulator is a deterministic discrete-event model, not cycle-accurate
silicon: compute cycles are ops divided over cores and SIMD lanes plus a
constant per-layer overhead, and DMA transfers occupy a single engine with a
per-transfer setup cost. Defaults are calibrated so the per-layer cycle
ordering of the measured system is reproduced, not its absolute counts.
Spike detections are assumed uniformly spread over the source layer's
execution window. The readout layer runs on the master core alone with
16-bit lanes, its weights padded to 16 bits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .network import NetworkConfig

__all__ = [
    "AccountingRule",
    "MachineModel",
    "AnnConfig",
    "LayerCost",
    "TimelineEvent",
    "CostReport",
    "ComparisonResult",
    "STRATEGIES",
    "DEFAULT_SPIKE_RATES",
    "spike_counts_from_rates",
    "count_ops",
    "simulate_inference",
    "compare_strategies",
    "access_ratio",
    "write_report_csv",
    "write_timeline_csv",
]

STRATEGIES = ("ann", "snn-baseline", "snn-sparse")

# Mean firing rates of the three spiking layers observed on validation data.
DEFAULT_SPIKE_RATES = (0.19, 0.19, 0.09)

# L1 bytes kept free for inputs, membranes and scratch when sizing weight
# blocks; the rest is split between the two double-buffer slots.
_L1_RESERVE_BYTES = 4096


@dataclass(frozen=True)
class AccountingRule:
    """Loads and stores charged per arithmetic operation."""

    loads_per_mac: int = 3
    stores_per_mac: int = 1
    loads_per_add: int = 2
    stores_per_add: int = 1

    def mem_accesses(self, macs: float, adds: float) -> float:
        return (self.loads_per_mac + self.stores_per_mac) * macs + (
            self.loads_per_add + self.stores_per_add
        ) * adds


@dataclass(frozen=True)
class MachineModel:
    """Execution resources of the target cluster."""

    worker_cores: int = 8
    simd_macs_per_cycle: int = 4  # 8-bit dot-product lanes per core
    simd_macs_per_cycle_16bit: int = 2  # membrane updates run at 16 bit
    simd_adds_per_cycle_8bit: int = 4
    simd_adds_per_cycle_16bit: int = 2
    l1_bytes: int = 128 * 1024
    l2_bytes: int = 1536 * 1024
    dma_bytes_per_cycle: float = 32.0
    dma_queue_cost_cycles: float = 4.0
    column_bytes: int = 256  # destination-address increment per queued column
    sparse_buffer_bytes: int = 48 * 1024
    layer_overhead_cycles: float = 20.0

    def __post_init__(self) -> None:
        for name in (
            "worker_cores",
            "simd_macs_per_cycle",
            "simd_macs_per_cycle_16bit",
            "simd_adds_per_cycle_8bit",
            "simd_adds_per_cycle_16bit",
            "l1_bytes",
            "l2_bytes",
            "dma_bytes_per_cycle",
            "column_bytes",
            "sparse_buffer_bytes",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dma_queue_cost_cycles < 0 or self.layer_overhead_cycles < 0:
            raise ValueError("cycle overheads must be non-negative")
        if self.l1_bytes <= _L1_RESERVE_BYTES:
            raise ValueError("l1_bytes must exceed the reserved scratch area")

    @property
    def block_budget_bytes(self) -> float:
        """Largest parameter block that still double-buffers in L1."""
        return (self.l1_bytes - _L1_RESERVE_BYTES) / 2.0


@dataclass(frozen=True)
class AnnConfig:
    """Dense reference network, parameterized by per-layer MACs and weights.

    The exact inner dimensions of the reference (a temporal-convolution
    front end plus three fully connected layers) are configuration, not
    hard-coded; the defaults reproduce its published totals of 529K MACs
    and 526K parameters.
    """

    layer_macs: tuple[int, ...] = (397416, 65536, 65536, 512)
    layer_params: tuple[int, ...] = (394416, 65536, 65536, 512)

    def __post_init__(self) -> None:
        if len(self.layer_macs) != len(self.layer_params):
            raise ValueError("layer_macs and layer_params must align")
        if any(m <= 0 for m in self.layer_macs + self.layer_params):
            raise ValueError("layer sizes must be positive")

    @property
    def total_macs(self) -> int:
        return sum(self.layer_macs)

    @property
    def params(self) -> int:
        return sum(self.layer_params)


@dataclass
class LayerCost:
    """One layer's share of an inference, under one strategy."""

    layer: int  # 1-based, matching hardware-report conventions
    macs: float
    adds: float
    mem_accesses: float
    bytes_in: float  # parameter bytes moved L2 -> L1
    dma_transfers: float
    cycles: float | None = None
    bottleneck: str | None = None  # "compute" or "dma", simulation only


@dataclass
class TimelineEvent:
    start: float
    end: float
    resource: str  # "dma", "cores", "master"
    label: str


@dataclass
class CostReport:
    strategy: str
    layers: list[LayerCost]
    overflow_layers: list[int] = field(default_factory=list)
    preamble_cycles: float = 0.0
    timeline: list[TimelineEvent] | None = None

    @property
    def total_macs(self) -> float:
        return sum(l.macs for l in self.layers)

    @property
    def total_adds(self) -> float:
        return sum(l.adds for l in self.layers)

    @property
    def total_mem_accesses(self) -> float:
        return sum(l.mem_accesses for l in self.layers)

    @property
    def total_bytes_in(self) -> float:
        return sum(l.bytes_in for l in self.layers)

    @property
    def total_dma_transfers(self) -> float:
        return sum(l.dma_transfers for l in self.layers)

    @property
    def total_cycles(self) -> float:
        """Sum of per-layer cycles; excludes the input/state preamble."""
        return sum(l.cycles or 0.0 for l in self.layers)

    @property
    def end_to_end_cycles(self) -> float:
        return self.preamble_cycles + self.total_cycles


def spike_counts_from_rates(
    config: NetworkConfig, rates: tuple[float, ...] | list[float]
) -> list[float]:
    """Mean spike counts per spiking layer from firing rates."""
    if len(rates) != config.n_spiking_layers:
        raise ValueError(f"need {config.n_spiking_layers} rates, got {len(rates)}")
    counts = []
    for rate, size in zip(rates, _spiking_sizes(config)):
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"firing rate {rate} outside [0, 1]")
        counts.append(rate * size)
    return counts


def _spiking_sizes(config: NetworkConfig) -> list[int]:
    return [
        config.layer_sizes[i + 1]
        for i in range(config.n_layers)
        if config.is_spiking(i)
    ]


def _weight_width(config: NetworkConfig, layer: int) -> int:
    """Bytes per stored weight: readout weights are padded to 16 bits."""
    return 1 if config.is_spiking(layer) else 2


def _check_spike_counts(config: NetworkConfig, spike_counts) -> list[float]:
    if spike_counts is None:
        raise ValueError("this strategy needs per-layer spike counts")
    counts = [float(c) for c in spike_counts]
    if len(counts) != config.n_spiking_layers:
        raise ValueError(
            f"need {config.n_spiking_layers} spike counts, got {len(counts)}"
        )
    for c, size in zip(counts, _spiking_sizes(config)):
        if not 0.0 <= c <= size:
            raise ValueError(f"spike count {c} outside [0, {size}]")
    return counts


def count_ops(
    config: NetworkConfig,
    strategy: str,
    spike_counts=None,
    rule: AccountingRule | None = None,
    ann: AnnConfig | None = None,
) -> CostReport:
    """Per-layer operation and traffic accounting for one inference.

    Spiking strategies charge one MAC per neuron for its membrane update in
    addition to the dense layer-1 MACs; the baseline counts every
    hidden-layer connection as an ADD while the sparse strategy only counts
    columns selected by incoming spikes. ``spike_counts`` are mean spikes
    per spiking layer and may be fractional.
    """
    rule = rule if rule is not None else AccountingRule()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    layers: list[LayerCost] = []
    if strategy == "ann":
        ann = ann if ann is not None else AnnConfig()
        for i, macs in enumerate(ann.layer_macs):
            layers.append(
                LayerCost(
                    layer=i + 1,
                    macs=float(macs),
                    adds=0.0,
                    mem_accesses=rule.mem_accesses(macs, 0.0),
                    bytes_in=float(ann.layer_params[i]),
                    dma_transfers=2.0,
                )
            )
        return CostReport(strategy=strategy, layers=layers)
    if strategy == "snn-sparse":
        counts = _check_spike_counts(config, spike_counts)
    incoming = 0.0  # spikes feeding the current layer (sparse strategy)
    spike_idx = 0
    for i in range(config.n_layers):
        out_dim, in_dim = config.layer_shape(i)
        width = _weight_width(config, i)
        param_bytes = float(out_dim * in_dim * width + 4 * out_dim)
        if i == 0:
            macs = float(in_dim * out_dim + out_dim)
            adds = 0.0
            bytes_in = param_bytes
            transfers = 2.0
        elif strategy == "snn-baseline":
            macs = float(out_dim)
            adds = float(in_dim * out_dim)
            bytes_in = param_bytes
            transfers = 2.0
        else:
            macs = float(out_dim)
            adds = incoming * out_dim
            bytes_in = incoming * (out_dim * width)
            transfers = incoming
        layers.append(
            LayerCost(
                layer=i + 1,
                macs=macs,
                adds=adds,
                mem_accesses=rule.mem_accesses(macs, adds),
                bytes_in=bytes_in,
                dma_transfers=transfers,
            )
        )
        if config.is_spiking(i):
            if strategy == "snn-sparse":
                incoming = counts[spike_idx]
            spike_idx += 1
    return CostReport(strategy=strategy, layers=layers)


def _compute_cycles(
    machine: MachineModel,
    on_master: bool,
    macs: float,
    adds: float,
    membranes: float,
) -> float:
    """Cycles for one block or layer segment on its assigned cores."""
    if on_master:
        cores = 1
        mac_lanes = machine.simd_macs_per_cycle_16bit
        add_lanes = machine.simd_adds_per_cycle_16bit
    else:
        cores = machine.worker_cores
        mac_lanes = machine.simd_macs_per_cycle
        add_lanes = machine.simd_adds_per_cycle_8bit
    cycles = 0.0
    if macs:
        cycles += math.ceil(macs / (cores * mac_lanes))
    if adds:
        cycles += math.ceil(adds / (cores * add_lanes))
    if membranes:
        cycles += math.ceil(membranes / (cores * machine.simd_macs_per_cycle_16bit))
    return cycles


def _check_capacity(
    machine: MachineModel,
    config: NetworkConfig,
    strategy: str,
    ann: AnnConfig,
) -> None:
    if strategy == "ann":
        total = float(ann.params)
        widest_row = max(p / 2.0 for p in ann.layer_params) / 64.0
    else:
        total = float(config.total_neurons * 2)
        widest_row = 0.0
        for i in range(config.n_layers):
            out_dim, in_dim = config.layer_shape(i)
            total += out_dim * (in_dim * _weight_width(config, i) + 4)
            widest_row = max(widest_row, in_dim * _weight_width(config, i) + 4.0)
    if total > machine.l2_bytes:
        raise ValueError(
            f"model needs {total:.0f} bytes of L2, machine has {machine.l2_bytes}"
        )
    if widest_row > machine.block_budget_bytes:
        raise ValueError("a single weight row does not fit the L1 block budget")
    if strategy == "snn-sparse" and machine.sparse_buffer_bytes > machine.l1_bytes:
        raise ValueError("sparse column buffer exceeds L1")


def simulate_inference(
    machine: MachineModel,
    config: NetworkConfig,
    strategy: str,
    spike_counts=None,
    ann: AnnConfig | None = None,
    rule: AccountingRule | None = None,
) -> CostReport:
    """Discrete-event timeline of one inference; fills per-layer cycles.

    ``spike_counts`` may be a sequence of per-spiking-layer counts or any
    object exposing one as ``spike_counts`` (an inference trace). Per-layer
    cycles run from the end of the previous layer's execution to the end of
    this layer's, so the input/state preamble is reported separately.
    Block transfers prefetch as early as their double-buffer slot allows;
    sparse column transfers are queued at their (evenly spread) detection
    times and serialized through the single DMA engine.
    """
    if hasattr(spike_counts, "spike_counts"):
        spike_counts = spike_counts.spike_counts
    report = count_ops(config, strategy, spike_counts, rule=rule, ann=ann)
    ann_cfg = ann if ann is not None else AnnConfig()
    counts: list[float] = []
    if strategy == "snn-sparse":
        counts = _check_spike_counts(config, spike_counts)
    _check_capacity(machine, config, strategy, ann_cfg)
    timeline: list[TimelineEvent] = []
    dma_free = 0.0

    def dma(earliest: float, nbytes: float, label: str, setup: float) -> float:
        nonlocal dma_free
        start = max(earliest, dma_free)
        end = start + setup + nbytes / machine.dma_bytes_per_cycle
        dma_free = end
        timeline.append(TimelineEvent(start, end, "dma", label))
        return end

    setup = machine.dma_queue_cost_cycles
    dma(0.0, float(config.layer_sizes[0]), "input", setup)
    if strategy != "ann":
        dma(0.0, float(config.total_neurons * 2), "membranes", setup)
    if strategy == "snn-sparse":
        aux = sum(4 * config.layer_sizes[i + 1] for i in range(1, config.n_layers))
        dma(0.0, float(aux), "state", setup)
    preamble_end = dma_free
    report.preamble_cycles = preamble_end

    n_layers = len(ann_cfg.layer_macs) if strategy == "ann" else config.n_layers
    barrier = preamble_end
    prev_exec_end = preamble_end
    slot_free = [preamble_end, preamble_end]
    source_window: tuple[float, float] | None = None
    spike_idx = 0
    for i in range(n_layers):
        entry = report.layers[i]
        use_columns = strategy == "snn-sparse" and i > 0
        on_master = strategy != "ann" and not config.is_spiking(i)
        emits = strategy == "snn-sparse" and config.is_spiking(i)
        issue_cost = (
            counts[spike_idx] * machine.dma_queue_cost_cycles / machine.worker_cores
            if emits
            else 0.0
        )
        dma_gated = False
        if not use_columns:
            if strategy == "ann":
                layer_bytes = float(ann_cfg.layer_params[i])
                total_macs = float(ann_cfg.layer_macs[i])
                total_adds = 0.0
                membranes = 0.0
            else:
                out_dim, in_dim = config.layer_shape(i)
                layer_bytes = float(
                    out_dim * (in_dim * _weight_width(config, i) + 4)
                )
                if i == 0:
                    total_macs = float(in_dim * out_dim)
                    total_adds = 0.0
                else:
                    total_macs = 0.0
                    total_adds = float(in_dim * out_dim)
                membranes = float(out_dim)
            n_blocks = max(2, math.ceil(layer_bytes / machine.block_budget_bytes))
            exec_prev = barrier
            first_start = None
            for k in range(n_blocks):
                tx_end = dma(
                    slot_free[k % 2],
                    layer_bytes / n_blocks,
                    f"layer{i + 1}.block{k + 1}",
                    setup,
                )
                block_cycles = (
                    _compute_cycles(
                        machine,
                        on_master,
                        total_macs / n_blocks,
                        total_adds / n_blocks,
                        membranes / n_blocks,
                    )
                    + issue_cost / n_blocks
                )
                start = max(tx_end, exec_prev)
                # the first block's transfer is pipeline fill, not a
                # bottleneck signal; only later blocks can gate compute
                if k > 0 and tx_end > exec_prev:
                    dma_gated = True
                if first_start is None:
                    first_start = start
                end = start + block_cycles
                timeline.append(
                    TimelineEvent(
                        start,
                        end,
                        "master" if on_master else "cores",
                        f"layer{i + 1}.exec{k + 1}",
                    )
                )
                slot_free[k % 2] = end
                exec_prev = end
            exec_start, exec_end = first_start, exec_prev
        else:
            incoming = counts[spike_idx - 1]
            n_cols = int(round(incoming))
            out_dim, _ = config.layer_shape(i)
            col_bytes = float(out_dim * _weight_width(config, i))
            if n_cols * machine.column_bytes > machine.sparse_buffer_bytes:
                report.overflow_layers.append(i + 1)
            last_dma = barrier
            if n_cols and source_window is not None:
                s0, s1 = source_window
                span = s1 - s0
                for k in range(n_cols):
                    detect = s0 + (k + 1) * span / (n_cols + 1)
                    last_dma = dma(detect, col_bytes, f"layer{i + 1}.col", 0.0)
            cycles = (
                _compute_cycles(
                    machine, on_master, 0.0, incoming * out_dim, float(out_dim)
                )
                + issue_cost
            )
            exec_start = max(barrier, last_dma)
            dma_gated = last_dma > barrier
            exec_end = exec_start + cycles
            timeline.append(
                TimelineEvent(
                    exec_start,
                    exec_end,
                    "master" if on_master else "cores",
                    f"layer{i + 1}.exec",
                )
            )
        entry.cycles = exec_end - prev_exec_end
        entry.bottleneck = "dma" if dma_gated else "compute"
        source_window = (exec_start, exec_end)
        prev_exec_end = exec_end
        barrier = exec_end + machine.layer_overhead_cycles
        if strategy != "ann" and config.is_spiking(i):
            spike_idx += 1
    report.timeline = timeline
    return report


@dataclass
class ComparisonResult:
    reports: dict[str, CostReport]
    mem_ratios: dict[str, float]
    cycle_ratios: dict[str, float]


def access_ratio(a: CostReport, b: CostReport) -> float:
    """Ratio of total memory accesses between two reports."""
    return a.total_mem_accesses / b.total_mem_accesses


def compare_strategies(
    machine: MachineModel,
    config: NetworkConfig,
    spike_counts,
    ann: AnnConfig | None = None,
    rule: AccountingRule | None = None,
) -> ComparisonResult:
    """Simulate every strategy on the same spike profile, with ratios."""
    reports = {
        s: simulate_inference(machine, config, s, spike_counts, ann=ann, rule=rule)
        for s in STRATEGIES
    }
    sparse = reports["snn-sparse"]
    mem_ratios = {
        "snn-sparse/snn-baseline": access_ratio(sparse, reports["snn-baseline"]),
        "snn-sparse/ann": access_ratio(sparse, reports["ann"]),
    }
    cycle_ratios = {
        "snn-sparse/snn-baseline": sparse.total_cycles
        / reports["snn-baseline"].total_cycles,
        "snn-sparse/ann": sparse.total_cycles / reports["ann"].total_cycles,
    }
    return ComparisonResult(
        reports=reports, mem_ratios=mem_ratios, cycle_ratios=cycle_ratios
    )


_REPORT_FIELDS = [
    "strategy",
    "layer",
    "macs",
    "adds",
    "mem_accesses",
    "bytes_in",
    "dma_transfers",
    "cycles",
    "bottleneck",
]


def write_report_csv(reports, path: str) -> None:
    """Write per-layer rows for one report or an iterable of reports."""
    if isinstance(reports, CostReport):
        reports = [reports]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_REPORT_FIELDS)
        for report in reports:
            for layer in report.layers:
                writer.writerow(
                    [
                        report.strategy,
                        layer.layer,
                        f"{layer.macs:.2f}",
                        f"{layer.adds:.2f}",
                        f"{layer.mem_accesses:.2f}",
                        f"{layer.bytes_in:.2f}",
                        f"{layer.dma_transfers:.2f}",
                        "" if layer.cycles is None else f"{layer.cycles:.2f}",
                        layer.bottleneck or "",
                    ]
                )


def write_timeline_csv(report: CostReport, path: str) -> None:
    if report.timeline is None:
        raise ValueError("report has no timeline; run simulate_inference")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["start", "end", "resource", "label"])
        for ev in report.timeline:
            writer.writerow([f"{ev.start:.3f}", f"{ev.end:.3f}", ev.resource, ev.label])
