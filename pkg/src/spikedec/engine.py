"""Sparsity-aware integer inference engine.

Layer 1 sees a dense int8 frame and runs a conventional row-major
multiply-accumulate. Every later layer sees a binary spike vector, so its
input current is assembled by gathering the weight *columns* of the neurons
that fired and adding them up; weights for those layers are stored
column-major to make a column one contiguous block, and the readout layer's
columns are widened to int16 (its adds run at 16-bit). Membrane updates use
the shared fixed-point step from the quantization module, and state persists
across frames for streaming inference.

Every call emits an `InferenceTrace` with per-layer spike counts, gathered
column counts, and membrane saturation events, which is what the cost model
consumes. With `check_accumulators=True` the engine also replays each
column-gather as a running partial sum and counts excursions outside the
8-bit accumulator window (16-bit for the readout), the invariant the
narrow-SIMD deployment relies on.

`DenseReference` implements the same integer semantics with a full matrix
multiply per layer and no gathering; it exists to cross-check the sparse
path and shares nothing with it beyond the quantized model itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quantize import QuantizedModel, fixed_membrane_step, integrator_fixed_step

__all__ = [
    "InferenceTrace",
    "SparseEngine",
    "DenseReference",
    "decode_output",
    "spike_stats",
]


@dataclass
class InferenceTrace:
    """Per-frame instrumentation; one entry per layer."""

    spike_counts: list[int]
    columns_gathered: list[int]
    saturations: list[int]
    accumulator_overflows: list[int] | None = None


@dataclass
class _State:
    membranes: list[np.ndarray]
    spikes: list[np.ndarray]


class SparseEngine:
    """Stateful event-driven inference over a quantized model."""

    def __init__(self, model: QuantizedModel, check_accumulators: bool = False) -> None:
        self.model = model
        self.check_accumulators = check_accumulators
        cfg = model.config
        self._w_dense = model.weights[0].astype(np.int64)  # row-major, layer 1
        self._w_cols: list[np.ndarray] = []  # column-major, [in, out], layers 2..L
        for i in range(1, cfg.n_layers):
            dtype = np.int16 if not cfg.is_spiking(i) else np.int8
            self._w_cols.append(np.ascontiguousarray(model.weights[i].T.astype(dtype)))
        self._bias = [b.astype(np.int64) for b in model.bias]
        self._decay = [d.astype(np.int64) for d in model.decay]
        self.reset()

    def reset(self) -> None:
        sizes = self.model.config.layer_sizes[1:]
        self.state = _State(
            membranes=[np.zeros(n, dtype=np.int64) for n in sizes],
            spikes=[np.zeros(n, dtype=np.int64) for n in sizes],
        )

    def infer_frame(self, frame: np.ndarray) -> tuple[np.ndarray, InferenceTrace]:
        """Advance one frame; returns (readout codes, trace).

        `frame` is the already-quantized int8 input vector. For a spiking
        readout the returned codes are the output layer's spike bits.
        """
        cfg = self.model.config
        frame = np.asarray(frame)
        if frame.shape != (cfg.layer_sizes[0],):
            raise ValueError(
                f"frame shape {frame.shape}, expected ({cfg.layer_sizes[0]},)"
            )
        if np.any(np.abs(frame.astype(np.int64)) > 127):
            raise ValueError("input frame codes must fit int8")
        spec = self.model.spec
        trace = InferenceTrace(
            spike_counts=[0] * cfg.n_layers,
            columns_gathered=[0] * cfg.n_layers,
            saturations=[0] * cfg.n_layers,
            accumulator_overflows=[0] * cfg.n_layers if self.check_accumulators else None,
        )
        output: np.ndarray | None = None
        x = frame.astype(np.int64)
        for i in range(cfg.n_layers):
            if i == 0:
                current = self._w_dense @ x + self._bias[0]
            else:
                cols = np.flatnonzero(self.state.spikes[i - 1])
                trace.columns_gathered[i] = int(cols.size)
                gathered = self._w_cols[i - 1][cols]
                current = gathered.sum(axis=0, dtype=np.int64) + self._bias[i]
                if self.check_accumulators and cols.size:
                    limit = 32767 if not cfg.is_spiking(i) else 127
                    running = np.cumsum(gathered.astype(np.int64), axis=0)
                    trace.accumulator_overflows[i] = int((np.abs(running) > limit).sum())
            if cfg.is_spiking(i):
                u, sat = fixed_membrane_step(
                    self.state.membranes[i],
                    self.state.spikes[i],
                    current,
                    self._decay[i],
                    self.model.vth[i],
                    spec.decay_bits,
                    spec.membrane_bits,
                )
                spikes = (u >= self.model.vth[i]).astype(np.int64)
                self.state.membranes[i] = u
                self.state.spikes[i] = spikes
                trace.spike_counts[i] = int(spikes.sum())
                trace.saturations[i] = int(sat.sum())
                if i == cfg.n_layers - 1:  # spiking readout emits the bits
                    output = spikes.copy()
            else:
                u, sat = integrator_fixed_step(
                    self.state.membranes[i],
                    current,
                    self._decay[i],
                    spec.decay_bits,
                    spec.membrane_bits,
                )
                self.state.membranes[i] = u
                trace.saturations[i] = int(sat.sum())
                output = u.copy()
        assert output is not None
        return output, trace

    def run(self, frames: np.ndarray) -> tuple[np.ndarray, list[InferenceTrace]]:
        """Stream a [T, in] block of int8 frames without resetting in between."""
        outputs = []
        traces = []
        for frame in np.asarray(frames):
            out, trace = self.infer_frame(frame)
            outputs.append(out)
            traces.append(trace)
        return np.stack(outputs), traces


class DenseReference:
    """Dense fixed-point oracle: same integer semantics, no gathering.

    The membrane arithmetic is written out inline on purpose so that the
    sparse engine and this reference share as little code as possible.
    """

    def __init__(self, model: QuantizedModel) -> None:
        self.model = model
        self._weights = [w.astype(np.int64) for w in model.weights]
        self._bias = [b.astype(np.int64) for b in model.bias]
        self._decay = [d.astype(np.int64) for d in model.decay]
        self.reset()

    def reset(self) -> None:
        sizes = self.model.config.layer_sizes[1:]
        self.membranes = [np.zeros(n, dtype=np.int64) for n in sizes]
        self.spikes = [np.zeros(n, dtype=np.int64) for n in sizes]

    def infer_frame(self, frame: np.ndarray) -> np.ndarray:
        cfg = self.model.config
        spec = self.model.spec
        limit = (1 << (spec.membrane_bits - 1)) - 1
        x = np.asarray(frame).astype(np.int64)
        output: np.ndarray | None = None
        for i in range(cfg.n_layers):
            current = self._weights[i] @ x + self._bias[i]
            if cfg.is_spiking(i):
                vth = int(self.model.vth[i])
                raw = (
                    (self._decay[i] * (self.membranes[i] - self.spikes[i] * vth))
                    >> spec.decay_bits
                ) + current
                u = np.clip(raw, -limit, limit)
                s = (u >= vth).astype(np.int64)
                self.membranes[i] = u
                self.spikes[i] = s
                x = s
                output = s.copy()
            else:
                raw = ((self._decay[i] * self.membranes[i]) >> spec.decay_bits) + current
                u = np.clip(raw, -limit, limit)
                self.membranes[i] = u
                output = u.copy()
        assert output is not None
        return output

    def run(self, frames: np.ndarray) -> np.ndarray:
        return np.stack([self.infer_frame(f) for f in np.asarray(frames)])


def decode_output(model: QuantizedModel, codes: np.ndarray) -> np.ndarray:
    """Readout codes -> real (standardized) velocity units."""
    return np.asarray(codes, dtype=np.float64) / model.output_scale


def spike_stats(traces: list[InferenceTrace], model: QuantizedModel) -> dict:
    """Aggregate firing statistics over a run."""
    if not traces:
        raise ValueError("no traces")
    cfg = model.config
    counts = np.array([t.spike_counts for t in traces], dtype=np.float64)
    sizes = np.array(cfg.layer_sizes[1:], dtype=np.float64)
    mean_counts = counts.mean(axis=0)
    per_layer_rate = [
        float(mean_counts[i] / sizes[i]) if cfg.is_spiking(i) else 0.0
        for i in range(cfg.n_layers)
    ]
    totals = counts.sum(axis=1)
    saturations = np.array([t.saturations for t in traces], dtype=np.int64)
    return {
        "frames": len(traces),
        "mean_spikes_per_layer": mean_counts.tolist(),
        "rate_per_layer": per_layer_rate,
        "mean_total_spikes": float(totals.mean()),
        "max_total_spikes": int(totals.max()),
        "total_saturations": int(saturations.sum()),
    }
