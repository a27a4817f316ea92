"""Float reference implementation of the spiking decoder network.

The network is a feedforward stack of leaky integrate-and-fire (LIF) layers
with a non-spiking leaky-integrator output layer. Per time step, each layer
computes an input current

    i(t) = W @ x(t) + B

where x(t) is the previous layer's spike vector (or the real-valued input
frame for layer 1), then updates its membrane with reset-by-subtraction

    u(t) = decay * (u(t-1) - s(t-1) * v_th) + i(t)

using the layer's *own* previous spikes s(t-1), and fires s(t) = 1 wherever
u(t) - v_th >= 0 (firing exactly at threshold). The output layer never
spikes; its membrane

    u(t) = decay * u(t-1) + i(t)

is the decoded velocity itself. Decay factors are per-neuron values in
[0, 1]. State persists across `forward_step` calls so the network can stream
one frame at a time; call `reset_state` between sequences.

All arithmetic is float64. This module is the behavioral reference the
training graph and the integer engine are checked against, so the exact
expressions above are load-bearing: keep them in this form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetworkConfig",
    "LayerParams",
    "LayerState",
    "SpikeVector",
    "SNNetwork",
    "input_current",
    "spike_fn",
    "membrane_update",
    "output_update",
]


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description: layer widths and firing thresholds.

    `layer_sizes` includes the input width, e.g. [96, 256, 256, 256, 2].
    `v_th` holds one threshold per spiking layer. With
    `output_is_spiking=False` (the default) the last layer is a non-spiking
    integrator and `v_th` has len(layer_sizes) - 2 entries.
    """

    layer_sizes: tuple[int, ...]
    v_th: tuple[float, ...]
    output_is_spiking: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        object.__setattr__(self, "v_th", tuple(float(v) for v in self.v_th))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least an input width and one layer")
        if any(n <= 0 for n in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if len(self.v_th) != self.n_spiking_layers:
            raise ValueError(
                f"expected {self.n_spiking_layers} thresholds for "
                f"{self.n_layers} layers, got {len(self.v_th)}"
            )
        if any(v <= 0 for v in self.v_th):
            raise ValueError("thresholds must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_spiking_layers(self) -> int:
        return self.n_layers if self.output_is_spiking else self.n_layers - 1

    @property
    def total_neurons(self) -> int:
        return sum(self.layer_sizes[1:])

    def is_spiking(self, layer: int) -> bool:
        """True if layer index `layer` (0-based) emits spikes."""
        if not 0 <= layer < self.n_layers:
            raise IndexError(f"layer {layer} out of range for {self.n_layers} layers")
        return layer < self.n_spiking_layers

    def layer_shape(self, layer: int) -> tuple[int, int]:
        """(out, in) weight shape of layer `layer`."""
        return self.layer_sizes[layer + 1], self.layer_sizes[layer]


def default_architecture() -> NetworkConfig:
    """The deployed decoder: 96 -> 256 -> 256 -> 256 -> 2, threshold 0.4."""
    return NetworkConfig(layer_sizes=(96, 256, 256, 256, 2), v_th=(0.4, 0.4, 0.4))


@dataclass
class LayerParams:
    """Per-layer parameters: weights [out, in], bias [out], decay [out]."""

    weights: np.ndarray
    bias: np.ndarray
    decay: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.decay = np.asarray(self.decay, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        out_dim = self.weights.shape[0]
        if self.bias.shape != (out_dim,):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows {out_dim}"
            )
        if self.decay.shape != (out_dim,):
            raise ValueError(
                f"decay shape {self.decay.shape} does not match weight rows {out_dim}"
            )
        if np.any(self.decay < 0.0) or np.any(self.decay > 1.0):
            raise ValueError("decay factors must lie in [0, 1]")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class SpikeVector:
    """Binary spike vector. `bits` is a uint8 array of 0/1 values."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if not np.isin(bits, (0, 1)).all():
            raise ValueError("spike vector entries must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    @property
    def count(self) -> int:
        """Number of set bits (neurons that fired)."""
        return int(self.bits.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)

    def __len__(self) -> int:
        return self.bits.shape[0]


@dataclass
class LayerState:
    """Membrane potentials and last emitted spikes of one layer."""

    membrane: np.ndarray
    last_spikes: np.ndarray  # float64 0/1, kept in arithmetic form

    @classmethod
    def zeros(cls, n: int) -> "LayerState":
        return cls(membrane=np.zeros(n), last_spikes=np.zeros(n))


def input_current(params: LayerParams, inp: np.ndarray | SpikeVector) -> np.ndarray:
    """Weighted input current W @ inp + B.

    `inp` may be a real-valued vector (layer 1) or a SpikeVector; for binary
    input the result equals the sum of the weight columns selected by the set
    bits, plus the bias.
    """
    if isinstance(inp, SpikeVector):
        inp = inp.as_float()
    inp = np.asarray(inp, dtype=np.float64)
    if inp.shape != (params.in_dim,):
        raise ValueError(
            f"input shape {inp.shape} does not match layer input dim {params.in_dim}"
        )
    # The [None, :] expansion keeps the matmul on the same GEMM path the
    # batched training graph uses, so the two implementations agree bitwise.
    return (inp[None, :] @ params.weights.T)[0] + params.bias


def spike_fn(membrane: np.ndarray, v_th: float) -> SpikeVector:
    """Heaviside firing rule: spike wherever membrane - v_th >= 0."""
    fired = np.asarray(membrane) - v_th >= 0.0
    return SpikeVector(bits=fired.astype(np.uint8))


def membrane_update(
    state: LayerState, params: LayerParams, current: np.ndarray, v_th: float
) -> LayerState:
    """One LIF step with reset-by-subtraction; recomputes the spikes.

    The decayed term subtracts v_th from neurons that fired on the previous
    step before applying the leak, then the new input current is added and
    the firing rule applied to the fresh membrane.
    """
    u = params.decay * (state.membrane - state.last_spikes * v_th) + current
    spikes = spike_fn(u, v_th)
    return LayerState(membrane=u, last_spikes=spikes.as_float())


def output_update(
    state: LayerState, params: LayerParams, current: np.ndarray
) -> tuple[LayerState, np.ndarray]:
    """Non-spiking integrator step; the new membrane is the readout."""
    u = params.decay * state.membrane + current
    new_state = LayerState(membrane=u, last_spikes=np.zeros_like(u))
    return new_state, u


@dataclass
class SNNetwork:
    """A stateful decoder network: config, parameters, and layer states."""

    config: NetworkConfig
    layers: list[LayerParams]
    states: list[LayerState] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.layers) != self.config.n_layers:
            raise ValueError(
                f"expected {self.config.n_layers} layers, got {len(self.layers)}"
            )
        for i, layer in enumerate(self.layers):
            expected = self.config.layer_shape(i)
            if layer.weights.shape != expected:
                raise ValueError(
                    f"layer {i} weights shape {layer.weights.shape}, expected {expected}"
                )
        if not self.states:
            self.reset_state()

    def reset_state(self) -> None:
        """Zero all membranes and spike history (start of a new sequence)."""
        self.states = [
            LayerState.zeros(layer.out_dim) for layer in self.layers
        ]

    def forward_step(self, frame: np.ndarray) -> np.ndarray:
        """Run one frame through all layers; returns the output membrane.

        Spikes propagate within the step: layer l consumes layer l-1's
        spikes from this same frame. State is mutated in place.
        """
        frame = np.asarray(frame, dtype=np.float64)
        x: np.ndarray | SpikeVector = frame
        out: np.ndarray | None = None
        for i, layer in enumerate(self.layers):
            current = input_current(layer, x)
            if self.config.is_spiking(i):
                self.states[i] = membrane_update(
                    self.states[i], layer, current, self.config.v_th[i]
                )
                x = SpikeVector(bits=self.states[i].last_spikes.astype(np.uint8))
            else:
                self.states[i], out = output_update(self.states[i], layer, current)
                x = out
        if out is None:  # fully spiking network: readout is the last spike vector
            out = self.states[-1].last_spikes.copy()
        return out

    def output_step(self, layer: int, current: np.ndarray) -> np.ndarray:
        """Apply the integrator update to layer `layer`; errors if it spikes."""
        if self.config.is_spiking(layer):
            raise ValueError(f"layer {layer} is spiking; integrator update is invalid")
        self.states[layer], out = output_update(self.states[layer], self.layers[layer], current)
        return out

    def run(self, frames: np.ndarray) -> np.ndarray:
        """Stream a [T, in] frame sequence; returns [T, out] outputs."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != self.config.layer_sizes[0]:
            raise ValueError(
                f"frames must be [T, {self.config.layer_sizes[0]}], got {frames.shape}"
            )
        return np.stack([self.forward_step(f) for f in frames])

    def spike_state(self, layer: int) -> SpikeVector:
        return SpikeVector(bits=self.states[layer].last_spikes.astype(np.uint8))


def random_network(
    config: NetworkConfig,
    rng: np.random.Generator,
    weight_scale: float = 0.3,
    decay_range: tuple[float, float] = (0.55, 0.65),
) -> SNNetwork:
    """Draw a random network for tests and benchmarks."""
    layers = []
    for i in range(config.n_layers):
        out_dim, in_dim = config.layer_shape(i)
        layers.append(
            LayerParams(
                weights=rng.normal(0.0, weight_scale, size=(out_dim, in_dim))
                / np.sqrt(in_dim),
                bias=rng.normal(0.0, 0.05, size=out_dim),
                decay=rng.uniform(*decay_range, size=out_dim),
            )
        )
    return SNNetwork(config=config, layers=layers)
