"""Fixed-point quantization of fused decoder networks.

Weights are quantized per layer with a single symmetric scale

    scale = (2^(weight_bits-1) - 1) / max|W|

(the full signed code range; a power-of-two variant 2^(weight_bits-2) is
available behind `QuantSpec.pow2_scale` for comparison). Because spikes are
binary, no rescaling is needed between layers: a layer's bias and firing
threshold share its weight scale, so integer comparisons against the
threshold are exact. Layer 1 is the exception, since its input is a
real-valued frame quantized to int8 at the fixed `input_scale`; its bias,
threshold, and membrane therefore live at weight_scale * input_scale.

Rounding is half-away-from-zero everywhere. Decay factors in [0, 1] carry no
weight scale; they become fractional codes round(decay * 2^decay_bits), and
the fixed-point membrane update multiplies wide and shifts back down:

    u' = saturate( ((decay_q * (u - s * vth_q)) >> decay_bits) + i_q )

with an arithmetic (floor) shift and saturation to the symmetric
membrane_bits range. The serialized model format is documented next to
`export_model`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericsError
from .network import LayerParams, NetworkConfig

__all__ = [
    "DEFAULT_INPUT_SCALE",
    "QuantSpec",
    "QuantizedModel",
    "round_half_away",
    "layer_scale",
    "quantize_values",
    "quantize_decay",
    "quantize_frame",
    "fixed_membrane_step",
    "fixed_membrane_update",
    "integrator_fixed_step",
    "quantize_model",
    "dequantize_weights",
    "dequantize_bias",
    "export_model",
    "import_model",
    "footprint_report",
]

DEFAULT_INPUT_SCALE = 32.0

_FILE_MAGIC = b"SNNQ"
_FILE_VERSION = 1
_FILE_HEADER = struct.Struct("<4sHB")  # magic, version, layer count
_LAYER_HEADER = struct.Struct("<HHBBd")  # out, in, weight_bits, flags, scale
_FLAG_SPIKING = 0x01


@dataclass(frozen=True)
class QuantSpec:
    """Bit widths and scales of the fixed-point pipeline.

    decay_bits is both the fractional width of the decay codes and the
    right-shift amount of the membrane update; a decay of exactly 1.0 maps
    to the code 2^decay_bits (stored in 16 bits regardless). input_scale is
    the frame quantization step for layer 1 and is a format-level constant:
    models exported to disk must use the default.
    """

    weight_bits: int = 4
    bias_bits: int = 16
    vth_bits: int = 16
    membrane_bits: int = 16
    decay_bits: int = 3
    input_scale: float = DEFAULT_INPUT_SCALE
    pow2_scale: bool = False

    def __post_init__(self) -> None:
        for name in ("weight_bits", "bias_bits", "vth_bits", "membrane_bits"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        if not 2 <= self.weight_bits <= 8:
            raise ValueError("weight_bits must be in [2, 8] (codes are stored as int8)")
        if self.bias_bits > 16 or self.vth_bits > 16:
            raise ValueError("bias and threshold codes are stored as int16")
        if self.membrane_bits <= self.weight_bits:
            raise ValueError("membrane_bits must exceed weight_bits")
        if self.membrane_bits > 32:
            raise ValueError("membrane_bits must be at most 32")
        if not 1 <= self.decay_bits <= 14:
            raise ValueError("decay_bits must be in [1, 14]")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")


def round_half_away(x: np.ndarray | float) -> np.ndarray | float:
    """Round to nearest integer with ties away from zero (63.5 -> 64, -63.5 -> -64)."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def _code_max(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def layer_scale(weights: np.ndarray, weight_bits: int, pow2_scale: bool = False) -> float:
    """Symmetric per-layer weight scale; errors on an all-zero matrix."""
    w_max = float(np.max(np.abs(weights)))
    if w_max == 0.0:
        raise NumericsError("cannot derive a scale for an all-zero weight matrix")
    numerator = float(1 << (weight_bits - 2)) if pow2_scale else float(_code_max(weight_bits))
    return numerator / w_max


def quantize_values(values: np.ndarray | float, scale: float, bits: int) -> np.ndarray:
    """round(value * scale) clamped to the symmetric signed range of `bits`."""
    q = round_half_away(np.asarray(values, dtype=np.float64) * scale)
    limit = _code_max(bits)
    return np.clip(q, -limit, limit).astype(np.int64)


def quantize_decay(decay: np.ndarray | float, decay_bits: int) -> np.ndarray:
    """Fractional decay codes in [0, 2^decay_bits]."""
    q = round_half_away(np.asarray(decay, dtype=np.float64) * float(1 << decay_bits))
    return np.clip(q, 0, 1 << decay_bits).astype(np.int64)


def quantize_frame(frames: np.ndarray, spec: QuantSpec) -> np.ndarray:
    """Quantize standardized input frames to int8 codes at input_scale."""
    q = round_half_away(np.asarray(frames, dtype=np.float64) * spec.input_scale)
    return np.clip(q, -127, 127).astype(np.int8)


def fixed_membrane_step(
    membrane: np.ndarray,
    spikes: np.ndarray,
    current: np.ndarray,
    decay_code: np.ndarray,
    vth_code: int,
    decay_bits: int,
    membrane_bits: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """One integer LIF update; returns (new membrane, saturation mask).

    The reset subtracts vth_code from last step's spiking neurons, the decay
    multiply happens at full width, the shift back down is arithmetic (floor
    for negatives), and the fresh input current is added before a single
    saturation to the symmetric membrane range.
    """
    u = np.asarray(membrane, dtype=np.int64)
    s = np.asarray(spikes, dtype=np.int64)
    lam = np.asarray(decay_code, dtype=np.int64)
    raw = ((lam * (u - s * int(vth_code))) >> decay_bits) + np.asarray(current, dtype=np.int64)
    limit = _code_max(membrane_bits)
    clipped = np.clip(raw, -limit, limit)
    return clipped, raw != clipped


def fixed_membrane_update(
    membrane,
    spikes,
    current,
    decay_code,
    vth_code: int,
    decay_bits: int,
    membrane_bits: int = 16,
):
    """`fixed_membrane_step` without the saturation mask; scalars stay scalar."""
    out, _ = fixed_membrane_step(
        membrane, spikes, current, decay_code, vth_code, decay_bits, membrane_bits
    )
    return int(out) if out.ndim == 0 else out


def integrator_fixed_step(
    membrane: np.ndarray,
    current: np.ndarray,
    decay_code: np.ndarray,
    decay_bits: int,
    membrane_bits: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """Non-spiking (readout) integer update: no reset, no threshold."""
    u = np.asarray(membrane, dtype=np.int64)
    lam = np.asarray(decay_code, dtype=np.int64)
    raw = ((lam * u) >> decay_bits) + np.asarray(current, dtype=np.int64)
    limit = _code_max(membrane_bits)
    clipped = np.clip(raw, -limit, limit)
    return clipped, raw != clipped


@dataclass(eq=False)
class QuantizedModel:
    """Integer parameters plus the scales needed to interpret them.

    `config.v_th` holds the *deployed* thresholds vth_code / combined_scale,
    which generally differ from the training-time floats in the last few
    decimals; they are exactly reconstructible from the serialized form.
    """

    config: NetworkConfig
    spec: QuantSpec
    weights: list[np.ndarray]  # int8 codes, [out, in] row-major
    bias: list[np.ndarray]  # int16 codes at the layer's combined scale
    decay: list[np.ndarray]  # int16 fractional codes
    vth: list[int | None]  # int16 code per spiking layer, None for the readout
    scales: tuple[float, ...]  # per-layer weight scales

    def combined_scale(self, layer: int) -> float:
        """Scale of the layer's bias/threshold/membrane domain."""
        if layer == 0:
            return self.scales[0] * self.spec.input_scale
        return self.scales[layer]

    @property
    def output_scale(self) -> float:
        return self.combined_scale(self.config.n_layers - 1)

    @property
    def n_layers(self) -> int:
        return self.config.n_layers

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedModel):
            return NotImplemented
        return (
            self.config == other.config
            and self.spec == other.spec
            and self.scales == other.scales
            and self.vth == other.vth
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.bias, other.bias))
            and all(np.array_equal(a, b) for a, b in zip(self.decay, other.decay))
        )


def quantize_model(
    layers: list[LayerParams], config: NetworkConfig, spec: QuantSpec
) -> QuantizedModel:
    """Quantize fused layer parameters into a deployable integer model.

    The layers must already have any normalization folded in; this function
    only discretizes. Raises NumericsError if a firing threshold quantizes
    below 1, because an integer threshold of 0 fires on a resting membrane.
    """
    if len(layers) != config.n_layers:
        raise ValueError(f"expected {config.n_layers} layers, got {len(layers)}")
    weights: list[np.ndarray] = []
    bias: list[np.ndarray] = []
    decay: list[np.ndarray] = []
    vth: list[int | None] = []
    scales: list[float] = []
    deployed_vth: list[float] = []
    for i, layer in enumerate(layers):
        if layer.weights.shape != config.layer_shape(i):
            raise ValueError(
                f"layer {i} weights {layer.weights.shape} does not match "
                f"config {config.layer_shape(i)}"
            )
        scale = layer_scale(layer.weights, spec.weight_bits, spec.pow2_scale)
        combined = scale * spec.input_scale if i == 0 else scale
        weights.append(
            quantize_values(layer.weights, scale, spec.weight_bits).astype(np.int8)
        )
        bias.append(quantize_values(layer.bias, combined, spec.bias_bits).astype(np.int16))
        decay.append(quantize_decay(layer.decay, spec.decay_bits).astype(np.int16))
        if config.is_spiking(i):
            code = int(quantize_values(config.v_th[i], combined, spec.vth_bits))
            if code < 1:
                raise NumericsError(
                    f"layer {i} threshold quantizes to {code}; the model is degenerate "
                    "at this scale"
                )
            vth.append(code)
            deployed_vth.append(code / combined)
        else:
            vth.append(None)
        scales.append(scale)
    out_config = NetworkConfig(
        layer_sizes=config.layer_sizes,
        v_th=tuple(deployed_vth),
        output_is_spiking=config.output_is_spiking,
    )
    return QuantizedModel(
        config=out_config,
        spec=spec,
        weights=weights,
        bias=bias,
        decay=decay,
        vth=vth,
        scales=tuple(scales),
    )


def dequantize_weights(model: QuantizedModel, layer: int) -> np.ndarray:
    return model.weights[layer].astype(np.float64) / model.scales[layer]


def dequantize_bias(model: QuantizedModel, layer: int) -> np.ndarray:
    return model.bias[layer].astype(np.float64) / model.combined_scale(layer)


def _check_exportable(model: QuantizedModel) -> None:
    spec = model.spec
    defaults = QuantSpec(weight_bits=spec.weight_bits, decay_bits=spec.decay_bits,
                         pow2_scale=spec.pow2_scale)
    for name in ("bias_bits", "vth_bits", "membrane_bits", "input_scale"):
        if getattr(spec, name) != getattr(defaults, name):
            raise ValueError(
                f"the model file format has no field for {name}; only the default "
                f"({getattr(defaults, name)}) can be serialized"
            )


def export_model(model: QuantizedModel, path: str) -> None:
    """Serialize to the binary model format (little-endian).

    Layout: magic "SNNQ", version u16, layer count u8; then per layer:
    out u16, in u16, weight_bits u8, flags u8 (bit 0 = spiking, bits 4..7 =
    decay_bits), weight scale f64, weights int8 row-major, bias int16,
    decay int16, and, for spiking layers only, the threshold code int16.
    """
    _check_exportable(model)
    buf = bytearray()
    buf += _FILE_HEADER.pack(_FILE_MAGIC, _FILE_VERSION, model.n_layers)
    for i in range(model.n_layers):
        out_dim, in_dim = model.config.layer_shape(i)
        spiking = model.config.is_spiking(i)
        flags = (_FLAG_SPIKING if spiking else 0) | (model.spec.decay_bits << 4)
        buf += _LAYER_HEADER.pack(out_dim, in_dim, model.spec.weight_bits, flags,
                                  model.scales[i])
        buf += np.ascontiguousarray(model.weights[i], dtype=np.int8).tobytes()
        buf += np.ascontiguousarray(model.bias[i], dtype="<i2").tobytes()
        buf += np.ascontiguousarray(model.decay[i], dtype="<i2").tobytes()
        if spiking:
            buf += struct.pack("<h", model.vth[i])
    with open(path, "wb") as fh:
        fh.write(buf)


def import_model(path: str) -> QuantizedModel:
    """Read a serialized model; exact inverse of `export_model`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _FILE_HEADER.size:
        raise DataError(f"{path}: too short for a model header")
    magic, version, n_layers = _FILE_HEADER.unpack_from(raw)
    if magic != _FILE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != _FILE_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    offset = _FILE_HEADER.size
    sizes: list[int] = []
    weight_bits: set[int] = set()
    decay_bits: set[int] = set()
    weights, bias, decay, vth, scales, spiking_flags = [], [], [], [], [], []
    for i in range(n_layers):
        if offset + _LAYER_HEADER.size > len(raw):
            raise DataError(f"{path}: truncated at layer {i} header")
        out_dim, in_dim, wb, flags, scale = _LAYER_HEADER.unpack_from(raw, offset)
        offset += _LAYER_HEADER.size
        spiking = bool(flags & _FLAG_SPIKING)
        weight_bits.add(wb)
        decay_bits.add(flags >> 4)
        need = out_dim * in_dim + 2 * out_dim + 2 * out_dim + (2 if spiking else 0)
        if offset + need > len(raw):
            raise DataError(f"{path}: truncated in layer {i} payload")
        w = np.frombuffer(raw, dtype=np.int8, count=out_dim * in_dim, offset=offset)
        offset += out_dim * in_dim
        b = np.frombuffer(raw, dtype="<i2", count=out_dim, offset=offset)
        offset += 2 * out_dim
        lam = np.frombuffer(raw, dtype="<i2", count=out_dim, offset=offset)
        offset += 2 * out_dim
        code: int | None = None
        if spiking:
            (code,) = struct.unpack_from("<h", raw, offset)
            offset += 2
        if sizes:
            if sizes[-1] != in_dim:
                raise DataError(
                    f"{path}: layer {i} expects {in_dim} inputs but the previous "
                    f"layer has {sizes[-1]} outputs"
                )
        else:
            sizes.append(in_dim)
        sizes.append(out_dim)
        weights.append(w.reshape(out_dim, in_dim).copy())
        bias.append(b.astype(np.int16))
        decay.append(lam.astype(np.int16))
        vth.append(code)
        scales.append(scale)
        spiking_flags.append(spiking)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    if len(weight_bits) != 1 or len(decay_bits) != 1:
        raise DataError(f"{path}: inconsistent per-layer bit widths")
    if any(spiking_flags[:-1]) and not all(spiking_flags[:-1]):
        raise DataError(f"{path}: non-spiking layer before the readout is unsupported")
    spec = QuantSpec(weight_bits=weight_bits.pop(), decay_bits=decay_bits.pop())
    output_is_spiking = spiking_flags[-1]
    deployed_vth = []
    for i, code in enumerate(vth):
        if code is not None:
            combined = scales[i] * spec.input_scale if i == 0 else scales[i]
            deployed_vth.append(code / combined)
    config = NetworkConfig(
        layer_sizes=tuple(sizes),
        v_th=tuple(deployed_vth),
        output_is_spiking=output_is_spiking,
    )
    return QuantizedModel(
        config=config,
        spec=spec,
        weights=weights,
        bias=bias,
        decay=decay,
        vth=vth,
        scales=tuple(scales),
    )


def footprint_report(model: QuantizedModel) -> dict[str, int]:
    """Deployment memory per parameter group, in bytes.

    Weights are 1 byte each (sub-8-bit codes are padded to int8 in memory),
    and biases, decays, and membrane state are 2 bytes per neuron; each
    spiking layer holds one 2-byte threshold.
    """
    sizes = model.config.layer_sizes
    neurons = model.config.total_neurons
    report = {
        "weight_bytes": int(sum(sizes[i + 1] * sizes[i] for i in range(model.n_layers))),
        "decay_bytes": 2 * neurons,
        "bias_bytes": 2 * neurons,
        "threshold_bytes": 2 * model.config.n_spiking_layers,
        "membrane_bytes": 2 * neurons,
    }
    report["total_bytes"] = sum(report.values())
    return report
