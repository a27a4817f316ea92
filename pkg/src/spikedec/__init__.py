"""Spiking neural network toolkit for streaming finger-velocity decoding.

The package covers the full life of a decoder: float training with
surrogate gradients (:mod:`spikedec.training`), threshold-scaled batch
normalization and its fusion into layer weights (:mod:`spikedec.norm`),
fixed-point quantization and a portable model file (:mod:`spikedec.quantize`),
an event-driven sparse inference engine bit-exact against a dense reference
(:mod:`spikedec.engine`), and a deployment cost model for operation counts,
memory traffic and cycle estimates (:mod:`spikedec.costmodel`).
"""

from .data import (
    FeatureStream,
    Standardizer,
    load_stream,
    save_stream,
    synthetic_stream,
)
from .engine import DenseReference, SparseEngine
from .errors import DataError, NumericsError, SpikedecError
from .network import LayerParams, NetworkConfig, SNNetwork, default_architecture
from .norm import TdBNParams, fuse, tdbn_forward
from .quantize import (
    QuantizedModel,
    QuantSpec,
    export_model,
    footprint_report,
    import_model,
    quantize_model,
)
from .training import TrainableDecoder, TrainConfig, TrainResult, train

__all__ = [
    "FeatureStream",
    "Standardizer",
    "load_stream",
    "save_stream",
    "synthetic_stream",
    "DenseReference",
    "SparseEngine",
    "SpikedecError",
    "DataError",
    "NumericsError",
    "LayerParams",
    "NetworkConfig",
    "SNNetwork",
    "default_architecture",
    "TdBNParams",
    "fuse",
    "tdbn_forward",
    "QuantSpec",
    "QuantizedModel",
    "quantize_model",
    "export_model",
    "import_model",
    "footprint_report",
    "TrainableDecoder",
    "TrainConfig",
    "TrainResult",
    "train",
]
