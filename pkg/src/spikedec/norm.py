"""Threshold-dependent batch normalization and its fusion into weights.

Pre-activations of a layer are normalized per channel with statistics pooled
over batch *and* time:

    y = v_th * (x - mean) / sqrt(var + eps) * gamma + beta

The v_th factor scales normalized activations relative to the firing
threshold of the layer the current feeds, which keeps spiking probability in
a workable range at init. After training, the whole affine transform folds
into the preceding layer's weights and bias (`fuse`), so inference never
normalizes anything:

    W' = v_th * gamma / sqrt(var + eps) * W      (row-wise)
    B' = v_th * gamma / sqrt(var + eps) * (B - mean) + beta

`fuse` is the single source of truth for that fold; the training graph and
the quantization exporter both call it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import LayerParams

__all__ = ["TdBNParams", "tdbn_forward", "fuse", "fold_coefficients"]


@dataclass
class TdBNParams:
    """Learnable scale/shift plus running statistics for one layer."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    v_th: float
    epsilon: float = 1e-5

    def __post_init__(self) -> None:
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        shapes = {
            self.gamma.shape,
            self.beta.shape,
            self.running_mean.shape,
            self.running_var.shape,
        }
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ValueError("all normalization parameters must share one 1-D shape")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.v_th <= 0.0:
            raise ValueError("v_th must be positive")
        if np.any(self.running_var < 0.0):
            raise ValueError("running variance must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def initial(cls, channels: int, v_th: float, epsilon: float = 1e-5) -> "TdBNParams":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            v_th=v_th,
            epsilon=epsilon,
        )


def tdbn_forward(
    x: np.ndarray,
    params: TdBNParams,
    training: bool,
    momentum: float = 0.1,
) -> np.ndarray:
    """Normalize a [batch, time, channels] block of pre-activations.

    Training mode pools mean/variance over every axis but the last (batch
    and time together, which is the point of the scheme) and folds them into
    the running statistics with EMA weight `momentum`; the running variance
    uses the unbiased estimate while normalization itself uses the biased
    one. Inference mode applies the running statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("expected at least [samples, channels]")
    if x.shape[-1] != params.channels:
        raise ValueError(
            f"input has {x.shape[-1]} channels, parameters have {params.channels}"
        )
    axes = tuple(range(x.ndim - 1))
    if training:
        n = int(np.prod(x.shape[:-1]))
        if n < 2:
            raise ValueError("need at least two pooled samples to normalize")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        params.running_mean = (1.0 - momentum) * params.running_mean + momentum * mean
        params.running_var = (
            1.0 - momentum
        ) * params.running_var + momentum * var * (n / (n - 1.0))
    else:
        mean = params.running_mean
        var = params.running_var
    scale = params.v_th * params.gamma / np.sqrt(var + params.epsilon)
    return (x - mean) * scale + params.beta


def fold_coefficients(bn: TdBNParams) -> np.ndarray:
    """Row coefficients d = v_th * gamma / sqrt(running_var + eps)."""
    return bn.v_th * bn.gamma / np.sqrt(bn.running_var + bn.epsilon)


def fuse(params: LayerParams, bn: TdBNParams) -> LayerParams:
    """Fold inference-mode normalization into the layer's weights and bias.

    The fused layer computes exactly what W @ x + B followed by the
    running-stat normalization would, so it can be quantized and deployed
    without any normalization arithmetic. Decay factors pass through.
    """
    if bn.channels != params.out_dim:
        raise ValueError(
            f"normalizer has {bn.channels} channels, layer has {params.out_dim} outputs"
        )
    d = fold_coefficients(bn)
    return LayerParams(
        weights=d[:, None] * params.weights,
        bias=d * (params.bias - bn.running_mean) + bn.beta,
        decay=params.decay.copy(),
    )
