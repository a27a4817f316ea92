"""Gradient training for the spiking decoder.

The forward graph unfolds a short window of frames (default 10), cascades
layers within each frame exactly like streaming inference, and treats the
binary firing rule as a box pulse in the backward pass: hard spikes forward,
a unit pseudo-derivative wherever the membrane sits within
``surrogate_halfwidth`` of the threshold. The first ``burn_in`` frames of
each window are excluded from the loss so freshly zeroed membranes do not
drag the regression targets.

Two forward modes share one backward skeleton:

* float mode normalizes every layer's pre-activation with statistics pooled
  over batch and time, applies fresh per-(frame, sample, channel) dropout to
  every layer input, and steps real-valued membranes;
* quantized mode folds the normalizers into the weights using frozen running
  statistics, rounds weights, biases, decays and thresholds to their integer
  codes, and steps the same shift-based fixed-point recurrence the deployed
  engine executes. Rounding, clipping and the floor shift pass gradients
  straight through (zeroed where a value clipped), so the optimizer keeps
  moving the underlying float parameters while the loss only ever sees
  deployable codes.

Regularization: Gaussian noise is added to raw feature windows before
standardization, with one std shared by all channels derived from the mean
per-channel std of the training split. Optimization is Adam with decoupled
weight decay applied to weight matrices only. Decay factors are clamped to
[0, 1] after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import (
    FeatureStream,
    Standardizer,
    decoder_score,
    inject_noise,
    make_windows,
    noise_std,
    rmse,
    split_stream,
)
from .network import LayerParams, NetworkConfig, default_architecture
from .norm import TdBNParams, fold_coefficients, fuse
from .quantize import (
    QuantSpec,
    layer_scale,
    quantize_decay,
    quantize_frame,
    quantize_model,
    quantize_values,
    round_half_away,
)

__all__ = [
    "TrainConfig",
    "TrainableDecoder",
    "AdamW",
    "StreamResult",
    "TrainResult",
    "unfolded_forward",
    "backward",
    "compute_loss",
    "streaming_forward",
    "evaluate",
    "train_epoch",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for window-unfolded training.

    ``epochs`` counts float epochs; ``qat_epochs`` adds a quantization-aware
    phase afterwards that fine-tunes integer codes with frozen normalizer
    statistics. The learning rate decays by ``lr_decay_factor`` every
    ``lr_decay_every`` epochs, counted globally across both phases.
    """

    unroll_steps: int = 10
    burn_in: int = 2
    epochs: int = 60
    qat_epochs: int = 0
    batch_size: int = 128
    learning_rate: float = 2e-3
    weight_decay: float = 1e-2
    lr_decay_every: int = 20
    lr_decay_factor: float = 0.1
    dropout_p: float = 0.2
    noise_ratio: float = 0.9
    decay_init: tuple[float, float] = (0.55, 0.65)
    surrogate_halfwidth: float = 0.5
    bn_momentum: float = 0.1
    bn_epsilon: float = 1e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    seed: int = 0
    train_fraction: float = 0.8
    target_val_r: float | None = None
    train_eval_frames: int = 4000
    quant: QuantSpec = QuantSpec()

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < self.unroll_steps:
            raise ValueError("need 0 <= burn_in < unroll_steps")
        if self.epochs < 0 or self.qat_epochs < 0 or self.epochs + self.qat_epochs < 1:
            raise ValueError("need at least one training epoch")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate <= 0.0 or self.lr_decay_every < 1:
            raise ValueError("learning rate schedule is degenerate")
        lo, hi = self.decay_init
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("decay_init bounds must satisfy 0 <= lo <= hi <= 1")
        if self.noise_ratio < 0.0:
            raise ValueError("noise_ratio must be non-negative")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


class TrainableDecoder:
    """Float parameters plus normalizer state, updated in place by training.

    Parameters live in a flat ``{name: array}`` dict (``layer0.weights``,
    ``layer0.bias``, ``layer0.decay``, ``layer0.gamma``, ``layer0.beta``, ...)
    so the optimizer can treat them uniformly; accessors below return live
    views. Running normalizer statistics are state, not parameters.
    """

    def __init__(
        self,
        config: NetworkConfig,
        params: dict[str, np.ndarray],
        running_mean: list[np.ndarray],
        running_var: list[np.ndarray],
        use_norm: bool = True,
        epsilon: float = 1e-5,
    ) -> None:
        self.config = config
        self.params = params
        self.running_mean = running_mean
        self.running_var = running_var
        self.use_norm = use_norm
        self.epsilon = epsilon

    @classmethod
    def initialize(
        cls,
        config: NetworkConfig,
        rng: np.random.Generator,
        decay_init: tuple[float, float] = (0.55, 0.65),
        use_norm: bool = True,
        epsilon: float = 1e-5,
    ) -> "TrainableDecoder":
        if config.output_is_spiking:
            raise ValueError("training expects a non-spiking integrator readout")
        params: dict[str, np.ndarray] = {}
        running_mean: list[np.ndarray] = []
        running_var: list[np.ndarray] = []
        for i in range(config.n_layers):
            out_dim, in_dim = config.layer_shape(i)
            params[f"layer{i}.weights"] = rng.normal(
                0.0, 1.0 / np.sqrt(in_dim), size=(out_dim, in_dim)
            )
            params[f"layer{i}.bias"] = np.zeros(out_dim)
            params[f"layer{i}.decay"] = rng.uniform(*decay_init, size=out_dim)
            params[f"layer{i}.gamma"] = np.ones(out_dim)
            params[f"layer{i}.beta"] = np.zeros(out_dim)
            running_mean.append(np.zeros(out_dim))
            running_var.append(np.ones(out_dim))
        return cls(config, params, running_mean, running_var, use_norm, epsilon)

    def weights(self, i: int) -> np.ndarray:
        return self.params[f"layer{i}.weights"]

    def bias(self, i: int) -> np.ndarray:
        return self.params[f"layer{i}.bias"]

    def decay(self, i: int) -> np.ndarray:
        return self.params[f"layer{i}.decay"]

    def gamma(self, i: int) -> np.ndarray:
        return self.params[f"layer{i}.gamma"]

    def beta(self, i: int) -> np.ndarray:
        return self.params[f"layer{i}.beta"]

    def layer_v_th(self, i: int) -> float:
        """Threshold scaling the layer's normalizer.

        The non-spiking readout has no threshold of its own, so its
        normalizer borrows the last spiking layer's.
        """
        if self.config.is_spiking(i):
            return self.config.v_th[i]
        return self.config.v_th[self.config.n_spiking_layers - 1]

    def bn_params(self, i: int) -> TdBNParams:
        return TdBNParams(
            gamma=self.gamma(i),
            beta=self.beta(i),
            running_mean=self.running_mean[i],
            running_var=self.running_var[i],
            v_th=self.layer_v_th(i),
            epsilon=self.epsilon,
        )

    def raw_layer(self, i: int) -> LayerParams:
        return LayerParams(
            weights=self.weights(i), bias=self.bias(i), decay=self.decay(i)
        )

    def fused_layers(self) -> list[LayerParams]:
        """Inference parameters with normalization folded in (running stats)."""
        if not self.use_norm:
            return [self.raw_layer(i) for i in range(self.config.n_layers)]
        return [
            fuse(self.raw_layer(i), self.bn_params(i))
            for i in range(self.config.n_layers)
        ]

    def clamp_decays(self) -> None:
        for i in range(self.config.n_layers):
            d = self.decay(i)
            np.clip(d, 0.0, 1.0, out=d)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _dropout_mask(rng: np.random.Generator, shape: tuple, p: float) -> np.ndarray:
    return (rng.random(shape) >= p).astype(np.float64) / (1.0 - p)


def _quantize_layer(decoder: TrainableDecoder, i: int, spec: QuantSpec) -> dict:
    """Integer codes and straight-through bookkeeping for one layer.

    Folds the normalizer with frozen running statistics (same expressions as
    ``norm.fuse``), derives the layer scale from the folded weights, and
    records pass-through masks: a gradient only flows to a value whose code
    did not clip.
    """
    w = decoder.weights(i)
    b = decoder.bias(i)
    lam = decoder.decay(i)
    if decoder.use_norm:
        bn = decoder.bn_params(i)
        d = fold_coefficients(bn)
        wf = d[:, None] * w
        bf = d * (b - bn.running_mean) + bn.beta
        denom = np.sqrt(bn.running_var + bn.epsilon)
        r_mean = bn.running_mean
        vbn = bn.v_th
    else:
        d = np.ones(w.shape[0])
        wf, bf = w, b
        denom = np.ones(w.shape[0])
        r_mean = np.zeros(w.shape[0])
        vbn = 1.0
    ws = layer_scale(wf, spec.weight_bits, spec.pow2_scale)
    scale = ws * spec.input_scale if i == 0 else ws
    w_limit = float((1 << (spec.weight_bits - 1)) - 1)
    b_limit = float((1 << (spec.bias_bits - 1)) - 1)
    lam_top = float(1 << spec.decay_bits)
    wq = quantize_values(wf, ws, spec.weight_bits).astype(np.float64)
    bq = quantize_values(bf, scale, spec.bias_bits).astype(np.float64)
    lamq = quantize_decay(lam, spec.decay_bits).astype(np.float64)
    wmask = (np.abs(round_half_away(wf * ws)) <= w_limit).astype(np.float64)
    bmask = (np.abs(round_half_away(bf * scale)) <= b_limit).astype(np.float64)
    lraw = round_half_away(lam * lam_top)
    lmask = ((lraw >= 0.0) & (lraw <= lam_top)).astype(np.float64)
    vthq = None
    if decoder.config.is_spiking(i):
        vthq = int(quantize_values(decoder.config.v_th[i], scale, spec.vth_bits))
    return {
        "d": d,
        "denom": denom,
        "r_mean": r_mean,
        "vbn": vbn,
        "ws": ws,
        "scale": scale,
        "wq": wq,
        "bq": bq,
        "lamq": lamq,
        "vthq": vthq,
        "wmask": wmask,
        "bmask": bmask,
        "lmask": lmask,
    }


def unfolded_forward(
    decoder: TrainableDecoder,
    frames: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
    training: bool = False,
    mode: str = "float",
    smooth_tau: float | None = None,
) -> tuple[np.ndarray, list[dict]]:
    """Run a [T, B, channels] window batch through the unfolded network.

    Returns ``(predictions [T, B, outputs], caches)``; the caches carry what
    ``backward`` needs. ``smooth_tau`` replaces the hard firing rule with a
    sigmoid of that temperature in both passes (float mode only), which makes
    the whole graph differentiable for finite-difference checks.
    """
    if mode not in ("float", "quantized"):
        raise ValueError(f"unknown forward mode {mode!r}")
    if smooth_tau is not None and mode != "float":
        raise ValueError("smooth firing is only defined for the float mode")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[2] != decoder.config.layer_sizes[0]:
        raise ValueError(
            f"expected [steps, batch, {decoder.config.layer_sizes[0]}] frames, "
            f"got {frames.shape}"
        )
    if training and cfg.dropout_p > 0.0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    spec = cfg.quant
    mem_limit = float((1 << (spec.membrane_bits - 1)) - 1)
    shift_div = float(1 << spec.decay_bits)
    n_steps, batch = frames.shape[0], frames.shape[1]
    caches: list[dict] = []
    x = frames
    preds: np.ndarray | None = None
    for i in range(decoder.config.n_layers):
        spiking = decoder.config.is_spiking(i)
        mask = None
        xd = x
        if training and cfg.dropout_p > 0.0:
            mask = _dropout_mask(rng, x.shape, cfg.dropout_p)
            xd = x * mask
        cache: dict = {"mode": mode, "mask": mask}
        lam = decoder.decay(i)
        if mode == "float":
            w, b = decoder.weights(i), decoder.bias(i)
            a = (xd.reshape(-1, xd.shape[2]) @ w.T + b).reshape(n_steps, batch, -1)
            if decoder.use_norm:
                if training:
                    pooled = n_steps * batch
                    mean_v = a.mean(axis=(0, 1))
                    var_v = a.var(axis=(0, 1))
                    mom = cfg.bn_momentum
                    decoder.running_mean[i] = (
                        (1.0 - mom) * decoder.running_mean[i] + mom * mean_v
                    )
                    decoder.running_var[i] = (1.0 - mom) * decoder.running_var[
                        i
                    ] + mom * var_v * (pooled / (pooled - 1.0))
                else:
                    mean_v = decoder.running_mean[i]
                    var_v = decoder.running_var[i]
                std_v = np.sqrt(var_v + decoder.epsilon)
                xhat = (a - mean_v) / std_v
                y = xhat * (decoder.layer_v_th(i) * decoder.gamma(i)) + decoder.beta(i)
                cache.update(xhat=xhat, std=std_v)
            else:
                y = a
                cache.update(xhat=None, std=None)
            cache["dropped"] = xd
            u = np.empty_like(y)
            r = np.empty_like(y)
            if spiking:
                v_th = decoder.config.v_th[i]
                s = np.empty_like(y)
                surr = np.empty_like(y)
                u_prev = np.zeros((batch, y.shape[2]))
                s_prev = np.zeros((batch, y.shape[2]))
                for t in range(n_steps):
                    r_t = u_prev - s_prev * v_th
                    u_t = lam * r_t + y[t]
                    if smooth_tau is not None:
                        s_t = _sigmoid((u_t - v_th) / smooth_tau)
                        surr_t = s_t * (1.0 - s_t) / smooth_tau
                    else:
                        s_t = (u_t - v_th >= 0.0).astype(np.float64)
                        surr_t = (
                            np.abs(u_t - v_th) < cfg.surrogate_halfwidth
                        ).astype(np.float64)
                    r[t], u[t], s[t], surr[t] = r_t, u_t, s_t, surr_t
                    u_prev, s_prev = u_t, s_t
                cache.update(u=u, spikes=s, surr=surr, resets=r)
                x = s
            else:
                u_prev = np.zeros((batch, y.shape[2]))
                for t in range(n_steps):
                    r[t] = u_prev
                    u[t] = lam * u_prev + y[t]
                    u_prev = u[t]
                cache.update(u=u, spikes=None, surr=None, resets=r)
                preds = u
        else:
            q = _quantize_layer(decoder, i, spec)
            if i == 0:
                codes = round_half_away(xd * spec.input_scale)
                xq = np.clip(codes, -127.0, 127.0)
            else:
                xq = xd
            a = (xq.reshape(-1, xq.shape[2]) @ q["wq"].T + q["bq"]).reshape(
                n_steps, batch, -1
            )
            cache.update(q=q, dropped=xq)
            u = np.empty_like(a)
            r = np.empty_like(a)
            sat = np.empty_like(a)
            lamq = q["lamq"]
            if spiking:
                vthq = float(q["vthq"])
                s = np.empty_like(a)
                surr = np.empty_like(a)
                half = cfg.surrogate_halfwidth * q["scale"]
                u_prev = np.zeros((batch, a.shape[2]))
                s_prev = np.zeros((batch, a.shape[2]))
                for t in range(n_steps):
                    r_t = u_prev - s_prev * vthq
                    raw = np.floor(lamq * r_t / shift_div) + a[t]
                    u_t = np.clip(raw, -mem_limit, mem_limit)
                    s_t = (u_t - vthq >= 0.0).astype(np.float64)
                    r[t], u[t], s[t] = r_t, u_t, s_t
                    sat[t] = (raw == u_t).astype(np.float64)
                    surr[t] = (np.abs(u_t - vthq) < half).astype(np.float64) / q["scale"]
                    u_prev, s_prev = u_t, s_t
                cache.update(u=u, spikes=s, surr=surr, resets=r, sat=sat)
                x = s
            else:
                u_prev = np.zeros((batch, a.shape[2]))
                for t in range(n_steps):
                    r[t] = u_prev
                    raw = np.floor(lamq * u_prev / shift_div) + a[t]
                    u[t] = np.clip(raw, -mem_limit, mem_limit)
                    sat[t] = (raw == u[t]).astype(np.float64)
                    u_prev = u[t]
                cache.update(u=u, spikes=None, surr=None, resets=r, sat=sat)
                preds = u / q["scale"]
        caches.append(cache)
    if preds is None:
        raise ValueError("network has no integrator readout to regress on")
    return preds, caches


def compute_loss(
    preds: np.ndarray, targets: np.ndarray, burn_in: int
) -> tuple[float, np.ndarray]:
    """Mean squared error over post-burn-in frames, plus its gradient."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"prediction shape {preds.shape} != target {targets.shape}")
    if not 0 <= burn_in < preds.shape[0]:
        raise ValueError("burn-in swallows the whole window")
    diff = preds[burn_in:] - targets[burn_in:]
    count = diff.size
    loss = float((diff * diff).sum() / count)
    grad = np.zeros_like(preds)
    grad[burn_in:] = 2.0 * diff / count
    return loss, grad


def _spiking_backward_float(
    cache: dict, g_spikes: np.ndarray, lam: np.ndarray, v_th: float
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse the LIF recurrence; returns (grad wrt drive y, grad wrt decay)."""
    u = cache["u"]
    surr = cache["surr"]
    resets = cache["resets"]
    g_y = np.empty_like(u)
    g_lam = np.zeros(u.shape[2])
    carry = np.zeros_like(u[0])  # d loss / d u[t+1]
    for t in range(u.shape[0] - 1, -1, -1):
        # u[t+1] = lam * (u[t] - s[t] * v_th) + y[t+1]
        g_s = g_spikes[t] - (lam * v_th) * carry
        g_u = g_s * surr[t] + lam * carry
        g_y[t] = g_u
        g_lam += (g_u * resets[t]).sum(axis=0)
        carry = g_u
    return g_y, g_lam


def _output_backward_float(
    cache: dict, g_out: np.ndarray, lam: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    u = cache["u"]
    resets = cache["resets"]
    g_y = np.empty_like(u)
    g_lam = np.zeros(u.shape[2])
    carry = np.zeros_like(u[0])
    for t in range(u.shape[0] - 1, -1, -1):
        g_u = g_out[t] + lam * carry
        g_y[t] = g_u
        g_lam += (g_u * resets[t]).sum(axis=0)
        carry = g_u
    return g_y, g_lam


def _spiking_backward_quantized(
    cache: dict, g_spikes: np.ndarray, shift_div: float
) -> tuple[np.ndarray, np.ndarray]:
    """Reverse the fixed-point recurrence with straight-through floor/clip."""
    q = cache["q"]
    surr = cache["surr"]
    sat = cache["sat"]
    resets = cache["resets"]
    vthq = float(q["vthq"])
    lam_eff = q["lamq"] / shift_div
    g_a = np.empty_like(surr)
    g_lamq = np.zeros(surr.shape[2])
    carry = np.zeros_like(surr[0])  # d loss / d resets[t+1]
    for t in range(surr.shape[0] - 1, -1, -1):
        g_s = g_spikes[t] - vthq * carry
        g_u = g_s * surr[t] + carry
        g_pre = g_u * sat[t]
        g_a[t] = g_pre
        g_lamq += (g_pre * resets[t]).sum(axis=0) / shift_div
        carry = g_pre * lam_eff
    return g_a, g_lamq


def _output_backward_quantized(
    cache: dict, g_out: np.ndarray, shift_div: float
) -> tuple[np.ndarray, np.ndarray]:
    q = cache["q"]
    sat = cache["sat"]
    resets = cache["resets"]
    lam_eff = q["lamq"] / shift_div
    g_a = np.empty_like(sat)
    g_lamq = np.zeros(sat.shape[2])
    carry = np.zeros_like(sat[0])
    for t in range(sat.shape[0] - 1, -1, -1):
        g_u = g_out[t] / q["scale"] + carry
        g_pre = g_u * sat[t]
        g_a[t] = g_pre
        g_lamq += (g_pre * resets[t]).sum(axis=0) / shift_div
        carry = g_pre * lam_eff
    return g_a, g_lamq


def backward(
    decoder: TrainableDecoder,
    caches: list[dict],
    g_preds: np.ndarray,
    cfg: TrainConfig,
) -> dict[str, np.ndarray]:
    """Gradients of the loss for every parameter, from training-mode caches."""
    grads = {name: np.zeros_like(p) for name, p in decoder.params.items()}
    spec = cfg.quant
    shift_div = float(1 << spec.decay_bits)
    g_out = np.asarray(g_preds, dtype=np.float64)
    for i in range(decoder.config.n_layers - 1, -1, -1):
        cache = caches[i]
        spiking = decoder.config.is_spiking(i)
        lam = decoder.decay(i)
        if cache["mode"] == "float":
            if spiking:
                g_y, g_lam = _spiking_backward_float(
                    cache, g_out, lam, decoder.config.v_th[i]
                )
            else:
                g_y, g_lam = _output_backward_float(cache, g_out, lam)
            grads[f"layer{i}.decay"] += g_lam
            if decoder.use_norm:
                xhat, std_v = cache["xhat"], cache["std"]
                vbn = decoder.layer_v_th(i)
                grads[f"layer{i}.beta"] += g_y.sum(axis=(0, 1))
                grads[f"layer{i}.gamma"] += vbn * (g_y * xhat).sum(axis=(0, 1))
                g_xhat = g_y * (vbn * decoder.gamma(i))
                g_a = (
                    g_xhat
                    - g_xhat.mean(axis=(0, 1))
                    - xhat * (g_xhat * xhat).mean(axis=(0, 1))
                ) / std_v
            else:
                g_a = g_y
            xd = cache["dropped"]
            flat_g = g_a.reshape(-1, g_a.shape[2])
            flat_x = xd.reshape(-1, xd.shape[2])
            grads[f"layer{i}.weights"] += flat_g.T @ flat_x
            grads[f"layer{i}.bias"] += g_a.sum(axis=(0, 1))
            if i > 0:
                g_in = (flat_g @ decoder.weights(i)).reshape(xd.shape)
                if cache["mask"] is not None:
                    g_in = g_in * cache["mask"]
                g_out = g_in
        else:
            q = cache["q"]
            if spiking:
                g_a, g_lamq = _spiking_backward_quantized(cache, g_out, shift_div)
            else:
                g_a, g_lamq = _output_backward_quantized(cache, g_out, shift_div)
            xq = cache["dropped"]
            flat_g = g_a.reshape(-1, g_a.shape[2])
            flat_x = xq.reshape(-1, xq.shape[2])
            g_wq = flat_g.T @ flat_x
            g_bq = g_a.sum(axis=(0, 1))
            # Straight-through: codes differentiate like the scaled floats
            # they round from, except where the code clipped.
            g_wf = g_wq * q["ws"] * q["wmask"]
            g_bf = g_bq * q["scale"] * q["bmask"]
            if decoder.use_norm:
                grads[f"layer{i}.weights"] += q["d"][:, None] * g_wf
                g_d = (g_wf * decoder.weights(i)).sum(axis=1) + g_bf * (
                    decoder.bias(i) - q["r_mean"]
                )
                grads[f"layer{i}.bias"] += g_bf * q["d"]
                grads[f"layer{i}.beta"] += g_bf
                grads[f"layer{i}.gamma"] += g_d * q["vbn"] / q["denom"]
            else:
                grads[f"layer{i}.weights"] += g_wf
                grads[f"layer{i}.bias"] += g_bf
            grads[f"layer{i}.decay"] += g_lamq * shift_div * q["lmask"]
            if i > 0:
                g_in = (flat_g @ q["wq"]).reshape(xq.shape)
                if cache["mask"] is not None:
                    g_in = g_in * cache["mask"]
                g_out = g_in
    return grads


class AdamW:
    """Adam with decoupled weight decay, applied to weight matrices only.

    Parameters are updated in place so every live view of them stays
    current. ``lr`` is a plain attribute the schedule rewrites.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        decay_suffix: str = ".weights",
    ) -> None:
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.decay_suffix = decay_suffix
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for key in sorted(self.params):
            g = grads[key]
            p = self.params[key]
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * (g * g)
            update = (self.m[key] / bias1) / (np.sqrt(self.v[key] / bias2) + self.eps)
            if self.weight_decay and key.endswith(self.decay_suffix):
                update = update + self.weight_decay * p
            p -= self.lr * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64)


@dataclass
class StreamResult:
    """Streaming forward pass over one continuous sequence."""

    predictions: np.ndarray  # [frames, outputs], dequantized in quantized mode
    spike_trains: list[np.ndarray]  # per spiking layer, [frames, neurons] uint8
    output_codes: np.ndarray | None = None  # [frames, outputs] int64, quantized mode


def streaming_forward(
    decoder: TrainableDecoder,
    frames: np.ndarray,
    mode: str = "float",
    spec: QuantSpec | None = None,
) -> StreamResult:
    """Stream a [frames, channels] sequence with persistent state.

    Float mode runs the fused float network step by step; quantized mode
    discretizes the fused parameters and steps the fixed-point recurrence,
    returning integer output codes alongside dequantized predictions.
    """
    frames = np.asarray(frames, dtype=np.float64)
    config = decoder.config
    if frames.ndim != 2 or frames.shape[1] != config.layer_sizes[0]:
        raise ValueError(
            f"frames must be [T, {config.layer_sizes[0]}], got {frames.shape}"
        )
    n_frames = frames.shape[0]
    fused = decoder.fused_layers()
    trains = [
        np.zeros((n_frames, config.layer_sizes[i + 1]), dtype=np.uint8)
        for i in range(config.n_layers)
        if config.is_spiking(i)
    ]
    if mode == "float":
        preds = np.empty((n_frames, config.layer_sizes[-1]))
        u = [np.zeros(layer.out_dim) for layer in fused]
        s = [np.zeros(layer.out_dim) for layer in fused]
        for t in range(n_frames):
            x = frames[t]
            for i, layer in enumerate(fused):
                cur = (x[None, :] @ layer.weights.T)[0] + layer.bias
                if config.is_spiking(i):
                    u_t = layer.decay * (u[i] - s[i] * config.v_th[i]) + cur
                    s_t = (u_t - config.v_th[i] >= 0.0).astype(np.float64)
                    u[i], s[i] = u_t, s_t
                    trains[i][t] = s_t.astype(np.uint8)
                    x = s_t
                else:
                    u[i] = layer.decay * u[i] + cur
                    x = u[i]
            preds[t] = u[-1]
        return StreamResult(predictions=preds, spike_trains=trains)
    if mode != "quantized":
        raise ValueError(f"unknown streaming mode {mode!r}")
    spec = spec if spec is not None else QuantSpec()
    model = quantize_model(fused, config, spec)
    mem_limit = float((1 << (spec.membrane_bits - 1)) - 1)
    shift_div = float(1 << spec.decay_bits)
    codes = quantize_frame(frames, spec).astype(np.float64)
    w_codes = [w.astype(np.float64) for w in model.weights]
    b_codes = [b.astype(np.float64) for b in model.bias]
    lam_codes = [d.astype(np.float64) for d in model.decay]
    u = [np.zeros(w.shape[0]) for w in w_codes]
    s = [np.zeros(w.shape[0]) for w in w_codes]
    out_codes = np.empty((n_frames, config.layer_sizes[-1]), dtype=np.int64)
    preds = np.empty((n_frames, config.layer_sizes[-1]))
    for t in range(n_frames):
        x = codes[t]
        for i in range(config.n_layers):
            cur = (x[None, :] @ w_codes[i].T)[0] + b_codes[i]
            if config.is_spiking(i):
                vthq = float(model.vth[i])
                raw = np.floor(lam_codes[i] * (u[i] - s[i] * vthq) / shift_div) + cur
                u[i] = np.clip(raw, -mem_limit, mem_limit)
                s[i] = (u[i] - vthq >= 0.0).astype(np.float64)
                trains[i][t] = s[i].astype(np.uint8)
                x = s[i]
            else:
                raw = np.floor(lam_codes[i] * u[i] / shift_div) + cur
                u[i] = np.clip(raw, -mem_limit, mem_limit)
                x = u[i]
        out_codes[t] = u[-1].astype(np.int64)
        preds[t] = u[-1] / model.output_scale
    return StreamResult(predictions=preds, spike_trains=trains, output_codes=out_codes)


def evaluate(
    decoder: TrainableDecoder,
    frames_raw: np.ndarray,
    velocities_raw: np.ndarray,
    cfg: TrainConfig,
    x_std: Standardizer,
    y_std: Standardizer,
    mode: str = "float",
) -> dict[str, float]:
    """Streaming metrics on raw data: correlation and destandardized RMSE.

    The first ``burn_in`` frames are excluded, mirroring the loss mask.
    """
    frames = x_std.transform(frames_raw)
    result = streaming_forward(decoder, frames, mode=mode, spec=cfg.quant)
    b = cfg.burn_in
    targets_std = y_std.transform(velocities_raw)
    score = decoder_score(result.predictions[b:], targets_std[b:])
    preds_raw = y_std.inverse(result.predictions)
    return {
        "r": score,
        "rmse": rmse(preds_raw[b:], np.asarray(velocities_raw, dtype=np.float64)[b:]),
    }


def train_epoch(
    decoder: TrainableDecoder,
    optimizer: AdamW,
    windows_x: np.ndarray,
    windows_y: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    x_std: Standardizer,
    y_std: Standardizer,
    noise_sigma: float,
    mode: str = "float",
) -> float:
    """One pass over shuffled raw windows; returns the mean batch loss.

    Noise is injected into the raw feature windows, then both features and
    targets are standardized with the frozen training statistics.
    """
    order = rng.permutation(windows_x.shape[0])
    losses = []
    for start in range(0, order.size, cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        xb = windows_x[idx].transpose(1, 0, 2)
        yb = windows_y[idx].transpose(1, 0, 2)
        xb = inject_noise(xb, noise_sigma, rng)
        xb = x_std.transform(xb)
        yb = y_std.transform(yb)
        preds, caches = unfolded_forward(
            decoder, xb, cfg, rng=rng, training=True, mode=mode
        )
        loss, g_preds = compute_loss(preds, yb, cfg.burn_in)
        grads = backward(decoder, caches, g_preds, cfg)
        optimizer.step(grads)
        decoder.clamp_decays()
        losses.append(loss)
    return float(np.mean(losses))


@dataclass
class TrainResult:
    """Everything a caller needs after training."""

    decoder: TrainableDecoder
    optimizer: AdamW
    history: list[dict] = field(default_factory=list)
    x_std: Standardizer | None = None
    y_std: Standardizer | None = None
    noise_sigma: float = 0.0

    @property
    def final_val_r(self) -> float:
        return self.history[-1]["val_r"] if self.history else float("nan")


def train(
    stream: FeatureStream,
    cfg: TrainConfig,
    net_config: NetworkConfig | None = None,
    on_epoch: Callable[[dict], bool] | None = None,
) -> TrainResult:
    """Train a decoder on a feature stream; float phase, then optional
    quantization-aware phase with frozen normalizer statistics.

    The stream is split contiguously, standardizers and the noise std are
    fitted on the training split only, and windows overlap by all but one
    frame. ``on_epoch`` sees each history row and may return True to stop;
    ``cfg.target_val_r`` ends the current phase once validation correlation
    reaches it.
    """
    net_config = net_config if net_config is not None else default_architecture()
    train_s, val_s = split_stream(stream, cfg.train_fraction)
    x_std = Standardizer().fit(train_s.frames)
    y_std = Standardizer().fit(train_s.velocities)
    sigma = noise_std(train_s.frames, cfg.noise_ratio)
    windows_x, windows_y = make_windows(
        train_s.frames, train_s.velocities, cfg.unroll_steps, cfg.unroll_steps - 1
    )
    rng = np.random.default_rng(cfg.seed)
    decoder = TrainableDecoder.initialize(
        net_config, rng, decay_init=cfg.decay_init, epsilon=cfg.bn_epsilon
    )
    optimizer = AdamW(
        decoder.params,
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        betas=cfg.adam_betas,
        eps=cfg.adam_epsilon,
    )
    result = TrainResult(
        decoder=decoder,
        optimizer=optimizer,
        x_std=x_std,
        y_std=y_std,
        noise_sigma=sigma,
    )
    n_eval = min(cfg.train_eval_frames, train_s.n_frames)
    epoch = 0
    for phase, n_epochs in (("float", cfg.epochs), ("quantized", cfg.qat_epochs)):
        for _ in range(n_epochs):
            optimizer.lr = cfg.learning_rate * cfg.lr_decay_factor ** (
                epoch // cfg.lr_decay_every
            )
            train_loss = train_epoch(
                decoder,
                optimizer,
                windows_x,
                windows_y,
                cfg,
                rng,
                x_std,
                y_std,
                sigma,
                mode=phase,
            )
            train_m = evaluate(
                decoder,
                train_s.frames[:n_eval],
                train_s.velocities[:n_eval],
                cfg,
                x_std,
                y_std,
                mode=phase,
            )
            val_m = evaluate(
                decoder, val_s.frames, val_s.velocities, cfg, x_std, y_std, mode=phase
            )
            row = {
                "epoch": epoch,
                "phase": phase,
                "lr": optimizer.lr,
                "train_loss": train_loss,
                "train_r": train_m["r"],
                "val_r": val_m["r"],
                "val_rmse": val_m["rmse"],
            }
            result.history.append(row)
            epoch += 1
            if on_epoch is not None and on_epoch(row):
                return result
            if cfg.target_val_r is not None and row["val_r"] >= cfg.target_val_r:
                break
    return result
