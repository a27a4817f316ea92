"""Versioned training checkpoints.

A checkpoint is a single ``.npz`` archive holding every float parameter,
the normalizer running statistics, optional optimizer moments, the feature
and velocity standardizers, and a JSON metadata record (format version,
network shape, training configuration, per-epoch history, noise level).
Loading restores a decoder, and optimizer, that continue training exactly
where the saved run stopped.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Standardizer
from .errors import DataError
from .network import NetworkConfig
from .quantize import QuantSpec
from .training import AdamW, TrainableDecoder, TrainConfig, TrainResult

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint", "load_checkpoint"]

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    """Deserialized checkpoint contents."""

    decoder: TrainableDecoder
    train_config: TrainConfig
    optimizer: AdamW | None = None
    history: list[dict] = field(default_factory=list)
    x_std: Standardizer | None = None
    y_std: Standardizer | None = None
    noise_sigma: float = 0.0

    @property
    def epochs_completed(self) -> int:
        return len(self.history)


def _config_to_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["quant"] = asdict(cfg.quant)
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["quant"] = QuantSpec(**d["quant"])
    for key in ("decay_init", "adam_betas"):
        d[key] = tuple(d[key])
    return TrainConfig(**d)


def save_checkpoint(path: str, result: TrainResult, cfg: TrainConfig) -> None:
    """Write a training state archive; ``path`` is used verbatim."""
    decoder = result.decoder
    net = decoder.config
    meta = {
        "format_version": FORMAT_VERSION,
        "network": {
            "layer_sizes": list(net.layer_sizes),
            "v_th": list(net.v_th),
            "output_is_spiking": net.output_is_spiking,
        },
        "train_config": _config_to_dict(cfg),
        "history": result.history,
        "noise_sigma": float(result.noise_sigma),
        "use_norm": decoder.use_norm,
        "epsilon": decoder.epsilon,
        "has_optimizer": result.optimizer is not None,
        "has_x_std": result.x_std is not None,
        "has_y_std": result.y_std is not None,
    }
    arrays: dict[str, np.ndarray] = {
        "meta": np.asarray(json.dumps(meta, default=float))
    }
    for key, value in decoder.params.items():
        arrays[f"param:{key}"] = value
    for i, (rm, rv) in enumerate(zip(decoder.running_mean, decoder.running_var)):
        arrays[f"norm:mean{i}"] = rm
        arrays[f"norm:var{i}"] = rv
    if result.optimizer is not None:
        state = result.optimizer.state_dict()
        arrays["opt:t"] = np.asarray(state["t"], dtype=np.int64)
        for key, value in state["m"].items():
            arrays[f"opt:m:{key}"] = value
        for key, value in state["v"].items():
            arrays[f"opt:v:{key}"] = value
    if result.x_std is not None:
        arrays["xstd:mean"] = result.x_std.mean
        arrays["xstd:std"] = result.x_std.std
    if result.y_std is not None:
        arrays["ystd:mean"] = result.y_std.mean
        arrays["ystd:std"] = result.y_std.std
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str) -> Checkpoint:
    """Read an archive written by :func:`save_checkpoint`."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if "meta" not in archive:
            raise DataError(f"{path} is not a checkpoint (missing metadata)")
        meta = json.loads(str(archive["meta"][()]))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(
                f"unsupported checkpoint version {version}; expected {FORMAT_VERSION}"
            )
        net = NetworkConfig(
            layer_sizes=tuple(meta["network"]["layer_sizes"]),
            v_th=tuple(meta["network"]["v_th"]),
            output_is_spiking=meta["network"]["output_is_spiking"],
        )
        cfg = _config_from_dict(meta["train_config"])
        params = {}
        running_mean = []
        running_var = []
        for i in range(net.n_layers):
            for piece in ("weights", "bias", "decay", "gamma", "beta"):
                key = f"layer{i}.{piece}"
                name = f"param:{key}"
                if name not in archive:
                    raise DataError(f"checkpoint missing array {key}")
                params[key] = archive[name].astype(np.float64)
            running_mean.append(archive[f"norm:mean{i}"].astype(np.float64))
            running_var.append(archive[f"norm:var{i}"].astype(np.float64))
        decoder = TrainableDecoder(
            net,
            params,
            running_mean,
            running_var,
            use_norm=meta["use_norm"],
            epsilon=meta["epsilon"],
        )
        optimizer = None
        if meta["has_optimizer"]:
            optimizer = AdamW(
                decoder.params,
                lr=cfg.learning_rate,
                weight_decay=cfg.weight_decay,
                betas=cfg.adam_betas,
                eps=cfg.adam_epsilon,
            )
            optimizer.load_state_dict(
                {
                    "t": int(archive["opt:t"][()]),
                    "m": {k: archive[f"opt:m:{k}"] for k in params},
                    "v": {k: archive[f"opt:v:{k}"] for k in params},
                }
            )
        x_std = y_std = None
        if meta["has_x_std"]:
            x_std = Standardizer(
                mean=archive["xstd:mean"].astype(np.float64),
                std=archive["xstd:std"].astype(np.float64),
            )
        if meta["has_y_std"]:
            y_std = Standardizer(
                mean=archive["ystd:mean"].astype(np.float64),
                std=archive["ystd:std"].astype(np.float64),
            )
    return Checkpoint(
        decoder=decoder,
        train_config=cfg,
        optimizer=optimizer,
        history=meta["history"],
        x_std=x_std,
        y_std=y_std,
        noise_sigma=meta["noise_sigma"],
    )
