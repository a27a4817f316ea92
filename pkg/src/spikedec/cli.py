"""Command-line interface for the decoder toolkit.

Subcommands cover the full pipeline: ``synth`` (seeded synthetic dataset),
``train``, ``eval``, ``quantize`` (fixed-point export plus footprint),
``simulate`` (deployment cost model) and ``infer`` (frame streaming).

Conventions shared by all subcommands:

* ``--out`` names a directory; output files inside it have fixed names and
  a ``manifest.json`` records the command, resolved configuration, seed,
  input hashes and outputs, so a run can be reproduced from its manifest.
* exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
* the ``SPIKEDEC_LOG`` environment variable sets log verbosity on stderr
  (debug, info, warning, error; default info).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from importlib import metadata, resources

from . import costmodel, engine, training
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    FeatureStream,
    import_csv,
    load_stream,
    pearson,
    rmse,
    save_stream,
    split_stream,
    synthetic_stream,
)
from .errors import DataError, NumericsError
from .network import NetworkConfig, default_architecture
from .quantize import (
    QuantSpec,
    export_model,
    footprint_report,
    import_model,
    quantize_frame,
    quantize_model,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

PRESETS = ("bins-50ms", "bins-32ms")

logger = logging.getLogger("spikedec")


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit code 2; this toolkit uses 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        return metadata.version("spikedec")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"invalid TOML in {path}: {exc}") from exc


def _preset_config(name: str) -> dict:
    ref = resources.files("spikedec").joinpath("presets", f"{name}.toml")
    with ref.open("rb") as fh:
        return tomllib.load(fh)


def _merge_config(base: dict, overlay: dict) -> dict:
    merged = {k: dict(v) for k, v in base.items()}
    for section, values in overlay.items():
        if not isinstance(values, dict):
            raise DataError(f"config section [{section}] must be a table")
        merged.setdefault(section, {}).update(values)
    return merged


def _resolve_config(args: argparse.Namespace) -> dict:
    config = _preset_config(args.preset)
    if getattr(args, "config", None):
        config = _merge_config(config, _load_toml(args.config))
    training_cfg = config.setdefault("training", {})
    if getattr(args, "qat", False):
        training_cfg["epochs"] = 30
        training_cfg["qat_epochs"] = 20
    for flag, key in (
        ("seed", "seed"),
        ("epochs", "epochs"),
        ("qat_epochs", "qat_epochs"),
        ("target_r", "target_val_r"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            training_cfg[key] = value
    return config


def _net_config(config: dict) -> NetworkConfig:
    section = config.get("network", {})
    if not section:
        return default_architecture()
    return NetworkConfig(
        layer_sizes=tuple(section["layer_sizes"]),
        v_th=tuple(section["v_th"]),
        output_is_spiking=section.get("output_is_spiking", False),
    )


def _quant_spec(config: dict) -> QuantSpec:
    section = dict(config.get("quantization", {}))
    return QuantSpec(**section)


def _train_config(config: dict) -> training.TrainConfig:
    section = dict(config.get("training", {}))
    if "decay_init" in section:
        section["decay_init"] = tuple(section["decay_init"])
    if "adam_betas" in section:
        section["adam_betas"] = tuple(section["adam_betas"])
    section["quant"] = _quant_spec(config)
    try:
        return training.TrainConfig(**section)
    except TypeError as exc:
        raise DataError(f"invalid training config: {exc}") from exc


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(
    out_dir: str,
    command: str,
    args: argparse.Namespace,
    config: dict | None,
    inputs: list[str],
    outputs: list[str],
    started: float,
    seed: int | None = None,
) -> None:
    manifest = {
        "format_version": 1,
        "command": command,
        "toolkit_version": _version(),
        "args": {
            k: v for k, v in vars(args).items() if k != "func" and not callable(v)
        },
        "seed": seed,
        "config": config,
        "inputs": {path: _sha256(path) for path in inputs},
        "outputs": sorted(outputs),
        "started_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------- synth


def cmd_synth(args: argparse.Namespace) -> int:
    started = time.time()
    out = _ensure_out(args.out)
    stream = synthetic_stream(
        n_frames=args.frames,
        n_channels=args.channels,
        seed=args.seed,
        bin_ms=args.bin_ms,
    )
    path = os.path.join(out, "dataset.bin")
    save_stream(stream, path)
    logger.info(
        "wrote %s: %d frames x %d channels", path, stream.n_frames, stream.n_channels
    )
    _write_manifest(
        out, "synth", args, None, [], ["dataset.bin"], started, seed=args.seed
    )
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- train


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    out = _ensure_out(args.out)
    config = _resolve_config(args)
    cfg = _train_config(config)
    net = _net_config(config)
    stream = load_stream(args.data)
    logger.info(
        "training %s on %d frames (%d float + %d quantized epochs)",
        "x".join(str(s) for s in net.layer_sizes),
        stream.n_frames,
        cfg.epochs,
        cfg.qat_epochs,
    )

    def on_epoch(row: dict) -> bool:
        logger.info(
            "epoch %3d [%s] lr=%.2e loss=%.5f train_r=%.4f val_r=%.4f",
            row["epoch"],
            row["phase"],
            row["lr"],
            row["train_loss"],
            row["train_r"],
            row["val_r"],
        )
        return False

    result = training.train(stream, cfg, net, on_epoch=on_epoch)
    ckpt_path = os.path.join(out, "checkpoint.npz")
    save_checkpoint(ckpt_path, result, cfg)
    metrics_path = os.path.join(out, "metrics.csv")
    fields = ["epoch", "phase", "lr", "train_loss", "train_r", "val_r", "val_rmse"]
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in result.history:
            writer.writerow([_format_cell(row[name]) for name in fields])
    _write_manifest(
        out,
        "train",
        args,
        config,
        [args.data],
        ["checkpoint.npz", "metrics.csv"],
        started,
        seed=cfg.seed,
    )
    print(f"final val_r {result.final_val_r:.4f} -> {ckpt_path}")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _eval_report(
    ckpt: Checkpoint, stream: FeatureStream, split: str, mode: str
) -> dict:
    if ckpt.x_std is None or ckpt.y_std is None:
        raise DataError("checkpoint has no standardizers; cannot evaluate raw data")
    if split == "train":
        part, _ = split_stream(stream, ckpt.train_config.train_fraction)
    elif split == "val":
        _, part = split_stream(stream, ckpt.train_config.train_fraction)
    else:
        part = stream
    x = ckpt.x_std.transform(part.frames)
    burn = ckpt.train_config.burn_in
    report: dict = {
        "split": split,
        "mode": mode,
        "frames": part.n_frames,
        "burn_in": burn,
    }
    if mode == "float":
        result = training.streaming_forward(ckpt.decoder, x, mode="float")
        preds_std = result.predictions
    else:
        spec = ckpt.train_config.quant
        model = quantize_model(
            ckpt.decoder.fused_layers(), ckpt.decoder.config, spec
        )
        sparse = engine.SparseEngine(model)
        codes, traces = sparse.run(quantize_frame(x, spec))
        preds_std = engine.decode_output(model, codes)
        stats = engine.spike_stats(traces, model)
        report["spike_rates"] = stats["rate_per_layer"]
        report["saturations"] = stats["total_saturations"]
    targets_std = ckpt.y_std.transform(part.velocities)
    per_r = [
        pearson(preds_std[burn:, k], targets_std[burn:, k])
        for k in range(targets_std.shape[1])
    ]
    preds_native = ckpt.y_std.inverse(preds_std)
    report["per_output_r"] = per_r
    report["mean_r"] = float(np.mean(per_r))
    report["rmse_native"] = rmse(preds_native[burn:], part.velocities[burn:])
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    stream = load_stream(args.data)
    report = _eval_report(ckpt, stream, args.split, args.mode)
    text = json.dumps(report, indent=2)
    if args.out:
        out = _ensure_out(args.out)
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(text + "\n")
        _write_manifest(
            out,
            "eval",
            args,
            None,
            [args.checkpoint, args.data],
            ["report.json"],
            started,
        )
    else:
        print(text)
    logger.info(
        "%s/%s mean_r=%.4f rmse=%.4f",
        args.split,
        args.mode,
        report["mean_r"],
        report["rmse_native"],
    )
    return EXIT_OK


# ---------------------------------------------------------------- quantize


def cmd_quantize(args: argparse.Namespace) -> int:
    started = time.time()
    out = _ensure_out(args.out)
    ckpt = load_checkpoint(args.checkpoint)
    spec = ckpt.train_config.quant
    overrides = {}
    if args.weight_bits is not None:
        overrides["weight_bits"] = args.weight_bits
    if args.decay_bits is not None:
        overrides["decay_bits"] = args.decay_bits
    if args.pow2_scale:
        overrides["pow2_scale"] = True
    if overrides:
        spec = QuantSpec(**{**asdict(spec), **overrides})
    model = quantize_model(ckpt.decoder.fused_layers(), ckpt.decoder.config, spec)
    model_path = os.path.join(out, "model.snnq")
    export_model(model, model_path)
    if import_model(model_path) != model:
        raise DataError("exported model failed its round-trip self check")
    footprint = footprint_report(model)
    with open(os.path.join(out, "footprint.json"), "w") as fh:
        json.dump(footprint, fh, indent=2)
        fh.write("\n")
    stats = {
        "weight_bits": spec.weight_bits,
        "decay_bits": spec.decay_bits,
        "input_scale": spec.input_scale,
        "scales": [float(s) for s in model.scales],
        "weight_code_range": [
            [int(w.min()), int(w.max())] for w in model.weights
        ],
        "vth_codes": [None if v is None else int(v) for v in model.vth],
        "x_std": None if ckpt.x_std is None else ckpt.x_std.to_dict(),
        "y_std": None if ckpt.y_std is None else ckpt.y_std.to_dict(),
    }
    with open(os.path.join(out, "stats.json"), "w") as fh:
        json.dump(stats, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        out,
        "quantize",
        args,
        {"quantization": asdict(spec)},
        [args.checkpoint],
        ["model.snnq", "footprint.json", "stats.json"],
        started,
    )
    print(f"model footprint: total {footprint['total_bytes']:,} bytes -> {model_path}")
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def _parse_float_list(text: str, n: int, what: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != n:
        raise DataError(f"{what} needs {n} comma-separated values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise DataError(f"invalid {what}: {exc}") from exc


def _parse_sweep(text: str) -> range:
    body, _, step_text = text.partition(":")
    lo, sep, hi = body.partition("..")
    if not sep:
        raise DataError("sweep must look like A..B or A..B:STEP")
    try:
        start, stop = int(lo), int(hi)
        step = int(step_text) if step_text else 1
    except ValueError as exc:
        raise DataError(f"invalid sweep range: {exc}") from exc
    if step <= 0 or stop < start:
        raise DataError("sweep range must ascend with positive step")
    return range(start, stop + 1, step)


def _machine_model(path: str | None) -> costmodel.MachineModel:
    if path is None:
        return costmodel.MachineModel()
    section = _load_toml(path).get("machine", {})
    try:
        return costmodel.MachineModel(**{**asdict(costmodel.MachineModel()), **section})
    except TypeError as exc:
        raise DataError(f"invalid machine config: {exc}") from exc


def _measured_counts(
    config: NetworkConfig, model, ckpt_path: str, data_path: str
) -> list[float]:
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.x_std is None:
        raise DataError("checkpoint has no feature standardizer")
    stream = load_stream(data_path)
    codes = quantize_frame(ckpt.x_std.transform(stream.frames), model.spec)
    _, traces = engine.SparseEngine(model).run(codes)
    stats = engine.spike_stats(traces, model)
    return [
        stats["mean_spikes_per_layer"][i]
        for i in range(config.n_layers)
        if config.is_spiking(i)
    ]


def _report_totals(report: costmodel.CostReport) -> dict:
    return {
        "macs": report.total_macs,
        "adds": report.total_adds,
        "mem_accesses": report.total_mem_accesses,
        "bytes_in": report.total_bytes_in,
        "dma_transfers": report.total_dma_transfers,
        "cycles": report.total_cycles,
        "preamble_cycles": report.preamble_cycles,
        "end_to_end_cycles": report.end_to_end_cycles,
        "layer_cycles": [l.cycles for l in report.layers],
        "overflow_layers": report.overflow_layers,
    }


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.time()
    out = _ensure_out(args.out)
    inputs = []
    if args.model:
        model = import_model(args.model)
        config = model.config
        inputs.append(args.model)
    else:
        model = None
        config = default_architecture()
    machine = _machine_model(args.machine)
    if args.machine:
        inputs.append(args.machine)
    if args.counts:
        counts = _parse_float_list(args.counts, config.n_spiking_layers, "--counts")
    elif args.data:
        if model is None or not args.checkpoint:
            raise DataError("--data needs both --model and --checkpoint")
        counts = _measured_counts(config, model, args.checkpoint, args.data)
        inputs += [args.checkpoint, args.data]
    else:
        rates = _parse_float_list(args.rates, config.n_spiking_layers, "--rates")
        counts = costmodel.spike_counts_from_rates(config, rates)
    logger.info("spike counts per spiking layer: %s", counts)

    outputs = []
    summary: dict = {"spike_counts": counts, "strategies": {}}
    if args.strategy == "all":
        comparison = costmodel.compare_strategies(machine, config, counts)
        reports = [comparison.reports[s] for s in costmodel.STRATEGIES]
        summary["mem_ratios"] = comparison.mem_ratios
        summary["cycle_ratios"] = comparison.cycle_ratios
    else:
        reports = [
            costmodel.simulate_inference(machine, config, args.strategy, counts)
        ]
    for report in reports:
        summary["strategies"][report.strategy] = _report_totals(report)
        name = f"timeline_{report.strategy}.csv"
        costmodel.write_timeline_csv(report, os.path.join(out, name))
        outputs.append(name)
    costmodel.write_report_csv(reports, os.path.join(out, "report.csv"))
    outputs.append("report.csv")
    if args.spikes:
        sweep_rows = []
        for s in _parse_sweep(args.spikes):
            swept = [float(s)] + counts[1:]
            rep = costmodel.simulate_inference(
                machine, config, "snn-sparse", swept
            )
            entry = rep.layers[1]
            sweep_rows.append((s, entry.cycles, entry.bottleneck))
        with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["spikes_in", "layer2_cycles", "bottleneck"])
            for row in sweep_rows:
                writer.writerow([row[0], f"{row[1]:.2f}", row[2]])
        outputs.append("sweep.csv")
    with open(os.path.join(out, "comparison.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    outputs.append("comparison.json")
    _write_manifest(out, "simulate", args, None, inputs, outputs, started)
    for name, totals in summary["strategies"].items():
        print(
            f"{name}: {totals['mem_accesses']:.0f} accesses, "
            f"{totals['end_to_end_cycles']:.0f} cycles"
        )
    return EXIT_OK


# ---------------------------------------------------------------- infer


def _load_sidecar(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    with open(path) as fh:
        stats = json.load(fh)
    try:
        x = stats["x_std"]
        y = stats["y_std"]
        return (
            np.asarray(x["mean"], dtype=np.float64),
            np.asarray(x["std"], dtype=np.float64),
            np.asarray(y["mean"], dtype=np.float64),
            np.asarray(y["std"], dtype=np.float64),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path} has no usable standardizer stats") from exc


def _frame_source(args: argparse.Namespace, n_channels: int):
    """Yield raw frames from the container, a CSV file, or stdin lines."""
    if args.input == "-":
        def from_stdin():
            for lineno, line in enumerate(sys.stdin, 1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != n_channels:
                    raise DataError(
                        f"stdin line {lineno}: expected {n_channels} values, "
                        f"got {len(parts)}"
                    )
                try:
                    yield np.array([float(p) for p in parts])
                except ValueError as exc:
                    raise DataError(f"stdin line {lineno}: {exc}") from exc

        return from_stdin()
    with open(args.input, "rb") as fh:
        magic = fh.read(4)
    if magic == b"SBPD":
        return iter(load_stream(args.input).frames)
    return iter(import_csv(args.input, n_channels=n_channels, n_outputs=0).frames)


def cmd_infer(args: argparse.Namespace) -> int:
    started = time.time()
    model = import_model(args.model)
    sparse = engine.SparseEngine(model)
    n_in = model.config.layer_sizes[0]
    x_mean = x_std = y_mean = y_std = None
    if args.stats:
        x_mean, x_std, y_mean, y_std = _load_sidecar(args.stats)
    units = "native" if args.stats else "std"
    header = [f"vx_{units}", f"vy_{units}"]
    out_rows: list[list[str]] = []
    trace_rows: list[list[int]] = []
    spiking = [i for i in range(model.config.n_layers) if model.config.is_spiking(i)]
    to_stdout = not args.out
    frames = 0
    for raw in _frame_source(args, n_in):
        x = (raw - x_mean) / x_std if args.stats else raw
        codes, trace = sparse.infer_frame(quantize_frame(x, model.spec))
        pred = engine.decode_output(model, codes)
        if args.stats:
            pred = pred * y_std + y_mean
        row = [f"{v:.6f}" for v in pred]
        if to_stdout:
            print(",".join(row))
        out_rows.append(row)
        if args.trace:
            spikes = [trace.spike_counts[i] for i in spiking]
            trace_rows.append([frames] + spikes)
            if to_stdout:
                print(
                    f"frame {frames} spikes "
                    + ",".join(str(s) for s in spikes),
                    file=sys.stderr,
                )
        frames += 1
    logger.info("processed %d frames", frames)
    if args.out:
        out = _ensure_out(args.out)
        outputs = ["velocities.csv"]
        with open(os.path.join(out, "velocities.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(out_rows)
        if args.trace:
            with open(os.path.join(out, "spikes.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["frame"] + [f"layer{i + 1}_spikes" for i in spiking]
                )
                writer.writerows(trace_rows)
            outputs.append("spikes.csv")
        inputs = [p for p in (args.model, args.stats) if p]
        if args.input != "-":
            inputs.append(args.input)
        _write_manifest(out, "infer", args, None, inputs, outputs, started)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="spikedec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=20000)
    p.add_argument("--channels", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bin-ms", type=float, default=50.0, dest="bin_ms")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a decoder on a dataset container")
    p.add_argument("--data", required=True, help="dataset container path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=PRESETS, default="bins-50ms")
    p.add_argument("--config", help="TOML overriding preset values")
    p.add_argument("--qat", action="store_true", help="30 float + 20 QAT epochs")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--qat-epochs", type=int, dest="qat_epochs")
    p.add_argument(
        "--target-r",
        type=float,
        dest="target_r",
        help="stop a phase once validation correlation reaches this",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--mode", choices=("float", "quantized"), default="float")
    p.add_argument("--out", help="optional output directory (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", help="export a fixed-point model file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weight-bits", type=int, dest="weight_bits")
    p.add_argument("--decay-bits", type=int, dest="decay_bits")
    p.add_argument("--pow2-scale", action="store_true", dest="pow2_scale")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("simulate", help="run the deployment cost model")
    p.add_argument("--out", required=True)
    p.add_argument("--model", help="quantized model file (default architecture if omitted)")
    p.add_argument(
        "--strategy",
        choices=("all",) + costmodel.STRATEGIES,
        default="all",
    )
    p.add_argument("--rates", default="0.19,0.19,0.09", help="firing rates per spiking layer")
    p.add_argument("--counts", help="absolute spike counts per spiking layer")
    p.add_argument("--data", help="measure counts on this dataset (needs --checkpoint)")
    p.add_argument("--checkpoint", help="standardizer source for --data")
    p.add_argument("--machine", help="TOML file with a [machine] table")
    p.add_argument("--spikes", help="sweep layer-2 incoming spikes, e.g. 0..160")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="stream frames through a quantized model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", default="-", help="container/CSV path, or - for stdin")
    p.add_argument("--stats", help="stats.json with standardizer sidecar")
    p.add_argument("--out", help="optional output directory (default: stdout)")
    p.add_argument("--trace", action="store_true", help="emit per-frame spike counts")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SPIKEDEC_LOG", "info").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"spikedec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"spikedec: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"spikedec: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
