"""End-to-end command-line pipeline on a small synthetic dataset.

Heavy lifting happens in one module-scoped pipeline fixture; the tests
inspect its artifacts so the suite stays fast.
"""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from spikedec import cli

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    data_dir = root / "data"
    run_dir = root / "run"
    q_dir = root / "quant"
    assert run_cli("synth", "--out", str(data_dir), "--frames", "2500", "--seed", "11") == 0
    dataset = data_dir / "dataset.bin"
    code = run_cli(
        "train", "--data", str(dataset), "--out", str(run_dir),
        "--epochs", "2", "--qat-epochs", "1",
    )
    assert code == 0
    code = run_cli("quantize", "--checkpoint", str(run_dir / "checkpoint.npz"),
                   "--out", str(q_dir))
    assert code == 0
    return {
        "root": root,
        "dataset": dataset,
        "run": run_dir,
        "quant": q_dir,
    }


def test_train_outputs_and_manifest(pipeline):
    run = pipeline["run"]
    assert (run / "checkpoint.npz").exists()
    with open(run / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "phase", "lr", "train_loss", "train_r", "val_r", "val_rmse"]
    assert len(rows) == 4  # header + 2 float + 1 qat
    assert rows[3][1] == "quantized"
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert str(pipeline["dataset"]) in manifest["inputs"]
    assert len(manifest["inputs"][str(pipeline["dataset"])]) == 64  # sha256 hex
    assert sorted(manifest["outputs"]) == ["checkpoint.npz", "metrics.csv"]
    assert manifest["seed"] == 0


def test_metrics_are_byte_identical_across_reruns(pipeline, tmp_path):
    rerun = tmp_path / "rerun"
    code = run_cli(
        "train", "--data", str(pipeline["dataset"]), "--out", str(rerun),
        "--epochs", "2", "--qat-epochs", "1",
    )
    assert code == 0
    first = (pipeline["run"] / "metrics.csv").read_bytes()
    assert (rerun / "metrics.csv").read_bytes() == first


def test_eval_reports_float_and_quantized(pipeline, tmp_path):
    for mode in ("float", "quantized"):
        out = tmp_path / mode
        code = run_cli(
            "eval", "--checkpoint", str(pipeline["run"] / "checkpoint.npz"),
            "--data", str(pipeline["dataset"]), "--mode", mode,
            "--out", str(out),
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        for key in ("split", "mode", "frames", "per_output_r", "mean_r", "rmse_native"):
            assert key in report
        assert report["mode"] == mode
        assert len(report["per_output_r"]) == 2
        assert -1.0 <= report["mean_r"] <= 1.0
    quantized = json.loads((tmp_path / "quantized" / "report.json").read_text())
    assert "spike_rates" in quantized and "saturations" in quantized


def test_quantize_artifacts(pipeline):
    q = pipeline["quant"]
    assert (q / "model.snnq").exists()
    footprint = json.loads((q / "footprint.json").read_text())
    assert footprint["total_bytes"] == 160786
    stats = json.loads((q / "stats.json").read_text())
    assert len(stats["scales"]) == 4
    assert stats["x_std"] is not None
    for lo, hi in stats["weight_code_range"]:
        assert -7 <= lo <= hi <= 7


def test_simulate_outputs(pipeline, tmp_path):
    out = tmp_path / "sim"
    code = run_cli(
        "simulate", "--out", str(out), "--model", str(pipeline["quant"] / "model.snnq"),
        "--spikes", "0..40:10",
    )
    assert code == 0
    comparison = json.loads((out / "comparison.json").read_text())
    assert set(comparison["strategies"]) == {"ann", "snn-baseline", "snn-sparse"}
    assert comparison["mem_ratios"]["snn-sparse/ann"] < 1.0
    with open(out / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 12  # three strategies x four layers
    with open(out / "sweep.csv") as fh:
        sweep = list(csv.reader(fh))
    assert sweep[0] == ["spikes_in", "layer2_cycles", "bottleneck"]
    assert len(sweep) == 1 + 5
    for name in ("timeline_ann.csv", "timeline_snn-sparse.csv"):
        assert (out / name).exists()


def test_simulate_single_strategy_and_counts(pipeline, tmp_path):
    out = tmp_path / "single"
    code = run_cli(
        "simulate", "--out", str(out), "--strategy", "snn-baseline",
        "--counts", "10,10,5",
    )
    assert code == 0
    comparison = json.loads((out / "comparison.json").read_text())
    assert list(comparison["strategies"]) == ["snn-baseline"]


def test_infer_file_mode_with_stats(pipeline, tmp_path):
    out = tmp_path / "inf"
    code = run_cli(
        "infer", "--model", str(pipeline["quant"] / "model.snnq"),
        "--input", str(pipeline["dataset"]),
        "--stats", str(pipeline["quant"] / "stats.json"),
        "--out", str(out), "--trace",
    )
    assert code == 0
    with open(out / "velocities.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["vx_native", "vy_native"]
    assert len(rows) == 1 + 2500
    with open(out / "spikes.csv") as fh:
        spikes = list(csv.reader(fh))
    assert spikes[0] == ["frame", "layer1_spikes", "layer2_spikes", "layer3_spikes"]
    assert len(spikes) == 1 + 2500


def test_infer_stdin_stream(pipeline):
    # subprocess so stdin/stdout behave exactly as in the shell
    rng = np.random.default_rng(0)
    lines = "\n".join(
        ",".join(f"{v:.4f}" for v in rng.normal(size=96)) for _ in range(4)
    )
    proc = subprocess.run(
        [sys.executable, "-m", "spikedec.cli", "infer",
         "--model", str(pipeline["quant"] / "model.snnq")],
        input=lines, capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    out_lines = [l for l in proc.stdout.splitlines() if l.strip()]
    assert len(out_lines) == 4
    for line in out_lines:
        vx, vy = line.split(",")
        float(vx), float(vy)


def test_exit_codes():
    assert run_cli("eval", "--checkpoint", "/nonexistent.npz", "--data", "/also/missing") == 2
    with pytest.raises(SystemExit) as err:
        run_cli("simulate", "--strategy", "warp-drive", "--out", "/tmp/x")
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        run_cli("no-such-command")
    assert err.value.code == 1


def test_bad_sweep_is_a_data_error(pipeline, tmp_path):
    code = run_cli("simulate", "--out", str(tmp_path / "s"), "--spikes", "10..")
    assert code == 2


def test_qat_flag_sets_30_plus_20(tmp_path):
    # resolved config only; running 50 epochs here would be wasteful
    parser = cli.build_parser()
    args = parser.parse_args(
        ["train", "--data", "x.bin", "--out", "y", "--qat"]
    )
    config = cli._resolve_config(args)
    assert config["training"]["epochs"] == 30
    assert config["training"]["qat_epochs"] == 20


def test_preset_b_differs_only_in_bin_width():
    a = cli._preset_config("bins-50ms")
    b = cli._preset_config("bins-32ms")
    assert a["data"]["bin_ms"] == 50.0
    assert b["data"]["bin_ms"] == 32.0
    assert a["training"] == b["training"]
    assert a["network"] == b["network"]


def test_config_overlay_merges_sections(tmp_path):
    overlay = tmp_path / "o.toml"
    overlay.write_text("[training]\nepochs = 7\n")
    parser = cli.build_parser()
    args = parser.parse_args(
        ["train", "--data", "x", "--out", "y", "--config", str(overlay)]
    )
    config = cli._resolve_config(args)
    assert config["training"]["epochs"] == 7
    assert config["training"]["batch_size"] == 128  # preset value survives
