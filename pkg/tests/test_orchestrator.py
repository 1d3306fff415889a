import csv
import json
import sys

import pytest
import yaml

from edgemark.cli import main as cli_main
from edgemark.orchestrator import (
    BenchmarkConfig,
    ConfigError,
    DeviceProfile,
    PowerSourceSpec,
    SimConfig,
    load_benchmark_config,
    replay_metrics,
    run_benchmark,
)
from edgemark.power import write_frames
from edgemark.report import (
    check_table_consistency,
    compare,
    compare_rows,
    compute_table_metrics,
    load_report,
    read_table_csv,
    report_content_hash,
    report_from_dict,
    report_to_dict,
)
from edgemark.runner import ConstantLatency
from edgemark.telemetry import Phase, Scope

LABELS = ("positive", "neutral", "negative")


def make_text_dataset(make_dataset_csv, n, name=None):
    rows = [[f"s{i:04d}", f"sample text number {i}", LABELS[i % 3]] for i in range(n)]
    return make_dataset_csv(rows, name=name)


def sim_config(dataset_path, tmp_path, n_seeds=5, latency=0.01, power=None, **kwargs):
    return BenchmarkConfig(
        dataset_path=str(dataset_path),
        labels=LABELS,
        q_bits=kwargs.pop("q_bits", 8),
        flops_per_inference=kwargs.pop("flops_per_inference", 3.42e8),
        runner_spec=None,
        sim=SimConfig(latency=ConstantLatency(latency)),
        power_source=power or PowerSourceSpec(kind="none"),
        seeds=tuple(range(1, n_seeds + 1)),
        device=DeviceProfile(name="testbox", core_count=2, ram_bytes=1 << 30),
        output_dir=str(tmp_path / "out"),
        pre_post_window_s=0.0,
        **kwargs,
    )


# --- config loading ---


def test_load_config_with_overrides(tmp_path, make_dataset_csv, monkeypatch):
    ds = make_text_dataset(make_dataset_csv, 6)
    config_path = tmp_path / "bench.yaml"
    config_path.write_text(
        yaml.safe_dump(
            {
                "dataset": {"path": str(ds), "labels": list(LABELS)},
                "runner": {
                    "kind": "simulator",
                    "q_bits": 16,
                    "flops_per_inference": 2.0e8,
                    "latency": {"kind": "constant", "seconds": 0.5},
                },
                "run": {"seeds": [7, 8], "output_dir": str(tmp_path / "from-config")},
            }
        ),
        encoding="utf-8",
    )
    config = load_benchmark_config(config_path)
    assert config.seeds == (7, 8)
    assert config.q_bits == 16
    assert config.output_dir.endswith("from-config")

    monkeypatch.setenv("EDGEMARK_OUTPUT_DIR", str(tmp_path / "from-env"))
    config = load_benchmark_config(config_path, seeds=(1,), power="none")
    assert config.seeds == (1,)
    assert config.output_dir.endswith("from-env")

    config = load_benchmark_config(config_path, output_dir=str(tmp_path / "from-flag"))
    assert config.output_dir.endswith("from-flag")


def test_config_validation_errors(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 3)
    with pytest.raises(ConfigError):
        BenchmarkConfig(
            dataset_path=str(ds), labels=LABELS, q_bits=12, flops_per_inference=1.0,
            runner_spec=None, sim=SimConfig(latency=ConstantLatency(0.1)),
        )
    with pytest.raises(ConfigError):
        BenchmarkConfig(
            dataset_path=str(ds), labels=LABELS, q_bits=8, flops_per_inference=1.0,
            runner_spec=None, sim=SimConfig(latency=ConstantLatency(0.1)), seeds=(1, 1),
        )
    with pytest.raises(ConfigError):
        BenchmarkConfig(
            dataset_path=str(ds), labels=LABELS, q_bits=8, flops_per_inference=1.0,
            runner_spec=None, sim=None,
        )
    with pytest.raises(ConfigError):
        load_benchmark_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError):
        PowerSourceSpec.parse("bogus:thing")


# --- simulated end-to-end ---


def test_sim_run_identity_all_correct(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 100)
    report = run_benchmark(sim_config(ds, tmp_path, n_seeds=5, latency=0.01))
    assert report.status == "complete"
    assert len(report.seeds) == 5
    assert sum(len(sr.records) for sr in report.seeds) == 500
    for sr in report.seeds:
        assert sr.quality.accuracy == 1.0
        ids = [r.sample_id for r in sr.records]
        assert len(set(ids)) == 100  # every sample exactly once per seed
    assert report.table_row["accuracy_avg"] == 1.0
    assert report.si is not None and report.mpi is None and report.rer is None


def test_sim_run_deterministic_repetition(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 50)
    config_a = sim_config(ds, tmp_path, n_seeds=3)
    config_b = sim_config(ds, tmp_path, n_seeds=3)
    first = run_benchmark(config_a)
    second = run_benchmark(config_b)
    assert report_content_hash(first) == report_content_hash(second)
    a, b = report_to_dict(first), report_to_dict(second)
    a.pop("meta"), b.pop("meta")
    assert a == b


def test_sim_run_with_replay_power_constant(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 1000)
    frames_path = tmp_path / "frames.csv"
    write_frames([(t, 512) for t in range(0, 10600, 100)], frames_path)
    config = sim_config(
        ds,
        tmp_path,
        n_seeds=1,
        latency=0.01,
        power=PowerSourceSpec(kind="replay", path=str(frames_path)),
    )
    config.sensor = type(config.sensor)(supply_voltage=29.96)
    report = run_benchmark(config)
    assert report.status == "complete"
    row = report.table_row
    assert row["power_per_inference_w"] == pytest.approx(74.9, rel=1e-9)
    assert row["power_kw"] == pytest.approx(74.9, rel=1e-9)
    assert row["energy_j"] == pytest.approx(74.9 * 10.0, rel=1e-6)
    assert report.mpi == pytest.approx(2.0 / 74.9, rel=1e-9)
    assert check_table_consistency([row]) == []


def test_report_json_roundtrip(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 30)
    report = run_benchmark(sim_config(ds, tmp_path, n_seeds=2))
    blob = report_to_dict(report)
    restored = report_from_dict(json.loads(json.dumps(blob)))
    assert report_to_dict(restored) == blob


def test_replay_closure_table_csv_bit_identical(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 200)
    frames_path = tmp_path / "frames.csv"
    write_frames([(t, 512) for t in range(0, 3000, 50)], frames_path)
    config = sim_config(
        ds, tmp_path, n_seeds=1, latency=0.01,
        power=PowerSourceSpec(kind="replay", path=str(frames_path)),
    )
    report = run_benchmark(config)
    out_dir = tmp_path / "out"
    out_dir.mkdir(parents=True, exist_ok=True)
    from edgemark.report import write_table_csv

    write_table_csv([report.table_row], out_dir / "table.csv")
    rows = compute_table_metrics(read_table_csv(out_dir / "table.csv"))
    assert rows[0]["si"] == report.si
    assert rows[0]["mpi"] == report.mpi
    assert rows[0]["rer"] == report.rer  # both None without telemetry


def test_records_csv_replay_reproduces_quality_and_time(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 60)
    frames_path = tmp_path / "frames.csv"
    write_frames([(t, 512) for t in range(0, 4000, 50)], frames_path)
    config = sim_config(
        ds, tmp_path, n_seeds=2, latency=0.02,
        power=PowerSourceSpec(kind="replay", path=str(frames_path)),
    )
    report = run_benchmark(config)
    out_dir = tmp_path / "artifacts"
    out_dir.mkdir()
    from edgemark.cli import write_run_outputs

    write_run_outputs(report, out_dir)
    result = replay_metrics(
        records_csv=out_dir / "records.csv",
        q_bits=config.q_bits,
        flops_per_inference=config.flops_per_inference,
        power_csv=out_dir / "power_frames.csv",
        sensor=config.sensor,
        device="testbox",
    )
    row = result["table_row"]
    assert row["accuracy_avg"] == report.table_row["accuracy_avg"]
    assert row["time_s"] == report.table_row["time_s"]
    assert row["si"] == report.si
    assert row["power_per_inference_w"] == pytest.approx(report.table_row["power_per_inference_w"], rel=1e-9)
    assert result["consistency_problems"] == []


def test_replay_with_telemetry_csv_computes_rer(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 40)
    frames_path = tmp_path / "frames.csv"
    write_frames([(t, 512) for t in range(0, 2000, 50)], frames_path)
    config = sim_config(
        ds, tmp_path, n_seeds=1, latency=0.02,
        power=PowerSourceSpec(kind="replay", path=str(frames_path)),
    )
    report = run_benchmark(config)
    out_dir = tmp_path / "artifacts"
    out_dir.mkdir()
    from edgemark.cli import write_run_outputs

    write_run_outputs(report, out_dir)
    telemetry_csv = tmp_path / "telemetry.csv"
    telemetry_csv.write_text(
        "t_mono_ms,scope,phase,cpu_pct,mem_pct\n"
        "0.0,system,during,50.0,40.0\n"
        "400.0,system,during,50.0,40.0\n"
        "800.0,system,during,50.0,40.0\n",
        encoding="utf-8",
    )
    result = replay_metrics(
        records_csv=out_dir / "records.csv",
        q_bits=8,
        flops_per_inference=3.42e8,
        telemetry_csv=telemetry_csv,
        power_csv=out_dir / "power_frames.csv",
        sensor=config.sensor,
    )
    row = result["table_row"]
    assert row["cpu_pct_avg"] == 50.0
    assert row["mem_pct_avg"] == 40.0
    assert row["rer"] == pytest.approx(row["energy_j"] / (50.0 * 40.0))


def test_cli_metrics_out_dir_renders_nine_row_figures(tmp_path):
    from pathlib import Path

    reference = Path(__file__).parent / "data" / "reference_eval_table.csv"
    out_dir = tmp_path / "nine"
    assert cli_main(["metrics", "--table", str(reference), "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "metrics.csv").is_file()
    assert (out_dir / "normalized.csv").is_file()
    assert (out_dir / "attributes_radar.png").stat().st_size > 0
    assert (out_dir / "metric_bars.png").stat().st_size > 0
    rows = read_table_csv(out_dir / "metrics.csv")
    assert len(rows) == 9
    normalized = compare_rows(rows).normalized
    assert len(normalized) == 9
    assert all(0.0 <= v <= 1.0 for vec in normalized for v in vec.values())


# --- process-runner end-to-end ---


def test_process_runner_benchmark_with_telemetry(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 8)
    from edgemark.runner import RunnerSpec

    config = BenchmarkConfig(
        dataset_path=str(ds),
        labels=LABELS,
        q_bits=8,
        flops_per_inference=1e6,
        runner_spec=RunnerSpec(
            command=sys.executable,
            args=("-m", "edgemark.sim_runner", "--truth", str(ds)),
            q_bits=8,
            flops_per_inference=1e6,
        ),
        sim=None,
        seeds=(1, 2),
        device=DeviceProfile(name="host", core_count=2, ram_bytes=1 << 30),
        output_dir=str(tmp_path / "out"),
        telemetry_interval_ms=50,
        pre_post_window_s=0.15,
        predict_timeout_s=15.0,
        handshake_timeout_s=30.0,
    )
    report = run_benchmark(config)
    assert report.status == "complete"
    assert all(sr.quality.accuracy == 1.0 for sr in report.seeds)
    for sr in report.seeds:
        trace = sr.telemetry
        assert trace is not None
        phases = {s.phase for s in trace.samples}
        assert phases == {Phase.PRE, Phase.DURING, Phase.POST}
        during_scopes = {s.scope for s in trace.samples if s.phase is Phase.DURING}
        assert during_scopes == {Scope.SYSTEM, Scope.PROCESS}
        order = {Phase.PRE: 0, Phase.DURING: 1, Phase.POST: 2}
        ranks = [order[s.phase] for s in trace.samples]
        assert ranks == sorted(ranks)
        times = [s.t_mono_ms for s in trace.samples]
        assert times == sorted(times)
        assert sr.runner_exit == "0"
    if report.metric_inputs.cpu_pct_avg is None:
        assert any("utilization" in w for w in report.warnings)


def test_crash_on_first_seed_keeps_completed_seeds(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 6)
    marker = tmp_path / "ran-once.marker"
    script = tmp_path / "flaky.py"
    script.write_text(
        f"""import json, os, sys
marker = {str(marker)!r}
first = not os.path.exists(marker)
open(marker, "a").write("x")
sys.stdin.readline()
print(json.dumps({{"type": "ready", "runner": "flaky", "pid": os.getpid()}}), flush=True)
count = 0
for line in sys.stdin:
    msg = json.loads(line)
    if msg["type"] == "shutdown":
        sys.exit(0)
    count += 1
    if first and count > 2:
        sys.exit(9)
    print(json.dumps({{"type": "prediction", "id": msg["id"], "label": "positive"}}), flush=True)
""",
        encoding="utf-8",
    )
    from edgemark.runner import RunnerSpec

    config = BenchmarkConfig(
        dataset_path=str(ds),
        labels=LABELS,
        q_bits=8,
        flops_per_inference=1e6,
        runner_spec=RunnerSpec(command=sys.executable, args=(str(script),), q_bits=8, flops_per_inference=1e6),
        sim=None,
        seeds=(1, 2),
        device=DeviceProfile(name="host", core_count=2, ram_bytes=1 << 30),
        output_dir=str(tmp_path / "out"),
        pre_post_window_s=0.0,
        telemetry_interval_ms=100,
        predict_timeout_s=15.0,
    )
    report = run_benchmark(config)
    assert report.status == "partial"
    assert report.seeds[0].failure is not None
    assert report.seeds[1].failure is None
    assert len(report.seeds[1].records) == 6
    assert any("seed 1" in w for w in report.warnings)
    # Aggregates come from the surviving seed only.
    assert report.table_row["accuracy_avg"] == report.seeds[1].quality.accuracy
    # Partial reports persist and round-trip (failed seed carries no quality).
    from edgemark.report import save_report

    path = tmp_path / "partial.json"
    save_report(report, path)
    restored = load_report(path)
    assert restored.status == "partial"
    assert restored.seeds[0].quality is None
    assert report_to_dict(restored) == report_to_dict(report)


# --- comparison ---


def test_compare_reports_and_mismatch(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 30, name="shared.csv")
    fast = run_benchmark(sim_config(ds, tmp_path, n_seeds=2, latency=0.01, q_bits=8))
    slow = run_benchmark(sim_config(ds, tmp_path, n_seeds=2, latency=0.05, q_bits=32))
    table = compare([fast, slow])
    fast_label = table.labels[0]
    assert table.best["si"] == fast_label
    assert table.best["time_s"] == fast_label
    assert all(0.0 <= v <= 1.0 for norm in table.normalized for v in norm.values())

    other = make_text_dataset(make_dataset_csv, 31, name="other.csv")
    mismatched = run_benchmark(sim_config(other, tmp_path, n_seeds=2))
    from edgemark.report import DatasetMismatchError

    with pytest.raises(DatasetMismatchError):
        compare([fast, mismatched])


def test_compare_identical_reports_normalizes_to_ones(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 15, name="twin.csv")
    first = run_benchmark(sim_config(ds, tmp_path, n_seeds=2))
    second = run_benchmark(sim_config(ds, tmp_path, n_seeds=2))
    table = compare([first, second])
    assert all(v == 1.0 for norm in table.normalized for v in norm.values())


def test_compare_rows_published_extremes():
    rp3b_32 = {
        "device": "RP3B", "q_bits": 32, "power_kw": 2919.80, "time_s": 64719.0,
        "power_per_inference_w": 74.9, "time_per_inference_s": 1.66, "flops": 2.18e8,
        "accuracy_avg": 0.685, "fscore_avg": 0.602, "cpu_pct_avg": 83.9, "mem_pct_avg": 64.1,
    }
    rp4b_8 = {
        "device": "RP4B", "q_bits": 8, "power_kw": 1052.62, "time_s": 14851.0,
        "power_per_inference_w": 27.0, "time_per_inference_s": 0.38, "flops": 9.82e8,
        "accuracy_avg": 0.684, "fscore_avg": 0.603, "cpu_pct_avg": 33.4, "mem_pct_avg": 17.8,
    }
    enriched = compute_table_metrics([rp3b_32, rp4b_8])
    table = compare_rows(enriched)
    assert table.best["si"] == "RP4B/8"
    assert table.best["time_s"] == "RP4B/8"
    assert table.best["time_per_inference_s"] == "RP4B/8"


# --- CLI ---


def write_config_yaml(tmp_path, ds, out_dir, n_seeds=2, extra=None):
    config = {
        "dataset": {"path": str(ds), "labels": list(LABELS)},
        "runner": {
            "kind": "simulator",
            "q_bits": 8,
            "flops_per_inference": 3.42e8,
            "latency": {"kind": "constant", "seconds": 0.01},
        },
        "telemetry": {"pre_post_window_s": 0.0},
        "run": {"seeds": list(range(1, n_seeds + 1)), "output_dir": str(out_dir)},
        "device": {"name": "clibox"},
    }
    if extra:
        config.update(extra)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path


def test_cli_run_writes_artifacts(tmp_path, make_dataset_csv, capsys):
    ds = make_text_dataset(make_dataset_csv, 20)
    out_dir = tmp_path / "cli-out"
    config_path = write_config_yaml(tmp_path, ds, out_dir)
    code = cli_main(["run", "--config", str(config_path)])
    assert code == 0
    assert (out_dir / "report.json").is_file()
    assert (out_dir / "table.csv").is_file()
    assert (out_dir / "records.csv").is_file()
    report = load_report(out_dir / "report.json")
    assert report.status == "complete"
    from edgemark.report import TABLE_COLUMNS

    header = (out_dir / "table.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == ",".join(TABLE_COLUMNS)
    out = capsys.readouterr().out
    assert "status: complete" in out


def test_cli_run_config_error_exit_2(tmp_path):
    assert cli_main(["run", "--config", str(tmp_path / "none.yaml")]) == 2


def test_cli_metrics_stdout(tmp_path, make_dataset_csv, capsys):
    ds = make_text_dataset(make_dataset_csv, 10)
    out_dir = tmp_path / "m-out"
    config_path = write_config_yaml(tmp_path, ds, out_dir)
    assert cli_main(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    assert cli_main(["metrics", "--table", str(out_dir / "table.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split(",")
    parsed = dict(zip(header, next(csv.reader(lines[1:2]))))
    report = load_report(out_dir / "report.json")
    assert float(parsed["si"]) == report.si


def test_cli_report_plotdata_renders_figures(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 10)
    out_dir = tmp_path / "r-out"
    config_path = write_config_yaml(tmp_path, ds, out_dir)
    assert cli_main(["run", "--config", str(config_path)]) == 0
    plot_dir = tmp_path / "plotdata"
    assert cli_main(["report", str(out_dir / "report.json"), "--format", "plotdata", "--out-dir", str(plot_dir)]) == 0
    assert (plot_dir / "plotdata_attributes.csv").is_file()
    assert (plot_dir / "plotdata_metrics.csv").is_file()
    assert (plot_dir / "metric_bars.png").stat().st_size > 0


def test_cli_compare_writes_figures(tmp_path, make_dataset_csv):
    ds = make_text_dataset(make_dataset_csv, 12, name="cmp.csv")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    config_a = write_config_yaml(tmp_path, ds, out_a)
    assert cli_main(["run", "--config", str(config_a)]) == 0
    config_b = tmp_path / "config_b.yaml"
    raw = yaml.safe_load(config_a.read_text())
    raw["runner"]["q_bits"] = 32
    raw["runner"]["latency"] = {"kind": "constant", "seconds": 0.03}
    raw["run"]["output_dir"] = str(out_b)
    config_b.write_text(yaml.safe_dump(raw), encoding="utf-8")
    assert cli_main(["run", "--config", str(config_b)]) == 0
    cmp_dir = tmp_path / "cmp-out"
    code = cli_main(["compare", str(out_a / "report.json"), str(out_b / "report.json"), "--out-dir", str(cmp_dir)])
    assert code == 0
    assert (cmp_dir / "comparison.csv").is_file()
    assert (cmp_dir / "comparison_radar.png").stat().st_size > 0
    assert (cmp_dir / "comparison_bars.png").stat().st_size > 0


def test_cli_dataset_validate(tmp_path, make_dataset_csv, capsys):
    ds = make_text_dataset(make_dataset_csv, 9)
    assert cli_main(["dataset", "validate", str(ds), "--labels", ",".join(LABELS)]) == 0
    out = capsys.readouterr().out
    assert "rows: 9" in out
    bad = tmp_path / "bad.csv"
    bad.write_text("id,text,label\na,x\n", encoding="utf-8")
    assert cli_main(["dataset", "validate", str(bad)]) == 2


def test_cli_power_convert(tmp_path, capsys):
    frames = tmp_path / "frames.csv"
    write_frames([(0, 512), (100, 256)], frames)
    out = tmp_path / "converted.csv"
    assert cli_main(["power", "convert", str(frames), "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t_device_ms,adc_count,current_a,power_w"
    assert lines[1].startswith("0,512,2.5,")


def test_cli_replay_command(tmp_path, make_dataset_csv, capsys):
    ds = make_text_dataset(make_dataset_csv, 10)
    out_dir = tmp_path / "rpl-out"
    config_path = write_config_yaml(tmp_path, ds, out_dir)
    assert cli_main(["run", "--config", str(config_path)]) == 0
    capsys.readouterr()
    code = cli_main(
        [
            "replay",
            "--records", str(out_dir / "records.csv"),
            "--q-bits", "8",
            "--flops-per-inference", "3.42e8",
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    report = load_report(out_dir / "report.json")
    assert payload["table_row"]["si"] == report.si
