"""Command-line interface.

Subcommands: run, replay, metrics, compare, report, dataset validate,
power convert. Exit codes: 0 success, 1 benchmark failure, 2 configuration
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dataset import DatasetError, cleaning_stats, load_dataset
from .metrics import MetricsError
from .orchestrator import (
    BenchmarkError,
    ConfigError,
    load_benchmark_config,
    replay_metrics,
    run_benchmark,
)
from .power import ConversionMode, PowerError, SensorConfig, read_frames, write_converted_csv
from .report import (
    TABLE_COLUMNS,
    ReportError,
    RunReport,
    check_table_consistency,
    compare,
    compare_rows,
    compute_table_metrics,
    load_report,
    read_table_csv,
    report_to_dict,
    save_report,
    write_comparison_csv,
    write_records_csv,
    write_table_csv,
)
from .telemetry import write_trace_csv

logger = logging.getLogger(__name__)


def _add_sensor_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--v-ref", type=float, default=5.0)
    parser.add_argument("--adc-resolution", type=int, default=1024)
    parser.add_argument("--supply-voltage", type=float, default=5.0)
    parser.add_argument("--mode", choices=[m.value for m in ConversionMode], default="paper_formula")
    parser.add_argument("--offset-counts", type=int, default=0)
    parser.add_argument("--sensitivity-v-per-a", type=float, default=None)


def _sensor_from_args(args: argparse.Namespace) -> SensorConfig:
    return SensorConfig(
        v_ref=args.v_ref,
        adc_resolution=args.adc_resolution,
        supply_voltage=args.supply_voltage,
        mode=ConversionMode(args.mode),
        offset_counts=args.offset_counts,
        sensitivity_v_per_a=args.sensitivity_v_per_a,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgemark", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a benchmark from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seeds", help="comma-separated seed list overriding the config")
    p_run.add_argument("--power", help="serial:<dev>:<baud> | replay:<file> | none")
    p_run.add_argument("--output-dir", help="overrides EDGEMARK_OUTPUT_DIR and the config")

    p_replay = sub.add_parser("replay", help="recompute metrics from exported capture files")
    p_replay.add_argument("--records", required=True)
    p_replay.add_argument("--telemetry")
    p_replay.add_argument("--power")
    p_replay.add_argument("--q-bits", type=int, required=True, choices=[8, 16, 32])
    p_replay.add_argument("--flops-per-inference", type=float, required=True)
    p_replay.add_argument("--device", default="replay")
    p_replay.add_argument("--out-dir")
    _add_sensor_flags(p_replay)

    p_metrics = sub.add_parser("metrics", help="derive SI/MPI/RER for evaluation-table rows")
    p_metrics.add_argument("--table", required=True, help="CSV with evaluation-table columns")
    p_metrics.add_argument("--out-dir", help="write CSV and figures here instead of stdout")

    p_compare = sub.add_parser("compare", help="compare run reports side by side")
    p_compare.add_argument("reports", nargs="+")
    p_compare.add_argument("--out-dir", default=".")

    p_report = sub.add_parser("report", help="re-emit a report in another format")
    p_report.add_argument("report")
    p_report.add_argument("--format", required=True, choices=["json", "csv", "plotdata"])
    p_report.add_argument("--out-dir", default=".")

    p_dataset = sub.add_parser("dataset", help="dataset utilities")
    dataset_sub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_validate = dataset_sub.add_parser("validate", help="check a dataset file and print statistics")
    p_validate.add_argument("path")
    p_validate.add_argument("--labels", help="comma-separated declared label set")

    p_power = sub.add_parser("power", help="power capture utilities")
    power_sub = p_power.add_subparsers(dest="power_command", required=True)
    p_convert = power_sub.add_parser("convert", help="convert a frame file to a CSV with current and power")
    p_convert.add_argument("file")
    p_convert.add_argument("--out", help="output CSV path (default: <file>.converted.csv)")
    _add_sensor_flags(p_convert)

    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    config = load_benchmark_config(args.config, seeds=seeds, power=args.power, output_dir=args.output_dir)
    report = run_benchmark(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_run_outputs(report, out_dir)
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    row = report.table_row
    print(f"status: {report.status}")
    print(f"report: {out_dir / 'report.json'}")
    print(
        "si={si} mpi={mpi} rer={rer} time_s={time_s} time_per_inference_s={tpi}".format(
            si=row.get("si"), mpi=row.get("mpi"), rer=row.get("rer"),
            time_s=row.get("time_s"), tpi=row.get("time_per_inference_s"),
        )
    )
    return 0 if report.status in ("complete", "complete_with_warnings") else 1


def write_run_outputs(report: RunReport, out_dir: Path) -> list[Path]:
    """Persist the canonical report plus delimited exports for replay."""
    written = [out_dir / "report.json"]
    save_report(report, written[0])
    table_path = out_dir / "table.csv"
    write_table_csv([report.table_row], table_path)
    written.append(table_path)
    truth = _truth_from_report(report)
    records_path = out_dir / "records.csv"
    write_records_csv(report, truth, records_path)
    written.append(records_path)
    for sr in report.seeds:
        if sr.telemetry is not None and sr.telemetry.samples:
            path = out_dir / f"telemetry_seed{sr.seed}.csv"
            write_trace_csv(sr.telemetry, path)
            written.append(path)
    if report.power_trace is not None and report.power_trace.samples:
        path = out_dir / "power_frames.csv"
        with open(path, "w", encoding="ascii") as fh:
            for s in report.power_trace.samples:
                fh.write(f"{round(s.t_mono_ms)},{s.adc_count}\n")
        written.append(path)
    return written


def _truth_from_report(report: RunReport) -> dict[str, str]:
    # The dataset file is the source of truth; fall back to it when present.
    try:
        ds = load_dataset(report.dataset_info["path"], labels=report.dataset_info.get("label_set"))
        return {s.id: s.label for s in ds.samples}
    except (DatasetError, FileNotFoundError, KeyError):
        return {}


def _cmd_replay(args: argparse.Namespace) -> int:
    result = replay_metrics(
        records_csv=args.records,
        q_bits=args.q_bits,
        flops_per_inference=args.flops_per_inference,
        telemetry_csv=args.telemetry,
        power_csv=args.power,
        sensor=_sensor_from_args(args),
        device=args.device,
    )
    print(json.dumps(result, indent=2))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table_csv([result["table_row"]], out_dir / "table.csv")
    return 0 if not result["consistency_problems"] else 1


def _cmd_metrics(args: argparse.Namespace) -> int:
    rows = read_table_csv(args.table)
    enriched = compute_table_metrics(rows)
    problems = check_table_consistency(enriched)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table_csv(enriched, out_dir / "metrics.csv")
        if len(enriched) >= 2:
            from . import plots

            table = compare_rows(enriched)
            write_comparison_csv(table, out_dir / "normalized.csv")
            plots.render_attribute_radar(table, out_dir / "attributes_radar.png")
            plots.render_metric_bars(table.labels, enriched, out_dir / "metric_bars.png")
        print(f"wrote {out_dir}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(TABLE_COLUMNS)
        for row in enriched:
            writer.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in TABLE_COLUMNS])
    for problem in problems:
        print(f"consistency: {problem}", file=sys.stderr)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    reports = [load_report(p) for p in args.reports]
    table = compare(reports)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(table, out_dir / "comparison.csv")
    from . import plots

    plots.render_attribute_radar(table, out_dir / "comparison_radar.png")
    plots.render_metric_bars(table.labels, table.rows, out_dir / "comparison_bars.png")
    for attr in table.attributes:
        print(f"best {attr}: {table.best[attr]}")
    print(f"wrote {out_dir / 'comparison.csv'}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = load_report(args.report)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.format == "json":
        path = out_dir / "report.json"
        save_report(report, path)
        print(f"wrote {path}")
    elif args.format == "csv":
        path = out_dir / "table.csv"
        write_table_csv([report.table_row], path)
        print(f"wrote {path}")
    else:
        paths = emit_plotdata(report, out_dir)
        for path in paths:
            print(f"wrote {path}")
    return 0


def emit_plotdata(report: RunReport, out_dir: Path) -> list[Path]:
    """Delimited plot data plus rendered figures for one report."""
    from . import plots

    row = report.table_row
    label = f"{row.get('device')}/{row.get('q_bits')}"
    attr_path = out_dir / "plotdata_attributes.csv"
    with open(attr_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attribute", "value"])
        for col in TABLE_COLUMNS[1:]:
            if row.get(col) is not None:
                writer.writerow([col, repr(float(row[col]))])
    metrics_path = out_dir / "plotdata_metrics.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "si", "mpi", "rer"])
        writer.writerow([label] + ["" if row.get(k) is None else repr(float(row[k])) for k in ("si", "mpi", "rer")])
    figure = plots.render_metric_bars([label], [row], out_dir / "metric_bars.png")
    return [attr_path, metrics_path, figure]


def _cmd_dataset_validate(args: argparse.Namespace) -> int:
    labels = tuple(args.labels.split(",")) if args.labels else None
    ds = load_dataset(args.path, labels=labels)
    stats = cleaning_stats(ds)
    print(f"rows: {stats['rows']}")
    print("label histogram:")
    for label, count in stats["label_histogram"].items():
        print(f"  {label}: {count}")
    print(f"rows changed by cleaning: {stats['rows_changed_by_cleaning']}")
    print(f"characters removed: {stats['chars_removed_total']}")
    return 0


def _cmd_power_convert(args: argparse.Namespace) -> int:
    cfg = _sensor_from_args(args)
    frames = read_frames(args.file, cfg)
    out = Path(args.out) if args.out else Path(args.file).with_suffix(".converted.csv")
    write_converted_csv(frames, cfg, out)
    print(f"wrote {out} ({len(frames)} frames)")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "metrics":
            return _cmd_metrics(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "dataset":
            return _cmd_dataset_validate(args)
        if args.command == "power":
            return _cmd_power_convert(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (BenchmarkError, ReportError, MetricsError, PowerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
