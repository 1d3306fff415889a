"""Benchmark report model: canonical JSON, table rows, comparisons, replay.

A run report carries the resolved config, per-seed records and quality
scores, telemetry/power traces, the metric inputs, and one evaluation-table
row. Reports round-trip through JSON; table rows round-trip through CSV at
full float precision so recomputed metrics match bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import socket
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .metrics import (
    MetricInputs,
    MetricsError,
    QualityScores,
    model_performance_index,
    normalize_attributes,
    resource_efficiency_ratio,
    speed_index,
)
from .power import PowerSample, PowerTrace, SensorConfig, ConversionMode
from .runner import InferenceRecord
from .telemetry import Phase, Scope, TelemetrySample, TelemetryTrace

SCHEMA = "edgemark-report-v1"

TABLE_COLUMNS = [
    "device",
    "q_bits",
    "power_kw",
    "time_s",
    "power_per_inference_w",
    "time_per_inference_s",
    "flops",
    "accuracy_avg",
    "fscore_avg",
    "cpu_pct_avg",
    "mem_pct_avg",
    "energy_j",
    "si",
    "mpi",
    "rer",
]

HIGHER_IS_BETTER = {"flops", "accuracy_avg", "fscore_avg", "si", "mpi", "rer"}

RECORDS_CSV_HEADER = [
    "seed",
    "sample_id",
    "true_label",
    "predicted_label",
    "latency_s",
    "t_start_ms",
    "t_end_ms",
]


class ReportError(Exception):
    pass


class DatasetMismatchError(ReportError):
    pass


@dataclass
class SeedResult:
    seed: int
    records: tuple[InferenceRecord, ...]
    quality: QualityScores | None
    during_start_ms: float
    during_end_ms: float
    time_s: float
    telemetry: TelemetryTrace | None
    runner_exit: str
    failure: str | None = None


@dataclass
class RunReport:
    meta: dict
    config: dict
    dataset_info: dict
    status: str
    warnings: list[str]
    seeds: list[SeedResult]
    power_trace: PowerTrace | None
    metric_inputs: MetricInputs | None
    si: float | None
    mpi: float | None
    rer: float | None
    accuracy_std: float | None
    fscore_std: float | None
    table_row: dict


def make_meta(clock_source: str) -> dict:
    return {
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "host": socket.gethostname(),
        "harness_version": __version__,
        "clock_source": clock_source,
        "fscore_averaging": "macro",
    }


# --- serialization ---------------------------------------------------------


def _record_to_dict(r: InferenceRecord) -> dict:
    d = {
        "sample_id": r.sample_id,
        "predicted_label": r.predicted_label,
        "latency_s": r.latency_s,
        "t_start_ms": r.t_start_ms,
        "t_end_ms": r.t_end_ms,
    }
    if r.runner_latency_s is not None:
        d["runner_latency_s"] = r.runner_latency_s
    return d


def _record_from_dict(d: dict) -> InferenceRecord:
    return InferenceRecord(
        sample_id=d["sample_id"],
        predicted_label=d["predicted_label"],
        latency_s=d["latency_s"],
        t_start_ms=d["t_start_ms"],
        t_end_ms=d["t_end_ms"],
        runner_latency_s=d.get("runner_latency_s"),
    )


def _quality_to_dict(q: QualityScores) -> dict:
    return {
        "accuracy": q.accuracy,
        "f_score_macro": q.f_score_macro,
        "per_class_precision": q.per_class_precision,
        "per_class_recall": q.per_class_recall,
        "per_class_f1": q.per_class_f1,
        "n_correct": q.n_correct,
        "n_total": q.n_total,
    }


def _quality_from_dict(d: dict) -> QualityScores:
    return QualityScores(
        accuracy=d["accuracy"],
        f_score_macro=d["f_score_macro"],
        per_class_precision=dict(d["per_class_precision"]),
        per_class_recall=dict(d["per_class_recall"]),
        per_class_f1=dict(d["per_class_f1"]),
        n_correct=d["n_correct"],
        n_total=d["n_total"],
    )


def _telemetry_to_dict(trace: TelemetryTrace | None) -> dict | None:
    if trace is None:
        return None
    return {
        "interval_ms": trace.interval_ms,
        "target_pid": trace.target_pid,
        "samples": [
            [s.t_mono_ms, s.scope.value, s.phase.value, s.cpu_pct, s.mem_pct] for s in trace.samples
        ],
    }


def _telemetry_from_dict(d: dict | None) -> TelemetryTrace | None:
    if d is None:
        return None
    samples = tuple(
        TelemetrySample(t_mono_ms=row[0], scope=Scope(row[1]), phase=Phase(row[2]), cpu_pct=row[3], mem_pct=row[4])
        for row in d["samples"]
    )
    return TelemetryTrace(samples=samples, interval_ms=d["interval_ms"], target_pid=d.get("target_pid"))


def _sensor_to_dict(cfg: SensorConfig) -> dict:
    return {
        "v_ref": cfg.v_ref,
        "adc_resolution": cfg.adc_resolution,
        "supply_voltage": cfg.supply_voltage,
        "mode": cfg.mode.value,
        "offset_counts": cfg.offset_counts,
        "sensitivity_v_per_a": cfg.sensitivity_v_per_a,
    }


def _sensor_from_dict(d: dict) -> SensorConfig:
    return SensorConfig(
        v_ref=d["v_ref"],
        adc_resolution=d["adc_resolution"],
        supply_voltage=d["supply_voltage"],
        mode=ConversionMode(d["mode"]),
        offset_counts=d.get("offset_counts", 0),
        sensitivity_v_per_a=d.get("sensitivity_v_per_a"),
    )


def _power_to_dict(trace: PowerTrace | None) -> dict | None:
    if trace is None:
        return None
    return {
        "config": _sensor_to_dict(trace.config),
        "samples": [
            [s.t_device_ms, s.t_mono_ms, s.adc_count, s.current_a, s.power_w] for s in trace.samples
        ],
    }


def _power_from_dict(d: dict | None) -> PowerTrace | None:
    if d is None:
        return None
    samples = tuple(
        PowerSample(t_device_ms=row[0], t_mono_ms=row[1], adc_count=row[2], current_a=row[3], power_w=row[4])
        for row in d["samples"]
    )
    return PowerTrace(samples=samples, config=_sensor_from_dict(d["config"]))


def _inputs_to_dict(mi: MetricInputs | None) -> dict | None:
    if mi is None:
        return None
    return {
        "flops_throughput": mi.flops_throughput,
        "q_bits": mi.q_bits,
        "total_time_s": mi.total_time_s,
        "accuracy_avg": mi.accuracy_avg,
        "fscore_avg": mi.fscore_avg,
        "power_tot_kw": mi.power_tot_kw,
        "energy_tot_j": mi.energy_tot_j,
        "cpu_pct_avg": mi.cpu_pct_avg,
        "mem_pct_avg": mi.mem_pct_avg,
    }


def _inputs_from_dict(d: dict | None) -> MetricInputs | None:
    if d is None:
        return None
    return MetricInputs(**d)


def report_to_dict(report: RunReport) -> dict:
    return {
        "schema": SCHEMA,
        "meta": report.meta,
        "config": report.config,
        "dataset": report.dataset_info,
        "status": report.status,
        "warnings": report.warnings,
        "seeds": [
            {
                "seed": sr.seed,
                "during_start_ms": sr.during_start_ms,
                "during_end_ms": sr.during_end_ms,
                "time_s": sr.time_s,
                "runner_exit": sr.runner_exit,
                "failure": sr.failure,
                "quality": _quality_to_dict(sr.quality) if sr.quality else None,
                "records": [_record_to_dict(r) for r in sr.records],
                "telemetry": _telemetry_to_dict(sr.telemetry),
            }
            for sr in report.seeds
        ],
        "power": _power_to_dict(report.power_trace),
        "metric_inputs": _inputs_to_dict(report.metric_inputs),
        "metrics": {"si": report.si, "mpi": report.mpi, "rer": report.rer},
        "quality_spread": {"accuracy_std": report.accuracy_std, "fscore_std": report.fscore_std},
        "table_row": report.table_row,
    }


def report_from_dict(d: dict) -> RunReport:
    if d.get("schema") != SCHEMA:
        raise ReportError(f"unsupported report schema: {d.get('schema')!r}")
    seeds = [
        SeedResult(
            seed=sd["seed"],
            records=tuple(_record_from_dict(r) for r in sd["records"]),
            quality=_quality_from_dict(sd["quality"]) if sd.get("quality") else None,
            during_start_ms=sd["during_start_ms"],
            during_end_ms=sd["during_end_ms"],
            time_s=sd["time_s"],
            telemetry=_telemetry_from_dict(sd.get("telemetry")),
            runner_exit=sd["runner_exit"],
            failure=sd.get("failure"),
        )
        for sd in d["seeds"]
    ]
    spread = d.get("quality_spread", {})
    return RunReport(
        meta=d["meta"],
        config=d["config"],
        dataset_info=d["dataset"],
        status=d["status"],
        warnings=list(d.get("warnings", [])),
        seeds=seeds,
        power_trace=_power_from_dict(d.get("power")),
        metric_inputs=_inputs_from_dict(d.get("metric_inputs")),
        si=d["metrics"]["si"],
        mpi=d["metrics"]["mpi"],
        rer=d["metrics"]["rer"],
        accuracy_std=spread.get("accuracy_std"),
        fscore_std=spread.get("fscore_std"),
        table_row=dict(d["table_row"]),
    )


def save_report(report: RunReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")


def load_report(path: str | Path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))


def report_content_hash(report: RunReport) -> str:
    """Hash of the deterministic report content (wall-clock metadata excluded)."""
    d = report_to_dict(report)
    d.pop("meta", None)
    config = dict(d.get("config", {}))
    config.pop("output_dir", None)
    d["config"] = config
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- table rows ------------------------------------------------------------


def build_table_row(device: str, inputs: MetricInputs, n_inferences: int, power_per_inference_w: float | None) -> dict:
    """One evaluation-table row plus the three composite metrics."""
    si = speed_index(inputs)
    mpi = rer = None
    if inputs.power_tot_kw:
        mpi = model_performance_index(inputs)
    if inputs.cpu_pct_avg and inputs.mem_pct_avg and inputs.energy_tot_j is not None:
        rer = resource_efficiency_ratio(inputs)
    return {
        "device": device,
        "q_bits": inputs.q_bits,
        "power_kw": inputs.power_tot_kw,
        "time_s": inputs.total_time_s,
        "power_per_inference_w": power_per_inference_w,
        "time_per_inference_s": inputs.total_time_s / n_inferences,
        "flops": inputs.flops_throughput,
        "accuracy_avg": inputs.accuracy_avg,
        "fscore_avg": inputs.fscore_avg,
        "cpu_pct_avg": inputs.cpu_pct_avg,
        "mem_pct_avg": inputs.mem_pct_avg,
        "energy_j": inputs.energy_tot_j,
        "si": si,
        "mpi": mpi,
        "rer": rer,
    }


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row.get(col)) for col in TABLE_COLUMNS])


def read_table_csv(path: str | Path) -> list[dict]:
    """Read an evaluation table; missing optional columns parse as None."""
    rows: list[dict] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ReportError(f"empty table file: {path}")
        unknown = set(reader.fieldnames) - set(TABLE_COLUMNS)
        if unknown:
            raise ReportError(f"unknown table columns: {sorted(unknown)}")
        required = {"device", "q_bits", "time_s", "flops", "accuracy_avg", "fscore_avg"}
        missing = required - set(reader.fieldnames)
        if missing:
            raise ReportError(f"table is missing required columns: {sorted(missing)}")
        for raw in reader:
            row: dict = {}
            for col in TABLE_COLUMNS:
                value = raw.get(col)
                if value is None or value == "":
                    row[col] = None
                elif col == "device":
                    row[col] = value
                elif col == "q_bits":
                    row[col] = int(value)
                else:
                    row[col] = float(value)
            rows.append(row)
    if not rows:
        raise ReportError(f"no data rows in table: {path}")
    return rows


def compute_table_metrics(rows: list[dict]) -> list[dict]:
    """Recompute SI/MPI/RER for table rows (input si/mpi/rer columns are ignored).

    When no energy column is present, total energy is reconstructed as
    per-inference power times total time (a time-weighted mean power model).
    """
    out = []
    for row in rows:
        energy = row.get("energy_j")
        if energy is None and row.get("power_per_inference_w") is not None:
            energy = row["power_per_inference_w"] * row["time_s"]
        inputs = MetricInputs(
            flops_throughput=row["flops"],
            q_bits=row["q_bits"],
            total_time_s=row["time_s"],
            accuracy_avg=row["accuracy_avg"],
            fscore_avg=row["fscore_avg"],
            power_tot_kw=row.get("power_kw"),
            energy_tot_j=energy,
            cpu_pct_avg=row.get("cpu_pct_avg"),
            mem_pct_avg=row.get("mem_pct_avg"),
        )
        enriched = dict(row)
        enriched["energy_j"] = energy
        enriched["si"] = speed_index(inputs)
        try:
            enriched["mpi"] = model_performance_index(inputs)
        except MetricsError:
            enriched["mpi"] = None
        try:
            enriched["rer"] = resource_efficiency_ratio(inputs)
        except MetricsError:
            enriched["rer"] = None
        out.append(enriched)
    return out


# --- consistency checks ----------------------------------------------------


def check_row_consistency(row: dict, tolerance: float = 0.02) -> list[str]:
    """Inference counts implied by power and by time must agree within tolerance."""
    problems = []
    if row.get("power_kw") is None or row.get("power_per_inference_w") is None:
        return problems
    if row.get("time_per_inference_s") in (None, 0):
        return problems
    n_power = row["power_kw"] * 1000.0 / row["power_per_inference_w"]
    n_time = row["time_s"] / row["time_per_inference_s"]
    rel = abs(n_power - n_time) / ((n_power + n_time) / 2.0)
    if rel > tolerance:
        problems.append(
            f"row {row.get('device')}/{row.get('q_bits')}: implied inference counts disagree "
            f"(power {n_power:.1f} vs time {n_time:.1f}, {rel * 100:.2f}% > {tolerance * 100:.0f}%)"
        )
    return problems


def check_flops_constancy(rows: list[dict], tolerance: float = 0.05) -> list[str]:
    """flops * time_per_inference must be constant across rows within tolerance."""
    values = []
    for row in rows:
        if row.get("flops") is not None and row.get("time_per_inference_s") is not None:
            values.append((row, row["flops"] * row["time_per_inference_s"]))
    if len(values) < 2:
        return []
    mean = sum(v for _, v in values) / len(values)
    problems = []
    for row, v in values:
        rel = abs(v - mean) / mean
        if rel > tolerance:
            problems.append(
                f"row {row.get('device')}/{row.get('q_bits')}: work per inference {v:.4g} "
                f"deviates {rel * 100:.1f}% from the cross-row mean {mean:.4g} (> {tolerance * 100:.0f}%)"
            )
    return problems


def check_table_consistency(rows: list[dict], n_tolerance: float = 0.02, flops_tolerance: float = 0.05) -> list[str]:
    problems = []
    for row in rows:
        problems.extend(check_row_consistency(row, n_tolerance))
    problems.extend(check_flops_constancy(rows, flops_tolerance))
    return problems


# --- comparison ------------------------------------------------------------


@dataclass
class ComparisonTable:
    labels: list[str]
    rows: list[dict]
    attributes: list[str]
    normalized: list[dict[str, float]]
    best: dict[str, str]


def compare_rows(rows: list[dict], labels: list[str] | None = None) -> ComparisonTable:
    """Side-by-side comparison of table rows with normalization and best markers."""
    if len(rows) < 2:
        raise ReportError("comparison needs at least 2 rows")
    if labels is None:
        labels = [f"{row.get('device')}/{row.get('q_bits')}" for row in rows]
    numeric = [c for c in TABLE_COLUMNS if c not in ("device",)]
    attributes = [c for c in numeric if all(row.get(c) is not None for row in rows)]
    vectors = [{a: float(row[a]) for a in attributes} for row in rows]
    normalized = normalize_attributes(vectors)
    best: dict[str, str] = {}
    for attr in attributes:
        values = [row[attr] for row in rows]
        idx = max(range(len(values)), key=lambda i: values[i]) if attr in HIGHER_IS_BETTER else min(
            range(len(values)), key=lambda i: values[i]
        )
        best[attr] = labels[idx]
    return ComparisonTable(labels=labels, rows=rows, attributes=attributes, normalized=normalized, best=best)


def compare(reports: list[RunReport]) -> ComparisonTable:
    """Compare run reports over a shared dataset (fingerprints must match)."""
    if len(reports) < 2:
        raise ReportError("comparison needs at least 2 reports")
    fingerprints = {r.dataset_info.get("sha256") for r in reports}
    if len(fingerprints) != 1:
        raise DatasetMismatchError("reports were produced over differing datasets")
    labels = [f"{r.table_row.get('device')}/{r.table_row.get('q_bits')} (seed x{len(r.seeds)})" for r in reports]
    return compare_rows([r.table_row for r in reports], labels=labels)


def write_comparison_csv(table: ComparisonTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row"] + TABLE_COLUMNS[1:] + [f"norm_{a}" for a in table.attributes])
        for label, row, norm in zip(table.labels, table.rows, table.normalized):
            writer.writerow(
                [label]
                + [_format_cell(row.get(c)) for c in TABLE_COLUMNS[1:]]
                + [_format_cell(norm[a]) for a in table.attributes]
            )
        writer.writerow([])
        writer.writerow(["best_per_attribute"])
        for attr in table.attributes:
            writer.writerow([attr, table.best[attr]])


# --- records CSV -----------------------------------------------------------


def write_records_csv(report: RunReport, truth_by_id: dict[str, str], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORDS_CSV_HEADER)
        for sr in report.seeds:
            for r in sr.records:
                writer.writerow(
                    [
                        sr.seed,
                        r.sample_id,
                        truth_by_id.get(r.sample_id, ""),
                        r.predicted_label,
                        repr(r.latency_s),
                        repr(r.t_start_ms),
                        repr(r.t_end_ms),
                    ]
                )


def read_records_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORDS_CSV_HEADER:
            raise ReportError(f"expected records header {RECORDS_CSV_HEADER}, got {reader.fieldnames}")
        for raw in reader:
            rows.append(
                {
                    "seed": int(raw["seed"]),
                    "sample_id": raw["sample_id"],
                    "true_label": raw["true_label"],
                    "predicted_label": raw["predicted_label"],
                    "latency_s": float(raw["latency_s"]),
                    "t_start_ms": float(raw["t_start_ms"]),
                    "t_end_ms": float(raw["t_end_ms"]),
                }
            )
    if not rows:
        raise ReportError(f"no records in {path}")
    return rows
