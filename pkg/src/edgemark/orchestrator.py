"""Benchmark coordination: config, the per-seed phase sequence, and replay.

One run executes, for every seed: a pre-run telemetry window, runner spawn,
the measured predict loop with telemetry and power capture, runner shutdown,
and a post-run telemetry window. All processing is local; nothing talks to a
network service. Simulator-backed runs advance a virtual clock instead of
sleeping and skip live telemetry so repeated runs are bit-identical.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import psutil
import yaml

from .clock import RealClock, SimulatedClock
from .dataset import Dataset, dataset_fingerprint, load_dataset
from .metrics import MetricInputs, flops_throughput, score_pairs, seed_mean_std, quality
from .power import (
    ConversionMode,
    FrameIngestor,
    PowerError,
    PowerTrace,
    SensorConfig,
    frames_to_trace,
    open_serial_device,
    power_aggregates,
    read_frames,
)
from .report import (
    TABLE_COLUMNS,
    RunReport,
    SeedResult,
    build_table_row,
    check_table_consistency,
    make_meta,
)
from .runner import (
    ConstantLatency,
    LatencyModel,
    LogNormalLatency,
    RunnerError,
    RunnerSpec,
    SimProfile,
    SimulatorSession,
    spawn_runner,
)
from .telemetry import (
    Phase,
    Scope,
    TelemetryError,
    TelemetryTrace,
    merge_traces,
    read_trace_csv,
    start_sampler,
)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)

ENV_OUTPUT_DIR = "EDGEMARK_OUTPUT_DIR"


class ConfigError(Exception):
    pass


class BenchmarkError(Exception):
    pass


class PhaseError(BenchmarkError):
    """A module error wrapped with the phase and seed where it happened."""

    def __init__(self, phase: str, seed: int, cause: Exception):
        super().__init__(f"seed {seed}, phase {phase}: {cause}")
        self.phase = phase
        self.seed = seed
        self.cause = cause


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    core_count: int
    ram_bytes: int

    def __post_init__(self):
        if self.core_count < 1:
            raise ConfigError("device core_count must be >= 1")

    @classmethod
    def detect(cls, name: str | None = None) -> "DeviceProfile":
        import socket

        return cls(
            name=name or socket.gethostname(),
            core_count=psutil.cpu_count(logical=True) or 1,
            ram_bytes=psutil.virtual_memory().total,
        )


@dataclass(frozen=True)
class PowerSourceSpec:
    kind: str  # none | serial | replay
    path: str | None = None
    baud: int | None = None

    @classmethod
    def parse(cls, text: str) -> "PowerSourceSpec":
        if text == "none":
            return cls(kind="none")
        if text.startswith("replay:"):
            return cls(kind="replay", path=text.split(":", 1)[1])
        if text.startswith("serial:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise ConfigError("serial power source must look like serial:<device>:<baud>")
            return cls(kind="serial", path=parts[1], baud=int(parts[2]))
        raise ConfigError(f"unknown power source {text!r}")

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "replay":
            return f"replay:{self.path}"
        return f"serial:{self.path}:{self.baud}"


@dataclass(frozen=True)
class SimConfig:
    """Simulator workload: confusion matrix (identity when omitted) and latency."""

    latency: LatencyModel
    confusion: tuple[tuple[float, ...], ...] | None = None


@dataclass
class BenchmarkConfig:
    dataset_path: str
    labels: tuple[str, ...] | None
    q_bits: int
    flops_per_inference: float
    runner_spec: RunnerSpec | None
    sim: SimConfig | None
    telemetry_interval_ms: int = 1000
    pre_post_window_s: float = 10.0
    power_source: PowerSourceSpec = field(default_factory=lambda: PowerSourceSpec(kind="none"))
    sensor: SensorConfig = field(default_factory=SensorConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    device: DeviceProfile = field(default_factory=DeviceProfile.detect)
    output_dir: str = "edgemark-out"
    warmup_count: int = 0
    predict_timeout_s: float = 120.0
    handshake_timeout_s: float = 30.0
    shutdown_grace_s: float = 5.0

    def __post_init__(self):
        if (self.runner_spec is None) == (self.sim is None):
            raise ConfigError("exactly one of a process runner or a simulator must be configured")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be nonempty and distinct")
        if self.q_bits not in (8, 16, 32):
            raise ConfigError("q_bits must be 8, 16, or 32")
        if self.flops_per_inference <= 0:
            raise ConfigError("flops_per_inference must be positive")
        if self.telemetry_interval_ms <= 0:
            raise ConfigError("telemetry_interval_ms must be positive")
        if self.warmup_count < 0:
            raise ConfigError("warmup_count must be nonnegative")

    @property
    def simulated(self) -> bool:
        return self.sim is not None

    def snapshot(self) -> dict:
        """Resolved config embedded in every report."""
        runner: dict = {"q_bits": self.q_bits, "flops_per_inference": self.flops_per_inference}
        if self.runner_spec is not None:
            runner.update(
                kind="process",
                command=self.runner_spec.command,
                args=list(self.runner_spec.args),
                env=dict(self.runner_spec.env),
                model_path=self.runner_spec.model_path,
            )
        else:
            latency = self.sim.latency
            if isinstance(latency, ConstantLatency):
                latency_d = {"kind": "constant", "seconds": latency.seconds}
            else:
                latency_d = {"kind": "lognormal", "mu": latency.mu, "sigma": latency.sigma}
            runner.update(
                kind="simulator",
                latency=latency_d,
                confusion=[list(row) for row in self.sim.confusion] if self.sim.confusion else None,
            )
        return {
            "dataset_path": self.dataset_path,
            "labels": list(self.labels) if self.labels else None,
            "runner": runner,
            "telemetry": {
                "interval_ms": self.telemetry_interval_ms,
                "pre_post_window_s": self.pre_post_window_s,
            },
            "power": {
                "source": self.power_source.describe(),
                "sensor": {
                    "v_ref": self.sensor.v_ref,
                    "adc_resolution": self.sensor.adc_resolution,
                    "supply_voltage": self.sensor.supply_voltage,
                    "mode": self.sensor.mode.value,
                    "offset_counts": self.sensor.offset_counts,
                    "sensitivity_v_per_a": self.sensor.sensitivity_v_per_a,
                },
            },
            "run": {
                "seeds": list(self.seeds),
                "warmup_count": self.warmup_count,
                "predict_timeout_s": self.predict_timeout_s,
                "handshake_timeout_s": self.handshake_timeout_s,
                "shutdown_grace_s": self.shutdown_grace_s,
            },
            "device": {
                "name": self.device.name,
                "core_count": self.device.core_count,
                "ram_bytes": self.device.ram_bytes,
            },
            "output_dir": self.output_dir,
        }


def _parse_latency(d: dict) -> LatencyModel:
    kind = d.get("kind")
    if kind == "constant":
        return ConstantLatency(seconds=float(d["seconds"]))
    if kind == "lognormal":
        return LogNormalLatency(mu=float(d["mu"]), sigma=float(d["sigma"]))
    raise ConfigError(f"unknown latency model kind {kind!r}")


def load_benchmark_config(
    path: str | Path,
    seeds: tuple[int, ...] | None = None,
    power: str | None = None,
    output_dir: str | None = None,
) -> BenchmarkConfig:
    """Load a YAML config file and apply CLI/environment overrides.

    Precedence for the output directory: --output-dir flag, then the
    EDGEMARK_OUTPUT_DIR environment variable, then the config file.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must be a mapping")

    try:
        dataset_section = raw["dataset"]
        runner_section = raw["runner"]
        dataset_path = str(dataset_section["path"])
        labels = tuple(dataset_section["labels"]) if dataset_section.get("labels") else None
        q_bits = int(runner_section["q_bits"])
        fpi = float(runner_section["flops_per_inference"])
        kind = runner_section.get("kind", "simulator")
        runner_spec = None
        sim = None
        if kind == "process":
            runner_spec = RunnerSpec(
                command=str(runner_section["command"]),
                args=tuple(str(a) for a in runner_section.get("args", [])),
                env={str(k): str(v) for k, v in (runner_section.get("env") or {}).items()},
                model_path=runner_section.get("model_path"),
                q_bits=q_bits,
                flops_per_inference=fpi,
            )
        elif kind == "simulator":
            confusion = runner_section.get("confusion")
            sim = SimConfig(
                latency=_parse_latency(runner_section.get("latency", {"kind": "constant", "seconds": 0.01})),
                confusion=tuple(tuple(float(x) for x in row) for row in confusion) if confusion else None,
            )
        else:
            raise ConfigError(f"unknown runner kind {kind!r}")

        telemetry_section = raw.get("telemetry", {})
        power_section = raw.get("power", {})
        run_section = raw.get("run", {})
        device_section = raw.get("device", {})

        sensor = SensorConfig(
            v_ref=float(power_section.get("v_ref", 5.0)),
            adc_resolution=int(power_section.get("adc_resolution", 1024)),
            supply_voltage=float(power_section.get("supply_voltage", 5.0)),
            mode=ConversionMode(power_section.get("mode", "paper_formula")),
            offset_counts=int(power_section.get("offset_counts", 0)),
            sensitivity_v_per_a=power_section.get("sensitivity_v_per_a"),
        )
        source = PowerSourceSpec.parse(power or power_section.get("source", "none"))

        device = DeviceProfile.detect(device_section.get("name"))
        if "core_count" in device_section or "ram_bytes" in device_section:
            device = DeviceProfile(
                name=device.name,
                core_count=int(device_section.get("core_count", device.core_count)),
                ram_bytes=int(device_section.get("ram_bytes", device.ram_bytes)),
            )

        resolved_output = output_dir or os.environ.get(ENV_OUTPUT_DIR) or run_section.get("output_dir", "edgemark-out")

        return BenchmarkConfig(
            dataset_path=dataset_path,
            labels=labels,
            q_bits=q_bits,
            flops_per_inference=fpi,
            runner_spec=runner_spec,
            sim=sim,
            telemetry_interval_ms=int(telemetry_section.get("interval_ms", 1000)),
            pre_post_window_s=float(telemetry_section.get("pre_post_window_s", 10.0)),
            power_source=source,
            sensor=sensor,
            seeds=tuple(int(s) for s in (seeds or run_section.get("seeds", DEFAULT_SEEDS))),
            device=device,
            output_dir=str(resolved_output),
            warmup_count=int(run_section.get("warmup_count", 0)),
            predict_timeout_s=float(run_section.get("predict_timeout_s", 120.0)),
            handshake_timeout_s=float(run_section.get("handshake_timeout_s", 30.0)),
            shutdown_grace_s=float(run_section.get("shutdown_grace_s", 5.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _build_sim_profile(sim: SimConfig, labels: tuple[str, ...]) -> SimProfile:
    if sim.confusion is None:
        return SimProfile.identity(labels, sim.latency, seed=0)
    return SimProfile(seed=0, labels=labels, confusion=sim.confusion, latency_model=sim.latency)


@dataclass
class _SeedOutcome:
    result: SeedResult
    power_trace: PowerTrace | None


def _capture_power_start(config: BenchmarkConfig, clock) -> tuple[FrameIngestor | None, float]:
    """Begin power capture for one seed; returns (live ingestor or None, anchor ms)."""
    anchor = clock.now_ms()
    if config.power_source.kind == "serial":
        stream = open_serial_device(config.power_source.path, config.power_source.baud)
        return FrameIngestor(stream, config.sensor).start(), anchor
    return None, anchor


def _capture_power_stop(config: BenchmarkConfig, ingestor: FrameIngestor | None, anchor_ms: float) -> PowerTrace | None:
    if config.power_source.kind == "none":
        return None
    if config.power_source.kind == "serial":
        frames = ingestor.stop()
    else:
        frames = read_frames(config.power_source.path, config.sensor)
    return frames_to_trace(frames, config.sensor, anchor_ms)


def _run_seed(config: BenchmarkConfig, ds: Dataset, seed: int, clock, profile: SimProfile | None) -> _SeedOutcome:
    interval = config.telemetry_interval_ms
    telemetry_parts: list[TelemetryTrace] = []
    simulated = profile is not None

    if not simulated and config.pre_post_window_s > 0:
        pre = start_sampler(None, interval, Phase.PRE, clock)
        time.sleep(config.pre_post_window_s)
        telemetry_parts.append(pre.stop())

    try:
        if simulated:
            session = SimulatorSession(profile.with_seed(seed), ds.label_set, clock)
        else:
            session = spawn_runner(
                config.runner_spec,
                ds.label_set,
                handshake_timeout_s=config.handshake_timeout_s,
                predict_timeout_s=config.predict_timeout_s,
                clock=clock,
            )
    except RunnerError as exc:
        raise PhaseError("spawn", seed, exc) from exc

    during_sampler = None
    ingestor = None
    power_started = False
    power_anchor_ms = 0.0
    records = []
    failure = None
    try:
        if not simulated:
            during_sampler = start_sampler(session.pid, interval, Phase.DURING, clock)
        ingestor, power_anchor_ms = _capture_power_start(config, clock)
        power_started = True

        for sample in ds.samples[: config.warmup_count]:
            session.predict(sample)

        for sample in ds.samples:
            records.append(session.predict(sample))
    except (RunnerError, PowerError, TelemetryError) as exc:
        failure = str(PhaseError("during", seed, exc))
    finally:
        power_trace = None
        if power_started and config.power_source.kind != "none":
            try:
                power_trace = _capture_power_stop(config, ingestor, power_anchor_ms)
            except PowerError as exc:
                failure = failure or str(PhaseError("power-capture", seed, exc))
        if during_sampler is not None:
            telemetry_parts.append(during_sampler.stop())
        exit_status = session.shutdown(config.shutdown_grace_s)

    if not simulated and config.pre_post_window_s > 0:
        post = start_sampler(None, interval, Phase.POST, clock)
        time.sleep(config.pre_post_window_s)
        telemetry_parts.append(post.stop())

    scores = quality(records, ds) if records and failure is None else None
    if records:
        during_start = records[0].t_start_ms
        during_end = records[-1].t_end_ms
    else:
        during_start = during_end = clock.now_ms()
    result = SeedResult(
        seed=seed,
        records=tuple(records),
        quality=scores,
        during_start_ms=during_start,
        during_end_ms=during_end,
        time_s=(during_end - during_start) / 1000.0,
        telemetry=merge_traces(telemetry_parts) if telemetry_parts else None,
        runner_exit=exit_status.describe(),
        failure=failure,
    )
    return _SeedOutcome(result=result, power_trace=power_trace)


def run_benchmark(config: BenchmarkConfig) -> RunReport:
    """Execute the full multi-seed benchmark and assemble the report.

    A runner failure aborts its seed; completed seeds are kept and the report
    is marked partial.
    """
    ds = load_dataset(config.dataset_path, labels=config.labels)
    profile = _build_sim_profile(config.sim, ds.label_set) if config.simulated else None
    clock = SimulatedClock() if config.simulated else RealClock()
    warnings: list[str] = []

    outcomes: list[_SeedOutcome] = []
    for seed in config.seeds:
        try:
            outcomes.append(_run_seed(config, ds, seed, clock, profile))
        except PhaseError as exc:
            warnings.append(str(exc))
            outcomes.append(
                _SeedOutcome(
                    result=SeedResult(
                        seed=seed,
                        records=(),
                        quality=None,
                        during_start_ms=clock.now_ms(),
                        during_end_ms=clock.now_ms(),
                        time_s=0.0,
                        telemetry=None,
                        runner_exit="spawn-failed",
                        failure=str(exc),
                    ),
                    power_trace=None,
                )
            )

    seed_results = [o.result for o in outcomes]
    complete = [r for r in seed_results if r.failure is None and r.records]
    for r in seed_results:
        if r.failure:
            warnings.append(r.failure)
    status = "complete" if len(complete) == len(config.seeds) else ("partial" if complete else "failed")

    metric_inputs = None
    si = mpi = rer = None
    acc_std = f_std = None
    power_per_inference = None
    table_row = {col: None for col in TABLE_COLUMNS}
    table_row["device"] = config.device.name
    table_row["q_bits"] = config.q_bits

    merged_power = _merge_power([o.power_trace for o in outcomes if o.power_trace is not None], config.sensor)

    if complete:
        n_inferences = sum(len(r.records) for r in complete)
        total_time_s = sum(r.time_s for r in complete)
        acc_avg, acc_std = seed_mean_std([r.quality.accuracy for r in complete])
        f_avg, f_std = seed_mean_std([r.quality.f_score_macro for r in complete])

        power_kw = energy_j = None
        if merged_power is not None and merged_power.samples:
            windows = [(rec.t_start_ms, rec.t_end_ms) for r in complete for rec in r.records]
            spans = [(r.during_start_ms, r.during_end_ms) for r in complete]
            try:
                aggregates = power_aggregates(merged_power, windows, phase_windows=spans)
                power_kw = aggregates.power_tot_kw
                energy_j = aggregates.energy_tot_j
                power_per_inference = aggregates.power_per_inference_w
            except (PowerError, ValueError) as exc:
                warnings.append(f"power aggregation skipped: {exc}")

        cpu_avg = mem_avg = None
        during_system = [
            s
            for r in complete
            if r.telemetry is not None
            for s in r.telemetry.samples
            if s.phase is Phase.DURING and s.scope is Scope.SYSTEM
        ]
        if during_system:
            cpu = sum(s.cpu_pct for s in during_system) / len(during_system)
            mem = sum(s.mem_pct for s in during_system) / len(during_system)
            if cpu > 0 and mem > 0:
                cpu_avg, mem_avg = cpu, mem
            else:
                warnings.append("system utilization averaged to zero; utilization metrics unavailable")

        metric_inputs = MetricInputs(
            flops_throughput=flops_throughput(config.flops_per_inference, n_inferences, total_time_s),
            q_bits=config.q_bits,
            total_time_s=total_time_s,
            accuracy_avg=acc_avg,
            fscore_avg=f_avg,
            power_tot_kw=power_kw,
            energy_tot_j=energy_j,
            cpu_pct_avg=cpu_avg,
            mem_pct_avg=mem_avg,
        )
        table_row = build_table_row(config.device.name, metric_inputs, n_inferences, power_per_inference)
        si, mpi, rer = table_row["si"], table_row["mpi"], table_row["rer"]
        consistency = check_table_consistency([table_row])
        if consistency:
            warnings.extend(consistency)
            status = "complete_with_warnings" if status == "complete" else status

    return RunReport(
        meta=make_meta(clock.name),
        config=config.snapshot(),
        dataset_info={
            "path": ds.source_path,
            "sha256": dataset_fingerprint(ds.source_path),
            "n_samples": len(ds),
            "label_set": list(ds.label_set),
        },
        status=status,
        warnings=warnings,
        seeds=seed_results,
        power_trace=merged_power,
        metric_inputs=metric_inputs,
        si=si,
        mpi=mpi,
        rer=rer,
        accuracy_std=acc_std,
        fscore_std=f_std,
        table_row=table_row,
    )


def _merge_power(traces: list[PowerTrace], sensor: SensorConfig) -> PowerTrace | None:
    if not traces:
        return None
    samples = []
    for tr in traces:
        samples.extend(tr.samples)
    samples.sort(key=lambda s: s.t_mono_ms)
    return PowerTrace(samples=tuple(samples), config=sensor)


def replay_metrics(
    records_csv: str | Path,
    q_bits: int,
    flops_per_inference: float,
    telemetry_csv: str | Path | None = None,
    power_csv: str | Path | None = None,
    sensor: SensorConfig | None = None,
    device: str = "replay",
) -> dict:
    """Recompute metric inputs and SI/MPI/RER from exported capture files.

    Frame timestamps in harness-exported files are already on the harness
    clock, so they are ingested without re-anchoring.
    """
    from .report import read_records_csv
    from .telemetry import aggregate, NoMatchingSamplesError

    rows = read_records_csv(records_csv)
    seeds: dict[int, list[dict]] = {}
    for row in rows:
        seeds.setdefault(row["seed"], []).append(row)

    label_set = sorted({r["true_label"] for r in rows} | {r["predicted_label"] for r in rows})
    accuracies, fscores = [], []
    spans = []
    total_time_s = 0.0
    for seed_rows in seeds.values():
        scores = score_pairs([(r["true_label"], r["predicted_label"]) for r in seed_rows], label_set)
        accuracies.append(scores.accuracy)
        fscores.append(scores.f_score_macro)
        start = min(r["t_start_ms"] for r in seed_rows)
        end = max(r["t_end_ms"] for r in seed_rows)
        spans.append((start, end))
        total_time_s += (end - start) / 1000.0
    n_inferences = len(rows)
    acc_avg, acc_std = seed_mean_std(accuracies)
    f_avg, f_std = seed_mean_std(fscores)

    cpu_avg = mem_avg = None
    if telemetry_csv is not None:
        trace = read_trace_csv(telemetry_csv)
        try:
            agg = aggregate(trace, Phase.DURING, Scope.SYSTEM)
            if agg.avg_cpu_pct > 0 and agg.avg_mem_pct > 0:
                cpu_avg, mem_avg = agg.avg_cpu_pct, agg.avg_mem_pct
        except NoMatchingSamplesError:
            pass

    power_kw = energy_j = power_per_inference = None
    if power_csv is not None:
        cfg = sensor or SensorConfig()
        frames = read_frames(power_csv, cfg)
        trace = frames_to_trace(frames, cfg, capture_start_mono_ms=frames[0][0] if frames else 0.0)
        windows = [(r["t_start_ms"], r["t_end_ms"]) for r in rows]
        aggregates = power_aggregates(trace, windows, phase_windows=spans)
        power_kw = aggregates.power_tot_kw
        energy_j = aggregates.energy_tot_j
        power_per_inference = aggregates.power_per_inference_w

    inputs = MetricInputs(
        flops_throughput=flops_throughput(flops_per_inference, n_inferences, total_time_s),
        q_bits=q_bits,
        total_time_s=total_time_s,
        accuracy_avg=acc_avg,
        fscore_avg=f_avg,
        power_tot_kw=power_kw,
        energy_tot_j=energy_j,
        cpu_pct_avg=cpu_avg,
        mem_pct_avg=mem_avg,
    )
    table_row = build_table_row(device, inputs, n_inferences, power_per_inference)
    return {
        "n_inferences": n_inferences,
        "n_seeds": len(seeds),
        "accuracy_std": acc_std,
        "fscore_std": f_std,
        "table_row": table_row,
        "consistency_problems": check_table_consistency([table_row]),
    }
