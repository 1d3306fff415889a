"""CPU and memory utilization sampling across the three benchmark phases.

A background sampler records system-wide utilization every interval, plus
process-specific utilization for the monitored workload while it runs. CPU
percentages are normalized to total machine capacity (all cores = 100), so a
workload saturating one of N cores reads ~100/N. Memory is the used fraction
of physical memory (system scope) or resident set over physical memory
(process scope).
"""

from __future__ import annotations

import csv
import enum
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import psutil

from .clock import Clock, RealClock

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 1000


class TelemetryError(Exception):
    pass


class NoSuchProcessError(TelemetryError):
    pass


class SamplerAlreadyRunningError(TelemetryError):
    pass


class AlreadyStoppedError(TelemetryError):
    pass


class NoMatchingSamplesError(TelemetryError):
    pass


class Phase(str, enum.Enum):
    PRE = "pre"
    DURING = "during"
    POST = "post"


class Scope(str, enum.Enum):
    SYSTEM = "system"
    PROCESS = "process"


@dataclass(frozen=True)
class TelemetrySample:
    t_mono_ms: float
    scope: Scope
    phase: Phase
    cpu_pct: float
    mem_pct: float
    pid: int | None = None


@dataclass(frozen=True)
class TelemetryTrace:
    samples: tuple[TelemetrySample, ...]
    interval_ms: int
    target_pid: int | None


@dataclass(frozen=True)
class PhaseAggregate:
    avg_cpu_pct: float
    avg_mem_pct: float
    peak_cpu_pct: float
    peak_mem_pct: float
    n_samples: int


def _clamp_pct(value: float) -> float:
    return min(max(value, 0.0), 100.0)


def read_system_sample(phase: Phase, clock: Clock) -> TelemetrySample:
    """One instantaneous system-scope reading (CPU measured since last call)."""
    return TelemetrySample(
        t_mono_ms=clock.now_ms(),
        scope=Scope.SYSTEM,
        phase=phase,
        cpu_pct=_clamp_pct(psutil.cpu_percent(None)),
        mem_pct=_clamp_pct(psutil.virtual_memory().percent),
    )


class SamplerHandle:
    """A background sampling activity; sole writer of its sample list.

    The trace becomes visible only through :func:`stop`, which joins the
    thread first, so no lock is needed around the sample list.
    """

    def __init__(self, target_pid: int | None, interval_ms: int, phase: Phase, clock: Clock | None = None):
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.target_pid = target_pid
        self.interval_ms = interval_ms
        self.phase = phase
        self._clock = clock or RealClock()
        self._samples: list[TelemetrySample] = []
        self._stop_event = threading.Event()
        self._thread: threading.Thread | None = None
        self._stopped = False
        self._ncpu = psutil.cpu_count(logical=True) or 1
        self._proc: psutil.Process | None = None

    def start(self) -> "SamplerHandle":
        if self._thread is not None:
            raise SamplerAlreadyRunningError("sampler already started")
        if self.phase is Phase.DURING and self.target_pid is not None:
            try:
                self._proc = psutil.Process(self.target_pid)
                self._proc.cpu_percent(None)
            except psutil.NoSuchProcess as exc:
                raise NoSuchProcessError(f"pid {self.target_pid} does not exist") from exc
        psutil.cpu_percent(None)
        self._thread = threading.Thread(target=self._run, name="edgemark-telemetry", daemon=True)
        self._thread.start()
        return self

    def _run(self) -> None:
        interval_s = self.interval_ms / 1000.0
        while True:
            stopping = self._stop_event.wait(interval_s)
            self._take_sample()
            if stopping:
                return

    def _take_sample(self) -> None:
        t = self._clock.now_ms()
        self._samples.append(
            TelemetrySample(
                t_mono_ms=t,
                scope=Scope.SYSTEM,
                phase=self.phase,
                cpu_pct=_clamp_pct(psutil.cpu_percent(None)),
                mem_pct=_clamp_pct(psutil.virtual_memory().percent),
            )
        )
        if self._proc is None:
            return
        try:
            cpu = self._proc.cpu_percent(None) / self._ncpu
            rss = self._proc.memory_info().rss
        except psutil.NoSuchProcess:
            # Workload exited mid-run: process samples end here, system goes on.
            self._proc = None
            return
        self._samples.append(
            TelemetrySample(
                t_mono_ms=t,
                scope=Scope.PROCESS,
                phase=self.phase,
                cpu_pct=_clamp_pct(cpu),
                mem_pct=_clamp_pct(rss / psutil.virtual_memory().total * 100.0),
                pid=self.target_pid,
            )
        )

    def stop(self) -> TelemetryTrace:
        if self._stopped:
            raise AlreadyStoppedError("sampler already stopped")
        if self._thread is None:
            raise TelemetryError("sampler never started")
        self._stopped = True
        self._stop_event.set()
        self._thread.join()
        return TelemetryTrace(
            samples=tuple(self._samples),
            interval_ms=self.interval_ms,
            target_pid=self.target_pid,
        )


def start_sampler(
    target_pid: int | None,
    interval_ms: int = DEFAULT_INTERVAL_MS,
    phase: Phase = Phase.DURING,
    clock: Clock | None = None,
) -> SamplerHandle:
    """Start a background sampler; process-scope samples are taken only in DURING.

    Raises NoSuchProcessError when the target process is gone, and
    SamplerAlreadyRunningError when a handle is started twice.
    """
    return SamplerHandle(target_pid, interval_ms, phase, clock).start()


def stop(handle: SamplerHandle) -> TelemetryTrace:
    """Stop a sampler and return its trace; a second stop raises AlreadyStoppedError."""
    return handle.stop()


def aggregate(trace: TelemetryTrace, phase: Phase, scope: Scope) -> PhaseAggregate:
    """Means and peaks over the samples matching (phase, scope)."""
    cpu = [s.cpu_pct for s in trace.samples if s.phase == phase and s.scope == scope]
    mem = [s.mem_pct for s in trace.samples if s.phase == phase and s.scope == scope]
    if not cpu:
        raise NoMatchingSamplesError(f"no samples for phase={phase.value} scope={scope.value}")
    return PhaseAggregate(
        avg_cpu_pct=sum(cpu) / len(cpu),
        avg_mem_pct=sum(mem) / len(mem),
        peak_cpu_pct=max(cpu),
        peak_mem_pct=max(mem),
        n_samples=len(cpu),
    )


def merge_traces(traces: list[TelemetryTrace]) -> TelemetryTrace:
    """Concatenate phase traces from one seed run (timestamps already ordered)."""
    if not traces:
        return TelemetryTrace(samples=(), interval_ms=DEFAULT_INTERVAL_MS, target_pid=None)
    samples: list[TelemetrySample] = []
    for tr in traces:
        samples.extend(tr.samples)
    target = next((tr.target_pid for tr in traces if tr.target_pid is not None), None)
    return TelemetryTrace(samples=tuple(samples), interval_ms=traces[0].interval_ms, target_pid=target)


TRACE_CSV_HEADER = ["t_mono_ms", "scope", "phase", "cpu_pct", "mem_pct"]


def write_trace_csv(trace: TelemetryTrace, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for s in trace.samples:
            writer.writerow([repr(s.t_mono_ms), s.scope.value, s.phase.value, repr(s.cpu_pct), repr(s.mem_pct)])


def read_trace_csv(path: str | Path, interval_ms: int = DEFAULT_INTERVAL_MS) -> TelemetryTrace:
    """Re-ingest an exported trace for metric recomputation."""
    samples: list[TelemetrySample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_CSV_HEADER:
            raise TelemetryError(f"expected header {TRACE_CSV_HEADER}, got {header}")
        for row in reader:
            if len(row) != 5:
                raise TelemetryError(f"line {reader.line_num}: expected 5 fields")
            samples.append(
                TelemetrySample(
                    t_mono_ms=float(row[0]),
                    scope=Scope(row[1]),
                    phase=Phase(row[2]),
                    cpu_pct=float(row[3]),
                    mem_pct=float(row[4]),
                )
            )
    return TelemetryTrace(samples=tuple(samples), interval_ms=interval_ms, target_pid=None)
