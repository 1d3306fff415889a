"""Current-sensor frame decoding, current/power conversion, and energy integration.

Frames arrive one per line as ``<t_device_ms>,<adc_count>`` (ASCII decimal
integers), either live from a serial device or replayed from a file. Counts
convert to amperes either by the literal sensor formula
``count * v_ref / adc_resolution`` or through a calibrated zero offset and
V/A sensitivity. Power is current times the supply voltage; energy is the
trapezoidal integral of power over time.
"""

from __future__ import annotations

import csv
import enum
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class PowerError(Exception):
    pass


class MalformedFrameError(PowerError):
    pass


class AdcOutOfRangeError(PowerError):
    pass


class WindowOutsideTraceError(PowerError):
    pass


class TooFewSamplesError(PowerError):
    pass


class ConversionMode(str, enum.Enum):
    PAPER_FORMULA = "paper_formula"
    CALIBRATED = "calibrated"


@dataclass(frozen=True)
class SensorConfig:
    """ADC and conversion parameters for the current sensor chain."""

    v_ref: float = 5.0
    adc_resolution: int = 1024
    supply_voltage: float = 5.0
    mode: ConversionMode = ConversionMode.PAPER_FORMULA
    offset_counts: int = 0
    sensitivity_v_per_a: float | None = None

    def __post_init__(self):
        if self.v_ref <= 0:
            raise ValueError("v_ref must be positive")
        if self.adc_resolution < 2 or self.adc_resolution & (self.adc_resolution - 1):
            raise ValueError("adc_resolution must be a power of two >= 2")
        if self.supply_voltage <= 0:
            raise ValueError("supply_voltage must be positive")
        if self.mode is ConversionMode.CALIBRATED:
            if self.sensitivity_v_per_a is None or self.sensitivity_v_per_a <= 0:
                raise ValueError("calibrated mode requires sensitivity_v_per_a > 0")
            if not 0 <= self.offset_counts < self.adc_resolution:
                raise ValueError("offset_counts must lie within the ADC range")


@dataclass(frozen=True)
class PowerSample:
    t_device_ms: int
    t_mono_ms: float
    adc_count: int
    current_a: float
    power_w: float


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[PowerSample, ...]
    config: SensorConfig


def decode_frame(line: str, cfg: SensorConfig) -> tuple[int, int]:
    """Parse one ``<t_device_ms>,<adc_count>`` frame and range-check the count."""
    parts = line.strip().split(",")
    if len(parts) != 2:
        raise MalformedFrameError(f"expected 2 comma-separated fields: {line!r}")
    try:
        t_device_ms = int(parts[0])
        adc_count = int(parts[1])
    except ValueError as exc:
        raise MalformedFrameError(f"non-numeric frame field: {line!r}") from exc
    if t_device_ms < 0:
        raise MalformedFrameError(f"negative device timestamp: {line!r}")
    if not 0 <= adc_count < cfg.adc_resolution:
        raise AdcOutOfRangeError(f"adc count {adc_count} outside [0, {cfg.adc_resolution})")
    return t_device_ms, adc_count


def adc_to_current(adc_count: int, cfg: SensorConfig) -> float:
    """Convert one ADC count to amperes under the configured mode."""
    if not 0 <= adc_count < cfg.adc_resolution:
        raise AdcOutOfRangeError(f"adc count {adc_count} outside [0, {cfg.adc_resolution})")
    if cfg.mode is ConversionMode.PAPER_FORMULA:
        return adc_count * cfg.v_ref / cfg.adc_resolution
    return (adc_count - cfg.offset_counts) * (cfg.v_ref / cfg.adc_resolution) / cfg.sensitivity_v_per_a


def make_sample(cfg: SensorConfig, t_device_ms: int, t_mono_ms: float, adc_count: int) -> PowerSample:
    current = adc_to_current(adc_count, cfg)
    return PowerSample(
        t_device_ms=t_device_ms,
        t_mono_ms=t_mono_ms,
        adc_count=adc_count,
        current_a=current,
        power_w=current * cfg.supply_voltage,
    )


def frames_to_trace(
    frames: list[tuple[int, int]], cfg: SensorConfig, capture_start_mono_ms: float
) -> PowerTrace:
    """Map device-clock frames onto the harness clock and convert them.

    The device clock is aligned with a single linear offset estimated from the
    first frame; drift is ignored.
    """
    if not frames:
        return PowerTrace(samples=(), config=cfg)
    offset = capture_start_mono_ms - frames[0][0]
    samples = []
    last_t = None
    for t_device_ms, adc in frames:
        if last_t is not None and t_device_ms < last_t:
            raise MalformedFrameError(f"device timestamps regressed at {t_device_ms}")
        last_t = t_device_ms
        samples.append(make_sample(cfg, t_device_ms, t_device_ms + offset, adc))
    return PowerTrace(samples=tuple(samples), config=cfg)


def read_frames(path: str | Path, cfg: SensorConfig) -> list[tuple[int, int]]:
    """Read a replay file of frames (blank lines tolerated at file end only)."""
    frames = []
    with open(path, encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            frames.append(decode_frame(line, cfg))
    return frames


def write_frames(frames: list[tuple[int, int]], path: str | Path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for t_device_ms, adc in frames:
            fh.write(f"{t_device_ms},{adc}\n")


def _arrays(trace: PowerTrace) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([s.t_mono_ms for s in trace.samples], dtype=float)
    p = np.array([s.power_w for s in trace.samples], dtype=float)
    return t, p


def _energy_wms(t: np.ndarray, p: np.ndarray, start_ms: float, end_ms: float) -> float:
    """Trapezoidal integral of power over [start, end] in watt-milliseconds.

    Boundary values are linearly interpolated; accumulation stays in W*ms and
    callers divide by 1000 once, which keeps constant-power integrals exact.
    """
    p_start = float(np.interp(start_ms, t, p))
    p_end = float(np.interp(end_ms, t, p))
    inside = (t > start_ms) & (t < end_ms)
    ts = np.concatenate(([start_ms], t[inside], [end_ms]))
    ps = np.concatenate(([p_start], p[inside], [p_end]))
    return float(np.trapezoid(ps, ts))


def integrate_energy(trace: PowerTrace, window: tuple[float, float]) -> float:
    """Energy in joules over a [start_ms, end_ms] window of the trace."""
    start_ms, end_ms = window
    if end_ms < start_ms:
        raise ValueError("window end precedes start")
    if len(trace.samples) < 2:
        raise TooFewSamplesError("need at least 2 samples to integrate")
    t, p = _arrays(trace)
    if start_ms < t[0] or end_ms > t[-1]:
        raise WindowOutsideTraceError(
            f"window [{start_ms}, {end_ms}] outside trace span [{t[0]}, {t[-1]}]"
        )
    return _energy_wms(t, p, start_ms, end_ms) / 1000.0


@dataclass(frozen=True)
class PowerAggregates:
    power_tot_kw: float
    power_per_inference_w: float
    mean_power_w: float
    energy_tot_j: float
    n_inferences: int


def power_aggregates(
    trace: PowerTrace,
    inference_windows: list[tuple[float, float]],
    phase_windows: list[tuple[float, float]] | None = None,
) -> PowerAggregates:
    """Per-inference and whole-phase power aggregates.

    Per-inference power is the time-weighted mean over that inference's
    window (interpolated, so windows shorter than the sampling period are
    legal). ``power_tot_kw`` is the sum of per-inference powers divided by
    1000; ``mean_power_w`` and ``energy_tot_j`` cover the phase windows
    (defaulting to the whole trace span).
    """
    if not inference_windows:
        raise ValueError("at least one inference window is required")
    if len(trace.samples) < 2:
        raise TooFewSamplesError("need at least 2 samples to aggregate")
    t, p = _arrays(trace)
    ordered = sorted(inference_windows)
    for (a0, b0), (a1, _) in zip(ordered, ordered[1:]):
        if a1 < b0:
            raise ValueError(f"inference windows overlap near {a1}")
    for a, b in ordered:
        if b < a:
            raise ValueError("window end precedes start")
        if a < t[0] or b > t[-1]:
            raise WindowOutsideTraceError(f"window [{a}, {b}] outside trace span [{t[0]}, {t[-1]}]")

    per_inference = []
    for a, b in inference_windows:
        if b == a:
            per_inference.append(float(np.interp(a, t, p)))
        else:
            per_inference.append(_energy_wms(t, p, a, b) / (b - a))
    total_w = sum(per_inference)

    if phase_windows is None:
        phase_windows = [(float(t[0]), float(t[-1]))]
    energy_wms = 0.0
    span_ms = 0.0
    for a, b in phase_windows:
        if a < t[0] or b > t[-1]:
            raise WindowOutsideTraceError(f"phase window [{a}, {b}] outside trace span")
        energy_wms += _energy_wms(t, p, a, b)
        span_ms += b - a
    return PowerAggregates(
        power_tot_kw=total_w / 1000.0,
        power_per_inference_w=total_w / len(per_inference),
        mean_power_w=energy_wms / span_ms if span_ms > 0 else 0.0,
        energy_tot_j=energy_wms / 1000.0,
        n_inferences=len(per_inference),
    )


CONVERT_CSV_HEADER = ["t_device_ms", "adc_count", "current_a", "power_w"]


def write_converted_csv(frames: list[tuple[int, int]], cfg: SensorConfig, path: str | Path) -> None:
    """Emit a frame list as CSV with derived current and power columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONVERT_CSV_HEADER)
        for t_device_ms, adc in frames:
            current = adc_to_current(adc, cfg)
            writer.writerow([t_device_ms, adc, repr(current), repr(current * cfg.supply_voltage)])


def open_serial_device(path: str, baud: int):
    """Open and configure a serial device in raw 8N1 mode via termios.

    Only invoked for live capture; replay files never come through here.
    """
    import termios

    try:
        speed = getattr(termios, f"B{baud}")
    except AttributeError as exc:
        raise PowerError(f"unsupported baud rate {baud}") from exc
    fd = os.open(path, os.O_RDONLY | os.O_NOCTTY)
    try:
        attrs = termios.tcgetattr(fd)
        # cfmakeraw equivalent: no line editing, no echo, 8 data bits.
        attrs[0] = 0
        attrs[1] = 0
        attrs[2] = termios.CS8 | termios.CREAD | termios.CLOCAL
        attrs[3] = 0
        attrs[4] = speed
        attrs[5] = speed
        attrs[6][termios.VMIN] = 1
        attrs[6][termios.VTIME] = 0
        termios.tcsetattr(fd, termios.TCSANOW, attrs)
    except termios.error as exc:
        os.close(fd)
        raise PowerError(f"cannot configure serial device {path}: {exc}") from exc
    return os.fdopen(fd, "rb", buffering=0)


class FrameIngestor:
    """Background reader collecting frames from a binary line stream.

    Sole writer of its frame list; readers get the frames only after stop.
    """

    def __init__(self, stream, cfg: SensorConfig):
        self._stream = stream
        self._cfg = cfg
        self._frames: list[tuple[int, int]] = []
        self._errors: list[str] = []
        self._thread = threading.Thread(target=self._run, name="edgemark-power", daemon=True)
        self._stop_requested = False

    def start(self) -> "FrameIngestor":
        self._thread.start()
        return self

    def _run(self) -> None:
        buffer = b""
        while not self._stop_requested:
            chunk = self._stream.read(4096)
            if not chunk:
                break
            buffer += chunk
            while b"\n" in buffer:
                raw, buffer = buffer.split(b"\n", 1)
                line = raw.decode("ascii", errors="replace").strip()
                if not line:
                    continue
                try:
                    self._frames.append(decode_frame(line, self._cfg))
                except PowerError as exc:
                    self._errors.append(str(exc))

    def stop(self) -> list[tuple[int, int]]:
        self._stop_requested = True
        try:
            self._stream.close()
        except OSError:
            pass
        self._thread.join(timeout=5.0)
        if self._errors:
            logger.warning("dropped %d malformed power frames (first: %s)", len(self._errors), self._errors[0])
        return list(self._frames)
