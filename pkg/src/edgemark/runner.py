"""Workload plug-in boundary: external runner processes and the built-in simulator.

The harness talks to a runner over the lock-step wire protocol (one predict in
flight per session) and measures latency on its own clock around the full
round trip. The built-in simulator runs in-process under a simulated clock and
draws predictions from a configured confusion matrix with a counter-based
generator, so whole runs replay deterministically.
"""

from __future__ import annotations

import logging
import os
import queue
import subprocess
import threading
from dataclasses import dataclass, field

import numpy as np

from .clock import Clock, RealClock, SimulatedClock
from .dataset import LabeledSample
from . import protocol

logger = logging.getLogger(__name__)

DEFAULT_HANDSHAKE_TIMEOUT_S = 30.0
DEFAULT_PREDICT_TIMEOUT_S = 120.0
DEFAULT_SHUTDOWN_GRACE_S = 5.0

_MASK64 = (1 << 64) - 1


class RunnerError(Exception):
    pass


class SpawnFailedError(RunnerError):
    pass


class HandshakeTimeoutError(RunnerError):
    pass


class ProtocolViolationError(RunnerError):
    pass


class RunnerCrashedError(RunnerError):
    pass


class PredictTimeoutError(RunnerError):
    pass


class UnknownLabelReturnedError(RunnerError):
    pass


class RunnerReportedError(RunnerError):
    """The runner answered a predict with a protocol error object."""


@dataclass(frozen=True)
class RunnerSpec:
    """How to launch an external runner and what workload it embodies."""

    command: str
    args: tuple[str, ...] = ()
    env: dict[str, str] = field(default_factory=dict)
    model_path: str | None = None
    q_bits: int = 32
    flops_per_inference: float = 1.0

    def __post_init__(self):
        if self.q_bits not in (8, 16, 32):
            raise ValueError(f"q_bits must be 8, 16, or 32, got {self.q_bits}")
        if self.flops_per_inference <= 0:
            raise ValueError("flops_per_inference must be positive")


@dataclass(frozen=True)
class InferenceRecord:
    """One prediction with its harness-measured round-trip latency."""

    sample_id: str
    predicted_label: str
    latency_s: float
    t_start_ms: float
    t_end_ms: float
    runner_latency_s: float | None = None


@dataclass(frozen=True)
class ConstantLatency:
    seconds: float

    def __post_init__(self):
        if self.seconds <= 0:
            raise ValueError("latency must be positive")


@dataclass(frozen=True)
class LogNormalLatency:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


LatencyModel = ConstantLatency | LogNormalLatency


@dataclass(frozen=True)
class SimProfile:
    """Deterministic behavior of the built-in simulated runner.

    ``confusion[i][j]`` is the probability of predicting label j when the
    truth is label i, over ``labels`` order; rows must sum to 1.
    """

    seed: int
    labels: tuple[str, ...]
    confusion: tuple[tuple[float, ...], ...]
    latency_model: LatencyModel

    def __post_init__(self):
        k = len(self.labels)
        if k == 0 or len(set(self.labels)) != k:
            raise ValueError("labels must be nonempty and unique")
        if len(self.confusion) != k:
            raise ValueError("confusion matrix must have one row per label")
        for row in self.confusion:
            if len(row) != k:
                raise ValueError("confusion matrix must be square over the label set")
            if any(p < 0 for p in row):
                raise ValueError("confusion entries must be nonnegative")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"confusion row sums to {sum(row)}, expected 1")

    def with_seed(self, seed: int) -> "SimProfile":
        return SimProfile(seed=seed, labels=self.labels, confusion=self.confusion, latency_model=self.latency_model)

    @classmethod
    def identity(cls, labels: tuple[str, ...], latency_model: LatencyModel, seed: int = 0) -> "SimProfile":
        k = len(labels)
        rows = tuple(tuple(1.0 if i == j else 0.0 for j in range(k)) for i in range(k))
        return cls(seed=seed, labels=labels, confusion=rows, latency_model=latency_model)


def sim_predict(profile: SimProfile, sample: LabeledSample, draw_index: int) -> tuple[str, float]:
    """Deterministic prediction draw for one sample.

    The generator is counter-based (keyed on the seed, counted by draw index),
    so the same (seed, draw_index, truth) always yields the same output and
    draws are independent of evaluation order.
    """
    rng = np.random.Generator(np.random.Philox(key=profile.seed & _MASK64, counter=draw_index))
    try:
        row = profile.confusion[profile.labels.index(sample.label)]
    except ValueError:
        raise RunnerError(f"sample label {sample.label!r} not in simulator label set") from None
    u = rng.random()
    cumulative = 0.0
    label = profile.labels[-1]
    for j, p in enumerate(row):
        cumulative += p
        if u < cumulative:
            label = profile.labels[j]
            break
    model = profile.latency_model
    if isinstance(model, ConstantLatency):
        latency = model.seconds
    else:
        latency = float(rng.lognormal(model.mu, model.sigma))
    return label, latency


@dataclass(frozen=True)
class ExitStatus:
    code: int | None
    killed: bool = False

    def describe(self) -> str:
        return "killed" if self.killed else str(self.code)


class SimulatorSession:
    """In-process simulated runner advancing a virtual clock by drawn latencies."""

    def __init__(self, profile: SimProfile, labels: tuple[str, ...], clock: SimulatedClock | None = None):
        if tuple(profile.labels) != tuple(labels):
            raise RunnerError("simulator label set differs from the dataset label set")
        self.profile = profile
        self.labels = tuple(labels)
        self.clock = clock or SimulatedClock()
        self.pid = os.getpid()
        self._draw_index = 0
        self._exit: ExitStatus | None = None

    def predict(self, sample: LabeledSample) -> InferenceRecord:
        if self._exit is not None:
            raise RunnerError("session already shut down")
        label, latency_s = sim_predict(self.profile, sample, self._draw_index)
        self._draw_index += 1
        t_start_ms = self.clock.now_ms()
        self.clock.advance_s(latency_s)
        t_end_ms = self.clock.now_ms()
        return InferenceRecord(
            sample_id=sample.id,
            predicted_label=label,
            latency_s=(t_end_ms - t_start_ms) / 1000.0,
            t_start_ms=t_start_ms,
            t_end_ms=t_end_ms,
        )

    def shutdown(self, grace_s: float = DEFAULT_SHUTDOWN_GRACE_S) -> ExitStatus:
        if self._exit is None:
            self._exit = ExitStatus(code=0)
        return self._exit


class ProcessRunnerSession:
    """A spawned runner child plus the reader threads that keep its pipes drained."""

    def __init__(
        self,
        spec: RunnerSpec,
        labels: tuple[str, ...],
        predict_timeout_s: float = DEFAULT_PREDICT_TIMEOUT_S,
        clock: Clock | None = None,
    ):
        self.spec = spec
        self.labels = tuple(labels)
        self.clock = clock or RealClock()
        self.predict_timeout_s = predict_timeout_s
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._stderr_tail: list[str] = []
        self._exit: ExitStatus | None = None
        argv = [spec.command, *spec.args]
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
                env={**os.environ, **spec.env},
            )
        except OSError as exc:
            raise SpawnFailedError(f"cannot spawn {argv}: {exc}") from exc
        self.pid = self._proc.pid
        threading.Thread(target=self._drain_stdout, name="edgemark-runner-stdout", daemon=True).start()
        threading.Thread(target=self._drain_stderr, name="edgemark-runner-stderr", daemon=True).start()

    def _drain_stdout(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _drain_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))
            del self._stderr_tail[:-50]

    def stderr_tail(self) -> str:
        return "\n".join(self._stderr_tail)

    def _send(self, message: dict) -> None:
        try:
            self._proc.stdin.write(protocol.encode_message(message))
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise RunnerCrashedError(f"runner pipe closed: {exc}; stderr: {self.stderr_tail()}") from exc

    def _receive(self, timeout_s: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout_s)
        except queue.Empty:
            if self._proc.poll() is not None:
                raise RunnerCrashedError(f"runner exited (status {self._proc.returncode}); stderr: {self.stderr_tail()}")
            raise PredictTimeoutError(f"no reply within {timeout_s}s")
        if line is None:
            raise RunnerCrashedError(f"runner closed stdout (status {self._proc.poll()}); stderr: {self.stderr_tail()}")
        try:
            return protocol.decode_message(line)
        except protocol.ProtocolDecodeError as exc:
            raise ProtocolViolationError(str(exc)) from exc

    def handshake(self, timeout_s: float = DEFAULT_HANDSHAKE_TIMEOUT_S) -> None:
        self._send(protocol.init_message(self.spec.model_path, self.spec.q_bits, list(self.labels)))
        try:
            msg = self._receive(timeout_s)
        except PredictTimeoutError as exc:
            raise HandshakeTimeoutError(f"no ready message within {timeout_s}s") from exc
        if msg["type"] != "ready":
            raise ProtocolViolationError(f"expected ready, got {msg['type']!r}")
        logger.info("runner %s ready (pid %d)", msg.get("runner", "?"), self.pid)

    def predict(self, sample: LabeledSample) -> InferenceRecord:
        start_ns = self.clock.now_ns()
        self._send(protocol.predict_message(sample.id, sample.clean_text))
        msg = self._receive(self.predict_timeout_s)
        end_ns = self.clock.now_ns()
        if msg["type"] == "error":
            raise RunnerReportedError(f"runner error for {sample.id!r}: {msg.get('message')}")
        if msg["type"] != "prediction":
            raise ProtocolViolationError(f"expected prediction, got {msg['type']!r}")
        if msg.get("id") != sample.id:
            raise ProtocolViolationError(f"reply id {msg.get('id')!r} does not match request {sample.id!r}")
        label = msg.get("label")
        if label not in self.labels:
            raise UnknownLabelReturnedError(f"label {label!r} outside the dataset label set")
        t_start_ms = start_ns / 1e6
        t_end_ms = end_ns / 1e6
        runner_latency = msg.get("latency_s")
        return InferenceRecord(
            sample_id=sample.id,
            predicted_label=label,
            latency_s=(t_end_ms - t_start_ms) / 1000.0,
            t_start_ms=t_start_ms,
            t_end_ms=t_end_ms,
            runner_latency_s=float(runner_latency) if isinstance(runner_latency, (int, float)) else None,
        )

    def shutdown(self, grace_s: float = DEFAULT_SHUTDOWN_GRACE_S) -> ExitStatus:
        if self._exit is not None:
            return self._exit
        if self._proc.poll() is None:
            try:
                self._send(protocol.shutdown_message())
            except RunnerCrashedError:
                pass
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=grace_s)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
                self._exit = ExitStatus(code=self._proc.returncode, killed=True)
                return self._exit
        code = self._proc.returncode
        if code != 0:
            logger.warning("runner exited with status %s", code)
        self._exit = ExitStatus(code=code, killed=False)
        return self._exit


RunnerSession = SimulatorSession | ProcessRunnerSession


def spawn_runner(
    spec: RunnerSpec | SimProfile,
    labels: tuple[str, ...],
    handshake_timeout_s: float = DEFAULT_HANDSHAKE_TIMEOUT_S,
    predict_timeout_s: float = DEFAULT_PREDICT_TIMEOUT_S,
    clock: Clock | None = None,
) -> RunnerSession:
    """Start a runner session: a child process, or the in-process simulator."""
    if isinstance(spec, SimProfile):
        sim_clock = clock if isinstance(clock, SimulatedClock) else SimulatedClock()
        return SimulatorSession(spec, labels, sim_clock)
    session = ProcessRunnerSession(spec, labels, predict_timeout_s=predict_timeout_s, clock=clock)
    try:
        session.handshake(handshake_timeout_s)
    except RunnerError:
        session.shutdown(grace_s=1.0)
        raise
    return session


def predict(session: RunnerSession, sample: LabeledSample) -> InferenceRecord:
    return session.predict(sample)


def shutdown(session: RunnerSession, grace_s: float = DEFAULT_SHUTDOWN_GRACE_S) -> ExitStatus:
    return session.shutdown(grace_s)
