"""Message-level conformance suite for runner implementations.

Any executable speaking the wire protocol can be checked: the suite drives it
over raw pipes (independently of the harness session machinery) and asserts
framing, lock-step replies, error taxonomy, and clean shutdown. Used against
the bundled reference runner and against external model runners alike.

    run_conformance([sys.executable, "-m", "edgemark.sim_runner"])
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading

from . import protocol

DEFAULT_LABELS = ("positive", "neutral", "negative")
DEFAULT_TEXTS = ("great service fast reply", "", "mixed feelings about this", "véry unicode tëxt 123")


class ConformanceFailure(AssertionError):
    pass


class _RawRunner:
    """Minimal line-oriented driver over a runner child process."""

    def __init__(self, argv: list[str], timeout_s: float):
        self.timeout_s = timeout_s
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        threading.Thread(target=self._drain, daemon=True).start()
        threading.Thread(target=self._drain_err, daemon=True).start()
        self.stderr_lines: list[str] = []

    def _drain(self) -> None:
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _drain_err(self) -> None:
        for line in self.proc.stderr:
            self.stderr_lines.append(line.rstrip("\n"))

    def send_raw(self, payload: str) -> None:
        self.proc.stdin.write(payload)
        self.proc.stdin.flush()

    def send(self, message: dict) -> None:
        self.send_raw(protocol.encode_message(message))

    def read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise ConformanceFailure(
                f"runner produced no reply within {self.timeout_s}s; stderr: {self.stderr_lines[-5:]}"
            )
        if line is None:
            raise ConformanceFailure(
                f"runner closed stdout (exit {self.proc.poll()}); stderr: {self.stderr_lines[-5:]}"
            )
        return line

    def expect(self, expected_type: str) -> dict:
        line = self.read_line()
        _check(line == line.rstrip("\r\n") + "\n", f"reply not newline-framed: {line!r}")
        _check("\r" not in line, "reply contains a carriage return")
        body = line.rstrip("\n")
        _check("\n" not in body, "reply spans multiple lines")
        try:
            obj = json.loads(body)
        except json.JSONDecodeError:
            raise ConformanceFailure(f"reply is not valid JSON: {body!r}")
        _check(isinstance(obj, dict), f"reply is not a JSON object: {body!r}")
        _check(obj.get("type") == expected_type, f"expected type {expected_type!r}, got {obj.get('type')!r}: {body!r}")
        return obj

    def close(self, expect_exit_zero: bool = True) -> int:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            code = self.proc.wait(timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
            raise ConformanceFailure("runner did not exit after stdin closed")
        if expect_exit_zero:
            _check(code == 0, f"runner exited with status {code}; stderr: {self.stderr_lines[-5:]}")
        return code


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConformanceFailure(message)


def _handshake(run: _RawRunner, model_path: str | None, q_bits: int, labels: tuple[str, ...]) -> None:
    run.send(protocol.init_message(model_path, q_bits, list(labels)))
    ready = run.expect("ready")
    _check(isinstance(ready.get("pid"), int), "ready message carries no integer pid")
    _check(isinstance(ready.get("runner"), str), "ready message carries no runner name")


def run_conformance(
    argv: list[str],
    labels: tuple[str, ...] = DEFAULT_LABELS,
    model_path: str | None = None,
    q_bits: int = 8,
    texts: tuple[str, ...] = DEFAULT_TEXTS,
    timeout_s: float = 60.0,
) -> None:
    """Run all conformance scenarios against a runner command; raises on violation."""
    scenario_lockstep_predictions(argv, labels, model_path, q_bits, texts, timeout_s)
    scenario_error_taxonomy(argv, labels, model_path, q_bits, timeout_s)
    scenario_predict_before_init(argv, timeout_s)


def scenario_lockstep_predictions(argv, labels, model_path, q_bits, texts, timeout_s) -> None:
    """init/ready handshake, one framed prediction per request, clean shutdown."""
    run = _RawRunner(argv, timeout_s)
    try:
        _handshake(run, model_path, q_bits, labels)
        for i, text in enumerate(texts):
            request = protocol.predict_message(f"s{i}", text)
            request["extra_field_to_ignore"] = {"nested": True}
            run.send(request)
            reply = run.expect("prediction")
            _check(reply.get("id") == f"s{i}", f"prediction id {reply.get('id')!r} != request id s{i}")
            _check(reply.get("label") in labels, f"label {reply.get('label')!r} outside init label set")
            latency = reply.get("latency_s")
            _check(latency is None or isinstance(latency, (int, float)), "latency_s is not numeric")
        # Determinism within one process: repeating a text repeats its label.
        run.send(protocol.predict_message("again", texts[0]))
        first = run.expect("prediction")["label"]
        run.send(protocol.predict_message("again2", texts[0]))
        _check(run.expect("prediction")["label"] == first, "identical text produced differing labels")
        run.send(protocol.shutdown_message())
        run.close(expect_exit_zero=True)
    finally:
        if run.proc.poll() is None:
            run.proc.kill()
            run.proc.wait()


def scenario_error_taxonomy(argv, labels, model_path, q_bits, timeout_s) -> None:
    """Malformed lines and unknown types produce error objects, then service resumes."""
    run = _RawRunner(argv, timeout_s)
    try:
        _handshake(run, model_path, q_bits, labels)
        run.send_raw("this is not json\n")
        err = run.expect("error")
        _check("message" in err, "error object carries no message")
        run.send({"type": "frobnicate"})
        run.expect("error")
        run.send(protocol.predict_message("recovery", "still alive"))
        reply = run.expect("prediction")
        _check(reply.get("id") == "recovery", "runner did not resume service after errors")
        run.send(protocol.shutdown_message())
        run.close(expect_exit_zero=True)
    finally:
        if run.proc.poll() is None:
            run.proc.kill()
            run.proc.wait()


def scenario_predict_before_init(argv, timeout_s) -> None:
    """A predict before init is answered with an error object, not a prediction."""
    run = _RawRunner(argv, timeout_s)
    try:
        run.send(protocol.predict_message("early", "no init yet"))
        run.expect("error")
        run.close(expect_exit_zero=True)
    finally:
        if run.proc.poll() is None:
            run.proc.kill()
            run.proc.wait()
