"""Wire protocol for external inference runners.

Newline-delimited JSON over the child's stdin/stdout: UTF-8, one object per
line, no pretty-printing. Message types:

    init:       {"type":"init","model":<path|null>,"q_bits":8,"labels":[...]}
    ready:      {"type":"ready","runner":"<name>","pid":<int>}
    predict:    {"type":"predict","id":"<sample_id>","text":"<clean_text>"}
    prediction: {"type":"prediction","id":"<sample_id>","label":"<label>","latency_s":<optional>}
    error:      {"type":"error","id":<sample_id|null>,"message":"<string>"}
    shutdown:   {"type":"shutdown"}

Receivers ignore unknown fields; an unknown "type" is a protocol violation.
"""

from __future__ import annotations

import json

KNOWN_TYPES = frozenset({"init", "ready", "predict", "prediction", "error", "shutdown"})


class ProtocolDecodeError(Exception):
    pass


def encode_message(obj: dict) -> str:
    """Serialize one message to its single-line wire form (newline included)."""
    line = json.dumps(obj, ensure_ascii=False, separators=(",", ":"))
    if "\n" in line or "\r" in line:
        raise ValueError("message must serialize to a single line")
    return line + "\n"


def decode_message(line: str) -> dict:
    """Parse one wire line into a message dict with a known type."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolDecodeError(f"malformed message line: {line!r}") from exc
    if not isinstance(obj, dict):
        raise ProtocolDecodeError(f"message is not a JSON object: {line!r}")
    mtype = obj.get("type")
    if mtype not in KNOWN_TYPES:
        raise ProtocolDecodeError(f"unknown message type: {mtype!r}")
    return obj


def init_message(model: str | None, q_bits: int, labels: list[str]) -> dict:
    return {"type": "init", "model": model, "q_bits": q_bits, "labels": labels}


def ready_message(runner: str, pid: int) -> dict:
    return {"type": "ready", "runner": runner, "pid": pid}


def predict_message(sample_id: str, text: str) -> dict:
    return {"type": "predict", "id": sample_id, "text": text}


def prediction_message(sample_id: str, label: str, latency_s: float | None = None) -> dict:
    msg = {"type": "prediction", "id": sample_id, "label": label}
    if latency_s is not None:
        msg["latency_s"] = latency_s
    return msg


def error_message(sample_id: str | None, text: str) -> dict:
    return {"type": "error", "id": sample_id, "message": text}


def shutdown_message() -> dict:
    return {"type": "shutdown"}
