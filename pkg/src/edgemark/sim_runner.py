"""Reference external runner speaking the wire protocol over stdio.

Exercises the subprocess path without a real model: labels come from a text
digest (stable across processes), or from a dataset file's ground truth when
``--truth`` is given. Run as ``python -m edgemark.sim_runner``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

from . import protocol


def _digest_label(text: str, labels: list[str]) -> str:
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return labels[int.from_bytes(digest[:8], "big") % len(labels)]


def _load_truth(path: str) -> dict[str, str]:
    from .dataset import load_dataset

    return {s.id: s.label for s in load_dataset(path)}


def serve(
    stdin,
    stdout,
    truth: dict[str, str] | None = None,
    latency_s: float | None = None,
    sleep_s: float = 0.0,
    name: str = "edgemark-sim",
) -> int:
    """Serve the lock-step protocol until shutdown or EOF; returns the exit code."""

    def emit(message: dict) -> None:
        stdout.write(protocol.encode_message(message))
        stdout.flush()

    labels: list[str] | None = None
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
        except ValueError:
            emit(protocol.error_message(None, f"malformed message line: {line[:80]!r}"))
            continue
        mtype = obj.get("type")
        if mtype == "init":
            init_labels = obj.get("labels")
            if not isinstance(init_labels, list) or not init_labels:
                emit(protocol.error_message(None, "init message carries no labels"))
                continue
            labels = [str(lbl) for lbl in init_labels]
            emit(protocol.ready_message(name, os.getpid()))
        elif mtype == "predict":
            sample_id = obj.get("id")
            if labels is None:
                emit(protocol.error_message(sample_id, "predict received before init"))
                continue
            if not isinstance(sample_id, str):
                emit(protocol.error_message(None, "predict message carries no id"))
                continue
            if sleep_s > 0:
                time.sleep(sleep_s)
            text = obj.get("text", "")
            label = truth.get(sample_id) if truth else None
            if label is None:
                label = _digest_label(str(text), labels)
            emit(protocol.prediction_message(sample_id, label, latency_s))
        elif mtype == "shutdown":
            return 0
        else:
            emit(protocol.error_message(None, f"unsupported message type: {mtype!r}"))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="edgemark-sim-runner", description=__doc__)
    parser.add_argument("--truth", help="dataset CSV whose labels are echoed back by sample id")
    parser.add_argument("--latency-s", type=float, default=None, help="latency to report in predictions")
    parser.add_argument("--sleep-s", type=float, default=0.0, help="real delay per prediction")
    parser.add_argument("--name", default="edgemark-sim")
    args = parser.parse_args(argv)
    truth = _load_truth(args.truth) if args.truth else None
    return serve(sys.stdin, sys.stdout, truth=truth, latency_s=args.latency_s, sleep_s=args.sleep_s, name=args.name)


if __name__ == "__main__":
    sys.exit(main())
