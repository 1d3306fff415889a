"""Stdio serve loop: wire protocol in, TFLite inference out.

Protocol (newline-delimited JSON, one object per line, lock-step):
``init`` -> ``ready``; ``predict`` -> ``prediction`` (argmax label over the
model's output scores); ``shutdown`` -> exit 0. Failures are answered with
``error`` objects; only a model that cannot be loaded at init (or an
unrecoverable stream error) ends the process with a nonzero status.
"""

from __future__ import annotations

import json
import os
import time

from .tokenizer import DEFAULT_MAX_SEQ_LEN, Tokenizer, TokenizerError, vocab_path_for

RUNNER_NAME = "runner-tflite"


class ModelLoadError(Exception):
    pass


def _encode(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


class TFLiteClassifier:
    """A loaded interpreter plus its tokenizer and label list."""

    def __init__(self, model_path: str, labels: list[str], max_seq_len: int = DEFAULT_MAX_SEQ_LEN):
        if not model_path or not os.path.isfile(model_path):
            raise ModelLoadError(f"model file not found: {model_path!r}")
        try:
            self.tokenizer = Tokenizer.from_file(vocab_path_for(model_path), max_seq_len=max_seq_len)
        except TokenizerError as exc:
            raise ModelLoadError(str(exc)) from exc

        import numpy as np
        import tensorflow as tf

        self._np = np
        try:
            self.interpreter = tf.lite.Interpreter(model_path=model_path)
        except ValueError as exc:
            raise ModelLoadError(f"cannot load model {model_path!r}: {exc}") from exc
        self.input_detail = self.interpreter.get_input_details()[0]
        self.output_detail = self.interpreter.get_output_details()[0]
        seq_len = int(self.input_detail["shape"][-1])
        if seq_len != self.tokenizer.max_seq_len:
            self.tokenizer.max_seq_len = seq_len
        self.interpreter.resize_tensor_input(self.input_detail["index"], [1, seq_len])
        self.interpreter.allocate_tensors()
        out_dim = int(self.interpreter.get_output_details()[0]["shape"][-1])
        if out_dim != len(labels):
            raise ModelLoadError(
                f"model emits {out_dim} classes but the init message declared {len(labels)} labels"
            )
        self.labels = list(labels)


def _classify(clf: TFLiteClassifier, text: str) -> tuple[str, float]:
    np = clf._np
    ids = np.asarray([clf.tokenizer.encode(text)], dtype=clf.input_detail["dtype"])
    started = time.perf_counter()
    clf.interpreter.set_tensor(clf.input_detail["index"], ids)
    clf.interpreter.invoke()
    scores = clf.interpreter.get_tensor(clf.output_detail["index"])[0]
    latency = time.perf_counter() - started
    return clf.labels[int(np.argmax(scores))], latency


def serve(stdin, stdout, model_path: str | None = None, max_seq_len: int = DEFAULT_MAX_SEQ_LEN) -> int:
    """Serve until shutdown/EOF; returns the process exit code."""

    def emit(obj: dict) -> None:
        stdout.write(_encode(obj))
        stdout.flush()

    classifier: TFLiteClassifier | None = None
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("not an object")
        except ValueError:
            emit({"type": "error", "id": None, "message": f"malformed message line: {line[:80]!r}"})
            continue
        mtype = msg.get("type")
        if mtype == "init":
            labels = msg.get("labels")
            if not isinstance(labels, list) or not labels:
                emit({"type": "error", "id": None, "message": "init message carries no labels"})
                continue
            path = model_path or msg.get("model")
            try:
                classifier = TFLiteClassifier(path, [str(x) for x in labels], max_seq_len=max_seq_len)
            except ModelLoadError as exc:
                emit({"type": "error", "id": None, "message": str(exc)})
                return 1
            emit({"type": "ready", "runner": RUNNER_NAME, "pid": os.getpid()})
        elif mtype == "predict":
            sample_id = msg.get("id")
            if classifier is None:
                emit({"type": "error", "id": sample_id, "message": "predict received before init"})
                continue
            if not isinstance(sample_id, str):
                emit({"type": "error", "id": None, "message": "predict message carries no id"})
                continue
            try:
                label, latency = _classify(classifier, str(msg.get("text", "")))
            except Exception as exc:  # inference failure is answered, not fatal
                emit({"type": "error", "id": sample_id, "message": f"inference failed: {exc}"})
                continue
            emit({"type": "prediction", "id": sample_id, "label": label, "latency_s": latency})
        elif mtype == "shutdown":
            return 0
        else:
            emit({"type": "error", "id": None, "message": f"unsupported message type: {mtype!r}"})
    return 0
