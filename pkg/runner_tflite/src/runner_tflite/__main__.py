"""Entry point: ``runner-tflite --model model.tflite`` (or ``python -m runner_tflite``)."""

from __future__ import annotations

import argparse
import os
import sys


def main(argv: list[str] | None = None) -> int:
    os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")
    parser = argparse.ArgumentParser(prog="runner-tflite", description=__doc__)
    parser.add_argument("--model", help="TFLite model file; falls back to the init message's model field")
    parser.add_argument("--max-seq-len", type=int, default=128)
    args = parser.parse_args(argv)

    from .server import serve

    return serve(sys.stdin, sys.stdout, model_path=args.model, max_seq_len=args.max_seq_len)


if __name__ == "__main__":
    sys.exit(main())
