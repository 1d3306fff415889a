import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

SEQ_LEN = 16
LABELS = ("positive", "neutral", "negative")

VOCAB_WORDS = [
    "[PAD]",
    "[UNK]",
    "sample",
    "text",
    "number",
    "great",
    "terrible",
    "fine",
    "the",
    "a",
] + [str(i) for i in range(30)]


@pytest.fixture(scope="session")
def model_artifact(tmp_path_factory):
    """A real (tiny) TFLite text classifier plus its vocabulary sidecar."""
    import numpy as np
    import tensorflow as tf

    out_dir = tmp_path_factory.mktemp("model")
    vocab_size = len(VOCAB_WORDS)
    rng = np.random.default_rng(7)

    class TinyTextClassifier(tf.Module):
        def __init__(self):
            super().__init__()
            self.embedding = tf.Variable(rng.normal(size=(vocab_size, 8)).astype("float32"))
            self.weights_ = tf.Variable(rng.normal(size=(8, len(LABELS))).astype("float32"))
            self.bias = tf.Variable(np.zeros(len(LABELS), dtype="float32"))

        @tf.function(input_signature=[tf.TensorSpec([1, SEQ_LEN], tf.int32)])
        def __call__(self, token_ids):
            x = tf.gather(self.embedding, token_ids)
            x = tf.reduce_mean(x, axis=1)
            return tf.nn.softmax(tf.matmul(x, self.weights_) + self.bias)

    module = TinyTextClassifier()
    converter = tf.lite.TFLiteConverter.from_concrete_functions(
        [module.__call__.get_concrete_function()], module
    )
    model_path = out_dir / "tiny.tflite"
    model_path.write_bytes(converter.convert())
    vocab_path = out_dir / "tiny.vocab.txt"
    vocab_path.write_text("\n".join(VOCAB_WORDS) + "\n", encoding="utf-8")
    return model_path
