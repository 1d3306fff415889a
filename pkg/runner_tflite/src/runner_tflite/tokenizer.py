"""Vocabulary-file tokenizer for the reference runner.

The vocabulary is a sidecar of the model file (``model.tflite`` ->
``model.vocab.txt``): one token per line, line number = token id. It must
contain ``[PAD]`` and ``[UNK]``. Text is lowercased, split on whitespace,
looked up whole-word, then truncated/padded to the fixed sequence length.
"""

from __future__ import annotations

from pathlib import Path

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"

DEFAULT_MAX_SEQ_LEN = 128


class TokenizerError(Exception):
    pass


def vocab_path_for(model_path: str | Path) -> Path:
    return Path(model_path).with_suffix(".vocab.txt")


class Tokenizer:
    def __init__(self, vocab: dict[str, int], max_seq_len: int = DEFAULT_MAX_SEQ_LEN, lowercase: bool = True):
        if PAD_TOKEN not in vocab or UNK_TOKEN not in vocab:
            raise TokenizerError(f"vocabulary must contain {PAD_TOKEN} and {UNK_TOKEN}")
        if max_seq_len < 1:
            raise TokenizerError("max_seq_len must be >= 1")
        self.vocab = vocab
        self.max_seq_len = max_seq_len
        self.lowercase = lowercase
        self.pad_id = vocab[PAD_TOKEN]
        self.unk_id = vocab[UNK_TOKEN]

    @classmethod
    def from_file(cls, path: str | Path, max_seq_len: int = DEFAULT_MAX_SEQ_LEN) -> "Tokenizer":
        path = Path(path)
        if not path.is_file():
            raise TokenizerError(f"vocabulary file not found: {path}")
        vocab: dict[str, int] = {}
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                token = line.rstrip("\n")
                if token and token not in vocab:
                    vocab[token] = i
        return cls(vocab, max_seq_len=max_seq_len)

    def encode(self, text: str) -> list[int]:
        """Token ids padded/truncated to max_seq_len; empty text is all padding."""
        if self.lowercase:
            text = text.lower()
        ids = [self.vocab.get(word, self.unk_id) for word in text.split()]
        ids = ids[: self.max_seq_len]
        ids.extend([self.pad_id] * (self.max_seq_len - len(ids)))
        return ids
