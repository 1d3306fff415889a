from pathlib import Path

import pytest

from runner_tflite.tokenizer import Tokenizer, TokenizerError, vocab_path_for


def make_tokenizer(max_seq_len=4):
    return Tokenizer({"[PAD]": 0, "[UNK]": 1, "hello": 2, "world": 3}, max_seq_len=max_seq_len)


def test_encode_pads_to_length():
    assert make_tokenizer().encode("hello world") == [2, 3, 0, 0]


def test_encode_truncates():
    assert make_tokenizer(max_seq_len=2).encode("hello world hello") == [2, 3]


def test_unknown_words_map_to_unk():
    assert make_tokenizer().encode("hello mars") == [2, 1, 0, 0]


def test_empty_text_is_all_padding():
    assert make_tokenizer().encode("") == [0, 0, 0, 0]


def test_lowercasing_default():
    assert make_tokenizer().encode("HELLO World") == [2, 3, 0, 0]


def test_vocab_requires_special_tokens():
    with pytest.raises(TokenizerError):
        Tokenizer({"hello": 0})


def test_vocab_sidecar_path():
    assert vocab_path_for("models/m.tflite") == Path("models/m.vocab.txt")


def test_from_file(tmp_path):
    path = tmp_path / "v.vocab.txt"
    path.write_text("[PAD]\n[UNK]\nword\n", encoding="utf-8")
    tok = Tokenizer.from_file(path, max_seq_len=3)
    assert tok.encode("word word unknown") == [2, 2, 1]
    with pytest.raises(TokenizerError):
        Tokenizer.from_file(tmp_path / "missing.txt")
