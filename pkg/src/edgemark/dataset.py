"""Labeled text dataset loading and social-media text cleaning.

Datasets are CSV files with the exact header ``id,text,label`` (UTF-8,
comma-separated, double-quote quoting with doubled-quote escaping). Cleaning
strips URLs, emoji, punctuation, symbols, and control characters, and
normalizes whitespace; letters, digits, and single inter-word spaces survive.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

DEFAULT_LABELS = ("positive", "neutral", "negative")

CSV_HEADER = ["id", "text", "label"]


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class MalformedRowError(DatasetError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class UnknownLabelError(DatasetError):
    def __init__(self, line_no: int, label: str, label_set: tuple[str, ...]):
        super().__init__(f"line {line_no}: label {label!r} not in declared set {sorted(label_set)}")
        self.line_no = line_no
        self.label = label


class EmptyDatasetError(DatasetError):
    pass


@dataclass(frozen=True)
class LabeledSample:
    """One dataset row: opaque id, original text, cleaned text, class label."""

    id: str
    raw_text: str
    clean_text: str
    label: str


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of labeled samples with a fixed label set."""

    samples: tuple[LabeledSample, ...]
    label_set: tuple[str, ...]
    source_path: str

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self) -> dict[str, LabeledSample]:
        return {s.id: s for s in self.samples}


# URL matching: scheme-based plus bare www. prefixes, up to the next whitespace.
URL_PATTERN = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)

# Pictographic ranges removed in addition to the So/Sk categories: emoji and
# symbol blocks, dingbats/misc symbols, and variation selectors (category Mn,
# which the category rules alone would keep).
_EMOJI_RANGES = (
    (0x1F000, 0x1FAFF),
    (0x2600, 0x27BF),
    (0xFE00, 0xFE0F),
    (0x20E3, 0x20E3),
)


def _is_emoji(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _EMOJI_RANGES)


def _classify(ch: str) -> str:
    """Map one character to its replacement: itself, a space, or nothing."""
    if ch.isspace():
        return " "
    cat = unicodedata.category(ch)
    if cat[0] == "C":
        return ""
    if _is_emoji(ch) or cat in ("So", "Sk"):
        return ""
    if cat[0] == "P" or cat[0] == "S":
        return ""
    return ch


_CHAR_CACHE: dict[str, str] = {}


def _clean_pass(text: str) -> str:
    # URLs go first so their punctuation cannot leave fragments behind; the
    # match is replaced by a space to keep a word boundary between neighbors.
    text = URL_PATTERN.sub(" ", text)
    out = []
    for ch in text:
        repl = _CHAR_CACHE.get(ch)
        if repl is None:
            repl = _classify(ch)
            _CHAR_CACHE[ch] = repl
        out.append(repl)
    return " ".join("".join(out).split())


def preprocess(raw: str) -> str:
    """Clean one text: no URLs, emoji, punctuation, symbols, control chars,
    and no doubled/leading/trailing spaces. Total on valid text; may return "".

    Character removal can splice a new URL together (e.g. an emoji deleted out
    of the middle of ``ww😀w.x``), so passes repeat until a fixed point.
    """
    cleaned = _clean_pass(raw)
    while True:
        again = _clean_pass(cleaned)
        if again == cleaned:
            return cleaned
        cleaned = again


def load_dataset(
    path: str | Path,
    fmt: str = "csv",
    labels: tuple[str, ...] | list[str] | None = None,
) -> Dataset:
    """Load a labeled dataset and populate cleaned text for every row.

    Args:
        path: CSV file with header ``id,text,label``.
        fmt: only ``csv`` is supported.
        labels: declared label set. When omitted the set is inferred from the
            data (sorted) and a warning is logged.

    Raises:
        FileNotFoundError: file missing.
        MalformedRowError: wrong header, wrong field count, empty or duplicate id,
            or undecodable bytes.
        UnknownLabelError: row label outside a declared label set.
        EmptyDatasetError: no data rows.
    """
    if fmt != "csv":
        raise ValueError(f"unsupported dataset format: {fmt!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")

    declared = tuple(labels) if labels else None
    if declared is not None:
        if len(set(declared)) != len(declared) or not declared:
            raise ValueError("label set must be nonempty and free of duplicates")

    samples: list[LabeledSample] = []
    seen_ids: set[str] = set()
    inferred: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=",", quotechar='"', doublequote=True)
        try:
            header = next(reader, None)
            if header != CSV_HEADER:
                raise MalformedRowError(1, f"expected header {CSV_HEADER}, got {header}")
            for row in reader:
                line_no = reader.line_num
                if len(row) != 3:
                    raise MalformedRowError(line_no, f"expected 3 fields, got {len(row)}")
                sample_id, text, label = row
                if not sample_id:
                    raise MalformedRowError(line_no, "empty id")
                if sample_id in seen_ids:
                    raise MalformedRowError(line_no, f"duplicate id {sample_id!r}")
                if declared is not None and label not in declared:
                    raise UnknownLabelError(line_no, label, declared)
                seen_ids.add(sample_id)
                if label not in inferred:
                    inferred.append(label)
                samples.append(
                    LabeledSample(id=sample_id, raw_text=text, clean_text=preprocess(text), label=label)
                )
        except UnicodeDecodeError as exc:
            raise MalformedRowError(getattr(reader, "line_num", 0), f"invalid UTF-8: {exc}") from exc

    if not samples:
        raise EmptyDatasetError(f"no data rows in {path}")
    if declared is None:
        declared = tuple(sorted(inferred))
        logger.warning("no label set declared for %s; inferred %s from data", path, list(declared))
    return Dataset(samples=tuple(samples), label_set=declared, source_path=str(path))


def dataset_fingerprint(path: str | Path) -> str:
    """SHA-256 of the dataset file bytes, used to match reports for comparison."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def cleaning_stats(ds: Dataset) -> dict:
    """Row count, label histogram, and cleaning diff statistics for one dataset."""
    histogram: dict[str, int] = {label: 0 for label in ds.label_set}
    changed = 0
    chars_removed = 0
    for s in ds.samples:
        histogram[s.label] += 1
        if s.clean_text != s.raw_text:
            changed += 1
        chars_removed += max(len(s.raw_text) - len(s.clean_text), 0)
    return {
        "rows": len(ds.samples),
        "label_histogram": histogram,
        "rows_changed_by_cleaning": changed,
        "chars_removed_total": chars_removed,
    }
