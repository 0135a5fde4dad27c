"""Corpus loading, tokenization, vocabulary and batching."""

from __future__ import annotations

import csv
import hashlib
import logging
import re
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

# Counts of recoverable data events (skipped rows, empty texts).
events: Counter[str] = Counter()

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

csv.field_size_limit(min(sys.maxsize, 2**31 - 1))


@dataclass(frozen=True)
class DatasetSchema:
    label_column: int | str
    text_columns: tuple[int | str, ...]
    label_base: int
    n_classes: int
    header: bool = False

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("a classification schema needs at least 2 classes")
        if not self.text_columns:
            raise ValueError("text_columns must not be empty")
        if self.label_base not in (0, 1):
            raise ValueError("label_base must be 0 or 1")

    def to_dict(self) -> dict:
        return {
            "label_column": self.label_column,
            "text_columns": list(self.text_columns),
            "label_base": self.label_base,
            "n_classes": self.n_classes,
            "header": self.header,
        }

    @classmethod
    def from_dict(cls, d: dict) -> DatasetSchema:
        return cls(
            label_column=d["label_column"],
            text_columns=tuple(d["text_columns"]),
            label_base=int(d["label_base"]),
            n_classes=int(d["n_classes"]),
            header=bool(d.get("header", False)),
        )


SCHEMAS: dict[str, DatasetSchema] = {
    "ag_news": DatasetSchema(0, (1, 2), label_base=1, n_classes=4),
    "dbpedia14": DatasetSchema(0, (1, 2), label_base=1, n_classes=14),
    "imdb": DatasetSchema("label", ("text",), label_base=0, n_classes=2, header=True),
}


def load_csv(path: str | Path, schema: DatasetSchema) -> list[tuple[str, int]]:
    """Read (text, label) pairs; text columns are joined with ". ".

    Rows that do not parse are skipped and counted. A label outside the
    schema's range is a hard error.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    out: list[tuple[str, int]] = []
    skipped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        label_idx, text_idx = _column_indices(reader, schema, path)
        width = max(label_idx, *text_idx) + 1
        for row in reader:
            if len(row) < width:
                skipped += 1
                continue
            try:
                raw = int(row[label_idx].strip())
            except ValueError:
                skipped += 1
                continue
            label = raw - schema.label_base
            if not 0 <= label < schema.n_classes:
                raise DataError(
                    f"{path}:{reader.line_num}: label {raw} outside "
                    f"[{schema.label_base}, {schema.label_base + schema.n_classes - 1}]"
                )
            text = ". ".join(row[i].strip() for i in text_idx)
            out.append((text, label))
    if skipped:
        events["skipped_rows"] += skipped
        log.warning("%s: skipped %d malformed row(s)", path, skipped)
    return out


def _column_indices(reader, schema: DatasetSchema, path: Path) -> tuple[int, list[int]]:
    cols = (schema.label_column, *schema.text_columns)
    if not schema.header:
        if not all(isinstance(c, int) for c in cols):
            raise DataError("named columns need a schema with header=True")
        return schema.label_column, list(schema.text_columns)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None

    def resolve(c):
        if isinstance(c, int):
            return c
        try:
            return header.index(c)
        except ValueError:
            raise DataError(f"{path}: column {c!r} not in header {header}") from None

    return resolve(schema.label_column), [resolve(c) for c in schema.text_columns]


def train_val_split(data: Sequence, ratio: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Shuffle deterministically and cut at floor(ratio * n)."""
    if len(data) < 2:
        raise ValueError("need at least 2 examples to split")
    order = np.random.default_rng(seed).permutation(len(data))
    cut = int(np.floor(ratio * len(data)))
    return [data[i] for i in order[:cut]], [data[i] for i in order[cut:]]


def tokenize(text: str) -> list[str]:
    """Lowercase; words and single punctuation marks become tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token <-> id map with PAD=0 and UNK=1 always present."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        for t in tokens:
            if t in (PAD_TOKEN, UNK_TOKEN):
                continue
            self.itos.append(t)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def lookup(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        """One token per line, line i holding id i + 2."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.itos[2:]:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        with open(path, encoding="utf-8", newline="\n") as fh:
            return cls(line.rstrip("\n") for line in fh)


def build_vocab(corpus: Iterable[str], min_freq: int = 2, max_size: int = 30000) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically.

    ``max_size`` counts PAD and UNK.
    """
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(ranked[: max(0, max_size - 2)])


@dataclass(frozen=True)
class EncodedExample:
    ids: np.ndarray
    length: int
    label: int


def encode(text: str, vocab: Vocab, max_len: int, label: int = 0) -> EncodedExample:
    ids = vocab.lookup(tokenize(text))[:max_len]
    if not ids:
        events["empty_text"] += 1
        ids = [UNK]
    return EncodedExample(np.asarray(ids, dtype=np.int64), len(ids), label)


def encode_all(rows: Iterable[tuple[str, int]], vocab: Vocab, max_len: int) -> list[EncodedExample]:
    before = events["empty_text"]
    out = [encode(t, vocab, max_len, y) for t, y in rows]
    if events["empty_text"] > before:
        log.warning("%d text(s) were empty after tokenization", events["empty_text"] - before)
    return out


@dataclass
class SequenceBatch:
    ids: np.ndarray     # (b, L) int64
    mask: np.ndarray    # (b, L) float64, 1 for real tokens
    labels: np.ndarray  # (b,) int64

    def __len__(self) -> int:
        return len(self.labels)


def collate(examples: Sequence[EncodedExample]) -> SequenceBatch:
    L = max(ex.length for ex in examples)
    ids = np.full((len(examples), L), PAD, dtype=np.int64)
    mask = np.zeros((len(examples), L))
    for i, ex in enumerate(examples):
        ids[i, : ex.length] = ex.ids
        mask[i, : ex.length] = 1.0
    labels = np.array([ex.label for ex in examples], dtype=np.int64)
    return SequenceBatch(ids, mask, labels)


def batch_iter(
    examples: Sequence[EncodedExample], batch_size: int, shuffle: bool = False, seed: int = 0
) -> Iterator[SequenceBatch]:
    """Yield batches padded to their longest member; the last may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        yield collate([examples[i] for i in order[start : start + batch_size]])
