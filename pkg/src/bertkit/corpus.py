"""Corpus ingestion, cleaning, sentence segmentation, and statistics.

Raw records (CSV rows or plain-text lines) are cleaned down to lowercase
letters, spaces, and a small retained punctuation set, then segmented into
documents of ordered sentences. The cleaned corpus file format produced here
(one document per block, one sentence per line, blank line between documents)
is the canonical input for vocabulary building and pretraining-data creation.
"""

from __future__ import annotations

import csv
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

# Punctuation the cleaner keeps: sentence structure plus contractions/hyphens.
KEPT_PUNCTUATION = ".!?,:;'-"
TERMINAL_PUNCTUATION = ".!?"

_TAG_RE = re.compile(r"<[^>]*>")
_DIGIT_RE = re.compile(r"[0-9]")
_DROP_RE = re.compile(r"[^a-z\s.!?,:;'-]")
_WS_RE = re.compile(r"\s+")
# A sentence ends at a run of terminal punctuation followed by a space.
_SENT_BOUNDARY_RE = re.compile(r"(?<=[.!?]) ")


@dataclass(frozen=True)
class RawRecord:
    """One source text unit, e.g. a CSV row or a line of a text file."""

    source_id: str
    text: str


@dataclass(frozen=True)
class Document:
    """A cleaned record split into ordered sentences."""

    doc_id: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    mean_sentence_length_words: float
    vocabulary_word_count: int


def ingest_csv(path: str | Path, text_column: str) -> list[RawRecord]:
    """Read one RawRecord per data row of a CSV file, in file order.

    Quoted fields (embedded commas/newlines) follow the usual CSV convention.
    Raises FileNotFoundError for a missing file, ValueError for a missing
    column or malformed quoting (naming the offending row).
    """
    path = Path(path)
    records: list[RawRecord] = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if text_column not in header:
            raise ValueError(
                f"{path}: column {text_column!r} not in header {header!r}"
            )
        col = header.index(text_column)
        row_num = 0
        try:
            for row in reader:
                row_num += 1
                if col >= len(row):
                    raise ValueError(
                        f"{path}: row {row_num} has {len(row)} fields, "
                        f"column {text_column!r} is missing"
                    )
                records.append(RawRecord(source_id=f"row{row_num}", text=row[col]))
        except csv.Error as err:
            raise ValueError(f"{path}: malformed CSV at row {row_num + 1}: {err}") from err
    return records


def ingest_text(path: str | Path) -> list[RawRecord]:
    """Read one RawRecord per non-empty line of a plain-text file."""
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line.strip():
                records.append(RawRecord(source_id=f"line{i}", text=line))
    return records


def clean_text(raw: str) -> str:
    """Normalize raw text to lowercase letters, spaces, and kept punctuation.

    In order: strip ``<...>`` tag spans, lowercase, strip accents (Unicode
    decomposition, drop combining marks), delete digits, replace every other
    disallowed character with a space, collapse whitespace runs, trim.
    Total and idempotent.
    """
    text = _TAG_RE.sub(" ", raw)
    text = text.lower()
    text = unicodedata.normalize("NFD", text)
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = _DIGIT_RE.sub("", text)
    text = _DROP_RE.sub(" ", text)
    text = _WS_RE.sub(" ", text)
    return text.strip()


def split_sentences(text: str) -> list[str]:
    """Split cleaned text at terminal punctuation (., !, ?) followed by a space.

    The terminator stays with its sentence, so joining the parts with single
    spaces recovers the input exactly.
    """
    return [part for part in _SENT_BOUNDARY_RE.split(text) if part]


def split_documents(records: Iterable[RawRecord]) -> list[Document]:
    """Turn cleaned records into Documents, one per record, order preserved.

    Records whose text is empty (i.e. cleaned to nothing) are dropped; the
    drop count is ``len(records) - len(result)``.
    """
    docs = []
    for rec in records:
        if not rec.text:
            continue
        docs.append(Document(doc_id=rec.source_id, sentences=tuple(split_sentences(rec.text))))
    return docs


def preprocess_records(records: Iterable[RawRecord]) -> tuple[list[Document], int]:
    """Clean and segment records; returns (documents, dropped_record_count)."""
    records = list(records)
    cleaned = [RawRecord(r.source_id, clean_text(r.text)) for r in records]
    docs = split_documents(cleaned)
    return docs, len(records) - len(docs)


def corpus_stats(docs: Iterable[Document]) -> CorpusStats:
    """Sentence count, mean whitespace-word length, and distinct word count."""
    sentence_count = 0
    word_count = 0
    vocab: set[str] = set()
    for doc in docs:
        for sent in doc.sentences:
            words = sent.split()
            sentence_count += 1
            word_count += len(words)
            vocab.update(words)
    if sentence_count == 0:
        raise ValueError("empty corpus: no sentences to summarize")
    return CorpusStats(
        sentence_count=sentence_count,
        mean_sentence_length_words=word_count / sentence_count,
        vocabulary_word_count=len(vocab),
    )


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    """Write the cleaned corpus file: one sentence per line, blank line between docs."""
    blocks = ["\n".join(doc.sentences) for doc in docs]
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def read_corpus(path: str | Path) -> list[Document]:
    """Read a cleaned corpus file back into Documents (ids are positional)."""
    text = Path(path).read_text(encoding="utf-8")
    docs = []
    for i, block in enumerate(text.split("\n\n")):
        sentences = tuple(line for line in block.splitlines() if line.strip())
        if sentences:
            docs.append(Document(doc_id=f"doc{i}", sentences=sentences))
    return docs
