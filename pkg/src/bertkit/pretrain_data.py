"""MLM + NSP pretraining example construction and dataset serialization.

Documents become sentence pairs (consecutive or randomly crossed for the
next-sentence objective), packed as [CLS] A [SEP] B [SEP], masked, and padded.
Everything is a pure function of (corpus, vocabulary, config, seed): a dataset
built twice with the same inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document
from .wordpiece import CLS_ID, MASK_ID, PAD_ID, SEP_ID, TokenSequence, Vocabulary, tokenize

MAGIC = b"BKDS"
FORMAT_VERSION = 1
N_SPECIAL = 5  # ids 0-4 are special; random replacement draws from [5, vocab)


class NspLabel(IntEnum):
    IS_NEXT = 0
    NOT_NEXT = 1


@dataclass(frozen=True)
class MaskingPolicy:
    """Per-token selection probability and the replace/randomize/keep split."""

    mask_fraction: float = 0.15
    replace_with_mask_prob: float = 0.8
    replace_with_random_prob: float = 0.1
    keep_original_prob: float = 0.1

    def __post_init__(self):
        total = (self.replace_with_mask_prob + self.replace_with_random_prob
                 + self.keep_original_prob)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"replacement probabilities must sum to 1, got {total}")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError(f"mask_fraction must be in (0, 1), got {self.mask_fraction}")


@dataclass
class PretrainExample:
    """One padded training example; arrays all have length max_seq_length."""

    input_ids: np.ndarray
    segment_ids: np.ndarray
    pad_mask: np.ndarray
    masked_positions: np.ndarray
    masked_label_ids: np.ndarray
    nsp_label: int
    original_ids: np.ndarray | None = None  # unmasked packed ids, debug builds only


@dataclass(frozen=True)
class PackedPair:
    tokens: tuple[str, ...]
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]


@dataclass
class Dataset:
    examples: list[PretrainExample]
    max_seq_length: int
    vocab_size: int
    vocab_hash: str
    seed: int
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.examples)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest()


def pack_pair(sent_a: TokenSequence, sent_b: TokenSequence | None,
              max_seq_length: int, vocab: Vocabulary) -> PackedPair:
    """Pack [CLS] A [SEP] (B [SEP]) trimming the longer sentence's tail to fit."""
    if max_seq_length < 5:
        raise ValueError(f"max_seq_length must be >= 5, got {max_seq_length}")
    a = list(sent_a.ids)
    b = list(sent_b.ids) if sent_b is not None else None
    if not a and not b:
        raise ValueError("cannot pack a pair of empty sentences")
    specials = 3 if b is not None else 2
    budget = max_seq_length - specials
    while len(a) + len(b or ()) > budget:
        if b is not None and len(a) <= len(b):
            b.pop()
        else:
            a.pop()
    ids = [CLS_ID] + a + [SEP_ID]
    segments = [0] * len(ids)
    if b is not None:
        ids += b + [SEP_ID]
        segments += [1] * (len(b) + 1)
    return PackedPair(
        tokens=tuple(vocab.decode(ids)),
        ids=tuple(ids),
        segment_ids=tuple(segments),
    )


def sample_nsp_pairs(docs: Sequence[Document], random_pair_prob: float,
                     rng_seed) -> list[tuple[str, str, NspLabel]]:
    """Emit (sentence_a, sentence_b, label) for every consecutive in-document pair.

    With probability random_pair_prob the true successor is swapped for a
    uniformly drawn sentence from a different document (label NOT_NEXT).
    Deterministic under rng_seed.
    """
    docs = list(docs)
    total_sentences = sum(len(d.sentences) for d in docs)
    if total_sentences < 2:
        raise ValueError("corpus has fewer than 2 sentences; no pairs to sample")
    if len(docs) < 2:
        raise ValueError("need at least 2 documents so NotNext pairs can cross documents")
    doc_of_sentence = []
    flat_sentences = []
    for di, doc in enumerate(docs):
        for s in doc.sentences:
            doc_of_sentence.append(di)
            flat_sentences.append(s)
    doc_of_sentence = np.array(doc_of_sentence)

    rng = _rng(rng_seed)
    pairs: list[tuple[str, str, NspLabel]] = []
    for di, doc in enumerate(docs):
        for a, b in zip(doc.sentences, doc.sentences[1:]):
            if rng.random() < random_pair_prob:
                candidates = np.flatnonzero(doc_of_sentence != di)
                pick = int(candidates[rng.integers(len(candidates))])
                pairs.append((a, flat_sentences[pick], NspLabel.NOT_NEXT))
            else:
                pairs.append((a, b, NspLabel.IS_NEXT))
    return pairs


def apply_masking(packed: PackedPair, policy: MaskingPolicy, vocab_size: int,
                  rng_seed) -> tuple[list[int], list[int], list[int]]:
    """Mask non-special positions of a packed sequence.

    Each candidate is selected independently with probability mask_fraction
    (at least one is forced). Selected positions become [MASK] with
    replace_with_mask_prob, a random non-special token with
    replace_with_random_prob, or stay unchanged. Returns
    (masked_ids, positions, original_label_ids).
    """
    candidates = [i for i, tid in enumerate(packed.ids) if tid >= N_SPECIAL]
    if not candidates:
        raise ValueError("sequence contains only special tokens; nothing to mask")
    rng = _rng(rng_seed)
    picks = rng.random(len(candidates))
    selected = [pos for pos, u in zip(candidates, picks) if u < policy.mask_fraction]
    if not selected:
        selected = [candidates[int(rng.integers(len(candidates)))]]

    ids = list(packed.ids)
    labels = []
    for pos in selected:
        labels.append(ids[pos])
        u = rng.random()
        if u < policy.replace_with_mask_prob:
            ids[pos] = MASK_ID
        elif u < policy.replace_with_mask_prob + policy.replace_with_random_prob:
            ids[pos] = int(rng.integers(N_SPECIAL, vocab_size))
        # else: keep the original token; the label still trains the position
    return ids, selected, labels


def _pad_to(values: Sequence[int], length: int, fill: int) -> np.ndarray:
    out = np.full(length, fill, dtype=np.int64)
    out[: len(values)] = values
    return out


def build_examples(docs: Sequence[Document], vocab: Vocabulary, max_seq_length: int,
                   policy: MaskingPolicy, seed: int, random_pair_prob: float = 0.5,
                   keep_originals: bool = False) -> list[PretrainExample]:
    """tokenize -> sample pairs -> pack -> mask -> pad, in deterministic order.

    NSP sampling uses stream (seed, 0); example i is masked with stream
    (seed, 1, i), so construction order cannot change the output.
    """
    token_cache: dict[str, TokenSequence] = {}

    def toks(sentence: str) -> TokenSequence:
        if sentence not in token_cache:
            token_cache[sentence] = tokenize(sentence, vocab)
        return token_cache[sentence]

    pairs = sample_nsp_pairs(docs, random_pair_prob, [seed, 0])
    examples = []
    for i, (a, b, label) in enumerate(pairs):
        packed = pack_pair(toks(a), toks(b), max_seq_length, vocab)
        masked_ids, positions, labels = apply_masking(packed, policy, len(vocab), [seed, 1, i])
        examples.append(PretrainExample(
            input_ids=_pad_to(masked_ids, max_seq_length, PAD_ID),
            segment_ids=_pad_to(packed.segment_ids, max_seq_length, 0),
            pad_mask=_pad_to([1] * len(packed.ids), max_seq_length, 0),
            masked_positions=np.asarray(positions, dtype=np.int64),
            masked_label_ids=np.asarray(labels, dtype=np.int64),
            nsp_label=int(label),
            original_ids=_pad_to(packed.ids, max_seq_length, PAD_ID) if keep_originals else None,
        ))
    return examples


def build_dataset(docs: Sequence[Document], vocab: Vocabulary, max_seq_length: int,
                  policy: MaskingPolicy, seed: int, out_dir: str | Path,
                  random_pair_prob: float = 0.5, keep_originals: bool = False) -> Dataset:
    """Build examples and serialize them (plus a JSON manifest) under out_dir."""
    examples = build_examples(docs, vocab, max_seq_length, policy, seed,
                              random_pair_prob, keep_originals)
    dataset = Dataset(
        examples=examples,
        max_seq_length=max_seq_length,
        vocab_size=len(vocab),
        vocab_hash=vocab_hash(vocab),
        seed=seed,
        manifest={
            "example_count": len(examples),
            "max_seq_length": max_seq_length,
            "vocab_size": len(vocab),
            "vocab_sha256": vocab_hash(vocab),
            "seed": seed,
            "random_pair_prob": random_pair_prob,
            "mask_fraction": policy.mask_fraction,
            "replace_with_mask_prob": policy.replace_with_mask_prob,
            "replace_with_random_prob": policy.replace_with_random_prob,
            "keep_original_prob": policy.keep_original_prob,
            "document_count": len(docs),
            "originals_retained": keep_originals,
            "not_next_count": sum(e.nsp_label == NspLabel.NOT_NEXT for e in examples),
        },
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out_dir / "data.bin")
    (out_dir / "manifest.json").write_text(
        json.dumps(dataset.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return dataset


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Length-prefixed binary records behind a magic/version/config header."""
    seq = dataset.max_seq_length
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        flags = 1 if dataset.manifest.get("originals_retained") else 0
        f.write(struct.pack("<IIQ", FORMAT_VERSION, seq, dataset.seed & (2**64 - 1)))
        f.write(struct.pack("<I", dataset.vocab_size))
        f.write(bytes.fromhex(dataset.vocab_hash))
        f.write(struct.pack("<IQ", flags, len(dataset.examples)))
        for ex in dataset.examples:
            payload = bytearray()
            payload += struct.pack("<BH", ex.nsp_label, len(ex.masked_positions))
            payload += ex.input_ids.astype("<i4").tobytes()
            payload += ex.segment_ids.astype("<u1").tobytes()
            payload += ex.pad_mask.astype("<u1").tobytes()
            payload += ex.masked_positions.astype("<u2").tobytes()
            payload += ex.masked_label_ids.astype("<i4").tobytes()
            if flags & 1:
                payload += ex.original_ids.astype("<i4").tobytes()
            f.write(struct.pack("<I", len(payload)))
            f.write(payload)


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset directory (or data.bin file) written by build_dataset."""
    path = Path(path)
    if path.is_dir():
        bin_path, manifest_path = path / "data.bin", path / "manifest.json"
    else:
        bin_path, manifest_path = path, path.with_name("manifest.json")
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    raw = bin_path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{bin_path}: not a dataset file (bad magic)")
    off = 4
    version, seq, seed = struct.unpack_from("<IIQ", raw, off)
    off += 16
    if version != FORMAT_VERSION:
        raise ValueError(f"{bin_path}: unsupported dataset format version {version}")
    (vocab_size,) = struct.unpack_from("<I", raw, off)
    off += 4
    vhash = raw[off:off + 32].hex()
    off += 32
    flags, count = struct.unpack_from("<IQ", raw, off)
    off += 12

    examples = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        end = off + n
        nsp, n_masked = struct.unpack_from("<BH", raw, off)
        p = off + 3
        input_ids = np.frombuffer(raw, "<i4", seq, p).astype(np.int64); p += 4 * seq
        segment_ids = np.frombuffer(raw, "<u1", seq, p).astype(np.int64); p += seq
        pad_mask = np.frombuffer(raw, "<u1", seq, p).astype(np.int64); p += seq
        positions = np.frombuffer(raw, "<u2", n_masked, p).astype(np.int64); p += 2 * n_masked
        labels = np.frombuffer(raw, "<i4", n_masked, p).astype(np.int64); p += 4 * n_masked
        originals = None
        if flags & 1:
            originals = np.frombuffer(raw, "<i4", seq, p).astype(np.int64); p += 4 * seq
        if p != end:
            raise ValueError(f"{bin_path}: corrupt record (size mismatch)")
        examples.append(PretrainExample(input_ids, segment_ids, pad_mask,
                                        positions, labels, int(nsp), originals))
        off = end
    return Dataset(examples=examples, max_seq_length=seq, vocab_size=vocab_size,
                   vocab_hash=vhash, seed=seed, manifest=manifest)
