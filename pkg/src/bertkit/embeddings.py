"""Sentence embeddings: per-token vectors, mean pooling, cosine similarity."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import clean_text
from .model import Parameters, forward
from .pretrain_data import PackedPair, pack_pair
from .training import Checkpoint
from .wordpiece import CLS_ID, SEP_ID, Vocabulary, tokenize


@dataclass(frozen=True)
class PoolingPolicy:
    """Which hidden layer supplies token vectors and which positions are pooled.

    layer_index None means the final layer. Padding is never pooled; special
    tokens ([CLS]/[SEP]) are excluded unless include_special_tokens is set.
    """

    layer_index: int | None = None
    include_special_tokens: bool = False


@dataclass(frozen=True)
class SentenceEmbedding:
    vector: np.ndarray
    token_count: int
    source_sentence: str = ""


def _as_params(model: Checkpoint | Parameters) -> Parameters:
    return model.to_params() if isinstance(model, Checkpoint) else model


def pack_sentence(sentence: str, vocab: Vocabulary, max_seq_length: int) -> PackedPair:
    """Clean, tokenize, and pack one sentence as [CLS] tokens [SEP] (no padding).

    Sentences longer than max_seq_length - 2 tokens are tail-truncated with a
    warning rather than rejected.
    """
    cleaned = clean_text(sentence)
    if not cleaned:
        raise ValueError(f"sentence is empty after cleaning: {sentence!r}")
    seq = tokenize(cleaned, vocab)
    if len(seq) == 0:
        raise ValueError(f"sentence has no tokens after cleaning: {sentence!r}")
    if len(seq) > max_seq_length - 2:
        warnings.warn(
            f"sentence of {len(seq)} tokens truncated to {max_seq_length - 2}",
            stacklevel=2)
    return pack_pair(seq, None, max_seq_length, vocab)


def token_embeddings(model: Checkpoint | Parameters, sentence: str, vocab: Vocabulary,
                     policy: PoolingPolicy = PoolingPolicy()) -> list[np.ndarray]:
    """Hidden-state vectors for one sentence at the policy's layer and positions.

    The sentence runs through the encoder in eval mode (dropout off) as a
    single-sentence input; the result is one vector per selected token.
    """
    params = _as_params(model)
    packed = pack_sentence(sentence, vocab, params.config.max_seq_length)
    n = len(packed.ids)
    out = forward(
        params,
        np.asarray([packed.ids]),
        np.asarray([packed.segment_ids]),
        np.ones((1, n), dtype=np.int64),
        mode="eval",
    )
    layer = policy.layer_index if policy.layer_index is not None else params.config.num_layers
    if not 0 <= layer <= params.config.num_layers:
        raise ValueError(
            f"layer_index {layer} outside [0, {params.config.num_layers}]")
    hidden = out.hidden_states[layer].data[0]
    if policy.include_special_tokens:
        keep = range(n)
    else:
        keep = [i for i, tid in enumerate(packed.ids) if tid not in (CLS_ID, SEP_ID)]
        if not keep:
            raise ValueError(f"sentence has only special tokens: {sentence!r}")
    return [hidden[i].copy() for i in keep]


def mean_pool(vectors: list[np.ndarray], source_sentence: str = "") -> SentenceEmbedding:
    """Component-wise arithmetic mean of the token vectors."""
    if not vectors:
        raise ValueError("cannot pool an empty vector list")
    dims = {v.shape for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"token vectors have mixed dimensions: {sorted(dims)}")
    return SentenceEmbedding(
        vector=np.mean(vectors, axis=0),
        token_count=len(vectors),
        source_sentence=source_sentence,
    )


def embed_sentence(model: Checkpoint | Parameters, sentence: str, vocab: Vocabulary,
                   policy: PoolingPolicy = PoolingPolicy()) -> SentenceEmbedding:
    """token_embeddings followed by mean_pool."""
    return mean_pool(token_embeddings(model, sentence, vocab, policy), sentence)


def cosine(a: SentenceEmbedding | np.ndarray, b: SentenceEmbedding | np.ndarray) -> float:
    """dot(a, b) / (|a| |b|), clamped to [-1, 1] against rounding overshoot.

    A zero-norm vector is an error: its cosine is undefined, never silently 0.
    """
    va = a.vector if isinstance(a, SentenceEmbedding) else np.asarray(a, dtype=np.float64)
    vb = b.vector if isinstance(b, SentenceEmbedding) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na, nb = float(np.linalg.norm(va)), float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))
