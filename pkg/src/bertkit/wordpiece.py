"""WordPiece subword vocabulary: training, vocab.txt serialization, tokenization.

The trainer is frequency-based pair merging over a character inventory, with
non-initial pieces carrying the ``##`` continuation marker. Tokenization is
greedy longest-match-first per word, falling back to ``[UNK]`` when a word
has no full decomposition.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .corpus import KEPT_PUNCTUATION

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

DEFAULT_MAX_WORD_LENGTH = 100


class Vocabulary:
    """Immutable token<->id map; ids are dense and specials sit at ids 0-4."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: tuple[str, ...] = tuple(tokens)
        self.index: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in self.index:
                raise ValueError(f"duplicate token in vocabulary: {tok!r}")
            self.index[tok] = i
        for want_id, tok in enumerate(SPECIAL_TOKENS):
            if tok not in self.index:
                raise ValueError(f"vocabulary is missing special token {tok}")
            if self.index[tok] != want_id:
                raise ValueError(
                    f"special token {tok} must have id {want_id}, found {self.index[tok]}"
                )

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index[token]

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index[t] for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.tokens)


def pre_split(text: str) -> list[str]:
    """Split on whitespace, then isolate each kept punctuation mark as a word."""
    words: list[str] = []
    for chunk in text.split():
        buf = ""
        for ch in chunk:
            if ch in KEPT_PUNCTUATION:
                if buf:
                    words.append(buf)
                    buf = ""
                words.append(ch)
            else:
                buf += ch
        if buf:
            words.append(buf)
    return words


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(ch if i == 0 else "##" + ch for i, ch in enumerate(word))


def _merge_symbols(a: str, b: str) -> str:
    # b is always a continuation symbol when a and b are adjacent in a word
    return a + b[2:]


def build_vocab(sentences: Iterable[str], target_size: int, min_frequency: int = 2) -> Vocabulary:
    """Train a WordPiece vocabulary by iterative highest-frequency pair merging.

    The result holds the 5 special tokens, every seen character (word-initial
    and ``##`` continuation form), and merged subwords, until target_size is
    reached or no adjacent pair occurs at least min_frequency times. Ties are
    broken lexicographically so training is deterministic.
    """
    word_freq: Counter[str] = Counter()
    for sent in sentences:
        word_freq.update(pre_split(sent))
    if not word_freq:
        raise ValueError("empty corpus: nothing to build a vocabulary from")

    words = {w: _word_symbols(w) for w in word_freq}
    alphabet = sorted({sym for syms in words.values() for sym in syms})
    base = len(SPECIAL_TOKENS) + len(alphabet)
    if target_size <= base:
        raise ValueError(
            f"target_size {target_size} too small: need more than "
            f"{len(SPECIAL_TOKENS)} specials + {len(alphabet)} characters"
        )

    vocab = list(SPECIAL_TOKENS) + alphabet
    while len(vocab) < target_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for w, syms in words.items():
            freq = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        best_pair = min(pair_freq, key=lambda p: (-pair_freq[p], p))
        if pair_freq[best_pair] < min_frequency:
            break
        merged = _merge_symbols(*best_pair)
        vocab.append(merged)
        a, b = best_pair
        for w, syms in words.items():
            if a not in syms:
                continue
            out: list[str] = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = tuple(out)
    return Vocabulary(vocab)


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Write one token per line (LF, UTF-8); line number = token id."""
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return Vocabulary(lines)


def _greedy_pieces(word: str, vocab: Vocabulary) -> list[str] | None:
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab:
                found = piece
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces


def tokenize(
    text: str, vocab: Vocabulary, max_word_length: int = DEFAULT_MAX_WORD_LENGTH
) -> TokenSequence:
    """Tokenize cleaned lowercase text into WordPiece subwords.

    Words are greedy longest-prefix decomposed; a word with no decomposition,
    or longer than max_word_length characters, becomes ``[UNK]``. No [CLS] or
    [SEP] is added here (packing does that).
    """
    tokens: list[str] = []
    for word in pre_split(text):
        if len(word) > max_word_length:
            tokens.append(SPECIAL_TOKENS[UNK_ID])
            continue
        pieces = _greedy_pieces(word, vocab)
        if pieces is None:
            tokens.append(SPECIAL_TOKENS[UNK_ID])
        else:
            tokens.extend(pieces)
    return TokenSequence(tokens=tuple(tokens), ids=tuple(vocab.encode(tokens)))


def detokenize_words(tokens: Iterable[str]) -> list[str]:
    """Rebuild the pre-split word list from subword tokens (## pieces attach left)."""
    words: list[str] = []
    for tok in tokens:
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return words
