"""Byte-pair encoding: merge learning, application, and decoding.

Learning starts from characters, with the word-end marker ``</w>`` fused
onto each word's final character, and repeatedly merges the most frequent
adjacent symbol pair. Ties go to the lexicographically smallest pair, and
learning stops early once no pair occurs at least twice. Pair counts are
kept incrementally with a lazy max-heap, so learning tens of thousands of
merges stays fast on corpora with millions of tokens.

Application is greedy per word: of the pairs present in the word, the one
learned earliest is merged first (repeatedly), which reproduces applying
the merge list in order. Unknown characters simply stay single units, so
``bpe_decode(bpe_apply(text))`` is the identity on any text.

Model files start with ``#version: mtforge-bpe 1`` followed by one
``left right`` pair per line in learned order.
"""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus, Tokens
from .errors import MtforgeError

END_MARKER = "</w>"
FILE_HEADER = "#version: mtforge-bpe 1"


@dataclass
class BpeModel:
    merges: list[tuple[str, str]]
    vocab: set[str] = field(default_factory=set)
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._ranks:
            self._ranks = {pair: i for i, pair in enumerate(self.merges)}


def _word_symbols(word: str) -> tuple[str, ...]:
    if len(word) == 1:
        return (word + END_MARKER,)
    return tuple(word[:-1]) + (word[-1] + END_MARKER,)


def _count_pairs(symbols: Sequence[str]) -> Counter:
    return Counter(zip(symbols, symbols[1:]))


def _merge_word(symbols: Sequence[str], pair: tuple[str, str]) -> tuple[str, ...]:
    """Replace non-overlapping occurrences of pair, scanning left to right."""
    out: list[str] = []
    i = 0
    merged = pair[0] + pair[1]
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_learn(data: Corpus | Iterable[Tokens], merges: int = 40_000) -> BpeModel:
    if merges < 0:
        raise MtforgeError(f"merge count must be non-negative, got {merges}")
    sentences = data.sentences() if isinstance(data, Corpus) else data
    word_freq: Counter[str] = Counter()
    for sent in sentences:
        word_freq.update(sent)
    if not word_freq:
        raise MtforgeError("cannot learn BPE merges from an empty corpus")

    words = [list(_word_symbols(w)) for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[str, str]] = Counter()
    pair_words: dict[tuple[str, str], set[int]] = {}
    for idx, (symbols, freq) in enumerate(zip(words, freqs)):
        for pair, c in _count_pairs(symbols).items():
            pair_counts[pair] += c * freq
            pair_words.setdefault(pair, set()).add(idx)

    # lazy heap: entries are (-count, pair); stale entries are skipped on pop
    heap = [(-c, pair) for pair, c in pair_counts.items()]
    heapq.heapify(heap)
    learned: list[tuple[str, str]] = []
    while len(learned) < merges and heap:
        neg, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if count != -neg:
            continue  # stale
        if count < 2:
            break
        learned.append(pair)
        touched: Counter[tuple[str, str]] = Counter()
        for idx in pair_words.get(pair, ()):
            freq = freqs[idx]
            old = words[idx]
            new = list(_merge_word(old, pair))
            for p, c in _count_pairs(old).items():
                touched[p] -= c * freq
            for p, c in _count_pairs(new).items():
                touched[p] += c * freq
                pair_words.setdefault(p, set()).add(idx)
            words[idx] = new
        for p, delta in touched.items():
            if delta == 0:
                continue
            pair_counts[p] += delta
            if pair_counts[p] <= 0:
                del pair_counts[p]
            else:
                heapq.heappush(heap, (-pair_counts[p], p))
        pair_counts.pop(pair, None)
    vocab = {sym for symbols in words for sym in symbols}
    return BpeModel(merges=learned, vocab=vocab)


def _encode_word(model: BpeModel, word: str) -> tuple[str, ...]:
    cached = model._cache.get(word)
    if cached is not None:
        return cached
    symbols = list(_word_symbols(word))
    while len(symbols) > 1:
        best_rank = None
        best_pair = None
        for pair in zip(symbols, symbols[1:]):
            rank = model._ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
                best_pair = pair
        if best_pair is None:
            break
        symbols = list(_merge_word(symbols, best_pair))
    units = tuple(symbols)
    model._cache[word] = units
    return units


def bpe_apply(model: BpeModel, tokens: Sequence[str]) -> tuple[str, ...]:
    """Split a word-level sentence into subword units."""
    out: list[str] = []
    for tok in tokens:
        out.extend(_encode_word(model, tok))
    return tuple(out)


def bpe_decode(units: Sequence[str]) -> tuple[str, ...]:
    """Rejoin subword units into words: concatenate, split on the marker."""
    text = "".join(units)
    words = text.split(END_MARKER)
    if words and words[-1] == "":
        words.pop()
    return tuple(w for w in words if w)


def save_bpe(model: BpeModel, path: str | Path) -> None:
    lines = [FILE_HEADER] + [f"{a} {b}" for a, b in model.merges]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_bpe(path: str | Path) -> BpeModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != FILE_HEADER:
        raise MtforgeError(f"{path}: missing BPE header {FILE_HEADER!r}")
    merges = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise MtforgeError(f"{path}:{i}: expected 'left right'")
        merges.append((parts[0], parts[1]))
    return BpeModel(merges=merges)
