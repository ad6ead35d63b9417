"""Interpolated Witten-Bell n-gram language models.

The conditional probability of token w after history h interpolates the
maximum-likelihood estimate with the next-lower order:

    p(w | h) = (c(h, w) + D(h) * p(w | h')) / (c(h) + D(h))

where c(h) is the history count, D(h) the number of distinct types seen
after h, and h' drops the oldest history token. The recursion bottoms out
at a uniform distribution over the vocabulary, which includes ``</s>``
and ``<unk>``, so every token in every context has positive probability
and the distribution over the vocabulary sums to one at every order.

Training counts n-grams of every order 1..n over sentences padded with
``<s>`` history and a single ``</s>`` event; tokens rarer than
``min_count`` are mapped to ``<unk>`` first. Scoring walks a materialized
probability table in backoff form (the stored probabilities are the
interpolated values, and the backoff weight of a history is
D(h) / (c(h) + D(h))), which gives the same value as the recursion.

Cross-entropy is reported in nats per token with the end sentinel
included: N = len(sentence) + 1. Character-level models convert a word
sequence into characters with a ``<sp>`` unit marking word boundaries.

Model files are a sorted ARPA-like text table, one n-gram per line:
``log p<TAB>n-gram<TAB>log backoff`` with natural logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus, Level, SentencePair, Tokens
from .errors import MtforgeError
from .parallel import parallel_map

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SPACE_UNIT = "<sp>"

Gram = tuple[str, ...]


def as_units(tokens: Sequence[str], level: Level) -> tuple[str, ...]:
    """Convert a word-level sentence to the units of the given level."""
    if level == Level.CHAR:
        units: list[str] = []
        for i, tok in enumerate(tokens):
            if i:
                units.append(SPACE_UNIT)
            units.extend(tok)
        return tuple(units)
    return tuple(tokens)


@dataclass
class NGramLM:
    order: int
    level: Level
    vocab: frozenset[str]
    probs: dict[Gram, float]
    bows: dict[Gram, float]
    counts: dict[Gram, int] = field(default_factory=dict, repr=False)

    def _map(self, unit: str) -> str:
        return unit if unit in self.vocab or unit == BOS else UNK

    def prob(self, token: str, history: Sequence[str] = ()) -> float:
        """p(token | history); history tokens are at the model's level."""
        w = self._map(token)
        h: Gram = tuple(self._map(u) for u in history[max(0, len(history) - self.order + 1):])
        weight = 1.0
        while True:
            hit = self.probs.get(h + (w,))
            if hit is not None:
                return weight * hit
            if not h:
                return weight * self.probs[(UNK,)]
            weight *= self.bows.get(h, 1.0)
            h = h[1:]


def _event_logprobs(lm: NGramLM, tokens: Sequence[str]) -> list[float]:
    units = as_units(tokens, lm.level)
    history: list[str] = [BOS] * (lm.order - 1)
    out = []
    for unit in (*units, EOS):
        out.append(math.log(lm.prob(unit, tuple(history))))
        history.append(unit)
        if lm.order > 1:
            history = history[-(lm.order - 1):]
        else:
            history = []
    return out

def log_likelihood(lm: NGramLM, tokens: Sequence[str]) -> float:
    """Total natural-log likelihood of the sentence plus its end event."""
    return sum(_event_logprobs(lm, tokens))


def cross_entropy(lm: NGramLM, tokens: Sequence[str]) -> float:
    """Nats per token, end sentinel included: N = len(sentence) + 1."""
    logs = _event_logprobs(lm, tokens)
    return -sum(logs) / len(logs)


def _sentences_of(data: Corpus | Iterable[Tokens]) -> list[Tokens]:
    if isinstance(data, Corpus):
        return data.sentences()
    return [tuple(s) for s in data]


def train_ngram(
    data: Corpus | Iterable[Tokens],
    order: int,
    level: Level = Level.WORD,
    min_count: int = 2,
) -> NGramLM:
    if order < 1:
        raise MtforgeError(f"order must be >= 1, got {order}")
    if min_count < 1:
        raise MtforgeError(f"min_count must be >= 1, got {min_count}")
    sentences = [as_units(s, level) for s in _sentences_of(data)]
    unit_counts: dict[str, int] = {}
    for sent in sentences:
        for unit in sent:
            unit_counts[unit] = unit_counts.get(unit, 0) + 1
    if not sentences:
        raise MtforgeError("cannot train a language model on an empty corpus")
    kept = {u for u, c in unit_counts.items() if c >= min_count}
    vocab = frozenset(kept | {EOS, UNK})

    counts: dict[Gram, int] = {}
    hist_count: dict[Gram, int] = {}
    cont: dict[Gram, int] = {}
    for sent in sentences:
        mapped = [u if u in kept else UNK for u in sent]
        padded = [BOS] * (order - 1) + mapped + [EOS]
        for pos in range(order - 1, len(padded)):
            for k in range(1, order + 1):
                gram = tuple(padded[pos - k + 1: pos + 1])
                hist = gram[:-1]
                if counts.get(gram, 0) == 0:
                    cont[hist] = cont.get(hist, 0) + 1
                counts[gram] = counts.get(gram, 0) + 1
                hist_count[hist] = hist_count.get(hist, 0) + 1

    # materialize interpolated probabilities level by level
    probs: dict[Gram, float] = {}
    total = hist_count[()]
    d0 = cont[()]
    uniform = 1.0 / len(vocab)
    for w in vocab:
        probs[(w,)] = (counts.get((w,), 0) + d0 * uniform) / (total + d0)
    for k in range(2, order + 1):
        for gram, c in counts.items():
            if len(gram) != k:
                continue
            hist = gram[:-1]
            lower = probs[gram[1:]]
            probs[gram] = (c + cont[hist] * lower) / (hist_count[hist] + cont[hist])
    bows = {
        h: cont[h] / (hist_count[h] + cont[h])
        for h in hist_count
        if 0 < len(h) < order
    }
    return NGramLM(order, level, vocab, probs, bows, counts=counts)


def format_lm(lm: NGramLM) -> str:
    lines = [f"#mtforge-lm\torder={lm.order}\tlevel={lm.level.value}"]
    for gram in sorted(lm.probs, key=lambda g: (len(g), g)):
        logp = math.log(lm.probs[gram])
        logbow = math.log(lm.bows[gram]) if gram in lm.bows else 0.0
        lines.append(f"{logp!r}\t{' '.join(gram)}\t{logbow!r}")
    return "".join(line + "\n" for line in lines)


def save_lm(lm: NGramLM, path: str | Path) -> None:
    Path(path).write_text(format_lm(lm), encoding="utf-8")


def load_lm(path: str | Path) -> NGramLM:
    return _parse_lm(Path(path).read_text(encoding="utf-8"), str(path))


def _parse_lm(text: str, origin: str) -> NGramLM:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#mtforge-lm"):
        raise MtforgeError(f"{origin}: not a language model file")
    header = dict(f.split("=", 1) for f in lines[0].split("\t")[1:])
    try:
        order = int(header["order"])
        level = Level(header["level"])
    except (KeyError, ValueError) as exc:
        raise MtforgeError(f"{origin}: bad model header: {exc}") from exc
    probs: dict[Gram, float] = {}
    bows: dict[Gram, float] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MtforgeError(f"{origin}:{i}: expected logp<TAB>ngram<TAB>logbow")
        gram = tuple(parts[1].split(" "))
        probs[gram] = math.exp(float(parts[0]))
        logbow = float(parts[2])
        if len(gram) < order and logbow != 0.0:
            bows[gram] = math.exp(logbow)
    vocab = frozenset(g[0] for g in probs if len(g) == 1)
    if UNK not in vocab:
        raise MtforgeError(f"{origin}: model has no {UNK} entry")
    return NGramLM(order, level, vocab, probs, bows)


def _ce_side(pair: SentencePair, lm: NGramLM, side: str) -> float:
    return cross_entropy(lm, pair.src if side == "src" else pair.tgt)


def score_corpus(
    lm: NGramLM,
    corpus: Corpus,
    side: str = "src",
    score_name: str | None = None,
    workers: int = 1,
) -> Corpus:
    """Attach per-sentence cross-entropy (nats/token) as a score."""
    if side not in ("src", "tgt"):
        raise MtforgeError(f"side must be src or tgt, got {side}")
    name = score_name or f"ce_{side}"
    values = parallel_map(partial(_ce_side, lm=lm, side=side), corpus.pairs, workers)
    pairs = [p.with_score(name, v) for p, v in zip(corpus, values)]
    return Corpus(pairs, side=corpus.side, level=corpus.level)
