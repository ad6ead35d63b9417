"""BLEU: clipped n-gram statistics and corpus/sentence scores.

Statistics for n = 1..4 form a monoid: per-sentence counts add, and the
corpus score is computed once over the summed counts,

    BLEU = 100 * BP * exp( (1/4) * sum_n ln p_n )

with p_n the clipped precision and BP = min(1, exp(1 - ref_len/hyp_len)).
Any zero precision (or an empty hypothesis set) gives exactly 0, and
identical corpora give exactly 100.

The sentence-level variant used for hypothesis gating adds one to both
numerator and denominator for n >= 2 only, so a perfect sentence still
scores exactly 100 while short sentences with no higher-order overlap
stay comparable.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuStats:
    matches: tuple[int, int, int, int]
    totals: tuple[int, int, int, int]
    hyp_len: int
    ref_len: int

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.totals, other.totals)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


ZERO_STATS = BleuStats((0, 0, 0, 0), (0, 0, 0, 0), 0, 0)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyp: Sequence[str], ref: Sequence[str]) -> BleuStats:
    """Clipped match and total counts for n = 1..4."""
    matches = []
    totals = []
    for n in range(1, MAX_ORDER + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matches.append(sum(min(c, ref_counts[g]) for g, c in hyp_counts.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return BleuStats(tuple(matches), tuple(totals), len(hyp), len(ref))


def _brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def corpus_bleu(stats: Iterable[BleuStats] | BleuStats) -> float:
    """Corpus BLEU in [0, 100] over summed statistics."""
    if isinstance(stats, BleuStats):
        total = stats
    else:
        total = ZERO_STATS
        for s in stats:
            total = total + s
    if total.hyp_len == 0:
        return 0.0
    precisions = []
    for m, t in zip(total.matches, total.totals):
        precisions.append(m / t if t > 0 else 0.0)
    if any(p == 0.0 for p in precisions):
        return 0.0
    log_mean = math.fsum(math.log(p) for p in precisions) / MAX_ORDER
    return 100.0 * _brevity_penalty(total.hyp_len, total.ref_len) * math.exp(log_mean)


def corpus_bleu_detail(stats: Iterable[BleuStats] | BleuStats) -> dict:
    """Score plus the per-order precisions and lengths, for reporting."""
    if isinstance(stats, BleuStats):
        total = stats
    else:
        total = ZERO_STATS
        for s in stats:
            total = total + s
    precisions = [
        (m / t if t > 0 else 0.0) for m, t in zip(total.matches, total.totals)
    ]
    return {
        "bleu": corpus_bleu(total),
        "precisions": precisions,
        "bp": _brevity_penalty(total.hyp_len, total.ref_len) if total.hyp_len else 0.0,
        "hyp_len": total.hyp_len,
        "ref_len": total.ref_len,
    }


def sentence_bleu(hyp: Sequence[str], ref: Sequence[str]) -> float:
    """Smoothed sentence BLEU: add-1 on orders n >= 2 only."""
    if not hyp:
        return 0.0
    s = bleu_stats(hyp, ref)
    p1 = s.matches[0] / s.totals[0]
    if p1 == 0.0:
        return 0.0
    logs = [math.log(p1)]
    for m, t in zip(s.matches[1:], s.totals[1:]):
        logs.append(math.log((m + 1.0) / (t + 1.0)))
    return 100.0 * _brevity_penalty(s.hyp_len, s.ref_len) * math.exp(math.fsum(logs) / MAX_ORDER)
