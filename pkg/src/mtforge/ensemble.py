"""Greedy ensemble member selection on a development set.

Candidates arrive strongest-first. Every two-member subset of the top
eight is decoded on the dev set and scored with corpus BLEU; the best
pair seeds the ensemble. Remaining candidates are then tried one at a
time in candidate order, and the best extension is kept whenever it
improves dev BLEU by at least epsilon. All ties prefer earlier
candidates, so selection is deterministic, and the accepted-step BLEU
trace is non-decreasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from itertools import combinations
from typing import Mapping, Sequence

from .bleu import bleu_stats, corpus_bleu
from .corpus import Corpus, Tokens
from .decoding import DecodeConfig, DomainMixture, Ensemble, ModelOracle, NBestList, decode
from .errors import MtforgeError
from .parallel import parallel_map

DEFAULT_EPSILON = 0.1
PAIR_POOL = 8


def _decode_one(item: tuple[int, Tokens], oracle: ModelOracle, cfg: DecodeConfig) -> NBestList:
    src_id, src = item
    return decode(oracle, src_id, src, cfg)


def decode_corpus(
    oracle: ModelOracle,
    sources: Sequence[tuple[int, Tokens]],
    cfg: DecodeConfig,
    workers: int = 1,
) -> list[NBestList]:
    return parallel_map(partial(_decode_one, oracle=oracle, cfg=cfg), sources, workers)


def _dev_bleu(
    members: Sequence[ModelOracle],
    dev: Corpus,
    cfg: DecodeConfig,
    strategy: str,
    workers: int,
) -> float:
    oracle = Ensemble(members, strategy=strategy)
    sources = [(p.pair_id, p.src) for p in dev]
    lists = decode_corpus(oracle, sources, cfg, workers)
    stats = [bleu_stats(nb.best().tokens, p.tgt) for nb, p in zip(lists, dev.pairs)]
    return corpus_bleu(stats)


@dataclass
class EnsembleSelection:
    members: list[str]
    bleu: float
    trace: list[tuple[tuple[str, ...], float]]


def greedy_ensemble_select(
    candidates: Sequence[ModelOracle],
    dev: Corpus,
    cfg: DecodeConfig | None = None,
    epsilon: float = DEFAULT_EPSILON,
    strategy: str = "log_avg",
    workers: int = 1,
) -> EnsembleSelection:
    """Pick ensemble members; candidates must be ordered strongest-first."""
    if len(candidates) < 2:
        raise MtforgeError("ensemble selection needs at least two candidates")
    if not len(dev):
        raise MtforgeError("ensemble selection needs a non-empty dev corpus")
    cfg = cfg or DecodeConfig()
    names = [c.name for c in candidates]
    if len(set(names)) != len(names):
        raise MtforgeError(f"candidate names must be unique: {names}")

    pool = list(range(min(PAIR_POOL, len(candidates))))
    best_pair: tuple[int, int] | None = None
    best_bleu = float("-inf")
    for i, j in combinations(pool, 2):
        score = _dev_bleu([candidates[i], candidates[j]], dev, cfg, strategy, workers)
        if score > best_bleu:
            best_bleu = score
            best_pair = (i, j)
    chosen = list(best_pair)
    trace: list[tuple[tuple[str, ...], float]] = [
        (tuple(names[i] for i in chosen), best_bleu)
    ]
    remaining = [i for i in range(len(candidates)) if i not in chosen]
    current = best_bleu
    while remaining:
        step_best = float("-inf")
        step_idx: int | None = None
        for i in remaining:
            score = _dev_bleu(
                [candidates[j] for j in chosen] + [candidates[i]],
                dev, cfg, strategy, workers,
            )
            if score > step_best:
                step_best = score
                step_idx = i
        if step_idx is None or step_best < current + epsilon:
            break
        chosen.append(step_idx)
        remaining.remove(step_idx)
        current = step_best
        trace.append((tuple(names[i] for i in chosen), current))
    return EnsembleSelection([names[i] for i in chosen], current, trace)


def domain_weighted_decode(
    oracles: Mapping[str, ModelOracle],
    domain_probs: Mapping[str, float],
    src_id: int,
    src: Tokens,
    cfg: DecodeConfig,
) -> NBestList:
    """Decode under the domain-probability-weighted mixture of oracles."""
    return decode(DomainMixture(oracles, domain_probs), src_id, src, cfg)
