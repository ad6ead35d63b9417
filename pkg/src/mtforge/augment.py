"""Data augmentation: noising, source reversal, KD gating, iterative BT.

Noising runs three independent passes in a fixed order: token drop, then
blank replacement on the survivors, then a single left-to-right pass of
adjacent swaps. Each pass draws one uniform variate per decision, and
each sentence uses its own RNG substream keyed by (seed, sentence id),
so results are reproducible and independent of batching or workers.

``kd_filter`` keeps machine-written pairs whose hypothesis scores at
least ``threshold`` smoothed sentence BLEU against its reference
(boundary inclusive); pairs with an empty reference are dropped as
``empty-ref``.

``iterate_joint_bt`` runs toy-scale joint back-translation: per round,
each direction's oracle translates noised monolingual text to produce
synthetic pairs for the other direction (tagged ``bt-round-<k>``), both
translation lexicons are re-estimated on the seed bitext plus all
accumulated synthetic data, and dev BLEU of the forward direction is
recorded. The loop stops early when the round-over-round gain falls
below 0.1 BLEU.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import partial
from typing import Sequence

import numpy as np

from .align import train_align
from .bleu import bleu_stats, corpus_bleu, sentence_bleu
from .corpus import Corpus, SentencePair, Side, Tokens
from .decoding import DecodeConfig, LexiconLM, decode
from .errors import MtforgeError
from .parallel import parallel_map
from .report import RunReport, StageTimer
from .rng import substream

BLANK_TOKEN = "<BLANK>"
KD_THRESHOLD = 28.0
BT_EPSILON = 0.1


@dataclass(frozen=True)
class NoiseConfig:
    p_drop: float = 0.05
    p_blank: float = 0.05
    p_swap: float = 0.05
    filler: str = BLANK_TOKEN
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_drop", "p_blank", "p_swap"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise MtforgeError(f"{name} must lie in [0, 1], got {p}")
        if not self.filler:
            raise MtforgeError("filler token must be non-empty")


def add_noise(tokens: Sequence[str], config: NoiseConfig, rng: np.random.Generator) -> Tokens:
    """Drop, blank, then swap; one uniform draw per decision."""
    kept = [t for t in tokens if not rng.random() < config.p_drop]
    blanked = [config.filler if rng.random() < config.p_blank else t for t in kept]
    out = blanked
    for i in range(len(out) - 1):
        if rng.random() < config.p_swap:
            out[i], out[i + 1] = out[i + 1], out[i]
    return tuple(out)


def _noise_pair(pair: SentencePair, config: NoiseConfig, sides: tuple[str, ...]) -> SentencePair:
    rng = substream(config.seed, pair.pair_id)
    src = add_noise(pair.src, config, rng) if "src" in sides else pair.src
    tgt = add_noise(pair.tgt, config, rng) if "tgt" in sides else pair.tgt
    return SentencePair(pair.pair_id, src, tgt, dict(pair.tags), dict(pair.scores))


def noise_corpus(
    corpus: Corpus,
    config: NoiseConfig,
    sides: tuple[str, ...] | None = None,
    workers: int = 1,
) -> Corpus:
    """Noise the chosen sides (default: the populated side of a mono corpus,
    the source side of a bilingual corpus)."""
    if sides is None:
        if corpus.side == Side.TGT_MONO:
            sides = ("tgt",)
        else:
            sides = ("src",)
    for s in sides:
        if s not in ("src", "tgt"):
            raise MtforgeError(f"unknown side: {s}")
    pairs = parallel_map(
        partial(_noise_pair, config=config, sides=tuple(sides)), corpus.pairs, workers
    )
    return Corpus(pairs, side=corpus.side, level=corpus.level)


def reverse_source(corpus: Corpus) -> Corpus:
    """Reverse the source token order of every pair (an involution)."""
    pairs = [
        SentencePair(p.pair_id, tuple(reversed(p.src)), p.tgt, dict(p.tags), dict(p.scores))
        for p in corpus
    ]
    return Corpus(pairs, side=corpus.side, level=corpus.level)


def kd_filter(
    corpus: Corpus,
    references: Sequence[Tokens],
    threshold: float = KD_THRESHOLD,
) -> tuple[Corpus, RunReport]:
    """Keep pairs whose target scores >= threshold sentence BLEU vs the reference."""
    if len(references) != len(corpus):
        raise MtforgeError(
            f"reference count mismatch: {len(references)} refs for {len(corpus)} pairs"
        )
    with StageTimer() as timer:
        kept: list[SentencePair] = []
        drops = {"empty-ref": 0, "low-bleu": 0}
        for pair, ref in zip(corpus, references):
            if not ref:
                drops["empty-ref"] += 1
                continue
            score = sentence_bleu(pair.tgt, ref)
            if score >= threshold:
                kept.append(pair.with_score("kd_bleu", score))
            else:
                drops["low-bleu"] += 1
    report = RunReport(
        stage="kd-filter",
        count_in=len(corpus),
        count_out=len(kept),
        drops={k: v for k, v in drops.items() if v},
        wall_time_s=timer.elapsed,
        details={"threshold": threshold},
    )
    return Corpus(kept, side=corpus.side, level=corpus.level), report


@dataclass
class BtRound:
    index: int
    for_forward: Corpus  # synthetic (src=back-translation, tgt=mono target)
    for_reverse: Corpus  # synthetic (src=mono source, tgt=translation)
    dev_bleu: float


@dataclass
class BtResult:
    rounds: list[BtRound]
    dev_bleu_trace: list[float]
    forward: LexiconLM
    reverse: LexiconLM


def _translate(oracle: LexiconLM, sentences: Sequence[Tokens], cfg: DecodeConfig,
               noise: NoiseConfig | None, round_idx: int, workers: int) -> list[Tokens]:
    prepared: list[tuple[int, Tokens]] = []
    for i, sent in enumerate(sentences):
        if noise is not None:
            rng = substream(noise.seed, round_idx, i)
            prepared.append((i, add_noise(sent, noise, rng)))
        else:
            prepared.append((i, sent))
    lists = parallel_map(
        partial(_decode_item, oracle=oracle, cfg=cfg), prepared, workers
    )
    return [nb.best().tokens for nb in lists]


def _decode_item(item: tuple[int, Tokens], oracle: LexiconLM, cfg: DecodeConfig):
    src_id, src = item
    return decode(oracle, src_id, src, cfg)


def _synthetic(sources: Sequence[Tokens], targets: Sequence[Tokens], round_idx: int) -> Corpus:
    pairs = [
        SentencePair(i, src, tgt, tags={"origin": f"bt-round-{round_idx}"})
        for i, (src, tgt) in enumerate(zip(sources, targets))
    ]
    return Corpus(pairs)


def iterate_joint_bt(
    forward: LexiconLM,
    reverse: LexiconLM,
    bitext: Corpus,
    src_mono: Sequence[Tokens],
    tgt_mono: Sequence[Tokens],
    dev: Corpus,
    rounds: int = 3,
    decode_config: DecodeConfig | None = None,
    noise_config: NoiseConfig | None = None,
    align_iterations: int = 5,
    epsilon: float = BT_EPSILON,
    workers: int = 1,
) -> BtResult:
    """Joint iterative back-translation with retrainable lexicon oracles."""
    if rounds < 1:
        raise MtforgeError(f"rounds must be >= 1, got {rounds}")
    if not len(dev):
        raise MtforgeError("joint BT needs a non-empty dev corpus")
    cfg = decode_config or DecodeConfig(mode="greedy")
    result_rounds: list[BtRound] = []
    trace: list[float] = []
    acc_forward: list[SentencePair] = []
    acc_reverse: list[SentencePair] = []
    for k in range(1, rounds + 1):
        back_src = _translate(reverse, tgt_mono, cfg, noise_config, k, workers)
        synth_forward = _synthetic(back_src, list(tgt_mono), k)
        fwd_tgt = _translate(forward, src_mono, cfg, noise_config, k, workers)
        synth_reverse = _synthetic(list(src_mono), fwd_tgt, k)
        acc_forward.extend(synth_forward.pairs)
        acc_reverse.extend(synth_reverse.pairs)

        fwd_align = train_align(
            list(bitext.pairs) + acc_forward, iterations=align_iterations
        )
        rev_align = train_align(
            [SentencePair(i, p.tgt, p.src) for i, p in enumerate(bitext)]
            + [SentencePair(i, p.tgt, p.src) for i, p in enumerate(acc_reverse)],
            iterations=align_iterations,
        )
        forward = LexiconLM(forward.name, forward.lm, fwd_align, forward.vocab)
        reverse = LexiconLM(reverse.name, reverse.lm, rev_align, reverse.vocab)

        hyps = _translate(forward, [p.src for p in dev], cfg, None, k, workers)
        dev_bleu = corpus_bleu(bleu_stats(h, p.tgt) for h, p in zip(hyps, dev.pairs))
        trace.append(dev_bleu)
        result_rounds.append(BtRound(k, synth_forward, synth_reverse, dev_bleu))
        if k >= 2 and trace[-1] - trace[-2] < epsilon:
            break
    return BtResult(result_rounds, trace, forward, reverse)
