"""Parallel-corpus filtering rules and the rule pipeline.

Rules are evaluated in a fixed order and each dropped pair is attributed
to the first rule that rejects it, keyed by a short reason string:

  length                 more than ``max_words`` tokens on either side
  long-word              a token longer than ``max_word_chars`` characters
  html                   an HTML tag on either side
  duplicate-translation  source equals target
  dedup                  exact (src, tgt) seen earlier in the corpus
  langid                 wrong or low-confidence language on either side
  empty                  an empty side (checked by the ratio rule)
  ratio                  length ratio outside [ratio_low, ratio_high]

Pair-level rules are pure functions and may run in parallel; dedup is a
sequential scan over the corpus. Ratio bounds are held as exact rationals
so boundary cases (for example 10 tokens against 30 with a 1/3 bound)
compare exactly and are kept.

``filter_by_score`` is a separate corpus-level pass: it computes a
percentile threshold over an attached score and drops pairs strictly
below it (or strictly above, for ``drop-highest``), so ties at the
threshold are always kept. Re-running it on its own output can drop more
pairs because the threshold is recomputed over the survivors; the rule
pipeline itself is idempotent.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .corpus import Corpus, SentencePair
from .errors import MtforgeError
from .langid import LangIdModel, predict_lang
from .parallel import parallel_map
from .report import RunReport, StageTimer
from .textnorm import normalize_punct

_HTML_RE = re.compile(r"<[a-zA-Z/!][^>]*>")


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(value).limit_denominator(10**6)


@dataclass(frozen=True)
class FilterConfig:
    max_words: int = 120
    max_word_chars: int = 40
    ratio_low: Fraction = Fraction(1, 3)
    ratio_high: Fraction = Fraction(3)
    lm_percentile: float = 5.0
    align_percentile: float = 5.0
    langid_min_conf: float = 0.5
    expected_src_lang: str = ""
    expected_tgt_lang: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratio_low", _as_fraction(self.ratio_low))
        object.__setattr__(self, "ratio_high", _as_fraction(self.ratio_high))
        if self.max_words < 1 or self.max_word_chars < 1:
            raise MtforgeError("length limits must be positive")
        if not (0 < self.ratio_low <= 1 <= self.ratio_high):
            raise MtforgeError("need 0 < ratio_low <= 1 <= ratio_high")
        for p in (self.lm_percentile, self.align_percentile):
            if not 0 < p < 100:
                raise MtforgeError("percentiles must lie in (0, 100)")
        if not 0 <= self.langid_min_conf <= 1:
            raise MtforgeError("langid_min_conf must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "max_words": self.max_words,
            "max_word_chars": self.max_word_chars,
            "ratio_low": str(self.ratio_low),
            "ratio_high": str(self.ratio_high),
            "lm_percentile": self.lm_percentile,
            "align_percentile": self.align_percentile,
            "langid_min_conf": self.langid_min_conf,
            "expected_src_lang": self.expected_src_lang,
            "expected_tgt_lang": self.expected_tgt_lang,
        }


def check_length(pair: SentencePair, config: FilterConfig) -> str | None:
    if len(pair.src) > config.max_words or len(pair.tgt) > config.max_words:
        return "length"
    for tok in pair.src + pair.tgt:
        if len(tok) > config.max_word_chars:
            return "long-word"
    return None


def check_html_dup(pair: SentencePair) -> str | None:
    if _HTML_RE.search(" ".join(pair.src)) or _HTML_RE.search(" ".join(pair.tgt)):
        return "html"
    if pair.src == pair.tgt:
        return "duplicate-translation"
    return None


def check_ratio(pair: SentencePair, config: FilterConfig) -> str | None:
    if not pair.src or not pair.tgt:
        return "empty"
    ratio = Fraction(len(pair.src), len(pair.tgt))
    if not config.ratio_low <= ratio <= config.ratio_high:
        return "ratio"
    return None


def check_langid(pair: SentencePair, model: LangIdModel, config: FilterConfig) -> str | None:
    for side, expected in ((pair.src, config.expected_src_lang),
                           (pair.tgt, config.expected_tgt_lang)):
        if not expected:
            continue
        lang, conf = predict_lang(model, side)
        if lang != expected or conf < config.langid_min_conf:
            return "langid"
    return None


def dedup_scan(corpus: Corpus) -> list[str | None]:
    seen: set[tuple] = set()
    verdicts: list[str | None] = []
    for pair in corpus:
        key = (pair.src, pair.tgt)
        verdicts.append("dedup" if key in seen else None)
        seen.add(key)
    return verdicts


@dataclass
class FilterRule:
    """One named rule: either a pure per-pair check or a corpus scan."""

    name: str
    check: Callable[[SentencePair], str | None] | None = None
    scan: Callable[[Corpus], list] | None = None

    def __post_init__(self) -> None:
        if (self.check is None) == (self.scan is None):
            raise MtforgeError(f"rule {self.name}: need exactly one of check/scan")


def build_rules(config: FilterConfig, langid_model: LangIdModel | None = None) -> list[FilterRule]:
    """Standard rule order; the langid rule joins only when a model is given."""
    rules = [
        FilterRule("length", check=partial(check_length, config=config)),
        FilterRule("html-dup", check=check_html_dup),
        FilterRule("dedup", scan=dedup_scan),
    ]
    if langid_model is not None and (config.expected_src_lang or config.expected_tgt_lang):
        rules.append(
            FilterRule("langid", check=partial(check_langid, model=langid_model, config=config))
        )
    rules.append(FilterRule("ratio", check=partial(check_ratio, config=config)))
    return rules


def run_pipeline(
    corpus: Corpus, rules: Sequence[FilterRule], workers: int = 1
) -> tuple[Corpus, RunReport]:
    """Apply rules in order; first rejecting rule wins the attribution."""
    names = [r.name for r in rules]
    if len(set(names)) != len(names):
        raise MtforgeError(f"duplicate rule names: {names}")
    with StageTimer() as timer:
        verdicts = []
        for rule in rules:
            if rule.scan is not None:
                column = rule.scan(corpus)
                if len(column) != len(corpus):
                    raise MtforgeError(f"rule {rule.name}: scan returned wrong length")
            else:
                column = parallel_map(rule.check, corpus.pairs, workers)
            verdicts.append(column)
        kept: list[SentencePair] = []
        drops: Counter[str] = Counter()
        for idx, pair in enumerate(corpus):
            reason = next(
                (col[idx] for col in verdicts if col[idx] is not None), None
            )
            if reason is None:
                kept.append(pair)
            else:
                drops[reason] += 1
    report = RunReport(
        stage="filter",
        count_in=len(corpus),
        count_out=len(kept),
        drops=dict(drops),
        wall_time_s=timer.elapsed,
    )
    return Corpus(kept, side=corpus.side, level=corpus.level), report


def filter_by_score(
    corpus: Corpus,
    score_name: str,
    percentile: float = 5.0,
    direction: str = "drop-lowest",
) -> tuple[Corpus, RunReport]:
    """Drop the worst ``percentile`` percent by an attached score.

    drop-lowest removes pairs strictly below the ``percentile``-th
    percentile; drop-highest removes pairs strictly above the
    ``(100 - percentile)``-th. Ties at the threshold are kept, so a
    corpus with all-equal scores loses nothing.
    """
    if direction not in ("drop-lowest", "drop-highest"):
        raise MtforgeError(f"unknown direction: {direction}")
    with StageTimer() as timer:
        values = []
        for pair in corpus:
            if score_name not in pair.scores:
                raise MtforgeError(f"pair {pair.pair_id} has no score {score_name!r}")
            values.append(pair.scores[score_name])
        kept = []
        dropped = 0
        if values:
            arr = np.asarray(values, dtype=float)
            if direction == "drop-lowest":
                threshold = float(np.percentile(arr, percentile))
                keep = arr >= threshold
                reason = f"low-{score_name}"
            else:
                threshold = float(np.percentile(arr, 100.0 - percentile))
                keep = arr <= threshold
                reason = f"high-{score_name}"
            for pair, ok in zip(corpus, keep):
                if ok:
                    kept.append(pair)
                else:
                    dropped += 1
        else:
            reason = f"low-{score_name}"
    report = RunReport(
        stage="filter-by-score",
        count_in=len(corpus),
        count_out=len(kept),
        drops={reason: dropped} if dropped else {},
        wall_time_s=timer.elapsed,
        details={"score": score_name, "percentile": percentile, "direction": direction},
    )
    return Corpus(kept, side=corpus.side, level=corpus.level), report


def normalize_corpus(corpus: Corpus) -> Corpus:
    """Punctuation-normalize both sides of every pair."""
    pairs = [
        SentencePair(p.pair_id, normalize_punct(p.src), normalize_punct(p.tgt),
                     dict(p.tags), dict(p.scores))
        for p in corpus
    ]
    return Corpus(pairs, side=corpus.side, level=corpus.level)
