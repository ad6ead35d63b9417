"""In-domain data selection by bilingual cross-entropy difference.

A pair's score sums, over both sides, the in-domain minus out-of-domain
LM cross-entropy:

    score = [CE_in(src) - CE_out(src)] + [CE_in(tgt) - CE_out(tgt)]

Lower means more in-domain. Selection is stable: pairs are ranked by
(score, id), so ties at the cut keep the smaller id, and the selected
corpus preserves the original corpus order. External per-pair scores can
be ingested from JSONL, and monolingual pools can be bucketed per genre
by taking each genre LM's lowest-cross-entropy sentences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Mapping

from .corpus import Corpus, SentencePair
from .errors import MtforgeError
from .lm import NGramLM, cross_entropy
from .parallel import parallel_map
from .report import RunReport, StageTimer

DEFAULT_K = 600_000
ML_SCORE = "moore_lewis"


@dataclass
class LMSet:
    """The four LMs of the bilingual cross-entropy difference."""

    in_src: NGramLM
    out_src: NGramLM
    in_tgt: NGramLM
    out_tgt: NGramLM


def moore_lewis_score(pair: SentencePair, lms: LMSet) -> float:
    src_part = cross_entropy(lms.in_src, pair.src) - cross_entropy(lms.out_src, pair.src)
    tgt_part = cross_entropy(lms.in_tgt, pair.tgt) - cross_entropy(lms.out_tgt, pair.tgt)
    return src_part + tgt_part


def score_ml(
    corpus: Corpus,
    lms: LMSet,
    score_name: str = ML_SCORE,
    workers: int = 1,
) -> Corpus:
    values = parallel_map(partial(moore_lewis_score, lms=lms), corpus.pairs, workers)
    pairs = [p.with_score(score_name, v) for p, v in zip(corpus, values)]
    return Corpus(pairs, side=corpus.side, level=corpus.level)


def select_top_k(
    corpus: Corpus,
    score_name: str,
    k: int = DEFAULT_K,
    criterion: str = "lowest",
) -> tuple[Corpus, RunReport]:
    """Keep the k best-scoring pairs, in original corpus order."""
    if criterion not in ("lowest", "highest"):
        raise MtforgeError(f"criterion must be lowest or highest, got {criterion}")
    if k < 0:
        raise MtforgeError(f"k must be non-negative, got {k}")
    with StageTimer() as timer:
        ranked = []
        for pair in corpus:
            if score_name not in pair.scores:
                raise MtforgeError(f"pair {pair.pair_id} has no score {score_name!r}")
            ranked.append((pair.scores[score_name], pair.pair_id))
        if criterion == "lowest":
            ranked.sort(key=lambda sv: (sv[0], sv[1]))
        else:
            ranked.sort(key=lambda sv: (-sv[0], sv[1]))
        chosen = {pair_id for _, pair_id in ranked[:k]}
        kept = [p for p in corpus if p.pair_id in chosen]
    report = RunReport(
        stage="select",
        count_in=len(corpus),
        count_out=len(kept),
        drops={"unselected": len(corpus) - len(kept)} if len(kept) < len(corpus) else {},
        wall_time_s=timer.elapsed,
        details={"score": score_name, "k": k, "criterion": criterion},
    )
    return Corpus(kept, side=corpus.side, level=corpus.level), report


def ingest_external_scores(
    corpus: Corpus, path: str | Path, score_name: str
) -> Corpus:
    """Attach scores from JSONL lines ``{"id": int, "score": real}``.

    Every corpus id must be covered; ids in the file that are not in the
    corpus are ignored.
    """
    path = Path(path)
    table: dict[int, float] = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            table[int(obj["id"])] = float(obj["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MtforgeError(f"{path}:{i + 1}: malformed score line: {exc}") from exc
    missing = [p.pair_id for p in corpus if p.pair_id not in table]
    if missing:
        shown = ", ".join(str(i) for i in missing[:10])
        more = f" (and {len(missing) - 10} more)" if len(missing) > 10 else ""
        raise MtforgeError(f"{path}: no score for pair ids {shown}{more}")
    pairs = [p.with_score(score_name, table[p.pair_id]) for p in corpus]
    return Corpus(pairs, side=corpus.side, level=corpus.level)


def bucket_by_genre(
    corpora: Mapping[str, Corpus],
    lms: Mapping[str, NGramLM],
    k: int = DEFAULT_K,
    workers: int = 1,
) -> dict[str, Corpus]:
    """Per genre, keep the k sentences its LM finds easiest (lowest CE)."""
    if set(corpora) != set(lms):
        raise MtforgeError(
            f"genre mismatch: corpora {sorted(corpora)} vs lms {sorted(lms)}"
        )
    buckets: dict[str, Corpus] = {}
    for genre in sorted(corpora):
        corpus = corpora[genre]
        lm = lms[genre]
        side = "tgt" if corpus.side.value == "tgt-mono" else "src"
        name = f"ce_{genre}"
        values = parallel_map(
            partial(_ce_mono, lm=lm, side=side), corpus.pairs, workers
        )
        scored = Corpus(
            [p.with_score(name, v) for p, v in zip(corpus, values)],
            side=corpus.side,
            level=corpus.level,
        )
        selected, _ = select_top_k(scored, name, k, criterion="lowest")
        buckets[genre] = selected
    return buckets


def _ce_mono(pair: SentencePair, lm: NGramLM, side: str) -> float:
    return cross_entropy(lm, pair.tgt if side == "tgt" else pair.src)
