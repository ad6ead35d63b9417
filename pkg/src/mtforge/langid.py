"""Naive-Bayes sentence language identification.

One character-level Witten-Bell LM (order up to 3) is trained per
language, together with a prior proportional to each language's share of
training sentences. Prediction scores a sentence with every language
model and returns the posterior argmax

    argmax_L  log prior(L) + log p(sentence | L)

with the confidence being the normalized posterior. Exact ties go to the
lexicographically smallest language code; an empty sentence skips the
likelihood term and returns the prior argmax with the prior as
confidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus, Level, Tokens
from .errors import MtforgeError
from .lm import NGramLM, _parse_lm, format_lm, log_likelihood, train_ngram


@dataclass
class LangIdModel:
    priors: dict[str, float]
    lms: dict[str, NGramLM]

    def languages(self) -> list[str]:
        return sorted(self.priors)


def train_langid(
    corpora: Mapping[str, Corpus | Iterable[Tokens]],
    order: int = 3,
    min_count: int = 1,
) -> LangIdModel:
    if len(corpora) < 2:
        raise MtforgeError("language identification needs at least two languages")
    sizes: dict[str, int] = {}
    lms: dict[str, NGramLM] = {}
    for lang in sorted(corpora):
        sentences = (
            corpora[lang].sentences()
            if isinstance(corpora[lang], Corpus)
            else [tuple(s) for s in corpora[lang]]
        )
        if not sentences:
            raise MtforgeError(f"language {lang!r} has no training sentences")
        sizes[lang] = len(sentences)
        lms[lang] = train_ngram(sentences, order=order, level=Level.CHAR, min_count=min_count)
    total = sum(sizes.values())
    priors = {lang: sizes[lang] / total for lang in sizes}
    return LangIdModel(priors, lms)


def posterior(model: LangIdModel, tokens: Sequence[str]) -> dict[str, float]:
    """Posterior p(language | sentence); sums to one."""
    langs = model.languages()
    logs = [
        math.log(model.priors[lang]) + log_likelihood(model.lms[lang], tokens)
        for lang in langs
    ]
    peak = max(logs)
    weights = [math.exp(v - peak) for v in logs]
    total = sum(weights)
    return {lang: w / total for lang, w in zip(langs, weights)}


def _argmax(scores: Mapping[str, float], ordered: Sequence[str]) -> str:
    best = ordered[0]
    for lang in ordered[1:]:
        if scores[lang] > scores[best]:
            best = lang
    return best


def predict_lang(model: LangIdModel, tokens: Sequence[str]) -> tuple[str, float]:
    """(language, confidence); ties go to the smallest language code."""
    ordered = model.languages()
    if not tokens:
        best = _argmax(model.priors, ordered)
        return best, model.priors[best]
    post = posterior(model, tokens)
    best = _argmax(post, ordered)
    return best, post[best]


def save_langid(model: LangIdModel, path: str | Path) -> None:
    chunks = [json.dumps({"priors": dict(sorted(model.priors.items()))}) + "\n"]
    for lang in model.languages():
        chunks.append(f"#language {lang}\n")
        chunks.append(format_lm(model.lms[lang]))
    Path(path).write_text("".join(chunks), encoding="utf-8")


def load_langid(path: str | Path) -> LangIdModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise MtforgeError(f"{path}: empty language-id model")
    try:
        header = json.loads(lines[0])
        priors = {str(k): float(v) for k, v in header["priors"].items()}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MtforgeError(f"{path}: bad language-id header: {exc}") from exc
    lms: dict[str, NGramLM] = {}
    current: str | None = None
    buf: list[str] = []
    def flush() -> None:
        if current is not None:
            lms[current] = _parse_lm("\n".join(buf) + "\n", f"{path}[{current}]")
    for line in lines[1:]:
        if line.startswith("#language "):
            flush()
            current = line.split(" ", 1)[1]
            buf = []
        else:
            buf.append(line)
    flush()
    if set(lms) != set(priors):
        raise MtforgeError(f"{path}: priors and models list different languages")
    return LangIdModel(priors, lms)
