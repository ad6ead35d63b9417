"""K-best hypothesis reranking trained with MIRA.

Features per hypothesis: length ratio and difference against the source,
the decoder's length-penalized model score, and one ``lm_score_i`` per
configured language model (negated cross-entropy, so larger is better).

Training is margin-infused relaxed averaging. Per sentence, with w the
current weights, f the feature vectors and b the sentence BLEU scores:

    hope = argmax(w.f + b)        fear = argmax(w.f - b)
    loss = (b_hope - b_fear) - w.(f_hope - f_fear)
    w   += min(C, loss / ||f_hope - f_fear||^2) * (f_hope - f_fear)   if loss > 0

Sentences are visited in a seeded shuffled order each epoch, and the
returned weights are the average of w over all updates (the initial
weights if nothing violated the margin).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bleu import sentence_bleu
from .corpus import Tokens
from .decoding import Hypothesis, NBestList
from .errors import MtforgeError
from .lm import NGramLM, cross_entropy

MIRA_C = 0.01
MIRA_EPOCHS = 5


def extract_features(
    src: Tokens, nbest: NBestList, lms: Sequence[NGramLM] = ()
) -> NBestList:
    """Fill each hypothesis's feature map; requires a non-empty source."""
    if not src:
        raise MtforgeError(f"source {nbest.src_id}: cannot featurize an empty source")
    hyps = []
    for hyp in nbest.hyps:
        features = {
            "len_ratio": len(hyp.tokens) / len(src),
            "len_diff": float(len(hyp.tokens) - len(src)),
            "nmt_score": hyp.penalized,
        }
        for i, lm in enumerate(lms):
            features[f"lm_score_{i}"] = -cross_entropy(lm, hyp.tokens)
        hyps.append(replace(hyp, features=features))
    return NBestList(nbest.src_id, hyps)


def score_nbest_bleu(nbest: NBestList, ref: Tokens) -> NBestList:
    """Attach smoothed sentence BLEU against the reference to every hypothesis."""
    return NBestList(
        nbest.src_id,
        [replace(h, bleu=sentence_bleu(h.tokens, ref)) for h in nbest.hyps],
    )


@dataclass
class RerankWeights:
    weights: dict[str, float]
    c: float = MIRA_C
    epochs: int = MIRA_EPOCHS
    seed: int = 0

    def score(self, hyp: Hypothesis) -> float:
        return sum(self.weights.get(k, 0.0) * v for k, v in hyp.features.items())


def _feature_names(lists: Sequence[NBestList]) -> list[str]:
    names: list[str] | None = None
    for nbest in lists:
        if not nbest.hyps:
            raise MtforgeError(f"source {nbest.src_id}: empty n-best list")
        for hyp in nbest.hyps:
            keys = sorted(hyp.features)
            if names is None:
                names = keys
            elif keys != names:
                raise MtforgeError(
                    f"source {nbest.src_id}: feature names differ: {keys} vs {names}"
                )
    if names is None:
        raise MtforgeError("no n-best lists to train on")
    return names


def mira_train(
    lists: Sequence[NBestList],
    c: float = MIRA_C,
    epochs: int = MIRA_EPOCHS,
    seed: int = 0,
    init: Mapping[str, float] | None = None,
) -> RerankWeights:
    """Train reranker weights; every hypothesis must carry a BLEU score."""
    if c <= 0:
        raise MtforgeError(f"C must be positive, got {c}")
    if epochs < 1:
        raise MtforgeError(f"epochs must be >= 1, got {epochs}")
    names = _feature_names(lists)
    mats = []
    bleus = []
    for nbest in lists:
        for hyp in nbest.hyps:
            if hyp.bleu is None:
                raise MtforgeError(
                    f"source {nbest.src_id}: hypothesis lacks a sentence BLEU score"
                )
        mats.append(
            np.array([[h.features[k] for k in names] for h in nbest.hyps])
        )
        bleus.append(np.array([h.bleu for h in nbest.hyps]))

    w = np.zeros(len(names))
    if init is not None:
        unknown = set(init) - set(names)
        if unknown:
            raise MtforgeError(f"unknown init features: {sorted(unknown)}")
        for i, name in enumerate(names):
            w[i] = init.get(name, 0.0)
    rng = np.random.default_rng(seed)
    total = np.zeros_like(w)
    updates = 0
    for _ in range(epochs):
        for idx in rng.permutation(len(lists)):
            f = mats[idx]
            b = bleus[idx]
            model = f @ w
            hope = int(np.argmax(model + b))
            fear = int(np.argmax(model - b))
            loss = (b[hope] - b[fear]) - (model[hope] - model[fear])
            if loss <= 0:
                continue
            delta = f[hope] - f[fear]
            norm2 = float(delta @ delta)
            if norm2 == 0.0:
                continue
            w = w + min(c, loss / norm2) * delta
            total += w
            updates += 1
    final = (total / updates) if updates else w
    return RerankWeights(
        {name: float(v) for name, v in zip(names, final)}, c=c, epochs=epochs, seed=seed
    )


def rerank_apply(weights: RerankWeights, nbest: NBestList) -> NBestList:
    """Reorder by weighted feature score, descending; stable on ties."""
    order = sorted(
        range(len(nbest.hyps)),
        key=lambda i: (-weights.score(nbest.hyps[i]), i),
    )
    return NBestList(nbest.src_id, [nbest.hyps[i] for i in order])


def save_weights(weights: RerankWeights, path: str | Path) -> None:
    obj = {
        "weights": dict(sorted(weights.weights.items())),
        "c": weights.c,
        "epochs": weights.epochs,
        "seed": weights.seed,
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_weights(path: str | Path) -> RerankWeights:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return RerankWeights(
            {str(k): float(v) for k, v in obj["weights"].items()},
            c=float(obj.get("c", MIRA_C)),
            epochs=int(obj.get("epochs", MIRA_EPOCHS)),
            seed=int(obj.get("seed", 0)),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MtforgeError(f"{path}: bad weights file: {exc}") from exc
