"""Word alignment: a reparameterized IBM Model 2 trained with EM.

Each target token e_j is generated by a source token f_i or by the NULL
word. NULL receives fixed probability p0; the remaining mass is spread
over source positions by a diagonal prior

    p(a_j = i) = (1 - p0) * exp(-lambda * |i/n - j/m|) / Z_j

with n = |src|, m = |tgt| and Z_j normalizing over i = 1..n. EM estimates
the translation table t(e | f); the tension lambda is optionally pushed
uphill on the expected complete-data log-likelihood with a backtracking
line search, so every parameter update is a generalized EM step and the
observed log-likelihood never decreases (this is asserted per iteration).

The per-pair alignment score is the mean target-token marginal:

    (1 / m) * sum_j log( p0 * t(e_j|NULL) + sum_i p(a_j=i) * t(e_j|f_i) )

Unseen translation entries fall back to a small floor so held-out pairs
score finitely. Model files carry a JSON parameter header followed by the
translation table as ``f<TAB>e<TAB>prob`` lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, SentencePair
from .errors import MtforgeError
from .parallel import parallel_map

NULL_TOKEN = "<NULL>"
T_FLOOR = 1e-12
_MONOTONE_TOL = 1e-9


@dataclass
class AlignmentModel:
    ttable: dict[str, dict[str, float]]
    tension: float = 4.0
    p0: float = 0.08
    loglik_trace: list[float] = field(default_factory=list)

    def t(self, e: str, f: str) -> float:
        return self.ttable.get(f, {}).get(e, T_FLOOR)


def _distance_matrix(n: int, m: int) -> np.ndarray:
    """dist[j-1, i-1] = |i/n - j/m| for source i=1..n, target j=1..m."""
    i = np.arange(1, n + 1) / n
    j = np.arange(1, m + 1) / m
    return np.abs(i[None, :] - j[:, None])


def _diagonal_prior(dist_row: np.ndarray, tension: float, p0: float) -> np.ndarray:
    delta = np.exp(-tension * dist_row)
    return (1.0 - p0) * delta / delta.sum()


def _tension_objective(lam: float, stats: dict) -> tuple[float, float]:
    """Expected complete-data log-likelihood in lambda (+const) and its gradient."""
    q = 0.0
    grad = 0.0
    for (_, _), (a_sum, b_sum, dist) in stats.items():
        delta = np.exp(-lam * dist)
        z = delta.sum(axis=1)
        q += float((-lam * a_sum - b_sum * np.log(z)).sum())
        grad += float((-a_sum + b_sum * (delta * dist).sum(axis=1) / z).sum())
    return q, grad


def _improve_tension(lam: float, stats: dict, total_mass: float, max_steps: int = 8) -> float:
    """Backtracking ascent on the expected log-likelihood; never downhill."""
    q0, grad = _tension_objective(lam, stats)
    for _ in range(max_steps):
        direction = grad / max(total_mass, 1.0)
        if abs(direction) < 1e-12:
            break
        step = 1.0
        moved = False
        while step > 1e-8:
            cand = max(lam + step * direction, 0.0)
            if cand != lam:
                q1, g1 = _tension_objective(cand, stats)
                if q1 >= q0:
                    lam, q0, grad = cand, q1, g1
                    moved = True
                    break
            step *= 0.5
        if not moved:
            break
    return lam


def train_align(
    corpus: Corpus | Sequence[SentencePair],
    iterations: int = 5,
    p0: float = 0.08,
    tension: float = 4.0,
    optimize_tension: bool = True,
    tension_start: int = 2,
) -> AlignmentModel:
    """EM training; pairs with an empty side are skipped."""
    if iterations < 1:
        raise MtforgeError(f"iterations must be >= 1, got {iterations}")
    if not 0 < p0 < 1:
        raise MtforgeError(f"p0 must lie in (0, 1), got {p0}")
    pairs = [(p.src, p.tgt) for p in corpus if p.src and p.tgt]
    if not pairs:
        raise MtforgeError("no non-empty pairs to train the aligner on")

    # init: uniform over the target types co-occurring with each source type
    cooc: dict[str, set[str]] = {NULL_TOKEN: set()}
    for src, tgt in pairs:
        cooc[NULL_TOKEN].update(tgt)
        for f in src:
            cooc.setdefault(f, set()).update(tgt)
    t = {f: {e: 1.0 / len(es) for e in es} for f, es in cooc.items()}

    lam = float(tension)
    trace: list[float] = []
    shapes: dict[tuple[int, int], np.ndarray] = {}
    for it in range(1, iterations + 1):
        counts: dict[str, dict[str, float]] = {}
        stats: dict[tuple[int, int], list] = {}
        loglik = 0.0
        for src, tgt in pairs:
            n, m = len(src), len(tgt)
            dist = shapes.setdefault((n, m), _distance_matrix(n, m))
            delta = np.exp(-lam * dist)
            prior = (1.0 - p0) * delta / delta.sum(axis=1, keepdims=True)
            if (n, m) not in stats:
                stats[(n, m)] = [np.zeros(m), np.zeros(m), dist]
            a_sum, b_sum, _ = stats[(n, m)]
            for j, e in enumerate(tgt):
                t_vals = np.array([t[f][e] for f in src])
                terms = prior[j] * t_vals
                null_term = p0 * t[NULL_TOKEN][e]
                denom = null_term + terms.sum()
                loglik += math.log(denom)
                q = terms / denom
                counts.setdefault(NULL_TOKEN, {})
                counts[NULL_TOKEN][e] = counts[NULL_TOKEN].get(e, 0.0) + null_term / denom
                for f, qi in zip(src, q):
                    row = counts.setdefault(f, {})
                    row[e] = row.get(e, 0.0) + qi
                a_sum[j] += float((q * dist[j]).sum())
                b_sum[j] += float(q.sum())
        if trace and loglik < trace[-1] - _MONOTONE_TOL:
            raise MtforgeError(
                f"EM log-likelihood decreased at iteration {it}: "
                f"{trace[-1]} -> {loglik}"
            )
        trace.append(loglik)
        t = {
            f: {e: float(c / sum(row.values())) for e, c in row.items()}
            for f, row in counts.items()
        }
        if optimize_tension and it >= tension_start:
            total_mass = sum(float(s[1].sum()) for s in stats.values())
            lam = _improve_tension(lam, {k: tuple(v) for k, v in stats.items()}, total_mass)
    return AlignmentModel(ttable=t, tension=lam, p0=p0, loglik_trace=trace)


def align_score(model: AlignmentModel, pair: SentencePair) -> float:
    """Mean per-target-token marginal log-likelihood."""
    if not pair.tgt:
        raise MtforgeError(f"pair {pair.pair_id}: empty target cannot be scored")
    n = len(pair.src)
    total = 0.0
    if n:
        dist = _distance_matrix(n, len(pair.tgt))
    for j, e in enumerate(pair.tgt):
        if n:
            prior = _diagonal_prior(dist[j], model.tension, model.p0)
            marginal = model.p0 * model.t(e, NULL_TOKEN) + float(
                sum(prior[i] * model.t(e, f) for i, f in enumerate(pair.src))
            )
        else:
            marginal = model.t(e, NULL_TOKEN)
        total += math.log(marginal)
    return total / len(pair.tgt)


def symmetric_score(
    forward: AlignmentModel, reverse: AlignmentModel, pair: SentencePair
) -> float:
    """Mean of the forward score and the reverse score on the swapped pair."""
    swapped = SentencePair(pair.pair_id, pair.tgt, pair.src)
    return 0.5 * (align_score(forward, pair) + align_score(reverse, swapped))


def viterbi_align(model: AlignmentModel, pair: SentencePair) -> list[tuple[int, int]]:
    """Hard links (src_idx, tgt_idx), 0-based; NULL and earlier i win ties."""
    links: list[tuple[int, int]] = []
    n = len(pair.src)
    if not n or not pair.tgt:
        return links
    dist = _distance_matrix(n, len(pair.tgt))
    for j, e in enumerate(pair.tgt):
        prior = _diagonal_prior(dist[j], model.tension, model.p0)
        best_score = model.p0 * model.t(e, NULL_TOKEN)
        best_i = None
        for i, f in enumerate(pair.src):
            score = prior[i] * model.t(e, f)
            if score > best_score:
                best_score = score
                best_i = i
        if best_i is not None:
            links.append((best_i, j))
    return links


def format_pharaoh(links: Sequence[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in links)


def save_align(model: AlignmentModel, path: str | Path) -> None:
    lines = [json.dumps({"tension": model.tension, "p0": model.p0})]
    for f in sorted(model.ttable):
        row = model.ttable[f]
        for e in sorted(row):
            lines.append(f"{f}\t{e}\t{float(row[e])!r}")
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_align(path: str | Path) -> AlignmentModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MtforgeError(f"{path}: empty alignment model")
    try:
        header = json.loads(lines[0])
        tension = float(header["tension"])
        p0 = float(header["p0"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MtforgeError(f"{path}: bad alignment header: {exc}") from exc
    ttable: dict[str, dict[str, float]] = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise MtforgeError(f"{path}:{i}: expected f<TAB>e<TAB>prob")
        ttable.setdefault(parts[0], {})[parts[1]] = float(parts[2])
    return AlignmentModel(ttable=ttable, tension=tension, p0=p0)


def _score_pair(pair: SentencePair, model: AlignmentModel,
                reverse: AlignmentModel | None) -> float:
    if reverse is not None:
        return symmetric_score(model, reverse, pair)
    return align_score(model, pair)


def score_corpus_align(
    model: AlignmentModel,
    corpus: Corpus,
    score_name: str = "align",
    reverse: AlignmentModel | None = None,
    workers: int = 1,
) -> Corpus:
    """Attach alignment scores; symmetrized when a reverse model is given."""
    values = parallel_map(
        partial(_score_pair, model=model, reverse=reverse), corpus.pairs, workers
    )
    pairs = [p.with_score(score_name, v) for p, v in zip(corpus, values)]
    return Corpus(pairs, side=corpus.side, level=corpus.level)
