"""Ensemble decoding over pluggable next-token oracles.

An oracle exposes a fixed target vocabulary (which includes the end
token ``</s>``) and a ``next(src_id, src, prefix)`` method returning a
probability distribution over that vocabulary. Two implementations are
provided: a table model backed by explicit (source id, prefix) entries
with a uniform fallback, and a lexicon-LM model whose next-token weights
are lm(w | prefix) times the best translation probability of w given any
source token (or NULL), renormalized.

Member distributions are combined elementwise per step:

  avg      weighted arithmetic mean
  log_avg  renormalized exp(sum_i w_i * ln max(p_i, 1e-9))
  max      elementwise maximum, renormalized

Beam search keeps the best ``beam_size`` expansions per step; a selected
``</s>`` finalizes a hypothesis and frees its slot. Finished hypotheses
are ranked by the length-penalized score logprob / lp(|y|) with
lp(|y|) = ((5 + |y|) / 6) ** alpha. Hypotheses still open at ``max_len``
are force-finalized and flagged. Score ties during pruning are broken by
beam order then token index, so decoding is fully deterministic, and a
beam of one is exactly greedy decoding.

The n-best text format is one hypothesis per line:

    id ||| tokens ||| model=<logprob> lp=<penalty> ||| <penalized score>

with an optional trailing ``|||``-separated field of ``name=value``
features added by the reranker.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .align import NULL_TOKEN, AlignmentModel, T_FLOOR
from .corpus import Tokens
from .errors import MtforgeError
from .lm import EOS, NGramLM
from .rng import substream

COMBINE_STRATEGIES = ("avg", "log_avg", "max")
LOG_FLOOR = 1e-9


class ModelOracle(Protocol):
    name: str
    vocab: tuple[str, ...]

    def next(self, src_id: int, src: Tokens, prefix: Tokens) -> np.ndarray: ...


def check_distribution(probs: np.ndarray, tol: float = 1e-9) -> None:
    if probs.ndim != 1 or abs(float(probs.sum()) - 1.0) > tol or (probs < 0).any():
        raise MtforgeError("not a probability distribution")


def combine(
    dists: Sequence[np.ndarray],
    strategy: str = "log_avg",
    weights: Sequence[float] | None = None,
) -> np.ndarray:
    """Combine aligned member distributions into one distribution."""
    if not dists:
        raise MtforgeError("combine needs at least one distribution")
    size = len(dists[0])
    if any(len(d) != size for d in dists):
        raise MtforgeError("vocab size mismatch between ensemble members")
    if weights is None:
        weights = [1.0 / len(dists)] * len(dists)
    if len(weights) != len(dists):
        raise MtforgeError("one weight per member required")
    if abs(sum(weights) - 1.0) > 1e-6:
        raise MtforgeError(f"member weights must sum to 1, got {sum(weights)}")
    stack = np.stack([np.asarray(d, dtype=float) for d in dists])
    w = np.asarray(weights, dtype=float)
    if strategy == "avg":
        out = (w[:, None] * stack).sum(axis=0)
    elif strategy == "log_avg":
        out = np.exp((w[:, None] * np.log(np.maximum(stack, LOG_FLOOR))).sum(axis=0))
    elif strategy == "max":
        out = stack.max(axis=0)
    else:
        raise MtforgeError(f"unknown combine strategy: {strategy}")
    total = out.sum()
    if total <= 0:
        raise MtforgeError("combined distribution has no mass")
    return out / total


@dataclass
class TableModel:
    """Next-token oracle backed by explicit (source id, prefix) entries."""

    name: str
    vocab: tuple[str, ...]
    table: dict[tuple[int, Tokens], np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if EOS not in self.vocab:
            raise MtforgeError(f"table model {self.name}: vocab must contain {EOS}")

    def next(self, src_id: int, src: Tokens, prefix: Tokens) -> np.ndarray:
        hit = self.table.get((src_id, tuple(prefix)))
        if hit is not None:
            return hit
        return np.full(len(self.vocab), 1.0 / len(self.vocab))

    @classmethod
    def from_jsonl(cls, path: str | Path, name: str | None = None) -> "TableModel":
        """Entries: ``{"src_id": int, "prefix": [tokens], "dist": {token: p}}``."""
        path = Path(path)
        entries = []
        tokens: set[str] = {EOS}
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append(
                    (int(obj["src_id"]), tuple(obj["prefix"]), dict(obj["dist"]))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MtforgeError(f"{path}:{i + 1}: malformed table entry: {exc}") from exc
            tokens.update(entries[-1][2])
        vocab = tuple(sorted(tokens))
        index = {tok: i for i, tok in enumerate(vocab)}
        table: dict[tuple[int, Tokens], np.ndarray] = {}
        for src_id, prefix, dist in entries:
            probs = np.zeros(len(vocab))
            for tok, p in dist.items():
                probs[index[tok]] = float(p)
            check_distribution(probs, tol=1e-6)
            table[(src_id, prefix)] = probs / probs.sum()
        return cls(name or path.stem, vocab, table)


@dataclass
class LexiconLM:
    """Oracle combining a target LM with a translation lexicon.

    weight(w) = lm(w | prefix) * max_{f in src + NULL} t(w | f), then
    renormalized; the lexicon factor is 1 for ``</s>``.
    """

    name: str
    lm: NGramLM
    align: AlignmentModel
    vocab: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.vocab:
            from .lm import UNK

            self.vocab = tuple(sorted(self.lm.vocab - {UNK}))
        if EOS not in self.vocab:
            raise MtforgeError(f"lexicon model {self.name}: vocab must contain {EOS}")

    def _lex_weight(self, token: str, src: Tokens) -> float:
        if token == EOS:
            return 1.0
        best = self.align.t(token, NULL_TOKEN)
        for f in src:
            cand = self.align.t(token, f)
            if cand > best:
                best = cand
        return max(best, T_FLOOR)

    def next(self, src_id: int, src: Tokens, prefix: Tokens) -> np.ndarray:
        weights = np.array(
            [
                self.lm.prob(tok, tuple(prefix)) * self._lex_weight(tok, src)
                for tok in self.vocab
            ]
        )
        total = weights.sum()
        if total <= 0:
            return np.full(len(self.vocab), 1.0 / len(self.vocab))
        return weights / total


class Ensemble:
    """Composite oracle: combines member distributions per step."""

    def __init__(
        self,
        members: Sequence[ModelOracle],
        strategy: str = "log_avg",
        weights: Sequence[float] | None = None,
    ) -> None:
        if not members:
            raise MtforgeError("an ensemble needs at least one member")
        vocab = members[0].vocab
        for m in members[1:]:
            if m.vocab != vocab:
                raise MtforgeError(
                    f"vocab mismatch between ensemble members {members[0].name} and {m.name}"
                )
        if strategy not in COMBINE_STRATEGIES:
            raise MtforgeError(f"unknown combine strategy: {strategy}")
        self.members = list(members)
        self.strategy = strategy
        self.weights = list(weights) if weights is not None else None
        if self.weights is not None and abs(sum(self.weights) - 1.0) > 1e-6:
            raise MtforgeError("member weights must sum to 1")
        self.vocab = vocab
        self.name = "+".join(m.name for m in members)

    def next(self, src_id: int, src: Tokens, prefix: Tokens) -> np.ndarray:
        return combine(
            [m.next(src_id, src, prefix) for m in self.members],
            self.strategy,
            self.weights,
        )


class DomainMixture:
    """Oracle mixing per-domain oracles: sum_d P(d | x) * dist_d."""

    def __init__(self, oracles: Mapping[str, ModelOracle], probs: Mapping[str, float]) -> None:
        if set(oracles) != set(probs):
            raise MtforgeError(
                f"domain mismatch: oracles {sorted(oracles)} vs probs {sorted(probs)}"
            )
        if abs(sum(probs.values()) - 1.0) > 1e-6:
            raise MtforgeError("domain probabilities must sum to 1")
        self.domains = sorted(oracles)
        vocab = oracles[self.domains[0]].vocab
        for d in self.domains[1:]:
            if oracles[d].vocab != vocab:
                raise MtforgeError("vocab mismatch between domain oracles")
        self.oracles = dict(oracles)
        self.probs = {d: float(probs[d]) for d in self.domains}
        self.vocab = vocab
        self.name = "mix(" + ",".join(self.domains) + ")"

    def next(self, src_id: int, src: Tokens, prefix: Tokens) -> np.ndarray:
        out = np.zeros(len(self.vocab))
        for d in self.domains:
            out += self.probs[d] * self.oracles[d].next(src_id, src, prefix)
        return out


@dataclass
class DecodeConfig:
    mode: str = "beam"  # beam | greedy | sample_topk
    beam_size: int = 10
    alpha: float = 1.4
    max_len: int = 100
    n_best: int = 1
    topk: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("beam", "greedy", "sample_topk"):
            raise MtforgeError(f"unknown decode mode: {self.mode}")
        if self.beam_size < 1:
            raise MtforgeError("beam_size must be >= 1")
        if not 1 <= self.n_best <= self.beam_size and self.mode == "beam":
            raise MtforgeError("need 1 <= n_best <= beam_size")
        if self.alpha < 0:
            raise MtforgeError("length penalty alpha must be >= 0")
        if self.max_len < 1:
            raise MtforgeError("max_len must be >= 1")
        if self.topk < 1:
            raise MtforgeError("topk must be >= 1")


@dataclass
class Hypothesis:
    tokens: Tokens
    logprob: float
    penalized: float
    lp: float = 1.0
    forced: bool = False
    features: dict[str, float] = field(default_factory=dict)
    bleu: float | None = None


@dataclass
class NBestList:
    src_id: int
    hyps: list[Hypothesis]

    def best(self) -> Hypothesis:
        if not self.hyps:
            raise MtforgeError(f"source {self.src_id}: empty n-best list")
        return self.hyps[0]


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _finalize(tokens: Tokens, logprob: float, alpha: float, forced: bool) -> Hypothesis:
    lp = length_penalty(len(tokens), alpha)
    return Hypothesis(tokens, logprob, logprob / lp, lp=lp, forced=forced)


def _beam_decode(oracle: ModelOracle, src_id: int, src: Tokens, cfg: DecodeConfig) -> NBestList:
    vocab = oracle.vocab
    eos_idx = vocab.index(EOS)
    beams: list[tuple[Tokens, float]] = [((), 0.0)]
    finished: list[Hypothesis] = []
    slots = cfg.beam_size
    for _ in range(cfg.max_len):
        candidates: list[tuple[float, int, int]] = []
        for b_idx, (tokens, logprob) in enumerate(beams):
            dist = oracle.next(src_id, src, tokens)
            logs = np.log(np.maximum(dist, 1e-300))
            for t_idx in range(len(vocab)):
                candidates.append((logprob + float(logs[t_idx]), b_idx, t_idx))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_beams: list[tuple[Tokens, float]] = []
        for score, b_idx, t_idx in candidates[:slots]:
            tokens = beams[b_idx][0]
            if t_idx == eos_idx:
                finished.append(_finalize(tokens, score, cfg.alpha, forced=False))
                slots -= 1
            else:
                next_beams.append((tokens + (vocab[t_idx],), score))
        beams = next_beams
        if slots <= 0 or not beams:
            break
    for tokens, logprob in beams:
        finished.append(_finalize(tokens, logprob, cfg.alpha, forced=True))
    finished.sort(key=lambda h: -h.penalized)
    return NBestList(src_id, finished[: cfg.n_best])


def _sample_decode(oracle: ModelOracle, src_id: int, src: Tokens, cfg: DecodeConfig) -> NBestList:
    rng = substream(cfg.seed, src_id)
    vocab = oracle.vocab
    tokens: Tokens = ()
    logprob = 0.0
    forced = True
    for _ in range(cfg.max_len):
        dist = oracle.next(src_id, src, tokens)
        order = np.argsort(-dist, kind="stable")[: cfg.topk]
        sub = dist[order] / dist[order].sum()
        choice = int(order[rng.choice(len(order), p=sub)])
        logprob += math.log(max(float(dist[choice]), 1e-300))
        if vocab[choice] == EOS:
            forced = False
            break
        tokens = tokens + (vocab[choice],)
    return NBestList(src_id, [_finalize(tokens, logprob, cfg.alpha, forced)])


def decode(oracle: ModelOracle, src_id: int, src: Tokens, cfg: DecodeConfig) -> NBestList:
    """Decode one source; see DecodeConfig for the three modes."""
    if cfg.mode == "greedy":
        return _beam_decode(oracle, src_id, src, replace(cfg, mode="beam", beam_size=1, n_best=1))
    if cfg.mode == "sample_topk":
        return _sample_decode(oracle, src_id, src, cfg)
    return _beam_decode(oracle, src_id, src, cfg)


def _format_features(features: dict[str, float]) -> str:
    return " ".join(f"{k}={features[k]!r}" for k in sorted(features))


def write_nbest(lists: Sequence[NBestList], path: str | Path) -> None:
    lines = []
    for nbest in lists:
        for hyp in nbest.hyps:
            fields = [
                str(nbest.src_id),
                " ".join(hyp.tokens),
                f"model={hyp.logprob!r} lp={hyp.lp!r}",
                f"{hyp.penalized!r}",
            ]
            if hyp.forced:
                fields[2] += " forced=1"
            if hyp.features:
                fields.append(_format_features(hyp.features))
            lines.append(" ||| ".join(fields))
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_nbest(path: str | Path) -> list[NBestList]:
    lists: dict[int, NBestList] = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("|||")]
        if len(fields) < 4:
            raise MtforgeError(f"{path}:{i + 1}: expected at least 4 ||| fields")
        try:
            src_id = int(fields[0])
            tokens = tuple(fields[1].split())
            meta = dict(kv.split("=", 1) for kv in fields[2].split())
            logprob = float(meta["model"])
            lp = float(meta.get("lp", 1.0))
            forced = meta.get("forced") == "1"
            penalized = float(fields[3])
        except (KeyError, ValueError) as exc:
            raise MtforgeError(f"{path}:{i + 1}: malformed n-best line: {exc}") from exc
        features: dict[str, float] = {}
        if len(fields) >= 5 and fields[4]:
            for kv in fields[4].split():
                name, _, value = kv.partition("=")
                features[name] = float(value)
        hyp = Hypothesis(tokens, logprob, penalized, lp=lp, forced=forced, features=features)
        if src_id not in lists:
            lists[src_id] = NBestList(src_id, [])
        lists[src_id].hyps.append(hyp)
    return [lists[k] for k in sorted(lists)]
