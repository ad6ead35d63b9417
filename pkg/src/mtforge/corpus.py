"""Corpus types and file formats.

A corpus is an ordered list of sentence pairs. Ids are positional: every
reader assigns 0..n-1 in file order, and transforms that drop pairs keep
the surviving ids (so ids stay strictly increasing but may have gaps).
Tokenization is whitespace-only throughout; tokens never contain internal
whitespace, which is what makes the text formats reversible.

Supported formats:
  two-file  parallel ``name.src`` / ``name.tgt``, one sentence per line
  tsv       one line per pair, ``src<TAB>tgt``
  jsonl     one object per line: id, src, tgt, optional tags and scores
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MtforgeError

Tokens = tuple[str, ...]


class Side(str, Enum):
    BILINGUAL = "bilingual"
    SRC_MONO = "src-mono"
    TGT_MONO = "tgt-mono"


class Level(str, Enum):
    WORD = "word"
    CHAR = "char"
    SUBWORD = "subword"


@dataclass
class SentencePair:
    pair_id: int
    src: Tokens
    tgt: Tokens
    tags: dict[str, str] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)

    def with_score(self, name: str, value: float) -> "SentencePair":
        return replace(self, scores={**self.scores, name: float(value)})

    def with_tag(self, name: str, value: str) -> "SentencePair":
        return replace(self, tags={**self.tags, name: value})


@dataclass
class Corpus:
    pairs: list[SentencePair]
    side: Side = Side.BILINGUAL
    level: Level = Level.WORD

    def __post_init__(self) -> None:
        last = -1
        for p in self.pairs:
            if p.pair_id <= last:
                raise MtforgeError(
                    f"pair ids must be strictly increasing: {p.pair_id} after {last}"
                )
            last = p.pair_id

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def __getitem__(self, i: int) -> SentencePair:
        return self.pairs[i]

    def sentences(self) -> list[Tokens]:
        """Sentences of a monolingual corpus (the populated side)."""
        if self.side == Side.TGT_MONO:
            return [p.tgt for p in self.pairs]
        return [p.src for p in self.pairs]


def _tokens(text: str) -> Tokens:
    return tuple(text.split())


def _check_token(tok: str, where: str) -> None:
    if not tok:
        raise MtforgeError(f"{where}: empty token")
    if any(ch.isspace() for ch in tok):
        raise MtforgeError(f"{where}: token contains whitespace: {tok!r}")


def from_texts(
    src_lines: Iterable[str],
    tgt_lines: Iterable[str],
    side: Side = Side.BILINGUAL,
) -> Corpus:
    pairs = [
        SentencePair(i, _tokens(s), _tokens(t))
        for i, (s, t) in enumerate(zip(src_lines, tgt_lines))
    ]
    return Corpus(pairs, side=side)


def read_corpus(path: str | Path, fmt: str = "jsonl") -> Corpus:
    """Read a bilingual corpus; ids are assigned 0..n-1 in file order.

    For ``two-file``, *path* is the shared prefix of ``.src``/``.tgt``.
    """
    path = Path(path)
    if fmt == "two-file":
        src_path = path.with_name(path.name + ".src")
        tgt_path = path.with_name(path.name + ".tgt")
        src_lines = src_path.read_text(encoding="utf-8").splitlines()
        tgt_lines = tgt_path.read_text(encoding="utf-8").splitlines()
        if len(src_lines) != len(tgt_lines):
            raise MtforgeError(
                f"line count mismatch: {src_path} has {len(src_lines)} lines, "
                f"{tgt_path} has {len(tgt_lines)}"
            )
        return from_texts(src_lines, tgt_lines)
    if fmt == "tsv":
        pairs = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            srctext, sep, tgttext = line.partition("\t")
            if not sep:
                raise MtforgeError(f"{path}:{i + 1}: expected src<TAB>tgt")
            pairs.append(SentencePair(i, _tokens(srctext), _tokens(tgttext)))
        return Corpus(pairs)
    if fmt == "jsonl":
        pairs = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MtforgeError(f"{path}:{i + 1}: malformed JSONL: {exc}") from exc
            if not isinstance(obj, dict) or "src" not in obj or "tgt" not in obj:
                raise MtforgeError(f"{path}:{i + 1}: expected object with src and tgt")
            src = obj["src"]
            tgt = obj["tgt"]
            pairs.append(
                SentencePair(
                    len(pairs),
                    tuple(src) if isinstance(src, list) else _tokens(str(src)),
                    tuple(tgt) if isinstance(tgt, list) else _tokens(str(tgt)),
                    tags={str(k): str(v) for k, v in obj.get("tags", {}).items()},
                    scores={str(k): float(v) for k, v in obj.get("scores", {}).items()},
                )
            )
        return Corpus(pairs)
    raise MtforgeError(f"unknown corpus format: {fmt}")


def write_corpus(corpus: Corpus, path: str | Path, fmt: str = "jsonl") -> None:
    path = Path(path)
    if fmt == "two-file":
        src_path = path.with_name(path.name + ".src")
        tgt_path = path.with_name(path.name + ".tgt")
        src_path.write_text(
            "".join(" ".join(p.src) + "\n" for p in corpus), encoding="utf-8"
        )
        tgt_path.write_text(
            "".join(" ".join(p.tgt) + "\n" for p in corpus), encoding="utf-8"
        )
        return
    if fmt == "tsv":
        path.write_text(
            "".join(" ".join(p.src) + "\t" + " ".join(p.tgt) + "\n" for p in corpus),
            encoding="utf-8",
        )
        return
    if fmt == "jsonl":
        lines = []
        for p in corpus:
            for tok in p.src + p.tgt:
                _check_token(tok, f"pair {p.pair_id}")
            obj: dict[str, object] = {
                "id": p.pair_id,
                "src": " ".join(p.src),
                "tgt": " ".join(p.tgt),
            }
            if p.tags:
                obj["tags"] = dict(sorted(p.tags.items()))
            if p.scores:
                obj["scores"] = dict(sorted(p.scores.items()))
            lines.append(json.dumps(obj, ensure_ascii=False))
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return
    raise MtforgeError(f"unknown corpus format: {fmt}")


def read_mono(path: str | Path, side: Side = Side.SRC_MONO) -> Corpus:
    """Read a monolingual corpus, one sentence per line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if side == Side.TGT_MONO:
        pairs = [SentencePair(i, (), _tokens(s)) for i, s in enumerate(lines)]
    else:
        pairs = [SentencePair(i, _tokens(s), ()) for i, s in enumerate(lines)]
    return Corpus(pairs, side=side)


def write_mono(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(
        "".join(" ".join(s) + "\n" for s in corpus.sentences()), encoding="utf-8"
    )
