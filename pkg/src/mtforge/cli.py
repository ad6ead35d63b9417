"""The mtforge command line: one subcommand per pipeline stage.

Every run emits a JSON run report (counts in/out, per-reason drops, wall
time, and the fully resolved configuration) next to its outputs; pass
``--plot`` to also render the report's numbers as PNG figures. Global
flags ``--seed``, ``--workers`` and ``--config`` apply to all
subcommands; explicit flags override config-file values, and unknown
config keys are rejected. The ``MTFORGE_LOG`` environment variable sets
the log level. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import align as al
from . import augment as aug
from . import bleu as bl
from . import bpe as bp
from . import decoding as dec
from . import domain as dom
from . import ensemble as ens
from . import filters as fl
from . import langid as li
from . import lm as lmod
from . import rerank as rr
from . import select as sel
from .corpus import (
    Corpus, Level, SentencePair, Side,
    read_corpus, read_mono, write_corpus, write_mono,
)
from .errors import MtforgeError
from .report import RunReport, StageTimer, render_drop_figure, render_histogram, render_trace

log = logging.getLogger("mtforge")

CORPUS_FORMATS = ("jsonl", "tsv", "two-file")


class UsageError(Exception):
    """Bad flags or config; exits 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_CONFIG_SECTIONS: dict[str, set[str]] = {
    "filter": {
        "max_words", "max_word_chars", "ratio_low", "ratio_high",
        "lm_percentile", "align_percentile", "langid_min_conf",
        "expected_src_lang", "expected_tgt_lang", "normalize",
    },
    "lm": {"order", "level", "min_count"},
    "langid": {"order", "min_count"},
    "align": {"iterations", "p0", "tension", "optimize_tension"},
    "noise": {"p_drop", "p_blank", "p_swap", "filler"},
    "bpe": {"merges"},
    "select": {"k", "criterion"},
    "decode": {"mode", "beam_size", "alpha", "max_len", "n_best", "topk", "strategy"},
    "ensemble": {"epsilon", "strategy"},
    "domain": {"k", "dim", "tau"},
    "rerank": {"c", "epochs"},
    "bt": {"rounds", "epsilon"},
    "kd": {"threshold"},
}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    allowed_top = set(_CONFIG_SECTIONS) | {"seed", "workers"}
    for key, value in obj.items():
        if key not in allowed_top:
            raise UsageError(f"config {path}: unknown key {key!r}")
        if key in _CONFIG_SECTIONS:
            if not isinstance(value, dict):
                raise UsageError(f"config {path}: section {key!r} must be an object")
            unknown = set(value) - _CONFIG_SECTIONS[key]
            if unknown:
                raise UsageError(
                    f"config {path}: unknown keys in section {key!r}: {sorted(unknown)}"
                )
    return obj


class Ctx:
    """Resolved per-run settings: flag > config > default."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.config = _load_config(getattr(args, "config", None))
        self.seed = self._global("seed", 0)
        self.workers = self._global("workers", 1)
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")

    def _global(self, key: str, default):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.config.get(key, default)

    def opt(self, section: str, key: str, default):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        return self.config.get(section, {}).get(key, default)


def _read_any(path: str, fmt: str, side: Side = Side.SRC_MONO) -> Corpus:
    if fmt == "text":
        return read_mono(path, side)
    if fmt not in CORPUS_FORMATS:
        raise UsageError(f"unknown format {fmt!r}")
    return read_corpus(path, fmt)


def _read_side(path: str, fmt: str, side: str) -> list[tuple[int, tuple[str, ...]]]:
    """(id, tokens) rows from a text file or one side of a corpus."""
    if fmt == "text":
        corpus = read_mono(path, Side.SRC_MONO)
        return [(p.pair_id, p.src) for p in corpus]
    corpus = read_corpus(path, fmt)
    if side == "tgt":
        return [(p.pair_id, p.tgt) for p in corpus]
    return [(p.pair_id, p.src) for p in corpus]


def _report_path(ctx: Ctx, out: str | Path) -> Path:
    explicit = getattr(ctx.args, "report", None)
    return Path(explicit) if explicit else Path(str(out) + ".report.json")


def _emit(ctx: Ctx, report: RunReport, out: str | Path, resolved: dict,
          plot: bool | None = None) -> None:
    report.config = resolved
    rpath = _report_path(ctx, out)
    report.write(rpath)
    wants_plot = ctx.args.plot if plot is None else plot
    if wants_plot:
        render_drop_figure(report, rpath.with_suffix(".png"))
    log.info("%s: %d in, %d out", report.stage, report.count_in, report.count_out)


def _base_resolved(ctx: Ctx, command: str, **extra) -> dict:
    resolved = {"command": command, "seed": ctx.seed, "workers": ctx.workers}
    resolved.update(extra)
    return resolved


# ---------------------------------------------------------------- filter

def cmd_filter(args) -> int:
    ctx = Ctx(args)
    corpus = _read_any(args.infile, args.format, Side.BILINGUAL)
    normalize = ctx.opt("filter", "normalize", True)
    if args.no_normalize:
        normalize = False
    config = fl.FilterConfig(
        max_words=int(ctx.opt("filter", "max_words", 120)),
        max_word_chars=int(ctx.opt("filter", "max_word_chars", 40)),
        ratio_low=ctx.opt("filter", "ratio_low", "1/3"),
        ratio_high=ctx.opt("filter", "ratio_high", "3"),
        lm_percentile=float(ctx.opt("filter", "lm_percentile", 5.0)),
        align_percentile=float(ctx.opt("filter", "align_percentile", 5.0)),
        langid_min_conf=float(ctx.opt("filter", "langid_min_conf", 0.5)),
        expected_src_lang=str(ctx.opt("filter", "expected_src_lang", "")),
        expected_tgt_lang=str(ctx.opt("filter", "expected_tgt_lang", "")),
    )
    langid_model = li.load_langid(args.langid_model) if args.langid_model else None
    with StageTimer() as timer:
        if normalize:
            corpus = fl.normalize_corpus(corpus)
        rules = fl.build_rules(config, langid_model)
        filtered, report = fl.run_pipeline(corpus, rules, workers=ctx.workers)
        drops = dict(report.drops)
        if args.lm_src or args.lm_tgt:
            for flag, side in ((args.lm_src, "src"), (args.lm_tgt, "tgt")):
                if not flag:
                    continue
                lm = lmod.load_lm(flag)
                scored = lmod.score_corpus(lm, filtered, side=side, workers=ctx.workers)
                filtered, sub = fl.filter_by_score(
                    scored, f"ce_{side}", config.lm_percentile, "drop-highest"
                )
                drops.update(sub.drops)
        if args.align_fwd:
            fwd = al.load_align(args.align_fwd)
            rev = al.load_align(args.align_rev) if args.align_rev else None
            scored = al.score_corpus_align(fwd, filtered, reverse=rev, workers=ctx.workers)
            filtered, sub = fl.filter_by_score(
                scored, "align", config.align_percentile, "drop-lowest"
            )
            drops.update(sub.drops)
    write_corpus(filtered, args.out, args.out_format)
    final = RunReport(
        stage="filter",
        count_in=len(corpus),
        count_out=len(filtered),
        drops=drops,
        wall_time_s=timer.elapsed,
    )
    resolved = _base_resolved(
        ctx, "filter", normalize=normalize, **config.as_dict(),
        langid_model=args.langid_model or "", out_format=args.out_format,
    )
    _emit(ctx, final, args.out, resolved)
    return 0


# ---------------------------------------------------------------- language models

def cmd_train_lm(args) -> int:
    ctx = Ctx(args)
    corpus = _read_any(args.infile, args.format, Side.SRC_MONO)
    if args.format == "text":
        sentences = corpus.sentences()
    elif args.side == "tgt":
        sentences = [p.tgt for p in corpus]
    else:
        sentences = [p.src for p in corpus]
    order = int(ctx.opt("lm", "order", 3))
    level = Level(ctx.opt("lm", "level", "word"))
    min_count = int(ctx.opt("lm", "min_count", 2))
    with StageTimer() as timer:
        lm = lmod.train_ngram(sentences, order=order, level=level, min_count=min_count)
        lmod.save_lm(lm, args.out)
    report = RunReport(
        stage="train-lm", count_in=len(sentences), count_out=len(sentences),
        wall_time_s=timer.elapsed,
        details={"order": order, "level": level.value, "vocab": len(lm.vocab),
                 "ngrams": len(lm.probs)},
    )
    resolved = _base_resolved(ctx, "train-lm", order=order, level=level.value,
                              min_count=min_count, side=args.side)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_score_lm(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    lm = lmod.load_lm(args.lm)
    name = args.score_name or f"ce_{args.side}"
    with StageTimer() as timer:
        scored = lmod.score_corpus(lm, corpus, side=args.side, score_name=name,
                                   workers=ctx.workers)
    write_corpus(scored, args.out, "jsonl")
    values = [p.scores[name] for p in scored]
    report = RunReport(
        stage="score-lm", count_in=len(corpus), count_out=len(scored),
        wall_time_s=timer.elapsed,
        details={"score": name, "mean": sum(values) / len(values) if values else 0.0},
    )
    resolved = _base_resolved(ctx, "score-lm", side=args.side, score_name=name, lm=args.lm)
    _emit(ctx, report, args.out, resolved, plot=False)
    if ctx.args.plot:
        render_histogram(values, _report_path(ctx, args.out).with_suffix(".png"),
                         f"{name} over {len(values)} pairs", "nats/token")
    return 0


def cmd_train_langid(args) -> int:
    ctx = Ctx(args)
    corpora = {}
    total = 0
    for spec in args.train:
        lang, _, path = spec.partition("=")
        if not lang or not path:
            raise UsageError(f"--train expects LANG=PATH, got {spec!r}")
        corpora[lang] = read_mono(path, Side.SRC_MONO)
        total += len(corpora[lang])
    order = int(ctx.opt("langid", "order", 3))
    min_count = int(ctx.opt("langid", "min_count", 1))
    with StageTimer() as timer:
        model = li.train_langid(corpora, order=order, min_count=min_count)
        li.save_langid(model, args.out)
    report = RunReport(
        stage="train-langid", count_in=total, count_out=total,
        wall_time_s=timer.elapsed,
        details={"languages": model.languages(),
                 "priors": {k: round(v, 6) for k, v in model.priors.items()}},
    )
    resolved = _base_resolved(ctx, "train-langid", order=order, min_count=min_count,
                              languages=sorted(corpora))
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


# ---------------------------------------------------------------- alignment

def cmd_train_align(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    iterations = int(ctx.opt("align", "iterations", 5))
    p0 = float(ctx.opt("align", "p0", 0.08))
    tension = float(ctx.opt("align", "tension", 4.0))
    optimize = bool(ctx.opt("align", "optimize_tension", True))
    if args.no_optimize_tension:
        optimize = False
    with StageTimer() as timer:
        model = al.train_align(corpus, iterations=iterations, p0=p0,
                               tension=tension, optimize_tension=optimize)
        al.save_align(model, args.out)
    report = RunReport(
        stage="train-align", count_in=len(corpus), count_out=len(corpus),
        wall_time_s=timer.elapsed,
        details={"loglik_trace": model.loglik_trace, "tension": model.tension},
    )
    resolved = _base_resolved(ctx, "train-align", iterations=iterations, p0=p0,
                              tension=tension, optimize_tension=optimize)
    _emit(ctx, report, args.out, resolved, plot=False)
    if ctx.args.plot:
        render_trace(model.loglik_trace, _report_path(ctx, args.out).with_suffix(".png"),
                     "EM log-likelihood", "log-likelihood")
    return 0


def cmd_score_align(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    model = al.load_align(args.model)
    reverse = al.load_align(args.reverse_model) if args.reverse_model else None
    name = args.score_name
    with StageTimer() as timer:
        scored = al.score_corpus_align(model, corpus, score_name=name,
                                       reverse=reverse, workers=ctx.workers)
    write_corpus(scored, args.out, "jsonl")
    values = [p.scores[name] for p in scored]
    report = RunReport(
        stage="score-align", count_in=len(corpus), count_out=len(scored),
        wall_time_s=timer.elapsed,
        details={"score": name, "symmetrized": reverse is not None},
    )
    resolved = _base_resolved(ctx, "score-align", score_name=name, model=args.model,
                              reverse_model=args.reverse_model or "")
    _emit(ctx, report, args.out, resolved, plot=False)
    if ctx.args.plot:
        render_histogram(values, _report_path(ctx, args.out).with_suffix(".png"),
                         f"{name} over {len(values)} pairs", "mean log-likelihood")
    return 0


# ---------------------------------------------------------------- selection

def cmd_select_ml(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    lms = sel.LMSet(
        in_src=lmod.load_lm(args.lm_in_src),
        out_src=lmod.load_lm(args.lm_out_src),
        in_tgt=lmod.load_lm(args.lm_in_tgt),
        out_tgt=lmod.load_lm(args.lm_out_tgt),
    )
    k = int(ctx.opt("select", "k", sel.DEFAULT_K))
    with StageTimer() as timer:
        scored = sel.score_ml(corpus, lms, workers=ctx.workers)
        selected, report = sel.select_top_k(scored, sel.ML_SCORE, k, "lowest")
    write_corpus(selected, args.out, "jsonl")
    final = RunReport(
        stage="select-ml", count_in=len(corpus), count_out=len(selected),
        drops=report.drops, wall_time_s=timer.elapsed, details=report.details,
    )
    resolved = _base_resolved(ctx, "select-ml", k=k)
    _emit(ctx, final, args.out, resolved, plot=False)
    if ctx.args.plot:
        values = [p.scores[sel.ML_SCORE] for p in scored]
        render_histogram(values, _report_path(ctx, args.out).with_suffix(".png"),
                         "cross-entropy difference", "score (lower = more in-domain)")
    return 0


def cmd_select_topk(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    k = int(ctx.opt("select", "k", sel.DEFAULT_K))
    criterion = str(ctx.opt("select", "criterion", args.criterion or "lowest"))
    selected, report = sel.select_top_k(corpus, args.score_name, k, criterion)
    write_corpus(selected, args.out, "jsonl")
    resolved = _base_resolved(ctx, "select-topk", k=k, criterion=criterion,
                              score_name=args.score_name)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_ingest_scores(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    with StageTimer() as timer:
        scored = sel.ingest_external_scores(corpus, args.scores, args.score_name)
    write_corpus(scored, args.out, "jsonl")
    report = RunReport(
        stage="ingest-scores", count_in=len(corpus), count_out=len(scored),
        wall_time_s=timer.elapsed, details={"score": args.score_name},
    )
    resolved = _base_resolved(ctx, "ingest-scores", score_name=args.score_name,
                              scores=args.scores)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


# ---------------------------------------------------------------- augmentation

def cmd_noise(args) -> int:
    ctx = Ctx(args)
    corpus = _read_any(args.infile, args.format, Side.SRC_MONO)
    config = aug.NoiseConfig(
        p_drop=float(ctx.opt("noise", "p_drop", 0.05)),
        p_blank=float(ctx.opt("noise", "p_blank", 0.05)),
        p_swap=float(ctx.opt("noise", "p_swap", 0.05)),
        filler=str(ctx.opt("noise", "filler", aug.BLANK_TOKEN)),
        seed=ctx.seed,
    )
    sides = None if args.side == "auto" else (
        ("src", "tgt") if args.side == "both" else (args.side,)
    )
    with StageTimer() as timer:
        noised = aug.noise_corpus(corpus, config, sides=sides, workers=ctx.workers)
    if args.format == "text":
        write_mono(noised, args.out)
    else:
        write_corpus(noised, args.out, args.format)
    report = RunReport(
        stage="noise", count_in=len(corpus), count_out=len(noised),
        wall_time_s=timer.elapsed,
    )
    resolved = _base_resolved(ctx, "noise", p_drop=config.p_drop, p_blank=config.p_blank,
                              p_swap=config.p_swap, filler=config.filler, side=args.side)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_reverse_src(args) -> int:
    ctx = Ctx(args)
    corpus = _read_any(args.infile, args.format, Side.SRC_MONO)
    with StageTimer() as timer:
        reversed_corpus = aug.reverse_source(corpus)
    if args.format == "text":
        write_mono(reversed_corpus, args.out)
    else:
        write_corpus(reversed_corpus, args.out, args.format)
    report = RunReport(
        stage="reverse-src", count_in=len(corpus), count_out=len(reversed_corpus),
        wall_time_s=timer.elapsed,
    )
    _emit(ctx, report, args.out, _base_resolved(ctx, "reverse-src"), plot=False)
    return 0


def cmd_bpe_learn(args) -> int:
    ctx = Ctx(args)
    rows = _read_side(args.infile, args.format, args.side)
    sentences = [tokens for _, tokens in rows]
    merges = int(ctx.opt("bpe", "merges", 40_000))
    with StageTimer() as timer:
        model = bp.bpe_learn(sentences, merges=merges)
        bp.save_bpe(model, args.out)
    report = RunReport(
        stage="bpe-learn", count_in=len(sentences), count_out=len(sentences),
        wall_time_s=timer.elapsed,
        details={"merges_requested": merges, "merges_learned": len(model.merges),
                 "vocab": len(model.vocab)},
    )
    resolved = _base_resolved(ctx, "bpe-learn", merges=merges, side=args.side)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_bpe_apply(args) -> int:
    ctx = Ctx(args)
    model = bp.load_bpe(args.model)
    corpus = _read_any(args.infile, args.format, Side.SRC_MONO)
    apply_src = args.side in ("src", "both")
    apply_tgt = args.side in ("tgt", "both")
    op = bp.bpe_decode if args.decode else (lambda toks: bp.bpe_apply(model, toks))
    with StageTimer() as timer:
        pairs = []
        for p in corpus:
            src = op(p.src) if apply_src and p.src else p.src
            tgt = op(p.tgt) if apply_tgt and p.tgt else p.tgt
            pairs.append(type(p)(p.pair_id, src, tgt, dict(p.tags), dict(p.scores)))
        out_corpus = Corpus(pairs, side=corpus.side,
                            level=corpus.level if args.decode else Level.SUBWORD)
    if args.format == "text":
        write_mono(out_corpus, args.out)
    else:
        write_corpus(out_corpus, args.out, args.format)
    report = RunReport(
        stage="bpe-apply", count_in=len(corpus), count_out=len(out_corpus),
        wall_time_s=timer.elapsed, details={"decode": bool(args.decode)},
    )
    resolved = _base_resolved(ctx, "bpe-apply", side=args.side, decode=bool(args.decode),
                              model=args.model)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_kd_filter(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    refs = [tokens for _, tokens in _read_side(args.refs, args.refs_format, "tgt")]
    threshold = float(ctx.opt("kd", "threshold", aug.KD_THRESHOLD))
    kept, report = aug.kd_filter(corpus, refs, threshold)
    write_corpus(kept, args.out, "jsonl")
    resolved = _base_resolved(ctx, "kd-filter", threshold=threshold)
    _emit(ctx, report, args.out, resolved)
    return 0


# ---------------------------------------------------------------- metrics

def cmd_bleu(args) -> int:
    hyps = [tokens for _, tokens in _read_side(args.hyp, args.hyp_format, "tgt")]
    refs = [tokens for _, tokens in _read_side(args.ref, args.ref_format, "tgt")]
    if len(hyps) != len(refs):
        raise MtforgeError(
            f"line count mismatch: {len(hyps)} hypotheses vs {len(refs)} references"
        )
    detail = bl.corpus_bleu_detail(bl.bleu_stats(h, r) for h, r in zip(hyps, refs))
    text = json.dumps(detail)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- decoding

def _build_oracles(args) -> list:
    oracles = []
    for path in args.table_model or []:
        oracles.append(dec.TableModel.from_jsonl(path))
    for spec in args.lexicon_model or []:
        lm_path, _, tt_path = spec.partition(":")
        if not lm_path or not tt_path:
            raise UsageError(f"--lexicon-model expects LM_PATH:TTABLE_PATH, got {spec!r}")
        oracle = dec.LexiconLM(Path(lm_path).stem, lmod.load_lm(lm_path),
                               al.load_align(tt_path))
        oracles.append(oracle)
    if not oracles:
        raise UsageError("decoding needs at least one --table-model or --lexicon-model")
    return oracles


def _decode_config(ctx: Ctx, args) -> dec.DecodeConfig:
    return dec.DecodeConfig(
        mode=str(ctx.opt("decode", "mode", "beam")),
        beam_size=int(ctx.opt("decode", "beam_size", 10)),
        alpha=float(ctx.opt("decode", "alpha", 1.4)),
        max_len=int(ctx.opt("decode", "max_len", 100)),
        n_best=int(ctx.opt("decode", "n_best", 1)),
        topk=int(ctx.opt("decode", "topk", 10)),
        seed=ctx.seed,
    )


def cmd_decode(args) -> int:
    ctx = Ctx(args)
    sources = _read_side(args.src, args.src_format, "src")
    oracles = _build_oracles(args)
    strategy = str(ctx.opt("decode", "strategy", "log_avg"))
    weights = None
    if args.weights:
        weights = [float(x) for x in args.weights.split(",")]
    oracle = oracles[0] if len(oracles) == 1 and weights is None else dec.Ensemble(
        oracles, strategy=strategy, weights=weights
    )
    cfg = _decode_config(ctx, args)
    with StageTimer() as timer:
        lists = ens.decode_corpus(oracle, sources, cfg, workers=ctx.workers)
    dec.write_nbest(lists, args.out)
    report = RunReport(
        stage="decode", count_in=len(sources), count_out=len(lists),
        wall_time_s=timer.elapsed,
        details={"members": [o.name for o in oracles], "strategy": strategy},
    )
    resolved = _base_resolved(ctx, "decode", mode=cfg.mode, beam_size=cfg.beam_size,
                              alpha=cfg.alpha, max_len=cfg.max_len, n_best=cfg.n_best,
                              topk=cfg.topk, strategy=strategy,
                              weights=weights or [])
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_ensemble_select(args) -> int:
    ctx = Ctx(args)
    dev_src = _read_side(args.dev_src, args.dev_src_format, "src")
    dev_ref = _read_side(args.dev_ref, args.dev_ref_format, "tgt")
    if len(dev_src) != len(dev_ref):
        raise MtforgeError(
            f"line count mismatch: {len(dev_src)} dev sources vs {len(dev_ref)} references"
        )
    oracles = _build_oracles(args)
    strategy = str(ctx.opt("ensemble", "strategy", "log_avg"))
    epsilon = float(ctx.opt("ensemble", "epsilon", ens.DEFAULT_EPSILON))
    cfg = _decode_config(ctx, args)
    dev_pairs = [
        SentencePair(i, src, ref)
        for i, ((_, src), (_, ref)) in enumerate(zip(dev_src, dev_ref))
    ]
    dev = Corpus(dev_pairs)
    with StageTimer() as timer:
        selection = ens.greedy_ensemble_select(
            oracles, dev, cfg, epsilon=epsilon, strategy=strategy, workers=ctx.workers
        )
    out = {
        "members": selection.members,
        "bleu": selection.bleu,
        "trace": [{"members": list(m), "bleu": b} for m, b in selection.trace],
    }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    report = RunReport(
        stage="ensemble-select", count_in=len(oracles), count_out=len(selection.members),
        drops={"rejected": len(oracles) - len(selection.members)},
        wall_time_s=timer.elapsed, details=out,
    )
    resolved = _base_resolved(ctx, "ensemble-select", epsilon=epsilon, strategy=strategy)
    _emit(ctx, report, args.out, resolved, plot=False)
    if ctx.args.plot:
        render_trace([b for _, b in selection.trace],
                     _report_path(ctx, args.out).with_suffix(".png"),
                     "greedy ensemble selection", "dev BLEU",
                     labels=["+".join(m[-1:]) for m, _ in selection.trace])
    return 0


# ---------------------------------------------------------------- domains

def cmd_cluster(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    k = int(ctx.opt("domain", "k", dom.DEFAULT_K))
    dim = int(ctx.opt("domain", "dim", dom.DEFAULT_DIM))
    with StageTimer() as timer:
        if args.vectors:
            provider = dom.ExternalVectorEmbedding.from_jsonl(args.vectors)
            provider_cfg = {"name": "external", "path": str(args.vectors)}
        else:
            provider = dom.HashedTfidfEmbedding(dim=dim).fit(
                [p.src if p.src else p.tgt for p in corpus]
            )
            provider_cfg = provider.to_dict()
        vectors = dom.embed_corpus(provider, corpus)
        model = dom.kmeans_fit(vectors, k=k, seed=ctx.seed, provider=provider_cfg)
        dom.save_domain(model, args.out)
    report = RunReport(
        stage="cluster", count_in=len(corpus), count_out=len(corpus),
        wall_time_s=timer.elapsed,
        details={"k": k, "sse_trace": model.sse_trace, "tau": model.tau},
    )
    resolved = _base_resolved(ctx, "cluster", k=k, dim=dim,
                              provider=provider_cfg.get("name", ""))
    _emit(ctx, report, args.out, resolved, plot=False)
    if ctx.args.plot:
        render_trace(model.sse_trace, _report_path(ctx, args.out).with_suffix(".png"),
                     "k-means objective", "within-cluster SSE")
    return 0


def cmd_domain_probs(args) -> int:
    ctx = Ctx(args)
    corpus = read_corpus(args.infile, args.format)
    model = dom.load_domain(args.model)
    tau = ctx.opt("domain", "tau", None)
    tau = float(tau) if tau is not None else None
    if args.vectors:
        provider = dom.ExternalVectorEmbedding.from_jsonl(args.vectors)
    elif model.provider.get("name") == "hashed-tfidf":
        provider = dom.provider_from_dict(model.provider)
    else:
        raise MtforgeError(
            "domain model has no embedded provider; pass --vectors"
        )
    with StageTimer() as timer:
        lines = []
        for p in corpus:
            vec = provider.embed_pair(p)
            probs = dom.domain_probs(model, vec, tau)
            lines.append(json.dumps({
                "id": p.pair_id,
                "label": dom.domain_label(model, vec),
                "probs": [float(x) for x in probs],
            }))
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    report = RunReport(
        stage="domain-probs", count_in=len(corpus), count_out=len(corpus),
        wall_time_s=timer.elapsed, details={"k": model.k, "tau": tau or model.tau},
    )
    resolved = _base_resolved(ctx, "domain-probs", model=args.model,
                              tau=tau if tau is not None else model.tau)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


# ---------------------------------------------------------------- reranking

def _featurized_lists(args, nbest_path: str) -> list:
    lists = dec.read_nbest(nbest_path)
    sources = dict(_read_side(args.src, args.src_format, "src"))
    lms = [lmod.load_lm(p) for p in (args.lm or [])]
    out = []
    for nbest in lists:
        if nbest.src_id not in sources:
            raise MtforgeError(f"no source sentence for n-best id {nbest.src_id}")
        out.append(rr.extract_features(sources[nbest.src_id], nbest, lms))
    return out


def cmd_rerank_train(args) -> int:
    ctx = Ctx(args)
    lists = _featurized_lists(args, args.nbest)
    refs = dict(_read_side(args.refs, args.refs_format, "tgt"))
    scored = []
    for nbest in lists:
        if nbest.src_id not in refs:
            raise MtforgeError(f"no reference for n-best id {nbest.src_id}")
        scored.append(rr.score_nbest_bleu(nbest, refs[nbest.src_id]))
    c = float(ctx.opt("rerank", "c", rr.MIRA_C))
    epochs = int(ctx.opt("rerank", "epochs", rr.MIRA_EPOCHS))
    with StageTimer() as timer:
        weights = rr.mira_train(scored, c=c, epochs=epochs, seed=ctx.seed)
        rr.save_weights(weights, args.out)
    report = RunReport(
        stage="rerank-train", count_in=len(scored), count_out=len(scored),
        wall_time_s=timer.elapsed, details={"weights": weights.weights},
    )
    resolved = _base_resolved(ctx, "rerank-train", c=c, epochs=epochs,
                              lms=list(args.lm or []))
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


def cmd_rerank_apply(args) -> int:
    ctx = Ctx(args)
    lists = _featurized_lists(args, args.nbest)
    weights = rr.load_weights(args.weights)
    with StageTimer() as timer:
        reranked = [rr.rerank_apply(weights, nbest) for nbest in lists]
    dec.write_nbest(reranked, args.out)
    if args.best:
        Path(args.best).write_text(
            "".join(" ".join(nb.best().tokens) + "\n" for nb in reranked),
            encoding="utf-8",
        )
    report = RunReport(
        stage="rerank-apply", count_in=len(lists), count_out=len(reranked),
        wall_time_s=timer.elapsed,
    )
    resolved = _base_resolved(ctx, "rerank-apply", weights=args.weights,
                              lms=list(args.lm or []))
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


# ---------------------------------------------------------------- back-translation

def cmd_bt_iterate(args) -> int:
    ctx = Ctx(args)
    bitext = read_corpus(args.bitext, args.format)
    src_mono = [t for _, t in _read_side(args.src_mono, "text", "src")]
    tgt_mono = [t for _, t in _read_side(args.tgt_mono, "text", "src")]
    dev_src = _read_side(args.dev_src, "text", "src")
    dev_ref = _read_side(args.dev_ref, "text", "tgt")
    if len(dev_src) != len(dev_ref):
        raise MtforgeError(
            f"line count mismatch: {len(dev_src)} dev sources vs {len(dev_ref)} references"
        )
    dev = Corpus([
        SentencePair(i, s, r) for i, ((_, s), (_, r)) in enumerate(zip(dev_src, dev_ref))
    ])
    forward = dec.LexiconLM("forward", lmod.load_lm(args.s2t_lm), al.load_align(args.s2t_ttable))
    reverse = dec.LexiconLM("reverse", lmod.load_lm(args.t2s_lm), al.load_align(args.t2s_ttable))
    rounds = int(ctx.opt("bt", "rounds", 3))
    epsilon = float(ctx.opt("bt", "epsilon", aug.BT_EPSILON))
    noise_cfg = aug.NoiseConfig(
        p_drop=float(ctx.opt("noise", "p_drop", 0.05)),
        p_blank=float(ctx.opt("noise", "p_blank", 0.05)),
        p_swap=float(ctx.opt("noise", "p_swap", 0.05)),
        filler=str(ctx.opt("noise", "filler", aug.BLANK_TOKEN)),
        seed=ctx.seed,
    )
    cfg = _decode_config(ctx, args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with StageTimer() as timer:
        result = aug.iterate_joint_bt(
            forward, reverse, bitext, src_mono, tgt_mono, dev,
            rounds=rounds, decode_config=cfg, noise_config=noise_cfg,
            epsilon=epsilon, workers=ctx.workers,
        )
        for rnd in result.rounds:
            write_corpus(rnd.for_forward, out_dir / f"round-{rnd.index}.forward.jsonl", "jsonl")
            write_corpus(rnd.for_reverse, out_dir / f"round-{rnd.index}.reverse.jsonl", "jsonl")
        trace_path = out_dir / "trace.json"
        trace_path.write_text(
            json.dumps({"dev_bleu": result.dev_bleu_trace}, indent=2) + "\n",
            encoding="utf-8",
        )
    synthetic = sum(len(r.for_forward) + len(r.for_reverse) for r in result.rounds)
    report = RunReport(
        stage="bt-iterate", count_in=synthetic, count_out=synthetic,
        wall_time_s=timer.elapsed,
        details={"dev_bleu": result.dev_bleu_trace, "rounds_run": len(result.rounds)},
    )
    resolved = _base_resolved(ctx, "bt-iterate", rounds=rounds, epsilon=epsilon,
                              mode=cfg.mode)
    report.config = resolved
    rpath = Path(args.report) if args.report else out_dir / "report.json"
    report.write(rpath)
    if ctx.args.plot:
        render_trace(result.dev_bleu_trace, rpath.with_suffix(".png"),
                     "joint back-translation", "dev BLEU")
    return 0


# ---------------------------------------------------------------- postprocess

def cmd_postprocess(args) -> int:
    ctx = Ctx(args)
    rows = _read_side(args.infile, args.format, "tgt")
    from .textnorm import postprocess

    with StageTimer() as timer:
        lines = [postprocess(tokens, args.unk_token) for _, tokens in rows]
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    report = RunReport(
        stage="postprocess", count_in=len(rows), count_out=len(lines),
        wall_time_s=timer.elapsed,
    )
    resolved = _base_resolved(ctx, "postprocess", unk_token=args.unk_token)
    _emit(ctx, report, args.out, resolved, plot=False)
    return 0


# ---------------------------------------------------------------- parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    sub.add_argument("--workers", type=int, default=None, help="worker count (default 1)")
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--report", default=None, help="run report path")
    sub.add_argument("--plot", action="store_true", default=None,
                     help="render report figures as PNG")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtforge", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        sub = subs.add_parser(name, help=help_text)
        sub.set_defaults(func=func)
        _add_common(sub)
        return sub

    p = add("filter", cmd_filter, "clean a parallel corpus with the rule pipeline")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--out", required=True)
    p.add_argument("--out-format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--langid-model", default=None)
    p.add_argument("--lm-src", default=None, help="source LM for the score filter")
    p.add_argument("--lm-tgt", default=None, help="target LM for the score filter")
    p.add_argument("--align-fwd", default=None, help="forward alignment model")
    p.add_argument("--align-rev", default=None, help="reverse model for symmetrized scores")
    p.add_argument("--no-normalize", action="store_true")

    p = add("train-lm", cmd_train_lm, "train a Witten-Bell n-gram LM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--side", default="src", choices=("src", "tgt"))
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--level", default=None, choices=("word", "char", "subword"))
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("score-lm", cmd_score_lm, "attach per-sentence LM cross-entropy")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--lm", required=True)
    p.add_argument("--side", default="src", choices=("src", "tgt"))
    p.add_argument("--score-name", default=None)
    p.add_argument("--out", required=True)

    p = add("train-langid", cmd_train_langid, "train the language identifier")
    p.add_argument("--train", action="append", required=True, metavar="LANG=PATH")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("train-align", cmd_train_align, "train the word aligner with EM")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--p0", type=float, default=None)
    p.add_argument("--tension", type=float, default=None)
    p.add_argument("--no-optimize-tension", action="store_true")
    p.add_argument("--out", required=True)

    p = add("score-align", cmd_score_align, "attach per-pair alignment scores")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--model", required=True)
    p.add_argument("--reverse-model", default=None)
    p.add_argument("--score-name", default="align")
    p.add_argument("--out", required=True)

    p = add("select-ml", cmd_select_ml, "select in-domain pairs by cross-entropy difference")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--lm-in-src", required=True)
    p.add_argument("--lm-out-src", required=True)
    p.add_argument("--lm-in-tgt", required=True)
    p.add_argument("--lm-out-tgt", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("select-topk", cmd_select_topk, "select the k best pairs by a score")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--score-name", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--criterion", default=None, choices=("lowest", "highest"))
    p.add_argument("--out", required=True)

    p = add("ingest-scores", cmd_ingest_scores, "attach external per-pair scores")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--scores", required=True, help="JSONL with id and score keys")
    p.add_argument("--score-name", required=True)
    p.add_argument("--out", required=True)

    p = add("noise", cmd_noise, "apply drop/blank/swap noise")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--side", default="auto", choices=("auto", "src", "tgt", "both"))
    p.add_argument("--out", required=True)

    p = add("reverse-src", cmd_reverse_src, "reverse source token order")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--out", required=True)

    p = add("bpe-learn", cmd_bpe_learn, "learn byte-pair merges")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--side", default="src", choices=("src", "tgt"))
    p.add_argument("--merges", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("bpe-apply", cmd_bpe_apply, "apply (or undo) byte-pair splitting")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--model", required=True)
    p.add_argument("--side", default="both", choices=("src", "tgt", "both"))
    p.add_argument("--decode", action="store_true", help="join subword units back into words")
    p.add_argument("--out", required=True)

    p = add("kd-filter", cmd_kd_filter, "keep hypotheses scoring above the BLEU gate")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--refs", required=True)
    p.add_argument("--refs-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("bleu", cmd_bleu, "corpus BLEU of hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--hyp-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--ref", required=True)
    p.add_argument("--ref-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--out", default=None)

    p = add("decode", cmd_decode, "decode sources with an oracle ensemble")
    p.add_argument("--src", required=True)
    p.add_argument("--src-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--table-model", action="append", default=None)
    p.add_argument("--lexicon-model", action="append", default=None,
                   metavar="LM_PATH:TTABLE_PATH")
    p.add_argument("--strategy", default=None, choices=dec.COMBINE_STRATEGIES)
    p.add_argument("--weights", default=None, help="comma-separated member weights")
    p.add_argument("--mode", default=None, choices=("beam", "greedy", "sample_topk"))
    p.add_argument("--beam-size", dest="beam_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--n-best", dest="n_best", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("ensemble-select", cmd_ensemble_select, "greedy dev-BLEU ensemble selection")
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-src-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--dev-ref", required=True)
    p.add_argument("--dev-ref-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--table-model", action="append", default=None)
    p.add_argument("--lexicon-model", action="append", default=None,
                   metavar="LM_PATH:TTABLE_PATH")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--strategy", default=None, choices=dec.COMBINE_STRATEGIES)
    p.add_argument("--mode", default=None, choices=("beam", "greedy", "sample_topk"))
    p.add_argument("--beam-size", dest="beam_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--n-best", dest="n_best", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("cluster", cmd_cluster, "fit domain clusters over sentence embeddings")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--vectors", default=None, help="external vectors JSONL")
    p.add_argument("--out", required=True)

    p = add("domain-probs", cmd_domain_probs, "soft domain probabilities per pair")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--model", required=True)
    p.add_argument("--vectors", default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("rerank-train", cmd_rerank_train, "train MIRA reranking weights")
    p.add_argument("--nbest", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--src-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--refs", required=True)
    p.add_argument("--refs-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--lm", action="append", default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("rerank-apply", cmd_rerank_apply, "reorder n-best lists with trained weights")
    p.add_argument("--nbest", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--src-format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--weights", required=True)
    p.add_argument("--lm", action="append", default=None)
    p.add_argument("--best", default=None, help="also write the top hypothesis per line")
    p.add_argument("--out", required=True)

    p = add("bt-iterate", cmd_bt_iterate, "joint iterative back-translation (toy scale)")
    p.add_argument("--s2t-lm", required=True)
    p.add_argument("--s2t-ttable", required=True)
    p.add_argument("--t2s-lm", required=True)
    p.add_argument("--t2s-ttable", required=True)
    p.add_argument("--bitext", required=True)
    p.add_argument("--format", default="jsonl", choices=CORPUS_FORMATS)
    p.add_argument("--src-mono", required=True)
    p.add_argument("--tgt-mono", required=True)
    p.add_argument("--dev-src", required=True)
    p.add_argument("--dev-ref", required=True)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--mode", default=None, choices=("beam", "greedy", "sample_topk"))
    p.add_argument("--beam-size", dest="beam_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--n-best", dest="n_best", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--out-dir", required=True)

    p = add("postprocess", cmd_postprocess, "strip placeholders and detokenize")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", default="text", choices=CORPUS_FORMATS + ("text",))
    p.add_argument("--unk-token", default="<unk>")
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("MTFORGE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print(f"mtforge: error: {exc}", file=sys.stderr)
        return 1
    except MtforgeError as exc:
        print(f"mtforge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
