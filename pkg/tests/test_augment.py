import numpy as np
import pytest

from mtforge.align import train_align
from mtforge.augment import (
    BLANK_TOKEN, NoiseConfig, add_noise, iterate_joint_bt, kd_filter,
    noise_corpus, reverse_source,
)
from mtforge.bleu import sentence_bleu
from mtforge.corpus import Corpus, SentencePair, Side
from mtforge.decoding import DecodeConfig, LexiconLM
from mtforge.errors import MtforgeError
from mtforge.lm import train_ngram
from mtforge.rng import substream


def _mono_corpus(n, length, side=Side.SRC_MONO):
    pairs = [
        SentencePair(i, tuple(f"t{j:02d}" for j in range(length)), ())
        for i in range(n)
    ]
    return Corpus(pairs, side=side)


def _inversions(tokens):
    return sum(
        1
        for i in range(len(tokens))
        for j in range(i + 1, len(tokens))
        if tokens[i] > tokens[j]
    )


# noising ---------------------------------------------------------------

def test_zero_rates_are_identity():
    corpus = _mono_corpus(20, 12)
    out = noise_corpus(corpus, NoiseConfig(p_drop=0, p_blank=0, p_swap=0))
    assert [p.src for p in out] == [p.src for p in corpus]


def test_drop_one_empties_sentences():
    rng = substream(0, 0)
    assert add_noise(("a", "b", "c"), NoiseConfig(p_drop=1.0), rng) == ()


def test_blank_one_fills_everything():
    rng = substream(0, 0)
    out = add_noise(("a", "b", "c"),
                    NoiseConfig(p_drop=0, p_blank=1.0, p_swap=0), rng)
    assert out == (BLANK_TOKEN,) * 3


def test_swap_one_is_full_left_to_right_pass():
    rng = substream(0, 0)
    out = add_noise(("a", "b", "c", "d"),
                    NoiseConfig(p_drop=0, p_blank=0, p_swap=1.0), rng)
    assert out == ("b", "c", "d", "a")


def test_custom_filler():
    rng = substream(0, 0)
    out = add_noise(("a",), NoiseConfig(p_drop=0, p_blank=1.0, p_swap=0,
                                        filler="<MASK>"), rng)
    assert out == ("<MASK>",)


def test_noise_reproducible_and_worker_independent():
    corpus = _mono_corpus(30, 15)
    cfg = NoiseConfig(seed=5)
    a = noise_corpus(corpus, cfg, workers=1)
    b = noise_corpus(corpus, cfg, workers=1)
    c = noise_corpus(corpus, cfg, workers=4)
    assert [p.src for p in a] == [p.src for p in b] == [p.src for p in c]
    other = noise_corpus(corpus, NoiseConfig(seed=6))
    assert [p.src for p in a] != [p.src for p in other]


def test_noise_streams_keyed_by_pair_id_not_batch():
    corpus = _mono_corpus(10, 15)
    cfg = NoiseConfig(seed=3)
    full = noise_corpus(corpus, cfg)
    subset = noise_corpus(Corpus(corpus.pairs[3:7], side=corpus.side), cfg)
    for got, want in zip(subset, full.pairs[3:7]):
        assert got.src == want.src


def test_bilingual_default_noises_source_only():
    pairs = [SentencePair(i, ("a", "b", "c"), ("x", "y", "z"))
             for i in range(40)]
    out = noise_corpus(Corpus(pairs), NoiseConfig(p_drop=0.5, seed=1))
    assert any(p.src != ("a", "b", "c") for p in out)
    assert all(p.tgt == ("x", "y", "z") for p in out)


def test_tgt_mono_default_noises_target():
    pairs = [SentencePair(i, (), ("x", "y", "z")) for i in range(40)]
    corpus = Corpus(pairs, side=Side.TGT_MONO)
    out = noise_corpus(corpus, NoiseConfig(p_drop=0.5, seed=1))
    assert any(p.tgt != ("x", "y", "z") for p in out)


def test_both_sides_opt_in():
    pairs = [SentencePair(i, ("a", "b", "c"), ("x", "y", "z"))
             for i in range(40)]
    out = noise_corpus(Corpus(pairs), NoiseConfig(p_drop=0.5, seed=1),
                       sides=("src", "tgt"))
    assert any(p.tgt != ("x", "y", "z") for p in out)


def test_unknown_side_rejected(toy_corpus):
    with pytest.raises(MtforgeError, match="unknown side"):
        noise_corpus(toy_corpus, NoiseConfig(), sides=("source",))


def test_noise_config_validation():
    with pytest.raises(MtforgeError, match="p_drop"):
        NoiseConfig(p_drop=1.5)
    with pytest.raises(MtforgeError, match="p_swap"):
        NoiseConfig(p_swap=-0.1)
    with pytest.raises(MtforgeError, match="filler"):
        NoiseConfig(filler="")


def test_empirical_rates_match_configured():
    # each mechanism measured alone; 2000 sentences x 20 tokens
    n, length, rate = 2000, 20, 0.05
    corpus = _mono_corpus(n, length)

    dropped = noise_corpus(corpus, NoiseConfig(p_drop=rate, p_blank=0,
                                               p_swap=0, seed=11))
    drop_rate = 1.0 - sum(len(p.src) for p in dropped) / (n * length)
    assert drop_rate == pytest.approx(rate, abs=0.01)

    blanked = noise_corpus(corpus, NoiseConfig(p_drop=0, p_blank=rate,
                                               p_swap=0, seed=12))
    blank_rate = sum(p.src.count(BLANK_TOKEN) for p in blanked) / (n * length)
    assert blank_rate == pytest.approx(rate, abs=0.01)

    # tokens start strictly increasing, so each fired swap in the single
    # left-to-right pass adds exactly one inversion
    swapped = noise_corpus(corpus, NoiseConfig(p_drop=0, p_blank=0,
                                               p_swap=rate, seed=13))
    swap_rate = sum(_inversions(p.src) for p in swapped) / (n * (length - 1))
    assert swap_rate == pytest.approx(rate, abs=0.01)


# source reversal -------------------------------------------------------

def test_reverse_source_is_involution(toy_corpus):
    once = reverse_source(toy_corpus)
    assert once[0].src == tuple(reversed(toy_corpus[0].src))
    assert once[0].tgt == toy_corpus[0].tgt
    twice = reverse_source(once)
    assert [p.src for p in twice] == [p.src for p in toy_corpus]


def test_reverse_source_keeps_metadata():
    pair = SentencePair(0, ("a", "b"), ("x",), tags={"k": "v"},
                        scores={"s": 1.0})
    out = reverse_source(Corpus([pair]))
    assert out[0].tags == {"k": "v"}
    assert out[0].scores == {"s": 1.0}


# KD filtering ----------------------------------------------------------

def test_kd_threshold_boundary_inclusive():
    hyp = ("a", "b", "c")
    ref = ("a", "b", "d")
    exact = sentence_bleu(hyp, ref)
    corpus = Corpus([SentencePair(0, ("src",), hyp)])
    kept, report = kd_filter(corpus, [ref], threshold=exact)
    assert len(kept) == 1
    assert kept[0].scores["kd_bleu"] == exact
    assert report.drops == {}
    above = float(np.nextafter(exact, np.inf))
    kept2, report2 = kd_filter(corpus, [ref], threshold=above)
    assert len(kept2) == 0
    assert report2.drops == {"low-bleu": 1}


def test_kd_threshold_zero_keeps_everything_with_refs():
    corpus = Corpus([
        SentencePair(0, ("s",), ("total", "mismatch")),
        SentencePair(1, ("s",), ("exact", "match")),
    ])
    refs = [("other", "words"), ("exact", "match")]
    kept, _ = kd_filter(corpus, refs, threshold=0.0)
    assert len(kept) == 2


def test_kd_keep_sets_monotone_in_threshold():
    rng = np.random.default_rng(7)
    vocab = list("abcdefg")
    pairs, refs = [], []
    for i in range(40):
        ref = tuple(str(w) for w in rng.choice(vocab, size=6))
        hyp = list(ref)
        for _ in range(int(rng.integers(0, 4))):
            hyp[int(rng.integers(0, 6))] = "zz"
        pairs.append(SentencePair(i, ("s",), tuple(hyp)))
        refs.append(ref)
    corpus = Corpus(pairs)
    previous = None
    for threshold in (90.0, 60.0, 30.0, 10.0, 0.0):
        kept, _ = kd_filter(corpus, refs, threshold=threshold)
        ids = {p.pair_id for p in kept}
        if previous is not None:
            assert previous <= ids
        previous = ids


def test_kd_drops_empty_references():
    corpus = Corpus([SentencePair(0, ("s",), ("a",)),
                     SentencePair(1, ("s",), ("a",))])
    kept, report = kd_filter(corpus, [(), ("a",)], threshold=0.0)
    assert [p.pair_id for p in kept] == [1]
    assert report.drops == {"empty-ref": 1}


def test_kd_reference_count_mismatch():
    corpus = Corpus([SentencePair(0, ("s",), ("a",))])
    with pytest.raises(MtforgeError, match="mismatch: 2 refs for 1"):
        kd_filter(corpus, [("a",), ("b",)])


# joint back-translation ------------------------------------------------

def _bt_setup():
    src_sents = [("aa", "bb"), ("bb", "aa")] * 3
    tgt_sents = [("xx", "yy"), ("yy", "xx")] * 3
    bitext = Corpus([
        SentencePair(i, s, t)
        for i, (s, t) in enumerate(zip(src_sents, tgt_sents))
    ])
    fwd_align = train_align(bitext, iterations=3, optimize_tension=False)
    rev_pairs = [SentencePair(i, p.tgt, p.src) for i, p in enumerate(bitext)]
    rev_align = train_align(rev_pairs, iterations=3, optimize_tension=False)
    forward = LexiconLM("fwd", train_ngram(tgt_sents, order=2, min_count=1),
                        fwd_align)
    reverse = LexiconLM("rev", train_ngram(src_sents, order=2, min_count=1),
                        rev_align)
    dev = Corpus([SentencePair(i, s, t) for i, (s, t)
                  in enumerate(zip(src_sents[:2], tgt_sents[:2]))])
    return forward, reverse, bitext, src_sents[:3], tgt_sents[:3], dev


CFG = DecodeConfig(mode="greedy", max_len=4)


def test_bt_single_round_shape():
    forward, reverse, bitext, src_mono, tgt_mono, dev = _bt_setup()
    result = iterate_joint_bt(forward, reverse, bitext, src_mono, tgt_mono,
                              dev, rounds=1, decode_config=CFG,
                              align_iterations=2)
    assert len(result.rounds) == 1
    assert result.dev_bleu_trace == [result.rounds[0].dev_bleu]
    rnd = result.rounds[0]
    assert rnd.index == 1
    assert [p.tgt for p in rnd.for_forward] == tgt_mono
    assert [p.src for p in rnd.for_reverse] == src_mono
    for p in list(rnd.for_forward) + list(rnd.for_reverse):
        assert p.tags["origin"] == "bt-round-1"
    assert 0.0 <= rnd.dev_bleu <= 100.0
    # lexicons were re-estimated
    assert result.forward.align is not forward.align
    assert result.reverse.align is not reverse.align


def test_bt_stops_when_gain_below_epsilon():
    forward, reverse, bitext, src_mono, tgt_mono, dev = _bt_setup()
    result = iterate_joint_bt(forward, reverse, bitext, src_mono, tgt_mono,
                              dev, rounds=5, decode_config=CFG,
                              align_iterations=2, epsilon=1e9)
    assert len(result.rounds) == 2  # earliest possible stop is after round 2
    assert (result.dev_bleu_trace[1] - result.dev_bleu_trace[0]) < 1e9


def test_bt_runs_all_rounds_with_tiny_epsilon():
    forward, reverse, bitext, src_mono, tgt_mono, dev = _bt_setup()
    result = iterate_joint_bt(forward, reverse, bitext, src_mono, tgt_mono,
                              dev, rounds=3, decode_config=CFG,
                              align_iterations=2, epsilon=-1e9)
    assert len(result.rounds) == 3
    assert len(result.dev_bleu_trace) == 3


def test_bt_argument_validation():
    forward, reverse, bitext, src_mono, tgt_mono, dev = _bt_setup()
    with pytest.raises(MtforgeError, match="rounds"):
        iterate_joint_bt(forward, reverse, bitext, src_mono, tgt_mono, dev,
                         rounds=0)
    with pytest.raises(MtforgeError, match="dev"):
        iterate_joint_bt(forward, reverse, bitext, src_mono, tgt_mono,
                         Corpus([]), rounds=1)
