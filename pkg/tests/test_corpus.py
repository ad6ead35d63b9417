import pytest

from mtforge.corpus import (
    Corpus, Level, SentencePair, Side,
    from_texts, read_corpus, read_mono, write_corpus, write_mono,
)
from mtforge.errors import MtforgeError

from conftest import pairs_from


def test_ids_positional_in_file_order(tmp_path):
    (tmp_path / "c.src").write_text("a b\nc\nd e f\n")
    (tmp_path / "c.tgt").write_text("x\ny z\nw\n")
    corpus = read_corpus(tmp_path / "c", "two-file")
    assert [p.pair_id for p in corpus] == [0, 1, 2]
    assert corpus[0].src == ("a", "b")
    assert corpus[2].tgt == ("w",)


def test_two_file_line_count_mismatch(tmp_path):
    (tmp_path / "c.src").write_text("a\nb\nc\n")
    (tmp_path / "c.tgt").write_text("x\ny\nz\nw\n")
    with pytest.raises(MtforgeError, match="3.*4"):
        read_corpus(tmp_path / "c", "two-file")


def test_tsv_whitespace_split(tmp_path):
    (tmp_path / "c.tsv").write_text("你好\thello\n")
    corpus = read_corpus(tmp_path / "c.tsv", "tsv")
    assert corpus[0].src == ("你好",)
    assert corpus[0].tgt == ("hello",)


def test_tsv_missing_tab_names_line(tmp_path):
    (tmp_path / "c.tsv").write_text("ok\tfine\nno tab here\n")
    with pytest.raises(MtforgeError, match="2"):
        read_corpus(tmp_path / "c.tsv", "tsv")


def test_jsonl_malformed_line_names_line(tmp_path):
    (tmp_path / "c.jsonl").write_text('{"src": "a", "tgt": "b"}\n{broken\n')
    with pytest.raises(MtforgeError, match="2"):
        read_corpus(tmp_path / "c.jsonl", "jsonl")


def test_strictly_increasing_ids_enforced():
    with pytest.raises(MtforgeError, match="strictly increasing"):
        Corpus([SentencePair(1, ("a",), ("x",)), SentencePair(1, ("b",), ("y",))])


def test_gappy_ids_allowed_after_drops():
    corpus = Corpus([SentencePair(0, ("a",), ("x",)), SentencePair(7, ("b",), ("y",))])
    assert len(corpus) == 2


@pytest.mark.parametrize("fmt", ["two-file", "tsv", "jsonl"])
def test_round_trip_identity(tmp_path, fmt):
    corpus = Corpus(pairs_from([("a b c", "x y"), ("d", "w v u")]))
    path = tmp_path / "out"
    write_corpus(corpus, path, fmt)
    back = read_corpus(path, fmt)
    assert [(p.src, p.tgt) for p in back] == [(p.src, p.tgt) for p in corpus]
    assert [p.pair_id for p in back] == [0, 1]


def test_jsonl_round_trip_preserves_tags_and_scores(tmp_path):
    pair = SentencePair(0, ("a",), ("x",), tags={"origin": "web"}, scores={"ce": 1.5})
    path = tmp_path / "c.jsonl"
    write_corpus(Corpus([pair]), path, "jsonl")
    back = read_corpus(path, "jsonl")
    assert back[0].tags == {"origin": "web"}
    assert back[0].scores == {"ce": 1.5}


def test_empty_corpus_round_trip(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus(Corpus([]), path, "jsonl")
    assert len(read_corpus(path, "jsonl")) == 0


def test_jsonl_rejects_token_with_whitespace(tmp_path):
    # a token containing a space would not survive the space-joined format
    bad = Corpus([SentencePair(0, ("a b",), ("x",))])
    with pytest.raises(MtforgeError, match="whitespace"):
        write_corpus(bad, tmp_path / "c.jsonl", "jsonl")


def test_mono_round_trip(tmp_path):
    path = tmp_path / "m.txt"
    (path).write_text("a b\nc\n")
    corpus = read_mono(path, Side.SRC_MONO)
    assert corpus.sentences() == [("a", "b"), ("c",)]
    out = tmp_path / "m2.txt"
    write_mono(corpus, out)
    assert out.read_text() == "a b\nc\n"


def test_tgt_mono_populates_target_side(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("a b\n")
    corpus = read_mono(path, Side.TGT_MONO)
    assert corpus[0].src == ()
    assert corpus[0].tgt == ("a", "b")
    assert corpus.sentences() == [("a", "b")]


def test_with_score_returns_new_pair():
    pair = SentencePair(0, ("a",), ("x",))
    scored = pair.with_score("ce", 2.0)
    assert scored.scores == {"ce": 2.0}
    assert pair.scores == {}


def test_from_texts_assigns_ids():
    corpus = from_texts(["a b", "c"], ["x", "y z"])
    assert [p.pair_id for p in corpus] == [0, 1]
    assert corpus.side is Side.BILINGUAL
    assert corpus.level is Level.WORD
