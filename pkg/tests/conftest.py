import pytest

from mtforge.corpus import Corpus, SentencePair


def pairs_from(rows):
    """Build SentencePairs from (src_text, tgt_text) strings, ids 0..n-1."""
    return [
        SentencePair(i, tuple(s.split()), tuple(t.split()))
        for i, (s, t) in enumerate(rows)
    ]


@pytest.fixture
def toy_corpus():
    return Corpus(pairs_from([
        ("ich sehe den hund", "i see the dog"),
        ("der hund läuft", "the dog runs"),
        ("die katze schläft", "the cat sleeps"),
    ]))
