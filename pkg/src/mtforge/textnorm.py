"""Punctuation normalization and output postprocessing.

Normalization maps a fixed set of typographic characters to their ASCII
equivalents: curly double and single quotes, en/em dashes, the ellipsis,
the non-breaking space, and the fullwidth forms of digits, Latin letters
and common punctuation. The mapping is character-by-character, idempotent
(every output character maps to itself), and never changes token count.

Postprocessing turns a token sequence back into plain English text:
placeholder tokens are removed, punctuation attaches to the left, opening
brackets and quotes attach to the right, and hyphen/apostrophe pieces are
joined into single words.
"""

from __future__ import annotations

from typing import Iterable, Sequence

UNK_TOKEN = "<unk>"

_PAIRS: dict[str, str] = {
    "“": '"',   # left double quote
    "”": '"',   # right double quote
    "„": '"',   # low double quote
    "‘": "'",   # left single quote
    "’": "'",   # right single quote
    "‚": "'",   # low single quote
    "–": "-",   # en dash
    "—": "-",   # em dash
    "…": "...", # ellipsis
    " ": " ",   # non-breaking space
}
# fullwidth digits, Latin letters, and punctuation used in CJK text
for _offset, _base, _count in ((0xFF10, ord("0"), 10),
                               (0xFF21, ord("A"), 26),
                               (0xFF41, ord("a"), 26)):
    for _i in range(_count):
        _PAIRS[chr(_offset + _i)] = chr(_base + _i)
for _full, _ascii in zip("，．！？：；（）", ",.!?:;()"):
    _PAIRS[_full] = _ascii

_TABLE = str.maketrans(_PAIRS)


def normalize_text(text: str) -> str:
    return text.translate(_TABLE)


def normalize_punct(sentence: Sequence[str]) -> tuple[str, ...]:
    """Normalize each token; token count is preserved."""
    return tuple(tok.translate(_TABLE) for tok in sentence)


_ATTACH_LEFT = {".", ",", "!", "?", ":", ";", "%", ")", "]", "}", "''", "...", "n't"}
_ATTACH_RIGHT = {"(", "[", "{", "$", "``"}


def detokenize(tokens: Iterable[str]) -> str:
    """Join tokens into text using simple English attachment rules."""
    out: list[str] = []
    glue_next = False
    quote_open = False
    for tok in tokens:
        attach_left = tok in _ATTACH_LEFT or tok.startswith("'")
        attach_right = tok in _ATTACH_RIGHT
        if tok == '"':
            attach_left, attach_right = quote_open, not quote_open
            quote_open = not quote_open
        elif tok == "-":
            attach_left = attach_right = True
        if out and not attach_left and not glue_next:
            out.append(" ")
        out.append(tok)
        glue_next = attach_right
    return "".join(out)


def postprocess(tokens: Sequence[str], unk_token: str = UNK_TOKEN) -> str:
    """Remove placeholder tokens, then detokenize."""
    return detokenize(t for t in tokens if t != unk_token)
