"""The single tokenizer used by every text metric and the toy policy.

Rules (version ``TOKENIZER_VERSION``): NFKC-normalize, lowercase, split on
Unicode whitespace, strip punctuation (Unicode category ``P*``) from both
ends of each piece, drop pieces that end up empty. Inner punctuation is
kept so ``10-12%`` survives as ``10-12``.
"""

from __future__ import annotations

import unicodedata

TOKENIZER_VERSION = "1"


def _strip_punct(piece: str) -> str:
    start, end = 0, len(piece)
    while start < end and unicodedata.category(piece[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(piece[end - 1]).startswith("P"):
        end -= 1
    return piece[start:end]


def tokenize(text: str) -> list[str]:
    text = unicodedata.normalize("NFKC", text).lower()
    out = []
    for piece in text.split():
        piece = _strip_punct(piece)
        if piece:
            out.append(piece)
    return out


def normalize_ws(text: str) -> str:
    return " ".join(text.split())
