"""Character inventory shared by the corpus generator and the text encoder.

Every text surface in the system (utterance texts, style prompts) is drawn
from one small fixed alphabet so that tokenisation is a trivial, lossless
table lookup.  Index 0 is reserved for padding.
"""

from __future__ import annotations

CHARSET = " abcdefghijklmnopqrstuvwxyz"

PAD_ID = 0

_CHAR_TO_ID = {ch: i + 1 for i, ch in enumerate(CHARSET)}
_ID_TO_CHAR = {i + 1: ch for i, ch in enumerate(CHARSET)}

# number of embedding rows a text embedding table needs (charset + pad)
VOCAB_SIZE = len(CHARSET) + 1


class UnknownCharacterError(ValueError):
    """Raised when a text contains characters outside CHARSET."""

    def __init__(self, text: str, bad: list[str]):
        self.bad = bad
        shown = ", ".join(repr(c) for c in sorted(set(bad)))
        super().__init__(f"text contains characters outside the charset: {shown} (in {text!r})")


def encode_chars(text: str) -> list[int]:
    """Map a string to a list of integer ids (1-based; 0 is padding)."""
    bad = [c for c in text if c not in _CHAR_TO_ID]
    if bad:
        raise UnknownCharacterError(text, bad)
    return [_CHAR_TO_ID[c] for c in text]


def decode_ids(ids) -> str:
    """Inverse of encode_chars; padding ids are dropped."""
    return "".join(_ID_TO_CHAR[i] for i in ids if i != PAD_ID)
