"""Sentence segmentation and token preprocessing."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache

ABBREVIATIONS = frozenset(
    {
        "e.g.", "i.e.", "al.", "fig.", "figs.", "vs.", "cf.", "etc.", "approx.",
        "dr.", "mr.", "mrs.", "ms.", "prof.", "no.", "nos.", "vol.", "ref.",
        "refs.", "eq.", "eqs.", "sp.", "spp.", "ca.", "resp.", "st.", "inc.",
        "ltd.", "co.", "jr.", "sr.", "tab.", "suppl.",
    }
)
EXTRA_PUNCT = frozenset("`~^|<>=+$")

# terminal punctuation, optional closing quotes/brackets, then whitespace
_BOUNDARY = re.compile(r"[.!?]+[\"'’”)\]]*(?=\s)")
_DOTTED = re.compile(r"^(?:[^\W\d_]\.){2,}$")


@dataclass(frozen=True)
class AbstractOrigin:
    document_ref: str
    index: int


@dataclass(frozen=True)
class SnippetOrigin:
    rank: int


@dataclass(frozen=True)
class Sentence:
    text: str
    origin: AbstractOrigin | SnippetOrigin
    global_index: int


def _is_abbreviation(text: str, end: int) -> bool:
    start = text.rfind(" ", 0, end) + 1
    word = text[start:end].lstrip("([\"'")
    if not word.endswith("."):
        return False
    if word.lower() in ABBREVIATIONS:
        return True
    # initials such as "J." and dotted forms such as "U.S."
    if len(word) == 2 and word[0].isupper():
        return True
    return bool(_DOTTED.match(word))


def split_sentences(text: str) -> list[str]:
    """Split ``text`` into sentences.

    A boundary is placed after ``.``, ``!`` or ``?`` (plus any closing
    quotes or brackets) when whitespace follows and the next visible
    character is an uppercase letter or a digit. Periods that close a
    known abbreviation, a single capital initial or a dotted acronym do
    not end a sentence.
    """
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.end()
        nxt = end
        while nxt < len(text) and text[nxt].isspace():
            nxt += 1
        if nxt >= len(text):
            break
        c = text[nxt]
        if not (c.isupper() or c.isdigit()):
            continue
        if m.group().startswith(".") and len(m.group().rstrip("\"'’”)]")) == 1:
            if _is_abbreviation(text, m.start() + 1):
                continue
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)
        start = nxt
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


@lru_cache(maxsize=4096)
def is_punctuation(c: str) -> bool:
    return c in EXTRA_PUNCT or unicodedata.category(c).startswith("P")


def preprocess(text: str) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace.

    Punctuation is removed in place, so ``"anti-inflammatory"`` becomes
    ``"antiinflammatory"``.
    """
    stripped = "".join(c for c in text.lower() if not is_punctuation(c))
    return stripped.split()
