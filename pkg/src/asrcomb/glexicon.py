"""Graphemic lexicon generation.

Words are decomposed into their letters a-z.  Two attributes can be
attached to a letter: ``DA`` marks an apostrophe next to it and ``DB``
marks an abbreviation period following it, so that ``B.B.C.'s`` becomes
``b;DB b;DB c;DADB s``.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError

APOSTROPHE = "DA"
ABBREVIATION = "DB"
ATTRIBUTE_ORDER = (APOSTROPHE, ABBREVIATION)
BOUNDARY = "#"

_LETTERS = frozenset(string.ascii_letters)


class LexiconError(DataError):
    """A word cannot be turned into graphemes."""

    def __init__(self, word, message, position=None):
        self.word = word
        self.position = position
        super().__init__(message)


@dataclass(frozen=True, order=True)
class AttributedGrapheme:
    base: str
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.base) != 1 or self.base not in string.ascii_lowercase:
            raise ValueError(f"grapheme base must be one of a-z, got {self.base!r}")
        unknown = set(self.attributes) - set(ATTRIBUTE_ORDER)
        if unknown:
            raise ValueError(f"unknown attributes {sorted(unknown)}")
        canonical = tuple(a for a in ATTRIBUTE_ORDER if a in self.attributes)
        if canonical != self.attributes:
            raise ValueError(
                f"attributes must be distinct and ordered DA before DB, got {self.attributes}"
            )

    @property
    def symbol(self) -> str:
        if not self.attributes:
            return self.base
        return self.base + ";" + "".join(self.attributes)

    def plain(self) -> AttributedGrapheme:
        return AttributedGrapheme(self.base)

    @classmethod
    def parse(cls, symbol: str) -> AttributedGrapheme:
        base, sep, attrs = symbol.partition(";")
        if not sep:
            return cls(base)
        found = []
        rest = attrs
        for name in ATTRIBUTE_ORDER:
            if rest.startswith(name):
                found.append(name)
                rest = rest[len(name):]
        if rest or not found:
            raise ValueError(f"malformed grapheme symbol {symbol!r}")
        return cls(base, tuple(found))

    def __str__(self):
        return self.symbol


@dataclass(frozen=True)
class LexiconEntry:
    word: str
    units: tuple[AttributedGrapheme, ...]

    def __post_init__(self):
        if not self.units:
            raise ValueError(f"lexicon entry for {self.word!r} has no units")

    def pronunciation(self) -> str:
        return " ".join(u.symbol for u in self.units)

    def render(self) -> str:
        return f"{self.word}\t{self.pronunciation()}"


@dataclass(frozen=True)
class Rejection:
    word: str
    reason: str


@dataclass(frozen=True)
class UnitInventory:
    context: str
    units: frozenset = field(default_factory=frozenset)
    boundary: str = BOUNDARY

    def __len__(self):
        return len(self.units)

    def symbols(self) -> list[str]:
        """Sorted, rendered unit symbols; left-bi pairs render as ``left+unit``."""
        if self.context == "mono":
            return sorted(u.symbol for u in self.units)
        return sorted(f"{left}+{u.symbol}" for left, u in self.units)


def word_to_graphemes(word: str, mark_attributes: bool = True) -> list[AttributedGrapheme]:
    """Decompose an orthographic token into attributed graphemes.

    Letters are lowercased.  A period directly after a letter adds ``DB``
    to that letter.  An apostrophe adds ``DA`` to the closest preceding
    letter, or to the following letter when the word starts with one.
    Hyphens are dropped.  Any other character is rejected.
    """
    if not any(ch in _LETTERS for ch in word):
        raise LexiconError(word, f"token {word!r} contains no letters")
    bases: list[str] = []
    attrs: list[set] = []
    pending_da = False
    for pos, ch in enumerate(word):
        if ch in _LETTERS:
            bases.append(ch.lower())
            attrs.append({APOSTROPHE} if pending_da else set())
            pending_da = False
        elif ch == ".":
            if pos > 0 and word[pos - 1] in _LETTERS:
                attrs[-1].add(ABBREVIATION)
        elif ch == "'":
            if bases:
                attrs[-1].add(APOSTROPHE)
            else:
                pending_da = True
        elif ch == "-":
            continue
        else:
            raise LexiconError(
                word, f"disallowed character {ch!r} at position {pos} in {word!r}", pos
            )
    if not mark_attributes:
        return [AttributedGrapheme(b) for b in bases]
    return [
        AttributedGrapheme(b, tuple(a for a in ATTRIBUTE_ORDER if a in s))
        for b, s in zip(bases, attrs)
    ]


def build_lexicon(
    words: Iterable[str], mark_attributes: bool = True
) -> tuple[list[LexiconEntry], list[Rejection]]:
    """Build one entry per distinct word, sorted by codepoint order.

    Words that cannot be decomposed are returned in the second list
    together with the reason, in the same sorted order.
    """
    entries = []
    rejected = []
    for word in sorted(set(words)):
        try:
            units = word_to_graphemes(word, mark_attributes)
        except LexiconError as exc:
            rejected.append(Rejection(word, str(exc)))
            continue
        entries.append(LexiconEntry(word, tuple(units)))
    return entries, rejected


def context_units(lexicon: Sequence[LexiconEntry], context: str = "mono") -> UnitInventory:
    if not lexicon:
        raise ValueError("lexicon is empty")
    if context == "mono":
        units = frozenset(u for entry in lexicon for u in entry.units)
    elif context == "left-bi":
        pairs = set()
        for entry in lexicon:
            left = BOUNDARY
            for u in entry.units:
                pairs.add((left, u))
                left = u.symbol
        units = frozenset(pairs)
    else:
        raise ValueError(f"unknown context mode {context!r}; expected 'mono' or 'left-bi'")
    return UnitInventory(context, units)


def read_word_list(text: str) -> list[str]:
    return [line.strip() for line in text.splitlines() if line.strip()]


def render_lexicon(entries: Iterable[LexiconEntry]) -> str:
    return "".join(entry.render() + "\n" for entry in entries)


def parse_lexicon(text: str, path=None) -> list[LexiconEntry]:
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        word, sep, pron = line.partition("\t")
        if not sep or not word or not pron.strip():
            raise DataError("expected 'word<TAB>unit unit ...'", path, lineno)
        try:
            units = tuple(AttributedGrapheme.parse(s) for s in pron.split(" "))
        except ValueError as exc:
            raise DataError(str(exc), path, lineno) from None
        entries.append(LexiconEntry(word, units))
    return entries


def render_inventory(inventory: UnitInventory) -> str:
    return "".join(s + "\n" for s in inventory.symbols())
