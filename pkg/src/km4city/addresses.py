"""Italian street-address parsing and canonicalization.

Covers the error families observed in municipal street catalogs: toponym
qualifier (dug) shorthand, red shop numbering, SNC/zero placeholders for
missing civics, Roman numerals in road names, swapped name/surname order and
assorted punctuation noise.  Everything here is pure; the qualifier table is
immutable after load, so parallel use is unrestricted.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional


class AddressError(ValueError):
    pass


# canonical dug tokens recognized as the qualifier position of a street name
DUG_TOKENS = frozenset({
    "VIA", "VIALE", "PIAZZA", "PIAZZALE", "CORSO", "BORGO", "LARGO",
    "VICOLO", "LUNGARNO", "STRADA", "LOCALITA", "PONTE", "GALLERIA",
})

# punctuation observed only as noise inside street fields; replaced by spaces
_NOISE_CHARS = "-/°?,()'"
_NOISE_RE = re.compile("[" + re.escape(_NOISE_CHARS) + "]")
# corner annotations ("Ang." = angolo) cut the text and raise a flag
_CORNER_RE = re.compile(r"\bANG\.?(\s.*)?$")


def fold_text(s: str) -> str:
    """Uppercase with accents folded to plain letters."""
    decomposed = unicodedata.normalize("NFKD", s)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch)).upper()


class CivicColor(Enum):
    BLACK = "black"
    RED = "red"
    NONE = "none"


@dataclass(frozen=True)
class CivicNumber:
    """One civic number; value is absent when the source said SNC/0/nothing.

    confident=False marks fragments the parser could not read as a number;
    those carry the raw residue in suffix and are the only unconfident case
    where value may also be absent.
    """
    value: Optional[int] = None
    suffix: Optional[str] = None
    color: CivicColor = CivicColor.NONE
    confident: bool = True


@dataclass(frozen=True)
class RawAddress:
    street_text: str
    civic_text: str = ""
    municipality: str = ""
    cap: Optional[str] = None

    def __post_init__(self):
        if not self.street_text.strip():
            raise AddressError("street text must be non-empty")


@dataclass(frozen=True)
class NormalizedAddress:
    qualifier: str
    name_tokens: tuple
    civics: tuple
    municipality: str
    last_word_key: str
    corner: bool = False

    @property
    def name_text(self) -> str:
        return " ".join(self.name_tokens)

    @property
    def street_text(self) -> str:
        return (self.qualifier + " " + self.name_text).strip()


@dataclass(frozen=True)
class QualifierTable:
    entries: dict

    def __post_init__(self):
        for variant, canonical in self.entries.items():
            if self.entries.get(canonical, canonical) != canonical:
                raise AddressError(
                    f"canonical form {canonical!r} is not a fixed point of the table")

    @classmethod
    def seed(cls) -> "QualifierTable":
        """Built-in variants; extend via a variant<TAB>canonical file."""
        return cls({
            "P.ZZA": "PIAZZA",
            "P.ZA": "PIAZZA",
            "P.LE": "PIAZZALE",
            "V.LE": "VIALE",
            "C.SO": "CORSO",
            "B.GO": "BORGO",
            "S.": "SANTA",
            "S": "SANTA",
            "S.TA": "SANTA",
            "S.TO": "SANTO",
        })

    @classmethod
    def load(cls, path, include_seed: bool = True) -> "QualifierTable":
        entries = dict(cls.seed().entries) if include_seed else {}
        for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise AddressError(f"{path}:{ln}: expected variant<TAB>canonical")
            variant, canonical = (fold_text(p.strip()) for p in parts)
            entries[variant] = canonical
        return cls(entries)


_EMPTY_TABLE = QualifierTable({})
_SEED_TABLE = QualifierTable.seed()


def expand_qualifiers(s: str, table: Optional[QualifierTable] = None) -> str:
    """Replace shorthand dug tokens by their canonical form, uppercased.

    Idempotent: canonical forms are fixed points of the table, and folding
    to uppercase is stable.
    """
    entries = (_SEED_TABLE if table is None else table).entries
    tokens = fold_text(s).split()
    return " ".join(entries.get(t, t) for t in tokens)


_CIVIC_SEGMENT_RE = re.compile(r"^(\d+)\s*/?\s*(.*)$")
_ABSENT_VALUES = frozenset({"", "0", "SNC"})


def _parse_segment(seg: str) -> CivicNumber:
    seg = seg.strip()
    if seg in _ABSENT_VALUES:
        return CivicNumber()
    m = _CIVIC_SEGMENT_RE.match(seg)
    if not m:
        # unreadable fragment: keep it, flagged, so nothing is ever lost
        return CivicNumber(suffix=seg, confident=False)
    value = int(m.group(1))
    rest = m.group(2).strip()
    if value == 0:
        # zero is a missing-number placeholder whatever trails it
        return CivicNumber()
    if rest.rstrip(".").upper() == "R":
        return CivicNumber(value=value, color=CivicColor.RED)
    if rest:
        return CivicNumber(value=value, suffix=rest, color=CivicColor.BLACK)
    return CivicNumber(value=value, color=CivicColor.BLACK)


def parse_civic(s: str) -> list:
    """Civic numbers found in a free-text field; never raises, never empty.

    Ranges separated by "-" yield one entry per endpoint; SNC, 0 and blank
    fields yield a single absent-valued entry.
    """
    text = fold_text(s or "").strip()
    if text in _ABSENT_VALUES:
        return [CivicNumber()]
    segments = [p for p in text.split("-")]
    out = [_parse_segment(p) for p in segments if p.strip() != ""]
    return out or [CivicNumber()]


def normalize(raw: RawAddress, table: Optional[QualifierTable] = None) -> NormalizedAddress:
    """Full pipeline: fold, strip noise, expand dug shorthand, split tokens.

    Roman-numeral tokens pass through verbatim; a trailing "Ang." corner
    annotation (and anything after it) is cut and recorded in the corner
    flag rather than parsed as a second street.
    """
    text = fold_text(raw.street_text)
    corner = False
    m = _CORNER_RE.search(text)
    if m:
        corner = True
        text = text[:m.start()]
    text = _NOISE_RE.sub(" ", text)
    expanded = expand_qualifiers(text, table)
    tokens = [t.replace(".", "") for t in expanded.split()]
    tokens = [t for t in tokens if t]
    qualifier = ""
    if tokens and tokens[0] in DUG_TOKENS:
        qualifier = tokens[0]
        tokens = tokens[1:]
    return NormalizedAddress(
        qualifier=qualifier,
        name_tokens=tuple(tokens),
        civics=tuple(parse_civic(raw.civic_text)),
        municipality=" ".join(fold_text(raw.municipality).split()),
        last_word_key=tokens[-1] if tokens else "",
        corner=corner,
    )


def name_orderings(addr: NormalizedAddress) -> list:
    """Original token order plus the final-pair swap (name/surname exchange)."""
    tokens = addr.name_tokens
    orderings = [tokens]
    if len(tokens) >= 2:
        swapped = tokens[:-2] + (tokens[-1], tokens[-2])
        if swapped != tokens:
            orderings.append(swapped)
    return orderings
