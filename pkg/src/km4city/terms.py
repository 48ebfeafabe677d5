"""Core RDF-style terms: IRIs, typed literals, quads and the line-based exchange format.

Every statement in the knowledge base is a quad (subject, predicate, object,
context); the context names the dataset graph the statement came from, which
is what makes per-dataset provenance and rollback possible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Union

BASE = "http://km4city.local"
SCHEMA_NS = BASE + "/schema/"
DATA_NS = BASE + "/ds/"
CONTEXT_NS = BASE + "/context/"
INSTANT_NS = BASE + "/instant/"

RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"
OWL_SAME_AS = "http://www.w3.org/2002/07/owl#sameAs"

_XSD = "http://www.w3.org/2001/XMLSchema#"

# characters that would break the angle-bracketed serialization
_IRI_FORBIDDEN = re.compile(r'[\s<>"]')


class TermError(ValueError):
    """Malformed IRI, literal or serialized statement."""


class Datatype(Enum):
    STRING = "string"
    INTEGER = "integer"
    DECIMAL = "decimal"
    DATETIME = "dateTime"
    BOOLEAN = "boolean"

    @property
    def xsd_iri(self) -> str:
        return _XSD + self.value

    @classmethod
    def from_xsd_iri(cls, iri: str) -> "Datatype":
        for dt in cls:
            if dt.xsd_iri == iri:
                return dt
        raise TermError(f"unknown datatype IRI: {iri}")


@dataclass(frozen=True, order=True)
class Iri:
    value: str

    def __post_init__(self):
        if not self.value:
            raise TermError("IRI must be non-empty")
        if _IRI_FORBIDDEN.search(self.value):
            raise TermError(f"IRI contains whitespace or reserved character: {self.value!r}")

    def __str__(self) -> str:
        return self.value

    @property
    def local_name(self) -> str:
        return self.value.rsplit("/", 1)[-1].rsplit("#", 1)[-1]


def _check_lexical(lexical: str, datatype: Datatype) -> None:
    try:
        if datatype is Datatype.INTEGER:
            int(lexical)
        elif datatype is Datatype.DECIMAL:
            v = float(lexical)
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError
        elif datatype is Datatype.DATETIME:
            datetime.fromisoformat(lexical)
        elif datatype is Datatype.BOOLEAN:
            if lexical not in ("true", "false"):
                raise ValueError
    except ValueError:
        raise TermError(f"lexical {lexical!r} does not parse as {datatype.value}") from None


@dataclass(frozen=True, order=True)
class Literal:
    lexical: str
    datatype: Datatype = Datatype.STRING

    def __post_init__(self):
        _check_lexical(self.lexical, self.datatype)

    @classmethod
    def string(cls, value: str) -> "Literal":
        return cls(value, Datatype.STRING)

    @classmethod
    def integer(cls, value: int) -> "Literal":
        return cls(str(int(value)), Datatype.INTEGER)

    @classmethod
    def decimal(cls, value: float) -> "Literal":
        return cls(repr(float(value)), Datatype.DECIMAL)

    @classmethod
    def date_time(cls, value: datetime) -> "Literal":
        return cls(value.isoformat(), Datatype.DATETIME)

    @classmethod
    def boolean(cls, value: bool) -> "Literal":
        return cls("true" if value else "false", Datatype.BOOLEAN)

    def to_python(self) -> Union[str, int, float, datetime, bool]:
        if self.datatype is Datatype.INTEGER:
            return int(self.lexical)
        if self.datatype is Datatype.DECIMAL:
            return float(self.lexical)
        if self.datatype is Datatype.DATETIME:
            return datetime.fromisoformat(self.lexical)
        if self.datatype is Datatype.BOOLEAN:
            return self.lexical == "true"
        return self.lexical


Term = Union[Iri, Literal]


@dataclass(frozen=True)
class Quad:
    subject: Iri
    predicate: Iri
    object: Term
    context: Iri

    def __post_init__(self):
        if not isinstance(self.subject, Iri):
            raise TermError(f"quad subject must be an IRI, got {self.subject!r}")
        if not isinstance(self.predicate, Iri):
            raise TermError(f"quad predicate must be an IRI, got {self.predicate!r}")
        if not isinstance(self.object, (Iri, Literal)):
            raise TermError(f"quad object must be an IRI or literal, got {self.object!r}")
        if not isinstance(self.context, Iri):
            raise TermError(f"quad context must be an IRI, got {self.context!r}")

    def sort_key(self):
        return (self.subject.value, self.predicate.value,
                term_text(self.object), self.context.value)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    long: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise TermError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.long <= 180.0:
            raise TermError(f"longitude out of range: {self.long}")


# --- exchange format: one statement per line, `<s> <p> <o> <c> .` ---

_ESCAPES = [("\\", "\\\\"), ('"', '\\"'), ("\n", "\\n"), ("\r", "\\r"), ("\t", "\\t")]


def _escape(s: str) -> str:
    for raw, esc in _ESCAPES:
        s = s.replace(raw, esc)
    return s


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\" and i + 1 < len(s):
            nxt = s[i + 1]
            out.append({"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}.get(nxt, nxt))
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def term_text(term: Term) -> str:
    if isinstance(term, Iri):
        return f"<{term.value}>"
    return f'"{_escape(term.lexical)}"^^<{term.datatype.xsd_iri}>'


def quad_to_line(quad: Quad) -> str:
    return (f"<{quad.subject.value}> <{quad.predicate.value}> "
            f"{term_text(quad.object)} <{quad.context.value}> .")


_LINE_RE = re.compile(
    r'^<([^<>\s]+)> <([^<>\s]+)> '
    r'(?:<([^<>\s]+)>|"((?:[^"\\]|\\.)*)"\^\^<([^<>\s]+)>) '
    r'<([^<>\s]+)> \.$'
)


def quad_from_line(line: str) -> Quad:
    m = _LINE_RE.match(line.strip())
    if not m:
        raise TermError(f"unparseable statement line: {line!r}")
    s, p, o_iri, o_lex, o_dt, c = m.groups()
    obj: Term
    if o_iri is not None:
        obj = Iri(o_iri)
    else:
        obj = Literal(_unescape(o_lex), Datatype.from_xsd_iri(o_dt))
    return Quad(Iri(s), Iri(p), obj, Iri(c))


def quads_to_text(quads) -> str:
    """Serialize quads to the exchange format: UTF-8 text, LF line endings."""
    return "".join(quad_to_line(q) + "\n" for q in quads)


def quads_from_text(text: str) -> list:
    quads = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        quads.append(quad_from_line(line))
    return quads


def schema_iri(name: str) -> Iri:
    return Iri(SCHEMA_NS + name)


def context_iri(name: str) -> Iri:
    return Iri(CONTEXT_NS + name)
