"""Dataset registration, staged ingestion, quality rules and quad mapping.

A dataset moves through registration, file staging that preserves the raw
cells and versions re-ingested rows, a per-field cleanup pass that logs
every change it makes, and a mapping step that mints deterministic IRIs
and emits quads into the dataset's own context. Real-time feed payloads
bypass staging and are paired with a temporal instant entity on arrival.
"""

from __future__ import annotations

import csv
import io
import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional
from urllib.parse import quote
from xml.etree import ElementTree

from .addresses import AddressError, RawAddress, fold_text, normalize
from .quadstore import QuadStore
from .schema import (AUTOMATION_LEVELS, DATASET_STATUSES, PROCESS_TYPES,
                     MacroClass, PropertyKind, Schema, load_schema)
from .terms import (DATA_NS, INSTANT_NS, RDF_TYPE, Datatype, GeoPoint, Iri,
                    Literal, Quad, TermError, context_iri, schema_iri)


class IngestionError(ValueError):
    """Bad descriptor, unparseable file or unmappable record."""


METADATA_CONTEXT = context_iri("metadata")
ORIGINAL_FORMATS = frozenset({"csv", "xml", "polyline", "feed"})

_STATUS_ORDER = {"registered": 0, "ingested": 1, "improved": 2,
                 "mapped": 3, "indexed": 4}


# --- durations: compact text like "12h", "5m", "1d12h" ---

_DURATION_UNITS = {"d": 86400, "h": 3600, "m": 60, "s": 1}
_DURATION_RE = re.compile(r"(\d+)([dhms])")


def parse_duration(text: str) -> timedelta:
    """Read a compact duration; units may repeat in d, h, m, s order."""
    s = text.strip()
    pos = 0
    total = 0
    for m in _DURATION_RE.finditer(s):
        if m.start() != pos:
            raise IngestionError(f"unparseable duration: {text!r}")
        total += int(m.group(1)) * _DURATION_UNITS[m.group(2)]
        pos = m.end()
    if pos != len(s) or not s:
        raise IngestionError(f"unparseable duration: {text!r}")
    return timedelta(seconds=total)


def format_duration(period: timedelta) -> str:
    seconds = int(period.total_seconds())
    if seconds < 0:
        raise IngestionError("duration must not be negative")
    parts = []
    for unit, size in _DURATION_UNITS.items():
        count, seconds = divmod(seconds, size)
        if count:
            parts.append(f"{count}{unit}")
    return "".join(parts) or "0s"


# --- dataset descriptors ---

@dataclass(frozen=True)
class DatasetDescriptor:
    """Provenance card of one source dataset."""
    id: str
    source: str
    original_format: str
    process_type: str
    automation_level: str
    macroclass: MacroClass
    description: str = ""
    license: str = ""
    access_type: str = ""
    update_period: Optional[timedelta] = None
    creation_date: Optional[datetime] = None
    last_update: Optional[datetime] = None
    triple_creation_date: Optional[datetime] = None
    status: str = "registered"

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.id or ""):
            raise IngestionError(f"dataset id must be a plain token: {self.id!r}")
        if self.original_format not in ORIGINAL_FORMATS:
            raise IngestionError(f"unknown original format: {self.original_format!r}")
        if self.process_type not in PROCESS_TYPES:
            raise IngestionError(f"unknown process type: {self.process_type!r}")
        if self.automation_level not in AUTOMATION_LEVELS:
            raise IngestionError(f"unknown automation level: {self.automation_level!r}")
        if self.status not in DATASET_STATUSES:
            raise IngestionError(f"unknown status: {self.status!r}")
        if not isinstance(self.macroclass, MacroClass):
            object.__setattr__(self, "macroclass", MacroClass(self.macroclass))
        if self.process_type == "realtime":
            if self.update_period is None or self.update_period > timedelta(days=1):
                raise IngestionError(
                    "realtime datasets need an update period of one day or less")


# descriptor file key -> dataclass attribute, in serialization order
_DESCRIPTOR_KEYS = (
    ("id", "id"),
    ("creationDate", "creation_date"),
    ("source", "source"),
    ("originalFormat", "original_format"),
    ("description", "description"),
    ("license", "license"),
    ("processType", "process_type"),
    ("automationLevel", "automation_level"),
    ("accessType", "access_type"),
    ("updatePeriod", "update_period"),
    ("lastUpdate", "last_update"),
    ("tripleCreationDate", "triple_creation_date"),
    ("status", "status"),
    ("macroclass", "macroclass"),
)
_DATE_ATTRS = ("creation_date", "last_update", "triple_creation_date")


def parse_descriptor_text(text: str) -> DatasetDescriptor:
    """Flat key=value lines; keys are the descriptor field names."""
    known = dict(_DESCRIPTOR_KEYS)
    kwargs: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise IngestionError(f"descriptor line {lineno} is not key=value: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise IngestionError(f"unknown descriptor key: {key!r}")
        if known[key] in kwargs:
            raise IngestionError(f"duplicate descriptor key: {key!r}")
        kwargs[known[key]] = value
    for attr in _DATE_ATTRS:
        if attr in kwargs:
            try:
                kwargs[attr] = datetime.fromisoformat(kwargs[attr])
            except ValueError:
                raise IngestionError(f"bad dateTime for {attr}: {kwargs[attr]!r}") from None
    if "update_period" in kwargs:
        kwargs["update_period"] = parse_duration(kwargs["update_period"])
    if "macroclass" in kwargs:
        try:
            kwargs["macroclass"] = MacroClass(kwargs["macroclass"])
        except ValueError:
            raise IngestionError(f"unknown macroclass: {kwargs['macroclass']!r}") from None
    try:
        return DatasetDescriptor(**kwargs)
    except TypeError as exc:
        raise IngestionError(f"incomplete descriptor: {exc}") from None


def descriptor_text(descriptor: DatasetDescriptor) -> str:
    lines = []
    for key, attr in _DESCRIPTOR_KEYS:
        value = getattr(descriptor, attr)
        if value in (None, ""):
            continue
        if attr in _DATE_ATTRS:
            value = value.isoformat()
        elif attr == "update_period":
            value = format_duration(value)
        elif attr == "macroclass":
            value = value.value
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


# --- column-to-schema mappings ---

@dataclass(frozen=True)
class ClassBinding:
    role: str
    class_name: str
    key_columns: tuple

    def __post_init__(self):
        if not self.role or not self.class_name:
            raise IngestionError("class binding needs a role and a class name")
        if not self.key_columns:
            raise IngestionError(f"role {self.role!r} declares no key columns")


@dataclass(frozen=True)
class PropertyBinding:
    role: str
    property: str
    column: str
    datatype: str


@dataclass(frozen=True)
class LinkBinding:
    from_role: str
    property: str
    to_role: str


@dataclass(frozen=True)
class MappingSpec:
    """How one dataset's columns become typed entities, literals and links."""
    dataset_id: str
    class_bindings: tuple = ()
    property_bindings: tuple = ()
    link_bindings: tuple = ()

    def __post_init__(self):
        roles = [b.role for b in self.class_bindings]
        if len(set(roles)) != len(roles):
            raise IngestionError("duplicate instance role in mapping")
        declared = set(roles)
        for pb in self.property_bindings:
            if pb.role not in declared:
                raise IngestionError(f"property binding references undeclared role: {pb.role!r}")
        for lb in self.link_bindings:
            for role in (lb.from_role, lb.to_role):
                if role not in declared:
                    raise IngestionError(f"link binding references undeclared role: {role!r}")

    def validate_against(self, schema: Schema) -> None:
        """Every bound class and property must exist with the right kind."""
        by_role = {b.role: b.class_name for b in self.class_bindings}
        for cb in self.class_bindings:
            if cb.class_name not in schema:
                raise IngestionError(f"mapping references unknown class: {cb.class_name}")
        for pb in self.property_bindings:
            found = _find_constraint(schema, by_role[pb.role], pb.property)
            if found is None or found.kind is not PropertyKind.DATA:
                raise IngestionError(
                    f"{by_role[pb.role]} has no data property {pb.property!r}")
            try:
                Datatype(pb.datatype)
            except ValueError:
                raise IngestionError(f"unknown datatype: {pb.datatype!r}") from None
        for lb in self.link_bindings:
            found = _find_constraint(schema, by_role[lb.from_role], lb.property)
            if found is None or found.kind is not PropertyKind.OBJECT:
                raise IngestionError(
                    f"{by_role[lb.from_role]} has no object property {lb.property!r}")
            target = by_role[lb.to_role]
            if found.range not in {cd.name for cd in schema.ancestry(target)}:
                raise IngestionError(
                    f"link {lb.property} expects {found.range}, "
                    f"role {lb.to_role!r} is bound to {target}")


def _find_constraint(schema: Schema, class_name: str, prop: str):
    for c in schema.effective_constraints(class_name):
        if c.property == prop:
            return c
    return None


_SECTIONS = ("CLASS", "PROP", "LINK")


def parse_mapping_text(dataset_id: str, text: str) -> MappingSpec:
    """Three tab-separated sections of CLASS, PROP and LINK bindings."""
    section = None
    classes: list = []
    props: list = []
    links: list = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped in _SECTIONS:
            section = stripped
            continue
        parts = stripped.split("\t")
        if section == "CLASS":
            if len(parts) < 3:
                raise IngestionError(
                    f"mapping line {lineno}: CLASS needs role, class and key columns")
            classes.append(ClassBinding(parts[0], parts[1], tuple(parts[2:])))
        elif section == "PROP":
            if len(parts) != 4:
                raise IngestionError(
                    f"mapping line {lineno}: PROP needs role, property, column, datatype")
            props.append(PropertyBinding(*parts))
        elif section == "LINK":
            if len(parts) != 3:
                raise IngestionError(
                    f"mapping line {lineno}: LINK needs fromRole, property, toRole")
            links.append(LinkBinding(*parts))
        else:
            raise IngestionError(f"mapping line {lineno}: binding before a section header")
    return MappingSpec(dataset_id, tuple(classes), tuple(props), tuple(links))


def mapping_text(mapping: MappingSpec) -> str:
    lines = ["CLASS"]
    for cb in mapping.class_bindings:
        lines.append("\t".join((cb.role, cb.class_name) + cb.key_columns))
    lines.append("PROP")
    for pb in mapping.property_bindings:
        lines.append("\t".join((pb.role, pb.property, pb.column, pb.datatype)))
    lines.append("LINK")
    for lb in mapping.link_bindings:
        lines.append("\t".join((lb.from_role, lb.property, lb.to_role)))
    return "\n".join(lines) + "\n"


# --- staging ---

@dataclass(frozen=True)
class ChangeEntry:
    column: str
    before: str
    after: str
    rule_id: str


@dataclass
class StagedRecord:
    """One source row frozen at ingestion time.

    raw_fields holds the verbatim cell strings and is never rewritten; the
    cleanup pass fills clean_fields on a copy and logs what it changed.
    """
    dataset_id: str
    record_key: str
    raw_fields: dict
    clean_fields: dict
    version: int
    ingested_at: datetime
    change_log: tuple = ()


class StagingStore:
    """Ordered table of staged rows keyed by (dataset, record key, version)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._rows: dict = {}
        self._latest: dict = {}
        self._keys: dict = {}  # dataset -> record keys in first-seen order

    def stage(self, dataset_id: str, record_key: str, raw_fields: dict,
              at: datetime) -> StagedRecord:
        """New row version, or the stored one when the raw cells are equal."""
        with self._lock:
            latest = self._latest.get((dataset_id, record_key))
            if latest is not None and latest.raw_fields == dict(raw_fields):
                return latest
            version = 1 if latest is None else latest.version + 1
            record = StagedRecord(dataset_id, record_key, dict(raw_fields), {}, version, at)
            self._rows[(dataset_id, record_key, version)] = record
            self._latest[(dataset_id, record_key)] = record
            self._keys.setdefault(dataset_id, {})[record_key] = None
            return record

    def update(self, record: StagedRecord) -> None:
        """Write back derived fields; the raw cells must be untouched."""
        key = (record.dataset_id, record.record_key, record.version)
        with self._lock:
            stored = self._rows.get(key)
            if stored is None:
                raise IngestionError(f"record was never staged: {key}")
            if stored.raw_fields != record.raw_fields:
                raise IngestionError("raw fields are immutable once staged")
            self._rows[key] = record
            if self._latest[(record.dataset_id, record.record_key)].version == record.version:
                self._latest[(record.dataset_id, record.record_key)] = record

    def latest(self, dataset_id: str, record_key: str) -> Optional[StagedRecord]:
        return self._latest.get((dataset_id, record_key))

    def latest_records(self, dataset_id: str) -> list:
        with self._lock:
            return [self._latest[(dataset_id, k)] for k in self._keys.get(dataset_id, {})]

    def versions(self, dataset_id: str, record_key: str) -> list:
        out = []
        version = 1
        while (dataset_id, record_key, version) in self._rows:
            out.append(self._rows[(dataset_id, record_key, version)])
            version += 1
        return out

    def row_count(self, dataset_id: str) -> int:
        """All staged rows of the dataset, every version counted."""
        return sum(1 for ds, _key, _v in self._rows if ds == dataset_id)


# --- file readers ---

def parse_rows(text: str, original_format: str) -> list:
    """Split file text into ordered column maps of verbatim cell strings."""
    if original_format == "csv":
        return _parse_csv(text)
    if original_format == "xml":
        return _parse_xml(text)
    if original_format == "polyline":
        return _parse_polyline(text)
    raise IngestionError(f"format {original_format!r} has no file reader")


def _parse_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise IngestionError("empty file")
    if len(set(header)) != len(header):
        raise IngestionError("duplicate column names in header")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise IngestionError(
                f"row {lineno}: expected {len(header)} columns, got {len(row)}")
        rows.append(dict(zip(header, row)))
    return rows


def _parse_xml(text: str) -> list:
    try:
        root = ElementTree.fromstring(text)
    except ElementTree.ParseError as exc:
        raise IngestionError(f"bad XML: {exc}") from None
    rows = []
    for child in root:
        fields: dict = {}
        for sub in child:
            if sub.tag in fields:
                raise IngestionError(
                    f"record {len(rows) + 1}: repeated element {sub.tag!r}")
            fields[sub.tag] = sub.text or ""
        rows.append(fields)
    return rows


def _parse_polyline(text: str) -> list:
    """Coordinate-list text: lon,lat per line, blank line between elements."""
    rows: list = []
    current: dict = {}
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            if current:
                rows.append(current)
                current = {}
            continue
        current[f"p{len(current)}"] = stripped
    if current:
        rows.append(current)
    return rows


# --- quality improvement ---

_DMY_RE = re.compile(r"(\d{1,2})[/.-](\d{1,2})[/.-](\d{4})$")
_TIME_RE = re.compile(r"(\d{1,2})[:.,](\d{2})(?::(\d{2}))?$")

FLAG_ONLY = "flag-only"


def _clean_date(value: str) -> Optional[str]:
    s = value.strip()
    try:
        return date.fromisoformat(s).isoformat()
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(s).isoformat()
    except ValueError:
        pass
    m = _DMY_RE.match(s)
    if m:
        # ambiguous numeric dates read day-first, the source convention
        day, month, year = (int(g) for g in m.groups())
        try:
            return date(year, month, day).isoformat()
        except ValueError:
            return None
    return None


def _clean_time(value: str) -> Optional[str]:
    m = _TIME_RE.match(value.strip())
    if not m:
        return None
    hour, minute = int(m.group(1)), int(m.group(2))
    second = int(m.group(3)) if m.group(3) else None
    if hour > 23 or minute > 59 or (second or 0) > 59:
        return None
    base = f"{hour:02d}:{minute:02d}"
    return base if second is None else f"{base}:{second:02d}"


def _clean_cap(value: str) -> Optional[str]:
    s = value.replace(" ", "")
    return s if re.fullmatch(r"\d{5}", s) else None


def _clean_phone(value: str) -> Optional[str]:
    s = re.sub(r"[\s()./-]", "", value)
    if s.startswith("+"):
        return s if re.fullmatch(r"\+\d{8,15}", s) else None
    if re.fullmatch(r"\d{9,10}", s):
        return "+39" + s
    return None


def _clean_url(value: str) -> Optional[str]:
    s = value.strip()
    if not s or " " in s:
        return None
    if "://" in s:
        return s
    if re.match(r"[\w.-]+\.[A-Za-z]{2,}", s):
        return "http://" + s
    return None


def _clean_email(value: str) -> Optional[str]:
    s = value.strip().lower()
    return s if re.fullmatch(r"[^@\s]+@[^@\s]+\.[^@\s]+", s) else None


def _clean_address(value: str) -> Optional[str]:
    try:
        return normalize(RawAddress(street_text=value)).street_text
    except AddressError:
        return None


def _clean_locality(value: str) -> Optional[str]:
    s = " ".join(fold_text(value).split())
    return s or None


def _clean_ateco(value: str) -> Optional[str]:
    s = value.replace(" ", "")
    return s if re.fullmatch(r"\d{2}(\.\d{1,2}){0,2}", s) else None


_RULES = {
    "date": ("date-iso", _clean_date),
    "time": ("time-pad", _clean_time),
    "cap": ("cap-5digit", _clean_cap),
    "phone": ("phone-prefix", _clean_phone),
    "url": ("url-scheme", _clean_url),
    "email": ("email-lower", _clean_email),
    "address": ("address-canonical", _clean_address),
    "locality": ("locality-fold", _clean_locality),
    "ateco": ("ateco-format", _clean_ateco),
}

RULE_KINDS = frozenset(_RULES)


@dataclass(frozen=True)
class RuleSet:
    """Column name to the cleanup rule kind applied to it."""
    column_kinds: dict

    def __post_init__(self):
        for column, kind in self.column_kinds.items():
            if kind not in RULE_KINDS:
                raise IngestionError(f"unknown rule kind {kind!r} for column {column!r}")


def quality_improve(record: StagedRecord, rules: RuleSet) -> StagedRecord:
    """Fill clean_fields and log every change; unfixable values get flagged."""
    clean: dict = {}
    log: list = []
    for column, raw in record.raw_fields.items():
        kind = rules.column_kinds.get(column)
        if kind is None or not raw.strip():
            clean[column] = raw
            continue
        rule_id, fn = _RULES[kind]
        cleaned = fn(raw)
        if cleaned is None:
            clean[column] = raw
            log.append(ChangeEntry(column, raw, raw, FLAG_ONLY))
        elif cleaned != raw:
            clean[column] = cleaned
            log.append(ChangeEntry(column, raw, cleaned, rule_id))
        else:
            clean[column] = raw
    return replace(record, clean_fields=clean, change_log=tuple(log))


# --- IRI minting and quad mapping ---

def dataset_iri(dataset_id: str) -> Iri:
    return Iri(DATA_NS + dataset_id)


def dataset_context(dataset_id: str) -> Iri:
    return context_iri("dataset/" + dataset_id)


def mint_iri(dataset_id: str, role: str, *keys: str) -> Iri:
    """Deterministic entity IRI from the dataset, role and key values."""
    if not keys:
        raise IngestionError(f"role {role!r} minted without key values")
    encoded = "/".join(quote(k, safe="") for k in keys)
    return Iri(f"{DATA_NS}{dataset_id}/{role}/{encoded}")


def map_to_quads(record: StagedRecord, mapping: MappingSpec,
                 context: Optional[Iri] = None) -> list:
    """The record's quads; IRIs depend only on the key column values."""
    ctx = context or dataset_context(record.dataset_id)
    fields = record.clean_fields or record.raw_fields
    iris: dict = {}
    quads = []
    for cb in mapping.class_bindings:
        values = []
        for column in cb.key_columns:
            value = fields.get(column, "")
            if not value.strip():
                raise IngestionError(
                    f"record {record.record_key!r} misses key column "
                    f"{column!r} for role {cb.role!r}")
            values.append(value)
        iris[cb.role] = mint_iri(record.dataset_id, cb.role, *values)
        quads.append(Quad(iris[cb.role], Iri(RDF_TYPE), schema_iri(cb.class_name), ctx))
    for pb in mapping.property_bindings:
        value = fields.get(pb.column, "")
        if not value.strip():
            continue
        try:
            obj = Literal(value, Datatype(pb.datatype))
        except TermError as exc:
            raise IngestionError(f"record {record.record_key!r}: {exc}") from None
        quads.append(Quad(iris[pb.role], schema_iri(pb.property), obj, ctx))
    for lb in mapping.link_bindings:
        quads.append(Quad(iris[lb.from_role], schema_iri(lb.property),
                          iris[lb.to_role], ctx))
    return quads


def polyline_quads(record: StagedRecord, context: Optional[Iri] = None) -> list:
    """Coordinate-list record: a Junction per point, a RoadLink per segment."""
    ctx = context or dataset_context(record.dataset_id)
    fields = record.clean_fields or record.raw_fields
    points = []
    for column, value in fields.items():
        parts = value.split(",")
        try:
            if len(parts) != 2:
                raise ValueError
            lon, lat = float(parts[0]), float(parts[1])
            points.append(GeoPoint(lat, lon))
        except (ValueError, TermError):
            raise IngestionError(
                f"record {record.record_key!r}: bad point {value!r} "
                f"in column {column}") from None
    if len(points) < 2:
        raise IngestionError(
            f"record {record.record_key!r}: a polyline needs at least two points")
    quads = []
    junctions = []
    for i, p in enumerate(points):
        junction = mint_iri(record.dataset_id, "junction", record.record_key, str(i))
        junctions.append(junction)
        quads.append(Quad(junction, Iri(RDF_TYPE), schema_iri("Junction"), ctx))
        quads.append(Quad(junction, schema_iri("lat"), Literal.decimal(p.lat), ctx))
        quads.append(Quad(junction, schema_iri("long"), Literal.decimal(p.long), ctx))
    for i in range(len(points) - 1):
        link = mint_iri(record.dataset_id, "roadlink", record.record_key, str(i))
        quads.append(Quad(link, Iri(RDF_TYPE), schema_iri("RoadLink"), ctx))
        quads.append(Quad(link, schema_iri("starting"), junctions[i], ctx))
        quads.append(Quad(link, schema_iri("ending"), junctions[i + 1], ctx))
    return quads


# --- real-time feed payloads ---

@dataclass(frozen=True)
class ParkingStatus:
    """Car-park occupancy snapshot from a parking sensor."""
    sensor: str
    free: int
    occupied: int
    observed: Optional[datetime]


@dataclass(frozen=True)
class StopForecast:
    stop: str
    expected: datetime


@dataclass(frozen=True)
class AvmReport:
    """Vehicle monitoring message: position, last stop, upcoming forecasts."""
    vehicle: str
    last_stop_time: Optional[datetime]
    line: str = ""
    last_stop: str = ""
    delay_s: Optional[float] = None
    lat: Optional[float] = None
    long: Optional[float] = None
    upcoming: tuple = ()


@dataclass(frozen=True)
class WeatherSlot:
    day: str
    forecast_range: str
    description: str


@dataclass(frozen=True)
class WeatherReport:
    """Municipality forecast bulletin."""
    municipality: str
    issued: Optional[datetime]
    predictions: tuple = ()
    istat_code: Optional[str] = None
    needs_review: bool = False


@dataclass(frozen=True)
class SensorObservation:
    """One measure from a roadside sensor site."""
    site: str
    kind: str
    value: float
    measured: Optional[datetime]


_OBSERVATION_CLASSES = {
    "concentration": "TrafficConcentration",
    "headway": "TrafficHeadway",
    "speed": "TrafficSpeed",
    "flow": "TrafficFlow",
}

_TIMESTAMP_ATTR = {
    ParkingStatus: "observed",
    AvmReport: "last_stop_time",
    WeatherReport: "issued",
    SensorObservation: "measured",
}


def payload_timestamp(payload) -> datetime:
    attr = _TIMESTAMP_ATTR.get(type(payload))
    if attr is None:
        raise IngestionError(f"unknown feed payload type: {type(payload).__name__}")
    ts = getattr(payload, attr)
    if ts is None:
        raise IngestionError(f"{type(payload).__name__} payload missing timestamp")
    return ts


def instant_iri(resource: Iri, at: datetime) -> Iri:
    """One instant per (resource, timestamp); distinct resources never share."""
    tail = resource.value
    if tail.startswith(DATA_NS):
        tail = tail[len(DATA_NS):]
    else:
        tail = quote(tail, safe="")
    return Iri(f"{INSTANT_NS}{tail}/{at.isoformat()}")


def _instant_pair(resource: Iri, at: datetime, time_prop: str,
                  inverse_prop: str, ctx: Iri) -> list:
    instant = instant_iri(resource, at)
    return [
        Quad(instant, Iri(RDF_TYPE), schema_iri("Instant"), ctx),
        Quad(instant, schema_iri("dateTime"), Literal.date_time(at), ctx),
        Quad(resource, schema_iri(time_prop), instant, ctx),
        Quad(instant, schema_iri(inverse_prop), resource, ctx),
    ]


def realtime_quads(dataset_id: str, payload, context: Optional[Iri] = None) -> list:
    """Payload quads plus the instant entity paired to its source record."""
    ctx = context or dataset_context(dataset_id)
    at = payload_timestamp(payload)
    ts = at.isoformat()

    def lit(s, prop, literal):
        return Quad(s, schema_iri(prop), literal, ctx)

    def obj(s, prop, o):
        return Quad(s, schema_iri(prop), o, ctx)

    def typed(s, class_name):
        return Quad(s, Iri(RDF_TYPE), schema_iri(class_name), ctx)

    if isinstance(payload, ParkingStatus):
        sensor = mint_iri(dataset_id, "sensor", payload.sensor)
        record = mint_iri(dataset_id, "situation", payload.sensor, ts)
        return [
            typed(sensor, "CarParkSensor"),
            obj(sensor, "hasRecord", record),
            typed(record, "SituationRecord"),
            obj(record, "relatedToSensor", sensor),
            lit(record, "free", Literal.integer(payload.free)),
            lit(record, "occupied", Literal.integer(payload.occupied)),
        ] + _instant_pair(record, at, "observationTime", "instantParking", ctx)

    if isinstance(payload, AvmReport):
        record = mint_iri(dataset_id, "avm", payload.vehicle, ts)
        quads = [typed(record, "AVMRecord"),
                 lit(record, "vehicleId", Literal.string(payload.vehicle))]
        if payload.delay_s is not None:
            quads.append(lit(record, "delay", Literal.decimal(payload.delay_s)))
        if payload.lat is not None and payload.long is not None:
            quads.append(lit(record, "lat", Literal.decimal(payload.lat)))
            quads.append(lit(record, "long", Literal.decimal(payload.long)))
        if payload.line:
            line = mint_iri(dataset_id, "line", payload.line)
            quads.append(typed(line, "PublicTransportLine"))
            quads.append(lit(line, "lineNumber", Literal.string(payload.line)))
            quads.append(obj(record, "concernLine", line))
        if payload.last_stop:
            stop = mint_iri(dataset_id, "stop", payload.last_stop)
            quads.append(typed(stop, "BusStop"))
            quads.append(obj(record, "lastStop", stop))
        quads += _instant_pair(record, at, "hasLastStopTime", "instantAVM", ctx)
        for forecast in payload.upcoming:
            fc = mint_iri(dataset_id, "forecast", payload.vehicle, ts, forecast.stop)
            stop = mint_iri(dataset_id, "stop", forecast.stop)
            quads.append(typed(fc, "BusStopForecast"))
            quads.append(obj(record, "hasForecast", fc))
            quads.append(typed(stop, "BusStop"))
            quads.append(obj(fc, "atBusStop", stop))
            quads += _instant_pair(fc, forecast.expected, "hasExpectedTime",
                                   "instantForecast", ctx)
        return quads

    if isinstance(payload, WeatherReport):
        report = mint_iri(dataset_id, "weather", payload.municipality, ts)
        quads = [typed(report, "WeatherReport"),
                 lit(report, "municipalityName", Literal.string(payload.municipality))]
        if payload.istat_code:
            municipality = mint_iri(dataset_id, "municipality", payload.istat_code)
            quads.append(lit(report, "istatCode", Literal.string(payload.istat_code)))
            quads.append(typed(municipality, "Municipality"))
            quads.append(lit(municipality, "istatCode", Literal.string(payload.istat_code)))
            quads.append(obj(report, "refersToMunicipality", municipality))
            quads.append(obj(municipality, "hasWeatherReport", report))
        for i, slot in enumerate(payload.predictions):
            prediction = mint_iri(dataset_id, "prediction", payload.municipality, ts, str(i))
            quads.append(typed(prediction, "WeatherPrediction"))
            quads.append(obj(report, "hasPrediction", prediction))
            quads.append(lit(prediction, "day", Literal.string(slot.day)))
            quads.append(lit(prediction, "forecastRange", Literal.string(slot.forecast_range)))
            quads.append(lit(prediction, "description", Literal.string(slot.description)))
        return quads + _instant_pair(report, at, "updateTime", "instantWReport", ctx)

    site = mint_iri(dataset_id, "site", payload.site)
    observation = mint_iri(dataset_id, "observation", payload.site, ts)
    return [
        typed(site, "SensorSite"),
        obj(site, "hasObservation", observation),
        typed(observation, _OBSERVATION_CLASSES.get(payload.kind, "Observation")),
        obj(observation, "measuredBySensor", site),
        lit(observation, "value", Literal.decimal(payload.value)),
    ] + _instant_pair(observation, at, "measuredTime", "instantObserv", ctx)


def parse_feed_payload(kind: str, text: str):
    """JSON feed payload to its typed record; timestamps are ISO strings."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"bad feed payload: {exc}") from None

    def when(value):
        return None if value is None else datetime.fromisoformat(value)

    try:
        if kind == "parking":
            return ParkingStatus(sensor=data["sensor"], free=int(data["free"]),
                                 occupied=int(data["occupied"]),
                                 observed=when(data.get("observed")))
        if kind == "avm":
            upcoming = tuple(StopForecast(s["stop"], when(s["expected"]))
                             for s in data.get("upcoming", ()))
            return AvmReport(vehicle=data["vehicle"],
                             last_stop_time=when(data.get("lastStopTime")),
                             line=data.get("line", ""),
                             last_stop=data.get("lastStop", ""),
                             delay_s=float(data["delay"]) if "delay" in data else None,
                             lat=float(data["lat"]) if "lat" in data else None,
                             long=float(data["long"]) if "long" in data else None,
                             upcoming=upcoming)
        if kind == "weather":
            slots = tuple(WeatherSlot(p["day"], p["range"], p["description"])
                          for p in data.get("predictions", ()))
            return WeatherReport(municipality=data["municipality"],
                                 issued=when(data.get("issued")),
                                 predictions=slots,
                                 istat_code=data.get("istatCode"))
        if kind == "observation":
            return SensorObservation(site=data["site"], kind=data.get("kind", "generic"),
                                     value=float(data["value"]),
                                     measured=when(data.get("measured")))
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"bad {kind} payload: {exc!r}") from None
    raise IngestionError(f"unknown feed type: {kind!r}")


# --- ISTAT completion for weather bulletins ---

def _muni_key(name: str) -> str:
    return " ".join(fold_text(name).split())


@dataclass(frozen=True)
class IstatTable:
    """Municipality name to ISTAT code, with aliases for unofficial names."""
    codes: dict
    aliases: dict

    @classmethod
    def build(cls, codes: dict, aliases: Optional[dict] = None) -> "IstatTable":
        canonical = {_muni_key(name): code for name, code in codes.items()}
        alias_map = {}
        for variant, official in (aliases or {}).items():
            target = _muni_key(official)
            if target not in canonical:
                raise IngestionError(f"alias target not in table: {official!r}")
            alias_map[_muni_key(variant)] = target
        return cls(canonical, alias_map)

    def lookup(self, name: str) -> Optional[str]:
        key = _muni_key(name)
        return self.codes.get(self.aliases.get(key, key))


def complete_weather_istat(report: WeatherReport, table: IstatTable) -> WeatherReport:
    """Fill the ISTAT code from the support table; unknown names get flagged."""
    code = table.lookup(report.municipality)
    if code is None:
        return replace(report, needs_review=True)
    return replace(report, istat_code=code, needs_review=False)


# --- scheduling and the pipeline ---

@dataclass
class ScheduleEntry:
    dataset_id: str
    next_run: datetime
    period: timedelta
    max_concurrent: int = 1

    def __post_init__(self):
        if self.period <= timedelta(0):
            raise IngestionError("schedule period must be positive")
        if self.max_concurrent < 1:
            raise IngestionError("maxConcurrent must be at least 1")


@dataclass(frozen=True)
class JobReport:
    dataset_id: str
    scheduled_for: datetime
    status: str
    staged: int = 0
    quads_inserted: int = 0
    skipped: tuple = ()
    error: Optional[str] = None


@dataclass
class _DatasetState:
    descriptor: DatasetDescriptor
    mapping: MappingSpec
    rules: RuleSet
    context: Iri
    status: str
    last_update: Optional[datetime] = None
    triple_creation_date: Optional[datetime] = None


@dataclass(frozen=True)
class DatasetView:
    """Read-only snapshot of one dataset's pipeline state."""
    id: str
    status: str
    context: Iri
    process_type: str
    macroclass: str
    staged_rows: int
    quad_count: int


def descriptor_quads(descriptor: DatasetDescriptor) -> list:
    """The descriptor as quads in the shared metadata context."""
    subject = dataset_iri(descriptor.id)
    quads = [Quad(subject, Iri(RDF_TYPE), schema_iri("Dataset"), METADATA_CONTEXT)]

    def lit(prop, literal):
        quads.append(Quad(subject, schema_iri(prop), literal, METADATA_CONTEXT))

    lit("source", Literal.string(descriptor.source))
    lit("originalFormat", Literal.string(descriptor.original_format))
    lit("processType", Literal.string(descriptor.process_type))
    lit("automationLevel", Literal.string(descriptor.automation_level))
    lit("status", Literal.string(descriptor.status))
    lit("macroclass", Literal.string(descriptor.macroclass.value))
    if descriptor.description:
        lit("description", Literal.string(descriptor.description))
    if descriptor.license:
        lit("license", Literal.string(descriptor.license))
    if descriptor.access_type:
        lit("accessType", Literal.string(descriptor.access_type))
    if descriptor.update_period is not None:
        lit("updatePeriod", Literal.string(format_duration(descriptor.update_period)))
    if descriptor.creation_date is not None:
        lit("creationDate", Literal.date_time(descriptor.creation_date))
    if descriptor.last_update is not None:
        lit("lastUpdate", Literal.date_time(descriptor.last_update))
    if descriptor.triple_creation_date is not None:
        lit("tripleCreationDate", Literal.date_time(descriptor.triple_creation_date))
    return quads


def read_descriptor(store: QuadStore, dataset_id: str) -> DatasetDescriptor:
    """Rebuild a descriptor from its metadata quads."""
    quads = store.match(subject=dataset_iri(dataset_id), context=METADATA_CONTEXT)
    values: dict = {}
    for q in quads:
        if isinstance(q.object, Literal):
            values[q.predicate.local_name] = q.object
    if not values:
        raise IngestionError(f"no descriptor stored for dataset {dataset_id!r}")

    def text(key, default=""):
        return values[key].lexical if key in values else default

    def when(key):
        return values[key].to_python() if key in values else None

    return DatasetDescriptor(
        id=dataset_id,
        source=text("source"),
        original_format=text("originalFormat"),
        process_type=text("processType"),
        automation_level=text("automationLevel"),
        macroclass=MacroClass(text("macroclass")),
        description=text("description"),
        license=text("license"),
        access_type=text("accessType"),
        update_period=parse_duration(text("updatePeriod")) if "updatePeriod" in values else None,
        creation_date=when("creationDate"),
        last_update=when("lastUpdate"),
        triple_creation_date=when("tripleCreationDate"),
        status=text("status", "registered"),
    )


class IngestionPipeline:
    """Drives datasets from registration to indexed quads in one store."""

    def __init__(self, store: Optional[QuadStore] = None,
                 schema: Optional[Schema] = None):
        # an empty store is falsy under __len__, so test identity, not truth
        self.store = store if store is not None else QuadStore()
        self.schema = schema if schema is not None else load_schema()
        self.staging = StagingStore()
        self._states: dict = {}
        self._schedule: list = []
        self.store.register_context(METADATA_CONTEXT, MacroClass.METADATA, "static")

    # -- registration -------------------------------------------------------

    def register_dataset(self, descriptor: DatasetDescriptor, mapping: MappingSpec,
                         rules: Optional[RuleSet] = None) -> Iri:
        """Record the descriptor and mint the dataset's own data context."""
        if descriptor.id in self._states:
            raise IngestionError(f"dataset id already registered: {descriptor.id}")
        if mapping.dataset_id != descriptor.id:
            raise IngestionError("mapping belongs to a different dataset")
        mapping.validate_against(self.schema)
        ctx = dataset_context(descriptor.id)
        kind = "realtime" if descriptor.process_type == "realtime" else "static"
        self.store.register_context(ctx, descriptor.macroclass, kind)
        self._states[descriptor.id] = _DatasetState(
            descriptor, mapping, rules or RuleSet({}), ctx, descriptor.status,
            descriptor.last_update, descriptor.triple_creation_date)
        self.store.insert(descriptor_quads(descriptor))
        return ctx

    def _state(self, dataset_id: str) -> _DatasetState:
        state = self._states.get(dataset_id)
        if state is None:
            raise IngestionError(f"dataset not registered: {dataset_id}")
        return state

    def dataset_ids(self) -> list:
        return sorted(self._states)

    def dataset_view(self, dataset_id: str) -> DatasetView:
        state = self._state(dataset_id)
        return DatasetView(
            id=dataset_id,
            status=state.status,
            context=state.context,
            process_type=state.descriptor.process_type,
            macroclass=state.descriptor.macroclass.value,
            staged_rows=self.staging.row_count(dataset_id),
            quad_count=len(self.store.match(context=state.context)),
        )

    def _set_status(self, state: _DatasetState, new_status: str) -> None:
        current = state.status
        if new_status == current:
            return
        # forward-only: repeat runs keep the furthest stage reached; a failed
        # dataset may re-enter the pipeline on the next attempt
        if (new_status != "failed" and current != "failed"
                and _STATUS_ORDER[new_status] < _STATUS_ORDER[current]):
            return
        subject = dataset_iri(state.descriptor.id)
        prop = schema_iri("status")
        self.store.remove([Quad(subject, prop, Literal.string(current), METADATA_CONTEXT)])
        self.store.insert([Quad(subject, prop, Literal.string(new_status), METADATA_CONTEXT)])
        state.status = new_status

    def _touch(self, state: _DatasetState, now: datetime) -> None:
        subject = dataset_iri(state.descriptor.id)
        prop = schema_iri("lastUpdate")
        if state.last_update is not None:
            self.store.remove([Quad(subject, prop, Literal.date_time(state.last_update),
                                    METADATA_CONTEXT)])
        self.store.insert([Quad(subject, prop, Literal.date_time(now), METADATA_CONTEXT)])
        state.last_update = now
        if state.triple_creation_date is None:
            self.store.insert([Quad(subject, schema_iri("tripleCreationDate"),
                                    Literal.date_time(now), METADATA_CONTEXT)])
            state.triple_creation_date = now

    # -- pipeline phases ----------------------------------------------------

    def ingest_file(self, dataset_id: str, path, now: Optional[datetime] = None) -> list:
        """Stage the file's rows verbatim; unchanged rows keep their version."""
        state = self._state(dataset_id)
        at = now or datetime.now()
        try:
            text = Path(path).read_text(encoding="utf-8")
            rows = parse_rows(text, state.descriptor.original_format)
        except (OSError, IngestionError) as exc:
            self._set_status(state, "failed")
            raise IngestionError(f"dataset {dataset_id}: {exc}") from None
        records = []
        for ordinal, fields in enumerate(rows):
            key = self._record_key(state.mapping, fields, ordinal)
            records.append(self.staging.stage(dataset_id, key, fields, at))
        self._set_status(state, "ingested")
        return records

    @staticmethod
    def _record_key(mapping: MappingSpec, fields: dict, ordinal: int) -> str:
        if mapping.class_bindings:
            columns = mapping.class_bindings[0].key_columns
            values = [fields.get(c, "") for c in columns]
            if all(v.strip() for v in values):
                return "/".join(values)
        return f"row-{ordinal:06d}"

    def improve_dataset(self, dataset_id: str) -> list:
        """Apply the dataset's cleanup rules to the latest staged rows."""
        state = self._state(dataset_id)
        improved = []
        for record in self.staging.latest_records(dataset_id):
            cleaned = quality_improve(record, state.rules)
            self.staging.update(cleaned)
            improved.append(cleaned)
        self._set_status(state, "improved")
        return improved

    def map_dataset(self, dataset_id: str, now: Optional[datetime] = None):
        """Map the latest staged rows and index the resulting quads.

        Returns (quads inserted, skip diagnostics); a record that cannot be
        mapped is skipped without blocking the rest of the dataset.
        """
        state = self._state(dataset_id)
        quads: list = []
        skipped: list = []
        for record in self.staging.latest_records(dataset_id):
            try:
                if state.descriptor.original_format == "polyline":
                    quads.extend(polyline_quads(record, state.context))
                else:
                    quads.extend(map_to_quads(record, state.mapping, state.context))
            except IngestionError as exc:
                skipped.append(str(exc))
        self._set_status(state, "mapped")
        inserted = self.store.insert(quads)
        self._touch(state, now or datetime.now())
        self._set_status(state, "indexed")
        return inserted, tuple(skipped)

    def run_dataset(self, dataset_id: str, path=None,
                    now: Optional[datetime] = None) -> JobReport:
        """Full chain for one dataset: stage, improve, map, index."""
        state = self._state(dataset_id)
        at = now or datetime.now()
        source = path or state.descriptor.source
        try:
            records = self.ingest_file(dataset_id, source, now=at)
            self.improve_dataset(dataset_id)
            inserted, skipped = self.map_dataset(dataset_id, now=at)
        except (IngestionError, TermError) as exc:
            self._set_status(state, "failed")
            return JobReport(dataset_id, at, "failed", error=str(exc))
        return JobReport(dataset_id, at, "indexed", staged=len(records),
                         quads_inserted=inserted, skipped=skipped)

    # -- scheduler ----------------------------------------------------------

    def schedule_dataset(self, dataset_id: str, first_run: datetime,
                         period: Optional[timedelta] = None,
                         max_concurrent: int = 1) -> ScheduleEntry:
        """Queue periodic runs; the period defaults to the descriptor's."""
        state = self._state(dataset_id)
        effective = period or state.descriptor.update_period
        if effective is None:
            raise IngestionError(f"dataset {dataset_id} has no update period to schedule with")
        entry = ScheduleEntry(dataset_id, first_run, effective, max_concurrent)
        self._schedule.append(entry)
        return entry

    def schedule(self) -> list:
        return list(self._schedule)

    def run_scheduler(self, now: datetime) -> list:
        """Run every due entry until its next run passes now.

        Datasets run isolated from each other: a failing job is reported and
        does not stall the siblings. Each entry advances one period per run.
        """
        groups: dict = {}
        for entry in self._schedule:
            if entry.next_run <= now:
                groups.setdefault(entry.dataset_id, []).append(entry)
        if not groups:
            return []

        def drain(entries):
            reports = []
            for entry in entries:
                while entry.next_run <= now:
                    scheduled = entry.next_run
                    reports.append(self._scheduled_job(entry.dataset_id, scheduled))
                    entry.next_run = scheduled + entry.period
            return reports

        reports: list = []
        with ThreadPoolExecutor(max_workers=min(8, len(groups))) as pool:
            for batch in pool.map(drain, groups.values()):
                reports.extend(batch)
        reports.sort(key=lambda r: (r.dataset_id, r.scheduled_for.isoformat()))
        return reports

    def _scheduled_job(self, dataset_id: str, scheduled_for: datetime) -> JobReport:
        try:
            return self.run_dataset(dataset_id, now=scheduled_for)
        except Exception as exc:  # job faults must not leak into the scheduler
            state = self._states.get(dataset_id)
            if state is not None:
                self._set_status(state, "failed")
            return JobReport(dataset_id, scheduled_for, "failed", error=str(exc))

    # -- real-time feeds ----------------------------------------------------

    def ingest_realtime(self, dataset_id: str, payload) -> list:
        """Index one feed payload paired with its temporal instant."""
        state = self._state(dataset_id)
        if state.descriptor.process_type != "realtime":
            raise IngestionError(f"dataset {dataset_id} is not registered as realtime")
        at = payload_timestamp(payload)
        quads = realtime_quads(dataset_id, payload, state.context)
        self.store.insert(quads)
        self._touch(state, at)
        self._set_status(state, "indexed")
        return quads
