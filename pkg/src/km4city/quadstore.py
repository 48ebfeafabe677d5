"""Indexed in-memory quad store with equivalence closure and geo search.

Quads live in four nested-dict indexes so any match pattern starts from the
most selective bound term.  `owl:sameAs` statements feed a union-find whose
canonical representative is the lexicographically smallest member, which keeps
resolution independent of insertion order.  Entities that carry `lat`/`long`
decimal literals are mirrored into a 0.01 degree grid for nearest-neighbour
queries; the ring walk over that grid prunes with great-circle lower bounds
and is exact (verified candidate distances, IRI tie-break).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Optional

from .terms import (
    CONTEXT_NS, OWL_SAME_AS, RDF_TYPE, Datatype, GeoPoint, Iri, Literal, Quad,
    quads_from_text, quads_to_text, schema_iri,
)
from .schema import MacroClass

EARTH_RADIUS_M = 6_371_008.8
GRID_DEG = 0.01

# realtime records reach their timestamp through one of these properties
RECORD_TIME_PROPERTIES = (
    "observationTime", "updateTime", "measuredTime",
    "hasExpectedTime", "hasLastStopTime",
)
# numeric sample fields folded into the rolling aggregates
SAMPLE_PROPERTIES = ("free", "occupied", "value", "delay")
# per record type, the catalog entity the aggregate series is attached to
ANCHOR_PROPERTIES = ("relatedToSensor", "measuredBySensor", "concernLine")

AGGREGATION_PERIODS = ("day", "week", "month")

SAME_AS_CONTEXT = Iri(CONTEXT_NS + "sameas")

_LAT = schema_iri("lat")
_LONG = schema_iri("long")
_TYPE = Iri(RDF_TYPE)
_SAME_AS = Iri(OWL_SAME_AS)


class StoreError(ValueError):
    pass


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of mean Earth radius."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.long - a.long)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class GeoNearResult:
    iri: Iri
    distance: float
    point: GeoPoint


@dataclass(frozen=True)
class ContextInfo:
    macroclass: MacroClass
    kind: str  # static | realtime | reconciliation


@dataclass(frozen=True)
class StatRow:
    static: int = 0
    realtime: int = 0
    reconciliation: int = 0

    @property
    def total(self) -> int:
        return self.static + self.realtime + self.reconciliation

    def plus(self, kind: str, n: int) -> "StatRow":
        d = {"static": self.static, "realtime": self.realtime,
             "reconciliation": self.reconciliation}
        d[kind] += n
        return StatRow(**d)


UNCLASSIFIED_ROW = "Unclassified"


@dataclass(frozen=True)
class StoreStats:
    rows: dict  # row label -> StatRow

    def column_totals(self) -> StatRow:
        return StatRow(
            static=sum(r.static for r in self.rows.values()),
            realtime=sum(r.realtime for r in self.rows.values()),
            reconciliation=sum(r.reconciliation for r in self.rows.values()),
        )

    def grand_total(self) -> int:
        return self.column_totals().total

    def to_tsv(self) -> str:
        lines = ["macroclass\tstatic\trealtime\treconciliation\ttotal"]
        for label in sorted(self.rows):
            r = self.rows[label]
            lines.append(f"{label}\t{r.static}\t{r.realtime}\t{r.reconciliation}\t{r.total}")
        t = self.column_totals()
        lines.append(f"Total\t{t.static}\t{t.realtime}\t{t.reconciliation}\t{t.total}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CompactionResult:
    dropped_quad_count: int
    aggregate_quad_count: int
    archive_path: Optional[str]


def period_key(ts: datetime, aggregation: str) -> str:
    if aggregation == "day":
        return ts.date().isoformat()
    if aggregation == "week":
        iso = ts.isocalendar()
        return f"{iso[0]}-W{iso[1]:02d}"
    if aggregation == "month":
        return f"{ts.year:04d}-{ts.month:02d}"
    raise StoreError(f"unknown aggregation period: {aggregation!r}")


class _UnionFind:
    """Union-find keyed by IRI; the root is always the smallest member."""

    def __init__(self):
        self.parent: dict = {}
        self.members: dict = {}

    def find(self, iri: Iri) -> Iri:
        if iri not in self.parent:
            return iri
        root = iri
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[iri] != root:  # path compression
            self.parent[iri], iri = root, self.parent[iri]
        return root

    def union(self, a: Iri, b: Iri) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        for x in (a, b):
            if x not in self.parent:
                self.parent[x] = x
                self.members[x] = {x}
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        root, child = (ra, rb) if ra < rb else (rb, ra)
        self.parent[child] = root
        self.members[root] |= self.members.pop(child)

    def equivalents(self, iri: Iri) -> frozenset:
        root = self.find(iri)
        return frozenset(self.members.get(root, {iri}) | {iri})


class QuadStore:
    def __init__(self):
        self._lock = threading.RLock()
        self._spoc: dict = {}  # s -> p -> o -> set(c)
        self._posc: dict = {}  # p -> o -> s -> set(c)
        self._ospc: dict = {}  # o -> s -> p -> set(c)
        self._cspo: dict = {}  # c -> s -> p -> set(o)
        self._size = 0
        self._uf = _UnionFind()
        self._contexts: dict = {}  # context iri -> ContextInfo
        self._ctx_count: dict = {}  # context iri -> quad count
        # geo mirror: per entity the sorted sets of lat/long lexicals
        self._lat_lex: dict = {}
        self._long_lex: dict = {}
        self._position: dict = {}  # entity -> GeoPoint
        self._grid: dict = {}  # (i, j) -> set of entity iris

    def __len__(self) -> int:
        return self._size

    # -- write path ---------------------------------------------------------

    def insert(self, quads: Iterable[Quad]) -> int:
        """Add quads, skipping ones already present; returns the number added."""
        added = 0
        with self._lock:
            for q in quads:
                if self._contains(q):
                    continue
                self._index(q)
                added += 1
        return added

    def _contains(self, q: Quad) -> bool:
        return q.context in self._spoc.get(q.subject, {}).get(q.predicate, {}).get(q.object, ())

    def _index(self, q: Quad) -> None:
        self._spoc.setdefault(q.subject, {}).setdefault(q.predicate, {}) \
            .setdefault(q.object, set()).add(q.context)
        self._posc.setdefault(q.predicate, {}).setdefault(q.object, {}) \
            .setdefault(q.subject, set()).add(q.context)
        self._ospc.setdefault(q.object, {}).setdefault(q.subject, {}) \
            .setdefault(q.predicate, set()).add(q.context)
        self._cspo.setdefault(q.context, {}).setdefault(q.subject, {}) \
            .setdefault(q.predicate, set()).add(q.object)
        self._size += 1
        self._ctx_count[q.context] = self._ctx_count.get(q.context, 0) + 1
        if q.predicate == _SAME_AS and isinstance(q.object, Iri) and q.subject != q.object:
            self._uf.union(q.subject, q.object)
        if q.predicate in (_LAT, _LONG) and isinstance(q.object, Literal) \
                and q.object.datatype is Datatype.DECIMAL:
            box = self._lat_lex if q.predicate == _LAT else self._long_lex
            box.setdefault(q.subject, set()).add(q.object.lexical)
            self._reposition(q.subject)

    @staticmethod
    def _drop_leaf(index: dict, k1, k2, k3, leaf) -> None:
        index[k1][k2][k3].discard(leaf)
        if not index[k1][k2][k3]:
            del index[k1][k2][k3]
            if not index[k1][k2]:
                del index[k1][k2]
                if not index[k1]:
                    del index[k1]

    def _unindex(self, q: Quad) -> None:
        self._drop_leaf(self._spoc, q.subject, q.predicate, q.object, q.context)
        self._drop_leaf(self._posc, q.predicate, q.object, q.subject, q.context)
        self._drop_leaf(self._ospc, q.object, q.subject, q.predicate, q.context)
        self._drop_leaf(self._cspo, q.context, q.subject, q.predicate, q.object)
        self._size -= 1
        self._ctx_count[q.context] -= 1
        if self._ctx_count[q.context] == 0:
            del self._ctx_count[q.context]
        if q.predicate in (_LAT, _LONG) and isinstance(q.object, Literal) \
                and q.object.datatype is Datatype.DECIMAL:
            # the same lexical may remain via another context; recheck the index
            still = self.match(subject=q.subject, predicate=q.predicate, object=q.object)
            if not still:
                box = self._lat_lex if q.predicate == _LAT else self._long_lex
                vals = box.get(q.subject)
                if vals:
                    vals.discard(q.object.lexical)
                    if not vals:
                        del box[q.subject]
                self._reposition(q.subject)

    def _reposition(self, entity: Iri) -> None:
        """Recompute the indexed point; smallest lexical wins, order-free."""
        old = self._position.get(entity)
        lats = self._lat_lex.get(entity)
        longs = self._long_lex.get(entity)
        new = None
        if lats and longs:
            lat, long = float(sorted(lats)[0]), float(sorted(longs)[0])
            if -90.0 <= lat <= 90.0 and -180.0 <= long <= 180.0:
                new = GeoPoint(lat, long)
        if old == new:
            return
        if old is not None:
            cell = self._cell(old)
            bucket = self._grid.get(cell)
            if bucket:
                bucket.discard(entity)
                if not bucket:
                    del self._grid[cell]
            del self._position[entity]
        if new is not None:
            self._position[entity] = new
            self._grid.setdefault(self._cell(new), set()).add(entity)

    @staticmethod
    def _cell(p: GeoPoint):
        return (math.floor(p.lat / GRID_DEG), math.floor(p.long / GRID_DEG))

    def remove(self, quads: Iterable[Quad]) -> int:
        removed = 0
        with self._lock:
            for q in quads:
                if self._contains(q):
                    self._unindex(q)
                    removed += 1
        return removed

    def remove_context(self, context: Iri) -> int:
        """Drop every quad of one named graph; used for dataset rollback."""
        with self._lock:
            doomed = self.match(context=context)
            return self.remove(doomed)

    # -- read path ----------------------------------------------------------

    def match(self, subject: Optional[Iri] = None, predicate: Optional[Iri] = None,
              object: Optional[object] = None, context: Optional[Iri] = None) -> list:
        """Quads matching the bound terms, in (s, p, o, c) lexicographic order."""
        with self._lock:
            out = []
            if subject is not None:
                for p, objs in self._spoc.get(subject, {}).items():
                    if predicate is not None and p != predicate:
                        continue
                    for o, ctxs in objs.items():
                        if object is not None and o != object:
                            continue
                        for c in ctxs:
                            if context is None or c == context:
                                out.append(Quad(subject, p, o, c))
            elif predicate is not None:
                for o, subs in self._posc.get(predicate, {}).items():
                    if object is not None and o != object:
                        continue
                    for s, ctxs in subs.items():
                        for c in ctxs:
                            if context is None or c == context:
                                out.append(Quad(s, predicate, o, c))
            elif object is not None:
                for s, preds in self._ospc.get(object, {}).items():
                    for p, ctxs in preds.items():
                        for c in ctxs:
                            if context is None or c == context:
                                out.append(Quad(s, p, object, c))
            elif context is not None:
                for s, preds in self._cspo.get(context, {}).items():
                    for p, objs in preds.items():
                        for o in objs:
                            out.append(Quad(s, p, o, context))
            else:
                for s, preds in self._spoc.items():
                    for p, objs in preds.items():
                        for o, ctxs in objs.items():
                            for c in ctxs:
                                out.append(Quad(s, p, o, c))
            out.sort(key=Quad.sort_key)
            return out

    # -- sameAs closure -----------------------------------------------------

    def add_same_as(self, a: Iri, b: Iri, context: Iri = SAME_AS_CONTEXT) -> None:
        if not isinstance(a, Iri) or not isinstance(b, Iri):
            raise StoreError("sameAs terms must be IRIs")
        if a == b:
            raise StoreError("sameAs requires two distinct IRIs")
        self.insert([Quad(a, _SAME_AS, b, context)])

    def resolve(self, iri: Iri) -> Iri:
        """Canonical representative: the smallest IRI of the equivalence class."""
        with self._lock:
            return self._uf.find(iri)

    def equivalents(self, iri: Iri) -> frozenset:
        with self._lock:
            return self._uf.equivalents(iri)

    def match_with_closure(self, subject: Optional[Iri] = None,
                           predicate: Optional[Iri] = None,
                           object: Optional[object] = None,
                           context: Optional[Iri] = None) -> list:
        """Like match, with subject/object expanded through sameAs equivalents."""
        with self._lock:
            subs = sorted(self.equivalents(subject)) if subject is not None else [None]
            objs: list
            if object is not None and isinstance(object, Iri):
                objs = sorted(self.equivalents(object))
            else:
                objs = [object]
            seen = set()
            out = []
            for s in subs:
                for o in objs:
                    for q in self.match(subject=s, predicate=predicate,
                                        object=o, context=context):
                        if q not in seen:
                            seen.add(q)
                            out.append(q)
            out.sort(key=Quad.sort_key)
            return out

    # -- geo search ---------------------------------------------------------

    def position_of(self, entity: Iri) -> Optional[GeoPoint]:
        with self._lock:
            return self._position.get(entity)

    def _passes_class_filter(self, entity: Iri, type_iris: Optional[set]) -> bool:
        if type_iris is None:
            return True
        found = self._spoc.get(entity, {}).get(_TYPE, {})
        return any(t in found for t in type_iris)

    def geo_near(self, point: GeoPoint, k: int = 10,
                 max_distance: Optional[float] = None,
                 class_filter: Optional[Iterable[str]] = None) -> list:
        """k nearest geo-indexed entities; exact, ties broken by IRI.

        class_filter takes schema class names and keeps entities carrying a
        matching rdf:type statement (no subclass expansion at this level).
        """
        if k <= 0:
            return []
        type_iris = None
        if class_filter is not None:
            type_iris = {schema_iri(n) for n in class_filter}
        with self._lock:
            if not self._grid:
                return []
            cells = list(self._grid.keys())
            min_i = min(c[0] for c in cells)
            max_i = max(c[0] for c in cells)
            min_j = min(c[1] for c in cells)
            max_j = max(c[1] for c in cells)
            # the ring walk assumes longitudes do not wrap inside the data;
            # a bounding box wider than half the globe falls back to full scan
            if (max_j - min_j) * GRID_DEG > 180.0:
                candidates = self._scan_all(point, max_distance, type_iris)
            else:
                candidates = self._ring_walk(point, k, max_distance, type_iris,
                                             (min_i, max_i, min_j, max_j))
            candidates.sort(key=lambda t: (t[0], t[1]))
            return [GeoNearResult(iri, dist, self._position[iri])
                    for dist, iri in candidates[:k]]

    def _scan_all(self, point, max_distance, type_iris):
        out = []
        for iri, pos in self._position.items():
            d = haversine_m(point, pos)
            if max_distance is not None and d > max_distance:
                continue
            if self._passes_class_filter(iri, type_iris):
                out.append((d, iri))
        return out

    def _ring_lower_bound(self, point: GeoPoint, ring: int) -> float:
        """Provable minimum distance to any point of a cell in the given ring."""
        if ring <= 1:
            return 0.0
        sep = (ring - 1) * GRID_DEG
        lat_bound = EARTH_RADIUS_M * math.radians(sep)
        phi_far = min(90.0, abs(point.lat) + (ring + 1) * GRID_DEG)
        coscos = max(0.0, math.cos(math.radians(point.lat)) * math.cos(math.radians(phi_far)))
        half = min(math.pi / 2.0, math.radians(sep) / 2.0)
        s = min(1.0, math.sqrt(coscos) * math.sin(half))
        long_bound = 2.0 * EARTH_RADIUS_M * math.asin(s)
        return min(lat_bound, long_bound)

    def _ring_walk(self, point, k, max_distance, type_iris, bbox):
        min_i, max_i, min_j, max_j = bbox
        ci, cj = self._cell(point)
        max_ring = max(abs(ci - min_i), abs(ci - max_i),
                       abs(cj - min_j), abs(cj - max_j))
        candidates = []
        for ring in range(0, max_ring + 1):
            bound = self._ring_lower_bound(point, ring)
            if max_distance is not None and bound > max_distance:
                break
            if len(candidates) >= k:
                kth = sorted(candidates)[k - 1][0]
                if bound > kth:
                    break
            for cell in self._ring_cells(ci, cj, ring, bbox):
                for iri in self._grid.get(cell, ()):
                    d = haversine_m(point, self._position[iri])
                    if max_distance is not None and d > max_distance:
                        continue
                    if self._passes_class_filter(iri, type_iris):
                        candidates.append((d, iri))
        return candidates

    @staticmethod
    def _ring_cells(ci, cj, ring, bbox):
        min_i, max_i, min_j, max_j = bbox
        if ring == 0:
            yield (ci, cj)
            return
        for i in range(ci - ring, ci + ring + 1):
            if not min_i <= i <= max_i:
                continue
            if i in (ci - ring, ci + ring):
                for j in range(cj - ring, cj + ring + 1):
                    if min_j <= j <= max_j:
                        yield (i, j)
            else:
                for j in (cj - ring, cj + ring):
                    if min_j <= j <= max_j:
                        yield (i, j)

    # -- provenance and stats -----------------------------------------------

    def register_context(self, context: Iri, macroclass: MacroClass,
                         kind: str = "static") -> None:
        if kind not in ("static", "realtime", "reconciliation"):
            raise StoreError(f"unknown context kind: {kind!r}")
        if not isinstance(macroclass, MacroClass):
            macroclass = MacroClass(macroclass)
        with self._lock:
            self._contexts[context] = ContextInfo(macroclass, kind)

    def context_info(self, context: Iri) -> Optional[ContextInfo]:
        return self._contexts.get(context)

    def contexts(self) -> dict:
        with self._lock:
            return dict(self._contexts)

    def store_stats(self) -> StoreStats:
        """Quad counts per macroclass split by context kind.

        Quads in contexts never registered land in an Unclassified row under
        the static column (the default kind).
        """
        with self._lock:
            rows: dict = {}
            for ctx, n in self._ctx_count.items():
                info = self._contexts.get(ctx)
                if info is None:
                    label, kind = UNCLASSIFIED_ROW, "static"
                else:
                    label, kind = info.macroclass.value, info.kind
                rows[label] = rows.get(label, StatRow()).plus(kind, n)
            return StoreStats(rows)

    # -- rolling-window compaction -------------------------------------------

    def compact(self, window: timedelta, now: datetime, aggregation: str = "day",
                archive_path: Optional[str] = None) -> CompactionResult:
        """Archive realtime quads older than now - window, keeping aggregates.

        Records (and their instants and dependent children) whose timestamp
        falls before the cutoff are removed from every realtime context.  The
        numeric samples they carried are folded into per-period statistics
        attached to the record's catalog anchor.  The whole operation is
        all-or-nothing: the archive file is written before the store mutates,
        and a failure there leaves the store untouched.
        """
        if aggregation not in AGGREGATION_PERIODS:
            raise StoreError(f"unknown aggregation period: {aggregation!r}")
        cutoff = now - window
        with self._lock:
            dropped: list = []
            new_quads: list = []
            retired: list = []
            for ctx, info in sorted(self._contexts.items()):
                if info.kind != "realtime":
                    continue
                ctx_dropped, ctx_new, ctx_retired = self._compact_context(
                    ctx, cutoff, aggregation)
                dropped.extend(ctx_dropped)
                new_quads.extend(ctx_new)
                retired.extend(ctx_retired)

            # archive first: a write failure must leave the store untouched
            written_path = None
            if dropped and archive_path is not None:
                path = Path(archive_path)
                path.parent.mkdir(parents=True, exist_ok=True)
                dropped.sort(key=Quad.sort_key)
                path.write_text(quads_to_text(dropped), encoding="utf-8")
                written_path = str(path)

            self.remove(dropped)
            self.remove(retired)
            self.insert(new_quads)
            return CompactionResult(len(dropped), len(new_quads), written_path)

    def _entity_timestamp(self, subject: Iri, ctx: Iri) -> Optional[datetime]:
        preds = self._cspo.get(ctx, {}).get(subject, {})
        direct = preds.get(schema_iri("dateTime"))
        if direct:
            for o in sorted(direct, key=str):
                if isinstance(o, Literal) and o.datatype is Datatype.DATETIME:
                    return o.to_python()
        for prop in RECORD_TIME_PROPERTIES:
            for o in preds.get(schema_iri(prop), ()):
                if isinstance(o, Iri):
                    ts = self._entity_timestamp(o, ctx)
                    if ts is not None:
                        return ts
        return None

    def _compact_context(self, ctx: Iri, cutoff: datetime, aggregation: str):
        subjects = list(self._cspo.get(ctx, {}).keys())
        timestamps = {s: self._entity_timestamp(s, ctx) for s in subjects}
        doomed = {s for s, ts in timestamps.items() if ts is not None and ts < cutoff}

        # orphan sweep: undated children (forecast lists, prediction rows)
        # whose every inbound link inside the context comes from dropped records
        changed = True
        while changed:
            changed = False
            inbound: dict = {}
            for s in subjects:
                if s in doomed:
                    continue
                for objs in self._cspo[ctx][s].values():
                    for o in objs:
                        if isinstance(o, Iri):
                            inbound.setdefault(o, set()).add(s)
            for s in subjects:
                if s in doomed or timestamps[s] is not None:
                    continue
                dropped_refs = any(True for q in self.match(object=s, context=ctx)
                                   if q.subject in doomed)
                if dropped_refs and not inbound.get(s):
                    doomed.add(s)
                    changed = True

        dropped = [q for s in doomed for q in self.match(subject=s, context=ctx)]
        samples = self._collect_samples(ctx, doomed, timestamps)
        new_quads, retired = self._aggregate_quads(ctx, samples, aggregation)
        return dropped, new_quads, retired

    def _collect_samples(self, ctx, doomed, timestamps):
        """(anchor, property) -> list of (timestamp, value) over dropped records."""
        samples: dict = {}
        for s in sorted(doomed):
            ts = timestamps.get(s)
            if ts is None:
                continue
            preds = self._cspo[ctx][s]
            anchor = s
            for prop in ANCHOR_PROPERTIES:
                objs = preds.get(schema_iri(prop))
                if objs:
                    anchors = [o for o in sorted(objs, key=str) if isinstance(o, Iri)]
                    if anchors:
                        anchor = anchors[0]
                        break
            for prop in SAMPLE_PROPERTIES:
                for o in preds.get(schema_iri(prop), ()):
                    if isinstance(o, Literal) and o.datatype in (Datatype.INTEGER,
                                                                 Datatype.DECIMAL):
                        samples.setdefault((anchor, prop), []).append((ts, float(o.to_python())))
        return samples

    def _aggregate_quads(self, ctx, samples, aggregation):
        out = []
        retired = []
        for (anchor, prop), rows in sorted(samples.items(), key=lambda t: (str(t[0][0]), t[0][1])):
            by_period: dict = {}
            for ts, v in rows:
                by_period.setdefault(period_key(ts, aggregation), []).append(v)
            for pk in sorted(by_period):
                values = by_period[pk]
                stat = Iri(f"{anchor}/stat/{aggregation}/{pk}/{prop}")
                count, mean, vmin, vmax, stale = self._merge_existing_stat(stat, ctx, values)
                retired.extend(stale)
                out.extend([
                    Quad(stat, _TYPE, schema_iri("StatisticalData"), ctx),
                    Quad(stat, schema_iri("aggregationPeriod"), Literal.string(aggregation), ctx),
                    Quad(stat, schema_iri("periodKey"), Literal.string(pk), ctx),
                    Quad(stat, schema_iri("measuredProperty"), Literal.string(prop), ctx),
                    Quad(stat, schema_iri("statCount"), Literal.integer(count), ctx),
                    Quad(stat, schema_iri("statMean"), Literal.decimal(mean), ctx),
                    Quad(stat, schema_iri("statMin"), Literal.decimal(vmin), ctx),
                    Quad(stat, schema_iri("statMax"), Literal.decimal(vmax), ctx),
                    Quad(anchor, schema_iri("hasStatistic"), stat, ctx),
                ])
        return out, retired

    def _merge_existing_stat(self, stat: Iri, ctx: Iri, values: list):
        """Fold new samples into an existing period aggregate, if any.

        Pure planning step: returns the merged figures plus the superseded
        statements to retire; the caller applies all mutations at once.
        """
        count = len(values)
        mean = math.fsum(values) / count
        vmin, vmax = min(values), max(values)
        stale: list = []
        preds = self._cspo.get(ctx, {}).get(stat)
        if preds:
            def one(prop):
                objs = preds.get(schema_iri(prop), ())
                for o in sorted(objs, key=str):
                    if isinstance(o, Literal):
                        return o.to_python()
                return None
            old_count, old_mean = one("statCount"), one("statMean")
            old_min, old_max = one("statMin"), one("statMax")
            if old_count:
                total = old_count + count
                mean = (old_mean * old_count + math.fsum(values)) / total
                vmin = min(vmin, old_min if old_min is not None else vmin)
                vmax = max(vmax, old_max if old_max is not None else vmax)
                count = total
                stale = self.match(subject=stat, context=ctx)
        return count, mean, vmin, vmax, stale

    # -- persistence ----------------------------------------------------------

    def export_text(self, context: Optional[Iri] = None) -> str:
        """Line-per-statement dump, sorted; loadable back via insert."""
        return quads_to_text(self.match(context=context))

    def save(self, path) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.export_text(), encoding="utf-8")
        side = p.with_suffix(p.suffix + ".contexts.tsv")
        lines = [f"{ctx.value}\t{info.macroclass.value}\t{info.kind}"
                 for ctx, info in sorted(self._contexts.items())]
        side.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "QuadStore":
        p = Path(path)
        store = cls()
        if p.exists():
            store.insert(quads_from_text(p.read_text(encoding="utf-8")))
        side = p.with_suffix(p.suffix + ".contexts.tsv")
        if side.exists():
            for line in side.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                ctx, macro, kind = line.split("\t")
                store.register_context(Iri(ctx), MacroClass(macro), kind)
        return store
