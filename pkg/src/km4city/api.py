"""HTTP facade over the quad store, the ingestion pipeline and the reconciler.

One process holds one ApplicationState: the store, an optional pipeline for
dataset introspection, the reconciliation review queue and an append-only
audit log.  Every state-changing route accepts an X-Request-Token header and
replays the recorded response when the same token comes back, so a client
retrying after a lost reply cannot apply a decision twice.  Review decisions
carry the operator id in the X-Operator header; there is no further
authentication.
"""

import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .addresses import CivicColor, CivicNumber, RawAddress
from .evaluate import MetricsReport, score
from .ingestion import IngestionPipeline
from .quadstore import QuadStore
from .reconcile import (ALL_METHOD_NAMES, DISCOVERY_METHODS, EXACT_METHOD_NAME,
                        RECONCILIATION_CONTEXT, CatalogRoad, CatalogStreetNumber,
                        MatchCandidate, Metric, MethodConfig, ReconcileError,
                        ReviewItem, ReviewState, TargetService, ToponymCatalog,
                        apply_decision, reconcile_corpus, string_distance)
from .schema import MacroClass, Schema, load_schema
from .terms import (DATA_NS, OWL_SAME_AS, RDF_TYPE, GeoPoint, Iri, Literal,
                    Quad, TermError, schema_iri)

TOKEN_HEADER = "X-Request-Token"
OPERATOR_HEADER = "X-Operator"
DEFAULT_PAGE = 50
MAX_PAGE = 500


# --- application state -----------------------------------------------------------------------

@dataclass
class AuditEntry:
    """One committed review decision, kept for traceability."""
    item_id: str
    action: str
    candidate_index: Optional[int]
    operator: str
    at: datetime
    quads_added: int


@dataclass
class QueueEntry:
    """A review item plus the run context needed for listing and filtering."""
    id: str
    item: ReviewItem
    run_method: str
    municipality: str

    def sort_key(self):
        # open work first, skipped items sink to the tail, decided ones last
        if self.item.state is ReviewState.PENDING:
            bucket = 0
        elif self.item.state is ReviewState.SKIPPED:
            bucket = 1
        else:
            bucket = 2
        return (bucket, self.item.top_score, self.id)


class ApplicationState:
    """Shared mutable state behind the HTTP routes.

    gold is optional; without it the metric blocks in responses are null and
    the review loop still works.  Reconciliation runs accumulate: one queue
    entry per (service, method), reruns replace open entries and leave
    decided ones alone so an operator verdict is never asked twice.
    """

    def __init__(self, store: Optional[QuadStore] = None,
                 schema: Optional[Schema] = None,
                 pipeline: Optional[IngestionPipeline] = None,
                 gold: Optional[dict] = None):
        if pipeline is not None and store is not None and pipeline.store is not store:
            raise ValueError("pipeline must share the served store")
        if pipeline is not None and store is None:
            store = pipeline.store
        self.store = store if store is not None else QuadStore()
        self.schema = schema if schema is not None else load_schema()
        self.pipeline = pipeline
        self.gold = dict(gold) if gold else {}
        self.entries: dict = {}
        self.auto_links: dict = {}
        self.audit_log: list = []
        self.services_by_iri: dict = {}
        self.roads_by_iri: dict = {}
        self.numbers_by_iri: dict = {}
        self._tokens: dict = {}
        self._seq = 0
        self.lock = threading.RLock()

    def next_id(self) -> str:
        self._seq += 1
        return f"rv{self._seq:05d}"

    def accepted_links(self) -> list:
        return [e.item.chosen for e in self.entries.values()
                if e.item.state is ReviewState.ACCEPTED and e.item.chosen]

    def current_links(self) -> list:
        merged = dict(self.auto_links)
        for cand in self.accepted_links():
            merged[(cand.service, cand.road, cand.street_number)] = cand
        return list(merged.values())

    def live_metrics(self) -> Optional[MetricsReport]:
        if not self.gold:
            return None
        return score(self.current_links(), self.gold)

    def before_manual(self) -> Optional[MetricsReport]:
        if not self.gold:
            return None
        return score(list(self.auto_links.values()), self.gold)

    def open_count(self) -> int:
        return sum(1 for e in self.entries.values()
                   if e.item.state in (ReviewState.PENDING, ReviewState.SKIPPED))

    def state_count(self, state: ReviewState) -> int:
        return sum(1 for e in self.entries.values() if e.item.state is state)


# --- store extraction ------------------------------------------------------------------------

def _first_literal(store: QuadStore, subject: Iri, prop: str) -> Optional[str]:
    for q in store.match(subject=subject, predicate=schema_iri(prop)):
        if isinstance(q.object, Literal):
            return q.object.lexical
    return None


def _first_object(store: QuadStore, subject: Iri, prop: str) -> Optional[Iri]:
    for q in store.match(subject=subject, predicate=schema_iri(prop)):
        if isinstance(q.object, Iri):
            return q.object
    return None


def services_from_store(store: QuadStore, schema: Schema) -> list:
    """Reconciliation targets: every typed service with an address or a position."""
    class_iris = {schema_iri(n) for n in schema.subclasses_of("Service")}
    subjects = sorted({q.subject for q in store.match(predicate=Iri(RDF_TYPE))
                       if q.object in class_iris})
    services = []
    for subject in subjects:
        street = _first_literal(store, subject, "streetAddress")
        civic = _first_literal(store, subject, "civicNumber") or ""
        municipality = _first_literal(store, subject, "municipalityName") or ""
        cap = _first_literal(store, subject, "cap")
        lat = _first_literal(store, subject, "lat")
        long = _first_literal(store, subject, "long")
        address = None
        if street and street.strip():
            address = RawAddress(street, civic, municipality, cap)
        coordinates = None
        if lat is not None and long is not None:
            try:
                coordinates = GeoPoint(float(lat), float(long))
            except (TermError, ValueError):
                coordinates = None
        if address is None and coordinates is None:
            continue
        services.append(TargetService(subject, address, coordinates))
    return services


def catalog_from_store(store: QuadStore) -> ToponymCatalog:
    """Snapshot every named road with its civic numbers and municipality."""
    roads = []
    for q in store.match(predicate=Iri(RDF_TYPE), object=schema_iri("Road")):
        road = q.subject
        official = _first_literal(store, road, "officialName")
        if not official:
            continue
        alternative = _first_literal(store, road, "alternativeName")
        muni_iri = _first_object(store, road, "inMunicipalityOf")
        municipality = ""
        if muni_iri is not None:
            municipality = _first_literal(store, muni_iri, "name") or muni_iri.local_name
        numbers = []
        for nq in store.match(subject=road, predicate=schema_iri("hasStreetNumber")):
            sn = nq.object
            value = _first_literal(store, sn, "number")
            if value is None:
                continue
            extension = _first_literal(store, sn, "extension")
            code = _first_literal(store, sn, "classCode")
            color = CivicColor(code) if code else CivicColor.NONE
            numbers.append(CatalogStreetNumber(sn, CivicNumber(int(value), extension, color)))
        numbers.sort(key=lambda n: n.iri)
        roads.append(CatalogRoad(road, municipality, official, alternative, tuple(numbers)))
    roads.sort(key=lambda r: r.iri)
    return ToponymCatalog(roads)


# --- serialization ---------------------------------------------------------------------------

def _object_json(obj) -> dict:
    if isinstance(obj, Iri):
        return {"kind": "iri", "value": obj.value}
    return {"kind": "literal", "value": obj.lexical, "datatype": obj.datatype.value}


def _quad_json(q: Quad) -> dict:
    return {"subject": q.subject.value, "predicate": q.predicate.value,
            "object": _object_json(q.object), "context": q.context.value}


def _metrics_json(report: Optional[MetricsReport]) -> Optional[dict]:
    if report is None:
        return None
    out = {"precision": report.precision, "recall": report.recall, "f1": report.f1,
           "tp": report.counts.tp, "fp": report.counts.fp, "fn": report.counts.fn,
           "noPredictions": report.no_predictions}
    if report.by_level:
        out["byLevel"] = {name: _metrics_json(sub)
                          for name, sub in sorted(report.by_level.items())}
    return out


def _civic_text(civic: CivicNumber) -> str:
    text = "" if civic.value is None else str(civic.value)
    if civic.suffix:
        text = f"{text}/{civic.suffix}" if text else civic.suffix
    if civic.color is CivicColor.RED:
        text += " red"
    return text


def _candidate_json(state: ApplicationState, service: Optional[TargetService],
                    cand: MatchCandidate) -> dict:
    road = state.roads_by_iri.get(cand.road)
    civic = None
    if cand.street_number is not None:
        number = state.numbers_by_iri.get(cand.street_number)
        civic = _civic_text(number.civic) if number else cand.street_number.local_name
    similarity = {}
    if service is not None and service.address is not None and road is not None:
        target = service.address.street_text
        names = [road.official_name] + ([road.alternative_name]
                                        if road.alternative_name else [])
        for metric in Metric:
            similarity[metric.value] = max(string_distance(metric, target, name)
                                           for name in names)
    return {"road": cand.road.value,
            "officialName": road.official_name if road else cand.road.local_name,
            "alternativeName": road.alternative_name if road else None,
            "municipality": road.municipality if road else "",
            "streetNumber": cand.street_number.value if cand.street_number else None,
            "civic": civic,
            "level": cand.level.value,
            "method": cand.method.value,
            "score": cand.score,
            "similarity": similarity}


def _item_json(state: ApplicationState, entry: QueueEntry) -> dict:
    item = entry.item
    service = state.services_by_iri.get(item.service)
    address = None
    if service is not None and service.address is not None:
        address = {"street": service.address.street_text,
                   "civic": service.address.civic_text,
                   "municipality": service.address.municipality}
    return {"id": entry.id,
            "service": item.service.value,
            "serviceAddress": address,
            "municipality": entry.municipality,
            "runMethod": entry.run_method,
            "state": item.state.value,
            "topScore": item.top_score,
            "decidedBy": item.decided_by,
            "decidedAt": item.decided_at.isoformat() if item.decided_at else None,
            "candidates": [_candidate_json(state, service, c) for c in item.candidates]}


# --- request plumbing ------------------------------------------------------------------------

def _bad_request(message: str):
    raise HTTPException(status_code=400, detail=message)


def _parse_iri(value: str, param: str) -> Iri:
    if "://" not in value:
        _bad_request(f"{param}: not an absolute IRI: {value!r}")
    try:
        return Iri(value)
    except TermError as exc:
        _bad_request(f"{param}: {exc}")


def _page_bounds(cursor: Optional[str], limit: int, total: int) -> tuple:
    if not 1 <= limit <= MAX_PAGE:
        _bad_request(f"limit must be between 1 and {MAX_PAGE}")
    start = 0
    if cursor is not None:
        try:
            start = int(cursor)
        except ValueError:
            _bad_request(f"cursor: malformed: {cursor!r}")
        if start < 0:
            _bad_request("cursor: malformed: negative offset")
    end = start + limit
    next_cursor = str(end) if end < total else None
    return start, end, next_cursor


def _parse_band(band: str) -> tuple:
    lo, sep, hi = band.partition("-")
    try:
        if not sep:
            raise ValueError
        low, high = float(lo), float(hi)
    except ValueError:
        _bad_request(f"scoreBand: expected lo-hi, got {band!r}")
    if low > high:
        _bad_request("scoreBand: lower bound above upper bound")
    return low, high


class ReconcileRunRequest(BaseModel):
    method: str = "kb-levenshtein"
    streetEditMax: Optional[int] = None
    acceptThreshold: Optional[float] = None
    reviewThreshold: Optional[float] = None
    locationWeight: Optional[float] = None
    streetWeight: Optional[float] = None


class DecisionRequest(BaseModel):
    action: str
    candidateIndex: Optional[int] = None
    operator: Optional[str] = None


# --- the application -------------------------------------------------------------------------

def create_app(state: Optional[ApplicationState] = None) -> FastAPI:
    """Build the HTTP application around one shared state."""
    if state is None:
        state = ApplicationState()
    app = FastAPI(title="km4city", docs_url=None, redoc_url=None)
    app.state.km4 = state
    # the review client is usually served from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["GET", "POST"],
                       allow_headers=["Content-Type", TOKEN_HEADER, OPERATOR_HEADER])

    def replay(request: Request):
        token = request.headers.get(TOKEN_HEADER)
        if token:
            recorded = state._tokens.get(token)
            if recorded is not None:
                status_code, payload = recorded
                return JSONResponse(status_code=status_code, content=payload)
        return None

    def record(request: Request, payload: dict, status_code: int = 200):
        token = request.headers.get(TOKEN_HEADER)
        if token:
            state._tokens[token] = (status_code, payload)
        return JSONResponse(status_code=status_code, content=payload)

    @app.get("/health")
    def health():
        return {"status": "ok", "quads": len(state.store),
                "contexts": len(state.store.contexts()),
                "reviewOpen": state.open_count()}

    @app.get("/datasets")
    def datasets():
        if state.pipeline is None:
            return {"datasets": []}
        views = [state.pipeline.dataset_view(ds) for ds in state.pipeline.dataset_ids()]
        return {"datasets": [{"id": v.id, "status": v.status,
                              "context": v.context.value,
                              "processType": v.process_type,
                              "macroclass": v.macroclass,
                              "stagedRows": v.staged_rows,
                              "quadCount": v.quad_count} for v in views]}

    @app.get("/quads")
    def quads(s: Optional[str] = None, p: Optional[str] = None,
              o: Optional[str] = None, olit: Optional[str] = None,
              c: Optional[str] = None, closure: bool = False,
              cursor: Optional[str] = None, limit: int = DEFAULT_PAGE):
        subject = _parse_iri(s, "s") if s is not None else None
        predicate = _parse_iri(p, "p") if p is not None else None
        context = _parse_iri(c, "c") if c is not None else None
        if o is not None and olit is not None:
            _bad_request("o and olit are mutually exclusive")
        obj = None
        if o is not None:
            obj = _parse_iri(o, "o")
        elif olit is not None:
            obj = Literal.string(olit)
        lookup = state.store.match_with_closure if closure else state.store.match
        rows = lookup(subject=subject, predicate=predicate, object=obj, context=context)
        start, end, next_cursor = _page_bounds(cursor, limit, len(rows))
        return {"quads": [_quad_json(q) for q in rows[start:end]],
                "total": len(rows), "nextCursor": next_cursor}

    @app.get("/geo/near")
    def geo_near(lat: float, long: float, k: int = 10,
                 maxDistance: Optional[float] = None,
                 classFilter: Optional[str] = None):
        if k < 1:
            _bad_request("k must be at least 1")
        if maxDistance is not None and maxDistance < 0:
            _bad_request("maxDistance must be non-negative")
        try:
            point = GeoPoint(lat, long)
        except TermError as exc:
            _bad_request(str(exc))
        names = None
        if classFilter is not None:
            if classFilter not in state.schema:
                _bad_request(f"classFilter: unknown class {classFilter!r}")
            names = state.schema.subclasses_of(classFilter)
        hits = state.store.geo_near(point, k=k, max_distance=maxDistance,
                                    class_filter=names)
        results = []
        for hit in hits:
            types = sorted(q.object.local_name
                           for q in state.store.match(subject=hit.iri,
                                                      predicate=Iri(RDF_TYPE))
                           if isinstance(q.object, Iri))
            known = [t for t in types if t in state.schema]
            # report the most derived class the schema knows about
            display = max(known, key=lambda n: (len(state.schema.ancestry(n)), n),
                          default=None) if known else (types[0] if types else None)
            results.append({"iri": hit.iri.value, "distance": hit.distance,
                            "lat": hit.point.lat, "long": hit.point.long,
                            "class": display, "classes": types,
                            "name": _first_literal(state.store, hit.iri, "name")})
        return {"results": results}

    @app.post("/reconcile/run")
    def reconcile_run(body: ReconcileRunRequest, request: Request):
        replayed = replay(request)
        if replayed is not None:
            return replayed
        if body.method not in ALL_METHOD_NAMES:
            _bad_request(f"method: expected one of {', '.join(ALL_METHOD_NAMES)}")
        overrides = {"street_edit_max": body.streetEditMax,
                     "accept_threshold": body.acceptThreshold,
                     "review_threshold": body.reviewThreshold,
                     "location_weight": body.locationWeight,
                     "street_weight": body.streetWeight}
        kwargs = {k: v for k, v in overrides.items() if v is not None}
        if body.method in DISCOVERY_METHODS:
            kwargs["metric"] = DISCOVERY_METHODS[body.method]
        try:
            cfg = MethodConfig(**kwargs)
        except ReconcileError as exc:
            _bad_request(str(exc))
        with state.lock:
            services = services_from_store(state.store, state.schema)
            catalog = catalog_from_store(state.store)
            result = reconcile_corpus(services, catalog, body.method, cfg)
            state.services_by_iri.update({svc.iri: svc for svc in services})
            state.roads_by_iri.update({road.iri: road for road in catalog.roads})
            state.numbers_by_iri.update({n.iri: n for road in catalog.roads
                                         for n in road.street_numbers})
            if state.store.context_info(RECONCILIATION_CONTEXT) is None:
                state.store.register_context(RECONCILIATION_CONTEXT,
                                             MacroClass.STREET_GUIDE,
                                             "reconciliation")
            inserted = 0
            conflicts = 0
            for link in result.links:
                try:
                    inserted += len(apply_decision(link, state.store))
                except ReconcileError:
                    conflicts += 1
                    continue
                state.auto_links[(link.service, link.road, link.street_number)] = link
            decided = set()
            open_by_key = {}
            for existing in state.entries.values():
                key = (existing.item.service, existing.run_method)
                if existing.item.state in (ReviewState.ACCEPTED, ReviewState.REJECTED):
                    decided.add(key)
                else:
                    open_by_key[key] = existing.id
            queued = 0
            for item in result.review_queue:
                key = (item.service, body.method)
                if key in decided:
                    continue
                stale = open_by_key.get(key)
                if stale is not None:
                    del state.entries[stale]
                service = state.services_by_iri.get(item.service)
                municipality = ""
                if service is not None and service.address is not None:
                    municipality = service.address.municipality
                entry = QueueEntry(state.next_id(), item, body.method, municipality)
                state.entries[entry.id] = entry
                queued += 1
            summary = result.summary
            payload = {"method": body.method,
                       "total": summary.total,
                       "autoAccepted": summary.auto_accepted,
                       "review": summary.review,
                       "noMatch": summary.no_match,
                       "numberLevel": summary.number_level,
                       "streetLevel": summary.street_level,
                       "unresolvedWithCoordinates": summary.unresolved_with_coordinates,
                       "queued": queued,
                       "conflicts": conflicts,
                       "quadsAdded": inserted,
                       "liveMetrics": _metrics_json(state.live_metrics())}
            return record(request, payload)

    def _ordered_entries() -> list:
        return sorted(state.entries.values(), key=QueueEntry.sort_key)

    @app.get("/review")
    def review_list(cursor: Optional[str] = None, limit: int = DEFAULT_PAGE,
                    method: Optional[str] = None, municipality: Optional[str] = None,
                    scoreBand: Optional[str] = None, status: str = "open"):
        allowed = ("open", "all") + tuple(s.value for s in ReviewState)
        if status not in allowed:
            _bad_request(f"status: expected one of {', '.join(allowed)}")
        band = _parse_band(scoreBand) if scoreBand is not None else None
        entries = []
        for entry in _ordered_entries():
            if status == "open":
                if entry.item.state not in (ReviewState.PENDING, ReviewState.SKIPPED):
                    continue
            elif status != "all" and entry.item.state.value != status:
                continue
            if method is not None and entry.run_method != method:
                continue
            if municipality is not None and entry.municipality != municipality:
                continue
            if band is not None and not band[0] <= entry.item.top_score <= band[1]:
                continue
            entries.append(entry)
        start, end, next_cursor = _page_bounds(cursor, limit, len(entries))
        return {"items": [_item_json(state, e) for e in entries[start:end]],
                "total": len(entries), "nextCursor": next_cursor,
                "pending": state.open_count(),
                "liveMetrics": _metrics_json(state.live_metrics())}

    @app.post("/review/{item_id}/decision")
    def review_decide(item_id: str, body: DecisionRequest, request: Request):
        replayed = replay(request)
        if replayed is not None:
            return replayed
        entry = state.entries.get(item_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown review item: {item_id}")
        operator = request.headers.get(OPERATOR_HEADER) or body.operator
        if not operator:
            _bad_request(f"operator required: send {OPERATOR_HEADER} or body.operator")
        if body.action not in ("accept", "reject", "skip"):
            _bad_request("action: expected accept, reject or skip")
        with state.lock:
            item = entry.item
            if item.state in (ReviewState.ACCEPTED, ReviewState.REJECTED):
                raise HTTPException(
                    status_code=409,
                    detail=f"{item_id} already decided: {item.state.value}")
            now = datetime.now(timezone.utc)
            added = 0
            if body.action == "accept":
                if body.candidateIndex is None:
                    _bad_request("candidateIndex required for accept")
                if not 0 <= body.candidateIndex < len(item.candidates):
                    _bad_request(f"candidateIndex out of range: {body.candidateIndex}")
                before = (item.state, item.chosen, item.decided_by, item.decided_at)
                item.accept(body.candidateIndex, operator, now)
                try:
                    added = len(apply_decision(item, state.store))
                except ReconcileError as exc:
                    # leave the item open; the store already holds a rival link
                    item.state, item.chosen, item.decided_by, item.decided_at = before
                    raise HTTPException(status_code=409, detail=str(exc))
            elif body.action == "reject":
                item.reject(operator, now)
            else:
                item.skip(operator, now)
            state.audit_log.append(AuditEntry(item_id, body.action,
                                              body.candidateIndex if body.action == "accept"
                                              else None,
                                              operator, now, added))
            payload = {"item": _item_json(state, entry),
                       "quadsAdded": added,
                       "pending": state.open_count(),
                       "liveMetrics": _metrics_json(state.live_metrics())}
            return record(request, payload)

    @app.get("/metrics")
    def metrics():
        return {"goldSize": len(state.gold),
                "autoLinks": len(state.auto_links),
                "acceptedLinks": len(state.accepted_links()),
                "pending": state.open_count(),
                "skipped": state.state_count(ReviewState.SKIPPED),
                "rejected": state.state_count(ReviewState.REJECTED),
                "beforeManual": _metrics_json(state.before_manual()),
                "current": _metrics_json(state.live_metrics())}

    return app


def serve(state: ApplicationState, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the facade under uvicorn; blocks until interrupted."""
    import uvicorn
    uvicorn.run(create_app(state), host=host, port=port, log_level="warning")
