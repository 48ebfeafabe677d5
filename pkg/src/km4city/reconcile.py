"""Service-to-street-guide reconciliation.

Two families of matchers over an immutable toponym catalog:

* three exact steps (plain normalized name, qualifier-expanded name, unique
  last word), each tried at street-number level before street level;
* link discovery: municipality blocking, then a weighted score combining the
  location match with a string similarity over the street name, with a hard
  edit-distance exclusion whatever the metric.

Decisions route to auto-accept, a manual review queue, or no-match; accepted
links materialize as a sameAs statement plus hasAccess (number level) or
isInRoad (street level) in the reconciliation context.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

from .addresses import (
    CivicColor, CivicNumber, NormalizedAddress, QualifierTable, RawAddress,
    name_orderings, normalize,
)
from .terms import GeoPoint, Iri, OWL_SAME_AS, Quad, context_iri, schema_iri


class ReconcileError(ValueError):
    pass


TIE_GAP = 0.05
RECONCILIATION_CONTEXT = context_iri("reconciliation")

_EMPTY_TABLE = QualifierTable({})


class Level(Enum):
    NUMBER = "number"
    STREET = "street"


class Method(Enum):
    EXACT1 = "exact1"
    EXACT2 = "exact2"
    EXACT3 = "exact3"
    LEVENSHTEIN = "levenshtein"
    DICE = "dice"
    JACCARD = "jaccard"
    KB_LEVENSHTEIN = "kbLevenshtein"
    MANUAL = "manual"


class Metric(Enum):
    LEVENSHTEIN = "levenshtein"
    DICE = "dice"
    JACCARD = "jaccard"
    KB_LEVENSHTEIN = "kb-levenshtein"


_METRIC_METHOD = {
    Metric.LEVENSHTEIN: Method.LEVENSHTEIN,
    Metric.DICE: Method.DICE,
    Metric.JACCARD: Method.JACCARD,
    Metric.KB_LEVENSHTEIN: Method.KB_LEVENSHTEIN,
}

_EXACT_METHODS = (Method.EXACT1, Method.EXACT2, Method.EXACT3)


# --- string metrics -----------------------------------------------------------

@lru_cache(maxsize=262144)
def levenshtein_distance(a: str, b: str, cutoff: Optional[int] = None) -> int:
    """Unit-cost edit distance; with cutoff, any value above it is cutoff+1.

    The cutoff variant abandons a row once its minimum exceeds the cutoff,
    which is safe because every edit path visits one cell per row.
    """
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if cutoff is not None and abs(la - lb) > cutoff:
        return cutoff + 1
    if la == 0 or lb == 0:
        d = max(la, lb)
        return d if cutoff is None or d <= cutoff else cutoff + 1
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        row_min = i
        ai = a[i - 1]
        for j in range(1, lb + 1):
            cost = 0 if ai == b[j - 1] else 1
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
            cur[j] = v
            if v < row_min:
                row_min = v
        if cutoff is not None and row_min > cutoff:
            return cutoff + 1
        prev = cur
    d = prev[lb]
    return d if cutoff is None or d <= cutoff else cutoff + 1


def _bigrams(s: str) -> frozenset:
    return frozenset(s[i:i + 2] for i in range(len(s) - 1))


def _lev_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def _dice_similarity(a: str, b: str) -> float:
    ba, bb = _bigrams(a), _bigrams(b)
    if not ba and not bb:
        return 1.0 if a == b else 0.0
    return 2.0 * len(ba & bb) / (len(ba) + len(bb))


def _jaccard_similarity(a: str, b: str) -> float:
    ta, tb = set(a.split()), set(b.split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def _kb_forms(s: str, table: Optional[QualifierTable]) -> list:
    """Canonical street texts for every admissible token ordering."""
    if not s.strip():
        return [""]
    addr = normalize(RawAddress(s), table)
    out = []
    for tokens in name_orderings(addr):
        out.append((addr.qualifier + " " + " ".join(tokens)).strip())
    return out


def _kb_similarity(a: str, b: str, table: Optional[QualifierTable] = None) -> float:
    best = 0.0
    for fa in _kb_forms(a, table):
        for fb in _kb_forms(b, table):
            best = max(best, _lev_similarity(fa, fb))
    return best


def string_distance(metric: Metric, a: str, b: str) -> float:
    """Similarity in [0,1]; symmetric; 1 for identical strings.

    levenshtein: 1 - d/max(|a|,|b|); dice: character-bigram sets without
    padding; jaccard: whitespace-token sets; kb-levenshtein: best levenshtein
    similarity over fully normalized forms and their name/surname orderings.
    Two empty strings score 1 by convention.  Raw edit counts come from
    levenshtein_distance.
    """
    if metric is Metric.LEVENSHTEIN:
        return _lev_similarity(a, b)
    if metric is Metric.DICE:
        return _dice_similarity(a, b)
    if metric is Metric.JACCARD:
        return _jaccard_similarity(a, b)
    if metric is Metric.KB_LEVENSHTEIN:
        return _kb_similarity(a, b)
    raise ReconcileError(f"unknown metric: {metric!r}")


# --- domain types ---------------------------------------------------------------

@dataclass(frozen=True)
class TargetService:
    iri: Iri
    address: Optional[RawAddress] = None
    coordinates: Optional[GeoPoint] = None

    def __post_init__(self):
        if self.address is None and self.coordinates is None:
            raise ReconcileError(f"{self.iri}: needs an address or coordinates")


@dataclass(frozen=True)
class CatalogStreetNumber:
    iri: Iri
    civic: CivicNumber


@dataclass(frozen=True)
class CatalogRoad:
    iri: Iri
    municipality: str
    official_name: str
    alternative_name: Optional[str] = None
    street_numbers: tuple = ()


@dataclass(frozen=True)
class MatchCandidate:
    service: Iri
    road: Iri
    street_number: Optional[Iri]
    level: Level
    method: Method
    score: float

    def __post_init__(self):
        if self.level is Level.NUMBER and self.street_number is None:
            raise ReconcileError("number-level candidate needs a street number")
        if self.method in _EXACT_METHODS and self.score != 1.0:
            raise ReconcileError("exact methods always score 1")
        if not 0.0 <= self.score <= 1.0:
            raise ReconcileError(f"score out of range: {self.score}")


@dataclass(frozen=True)
class MethodConfig:
    metric: Metric = Metric.LEVENSHTEIN
    street_edit_max: int = 5
    location_weight: float = 0.5
    street_weight: float = 0.5
    accept_threshold: float = 0.95
    review_threshold: float = 0.60

    def __post_init__(self):
        if not 0.0 <= self.review_threshold <= self.accept_threshold <= 1.0:
            raise ReconcileError("thresholds must satisfy 0 <= review <= accept <= 1")
        if self.street_edit_max < 0:
            raise ReconcileError("street_edit_max must be >= 0")
        if self.location_weight < 0 or self.street_weight < 0 \
                or self.location_weight + self.street_weight == 0:
            raise ReconcileError("weights must be non-negative with a positive sum")


def civic_matches(service_civic: CivicNumber, catalog_civic: CivicNumber) -> bool:
    """Value equality within the same numbering system (red vs black)."""
    if service_civic.value is None or catalog_civic.value is None:
        return False
    if service_civic.value != catalog_civic.value:
        return False
    return (service_civic.color is CivicColor.RED) == (catalog_civic.color is CivicColor.RED)


class ToponymCatalog:
    """Road snapshot with names pre-normalized and indexed per municipality."""

    def __init__(self, roads: Iterable[CatalogRoad],
                 table: Optional[QualifierTable] = None):
        self.table = table if table is not None else QualifierTable.seed()
        self.roads = tuple(roads)
        self._by_muni: dict = {}
        self._by_basic: dict = {}
        self._by_expanded: dict = {}
        self._by_lastword: dict = {}
        self._expanded_forms: dict = {}
        for road in self.roads:
            muni = _muni_key(road.municipality)
            self._by_muni.setdefault(muni, []).append(road)
            names = [road.official_name]
            if road.alternative_name:
                names.append(road.alternative_name)
            expanded_forms = []
            for name in names:
                basic = normalize(RawAddress(name), _EMPTY_TABLE)
                expanded = normalize(RawAddress(name), self.table)
                expanded_forms.append(expanded)
                self._add(self._by_basic, (muni, basic.street_text), road)
                self._add(self._by_expanded, (muni, expanded.street_text), road)
                if expanded.last_word_key:
                    self._add(self._by_lastword, (muni, expanded.last_word_key), road)
            self._expanded_forms[road.iri] = tuple(expanded_forms)

    @staticmethod
    def _add(index, key, road):
        bucket = index.setdefault(key, [])
        if road not in bucket:
            bucket.append(road)

    def roads_in(self, municipality: str) -> list:
        return list(self._by_muni.get(_muni_key(municipality), ()))

    def lookup_basic(self, municipality_key, street_text) -> list:
        return list(self._by_basic.get((municipality_key, street_text), ()))

    def lookup_expanded(self, municipality_key, street_text) -> list:
        return list(self._by_expanded.get((municipality_key, street_text), ()))

    def lookup_lastword(self, municipality_key, key) -> list:
        return list(self._by_lastword.get((municipality_key, key), ()))

    def expanded_forms(self, road: CatalogRoad) -> tuple:
        return self._expanded_forms[road.iri]


def _muni_key(text: str) -> str:
    from .addresses import fold_text
    return " ".join(fold_text(text).split())


# --- exact reconciliation ---------------------------------------------------------

def _matching_street_number(road: CatalogRoad, civics) -> Optional[Iri]:
    hits = [sn.iri for sn in road.street_numbers
            if any(civic_matches(c, sn.civic) for c in civics)]
    return min(hits) if hits else None


def reconcile_exact(service: TargetService,
                    catalog: ToponymCatalog) -> Optional[MatchCandidate]:
    """Three exact steps, number level first, then street level.

    Steps 1 and 2 demand a single road matching the (possibly expanded)
    normalized name; at number level the civic filter may disambiguate roads
    that share a name.  Step 3 demands that the last word alone identify a
    single road in the municipality; ambiguity fails a step rather than
    guessing.
    """
    if service.address is None:
        return None
    svc_basic = normalize(service.address, _EMPTY_TABLE)
    svc_expanded = normalize(service.address, catalog.table)
    muni = svc_basic.municipality
    if not muni:
        return None
    civics = [c for c in svc_expanded.civics if c.value is not None]

    steps = (
        (Method.EXACT1, lambda: catalog.lookup_basic(muni, svc_basic.street_text)),
        (Method.EXACT2, lambda: catalog.lookup_expanded(muni, svc_expanded.street_text)),
        (Method.EXACT3, lambda: catalog.lookup_lastword(muni, svc_expanded.last_word_key)
            if svc_expanded.last_word_key else []),
    )

    for level in (Level.NUMBER, Level.STREET):
        if level is Level.NUMBER and not civics:
            continue
        for method, lookup in steps:
            roads = lookup()
            if method is Method.EXACT3:
                # the last word must be unique before anything else
                if len(roads) != 1:
                    continue
            if level is Level.NUMBER:
                hits = [(road, _matching_street_number(road, civics))
                        for road in roads]
                hits = [(road, sn) for road, sn in hits if sn is not None]
                if len(hits) == 1:
                    road, sn = hits[0]
                    return MatchCandidate(service.iri, road.iri, sn,
                                          Level.NUMBER, method, 1.0)
            else:
                if len(roads) == 1:
                    return MatchCandidate(service.iri, roads[0].iri, None,
                                          Level.STREET, method, 1.0)
    return None


# --- link discovery ------------------------------------------------------------------

def link_discover(service: TargetService, catalog: ToponymCatalog,
                  cfg: MethodConfig) -> list:
    """Municipality-blocked candidates ranked by the weighted score.

    Every metric shares the hard exclusion on street edit distance; the
    kb variant measures it on the best normalized/reordered forms, so the
    reorderings it is meant to recover stay inside the threshold.
    """
    if service.address is None:
        return []
    svc_basic = normalize(service.address, _EMPTY_TABLE)
    svc_expanded = normalize(service.address, catalog.table)
    muni = svc_basic.municipality
    if not muni:
        return []
    civics = [c for c in svc_expanded.civics if c.value is not None]
    cutoff = cfg.street_edit_max

    svc_orderings = [
        (svc_expanded.qualifier + " " + " ".join(tokens)).strip()
        for tokens in name_orderings(svc_expanded)]

    out = []
    for road in catalog.roads_in(muni):
        best: Optional[float] = None
        if cfg.metric is Metric.KB_LEVENSHTEIN:
            for form in catalog.expanded_forms(road):
                road_orderings = [
                    (form.qualifier + " " + " ".join(tokens)).strip()
                    for tokens in name_orderings(form)]
                for a in svc_orderings:
                    for b in road_orderings:
                        d = levenshtein_distance(a, b, cutoff)
                        if d > cutoff:
                            continue
                        sim = 1.0 - (d / max(len(a), len(b)) if max(len(a), len(b)) else 0.0)
                        best = sim if best is None else max(best, sim)
        else:
            names = [road.official_name]
            if road.alternative_name:
                names.append(road.alternative_name)
            for name in names:
                road_basic = normalize(RawAddress(name), _EMPTY_TABLE).street_text
                a, b = svc_basic.street_text, road_basic
                if levenshtein_distance(a, b, cutoff) > cutoff:
                    continue
                if cfg.metric is Metric.LEVENSHTEIN:
                    sim = _lev_similarity(a, b)
                elif cfg.metric is Metric.DICE:
                    sim = _dice_similarity(a, b)
                else:
                    sim = _jaccard_similarity(a, b)
                best = sim if best is None else max(best, sim)
        if best is None:
            continue
        score = (cfg.location_weight * 1.0 + cfg.street_weight * best) \
            / (cfg.location_weight + cfg.street_weight)
        score = min(1.0, max(0.0, score))
        sn = _matching_street_number(road, civics) if civics else None
        if sn is not None:
            cand = MatchCandidate(service.iri, road.iri, sn, Level.NUMBER,
                                  _METRIC_METHOD[cfg.metric], score)
        else:
            cand = MatchCandidate(service.iri, road.iri, None, Level.STREET,
                                  _METRIC_METHOD[cfg.metric], score)
        out.append(cand)
    out.sort(key=lambda c: (-c.score, c.road))
    return out


# --- decisions --------------------------------------------------------------------------

class ReviewState(Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    SKIPPED = "skipped"


@dataclass
class ReviewItem:
    service: Iri
    candidates: tuple
    state: ReviewState = ReviewState.PENDING
    chosen: Optional[MatchCandidate] = None
    decided_by: Optional[str] = None
    decided_at: Optional[datetime] = None

    def _check_open(self):
        if self.state in (ReviewState.ACCEPTED, ReviewState.REJECTED):
            raise ReconcileError(f"{self.service}: review item already decided")

    def accept(self, candidate_index: int, operator: str, at: datetime) -> None:
        self._check_open()
        if not 0 <= candidate_index < len(self.candidates):
            raise ReconcileError(f"candidate index {candidate_index} out of range")
        self.chosen = self.candidates[candidate_index]
        self.state = ReviewState.ACCEPTED
        self.decided_by = operator
        self.decided_at = at

    def reject(self, operator: str, at: datetime) -> None:
        self._check_open()
        self.state = ReviewState.REJECTED
        self.decided_by = operator
        self.decided_at = at

    def skip(self, operator: str, at: datetime) -> None:
        # skipping defers: the item stays decidable, only its queue rank drops
        self._check_open()
        self.state = ReviewState.SKIPPED
        self.decided_by = operator
        self.decided_at = at

    @property
    def top_score(self) -> float:
        return self.candidates[0].score if self.candidates else 0.0


class DecisionKind(Enum):
    AUTO_ACCEPT = "autoAccept"
    REVIEW = "review"
    NO_MATCH = "noMatch"


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    candidate: Optional[MatchCandidate] = None
    review_item: Optional[ReviewItem] = None


def decide(candidates: list, cfg: MethodConfig) -> Decision:
    """Route ranked candidates: auto-accept, manual review, or no match.

    Auto-accept needs the top score at or above the accept threshold and
    either a unique candidate or a gap of at least TIE_GAP to the runner-up;
    a qualifying score without the gap is a tie and goes to review.
    """
    if not candidates:
        return Decision(DecisionKind.NO_MATCH)
    top = candidates[0]
    gap_ok = len(candidates) == 1 or top.score - candidates[1].score >= TIE_GAP
    if top.score >= cfg.accept_threshold and gap_ok:
        return Decision(DecisionKind.AUTO_ACCEPT, candidate=top)
    if top.score >= cfg.review_threshold:
        return Decision(DecisionKind.REVIEW,
                        review_item=ReviewItem(top.service, tuple(candidates)))
    return Decision(DecisionKind.NO_MATCH)


# --- applying accepted links ---------------------------------------------------------------

def apply_decision(decision, store) -> list:
    """Write the accepted link; returns only the newly inserted quads.

    The accepted candidate becomes sameAs(service, toponym) plus
    hasAccess(service, streetNumber) at number level or
    isInRoad(service, road) at street level, all in the reconciliation
    context.  Re-applying is a no-op; a second number-level accept binding
    the service to a different street number violates the hasAccess upper
    bound and is rejected.
    """
    if isinstance(decision, Decision):
        if decision.kind is not DecisionKind.AUTO_ACCEPT or decision.candidate is None:
            raise ReconcileError("only accept decisions can be applied")
        cand = decision.candidate
    elif isinstance(decision, ReviewItem):
        if decision.state is not ReviewState.ACCEPTED or decision.chosen is None:
            raise ReconcileError("review item is not accepted")
        cand = decision.chosen
    elif isinstance(decision, MatchCandidate):
        cand = decision
    else:
        raise ReconcileError(f"cannot apply {type(decision).__name__}")

    ctx = RECONCILIATION_CONTEXT
    if cand.level is Level.NUMBER:
        toponym = cand.street_number
        typed = Quad(cand.service, schema_iri("hasAccess"), cand.street_number, ctx)
        existing = store.match(subject=cand.service, predicate=schema_iri("hasAccess"))
        if any(x.object != cand.street_number for x in existing):
            raise ReconcileError(
                f"{cand.service}: already holds a different access link")
    else:
        toponym = cand.road
        typed = Quad(cand.service, schema_iri("isInRoad"), cand.road, ctx)
    quads = [Quad(cand.service, Iri(OWL_SAME_AS), toponym, ctx), typed]
    new = [x for x in quads if not store.match(subject=x.subject, predicate=x.predicate,
                                               object=x.object, context=x.context)]
    store.insert(new)
    return new


# --- corpus runs ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSummary:
    total: int = 0
    auto_accepted: int = 0
    review: int = 0
    no_match: int = 0
    number_level: int = 0
    street_level: int = 0
    unresolved_with_coordinates: int = 0


@dataclass
class CorpusResult:
    links: list
    review_queue: list
    summary: CorpusSummary


EXACT_METHOD_NAME = "exact"
DISCOVERY_METHODS = {m.value: m for m in Metric}
ALL_METHOD_NAMES = (EXACT_METHOD_NAME,) + tuple(DISCOVERY_METHODS)


def reconcile_corpus(services: list, catalog: ToponymCatalog, method: str,
                     cfg: Optional[MethodConfig] = None) -> CorpusResult:
    """Run one method over every service; deterministic, sequential.

    Accepted links count toward the per-level totals; services left without
    an accepted link but carrying coordinates fill the coordinate-only
    bucket (they stay reachable through geo search even when the address
    fails).
    """
    if method == EXACT_METHOD_NAME:
        metric = None
    elif method in DISCOVERY_METHODS:
        metric = DISCOVERY_METHODS[method]
    else:
        raise ReconcileError(f"unknown reconciliation method: {method!r}")
    if cfg is None:
        cfg = MethodConfig(metric=metric) if metric else MethodConfig()
    elif metric is not None and cfg.metric is not metric:
        cfg = replace(cfg, metric=metric)

    links: list = []
    queue: list = []
    auto = review = nomatch = number = street = coords_only = 0
    for svc in services:
        if method == EXACT_METHOD_NAME:
            cand = reconcile_exact(svc, catalog)
            decision = decide([cand] if cand else [], cfg)
        else:
            decision = decide(link_discover(svc, catalog, cfg), cfg)
        if decision.kind is DecisionKind.AUTO_ACCEPT:
            auto += 1
            links.append(decision.candidate)
            if decision.candidate.level is Level.NUMBER:
                number += 1
            else:
                street += 1
        elif decision.kind is DecisionKind.REVIEW:
            review += 1
            queue.append(decision.review_item)
            if svc.coordinates is not None:
                coords_only += 1
        else:
            nomatch += 1
            if svc.coordinates is not None:
                coords_only += 1
    summary = CorpusSummary(
        total=len(services), auto_accepted=auto, review=review, no_match=nomatch,
        number_level=number, street_level=street,
        unresolved_with_coordinates=coords_only,
    )
    return CorpusResult(links=links, review_queue=queue, summary=summary)


# --- links file ------------------------------------------------------------------------------

def write_links_file(links: list, path) -> None:
    """serviceIri<TAB>roadIri<TAB>streetNumberIri|-<TAB>level<TAB>method<TAB>score"""
    lines = []
    for c in links:
        sn = c.street_number.value if c.street_number else "-"
        lines.append("\t".join([c.service.value, c.road.value, sn,
                                c.level.value, c.method.value, repr(c.score)]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_links_file(path) -> list:
    out = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise ReconcileError(f"{path}:{ln}: expected 6 tab-separated fields")
        svc, road, sn, level, method, score = parts
        out.append(MatchCandidate(
            Iri(svc), Iri(road), None if sn == "-" else Iri(sn),
            Level(level), Method(method), float(score)))
    return out
