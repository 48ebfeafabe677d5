"""Built-in smart-city class model with testable cardinality and value constraints.

The model covers seven macroclass areas (administration, street guide, points
of interest, local public transport, sensors, temporal, metadata).  It is
code-defined rather than loaded from an ontology file, so constraint checks
need no reasoner: `validate_entity` counts property statements of an entity
subgraph against the declared cardinalities and value sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .terms import Iri, Literal, Quad, schema_iri


class SchemaError(ValueError):
    pass


class MacroClass(Enum):
    ADMINISTRATION = "Administration"
    STREET_GUIDE = "StreetGuide"
    POINT_OF_INTEREST = "PointOfInterest"
    LOCAL_PUBLIC_TRANSPORT = "LocalPublicTransport"
    SENSORS = "Sensors"
    TEMPORAL = "Temporal"
    METADATA = "Metadata"


class PropertyKind(Enum):
    OBJECT = "object"
    DATA = "data"


class Severity(Enum):
    ERROR = "error"
    WARNING = "warning"


UNBOUNDED = None


@dataclass(frozen=True)
class PropertyConstraint:
    property: str
    kind: PropertyKind
    range: str
    min_card: int = 0
    max_card: Optional[int] = UNBOUNDED
    allowed_values: Optional[frozenset] = None

    def __post_init__(self):
        if self.min_card < 0:
            raise SchemaError(f"{self.property}: minCard must be >= 0")
        if self.max_card is not None:
            if self.max_card < 1:
                raise SchemaError(f"{self.property}: maxCard must be >= 1")
            if self.min_card > self.max_card:
                raise SchemaError(f"{self.property}: minCard > maxCard")

    @property
    def restricts(self) -> bool:
        """True when the constraint can actually be violated."""
        return self.min_card > 0 or self.max_card is not None or self.allowed_values is not None


@dataclass(frozen=True)
class ClassDef:
    name: str
    macroclass: MacroClass
    parent: Optional[str] = None
    constraints: tuple = ()


@dataclass(frozen=True)
class ViolationReport:
    entity: Iri
    constraint: PropertyConstraint
    observed_count: int
    severity: Severity

    def describe(self) -> str:
        c = self.constraint
        bound = f"[{c.min_card}..{'*' if c.max_card is None else c.max_card}]"
        return (f"{self.severity.value}: <{self.entity}> {c.property} "
                f"observed {self.observed_count}, expected {bound}"
                + (f" in {sorted(c.allowed_values)}" if c.allowed_values else ""))


@dataclass(frozen=True)
class Schema:
    classes: dict

    def get(self, name: str) -> ClassDef:
        try:
            return self.classes[name]
        except KeyError:
            raise SchemaError(f"unknown class: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.classes

    def ancestry(self, name: str) -> list:
        """Class plus its parent chain, most derived first."""
        chain = []
        seen = set()
        cur: Optional[str] = name
        while cur is not None:
            if cur in seen:
                raise SchemaError(f"parent cycle at class {cur}")
            seen.add(cur)
            cd = self.get(cur)
            chain.append(cd)
            cur = cd.parent
        return chain

    def effective_constraints(self, name: str) -> list:
        """Inherited constraints; a subclass redeclaration overrides its parent's."""
        merged = {}
        for cd in reversed(self.ancestry(name)):
            for c in cd.constraints:
                merged[c.property] = c
        return [merged[k] for k in sorted(merged)]

    def subclasses_of(self, name: str, transitive: bool = True) -> set:
        """Names of subclasses, the class itself included."""
        out = {name}
        changed = True
        while changed:
            changed = False
            for cd in self.classes.values():
                if cd.parent in out and cd.name not in out:
                    out.add(cd.name)
                    changed = transitive
        return out

    def property_names(self) -> set:
        return {c.property for cd in self.classes.values() for c in cd.constraints}


def _c(prop, kind, range_, card=(0, UNBOUNDED), allowed=None):
    return PropertyConstraint(prop, kind, range_, card[0], card[1],
                              frozenset(allowed) if allowed else None)


def _obj(prop, range_, card=(0, UNBOUNDED)):
    return _c(prop, PropertyKind.OBJECT, range_, card)


def _dat(prop, range_, card=(0, 1), allowed=None):
    return _c(prop, PropertyKind.DATA, range_, card, allowed)


ACCOMMODATION_CATEGORIES = frozenset({
    "tourist_resort", "hotel", "tourist_home", "rest_home",
    "religiuos_guest_house", "bed_and_breakfast", "hostel",
    "summer_residence", "vacation_resort", "farmhouse", "day_care_center",
    "camping", "historic_residence", "mountain_dew",
})

SERVICE_SUBCLASSES = (
    "Accommodation", "GovernmentOffice", "TourismService", "TransferService",
    "CulturalActivity", "FinancialService", "Shopping", "Healthcare",
    "Education", "Entertainment", "Emergency", "WineAndFood",
)

DATASET_STATUSES = frozenset({"registered", "ingested", "improved", "mapped", "indexed", "failed"})
PROCESS_TYPES = frozenset({"static", "semi-static", "realtime"})
AUTOMATION_LEVELS = frozenset({"automatic", "semi-automatic", "manual"})


def _build_classes() -> dict:
    A = MacroClass.ADMINISTRATION
    S = MacroClass.STREET_GUIDE
    P = MacroClass.POINT_OF_INTEREST
    L = MacroClass.LOCAL_PUBLIC_TRANSPORT
    N = MacroClass.SENSORS
    T = MacroClass.TEMPORAL
    M = MacroClass.METADATA

    defs = [
        # administration hierarchy and its statistics
        ClassDef("PA", A, None, (
            _dat("name", "string"),
            _obj("hasProvince", "Province"),
            _obj("hasResolution", "Resolution"),
            _obj("hasStatistic", "StatisticalData"),
        )),
        ClassDef("Region", A, "PA", (
            _obj("hasProvince", "Province", (1, UNBOUNDED)),
        )),
        ClassDef("Province", A, "PA", ()),
        ClassDef("Municipality", A, "PA", (
            _dat("istatCode", "string"),
            _obj("hasWeatherReport", "WeatherReport"),
        )),
        ClassDef("Resolution", A, None, (
            _obj("hasApprovedPA", "PA", (1, 1)),
            _dat("resolutionDate", "dateTime"),
        )),
        ClassDef("StatisticalData", A, None, (
            _dat("aggregationPeriod", "string", allowed={"day", "week", "month"}),
            _dat("periodKey", "string"),
            _dat("statCount", "integer"),
            _dat("statMean", "decimal"),
            _dat("statMin", "decimal"),
            _dat("statMax", "decimal"),
        )),

        # street guide: roads, their elements and the civic numbering
        ClassDef("Road", S, None, (
            _obj("containsElement", "RoadElement", (1, UNBOUNDED)),
            _obj("hasStreetNumber", "StreetNumber"),
            _obj("inMunicipalityOf", "Municipality"),
            _obj("hasStatistic", "StatisticalData"),
            _dat("officialName", "string"),
            _dat("alternativeName", "string"),
        )),
        ClassDef("RoadElement", S, None, (
            _obj("startsAtNode", "Node", (1, 1)),
            _obj("endsAtNode", "Node", (1, 1)),
            _obj("formAdminRoad", "AdministrativeRoad"),
            _obj("hasRule", "EntryRule"),
            _obj("managingAuthority", "PA", (0, 1)),
        )),
        ClassDef("AdministrativeRoad", S, None, (
            _obj("hasRoadElement", "RoadElement"),
            _obj("coincideWith", "Road"),
            _obj("ownerAuthority", "PA", (0, 1)),
            _dat("name", "string"),
        )),
        ClassDef("Node", S, None, (
            _dat("lat", "decimal", (1, 1)),
            _dat("long", "decimal", (1, 1)),
        )),
        ClassDef("Milestone", S, None, (
            _obj("isInElement", "AdministrativeRoad", (1, 1)),
            _dat("lat", "decimal"),
            _dat("long", "decimal"),
            _dat("kmValue", "decimal"),
        )),
        ClassDef("StreetNumber", S, None, (
            _obj("belongToRoad", "Road", (0, 1)),
            _obj("hasExternalAccess", "Entry", (0, 1)),
            _obj("hasInternalAccess", "Entry", (0, 1)),
            _dat("number", "integer"),
            _dat("extension", "string"),
            _dat("classCode", "string", allowed={"black", "red"}),
        )),
        ClassDef("Entry", S, None, (
            _dat("lat", "decimal", (0, 1)),
            _dat("long", "decimal", (0, 1)),
        )),
        ClassDef("Junction", S, None, (
            _dat("lat", "decimal", (1, 1)),
            _dat("long", "decimal", (1, 1)),
        )),
        ClassDef("RoadLink", S, None, (
            _obj("starting", "Junction", (1, 1)),
            _obj("ending", "Junction", (1, 1)),
        )),
        ClassDef("EntryRule", S, None, (
            _obj("accessToElement", "RoadElement"),
            _obj("hasManeuver", "Maneuver"),
        )),
        ClassDef("Maneuver", S, None, (
            _obj("hasFirstElem", "RoadElement", (1, 1)),
            _obj("hasSecondElem", "RoadElement", (0, 1)),
            _obj("hasThirdElem", "RoadElement", (0, 1)),
            _obj("concerningNode", "Node", (1, 1)),
        )),

        # points of interest: one generic service class, subclassed by category
        ClassDef("Service", P, None, (
            _dat("name", "string"),
            _dat("serviceCategory", "string"),
            _obj("hasAccess", "Entry", (0, 1)),
            _obj("isInRoad", "Road"),
            _obj("hasGRLocation", "Location"),
            _dat("streetAddress", "string"),
            _dat("civicNumber", "string"),
            _dat("municipalityName", "string"),
            _dat("cap", "string"),
            _dat("lat", "decimal"),
            _dat("long", "decimal"),
        )),

        # local public transport: bus and rail graphs
        ClassDef("Lot", L, None, (
            _dat("name", "string"),
        )),
        ClassDef("PublicTransportLine", L, None, (
            _obj("isPartOfLot", "Lot", (0, 1)),
            _dat("lineNumber", "string"),
        )),
        ClassDef("Ride", L, None, (
            _obj("scheduledOnLine", "PublicTransportLine", (1, 1)),
            _dat("rideCode", "string"),
        )),
        ClassDef("Route", L, None, (
            _obj("hasFirstSection", "RouteSection", (0, 1)),
            _obj("hasSection", "RouteSection"),
            _obj("hasFirstStop", "BusStop", (0, 1)),
            _obj("hasRouteLink", "RouteLink"),
        )),
        ClassDef("RouteSection", L, None, (
            _obj("startsAtStop", "BusStop", (0, 1)),
            _obj("endsAtStop", "BusStop", (0, 1)),
        )),
        ClassDef("BusStop", L, None, (
            _dat("name", "string"),
            _dat("lat", "decimal", (1, 1)),
            _dat("long", "decimal", (1, 1)),
            _obj("isPartOfLot", "Lot"),
        )),
        ClassDef("RouteLink", L, None, (
            _obj("beginsAtJunction", "RouteJunction", (1, 1)),
            _obj("finishesAtJunction", "RouteJunction", (1, 1)),
        )),
        ClassDef("RouteJunction", L, None, (
            _dat("lat", "decimal", (1, 1)),
            _dat("long", "decimal", (1, 1)),
        )),
        ClassDef("RailwayLine", L, None, (
            _obj("hasElement", "RailwayElement"),
            _dat("name", "string"),
        )),
        ClassDef("RailwayElement", L, None, (
            _obj("isPartOfLine", "RailwayLine", (0, 1)),
            _obj("startAtJunction", "RailwayJunction", (1, 1)),
            _obj("endAtJunction", "RailwayJunction", (1, 1)),
            _obj("composeSection", "RailwaySection"),
        )),
        ClassDef("RailwayDirection", L, None, (
            _obj("isComposedBy", "RailwayElement"),
        )),
        ClassDef("RailwaySection", L, None, (
            _obj("isComposedBy", "RailwayElement"),
        )),
        ClassDef("RailwayJunction", L, None, (
            _dat("lat", "decimal"),
            _dat("long", "decimal"),
        )),
        ClassDef("TrainStation", L, None, (
            _obj("correspondToJunction", "RailwayJunction", (1, 1)),
            _dat("name", "string"),
        )),
        ClassDef("GoodsYard", L, None, (
            _obj("correspondToJunction", "RailwayJunction", (1, 1)),
        )),

        # sensors: car parks, weather, traffic and vehicle monitoring
        ClassDef("CarParkSensor", N, None, (
            _obj("hasRecord", "SituationRecord"),
            _obj("observeCarPark", "TransferService", (0, 1)),
            _dat("name", "string"),
        )),
        ClassDef("SituationRecord", N, None, (
            _obj("relatedToSensor", "CarParkSensor", (0, 1)),
            _obj("observationTime", "Instant", (0, 1)),
            _dat("free", "integer"),
            _dat("occupied", "integer"),
        )),
        ClassDef("WeatherReport", N, None, (
            _obj("hasPrediction", "WeatherPrediction"),
            _obj("refersToMunicipality", "Municipality", (0, 1)),
            _obj("updateTime", "Instant", (0, 1)),
            _dat("municipalityName", "string"),
            _dat("istatCode", "string"),
        )),
        ClassDef("WeatherPrediction", N, None, (
            _dat("day", "string"),
            _dat("forecastRange", "string"),
            _dat("description", "string"),
        )),
        ClassDef("SensorSiteTable", N, None, (
            _dat("name", "string"),
        )),
        ClassDef("SensorSite", N, None, (
            _obj("formsTable", "SensorSiteTable", (0, 1)),
            _obj("placeOnRoad", "Road", (0, 1)),
            _obj("hasObservation", "Observation"),
        )),
        ClassDef("Observation", N, None, (
            _obj("measuredBySensor", "SensorSite", (0, 1)),
            _obj("measuredTime", "Instant", (0, 1)),
            _dat("value", "decimal"),
        )),
        ClassDef("TrafficConcentration", N, "Observation", ()),
        ClassDef("TrafficHeadway", N, "Observation", ()),
        ClassDef("TrafficSpeed", N, "Observation", ()),
        ClassDef("TrafficFlow", N, "Observation", ()),
        ClassDef("AVMRecord", N, None, (
            _obj("lastStop", "BusStop", (0, 1)),
            _obj("concernLine", "PublicTransportLine", (0, 1)),
            _obj("hasLastStopTime", "Instant", (0, 1)),
            _obj("hasForecast", "BusStopForecast"),
            _dat("vehicleId", "string"),
            _dat("delay", "decimal"),
            _dat("lat", "decimal"),
            _dat("long", "decimal"),
        )),
        ClassDef("BusStopForecast", N, None, (
            _obj("atBusStop", "BusStop", (1, 1)),
            _obj("hasExpectedTime", "Instant", (0, 1)),
        )),

        # temporal: one instant entity per (resource, timestamp)
        ClassDef("Instant", T, None, (
            _dat("dateTime", "dateTime", (1, 1)),
            _obj("instantParking", "SituationRecord", (0, 1)),
            _obj("instantAVM", "AVMRecord", (0, 1)),
            _obj("instantWReport", "WeatherReport", (0, 1)),
            _obj("instantObserv", "Observation", (0, 1)),
            _obj("instantForecast", "BusStopForecast", (0, 1)),
        )),

        # metadata: dataset descriptors and their ingestion status
        ClassDef("Dataset", M, None, (
            _dat("creationDate", "dateTime"),
            _dat("source", "string"),
            _dat("originalFormat", "string"),
            _dat("description", "string"),
            _dat("license", "string"),
            _dat("processType", "string", allowed=PROCESS_TYPES),
            _dat("automationLevel", "string", allowed=AUTOMATION_LEVELS),
            _dat("accessType", "string"),
            _dat("updatePeriod", "string"),
            _dat("lastUpdate", "dateTime"),
            _dat("tripleCreationDate", "dateTime"),
            _dat("status", "string", allowed=DATASET_STATUSES),
            _dat("macroclass", "string"),
        )),
    ]

    # service subclasses carved out of Service by category value; only the
    # accommodation category list is populated, the regional taxonomy for the
    # others is open-ended
    for sub in SERVICE_SUBCLASSES:
        constraints: tuple = ()
        if sub == "Accommodation":
            constraints = (_c("serviceCategory", PropertyKind.DATA, "string",
                              (1, 1), ACCOMMODATION_CATEGORIES),)
        elif sub == "TransferService":
            constraints = (_obj("hasCarParkSensor", "CarParkSensor"),)
        defs.append(ClassDef(sub, P, "Service", constraints))

    classes = {}
    for cd in defs:
        if cd.name in classes:
            raise SchemaError(f"duplicate class name: {cd.name}")
        classes[cd.name] = cd
    return classes


def load_schema() -> Schema:
    """The built-in model; deterministic, immutable after construction."""
    schema = Schema(_build_classes())
    # fail fast on authoring mistakes: parents must exist and chains be acyclic
    for name in schema.classes:
        schema.ancestry(name)
    return schema


def _count_by_property(quads: Iterable[Quad], entity: Iri) -> dict:
    counts: dict = {}
    for q in quads:
        if q.subject == entity:
            counts.setdefault(q.predicate.local_name, []).append(q.object)
    return counts


def _infer_root(quads: Sequence[Quad]) -> Iri:
    subjects = {q.subject for q in quads}
    objects = {q.object for q in quads if isinstance(q.object, Iri)}
    roots = sorted(subjects - objects)
    if roots:
        return roots[0]
    if subjects:
        return sorted(subjects)[0]
    raise SchemaError("cannot validate an empty quad set without an explicit entity")


def validate_entity(schema: Schema, entity_quads: Sequence[Quad], root_class: str,
                    entity: Optional[Iri] = None) -> list:
    """Check one entity subgraph against a class and its inherited constraints.

    Returns one ViolationReport per violated constraint; an empty list means
    the entity satisfies every cardinality and value restriction.
    """
    constraints = schema.effective_constraints(root_class)
    if entity is None:
        entity = _infer_root(entity_quads)
    counts = _count_by_property(entity_quads, entity)

    reports = []
    for c in constraints:
        values = counts.get(c.property, [])
        n = len(values)
        if n < c.min_card or (c.max_card is not None and n > c.max_card):
            reports.append(ViolationReport(entity, c, n, Severity.ERROR))
            continue
        if c.allowed_values is not None and n:
            bad = [v for v in values
                   if (v.lexical if isinstance(v, Literal) else v.local_name)
                   not in c.allowed_values]
            if bad:
                reports.append(ViolationReport(entity, c, len(bad), Severity.WARNING))
    return reports


def classify_service(schema: Schema, category_value: str) -> str:
    """Service subclass owning the category value; generic Service otherwise."""
    needle = category_value.strip().lower()
    for name in sorted(schema.subclasses_of("Service") - {"Service"}):
        for c in schema.get(name).constraints:
            if c.property == "serviceCategory" and c.allowed_values \
                    and needle in c.allowed_values:
                return name
    return "Service"


def type_quad(entity: Iri, class_name: str, context: Iri) -> Quad:
    from .terms import RDF_TYPE
    return Quad(entity, Iri(RDF_TYPE), schema_iri(class_name), context)


def dump_schema(schema: Schema) -> str:
    """Plain-text listing, one class per line, stable order for diffing."""
    lines = []
    for name in sorted(schema.classes):
        cd = schema.classes[name]
        parts = []
        for c in cd.constraints:
            bound = f"{c.min_card}..{'*' if c.max_card is None else c.max_card}"
            desc = f"{c.property}:{c.kind.value}:{c.range}[{bound}]"
            if c.allowed_values:
                desc += "{" + ",".join(sorted(c.allowed_values)) + "}"
            parts.append(desc)
        lines.append("\t".join([name, cd.macroclass.value, cd.parent or "-",
                                "; ".join(parts)]))
    return "\n".join(lines) + "\n"
