"""HTTP facade tests: quad queries, geo search, reconcile runs, review loop."""

from datetime import datetime, timedelta

import pytest
from fastapi.testclient import TestClient

from km4city.api import ApplicationState, create_app
from km4city.evaluate import GoldEntry, score
from km4city.ingestion import DatasetDescriptor, IngestionPipeline, parse_mapping_text
from km4city.quadstore import QuadStore
from km4city.reconcile import Level, RECONCILIATION_CONTEXT
from km4city.schema import MacroClass, load_schema, validate_entity, Severity, type_quad
from km4city.terms import (DATA_NS, OWL_SAME_AS, RDF_TYPE, Iri, Literal, Quad,
                           context_iri, schema_iri)

NS = DATA_NS + "fixture/"
STREETS_CTX = context_iri("fixture/streets")
POI_CTX = context_iri("fixture/poi")
BUS_CTX = context_iri("fixture/bus")

# slug, official name, alternative name, municipality, numbers (value, suffix, classCode)
ROAD_ROWS = [
    ("manzoni", "Via Alessandro Manzoni", None, "firenze",
     [(10, None, None), (12, "A", "red")]),
    ("garibaldi", "Via Giuseppe Garibaldi", None, "firenze", [(5, None, None)]),
    ("dante", "Piazza Dante Alighieri", None, "firenze",
     [(1, None, None), (2, None, None)]),
    ("pini", "Via dei Pini", None, "firenze", [(3, None, None)]),
    ("pia", "Via dei Pia", None, "firenze", [(4, None, None)]),
    ("carducci", "Via Giosue Carducci", "Via G. Carducci", "firenze",
     [(7, None, None)]),
    ("verdi", "Via Giuseppe Verdi", None, "firenze", [(9, None, None)]),
    ("rossini", "Via Gioachino Rossini", None, "firenze", [(11, None, None)]),
    ("puccini", "Via Giacomo Puccini", None, "firenze", [(13, None, None)]),
    ("boccaccio", "Via Giovanni Boccaccio", None, "firenze", [(15, None, None)]),
    ("petrarca", "Via Francesco Petrarca", None, "firenze", [(17, None, None)]),
    ("leopardi", "Via Giacomo Leopardi", None, "firenze", [(19, None, None)]),
    ("machiavelli", "Via Niccolo Machiavelli", None, "scandicci", [(21, None, None)]),
    ("turri", "Via Benedetto Turri", None, "scandicci", [(23, None, None)]),
]

MUNICIPALITIES = {"firenze": "Firenze", "scandicci": "Scandicci"}

# slug, street text as written, civic, municipality, schema class, gold (road, number key)
SERVICE_ROWS = [
    ("exact1", "Via Giuseppe Garibaldi", "5", "Firenze", "Service",
     ("garibaldi", "5")),
    ("exact2", "VIA GIUSEPPE VERDI", "9", "Firenze", "Accommodation",
     ("verdi", "9")),
    ("auto1", "Via Alesandro Manzoni", "10", "Firenze", "Service",
     ("manzoni", "10")),
    ("rev-manzoni", "Via Alisandro Manzini", "12 R", "Firenze", "Service",
     ("manzoni", "12a")),
    ("rev-dante", "Piaza Dante Aligeri", "1", "Firenze", "Service",
     ("dante", "1")),
    ("rev-rossini", "Via Gioakino Rosini", "11", "Firenze", "Service",
     ("rossini", "11")),
    ("rev-puccini", "Via Jacomo Pucini", "13", "Firenze", "Service",
     ("puccini", "13")),
    ("rev-boccaccio", "Via Giovana Bocacio", "15", "Firenze", "Service",
     ("boccaccio", "15")),
    ("rev-petrarca", "Via Fransesko Petraca", "17", "Firenze", "Service",
     ("petrarca", "17")),
    ("rev-carducci", "Via Gioswe Kardutci", "7", "Firenze", "Service",
     ("carducci", "7")),
    ("rev-machiavelli", "Via Nicola Machiaveli", "21", "Scandicci", "Service",
     ("machiavelli", "21")),
    ("rev-turri", "Via Benedeto Turi", "23", "Scandicci", "Service",
     ("turri", "23")),
    ("tie-pini", "Via dei Pin", "3", "Firenze", "Service", ("pini", "3")),
    ("nomatch", "Viale dei Girasoli Rossi", "99", "Firenze", "Service", None),
]

REVIEW_SLUGS = [s for s, *_ in SERVICE_ROWS if s.startswith(("rev-", "tie-"))]


def road_iri(slug):
    return Iri(f"{NS}road/{slug}")


def sn_iri(slug, key):
    return Iri(f"{NS}sn/{slug}-{key}")


def svc_iri(slug):
    return Iri(f"{NS}svc/{slug}")


def svc_point(index):
    return 43.77 + index * 0.001, 11.25


def build_store():
    store = QuadStore()
    store.register_context(STREETS_CTX, MacroClass.STREET_GUIDE, "static")
    store.register_context(POI_CTX, MacroClass.POINT_OF_INTEREST, "static")
    store.register_context(BUS_CTX, MacroClass.LOCAL_PUBLIC_TRANSPORT, "static")
    quads = []
    for slug, name in MUNICIPALITIES.items():
        muni = Iri(f"{NS}muni/{slug}")
        quads.append(type_quad(muni, "Municipality", STREETS_CTX))
        quads.append(Quad(muni, schema_iri("name"), Literal.string(name), STREETS_CTX))
    for slug, official, alt, muni_slug, numbers in ROAD_ROWS:
        road = road_iri(slug)
        quads.append(type_quad(road, "Road", STREETS_CTX))
        quads.append(Quad(road, schema_iri("officialName"),
                          Literal.string(official), STREETS_CTX))
        if alt:
            quads.append(Quad(road, schema_iri("alternativeName"),
                              Literal.string(alt), STREETS_CTX))
        quads.append(Quad(road, schema_iri("inMunicipalityOf"),
                          Iri(f"{NS}muni/{muni_slug}"), STREETS_CTX))
        for value, suffix, code in numbers:
            key = f"{value}{(suffix or '').lower()}"
            sn = sn_iri(slug, key)
            quads.append(Quad(road, schema_iri("hasStreetNumber"), sn, STREETS_CTX))
            quads.append(type_quad(sn, "StreetNumber", STREETS_CTX))
            quads.append(Quad(sn, schema_iri("number"),
                              Literal.integer(value), STREETS_CTX))
            if suffix:
                quads.append(Quad(sn, schema_iri("extension"),
                                  Literal.string(suffix), STREETS_CTX))
            if code:
                quads.append(Quad(sn, schema_iri("classCode"),
                                  Literal.string(code), STREETS_CTX))
    for index, (slug, street, civic, muni, class_name, _) in enumerate(SERVICE_ROWS):
        svc = svc_iri(slug)
        lat, long = svc_point(index)
        quads.append(type_quad(svc, class_name, POI_CTX))
        quads.append(Quad(svc, schema_iri("name"),
                          Literal.string(f"Fixture {slug}"), POI_CTX))
        quads.append(Quad(svc, schema_iri("streetAddress"),
                          Literal.string(street), POI_CTX))
        quads.append(Quad(svc, schema_iri("civicNumber"),
                          Literal.string(civic), POI_CTX))
        quads.append(Quad(svc, schema_iri("municipalityName"),
                          Literal.string(muni), POI_CTX))
        quads.append(Quad(svc, schema_iri("lat"), Literal.decimal(lat), POI_CTX))
        quads.append(Quad(svc, schema_iri("long"), Literal.decimal(long), POI_CTX))
    stop = Iri(f"{NS}bus/stop1")
    quads.append(type_quad(stop, "BusStop", BUS_CTX))
    quads.append(Quad(stop, schema_iri("name"), Literal.string("Stop 1"), BUS_CTX))
    quads.append(Quad(stop, schema_iri("lat"), Literal.decimal(43.7705), BUS_CTX))
    quads.append(Quad(stop, schema_iri("long"), Literal.decimal(11.25), BUS_CTX))
    store.insert(quads)
    return store


def build_gold():
    gold = {}
    for slug, _, _, _, _, target in SERVICE_ROWS:
        if target is None:
            gold[svc_iri(slug)] = GoldEntry(Iri(f"{NS}road/girasoli"), None,
                                            Level.STREET)
        else:
            r, key = target
            gold[svc_iri(slug)] = GoldEntry(road_iri(r), sn_iri(r, key), Level.NUMBER)
    return gold


@pytest.fixture()
def state():
    return ApplicationState(store=build_store(), gold=build_gold())


@pytest.fixture()
def client(state):
    return TestClient(create_app(state))


def run_method(client, method, token=None):
    headers = {"X-Request-Token": token} if token else {}
    resp = client.post("/reconcile/run", json={"method": method}, headers=headers)
    assert resp.status_code == 200, resp.text
    return resp.json()


def list_review(client, **params):
    resp = client.get("/review", params=params)
    assert resp.status_code == 200, resp.text
    return resp.json()


def decide(client, item_id, action, index=None, operator="op1", token=None):
    headers = {"X-Operator": operator}
    if token:
        headers["X-Request-Token"] = token
    body = {"action": action}
    if index is not None:
        body["candidateIndex"] = index
    return client.post(f"/review/{item_id}/decision", json=body, headers=headers)


def slug_of(item):
    return item["service"].rsplit("/", 1)[-1]


class TestHealth:
    def test_reports_store_size(self, client, state):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["quads"] == len(state.store)
        assert body["contexts"] == 3
        assert body["reviewOpen"] == 0

    def test_datasets_empty_without_pipeline(self, client):
        assert client.get("/datasets").json() == {"datasets": []}

    def test_datasets_lists_pipeline_state(self, tmp_path):
        pipeline = IngestionPipeline()
        descriptor = DatasetDescriptor(
            id="poiMini", source="mini.csv", original_format="csv",
            process_type="static", automation_level="semi-automatic",
            macroclass=MacroClass.POINT_OF_INTEREST, update_period=timedelta(days=30),
            creation_date=datetime(2015, 3, 1))
        mapping = parse_mapping_text("poiMini", (
            "CLASS\nservice\tService\tid\n"
            "PROP\nservice\tname\tnome\tstring\nLINK\n"))
        pipeline.register_dataset(descriptor, mapping)
        path = tmp_path / "mini.csv"
        path.write_text("id,nome\n1,Bar Luna\n", encoding="utf-8")
        pipeline.run_dataset("poiMini", path, now=datetime(2015, 3, 2))
        client = TestClient(create_app(ApplicationState(pipeline=pipeline)))
        body = client.get("/datasets").json()
        assert len(body["datasets"]) == 1
        view = body["datasets"][0]
        assert view["id"] == "poiMini"
        assert view["status"] == "indexed"
        assert view["processType"] == "static"
        assert view["macroclass"] == "PointOfInterest"
        assert view["stagedRows"] == 1
        assert view["quadCount"] > 0


class TestCrossOrigin:
    """The browser client may be served from a different origin than the API."""

    def test_simple_request_carries_allow_origin(self, client):
        resp = client.get("/health", headers={"Origin": "http://localhost:5173"})
        assert resp.status_code == 200
        assert resp.headers["access-control-allow-origin"] == "*"

    def test_preflight_allows_decision_headers(self, client):
        resp = client.options("/review/rv00001/decision", headers={
            "Origin": "http://localhost:5173",
            "Access-Control-Request-Method": "POST",
            "Access-Control-Request-Headers": "content-type,x-operator,x-request-token",
        })
        assert resp.status_code == 200
        allowed = resp.headers["access-control-allow-headers"].lower()
        assert "x-request-token" in allowed
        assert "x-operator" in allowed


class TestQuadsEndpoint:
    def test_subject_filter_returns_only_that_entity(self, client):
        svc = svc_iri("exact1")
        body = client.get("/quads", params={"s": svc.value}).json()
        assert body["total"] == 7
        assert all(q["subject"] == svc.value for q in body["quads"])

    def test_object_iri_filter(self, client):
        body = client.get("/quads", params={
            "p": RDF_TYPE, "o": schema_iri("Road").value}).json()
        assert body["total"] == len(ROAD_ROWS)

    def test_literal_object_filter(self, client):
        body = client.get("/quads", params={
            "p": schema_iri("municipalityName").value, "olit": "Scandicci"}).json()
        assert body["total"] == 2

    def test_object_and_literal_are_exclusive(self, client):
        resp = client.get("/quads", params={"o": schema_iri("Road").value,
                                            "olit": "Road"})
        assert resp.status_code == 400

    def test_malformed_predicate_names_parameter(self, client):
        resp = client.get("/quads", params={"p": "not-an-iri"})
        assert resp.status_code == 400
        assert "p:" in resp.json()["detail"]

    def test_malformed_subject_names_parameter(self, client):
        resp = client.get("/quads", params={"s": "also not an iri"})
        assert resp.status_code == 400
        assert "s:" in resp.json()["detail"]

    def test_pagination_walks_every_quad_once(self, client):
        full = client.get("/quads", params={"c": STREETS_CTX.value,
                                            "limit": 500}).json()
        seen = []
        cursor = None
        while True:
            params = {"c": STREETS_CTX.value, "limit": 7}
            if cursor:
                params["cursor"] = cursor
            page = client.get("/quads", params=params).json()
            assert len(page["quads"]) <= 7
            seen.extend(page["quads"])
            cursor = page["nextCursor"]
            if cursor is None:
                break
        assert seen == full["quads"]

    def test_ordering_is_deterministic(self, client):
        first = client.get("/quads", params={"limit": 200}).json()
        second = client.get("/quads", params={"limit": 200}).json()
        assert first == second

    def test_bad_cursor_rejected(self, client):
        assert client.get("/quads", params={"cursor": "x"}).status_code == 400

    def test_zero_limit_rejected(self, client):
        assert client.get("/quads", params={"limit": 0}).status_code == 400

    def test_closure_toggle_expands_same_as(self, client):
        run_method(client, "exact")
        svc = svc_iri("exact1").value
        plain = client.get("/quads", params={"s": svc, "limit": 100}).json()
        closed = client.get("/quads", params={"s": svc, "closure": "true",
                                              "limit": 100}).json()
        assert closed["total"] > plain["total"]
        subjects = {q["subject"] for q in closed["quads"]}
        assert sn_iri("garibaldi", "5").value in subjects


class TestGeoNear:
    def test_zero_distance_entity_comes_first(self, client):
        lat, long = svc_point(0)
        body = client.get("/geo/near", params={"lat": lat, "long": long,
                                               "k": 5}).json()
        results = body["results"]
        assert len(results) == 5
        assert results[0]["iri"] == svc_iri("exact1").value
        assert results[0]["distance"] == 0.0
        distances = [r["distance"] for r in results]
        assert distances == sorted(distances)

    def test_k_bounds_result_count(self, client):
        lat, long = svc_point(0)
        body = client.get("/geo/near", params={"lat": lat, "long": long,
                                               "k": 2}).json()
        assert len(body["results"]) == 2

    def test_max_distance_excludes_far_entities(self, client):
        # nearest neighbours sit 55.6 m (bus stop) and 111 m (next service) away
        lat, long = svc_point(0)
        body = client.get("/geo/near", params={
            "lat": lat, "long": long, "k": 50, "maxDistance": 50.0}).json()
        assert {r["iri"] for r in body["results"]} == {svc_iri("exact1").value}

    def test_out_of_range_latitude_rejected(self, client):
        assert client.get("/geo/near", params={"lat": 91, "long": 0}).status_code == 400

    def test_out_of_range_longitude_rejected(self, client):
        assert client.get("/geo/near",
                          params={"lat": 0, "long": -200}).status_code == 400

    def test_zero_k_rejected(self, client):
        assert client.get("/geo/near", params={"lat": 43.77, "long": 11.25,
                                               "k": 0}).status_code == 400

    def test_negative_max_distance_rejected(self, client):
        assert client.get("/geo/near", params={
            "lat": 43.77, "long": 11.25, "maxDistance": -1}).status_code == 400

    def test_class_filter_restricts_to_subclass(self, client):
        body = client.get("/geo/near", params={
            "lat": 43.77, "long": 11.25, "k": 50,
            "classFilter": "Accommodation"}).json()
        assert [r["iri"] for r in body["results"]] == [svc_iri("exact2").value]
        assert body["results"][0]["class"] == "Accommodation"

    def test_class_filter_expands_to_subclasses(self, client):
        body = client.get("/geo/near", params={
            "lat": 43.77, "long": 11.25, "k": 50, "classFilter": "Service"}).json()
        iris = {r["iri"] for r in body["results"]}
        assert svc_iri("exact2").value in iris
        assert len(iris) == len(SERVICE_ROWS)

    def test_class_filter_excludes_other_classes(self, client):
        body = client.get("/geo/near", params={
            "lat": 43.7705, "long": 11.25, "k": 50, "classFilter": "BusStop"}).json()
        assert [r["iri"] for r in body["results"]] == [f"{NS}bus/stop1"]

    def test_unknown_class_filter_rejected(self, client):
        resp = client.get("/geo/near", params={"lat": 43.77, "long": 11.25,
                                               "classFilter": "Spaceport"})
        assert resp.status_code == 400

    def test_results_carry_name_and_class(self, client):
        lat, long = svc_point(0)
        body = client.get("/geo/near", params={"lat": lat, "long": long,
                                               "k": 1}).json()
        top = body["results"][0]
        assert top["name"] == "Fixture exact1"
        assert top["class"] == "Service"
        assert top["lat"] == pytest.approx(lat)


class TestReconcileRun:
    def test_exact_run_links_clean_addresses(self, client, state):
        # two byte-clean addresses plus one via the unique last-word step
        body = run_method(client, "exact")
        assert body["method"] == "exact"
        assert body["total"] == len(SERVICE_ROWS)
        assert body["autoAccepted"] == 3
        assert body["queued"] == 0
        assert body["quadsAdded"] == 6
        same_as = state.store.match(predicate=Iri(OWL_SAME_AS),
                                    context=RECONCILIATION_CONTEXT)
        assert len(same_as) == 3

    def test_unknown_method_rejected(self, client):
        resp = client.post("/reconcile/run", json={"method": "soundex"})
        assert resp.status_code == 400

    def test_inconsistent_thresholds_rejected(self, client):
        resp = client.post("/reconcile/run", json={
            "method": "levenshtein", "acceptThreshold": 0.5})
        assert resp.status_code == 400

    def test_kb_run_builds_review_queue(self, client):
        body = run_method(client, "kb-levenshtein")
        assert body["autoAccepted"] == 3
        assert body["review"] == 10
        assert body["queued"] == 10
        assert body["noMatch"] == 1
        # every service carries coordinates, so all non-linked ones stay reachable
        assert body["unresolvedWithCoordinates"] == 11

    def test_rerun_does_not_duplicate_queue_or_links(self, client, state):
        run_method(client, "kb-levenshtein")
        again = run_method(client, "kb-levenshtein")
        assert again["queued"] == 10
        assert again["quadsAdded"] == 0
        assert len(state.entries) == 10
        assert len(state.auto_links) == 3

    def test_request_token_replays_response(self, client, state):
        first = run_method(client, "exact", token="run-1")
        size = len(state.store)
        replay = run_method(client, "exact", token="run-1")
        assert replay == first
        assert len(state.store) == size

    def test_live_metrics_match_evaluator(self, client, state):
        body = run_method(client, "kb-levenshtein")
        expected = score(state.current_links(), state.gold)
        assert body["liveMetrics"]["precision"] == expected.precision
        assert body["liveMetrics"]["recall"] == expected.recall
        assert body["liveMetrics"]["f1"] == expected.f1


class TestReviewQueue:
    def test_items_sorted_by_ascending_top_score(self, client):
        run_method(client, "kb-levenshtein")
        body = list_review(client)
        scores = [i["topScore"] for i in body["items"]]
        assert scores == sorted(scores)
        assert slug_of(body["items"][0]) == "svc-rev-boccaccio".replace("svc-", "")
        assert slug_of(body["items"][-1]) == "tie-pini"
        assert body["pending"] == 10

    def test_pagination_walks_queue_once(self, client):
        run_method(client, "kb-levenshtein")
        seen = []
        cursor = None
        while True:
            params = {"limit": 3}
            if cursor:
                params["cursor"] = cursor
            page = list_review(client, **params)
            seen.extend(slug_of(i) for i in page["items"])
            cursor = page["nextCursor"]
            if cursor is None:
                break
        assert len(seen) == 10
        assert len(set(seen)) == 10

    def test_municipality_filter(self, client):
        run_method(client, "kb-levenshtein")
        body = list_review(client, municipality="Scandicci")
        assert sorted(slug_of(i) for i in body["items"]) == [
            "rev-machiavelli", "rev-turri"]

    def test_method_filter(self, client):
        run_method(client, "kb-levenshtein")
        assert list_review(client, method="kb-levenshtein")["total"] == 10
        assert list_review(client, method="levenshtein")["total"] == 0

    def test_score_band_filter(self, client):
        run_method(client, "kb-levenshtein")
        body = list_review(client, scoreBand="0.0-0.93")
        assert sorted(slug_of(i) for i in body["items"]) == [
            "rev-boccaccio", "rev-carducci", "rev-puccini", "rev-rossini"]

    def test_malformed_score_band_rejected(self, client):
        run_method(client, "kb-levenshtein")
        resp = client.get("/review", params={"scoreBand": "high"})
        assert resp.status_code == 400

    def test_unknown_status_rejected(self, client):
        assert client.get("/review", params={"status": "weird"}).status_code == 400

    def test_candidates_carry_similarity_evidence(self, client):
        run_method(client, "kb-levenshtein")
        body = list_review(client)
        for item in body["items"]:
            for candidate in item["candidates"]:
                assert set(candidate["similarity"]) == {
                    "levenshtein", "dice", "jaccard", "kb-levenshtein"}
                assert all(0.0 <= v <= 1.0 for v in candidate["similarity"].values())

    def test_candidate_shows_catalog_names_and_civic(self, client):
        run_method(client, "kb-levenshtein")
        by_slug = {slug_of(i): i for i in list_review(client, limit=50)["items"]}
        manzoni = by_slug["rev-manzoni"]["candidates"][0]
        assert manzoni["officialName"] == "Via Alessandro Manzoni"
        assert manzoni["civic"] == "12/A red"
        assert manzoni["municipality"] == "Firenze"
        carducci = by_slug["rev-carducci"]["candidates"][0]
        assert carducci["alternativeName"] == "Via G. Carducci"
        tie = by_slug["tie-pini"]
        assert [c["officialName"] for c in tie["candidates"]] == [
            "Via dei Pini", "Via dei Pia"]
        assert tie["candidates"][1]["level"] == "street"

    def test_live_metrics_present_with_gold(self, client):
        run_method(client, "kb-levenshtein")
        body = list_review(client)
        assert body["liveMetrics"] is not None
        assert body["liveMetrics"]["tp"] == 3

    def test_live_metrics_null_without_gold(self):
        plain = ApplicationState(store=build_store())
        client = TestClient(create_app(plain))
        run_method(client, "kb-levenshtein")
        assert list_review(client)["liveMetrics"] is None


def first_open_item(client, **params):
    return list_review(client, **params)["items"][0]


class TestDecisions:
    def test_accept_increases_recall_and_decrements_pending(self, client):
        run_method(client, "kb-levenshtein")
        before = client.get("/metrics").json()
        item = first_open_item(client)
        resp = decide(client, item["id"], "accept", index=0)
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["item"]["state"] == "accepted"
        assert body["quadsAdded"] == 2
        assert body["pending"] == before["pending"] - 1
        assert body["liveMetrics"]["recall"] > before["current"]["recall"]

    def test_accept_every_gold_candidate_reaches_full_precision(self, client, state):
        run_method(client, "kb-levenshtein")
        recalls = [client.get("/metrics").json()["current"]["recall"]]
        while True:
            items = list_review(client)["items"]
            if not items:
                break
            resp = decide(client, items[0]["id"], "accept", index=0)
            assert resp.status_code == 200
            recalls.append(resp.json()["liveMetrics"]["recall"])
        assert all(b > a for a, b in zip(recalls, recalls[1:]))
        final = client.get("/metrics").json()
        assert final["current"]["tp"] == 13
        assert final["current"]["fp"] == 0
        assert final["current"]["fn"] == 1
        assert final["current"]["precision"] == 1.0
        assert final["pending"] == 0

    def test_accepted_service_still_validates_against_schema(self, client, state):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        decide(client, item["id"], "accept", index=0)
        subject = Iri(item["service"])
        quads = state.store.match(subject=subject)
        reports = validate_entity(state.schema, quads, "Service", entity=subject)
        assert [r for r in reports if r.severity is Severity.ERROR] == []

    def test_accepting_wrong_candidate_costs_precision(self, client):
        run_method(client, "kb-levenshtein")
        tie = [i for i in list_review(client)["items"]
               if slug_of(i) == "tie-pini"][0]
        before = client.get("/metrics").json()["current"]
        resp = decide(client, tie["id"], "accept", index=1)
        assert resp.status_code == 200
        after = resp.json()["liveMetrics"]
        assert after["fp"] == before["fp"] + 1
        assert after["recall"] == before["recall"]

    def test_reject_keeps_metrics_but_drops_pending(self, client):
        run_method(client, "kb-levenshtein")
        before = client.get("/metrics").json()
        item = first_open_item(client)
        resp = decide(client, item["id"], "reject")
        assert resp.status_code == 200
        body = resp.json()
        assert body["item"]["state"] == "rejected"
        assert body["pending"] == before["pending"] - 1
        assert body["liveMetrics"] == before["current"]

    def test_skip_moves_item_to_queue_tail_and_stays_decidable(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        resp = decide(client, item["id"], "skip")
        assert resp.status_code == 200
        assert resp.json()["pending"] == 10
        listed = list_review(client)["items"]
        assert listed[-1]["id"] == item["id"]
        assert listed[-1]["state"] == "skipped"
        assert listed[0]["id"] != item["id"]
        accept = decide(client, item["id"], "accept", index=0)
        assert accept.status_code == 200

    def test_double_decide_conflicts(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        assert decide(client, item["id"], "accept", index=0).status_code == 200
        conflict = decide(client, item["id"], "reject")
        assert conflict.status_code == 409
        assert "already decided" in conflict.json()["detail"]

    def test_rejected_item_cannot_be_accepted(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        decide(client, item["id"], "reject")
        assert decide(client, item["id"], "accept", index=0).status_code == 409

    def test_unknown_item_is_404(self, client):
        run_method(client, "kb-levenshtein")
        assert decide(client, "rv99999", "accept", index=0).status_code == 404

    def test_accept_requires_candidate_index(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        assert decide(client, item["id"], "accept").status_code == 400

    def test_out_of_range_candidate_index_rejected(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        assert decide(client, item["id"], "accept", index=9).status_code == 400

    def test_operator_is_required(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        resp = client.post(f"/review/{item['id']}/decision",
                           json={"action": "accept", "candidateIndex": 0})
        assert resp.status_code == 400

    def test_operator_can_come_from_body(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        resp = client.post(f"/review/{item['id']}/decision",
                           json={"action": "reject", "operator": "rosa"})
        assert resp.status_code == 200
        assert resp.json()["item"]["decidedBy"] == "rosa"

    def test_unknown_action_rejected(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        assert decide(client, item["id"], "merge").status_code == 400

    def test_request_token_makes_decisions_idempotent(self, client, state):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        first = decide(client, item["id"], "accept", index=0, token="d-1")
        assert first.status_code == 200
        audit_size = len(state.audit_log)
        replay = decide(client, item["id"], "accept", index=0, token="d-1")
        assert replay.status_code == 200
        assert replay.json() == first.json()
        assert len(state.audit_log) == audit_size
        fresh = decide(client, item["id"], "accept", index=0, token="d-2")
        assert fresh.status_code == 409

    def test_decisions_are_audit_logged(self, client, state):
        run_method(client, "kb-levenshtein")
        items = list_review(client)["items"]
        decide(client, items[0]["id"], "accept", index=0, operator="ada")
        decide(client, items[1]["id"], "reject", operator="ben")
        decide(client, items[2]["id"], "skip", operator="ada")
        assert [(e.action, e.operator) for e in state.audit_log] == [
            ("accept", "ada"), ("reject", "ben"), ("skip", "ada")]
        assert state.audit_log[0].quads_added == 2
        assert state.audit_log[0].at is not None

    def test_decided_items_drop_out_of_open_listing(self, client):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        decide(client, item["id"], "accept", index=0)
        open_ids = {i["id"] for i in list_review(client)["items"]}
        assert item["id"] not in open_ids
        everything = list_review(client, status="all")
        assert item["id"] in {i["id"] for i in everything["items"]}
        accepted = list_review(client, status="accepted")
        assert [i["id"] for i in accepted["items"]] == [item["id"]]

    def test_rerun_leaves_decided_items_alone(self, client, state):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        decide(client, item["id"], "accept", index=0)
        run_method(client, "kb-levenshtein")
        assert list_review(client)["total"] == 9
        assert list_review(client, status="accepted")["total"] == 1


class TestMetricsEndpoint:
    def test_before_and_current_blocks(self, client, state):
        run_method(client, "kb-levenshtein")
        item = first_open_item(client)
        decide(client, item["id"], "accept", index=0)
        body = client.get("/metrics").json()
        assert body["goldSize"] == len(SERVICE_ROWS)
        assert body["autoLinks"] == 3
        assert body["acceptedLinks"] == 1
        assert body["pending"] == 9
        before = score(list(state.auto_links.values()), state.gold)
        assert body["beforeManual"]["recall"] == before.recall
        current = score(state.current_links(), state.gold)
        assert body["current"]["recall"] == current.recall
        assert body["current"]["recall"] > body["beforeManual"]["recall"]

    def test_metrics_equal_evaluator_after_every_decision(self, client, state):
        run_method(client, "kb-levenshtein")
        actions = ["accept", "reject", "accept", "skip", "accept"]
        for action in actions:
            item = first_open_item(client)
            index = 0 if action == "accept" else None
            decide(client, item["id"], action, index=index)
            body = client.get("/metrics").json()
            expected = score(state.current_links(), state.gold)
            assert body["current"]["precision"] == expected.precision
            assert body["current"]["recall"] == expected.recall
            assert body["current"]["f1"] == expected.f1

    def test_by_level_blocks_present(self, client):
        run_method(client, "kb-levenshtein")
        body = client.get("/metrics").json()
        assert set(body["current"]["byLevel"]) == {"number", "street"}
