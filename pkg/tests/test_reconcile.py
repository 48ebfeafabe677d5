"""Tests for service-to-street reconciliation."""

import re
from datetime import datetime

import pytest
from hypothesis import given, settings, strategies as st

from km4city.addresses import CivicColor, CivicNumber, RawAddress
from km4city.quadstore import QuadStore
from km4city.reconcile import (
    CatalogRoad, CatalogStreetNumber, CorpusSummary, Decision, DecisionKind,
    Level, MatchCandidate, Method, MethodConfig, Metric, ReconcileError,
    ReviewItem, ReviewState, TIE_GAP, TargetService, ToponymCatalog,
    apply_decision, civic_matches, decide, levenshtein_distance, link_discover,
    read_links_file, reconcile_corpus, reconcile_exact, string_distance,
    write_links_file,
)
from km4city.schema import Severity, load_schema, type_quad, validate_entity
from km4city.terms import GeoPoint, Iri, OWL_SAME_AS, schema_iri


def oracle_levenshtein(a, b):
    """Full unbanded dynamic-programming matrix."""
    m, n = len(a), len(b)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (0 if a[i - 1] == b[j - 1] else 1),
            )
    return d[m][n]


def oracle_dice(a, b):
    ba = {a[i:i + 2] for i in range(len(a) - 1)}
    bb = {b[i:i + 2] for i in range(len(b) - 1)}
    if not ba and not bb:
        return 1.0 if a == b else 0.0
    return 2 * len(ba & bb) / (len(ba) + len(bb))


def oracle_jaccard(a, b):
    ta, tb = set(a.split()), set(b.split())
    if not ta and not tb:
        return 1.0
    return len(ta & tb) / len(ta | tb)


def sn(road_tag, value, color=CivicColor.BLACK):
    return CatalogStreetNumber(
        Iri(f"http://x.example/sn/{road_tag}/{value}{'r' if color is CivicColor.RED else ''}"),
        CivicNumber(value=value, color=color))


def road_iri(tag):
    return Iri(f"http://x.example/road/{tag}")


def build_catalog():
    roads = [
        CatalogRoad(road_iri("petrarca"), "Firenze", "VIA FRANCESCO PETRARCA",
                    street_numbers=(sn("petrarca", 10),
                                    sn("petrarca", 40, CivicColor.RED),
                                    sn("petrarca", 42, CivicColor.RED))),
        CatalogRoad(road_iri("duomo"), "Firenze", "PIAZZA DUOMO",
                    street_numbers=(sn("duomo", 1),)),
        CatalogRoad(road_iri("vigna"), "Firenze", "VIA DELLA VIGNA NUOVA"),
        CatalogRoad(road_iri("strada-nuova"), "Firenze", "LARGO STRADA NUOVA"),
        CatalogRoad(road_iri("belle-donne"), "Firenze", "VIA DELLE BELLE DONNE",
                    alternative_name="VIA BELLE DONNE"),
        CatalogRoad(road_iri("roma-fi"), "Firenze", "VIA ROMA",
                    street_numbers=(sn("roma-fi", 3),)),
        CatalogRoad(road_iri("roma-sc"), "Scandicci", "VIA ROMA"),
        CatalogRoad(road_iri("gemella-a"), "Firenze", "VIA GEMELLA",
                    street_numbers=(sn("gemella-a", 7),)),
        CatalogRoad(road_iri("gemella-b"), "Firenze", "VIA GEMELLA"),
    ]
    return ToponymCatalog(roads)


CATALOG = build_catalog()


def service(street, civic="", municipality="Firenze", tag="svc", coords=None):
    return TargetService(
        Iri(f"http://x.example/service/{tag}"),
        address=RawAddress(street, civic, municipality),
        coordinates=coords)


class TestStringMetrics:
    def test_frozen_levenshtein_example(self):
        assert levenshtein_distance("PIAZZA", "PIAZA") == 1

    def test_frozen_dice_example(self):
        assert string_distance(Metric.DICE, "night", "nacht") == 0.25

    def test_frozen_jaccard_example(self):
        sim = string_distance(Metric.JACCARD, "VIA DELLA VIGNA NUOVA",
                              "VIA VIGNA NUOVA")
        assert sim == 0.75

    def test_frozen_kb_reordering_example(self):
        sim = string_distance(Metric.KB_LEVENSHTEIN, "VIA PETRARCA FRANCESCO",
                              "VIA FRANCESCO PETRARCA")
        assert sim == 1.0

    @pytest.mark.parametrize("metric", list(Metric))
    def test_two_empty_strings_score_one(self, metric):
        assert string_distance(metric, "", "") == 1.0

    def test_levenshtein_similarity_value(self):
        assert string_distance(Metric.LEVENSHTEIN, "PIAZZA", "PIAZA") == 1 - 1 / 6

    @given(st.text(alphabet="ABC ", max_size=12), st.text(alphabet="ABC ", max_size=12))
    @settings(max_examples=300)
    def test_levenshtein_matches_oracle(self, a, b):
        assert levenshtein_distance(a, b) == oracle_levenshtein(a, b)

    @given(st.text(alphabet="AB", max_size=10), st.text(alphabet="AB", max_size=10),
           st.integers(min_value=0, max_value=6))
    @settings(max_examples=300)
    def test_banded_levenshtein_matches_oracle_up_to_cutoff(self, a, b, cutoff):
        exact = oracle_levenshtein(a, b)
        banded = levenshtein_distance(a, b, cutoff)
        assert banded == (exact if exact <= cutoff else cutoff + 1)

    @given(st.text(alphabet="ABC", max_size=8), st.text(alphabet="ABC", max_size=8),
           st.text(alphabet="ABC", max_size=8))
    @settings(max_examples=200)
    def test_levenshtein_triangle_inequality(self, a, b, c):
        assert levenshtein_distance(a, c) <= (
            levenshtein_distance(a, b) + levenshtein_distance(b, c))

    @given(st.text(alphabet="VIA ROMA5", max_size=14), st.text(alphabet="VIA ROMA5", max_size=14))
    @settings(max_examples=150)
    def test_similarity_axioms(self, a, b):
        for metric in Metric:
            sab = string_distance(metric, a, b)
            assert 0.0 <= sab <= 1.0
            assert sab == string_distance(metric, b, a)
            assert string_distance(metric, a, a) == 1.0

    @given(st.text(alphabet="VIGNA ", max_size=14), st.text(alphabet="VIGNA ", max_size=14))
    @settings(max_examples=200)
    def test_dice_and_jaccard_match_set_oracles(self, a, b):
        assert string_distance(Metric.DICE, a, b) == oracle_dice(a, b)
        assert string_distance(Metric.JACCARD, a, b) == oracle_jaccard(a, b)


class TestCivicMatching:
    def test_red_matches_red_only(self):
        red = CivicNumber(value=40, color=CivicColor.RED)
        black = CivicNumber(value=40, color=CivicColor.BLACK)
        assert civic_matches(red, red)
        assert not civic_matches(black, red)
        assert not civic_matches(red, black)

    def test_uncolored_matches_black(self):
        bare = CivicNumber(value=12, color=CivicColor.NONE)
        black = CivicNumber(value=12, color=CivicColor.BLACK)
        assert civic_matches(bare, black)

    def test_absent_value_never_matches(self):
        assert not civic_matches(CivicNumber(), CivicNumber(value=1))
        assert not civic_matches(CivicNumber(value=1), CivicNumber())

    def test_suffix_is_ignored(self):
        a = CivicNumber(value=5, suffix="A", color=CivicColor.BLACK)
        b = CivicNumber(value=5, color=CivicColor.BLACK)
        assert civic_matches(a, b)


class TestExactReconciliation:
    def test_step1_number_level_with_red_civic(self):
        cand = reconcile_exact(service("Via Francesco Petrarca", "40/R"), CATALOG)
        assert cand.method is Method.EXACT1
        assert cand.level is Level.NUMBER
        assert cand.road == road_iri("petrarca")
        assert cand.street_number == Iri("http://x.example/sn/petrarca/40r")
        assert cand.score == 1.0

    def test_black_civic_does_not_match_red_catalog_entry(self):
        cand = reconcile_exact(service("Via Francesco Petrarca", "40"), CATALOG)
        assert cand.level is Level.STREET
        assert cand.method is Method.EXACT1

    def test_number_level_tried_before_street_level(self):
        with_civic = reconcile_exact(service("Via Francesco Petrarca", "10"), CATALOG)
        without = reconcile_exact(service("Via Francesco Petrarca"), CATALOG)
        assert with_civic.level is Level.NUMBER
        assert without.level is Level.STREET

    def test_step2_expands_qualifier_abbreviations(self):
        cand = reconcile_exact(service("P.zza Duomo", "1"), CATALOG)
        assert cand.method is Method.EXACT2
        assert cand.level is Level.NUMBER
        assert cand.road == road_iri("duomo")

    def test_step3_unique_last_word(self):
        cand = reconcile_exact(service("Via Petrarca", "10"), CATALOG)
        assert cand.method is Method.EXACT3
        assert cand.level is Level.NUMBER
        assert cand.road == road_iri("petrarca")

    def test_step3_ambiguous_last_word_fails(self):
        assert reconcile_exact(service("Via Nuova"), CATALOG) is None

    def test_alternative_name_participates_in_step1(self):
        cand = reconcile_exact(service("Via Belle Donne"), CATALOG)
        assert cand.method is Method.EXACT1
        assert cand.road == road_iri("belle-donne")

    def test_municipality_blocks_matches(self):
        in_sc = reconcile_exact(service("Via Roma", municipality="Scandicci"), CATALOG)
        in_fi = reconcile_exact(service("Via Roma", municipality="firenze"), CATALOG)
        assert in_sc.road == road_iri("roma-sc")
        assert in_fi.road == road_iri("roma-fi")

    def test_duplicate_names_fail_at_street_level(self):
        assert reconcile_exact(service("Via Gemella"), CATALOG) is None

    def test_civic_disambiguates_duplicate_names(self):
        cand = reconcile_exact(service("Via Gemella", "7"), CATALOG)
        assert cand.level is Level.NUMBER
        assert cand.road == road_iri("gemella-a")

    def test_coordinate_only_service_yields_none(self):
        svc = TargetService(Iri("http://x.example/service/geo"),
                            coordinates=GeoPoint(43.77, 11.25))
        assert reconcile_exact(svc, CATALOG) is None

    def test_exact_links_are_correct_on_unique_catalog(self):
        # verbatim addresses over injectively named roads reconcile perfectly
        roads = [CatalogRoad(road_iri(f"u{i}"), "Prato", f"VIA CAMPIONE {i} ALFA{i}",
                             street_numbers=(sn(f"u{i}", i + 1),))
                 for i in range(30)]
        catalog = ToponymCatalog(roads)
        for i, road in enumerate(roads):
            cand = reconcile_exact(
                service(road.official_name, str(i + 1), "Prato", tag=f"u{i}"),
                catalog)
            assert cand.road == road.iri
            assert cand.level is Level.NUMBER


class TestLinkDiscovery:
    def test_typo_yields_ranked_candidate(self):
        cands = link_discover(service("Via Francesco Petraca", "40/R"),
                              CATALOG, MethodConfig(metric=Metric.LEVENSHTEIN))
        assert cands and cands[0].road == road_iri("petrarca")
        top = cands[0]
        assert top.level is Level.NUMBER
        assert top.method is Method.LEVENSHTEIN
        assert top.score == pytest.approx((1.0 + (1 - 1 / 22)) / 2)

    def test_candidates_outside_edit_threshold_are_excluded(self):
        cands = link_discover(service("VICOLO QWERTYZX KJHGFD"),
                              CATALOG, MethodConfig(metric=Metric.LEVENSHTEIN))
        assert cands == []

    def test_edit_threshold_applies_to_every_metric(self):
        # near-anagram streets: bigram overlap is high but edit distance is not
        catalog = ToponymCatalog([
            CatalogRoad(road_iri("anagram"), "Empoli", "VIA ROSSI BIANCHI")])
        svc = service("VIA BIANCHI ROSSI", municipality="Empoli")
        for metric in (Metric.LEVENSHTEIN, Metric.DICE, Metric.JACCARD):
            assert link_discover(svc, catalog, MethodConfig(metric=metric)) == []

    def test_kb_metric_recovers_reordered_names(self):
        catalog = ToponymCatalog([
            CatalogRoad(road_iri("anagram"), "Empoli", "VIA ROSSI BIANCHI")])
        svc = service("VIA BIANCHI ROSSI", municipality="Empoli")
        cands = link_discover(svc, catalog, MethodConfig(metric=Metric.KB_LEVENSHTEIN))
        assert len(cands) == 1
        assert cands[0].score == 1.0
        assert cands[0].method is Method.KB_LEVENSHTEIN

    def test_kb_metric_expands_qualifiers_before_measuring(self):
        cands = link_discover(service("P.zza Duomo"),
                              CATALOG, MethodConfig(metric=Metric.KB_LEVENSHTEIN))
        assert cands[0].road == road_iri("duomo")
        assert cands[0].score == 1.0

    def test_civic_match_lifts_candidate_to_number_level(self):
        red = link_discover(service("Via Francesco Petraca", "40/R"),
                            CATALOG, MethodConfig())
        black = link_discover(service("Via Francesco Petraca", "40"),
                              CATALOG, MethodConfig())
        assert red[0].level is Level.NUMBER
        assert red[0].street_number == Iri("http://x.example/sn/petrarca/40r")
        assert black[0].level is Level.STREET
        assert black[0].street_number is None

    def test_municipality_blocking(self):
        cands = link_discover(service("Via Roma", municipality="Scandicci"),
                              CATALOG, MethodConfig())
        assert {c.road for c in cands} == {road_iri("roma-sc")}

    def test_score_honors_weights(self):
        cands = link_discover(
            service("Via Francesco Petraca"), CATALOG,
            MethodConfig(location_weight=1.0, street_weight=0.0))
        assert cands and cands[0].score == 1.0

    def test_ties_break_on_road_iri(self):
        catalog = ToponymCatalog([
            CatalogRoad(road_iri("b-twin"), "Empoli", "VIA UGUALE"),
            CatalogRoad(road_iri("a-twin"), "Empoli", "VIA UGUALE")])
        cands = link_discover(service("VIA UGUALE", municipality="Empoli"),
                              catalog, MethodConfig())
        assert [c.road for c in cands] == [road_iri("a-twin"), road_iri("b-twin")]

    @given(st.integers(min_value=0, max_value=7))
    @settings(max_examples=8, deadline=None)
    def test_widening_edit_threshold_never_drops_candidates(self, k):
        svc = service("VIA FRANCESO PETRRCA", "40/R")
        narrow = {c.road for c in link_discover(
            svc, CATALOG, MethodConfig(street_edit_max=k))}
        wide = {c.road for c in link_discover(
            svc, CATALOG, MethodConfig(street_edit_max=k + 1))}
        assert narrow <= wide


class TestDecide:
    def cand(self, score, tag="a", level=Level.STREET):
        return MatchCandidate(Iri("http://x.example/service/d"), road_iri(tag),
                              None, level, Method.LEVENSHTEIN, score)

    def test_high_unique_score_auto_accepts(self):
        decision = decide([self.cand(0.97)], MethodConfig())
        assert decision.kind is DecisionKind.AUTO_ACCEPT
        assert decision.candidate.score == 0.97

    def test_accept_threshold_is_inclusive(self):
        assert decide([self.cand(0.95)], MethodConfig()).kind is DecisionKind.AUTO_ACCEPT

    def test_tie_within_gap_goes_to_review(self):
        decision = decide([self.cand(0.97, "a"), self.cand(0.97 - TIE_GAP + 0.01, "b")],
                          MethodConfig())
        assert decision.kind is DecisionKind.REVIEW
        assert len(decision.review_item.candidates) == 2

    def test_clear_gap_auto_accepts(self):
        decision = decide([self.cand(0.97, "a"), self.cand(0.90, "b")], MethodConfig())
        assert decision.kind is DecisionKind.AUTO_ACCEPT

    def test_mid_band_goes_to_review(self):
        decision = decide([self.cand(0.80)], MethodConfig())
        assert decision.kind is DecisionKind.REVIEW
        assert decision.review_item.state is ReviewState.PENDING

    def test_review_threshold_is_inclusive(self):
        assert decide([self.cand(0.60)], MethodConfig()).kind is DecisionKind.REVIEW

    def test_low_score_is_no_match(self):
        assert decide([self.cand(0.59)], MethodConfig()).kind is DecisionKind.NO_MATCH

    def test_no_candidates_is_no_match(self):
        assert decide([], MethodConfig()).kind is DecisionKind.NO_MATCH

    def test_threshold_ordering_is_validated(self):
        with pytest.raises(ReconcileError):
            MethodConfig(accept_threshold=0.5, review_threshold=0.7)

    def test_zero_weights_are_rejected(self):
        with pytest.raises(ReconcileError):
            MethodConfig(location_weight=0.0, street_weight=0.0)


class TestCandidateInvariants:
    def test_number_level_requires_street_number(self):
        with pytest.raises(ReconcileError):
            MatchCandidate(Iri("http://x.example/s"), road_iri("x"), None,
                           Level.NUMBER, Method.EXACT1, 1.0)

    def test_exact_methods_must_score_one(self):
        with pytest.raises(ReconcileError):
            MatchCandidate(Iri("http://x.example/s"), road_iri("x"), None,
                           Level.STREET, Method.EXACT2, 0.9)

    def test_score_bounds(self):
        with pytest.raises(ReconcileError):
            MatchCandidate(Iri("http://x.example/s"), road_iri("x"), None,
                           Level.STREET, Method.DICE, 1.2)

    def test_service_needs_address_or_coordinates(self):
        with pytest.raises(ReconcileError):
            TargetService(Iri("http://x.example/s"))


class TestApplyDecision:
    def setup_method(self):
        self.store = QuadStore()
        self.schema = load_schema()
        self.svc = Iri("http://x.example/service/apply")
        self.store.insert([type_quad(self.svc, "Service",
                                     Iri("http://x.example/ctx/base"))])

    def number_candidate(self, sn_tag="petrarca/40r"):
        return MatchCandidate(self.svc, road_iri("petrarca"),
                              Iri(f"http://x.example/sn/{sn_tag}"),
                              Level.NUMBER, Method.EXACT1, 1.0)

    def test_number_level_writes_same_as_and_access(self):
        new = apply_decision(self.number_candidate(), self.store)
        assert len(new) == 2
        predicates = {q.predicate.value for q in new}
        assert predicates == {OWL_SAME_AS, schema_iri("hasAccess").value}
        assert self.store.resolve(self.svc) == self.store.resolve(
            Iri("http://x.example/sn/petrarca/40r"))

    def test_street_level_writes_same_as_and_road_link(self):
        cand = MatchCandidate(self.svc, road_iri("vigna"), None,
                              Level.STREET, Method.DICE, 0.97)
        new = apply_decision(cand, self.store)
        predicates = {q.predicate.value for q in new}
        assert predicates == {OWL_SAME_AS, schema_iri("isInRoad").value}

    def test_reapplying_is_a_no_op(self):
        apply_decision(self.number_candidate(), self.store)
        before = len(self.store.match())
        assert apply_decision(self.number_candidate(), self.store) == []
        assert len(self.store.match()) == before

    def test_conflicting_second_access_is_rejected(self):
        apply_decision(self.number_candidate(), self.store)
        with pytest.raises(ReconcileError):
            apply_decision(self.number_candidate("petrarca/42r"), self.store)

    def test_applied_service_stays_schema_valid(self):
        apply_decision(self.number_candidate(), self.store)
        entity_quads = self.store.match(subject=self.svc)
        errors = [v for v in validate_entity(self.schema, entity_quads, "Service")
                  if v.severity is Severity.ERROR]
        assert errors == []

    def test_accepted_review_item_applies(self):
        item = ReviewItem(self.svc, (self.number_candidate(),))
        item.accept(0, "operator", datetime(2015, 3, 10, 12, 0))
        assert len(apply_decision(item, self.store)) == 2
        assert item.decided_by == "operator"

    def test_pending_review_item_cannot_apply(self):
        item = ReviewItem(self.svc, (self.number_candidate(),))
        with pytest.raises(ReconcileError):
            apply_decision(item, self.store)

    def test_decided_item_cannot_be_redecided(self):
        item = ReviewItem(self.svc, (self.number_candidate(),))
        item.accept(0, "op", datetime(2015, 3, 10))
        with pytest.raises(ReconcileError):
            item.reject("op", datetime(2015, 3, 11))

    def test_skipped_item_stays_decidable(self):
        item = ReviewItem(self.svc, (self.number_candidate(),))
        item.skip("op", datetime(2015, 3, 10))
        assert item.state is ReviewState.SKIPPED
        item.accept(0, "op", datetime(2015, 3, 11))
        assert item.state is ReviewState.ACCEPTED

    def test_non_accept_decision_cannot_apply(self):
        with pytest.raises(ReconcileError):
            apply_decision(Decision(DecisionKind.NO_MATCH), self.store)


class TestCorpusRuns:
    def corpus(self):
        return [
            service("Via Francesco Petrarca", "40/R", tag="hit"),
            service("P.zza Duomo", "1", tag="expand"),
            service("Via Francesco Petraca", "40/R", tag="typo",
                    coords=GeoPoint(43.76, 11.26)),
            service("Corso Inesistente", tag="miss"),
            TargetService(Iri("http://x.example/service/geo-only"),
                          coordinates=GeoPoint(43.77, 11.25)),
        ]

    def test_exact_run_summary(self):
        result = reconcile_corpus(self.corpus(), CATALOG, "exact")
        s = result.summary
        assert s.total == 5
        assert s.auto_accepted == 2
        assert s.auto_accepted + s.review + s.no_match == s.total
        assert s.number_level == 2 and s.street_level == 0
        assert all(c.score == 1.0 for c in result.links)
        # the typo'd and the address-less service both carry coordinates
        assert s.unresolved_with_coordinates == 2

    def test_discovery_run_routes_to_queue(self):
        result = reconcile_corpus(self.corpus(), CATALOG, "levenshtein")
        assert result.summary.auto_accepted + result.summary.review \
            + result.summary.no_match == 5
        states = {item.state for item in result.review_queue}
        assert states <= {ReviewState.PENDING}

    def test_unknown_method_is_rejected(self):
        with pytest.raises(ReconcileError):
            reconcile_corpus([], CATALOG, "soundex")

    def test_empty_corpus(self):
        result = reconcile_corpus([], CATALOG, "exact")
        assert result.summary == CorpusSummary(total=0)
        assert result.links == [] and result.review_queue == []

    def test_links_file_round_trip(self, tmp_path):
        result = reconcile_corpus(self.corpus(), CATALOG, "exact")
        path = tmp_path / "links.tsv"
        write_links_file(result.links, path)
        assert read_links_file(path) == result.links
        body = path.read_text(encoding="utf-8")
        assert re.search(r"\t-\t", body) is None  # both links are number level

    def test_links_file_street_level_placeholder(self, tmp_path):
        cand = MatchCandidate(Iri("http://x.example/s"), road_iri("vigna"), None,
                              Level.STREET, Method.JACCARD, 0.8)
        path = tmp_path / "links.tsv"
        write_links_file([cand], path)
        assert "\t-\t" in path.read_text(encoding="utf-8")
        assert read_links_file(path) == [cand]

    def test_malformed_links_file_is_rejected(self, tmp_path):
        path = tmp_path / "links.tsv"
        path.write_text("only\tthree\tfields\n", encoding="utf-8")
        with pytest.raises(ReconcileError):
            read_links_file(path)
