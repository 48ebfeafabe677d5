"""Scoring reconciliation output and generating labelled synthetic corpora.

The scorer compares predicted links against a gold alignment and reports
precision, recall and F1 overall and per level.  The corpus generator builds
a street catalog plus a degraded service listing with a known gold alignment,
so matcher behaviour can be measured without hand-labelled data.  Every
degradation is applied by construction, which keeps the gold alignment exact:
qualifier abbreviations, punctuation noise, red-number formats and roman
numerals are recoverable by normalization; typos, dropped civics and
municipality aliases are not.
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .addresses import CivicColor, CivicNumber, RawAddress
from .reconcile import (
    CatalogRoad, CatalogStreetNumber, Level, Method, Metric, TargetService,
    ToponymCatalog, levenshtein_distance, reconcile_corpus, string_distance,
)
from .terms import DATA_NS, GeoPoint, Iri


class EvaluationError(ValueError):
    pass


# --- gold alignments and scoring ------------------------------------------------

@dataclass(frozen=True)
class GoldEntry:
    road: Iri
    street_number: Optional[Iri]
    level: Level

    def __post_init__(self):
        if (self.level is Level.NUMBER) != (self.street_number is not None):
            raise EvaluationError("gold level and street number disagree")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    by_level: dict = field(default_factory=dict)
    no_predictions: bool = False


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _score_subset(predictions, gold) -> tuple:
    """tp counts gold services correctly hit, fp counts wrong predictions."""
    correct = set()
    fp = 0
    for pred in predictions:
        entry = gold.get(pred.service)
        if entry is not None and pred.road == entry.road \
                and pred.street_number == entry.street_number:
            correct.add(pred.service)
        else:
            fp += 1
    tp = len(correct)
    return tp, fp, len(gold) - tp, correct


def score(predictions: list, gold: dict) -> MetricsReport:
    """Confusion counts over unique predicted links; tp + fn = |gold|.

    A prediction is correct when its road and street number both equal the
    gold entry for that service; a street-level prediction against a
    number-level gold entry counts as a false positive.  Services never
    predicted stay false negatives, so recall is tp over the gold size.
    An empty prediction set is flagged and reported with zero precision.
    """
    unique = list({(p.service, p.road, p.street_number): p
                   for p in predictions}.values())
    tp, fp, fn, correct = _score_subset(unique, gold)
    no_predictions = not unique
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    by_level = {}
    for level in Level:
        sub_gold = {s: g for s, g in gold.items() if g.level is level}
        sub_preds = [p for p in unique if p.level is level]
        stp, sfp, sfn, _ = _score_subset(sub_preds, sub_gold)
        sprec = stp / (stp + sfp) if (stp + sfp) else 0.0
        srec = stp / (stp + sfn) if (stp + sfn) else 0.0
        by_level[level.value] = MetricsReport(
            sprec, srec, f1_score(sprec, srec), ConfusionCounts(stp, sfp, sfn))
    return MetricsReport(precision, recall, f1_score(precision, recall),
                         ConfusionCounts(tp, fp, fn), by_level, no_predictions)


def write_gold_file(gold: dict, path) -> None:
    """serviceIri<TAB>roadIri<TAB>streetNumberIri|-<TAB>level"""
    lines = []
    for svc in sorted(gold):
        g = gold[svc]
        sn = g.street_number.value if g.street_number else "-"
        lines.append("\t".join([svc.value, g.road.value, sn, g.level.value]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_gold_file(path) -> dict:
    gold = {}
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise EvaluationError(f"{path}:{ln}: expected 4 tab-separated fields")
        svc, road, sn, level = parts
        gold[Iri(svc)] = GoldEntry(Iri(road),
                                   None if sn == "-" else Iri(sn), Level(level))
    return gold


# --- synthetic corpus ----------------------------------------------------------------

ERROR_KINDS = ("typo", "missingCivic", "aliasMunicipality", "noiseChars",
               "reorderedName", "malformedCivic", "redNumber", "romanNumeral")

DEFAULT_ERROR_RATES = {
    "typo": 0.22, "missingCivic": 0.09, "aliasMunicipality": 0.05,
    "noiseChars": 0.09, "reorderedName": 0.13, "malformedCivic": 0.05,
    "redNumber": 0.05, "romanNumeral": 0.04,
}


@dataclass(frozen=True)
class CorpusSpec:
    n_services: int = 5000
    n_roads: int = 420
    error_rates: dict = field(default_factory=lambda: dict(DEFAULT_ERROR_RATES))
    clean_rate: float = 0.15
    unreconcilable_rate: float = 0.0575
    seed: int = 42

    def __post_init__(self):
        if self.n_services < 0 or self.n_roads <= 0:
            raise EvaluationError("corpus sizes must be positive")
        unknown = set(self.error_rates) - set(ERROR_KINDS)
        if unknown:
            raise EvaluationError(f"unknown error kinds: {sorted(unknown)}")
        rates = [self.clean_rate, self.unreconcilable_rate,
                 *self.error_rates.values()]
        if any(r < 0 for r in rates):
            raise EvaluationError("rates must be non-negative")
        if math.fsum(rates) > 1.0 + 1e-9:
            raise EvaluationError("exclusive rates must not sum above 1")

    def rate(self, kind: str) -> float:
        return self.error_rates.get(kind, 0.0)


@dataclass
class CorpusBundle:
    spec: CorpusSpec
    services: list
    catalog: ToponymCatalog
    gold: dict


_MUNICIPALITIES = (
    ("FIRENZE", "FI"), ("SCANDICCI", "FI"), ("PRATO", "PO"), ("EMPOLI", "FI"),
    ("PISTOIA", "PT"), ("LUCCA", "LU"), ("SESTO FIORENTINO", "FI"),
    ("CAMPI BISENZIO", "FI"), ("FIESOLE", "FI"), ("BAGNO A RIPOLI", "FI"),
)

_PLAIN_FIRST = (
    "FRANCESCO", "GIOVANNI", "BENEDETTO", "LEONARDO", "GUGLIELMO",
    "RAFFAELLO", "LUDOVICO", "GIROLAMO", "AMBROGIO", "VITTORIO",
    "EMANUELE", "FERNANDO", "SALVATORE", "GIANCARLO", "BERNARDO",
)

_SURNAMES = (
    "PETRARCA", "ALIGHIERI", "MACHIAVELLI", "VESPUCCI", "BOCCACCIO",
    "DONATELLO", "BOTTICELLI", "MASACCIO", "GHIBERTI", "BRUNELLESCHI",
    "CELLINI", "GHIRLANDAIO", "TORRICELLI", "CAVALCANTI", "GUICCIARDINI",
    "LORENZETTI", "VERROCCHIO", "POLIZIANO", "SODERINI", "STROZZI",
    "RUCELLAI", "TORNABUONI", "ALBIZZI", "RIDOLFI", "SALVIATI", "CAPPONI",
    "GUADAGNI", "ALTOVITI", "PERUZZI", "ACCIAIUOLI", "CASTELLANI",
    "GONDI", "PANDOLFINI", "ANTINORI", "FRESCOBALDI", "BARDI",
)

# ten-character given names: three substitutions steer a typo toward the
# sibling while a fourth keeps the sibling itself distinct
_ATTRACTOR_FIRST = ("BARTOLOMEO", "FERDINANDO", "ALESSANDRO",
                    "BALDASSARE", "MICHELOZZO", "SEBASTIANO")
# short surnames keep the full name at 19 characters or fewer, where the
# sibling's score gap stays strictly above the tie threshold in float math
_ATTRACTOR_SURNAMES = ("NERI", "POLI", "FEDI", "LUPI", "MORI", "PAPI", "BINI",
                       "NUTI", "TOSI", "CECI", "MASI", "LISI", "CANI", "RE")
_ATTRACTOR_IDX = (1, 3, 6, 9)

_ROMAN_TEMPLATES = (
    "VIA IV NOVEMBRE", "PIAZZA XX SETTEMBRE", "CORSO XI FEBBRAIO",
    "VIA II GIUGNO", "VIALE XXIV MAGGIO", "BORGO VIII MARZO",
)

_QUALIFIERS = ("VIA", "VIA", "VIA", "PIAZZA", "CORSO", "VIALE", "BORGO", "LARGO")
_ABBREVIATIONS = {"PIAZZA": "P.ZZA", "CORSO": "C.SO", "VIALE": "V.LE",
                  "BORGO": "B.GO"}

_SUB_MAP = {
    "A": "O", "O": "A", "E": "U", "U": "E", "I": "O", "B": "D", "C": "G",
    "D": "B", "F": "V", "G": "C", "L": "R", "M": "N", "N": "M", "P": "B",
    "R": "L", "S": "Z", "T": "D", "V": "F", "Z": "S", "H": "K", "K": "H",
    "Q": "G", "W": "V", "X": "S", "Y": "O", "J": "G",
}
_FINAL_SUB_MAP = {c: "U" for c in "AOEI"} | {"U": "O"}

_CONSONANTS = "BCDFGHJKLMNPQRSTVWXZ"

_DIRECTED_TYPO_SHARE = 0.6
_SINGLE_EDIT_SHARE = 0.25
_ATTRACTOR_ROAD_SHARE = 0.28
_ROMAN_ROADS_PER_MUNICIPALITY = 3


def _substitute(text: str, index: int, final: bool = False) -> str:
    table = _FINAL_SUB_MAP if final else _SUB_MAP
    old = text[index]
    new = table.get(old, "O" if old != "O" else "A")
    if new == old:
        new = "A" if old != "A" else "E"
    return text[:index] + new + text[index + 1:]


@dataclass
class _Road:
    road: CatalogRoad
    kind: str
    sibling_typo: Optional[str] = None


def _civic_text(sn: CatalogStreetNumber) -> str:
    v = sn.civic.value
    return f"{v}/R" if sn.civic.color is CivicColor.RED else str(v)


def _make_street_numbers(rng, road_id: str) -> tuple:
    if rng.random() >= 0.7:
        return ()
    values = sorted(rng.sample(range(1, 81), rng.randint(1, 4)))
    out = []
    for v in values:
        red = rng.random() < 0.25
        iri = Iri(f"{DATA_NS}streetguide/sn/{road_id}/{v}{'r' if red else ''}")
        color = CivicColor.RED if red else CivicColor.BLACK
        out.append(CatalogStreetNumber(iri, CivicNumber(value=v, color=color)))
    return tuple(out)


def _attractor_safe(true_text: str, sibling_text: str, typo_text: str) -> bool:
    """The directed typo must fool levenshtein outright but leave dice unsure.

    Mirrors the scoring arithmetic of link discovery and decide, including
    float rounding, so acceptance of the sibling is guaranteed rather than
    probable.
    """
    sim_sibling = 1 - levenshtein_distance(typo_text, sibling_text) / max(
        len(typo_text), len(sibling_text))
    sim_true = 1 - levenshtein_distance(typo_text, true_text) / max(
        len(typo_text), len(true_text))
    score_sibling = (1 + sim_sibling) / 2
    score_true = (1 + sim_true) / 2
    if score_sibling < 0.95 or score_sibling - score_true < 0.05:
        return False
    dice_score = (1 + string_distance(Metric.DICE, typo_text, sibling_text)) / 2
    return dice_score < 0.95


def _build_roads(rng, spec) -> list:
    per_muni = max(1, spec.n_roads // len(_MUNICIPALITIES))
    extra = spec.n_roads - per_muni * len(_MUNICIPALITIES)
    records = []
    counter = 0
    for m, (muni, _prov) in enumerate(_MUNICIPALITIES):
        quota = per_muni + (1 if m < extra else 0)
        n_roman = min(_ROMAN_ROADS_PER_MUNICIPALITY, quota, len(_ROMAN_TEMPLATES))
        n_attractor = max(0, min(round(_ATTRACTOR_ROAD_SHARE * quota),
                                 quota - n_roman))
        taken_texts: list = []
        taken_lastwords: set = set()

        def admit(name: str, min_gap: int = 7) -> bool:
            last = name.split()[-1]
            if last in taken_lastwords:
                return False
            if any(levenshtein_distance(name, t, min_gap - 1) < min_gap
                   for t in taken_texts):
                return False
            return True

        def register(name: str):
            taken_texts.append(name)
            taken_lastwords.add(name.split()[-1])

        for t in range(n_roman):
            name = _ROMAN_TEMPLATES[(m + t) % len(_ROMAN_TEMPLATES)]
            register(name)
            counter += 1
            rid = f"{counter:04d}"
            road = CatalogRoad(Iri(f"{DATA_NS}streetguide/road/{rid}"), muni,
                               name, street_numbers=_make_street_numbers(rng, rid))
            records.append(_Road(road, "roman"))

        built_attractors = 0
        guard = 0
        while built_attractors < n_attractor:
            guard += 1
            if guard > 4000:
                raise EvaluationError("could not place attractor roads")
            first = rng.choice(_ATTRACTOR_FIRST)
            surname = rng.choice(_ATTRACTOR_SURNAMES)
            name = f"VIA {first} {surname}"
            sibling_first = first
            for idx in _ATTRACTOR_IDX:
                sibling_first = _substitute(sibling_first, idx,
                                            final=idx == _ATTRACTOR_IDX[-1])
            typo_first = first
            for idx in _ATTRACTOR_IDX[:-1]:
                typo_first = _substitute(typo_first, idx)
            sibling = f"VIA {sibling_first} {surname}"
            typo = f"VIA {typo_first} {surname}"
            # attractor roads only need to be distinct from each other; the
            # seven-edit buffer matters for roads plain typos derive from
            if not (admit(name, min_gap=2) and admit(sibling, min_gap=2)
                    and _attractor_safe(name, sibling, typo)):
                continue
            register(name)
            register(sibling)
            counter += 1
            rid = f"{counter:04d}"
            road = CatalogRoad(Iri(f"{DATA_NS}streetguide/road/{rid}"), muni,
                               name, street_numbers=_make_street_numbers(rng, rid))
            records.append(_Road(road, "attractor", sibling_typo=typo))
            counter += 1
            shadow = CatalogRoad(Iri(f"{DATA_NS}streetguide/road/{counter:04d}"),
                                 muni, sibling)
            records.append(_Road(shadow, "shadow"))
            built_attractors += 1

        n_plain = quota - n_roman - built_attractors
        built_plain = 0
        guard = 0
        while built_plain < n_plain:
            guard += 1
            if guard > 20000:
                raise EvaluationError("could not place plain roads")
            name = " ".join([rng.choice(_QUALIFIERS), rng.choice(_PLAIN_FIRST),
                             rng.choice(_SURNAMES)])
            if not admit(name):
                continue
            register(name)
            counter += 1
            rid = f"{counter:04d}"
            road = CatalogRoad(Iri(f"{DATA_NS}streetguide/road/{rid}"), muni,
                               name, street_numbers=_make_street_numbers(rng, rid))
            records.append(_Road(road, "plain"))
            built_plain += 1
    return records


def _class_schedule(rng, spec) -> list:
    n = spec.n_services
    counts = {"clean": int(spec.clean_rate * n),
              "unreconcilable": int(spec.unreconcilable_rate * n)}
    for kind in ERROR_KINDS:
        counts[kind] = int(spec.rate(kind) * n)
    leftover = n - sum(counts.values())
    counts["typo"] += leftover
    schedule = [kind for kind, c in counts.items() for _ in range(c)]
    rng.shuffle(schedule)
    return schedule


def _noise_street(rng, name: str) -> str:
    tokens = name.split()
    if tokens[0] in _ABBREVIATIONS and rng.random() < 0.5:
        tokens[0] = _ABBREVIATIONS[tokens[0]]
        return " ".join(tokens)
    style = rng.randrange(4)
    if style == 0:
        return f"{tokens[0]} - " + " ".join(tokens[1:])
    if style == 1:
        return f"{tokens[0]}, " + " ".join(tokens[1:])
    if style == 2:
        return " ".join(tokens[:-1]) + f" ({tokens[-1]})"
    return name + "?"


def _plain_typo(rng, name: str, edits: int) -> str:
    positions = [i for i, ch in enumerate(name) if ch != " "]
    while True:
        chosen = sorted(rng.sample(positions, edits))
        if all(b - a > 1 for a, b in zip(chosen, chosen[1:])):
            break
    out = name
    for i in chosen:
        out = _substitute(out, i)
    return out


def _unreconcilable_street(rng, muni_roads, surnames) -> str:
    for _ in range(80):
        words = [
            "".join(rng.choice(_CONSONANTS) for _ in range(rng.randint(5, 7)))
            for _ in range(rng.randint(2, 3))]
        text = "VIA " + " ".join(words)
        if words[-1] in surnames:
            continue
        if all(levenshtein_distance(text, r.road.official_name, 5) > 5
               for r in muni_roads):
            return text
    raise EvaluationError("could not synthesize an unmatchable street")


def generate_corpus(spec: Optional[CorpusSpec] = None) -> CorpusBundle:
    """Deterministic per seed; exactly floor(cleanRate*n) verbatim services.

    Unreconcilable services get no gold entry.  Gold levels record the link
    attainable from the record as written: an absent or unreadable civic
    yields a street-level entry even when the road has street numbers.
    """
    spec = spec or CorpusSpec()
    rng = random.Random(spec.seed)
    records = _build_roads(rng, spec)
    catalog = ToponymCatalog([r.road for r in records])

    by_muni: dict = {}
    for r in records:
        by_muni.setdefault(r.road.municipality, []).append(r)
    pools = {label: [r for r in records if r.kind == label]
             for label in ("plain", "attractor", "roman")}
    pools["principal"] = pools["plain"] + pools["attractor"] + pools["roman"]
    pools["with_sns"] = [r for r in pools["principal"] if r.road.street_numbers]
    pools["red"] = [r for r in pools["with_sns"]
                    if any(s.civic.color is CivicColor.RED
                           for s in r.road.street_numbers)]
    surnames = {r.road.official_name.split()[-1] for r in records}
    province = dict(_MUNICIPALITIES)

    services: list = []
    gold: dict = {}
    for i, kind in enumerate(_class_schedule(rng, spec)):
        svc_iri = Iri(f"{DATA_NS}poi/service/{i:05d}")
        coords = GeoPoint(43.3 + rng.random(), 10.8 + rng.random()) \
            if rng.random() < 0.5 else None

        if kind == "unreconcilable":
            muni = rng.choice(_MUNICIPALITIES)[0]
            street = _unreconcilable_street(rng, by_muni[muni], surnames)
            services.append(TargetService(
                svc_iri, RawAddress(street, "", muni),
                coordinates=coords or GeoPoint(43.7, 11.2)))
            continue

        if kind == "romanNumeral":
            rec = rng.choice(pools["roman"] or pools["principal"])
        elif kind in ("clean", "missingCivic"):
            rec = rng.choice(pools["with_sns"] or pools["principal"])
        elif kind == "redNumber":
            rec = rng.choice(pools["red"] or pools["with_sns"]
                             or pools["principal"])
        elif kind == "typo" and rng.random() < _DIRECTED_TYPO_SHARE \
                and pools["attractor"]:
            rec = rng.choice(pools["attractor"])
            kind = "typo-directed"
        elif kind == "reorderedName":
            rec = rng.choice(pools["plain"] + pools["attractor"]
                             or pools["principal"])
        else:
            rec = rng.choice(pools["principal"])
        road = rec.road
        muni_text = road.municipality
        sn = rng.choice(road.street_numbers) if road.street_numbers else None
        civic = _civic_text(sn) if sn else ""
        street = road.official_name

        if kind == "clean":
            pass
        elif kind == "noiseChars":
            street = _noise_street(rng, street)
            assert street != road.official_name
        elif kind == "redNumber":
            red = [s for s in road.street_numbers
                   if s.civic.color is CivicColor.RED]
            if red:
                sn = rng.choice(red)
                style = rng.choice(("{v}r", "{v}/r", "{v} R", "{v}/R."))
                civic = style.format(v=sn.civic.value)
            elif sn is not None:
                # no red numbers anywhere: vary the format, keep it black
                civic = f"{sn.civic.value}."
        elif kind == "romanNumeral":
            tokens = street.split()
            tokens[1] = tokens[1] + "."
            street = " ".join(tokens)
        elif kind == "missingCivic":
            sn, civic = None, ""
        elif kind == "malformedCivic":
            sn = None
            civic = rng.choice(("s.n.", "N.C", "??", "CIV"))
        elif kind == "aliasMunicipality":
            muni_text = f"{road.municipality} {province[road.municipality]}"
        elif kind == "reorderedName":
            tokens = street.split()
            tokens[-2], tokens[-1] = tokens[-1], tokens[-2]
            street = " ".join(tokens)
        elif kind == "typo-directed":
            street = rec.sibling_typo
            assert street is not None
        elif kind == "typo":
            edits = 1 if rng.random() < _SINGLE_EDIT_SHARE else 3
            street = _plain_typo(rng, street, edits)
            assert street != road.official_name

        services.append(TargetService(
            svc_iri, RawAddress(street, civic, muni_text), coordinates=coords))
        if sn is not None:
            gold[svc_iri] = GoldEntry(road.iri, sn.iri, Level.NUMBER)
        else:
            gold[svc_iri] = GoldEntry(road.iri, None, Level.STREET)
    return CorpusBundle(spec, services, catalog, gold)


# --- method comparison -------------------------------------------------------------------

DEFAULT_METHODS = ("exact", "levenshtein", "dice", "jaccard",
                   "kb-levenshtein", "manual")
MANUAL_METHOD_NAME = "manual"


@dataclass
class MethodRow:
    method: str
    report: MetricsReport
    elapsed_s: float
    auto_accepted: int
    review: int
    no_match: int


def _simulate_operator(queue, gold, exact_services, accuracy, rng) -> list:
    """Reviewers pick the gold candidate when present, erring at 1-accuracy."""
    accepted = []
    for item in sorted(queue, key=lambda it: it.service):
        if item.service in exact_services:
            continue
        entry = gold.get(item.service)
        gold_idx = None
        if entry is not None:
            for idx, cand in enumerate(item.candidates):
                if cand.road == entry.road \
                        and cand.street_number == entry.street_number:
                    gold_idx = idx
                    break
        correct_call = rng.random() < accuracy
        if gold_idx is not None:
            if correct_call:
                accepted.append(item.candidates[gold_idx])
            else:
                wrong = [c for i, c in enumerate(item.candidates) if i != gold_idx]
                if wrong:
                    accepted.append(wrong[0])
        elif not correct_call and item.candidates:
            accepted.append(item.candidates[0])
    return [replace(c, method=Method.MANUAL) for c in accepted]


def compare_methods(bundle: CorpusBundle, methods: Iterable[str] = DEFAULT_METHODS,
                    operator_accuracy: float = 0.95) -> list:
    """One row per requested method, in the order given.

    The manual row replays the review workflow: exact links first, then a
    simulated operator resolves the review queue produced by the
    knowledge-based discovery pass over whatever exact left open.
    """
    methods = list(methods)
    known = set(DEFAULT_METHODS)
    for m in methods:
        if m not in known:
            raise EvaluationError(f"unknown method: {m!r}")
    runs: dict = {}

    def run(name: str):
        if name not in runs:
            started = time.perf_counter()
            result = reconcile_corpus(bundle.services, bundle.catalog, name)
            runs[name] = (result, time.perf_counter() - started)
        return runs[name]

    rows = []
    for name in methods:
        if name == MANUAL_METHOD_NAME:
            exact_result, exact_s = run("exact")
            kb_result, kb_s = run("kb-levenshtein")
            started = time.perf_counter()
            rng = random.Random(f"operator:{bundle.spec.seed}:{operator_accuracy}")
            exact_services = {c.service for c in exact_result.links}
            manual_links = exact_result.links + _simulate_operator(
                kb_result.review_queue, bundle.gold, exact_services,
                operator_accuracy, rng)
            elapsed = exact_s + kb_s + (time.perf_counter() - started)
            rows.append(MethodRow(name, score(manual_links, bundle.gold), elapsed,
                                  auto_accepted=len(exact_result.links),
                                  review=len(kb_result.review_queue),
                                  no_match=exact_result.summary.no_match))
        else:
            result, elapsed = run(name)
            s = result.summary
            rows.append(MethodRow(name, score(result.links, bundle.gold), elapsed,
                                  auto_accepted=s.auto_accepted, review=s.review,
                                  no_match=s.no_match))
    return rows


def comparison_tsv(rows: list) -> str:
    out = ["method\ttp\tfp\tfn\tprecision\trecall\tf1\tauto\treview\tnoMatch"]
    for row in rows:
        c = row.report.counts
        out.append("\t".join([
            row.method, str(c.tp), str(c.fp), str(c.fn),
            f"{row.report.precision:.4f}", f"{row.report.recall:.4f}",
            f"{row.report.f1:.4f}", str(row.auto_accepted), str(row.review),
            str(row.no_match)]))
    return "\n".join(out) + "\n"

# corpus spec file key -> constructor argument; error rates use "rate.<kind>"
_SPEC_KEYS = {
    "nServices": ("n_services", int),
    "nRoads": ("n_roads", int),
    "cleanRate": ("clean_rate", float),
    "unreconcilableRate": ("unreconcilable_rate", float),
    "seed": ("seed", int),
}


def parse_corpus_spec_text(text: str) -> CorpusSpec:
    """Flat key=value corpus description.

    Any rate.<kind> line replaces the default error-rate table wholesale, so
    a file that lists rates must list every kind it wants injected.
    """
    kwargs: dict = {}
    rates: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise EvaluationError(f"spec line {lineno} is not key=value: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("rate."):
            attr, cast = key[len("rate."):], float
        elif key in _SPEC_KEYS:
            attr, cast = _SPEC_KEYS[key]
        else:
            raise EvaluationError(f"unknown corpus spec key: {key!r}")
        try:
            parsed = cast(value)
        except ValueError:
            raise EvaluationError(f"bad value for {key}: {value!r}") from None
        if key.startswith("rate."):
            rates[attr] = parsed
        else:
            kwargs[attr] = parsed
    if rates:
        kwargs["error_rates"] = rates
    return CorpusSpec(**kwargs)


def corpus_spec_text(spec: CorpusSpec) -> str:
    lines = [
        f"nServices={spec.n_services}",
        f"nRoads={spec.n_roads}",
        f"cleanRate={spec.clean_rate}",
        f"unreconcilableRate={spec.unreconcilable_rate}",
        f"seed={spec.seed}",
    ]
    for kind in ERROR_KINDS:
        if kind in spec.error_rates:
            lines.append(f"rate.{kind}={spec.error_rates[kind]}")
    return "\n".join(lines) + "\n"
