"""Command line for the toolkit: store upkeep, ingestion, matching, serving.

Every command that touches persistent data takes a --store path; the store
file plus its .contexts.tsv sidecar are the whole on-disk state.  Dataset
registration is rebuilt per invocation: the descriptor is read back from the
store when present, otherwise from the file given on the command line, so
repeated runs keep one consistent provenance card.
"""

import functools
import sys
import time
from datetime import datetime
from pathlib import Path

import click

from . import api
from .addresses import QualifierTable, RawAddress, normalize
from .api import ApplicationState, catalog_from_store
from .evaluate import (CorpusSpec, DEFAULT_METHODS, compare_methods,
                       generate_corpus, parse_corpus_spec_text, read_gold_file,
                       score)
from .ingestion import (DatasetDescriptor, IngestionError, IngestionPipeline,
                        MappingSpec, RuleSet, parse_descriptor_text,
                        parse_duration, parse_feed_payload, parse_mapping_text,
                        read_descriptor)
from .quadstore import QuadStore
from .reconcile import (ALL_METHOD_NAMES, TargetService, reconcile_corpus,
                        read_links_file, write_links_file)
from .report import eval_tsv, write_comparison_report, write_eval_report
from .terms import Iri


def friendly_errors(fn):
    """Map domain errors to clean exit messages instead of tracebacks."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except ValueError as exc:
            raise click.ClickException(str(exc))
    return wrapper


def _read_dt(text: str, label: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise click.ClickException(f"{label}: expected an ISO date-time, got {text!r}")


STORE_OPTION = click.option(
    "--store", "store_path", default="km4.quads", show_default=True,
    envvar="KM4_STORE", help="Quad store file; created on first write.")


@click.group()
def main():
    """Desk-scale smart-city knowledge base tools."""


# --- store upkeep ----------------------------------------------------------------------------

@main.group()
def store():
    """Inspect and maintain the quad store file."""


@store.command("stats")
@STORE_OPTION
@friendly_errors
def store_stats(store_path):
    """Print quad counts per macroclass and context kind."""
    click.echo(QuadStore.load(store_path).store_stats().to_tsv(), nl=False)


@store.command("export")
@STORE_OPTION
@click.option("--context", "context_text", default=None,
              help="Restrict the dump to one named graph.")
@friendly_errors
def store_export(store_path, context_text):
    """Dump quads as sorted text, loadable back verbatim."""
    context = Iri(context_text) if context_text else None
    click.echo(QuadStore.load(store_path).export_text(context), nl=False)


@store.command("compact")
@STORE_OPTION
@click.option("--window", "window_text", required=True,
              help="Retention horizon, compact duration text such as 7d or 12h.")
@click.option("--archive", "archive_path", default=None,
              help="File receiving the dropped quads; omit to discard them.")
@click.option("--aggregation", type=click.Choice(["day", "week", "month"]),
              default="day", show_default=True)
@click.option("--now", "now_text", default=None,
              help="Clock override for deterministic runs.")
@friendly_errors
def store_compact(store_path, window_text, archive_path, aggregation, now_text):
    """Archive old realtime quads, keeping statistical aggregates."""
    window = parse_duration(window_text)
    now = _read_dt(now_text, "--now") if now_text else datetime.now()
    quad_store = QuadStore.load(store_path)
    result = quad_store.compact(window, now, aggregation, archive_path)
    quad_store.save(store_path)
    click.echo(f"dropped={result.dropped_quad_count} "
               f"aggregates={result.aggregate_quad_count} "
               f"archive={result.archive_path or '-'}")


# --- ingestion -------------------------------------------------------------------------------

def _resolve_descriptor(quad_store, dataset_id, descriptor_file) -> DatasetDescriptor:
    try:
        return read_descriptor(quad_store, dataset_id)
    except IngestionError:
        if descriptor_file is None:
            raise click.ClickException(
                f"dataset {dataset_id!r} is not in the store yet; pass --descriptor")
    text = Path(descriptor_file).read_text(encoding="utf-8")
    descriptor = parse_descriptor_text(text)
    if descriptor.id != dataset_id:
        raise click.ClickException(
            f"descriptor file is for {descriptor.id!r}, not {dataset_id!r}")
    return descriptor


def _load_mapping(dataset_id, mapping_file) -> MappingSpec:
    text = Path(mapping_file).read_text(encoding="utf-8")
    return parse_mapping_text(dataset_id, text)


def _load_rules(rules_file) -> RuleSet:
    kinds = {}
    for line in Path(rules_file).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        column, sep, kind = line.partition("\t")
        if not sep:
            raise click.ClickException(
                f"rules file: expected column<TAB>kind, got {line!r}")
        kinds[column] = kind
    return RuleSet(kinds)


def _echo_report(report):
    line = (f"{report.dataset_id}: {report.status} staged={report.staged} "
            f"quads={report.quads_inserted} skipped={len(report.skipped)}")
    if report.error:
        line += f" error={report.error}"
    click.echo(line)


@main.command()
@STORE_OPTION
@click.option("--dataset", "dataset_id", required=True)
@click.option("--file", "data_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--descriptor", "descriptor_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Dataset descriptor, needed on first contact.")
@click.option("--mapping", "mapping_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--rules", "rules_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="column<TAB>kind lines selecting quality rules.")
@click.option("--at", "at_text", default=None,
              help="Clock override for deterministic runs.")
@friendly_errors
def ingest(store_path, dataset_id, data_file, descriptor_file, mapping_file,
           rules_file, at_text):
    """Stage, improve, map and index one dataset file."""
    quad_store = QuadStore.load(store_path)
    pipeline = IngestionPipeline(store=quad_store)
    descriptor = _resolve_descriptor(quad_store, dataset_id, descriptor_file)
    mapping = _load_mapping(dataset_id, mapping_file)
    rules = _load_rules(rules_file) if rules_file else None
    pipeline.register_dataset(descriptor, mapping, rules)
    at = _read_dt(at_text, "--at") if at_text else None
    report = pipeline.run_dataset(dataset_id, data_file, now=at)
    quad_store.save(store_path)
    _echo_report(report)
    if report.status == "failed":
        sys.exit(1)


def _parse_plan(path) -> list:
    """dataset<TAB>descriptor<TAB>mapping<TAB>firstRun[<TAB>period] per line."""
    plan = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (4, 5):
            raise click.ClickException(f"plan line needs 4 or 5 fields: {raw!r}")
        dataset_id, descriptor_file, mapping_file, first_text = parts[:4]
        first_run = _read_dt(first_text, "plan firstRun")
        period = parse_duration(parts[4]) if len(parts) == 5 else None
        plan.append((dataset_id, descriptor_file, mapping_file, first_run, period))
    if not plan:
        raise click.ClickException("plan file holds no runnable entries")
    return plan


@main.group()
def schedule():
    """Periodic ingestion driven by a plan file."""


@schedule.command("run")
@STORE_OPTION
@click.option("--until", "until_text", required=True,
              help="Simulated end of time; every run due before it executes.")
@click.option("--plan", "plan_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@friendly_errors
def schedule_run(store_path, until_text, plan_file):
    """Register the planned datasets and run all jobs due until the given time."""
    until = _read_dt(until_text, "--until")
    quad_store = QuadStore.load(store_path)
    pipeline = IngestionPipeline(store=quad_store)
    for dataset_id, descriptor_file, mapping_file, first_run, period in \
            _parse_plan(plan_file):
        descriptor = _resolve_descriptor(quad_store, dataset_id, descriptor_file)
        pipeline.register_dataset(descriptor, _load_mapping(dataset_id, mapping_file))
        pipeline.schedule_dataset(dataset_id, first_run, period)
    reports = pipeline.run_scheduler(until)
    quad_store.save(store_path)
    for report in reports:
        _echo_report(report)
    click.echo(f"runs={len(reports)} "
               f"failed={sum(1 for r in reports if r.status == 'failed')}")


@main.group()
def feed():
    """Realtime observations arriving one payload at a time."""


FEED_TYPES = ("parking", "avm", "weather", "observation")


@feed.command("post")
@STORE_OPTION
@click.option("--type", "feed_type", required=True, type=click.Choice(FEED_TYPES))
@click.option("--file", "payload_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--dataset", "dataset_id", required=True)
@click.option("--descriptor", "descriptor_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Realtime dataset descriptor, needed on first contact.")
@friendly_errors
def feed_post(store_path, feed_type, payload_file, dataset_id, descriptor_file):
    """Index one JSON feed payload with its temporal instant."""
    quad_store = QuadStore.load(store_path)
    pipeline = IngestionPipeline(store=quad_store)
    descriptor = _resolve_descriptor(quad_store, dataset_id, descriptor_file)
    # feeds never run the tabular mapper; a stub mapping satisfies registration
    mapping = parse_mapping_text(dataset_id, "CLASS\nrecord\tSituationRecord\tid\n")
    pipeline.register_dataset(descriptor, mapping)
    payload = parse_feed_payload(
        feed_type, Path(payload_file).read_text(encoding="utf-8"))
    quads = pipeline.ingest_realtime(dataset_id, payload)
    quad_store.save(store_path)
    click.echo(f"{dataset_id}: indexed {len(quads)} quads")


# --- address debugging -----------------------------------------------------------------------

def _load_qualifiers(path) -> QualifierTable:
    entries = dict(QualifierTable.seed().entries)
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        variant, sep, canonical = line.partition("\t")
        if not sep:
            raise click.ClickException(
                f"qualifier file: expected variant<TAB>canonical, got {raw!r}")
        entries[variant.strip().upper()] = canonical.strip().upper()
    return QualifierTable(entries)


@main.command("normalize")
@click.option("--address", required=True, help="Street text as written.")
@click.option("--civic", default="", help="Civic number text, possibly a list.")
@click.option("--municipality", default="")
@click.option("--cap", default=None)
@click.option("--qualifiers", "qualifier_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Extra variant<TAB>canonical rows merged over the built-ins.")
@friendly_errors
def normalize_address(address, civic, municipality, cap, qualifier_file):
    """Print the parsed structure of one Italian address."""
    table = _load_qualifiers(qualifier_file) if qualifier_file \
        else QualifierTable.seed()
    parsed = normalize(RawAddress(address, civic, municipality, cap), table)
    click.echo(f"qualifier={parsed.qualifier or '-'}")
    click.echo(f"name={parsed.name_text or '-'}")
    click.echo(f"lastWordKey={parsed.last_word_key or '-'}")
    click.echo(f"municipality={parsed.municipality or '-'}")
    click.echo(f"corner={'true' if parsed.corner else 'false'}")
    for item in parsed.civics:
        value = "-" if item.value is None else str(item.value)
        click.echo(f"civic value={value} suffix={item.suffix or '-'} "
                   f"color={item.color.value} "
                   f"confident={'true' if item.confident else 'false'}")


# --- reconciliation and evaluation -----------------------------------------------------------

def _read_services(path) -> list:
    """iri<TAB>street<TAB>civic<TAB>municipality[<TAB>cap] per line."""
    services = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (4, 5):
            raise click.ClickException(f"services line needs 4 or 5 fields: {raw!r}")
        cap = parts[4] if len(parts) == 5 and parts[4] else None
        address = RawAddress(parts[1], parts[2], parts[3], cap)
        services.append(TargetService(Iri(parts[0]), address))
    return services


@main.command("reconcile")
@STORE_OPTION
@click.option("--method", required=True, type=click.Choice(ALL_METHOD_NAMES))
@click.option("--services", "services_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_file", required=True)
@friendly_errors
def reconcile_cmd(store_path, method, services_file, out_file):
    """Match service addresses against the store's street guide."""
    quad_store = QuadStore.load(store_path)
    catalog = catalog_from_store(quad_store)
    if not catalog.roads:
        raise click.ClickException("the store holds no named roads to match against")
    services = _read_services(services_file)
    result = reconcile_corpus(services, catalog, method)
    write_links_file(result.links, out_file)
    summary = result.summary
    click.echo(f"total={summary.total} auto={summary.auto_accepted} "
               f"review={summary.review} noMatch={summary.no_match} "
               f"number={summary.number_level} street={summary.street_level}")
    click.echo(f"links: {out_file}")


@main.command("eval")
@click.option("--gold", "gold_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--links", "links_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_file", default=None,
              help="Write the table here plus a rendered figure next to it.")
@friendly_errors
def eval_cmd(gold_file, links_file, out_file):
    """Score a links file against gold and print the metric table."""
    gold = read_gold_file(gold_file)
    links = read_links_file(links_file)
    report = score(links, gold)
    click.echo(eval_tsv(report), nl=False)
    if out_file:
        paths = write_eval_report(report, out_file)
        click.echo(f"table: {paths.table}")
        click.echo(f"figure: {paths.figure}")


@main.command("bench")
@click.option("--spec", "spec_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Corpus description; the built-in defaults apply when omitted.")
@click.option("--methods", "methods_text", default="all", show_default=True,
              help="Comma separated method list, or all.")
@click.option("--out", "out_file", required=True)
@friendly_errors
def bench_cmd(spec_file, methods_text, out_file):
    """Generate the synthetic corpus and compare matching methods on it."""
    if spec_file:
        spec = parse_corpus_spec_text(Path(spec_file).read_text(encoding="utf-8"))
    else:
        spec = CorpusSpec()
    if methods_text.strip() == "all":
        methods = DEFAULT_METHODS
    else:
        methods = tuple(m.strip() for m in methods_text.split(",") if m.strip())
        unknown = [m for m in methods if m not in DEFAULT_METHODS]
        if unknown:
            raise click.ClickException(f"unknown methods: {', '.join(unknown)}")
    started = time.perf_counter()
    bundle = generate_corpus(spec)
    rows = compare_methods(bundle, methods)
    elapsed = time.perf_counter() - started
    paths = write_comparison_report(rows, out_file)
    for row in rows:
        click.echo(f"{row.method}: precision={row.report.precision:.4f} "
                   f"recall={row.report.recall:.4f} f1={row.report.f1:.4f} "
                   f"({row.elapsed_s:.2f}s)")
    click.echo(f"table: {paths.table}")
    click.echo(f"figure: {paths.figure}")
    click.echo(f"elapsed: {elapsed:.2f}s")


# --- serving ---------------------------------------------------------------------------------

@main.command("serve")
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Gold links enabling live metrics on the review queue.")
@friendly_errors
def serve_cmd(port, host, store_path, gold_file):
    """Expose the store and review queue over HTTP."""
    quad_store = QuadStore.load(store_path)
    gold = read_gold_file(gold_file) if gold_file else None
    state = ApplicationState(store=quad_store, gold=gold)
    click.echo(f"serving {store_path} on {host}:{port}")
    api.serve(state, host=host, port=port)


if __name__ == "__main__":
    main()
