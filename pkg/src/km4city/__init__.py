"""Desk-scale smart-city knowledge base toolkit.

Modules:
    terms       IRIs, typed literals, quads and the line exchange format
    schema      built-in class model with cardinality/value validation
    quadstore   indexed quad store, sameAs closure, geo search, compaction
    addresses   Italian street-address normalization
    reconcile   toponym matching: exact steps, link discovery, decisions
    evaluate    precision/recall scoring and synthetic corpus generation
    ingestion   dataset registration, staging, quality checks, mapping
    report      delimited tables plus rendered comparison figures
    api         HTTP facade
    cli         km4 command line
"""

__version__ = "0.1.0"
