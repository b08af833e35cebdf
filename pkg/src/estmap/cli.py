"""Command-line pipeline driven by a case-study manifest.

Every subcommand prints one JSON object per line on standard output and
writes its files under the manifest's output directory. Exit codes:
0 success, 1 usage error, 2 input or parse error, 3 sample too small for
the statistical analysis.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import datetime
import re
import sys
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

from estmap import data
from estmap.geo import (ExcellenceConfig, Gazetteer, SampleTooSmall, collab_geo_edges, excellence_map,
                        export_geojson, export_geojson_network, export_kml, geocode_records)
from estmap.network import (AliasMap, build_coauthorship, component_report, export_graphml,
                            export_network_svg, format_reports, layout_stress)
from estmap.overlay import (BasemapError, SchemeMismatch, animate_frames, build_basemap, common_scale,
                            density_map, load_basemap, rao_stirling, read_matrix_tsv)
from estmap.querylang import (QuerySyntaxError, UnsupportedFieldError, delineate, emit_query, evaluate,
                              parse_query)
from estmap.records import (Corpus, ParseError, ParseReport, Record, RecordStore, Window, atomic_write,
                            compare_trends, load_mesh_trees, parse_medline, parse_patent_file,
                            parse_wos_export, window_partition, yearly_counts)

log = logging.getLogger("estmap")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_REFUSED = 0, 1, 2, 3
KIND_DBS = {"publication": ("wos", "medline"), "patent": ("uspto",)}
KIND_NAMES = {"publications": "publication", "patents": "patent"}
INPUT_DBS = {"wos": "wos", "medline": "medline", "patents": "uspto"}
_SEGMENT = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class ManifestError(ValueError):
    pass


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# manifest

@dataclass
class Manifest:
    path: Path
    name: str
    seed: int
    retrieved_on: str
    output: Path
    queries: dict[str, str]
    width: int
    anchor: int
    first_window: Optional[Window]
    top_share: dict[str, float]
    alpha: float
    min_sample: int
    inputs: dict[str, Path]
    gazetteer: Optional[Path] = None
    country_aliases: Optional[Path] = None
    org_aliases: Optional[Path] = None
    mesh_trees: Optional[Path] = None
    basemaps: dict[str, Path] = field(default_factory=dict)
    trend_label: Optional[str] = None
    trend_query: Optional[str] = None
    network_level: str = "org"
    bandwidth: float = 0.35
    grid_resolution: int = 100
    whole_period_threshold: bool = False

    @classmethod
    def load(cls, path: Path | str) -> "Manifest":
        path = Path(path)
        if not path.is_file():
            raise ManifestError(f"manifest not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
        try:
            cp.read_string(path.read_text("utf-8"), source=str(path))
        except configparser.Error as exc:
            raise ManifestError(f"{path}: {exc}") from None
        base = path.parent

        def get(section: str, key: str, default: Optional[str] = None) -> Optional[str]:
            if cp.has_option(section, key):
                return cp.get(section, key).strip()
            return default

        def need(section: str, key: str) -> str:
            v = get(section, key)
            if not v:
                raise ManifestError(f"manifest {path.name}: [{section}] {key} is required")
            return v

        def rel(p: Optional[str]) -> Optional[Path]:
            return (base / p).resolve() if p else None

        def number(section: str, key: str, conv, default):
            raw = get(section, key)
            try:
                return conv(raw) if raw else default
            except ValueError:
                raise ManifestError(f"[{section}] {key}: not a number: {raw!r}") from None

        name = need("case", "name")
        if not _SEGMENT.match(name):
            raise ManifestError(f"case name {name!r} is not a valid path segment")
        queries = dict(cp.items("queries")) if cp.has_section("queries") else {}
        unknown = set(queries) - {"wos", "medline", "uspto"}
        if unknown:
            raise ManifestError(f"[queries] has unknown databases: {sorted(unknown)}")
        first = get("windows", "first_window")
        try:
            first_window = Window.parse(first) if first else None
        except ValueError as exc:
            raise ManifestError(f"[windows] first_window: {exc}") from None
        shares = {"publication": number("thresholds", "top_share_publications", float, 0.10),
                  "patent": number("thresholds", "top_share_patents", float, 0.25)}
        alpha = number("thresholds", "alpha", float, 0.05)
        for k, v in [*shares.items(), ("alpha", alpha)]:
            if not 0 < v < 1:
                raise ManifestError(f"threshold {k} must lie strictly between 0 and 1, got {v}")
        inputs = {k: rel(v) for k, v in cp.items("inputs")} if cp.has_section("inputs") else {}
        bad = set(inputs) - set(INPUT_DBS)
        if bad:
            raise ManifestError(f"[inputs] has unknown entries: {sorted(bad)}")
        basemaps = {k: rel(v) for k, v in cp.items("basemaps")} if cp.has_section("basemaps") else {}
        m = cls(
            path=path, name=name,
            seed=number("case", "seed", int, 0),
            # without a recorded retrieval date the run date stands in
            retrieved_on=get("case", "retrieved_on", datetime.date.today().isoformat()),
            output=rel(get("case", "output", "out")),
            queries=queries,
            width=number("windows", "width", int, 5),
            anchor=number("windows", "anchor", int, 0) or None,
            first_window=first_window,
            top_share=shares, alpha=alpha,
            min_sample=number("thresholds", "min_sample", int, 20),
            whole_period_threshold=cp.getboolean("thresholds", "whole_period", fallback=False),
            inputs=inputs,
            gazetteer=rel(get("geo", "gazetteer")),
            country_aliases=rel(get("geo", "country_aliases")),
            org_aliases=rel(get("geo", "org_aliases")),
            mesh_trees=rel(get("geo", "mesh_trees")),
            basemaps=basemaps,
            trend_label=get("trends", "label"),
            trend_query=get("trends", "query"),
            network_level=get("network", "level", "org"),
            bandwidth=number("overlay", "bandwidth", float, 0.35),
            grid_resolution=number("overlay", "grid_resolution", int, 100),
        )
        if m.width < 1:
            raise ManifestError("[windows] width must be at least 1")
        if m.network_level not in ("org", "city"):
            raise ManifestError(f"[network] level must be org or city, got {m.network_level!r}")
        missing = [str(p) for p in [*inputs.values(), *basemaps.values(), m.gazetteer, m.country_aliases,
                                    m.org_aliases, m.mesh_trees] if p is not None and not p.is_file()]
        if missing:
            raise ManifestError(f"referenced files do not exist: {', '.join(missing)}")
        return m


# ---------------------------------------------------------------------------
# shared pipeline state

class Case:
    """Lazily computed pipeline stages for one manifest."""

    def __init__(self, manifest: Manifest, seed: Optional[int] = None, output: Optional[Path] = None):
        self.m = manifest
        self.seed = manifest.seed if seed is None else seed
        self.out = Path(output) if output else manifest.output
        self.written: list[Path] = []
        self.refusals: list[dict] = []

    def write(self, rel: str, payload: bytes | str) -> Path:
        path = self.out / rel
        atomic_write(path, payload)
        self.written.append(path)
        return path

    @cached_property
    def gazetteer(self) -> Gazetteer:
        if self.m.gazetteer is None and self.m.country_aliases is None:
            return Gazetteer.default()
        gaz = self.m.gazetteer.read_bytes() if self.m.gazetteer else data.read_bytes("gazetteer.tsv")
        aliases = (self.m.country_aliases.read_bytes() if self.m.country_aliases
                   else data.read_bytes("country_aliases.tsv"))
        return Gazetteer.load(gaz, aliases)

    @cached_property
    def alias_map(self) -> AliasMap:
        return AliasMap.load(self.m.org_aliases.read_bytes()) if self.m.org_aliases else AliasMap()

    @cached_property
    def parsed(self) -> tuple[list[Record], ParseReport]:
        report = ParseReport()
        trees = load_mesh_trees(self.m.mesh_trees.read_bytes()) if self.m.mesh_trees else None
        records: list[Record] = []
        for key in sorted(self.m.inputs):
            raw = self.m.inputs[key].read_bytes()
            if key == "wos":
                records += parse_wos_export(raw, report)
            elif key == "medline":
                records += parse_medline(raw, trees, report)
            else:
                records += parse_patent_file(raw, report)
        located, geo_report = geocode_records(records, self.gazetteer)
        self.geo_report = geo_report
        return sorted(located, key=lambda r: r.id), report

    @property
    def records(self) -> list[Record]:
        return self.parsed[0]

    @cached_property
    def corpora(self) -> dict[str, Corpus]:
        out = {}
        for db in sorted(self.m.queries):
            node = parse_query(self.m.queries[db], "canonical")
            pool = [r for r in self.records if r.source_db == db]
            out[db] = delineate(pool, node, name=f"{self.m.name}-{db}", source_db=db,
                                retrieved_on=self.m.retrieved_on)
        return out

    def records_for(self, db: str) -> list[Record]:
        ids = self.corpora[db].record_ids
        return [r for r in self.records if r.id in ids]

    def kind_records(self, kind: str) -> list[Record]:
        ids = frozenset().union(*(self.corpora[db].record_ids for db in KIND_DBS[kind] if db in self.corpora))
        return [r for r in self.records if r.id in ids]

    def windows(self, kind: str, only: Optional[str] = None) -> list[Window]:
        recs = self.kind_records(kind)
        if not recs:
            return []
        anchor = self.m.anchor or min(r.year for r in recs)
        part = window_partition(recs, self.m.width, anchor, self.m.first_window)
        wins = [w for w, _ in part.windows]
        if only is not None:
            wins = [w for w in wins if w.label == only]
            if not wins:
                raise UsageError(f"no window labelled {only!r} for {kind}s")
        return wins

    def basemap(self, scheme: str):
        if scheme not in self.m.basemaps:
            raise UsageError(f"manifest lists no basemap for scheme {scheme!r}")
        return load_basemap(self.m.basemaps[scheme])


def emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
    sys.stdout.flush()


def _rel(case: Case, p: Path) -> str:
    return p.relative_to(case.out).as_posix()


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(case: Case, args) -> int:
    records, report = case.parsed
    store = RecordStore(case.out / "store.jsonl")
    replaced = store.merge(records)
    case.written.append(store.path)
    by_db: dict[str, int] = {}
    for r in records:
        by_db[r.source_db] = by_db.get(r.source_db, 0) + 1
    emit({"command": "ingest", "store": _rel(case, store.path), "records": len(records), "by_db": by_db,
          "replaced": replaced, "skipped": [f"{loc}: {why}" for loc, why in report.skipped],
          "without_affiliation": len(case.geo_report.without_affiliation),
          "unresolved_affiliations": len(case.geo_report.unresolved)})
    return EXIT_OK


def cmd_harvest(case: Case, args) -> int:
    from estmap.harvest import HarvestClient, HarvestJob, run_harvest

    db = args.db
    if db not in case.m.queries:
        raise UsageError(f"manifest has no query for {db}")
    text = emit_query(parse_query(case.m.queries[db], "canonical"), "pubmed" if db == "medline" else "uspto")
    out_dir = Path(args.out) if args.out else case.out / "harvest" / db
    job = HarvestJob(text, source_db=db, page_size=args.page_size, rate_limit=args.rate,
                     cursor_path=out_dir / "cursor.json")
    client = HarvestClient(base_url=args.url, fixture_dir=args.fixtures, timeout=args.timeout)
    summary = run_harvest(client, job, out_dir)
    emit({"command": "harvest", "db": db, "query": text, "pages": summary.pages,
          "fetched": len(summary.fetched), "missing": summary.missing, "retries": len(client.retries),
          "out": str(out_dir)})
    return EXIT_OK


def cmd_delineate(case: Case, args) -> int:
    for db, corpus in case.corpora.items():
        p = case.write(f"corpora/{db}.json", json.dumps(corpus.to_dict(), indent=1, sort_keys=True) + "\n")
        emit({"command": "delineate", "db": db, "records": len(corpus.record_ids), "query": corpus.provenance.query_text,
              "path": _rel(case, p)})
    return EXIT_OK


def cmd_windows(case: Case, args) -> int:
    doc = {}
    for plural, kind in KIND_NAMES.items():
        recs = case.kind_records(kind)
        if not recs:
            continue
        part = window_partition(recs, case.m.width, case.m.anchor or min(r.year for r in recs), case.m.first_window)
        doc[plural] = {"windows": [{"label": w.label, "records": len(ids)} for w, ids in part.windows],
                       "excluded": len(part.excluded)}
        emit({"command": "windows", "kind": plural, **doc[plural]})
    case.write("windows.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_counts(case: Case, args) -> int:
    per_db = {db: yearly_counts(case.records_for(db)) for db in sorted(case.corpora)}
    years = sorted({y for c in per_db.values() for y in c})
    rows = ["year\t" + "\t".join(per_db)]
    for y in years:
        rows.append(f"{y}\t" + "\t".join(str(per_db[db].get(y, 0)) for db in per_db))
    totals = {db: sum(c.values()) for db, c in per_db.items()}
    rows.append("total\t" + "\t".join(str(totals[db]) for db in per_db))
    case.write("counts.tsv", "\n".join(rows) + "\n")
    doc = {"years": years, "counts": {db: [per_db[db].get(y, 0) for y in years] for db in per_db},
           "totals": totals}
    case.write("counts.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    emit({"command": "counts", "totals": totals, "years": [years[0], years[-1]] if years else []})
    return EXIT_OK


def cmd_trends(case: Case, args) -> int:
    if not case.m.trend_query:
        raise UsageError("manifest has no [trends] query")
    node = parse_query(case.m.trend_query, "canonical")
    pubs = [r for r in case.records if r.kind == "publication"]
    other = [r for r in pubs if evaluate(node, r)]
    tc = compare_trends(case.kind_records("publication"), other)
    doc = {"years": tc.years, case.m.name: tc.a, case.m.trend_label or "comparison": tc.b,
           "comparison_query": case.m.trend_query}
    p = case.write("trends.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    emit({"command": "trends", "path": _rel(case, p), "totals": [sum(tc.a), sum(tc.b)]})
    return EXIT_OK


def _kinds(arg: Optional[str]) -> list[str]:
    return [KIND_NAMES[arg]] if arg else list(KIND_NAMES.values())


def cmd_geomap(case: Case, args) -> int:
    fmts = [args.format] if args.format else ["geojson", "kml"]
    if any(f not in ("geojson", "kml") for f in fmts):
        raise UsageError("geomap writes geojson or kml")
    refused = []
    for kind in _kinds(args.kind):
        recs = [r for r in case.kind_records(kind) if r.citation_count is not None]
        config = ExcellenceConfig(top_share=case.m.top_share[kind], alpha=case.m.alpha,
                                  min_sample=case.m.min_sample,
                                  whole_period_threshold=case.m.whole_period_threshold)
        for w in case.windows(kind, args.window):
            try:
                stats = excellence_map(recs, w, config, kind=kind)
            except SampleTooSmall as exc:
                refused.append({"kind": kind, "window": w.label, "reason": str(exc)})
                print(f"estmap geomap: {kind}s {w.label}: {exc}", file=sys.stderr)
                emit({"command": "geomap", "kind": kind, "window": w.label, "refused": str(exc)})
                continue
            paths = []
            stem = f"geomap/{kind}s_{w.label}"
            if "geojson" in fmts:
                paths.append(_rel(case, case.write(stem + ".geojson", export_geojson(stats))))
            if "kml" in fmts:
                paths.append(_rel(case, case.write(stem + ".kml", export_kml(stats, f"{kind}s {w.label}"))))
            emit({"command": "geomap", "kind": kind, "window": w.label, "cities": len(stats),
                  "significant": sum(s.significant for s in stats), "paths": paths})
    case.refusals += refused
    return EXIT_REFUSED if refused and not args.keep_going else EXIT_OK


def cmd_collabmap(case: Case, args) -> int:
    for kind in _kinds(args.kind):
        recs = case.kind_records(kind)
        for w in case.windows(kind, args.window):
            net = collab_geo_edges(recs, w)
            p = case.write(f"collabmap/{kind}s_{w.label}.geojson", export_geojson_network(net))
            emit({"command": "collabmap", "kind": kind, "window": w.label, "cities": len(net.sites),
                  "links": len(net.edges), "path": _rel(case, p)})
    return EXIT_OK


def cmd_netreport(case: Case, args) -> int:
    fmts = [args.format] if args.format else ["json", "graphml", "svg"]
    if any(f not in ("json", "graphml", "svg") for f in fmts):
        raise UsageError("netreport writes json, graphml or svg")
    recs = case.kind_records("publication")
    reports = []
    for w in case.windows("publication", args.window):
        g = build_coauthorship(recs, case.m.network_level, w, case.alias_map)
        rep = component_report(g, w)
        reports.append(rep)
        paths = []
        if "graphml" in fmts or "svg" in fmts:
            coords = layout_stress(g, seed=case.seed).coords
            if "graphml" in fmts:
                paths.append(_rel(case, case.write(f"network/{w.label}.graphml", export_graphml(g, coords))))
            if "svg" in fmts:
                paths.append(_rel(case, case.write(f"network/{w.label}.svg", export_network_svg(g, coords))))
        summary = rep.to_dict()
        summary.pop("components", None)
        emit({"command": "netreport", **summary, "paths": paths})
    if "json" in fmts and reports:
        docs = []
        for r in reports:
            d = r.to_dict()
            d.pop("components", None)
            docs.append(d)
        case.write("network/components.json", json.dumps(docs, indent=1, sort_keys=True) + "\n")
        case.write("network/components.txt", format_reports(reports))
    return EXIT_OK


def _scheme_records(case: Case, scheme: str) -> list[Record]:
    return case.kind_records("patent" if scheme == "ipc" else "publication")


def _schemes(case: Case, arg: Optional[str]) -> list[str]:
    if arg:
        if arg not in case.m.basemaps:
            raise UsageError(f"manifest lists no basemap for scheme {arg!r}")
        return [arg]
    return sorted(case.m.basemaps)


def cmd_overlay(case: Case, args) -> int:
    for scheme in _schemes(case, args.scheme):
        bm = case.basemap(scheme)
        kind = "patent" if scheme == "ipc" else "publication"
        wins = case.windows(kind, args.window)
        frames = common_scale(_scheme_records(case, scheme), bm, wins)
        written = animate_frames(frames, bm, case.out / "overlay" / scheme)
        case.written += written
        for w, frame in zip(wins, frames):
            grid = density_map(frame, bm, case.m.bandwidth, case.m.grid_resolution) if frame.counts else None
            if grid is not None:
                case.write(f"overlay/{scheme}/density_{w.label}.txt", grid.to_text())
            emit({"command": "overlay", "scheme": scheme, "window": w.label, "categories": len(frame.counts),
                  "total": frame.total, "unmatched": len(frame.unmatched),
                  "density_mass": None if grid is None else round(grid.mass(), 6)})
    return EXIT_OK


def cmd_diversity(case: Case, args) -> int:
    docs = {}
    for scheme in _schemes(case, args.scheme):
        bm = case.basemap(scheme)
        kind = "patent" if scheme == "ipc" else "publication"
        D = bm.distance_matrix()
        rows = []
        for w in case.windows(kind, args.window):
            frames = common_scale(_scheme_records(case, scheme), bm, [w])
            if not frames[0].counts:
                rows.append({"window": w.label, "delta": None, "categories": 0})
                continue
            rep = rao_stirling(frames[0], D, bm.codes)
            rows.append({"window": w.label, "delta": round(rep.delta, 12), "categories": len(rep.proportions),
                         "convention": rep.convention})
            emit({"command": "diversity", "scheme": scheme, "window": w.label, "delta": round(rep.delta, 12)})
        docs[scheme] = rows
    if not args.window:
        for scheme, rows in docs.items():
            case.write(f"diversity/{scheme}.json", json.dumps(rows, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_basemap_build(case: Optional[Case], args) -> int:
    codes, M = read_matrix_tsv(Path(args.matrix).read_bytes())
    seed = args.seed if args.seed is not None else (case.seed if case else 0)
    bm = build_basemap(M, codes, args.scheme, seed=seed, threshold=args.threshold,
                       basemap_id=args.id or f"{args.scheme}-basemap")
    atomic_write(args.out, bm.dumps())
    emit({"command": "basemap-build", "scheme": args.scheme, "nodes": len(bm.nodes), "edges": len(bm.edges),
          "clusters": len({n.cluster for n in bm.nodes}), "path": str(args.out)})
    return EXIT_OK


def cmd_query(case: Optional[Case], args) -> int:
    node = parse_query(args.text, args.dialect)
    out = {"command": "query", "dialect": args.dialect}
    for d in args.emit or ["canonical"]:
        out[d] = emit_query(node, d, retarget=args.retarget)
    emit(out)
    return EXIT_OK


def _sha256(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def cmd_report(case: Case, args) -> int:
    ns = argparse.Namespace(window=None, kind=None, format=None, scheme=None, keep_going=True)
    for fn in (cmd_ingest, cmd_delineate, cmd_windows, cmd_counts):
        fn(case, ns)
    if case.m.trend_query:
        cmd_trends(case, ns)
    cmd_geomap(case, ns)
    cmd_collabmap(case, ns)
    cmd_netreport(case, ns)
    if case.m.basemaps:
        cmd_overlay(case, ns)
        cmd_diversity(case, ns)
    artifacts = []
    for p in sorted(set(case.written)):
        rel = _rel(case, p)
        artifacts.append({"path": rel, "type": p.suffix.lstrip("."), "sha256": _sha256(p)})
    index = {"case": case.m.name, "seed": case.seed, "retrieved_on": case.m.retrieved_on,
             "queries": case.m.queries, "artifacts": artifacts,
             "refusals": case.refusals}
    case.write("index.json", json.dumps(index, indent=1, sort_keys=True) + "\n")
    emit({"command": "report", "artifacts": len(artifacts), "refusals": len(index["refusals"]),
          "index": "index.json", "output": str(case.out)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="estmap", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    common = _Parser(add_help=False)
    common.add_argument("--manifest", type=Path, help="case-study manifest (INI)")
    common.add_argument("--output", type=Path, help="override the manifest's output directory")
    common.add_argument("--seed", type=int, help="override the manifest seed")
    common.add_argument("--window", help="restrict to one window label, e.g. 2002-2006")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name: str, fn, help: str, needs_manifest: bool = True):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(fn=fn, needs_manifest=needs_manifest)
        return p

    add("ingest", cmd_ingest, "parse the input files into the record store")
    h = add("harvest", cmd_harvest, "fetch records from the search endpoint")
    h.add_argument("--db", choices=["medline", "uspto"], required=True)
    h.add_argument("--url", help="endpoint base URL (default: $ESTMAP_HARVEST_URL)")
    h.add_argument("--fixtures", type=Path, help="replay canned responses from this directory")
    h.add_argument("--out", type=Path, help="payload directory (default: OUTPUT/harvest/DB)")
    h.add_argument("--page-size", type=int, default=100)
    h.add_argument("--rate", type=float, default=3.0, help="maximum requests per second")
    h.add_argument("--timeout", type=float, default=10.0, help="seconds to wait for each response")
    add("delineate", cmd_delineate, "select each database's corpus with its query")
    add("windows", cmd_windows, "partition corpora into time windows")
    add("counts", cmd_counts, "records per year and database")
    add("trends", cmd_trends, "yearly counts against the comparison query")
    g = add("geomap", cmd_geomap, "city excellence maps")
    g.add_argument("--kind", choices=sorted(KIND_NAMES))
    g.add_argument("--format", choices=["geojson", "kml"])
    g.add_argument("--keep-going", action="store_true", help="exit 0 even when a window is refused")
    c = add("collabmap", cmd_collabmap, "city collaboration networks")
    c.add_argument("--kind", choices=sorted(KIND_NAMES))
    c.add_argument("--format", choices=["geojson"])
    n = add("netreport", cmd_netreport, "co-authorship component tables and drawings")
    n.add_argument("--format", choices=["json", "graphml", "svg"])
    o = add("overlay", cmd_overlay, "basemap overlays, frames and density grids")
    o.add_argument("--scheme")
    d = add("diversity", cmd_diversity, "Rao-Stirling diversity per window")
    d.add_argument("--scheme")
    b = add("basemap-build", cmd_basemap_build, "build a basemap from a similarity source matrix",
            needs_manifest=False)
    b.add_argument("--matrix", required=True, type=Path, help="square TSV matrix with code headers")
    b.add_argument("--scheme", required=True, choices=["wos_category", "journal", "mesh", "ipc"])
    b.add_argument("--out", required=True, type=Path)
    b.add_argument("--threshold", type=float, default=0.05)
    b.add_argument("--id")
    add("report", cmd_report, "run the whole pipeline and write index.json")
    q = add("query", cmd_query, "parse a search string and re-emit it", needs_manifest=False)
    q.add_argument("text")
    q.add_argument("--dialect", default="canonical", choices=["canonical", "wos", "pubmed", "uspto"])
    q.add_argument("--emit", action="append", choices=["canonical", "wos", "pubmed", "uspto"])
    q.add_argument("--retarget", action="store_true", help="map title terms to claims for uspto")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        case = None
        if args.needs_manifest or args.manifest:
            if args.manifest is None:
                raise UsageError("--manifest is required")
            case = Case(Manifest.load(args.manifest), args.seed, args.output)
        return args.fn(case, args)
    except UsageError as exc:
        print(f"estmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SampleTooSmall as exc:
        print(f"estmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (ManifestError, ParseError, QuerySyntaxError, UnsupportedFieldError, BasemapError, SchemeMismatch,
            OSError, ValueError) as exc:
        print(f"estmap {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # harvest failures and the like
        from estmap.harvest import HarvestError
        if isinstance(exc, HarvestError):
            print(f"estmap {args.command}: {exc}", file=sys.stderr)
            return EXIT_INPUT
        raise


if __name__ == "__main__":
    sys.exit(main())
