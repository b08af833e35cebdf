"""City-level excellence maps and geographic collaboration edges.

Cities are kept as separate nodes (no metropolitan merging). A record
counts once for every distinct city among its addresses.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence
from xml.sax.saxutils import escape

from estmap import data
from estmap.records import Affiliation, ParseError, Record, Window, ceil_rank
from estmap.scaling import scale_radii

log = logging.getLogger(__name__)


class SampleTooSmall(Exception):
    """A window holds too few geocoded records for the excellence test."""


@dataclass(frozen=True, order=True)
class GeoSite:
    country: str
    city: str
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            raise ValueError(f"coordinates out of range for {self.city}: {self.lat}, {self.lon}")

    @property
    def key(self) -> str:
        return f"{self.city}, {self.country}"


def fold(text: str) -> str:
    """Case- and diacritic-insensitive key: ``"Zürich "`` -> ``"zurich"``."""
    text = unicodedata.normalize("NFKD", text)
    text = "".join(ch for ch in text if not unicodedata.combining(ch))
    text = re.sub(r"[^\w]+", " ", text.casefold())
    return " ".join(text.split())


class Gazetteer:
    def __init__(self, sites: Iterable[GeoSite] = (), aliases: Iterable[tuple[str, str]] = ()):
        self.sites: dict[tuple[str, str], GeoSite] = {}
        for s in sites:
            key = (fold(s.city), fold(s.country))
            if key in self.sites:
                raise ValueError(f"duplicate gazetteer entry {s.city}, {s.country}")
            self.sites[key] = s
        self.aliases = {fold(a): b for a, b in aliases}

    @classmethod
    def load(cls, gazetteer: bytes | str, aliases: bytes | str = b"") -> "Gazetteer":
        sites = []
        for lineno, line in enumerate(_text(gazetteer).splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if len(cells) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(cells)}", lineno)
            city, country, lat, lon = (c.strip() for c in cells)
            try:
                sites.append(GeoSite(country, city, float(lat), float(lon)))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        pairs = []
        for lineno, line in enumerate(_text(aliases).splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            cells = line.split("\t")
            if len(cells) != 2 or not cells[1].strip():
                raise ParseError("alias rows need two tab-separated fields", lineno)
            pairs.append((cells[0].strip(), cells[1].strip()))
        return cls(sites, pairs)

    @classmethod
    def default(cls) -> "Gazetteer":
        return cls.load(data.read_bytes("gazetteer.tsv"), data.read_bytes("country_aliases.tsv"))

    def canonical(self, name: str) -> str:
        return self.aliases.get(fold(name), name)

    def lookup(self, city: str, country: str) -> Optional[GeoSite]:
        return self.sites.get((fold(self.canonical(city)), fold(self.canonical(country))))


def _text(raw: bytes | str) -> str:
    return raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw


def _strip_postal(segment: str) -> str:
    segment = re.sub(r"\b[A-Z]{1,2}\d[\dA-Z]?\s*\d[A-Z]{2}\b", "", segment)  # UK postcodes
    segment = re.sub(r"\b[A-Z]{2}\s+\d{5}(-\d{4})?\b", "", segment)  # US state + zip
    segment = re.sub(r"[\d-]{4,}", "", segment)
    return segment.strip(" .")


@dataclass
class GeocodeResult:
    resolved: list[Optional[GeoSite]]
    unresolved: list[Affiliation]


def geocode_one(aff: Affiliation, gazetteer: Gazetteer) -> Optional[GeoSite]:
    segments = [s.strip(" .") for s in aff.raw.split(",") if s.strip(" .")]
    countries = []
    if aff.country:
        countries.append(aff.country)
    if segments:
        countries.append(_strip_postal(segments[-1]) or segments[-1])
        tail = segments[-1].split()
        if tail:
            countries.append(tail[-1])
    cities = []
    if aff.city:
        cities.append(aff.city)
    cities += [_strip_postal(s) for s in reversed(segments[:-1])]
    for country in dict.fromkeys(countries):
        for city in dict.fromkeys(c for c in cities if c):
            site = gazetteer.lookup(city, country)
            if site:
                return site
    return None


def geocode(affiliations: Sequence[Affiliation], gazetteer: Gazetteer) -> GeocodeResult:
    """Resolve each affiliation to a gazetteer site; unresolved ones are listed, never guessed."""
    resolved, unresolved = [], []
    for aff in affiliations:
        site = geocode_one(aff, gazetteer)
        resolved.append(site)
        if site is None:
            unresolved.append(aff)
    return GeocodeResult(resolved, unresolved)


@dataclass
class GeocodeReport:
    without_affiliation: list[str] = field(default_factory=list)
    unresolved: list[tuple[str, str]] = field(default_factory=list)  # (record id, raw address)


def geocode_records(records: Iterable[Record], gazetteer: Gazetteer) -> tuple[list[Record], GeocodeReport]:
    """Return copies of ``records`` with city, country and coordinates filled in."""
    report = GeocodeReport()
    out = []
    for r in records:
        if not r.affiliations:
            report.without_affiliation.append(r.id)
            out.append(r)
            continue
        affs = []
        for a in r.affiliations:
            site = geocode_one(a, gazetteer)
            if site is None:
                report.unresolved.append((r.id, a.raw))
                affs.append(a)
            else:
                affs.append(dataclasses.replace(a, city=site.city, country=site.country,
                                                geocode=(site.lat, site.lon)))
        out.append(dataclasses.replace(r, affiliations=affs))
    if report.without_affiliation:
        log.info("%d records without affiliation skipped by geographic operations",
                 len(report.without_affiliation))
    return out, report


def record_sites(record: Record) -> dict[str, GeoSite]:
    """Distinct geocoded cities on a record, keyed by ``"City, Country"``."""
    sites = {}
    for a in record.affiliations:
        if a.geocode is not None and a.city and a.country:
            s = GeoSite(a.country, a.city, *a.geocode)
            sites.setdefault(s.key, s)
    return sites


# ---------------------------------------------------------------------------
# top-cited threshold and the excellence test

@dataclass
class TopCited:
    cutoff: int
    top_ids: frozenset[str]
    rank: int
    degenerate: bool


def top_cited_threshold(records: Sequence[Record], top_share: float) -> TopCited:
    """Citation cutoff at rank ``ceil(top_share * N)``; ties at the cutoff are included."""
    if not 0 < top_share < 1:
        raise ValueError("top_share must lie strictly between 0 and 1")
    if not records:
        raise ValueError("no records to threshold")
    missing = sorted(r.id for r in records if r.citation_count is None)
    if missing:
        raise ValueError(f"records without citation_count: {', '.join(missing)}")
    ordered = sorted(records, key=lambda r: -r.citation_count)
    rank = ceil_rank(top_share, len(ordered))
    cutoff = ordered[rank - 1].citation_count
    top = frozenset(r.id for r in ordered if r.citation_count >= cutoff)
    degenerate = ordered[0].citation_count == ordered[-1].citation_count
    if degenerate:
        log.warning("all %d records share citation count %d; top set is the whole window",
                    len(ordered), cutoff)
    return TopCited(cutoff, top, rank, degenerate)


@dataclass
class ExcellenceConfig:
    top_share: Optional[float] = None  # None: 0.10 for publications, 0.25 for patents
    alpha: float = 0.05
    chi2_critical: Optional[float] = None
    yates: bool = False
    min_sample: int = 20
    whole_period_threshold: bool = False

    def __post_init__(self):
        if self.top_share is not None and not 0 < self.top_share < 1:
            raise ValueError("top_share must lie strictly between 0 and 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie strictly between 0 and 1")
        if self.chi2_critical is None:
            if self.alpha == 0.05:
                self.chi2_critical = 3.841
            else:
                from scipy.stats import chi2
                self.chi2_critical = float(chi2.isf(self.alpha, 1))

    def share_for(self, kind: str) -> float:
        if self.top_share is not None:
            return self.top_share
        return 0.25 if kind == "patent" else 0.10


@dataclass
class ExcellenceResult:
    chi2: float
    significant: bool
    direction: str
    validity_warning: bool
    expected_top: float
    degenerate_margin: bool = False


def excellence_test(n_top: int, n_total: int, K: int, N: int,
                    config: Optional[ExcellenceConfig] = None) -> ExcellenceResult:
    """Pearson chi-square for site versus rest-of-world on top versus other records.

    One degree of freedom; continuity correction only when ``config.yates``.
    A table with an empty margin gets chi2 = 0 and is never significant.
    """
    config = config or ExcellenceConfig()
    if n_total < 1 or N < n_total or not 0 <= n_top <= n_total or n_top > K or K > N:
        raise ValueError(f"inconsistent counts n_top={n_top} n_total={n_total} K={K} N={N}")
    if K - n_top > N - n_total:
        raise ValueError("rest-of-world top count exceeds rest-of-world total")
    a, b = n_top, n_total - n_top
    c, d = K - n_top, (N - n_total) - (K - n_top)
    expected_top = n_total * K / N
    cross = n_top * N - n_total * K
    direction = "positive" if cross > 0 else "negative" if cross < 0 else "none"
    rows, cols = (a + b, c + d), (a + c, b + d)
    expected = [r * k / N for r in rows for k in cols]
    validity = any(e < 5 for e in expected)
    if 0 in rows or 0 in cols:
        log.debug("zero margin in 2x2 table (%d, %d, %d, %d)", a, b, c, d)
        return ExcellenceResult(0.0, False, direction, validity, expected_top, True)
    diff = abs(a * d - b * c)
    denom = rows[0] * rows[1] * cols[0] * cols[1]
    if config.yates:
        # N * (|ad-bc| - N/2)^2 kept in integers by scaling with 4
        adj = max(0, 2 * diff - N)
        chi2 = N * adj * adj / (4 * denom)
    else:
        chi2 = N * diff * diff / denom
    return ExcellenceResult(chi2, chi2 > config.chi2_critical, direction, validity, expected_top)


STYLES = {
    # (significant, direction) -> style
    (True, "positive"): "dark_green",
    (False, "positive"): "light_green",
    (True, "negative"): "red",
    (False, "negative"): "orange",
    (True, "none"): "grey",
    (False, "none"): "grey",
}
STYLE_COLORS = {
    "dark_green": "#006400",
    "light_green": "#90ee90",
    "red": "#ff0000",
    "orange": "#ffa500",
    "grey": "#999999",
}


def style_for(significant: bool, direction: str) -> str:
    return STYLES[(bool(significant), direction)]


@dataclass
class SiteStats:
    site: GeoSite
    n_total: int
    n_top: int
    expected_top: float
    chi2: float
    significant: bool
    direction: str
    validity_warning: bool

    @property
    def style(self) -> str:
        return style_for(self.significant, self.direction)

    def properties(self) -> dict:
        return {
            "city": self.site.city,
            "country": self.site.country,
            "n_total": self.n_total,
            "n_top": self.n_top,
            "expected": round(self.expected_top, 6),
            "chi2": round(self.chi2, 6),
            "significant": self.significant,
            "direction": self.direction,
            "validity_warning": self.validity_warning,
            "style": self.style,
        }


def geocoded(records: Iterable[Record]) -> list[Record]:
    return [r for r in records if record_sites(r)]


def excellence_map(records: Sequence[Record], window: Optional[Window] = None,
                   config: Optional[ExcellenceConfig] = None, kind: Optional[str] = None,
                   top_ids: Optional[frozenset[str]] = None) -> list[SiteStats]:
    """Excellence statistics for every city with at least one record in the window.

    ``top_ids`` overrides the per-window threshold. With
    ``config.whole_period_threshold`` the cutoff is computed over all of
    ``records`` rather than the window.
    """
    config = config or ExcellenceConfig()
    pool = [r for r in records if window is None or r.year in window]
    located = geocoded(pool)
    if top_ids is None and config.whole_period_threshold:
        everywhere = geocoded(records)
        if everywhere:
            share = config.share_for(kind or everywhere[0].kind)
            top_ids = top_cited_threshold(everywhere, share).top_ids
    if len(located) < config.min_sample:
        label = window.label if window else "all years"
        raise SampleTooSmall(
            f"sample too small for the statistical analysis: {len(located)} geocoded records "
            f"in {label} (minimum {config.min_sample})")
    if top_ids is None:
        kind = kind or located[0].kind
        top_ids = top_cited_threshold(located, config.share_for(kind)).top_ids
    N = len(located)
    K = sum(1 for r in located if r.id in top_ids)
    n_total: Counter[str] = Counter()
    n_top: Counter[str] = Counter()
    sites: dict[str, GeoSite] = {}
    for r in located:
        for key, site in record_sites(r).items():
            sites[key] = site
            n_total[key] += 1
            if r.id in top_ids:
                n_top[key] += 1
    out = []
    for key in sorted(sites, key=lambda k: (sites[k].country, sites[k].city)):
        res = excellence_test(n_top[key], n_total[key], K, N, config)
        out.append(SiteStats(sites[key], n_total[key], n_top[key], res.expected_top, res.chi2,
                             res.significant, res.direction, res.validity_warning))
    return out


# ---------------------------------------------------------------------------
# collaboration edges between cities

@dataclass
class CityNetwork:
    sites: dict[str, GeoSite]
    counts: dict[str, int]
    edges: dict[tuple[str, str], int]
    sizes: dict[str, float]


def collab_geo_edges(records: Iterable[Record], window: Optional[Window] = None, size_rule: str = "log10p1",
                     min_px: float = 2.0, max_px: float = 30.0) -> CityNetwork:
    """City co-occurrence edges: weight = records with addresses in both cities."""
    sites: dict[str, GeoSite] = {}
    counts: Counter[str] = Counter()
    edges: Counter[tuple[str, str]] = Counter()
    for r in records:
        if window is not None and r.year not in window:
            continue
        here = record_sites(r)
        sites.update(here)
        counts.update(here.keys())
        for u, v in combinations(sorted(here), 2):
            edges[(u, v)] += 1
    ordered = sorted(counts)
    return CityNetwork(
        sites={k: sites[k] for k in ordered},
        counts={k: counts[k] for k in ordered},
        edges={e: edges[e] for e in sorted(edges)},
        sizes=scale_radii({k: counts[k] for k in ordered}, size_rule, min_px, max_px),
    )


# ---------------------------------------------------------------------------
# exports

def _point(lon: float, lat: float) -> dict:
    return {"type": "Point", "coordinates": [round(lon, 6), round(lat, 6)]}


def _dump(obj: dict) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def export_geojson(stats: Sequence[SiteStats]) -> bytes:
    features = [{"type": "Feature", "id": s.site.key, "geometry": _point(s.site.lon, s.site.lat),
                 "properties": s.properties()} for s in stats]
    return _dump({"type": "FeatureCollection", "features": features})


def export_geojson_network(net: CityNetwork) -> bytes:
    features = []
    for key, site in net.sites.items():
        features.append({"type": "Feature", "id": key, "geometry": _point(site.lon, site.lat),
                         "properties": {"city": site.city, "country": site.country,
                                        "articles": net.counts[key], "size": round(net.sizes[key], 4)}})
    for (u, v), w in net.edges.items():
        a, b = net.sites[u], net.sites[v]
        features.append({"type": "Feature", "id": f"{u} -- {v}",
                         "geometry": {"type": "LineString",
                                      "coordinates": [[round(a.lon, 6), round(a.lat, 6)],
                                                      [round(b.lon, 6), round(b.lat, 6)]]},
                         "properties": {"source": u, "target": v, "weight": w}})
    return _dump({"type": "FeatureCollection", "features": features})


def _kml_color(hex_rgb: str) -> str:
    r, g, b = hex_rgb[1:3], hex_rgb[3:5], hex_rgb[5:7]
    return f"ff{b}{g}{r}"


def export_kml(stats: Sequence[SiteStats], name: str = "excellence") -> bytes:
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             '<kml xmlns="http://www.opengis.net/kml/2.2">',
             "<Document>",
             f"<name>{escape(name)}</name>"]
    for style, color in STYLE_COLORS.items():
        lines += [f'<Style id="{style}"><IconStyle><color>{_kml_color(color)}</color>'
                  "<Icon><href>http://maps.google.com/mapfiles/kml/shapes/shaded_dot.png</href></Icon>"
                  "</IconStyle></Style>"]
    for s in stats:
        props = s.properties()
        data_xml = "".join(f'<Data name="{k}"><value>{escape(str(v))}</value></Data>'
                           for k, v in props.items())
        lines += ["<Placemark>",
                  f"<name>{escape(s.site.key)}</name>",
                  f"<styleUrl>#{s.style}</styleUrl>",
                  f"<ExtendedData>{data_xml}</ExtendedData>",
                  f"<Point><coordinates>{s.site.lon:.6f},{s.site.lat:.6f}</coordinates></Point>",
                  "</Placemark>"]
    lines += ["</Document>", "</kml>"]
    return ("\n".join(lines) + "\n").encode("utf-8")


def validate_geojson(doc: bytes | str | dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` is not a valid FeatureCollection."""
    import jsonschema
    if not isinstance(doc, dict):
        doc = json.loads(doc)
    jsonschema.validate(doc, data.geojson_schema())
