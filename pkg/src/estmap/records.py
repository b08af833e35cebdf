"""Record model, input parsers, the line-delimited corpus store and time windows.

Three input formats are understood:

* MEDLINE field-tagged text (``PMID- ...`` blocks separated by blank lines)
* tab-delimited Web of Science exports with a header row
* line-delimited patent objects (one JSON object per line)

All of them produce :class:`Record` objects. The canonical store keeps one JSON
object per line after a versioned header line.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from filelock import FileLock

log = logging.getLogger(__name__)

KINDS = ("publication", "patent")
SOURCE_DBS = ("wos", "medline", "uspto")
SCHEMES = ("wos_category", "mesh", "ipc", "journal")

MESH_TREE_RE = re.compile(r"^[A-Z]\d{2}(\.\d{3})*$")
# section, class, subclass, main group/subgroup; shorter prefixes are valid truncations
IPC_RE = re.compile(r"^[A-H](\d{2}([A-Z](\s*\d{1,4}(/\d{1,6})?)?)?)?$")

STORE_FORMAT = "estmap-store"
STORE_VERSION = 1


class ParseError(ValueError):
    """Raised when an input stream cannot be parsed at all."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CodeTag:
    scheme: str
    code: str
    label: Optional[str] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown code scheme {self.scheme!r}")
        if not self.code:
            raise ValueError("empty classification code")
        if self.scheme == "mesh" and not MESH_TREE_RE.match(self.code):
            raise ValueError(f"not a MeSH tree number: {self.code!r}")
        if self.scheme == "ipc" and not IPC_RE.match(self.code):
            raise ValueError(f"not an IPC code: {self.code!r}")

    def to_dict(self) -> dict:
        d = {"scheme": self.scheme, "code": self.code}
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CodeTag":
        return cls(d["scheme"], d["code"], d.get("label"))


@dataclass
class Affiliation:
    raw: str
    organisation: Optional[str] = None
    city: Optional[str] = None
    country: Optional[str] = None
    geocode: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.raw or not self.raw.strip():
            raise ValueError("affiliation text is empty")
        if self.geocode is not None:
            lat, lon = self.geocode
            if not (-90 <= lat <= 90 and -180 <= lon <= 180):
                raise ValueError(f"coordinates out of range: {self.geocode}")
            self.geocode = (float(lat), float(lon))

    @classmethod
    def from_raw(cls, raw: str) -> "Affiliation":
        """Split an address line into organisation, city and country.

        The first comma-separated segment is taken as the organisation, the
        last as the country and the one before it as the city. US-style
        tails such as ``"Boston, MA 02115 USA"`` are recognised.
        """
        raw = raw.strip()
        text = re.sub(r"\s*\S+@\S+\s*$", "", raw)  # trailing e-mail in MEDLINE AD
        text = re.sub(r"^\s*\[[^\]]*\]\s*", "", text)  # WoS author prefix
        parts = [p.strip(" .") for p in text.split(",") if p.strip(" .")]
        org = parts[0] if parts else None
        city = country = None
        if len(parts) >= 2:
            tail = parts[-1]
            m = re.match(r"^(?:[A-Z]{2}\s+)?(?:\d{5}(?:-\d{4})?\s+)?(USA|U\.S\.A)$", tail)
            if m:
                country = "USA"
                rest = parts[:-1]
                # "Baltimore, MD 21210, USA": state and ZIP in a segment of their own
                if len(rest) >= 2 and re.match(r"^(?:[A-Z]{2}\s+)?\d{5}(?:-\d{4})?$|^[A-Z]{2}$", rest[-1]):
                    rest = rest[:-1]
                city = rest[-1] if len(rest) >= 2 else None
            else:
                country = re.sub(r"^[\d\-\s]+", "", tail).strip() or None
                if len(parts) >= 3:
                    city = re.sub(r"^[A-Z]{0,3}[\d\-\s]+", "", parts[-2]).strip() or None
                    city = re.sub(r"\s+[A-Z]{2}$", "", city) if city else city
        return cls(raw=raw, organisation=org, city=city, country=country)

    def to_dict(self) -> dict:
        d = {"raw": self.raw, "organisation": self.organisation,
             "city": self.city, "country": self.country,
             "geocode": list(self.geocode) if self.geocode else None}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Affiliation":
        geo = d.get("geocode")
        return cls(d["raw"], d.get("organisation"), d.get("city"), d.get("country"),
                   tuple(geo) if geo else None)


@dataclass
class Record:
    id: str
    kind: str
    source_db: str
    title: str
    year: int
    abstract: Optional[str] = None
    claims: Optional[str] = None
    authors: list[str] = field(default_factory=list)
    affiliations: list[Affiliation] = field(default_factory=list)
    citation_count: Optional[int] = None
    codes: list[CodeTag] = field(default_factory=list)
    journal: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id is empty")
        if self.kind not in KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if self.source_db not in SOURCE_DBS:
            raise ValueError(f"unknown source database {self.source_db!r}")
        if not isinstance(self.year, int) or not 1900 <= self.year <= 2100:
            raise ValueError(f"year out of range: {self.year!r}")
        if self.citation_count is not None and self.citation_count < 0:
            raise ValueError("negative citation count")
        if self.claims is not None and self.kind != "patent":
            raise ValueError("claims text on a non-patent record")

    def codes_of(self, scheme: str) -> list[str]:
        return [c.code for c in self.codes if c.scheme == scheme]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "source_db": self.source_db,
            "title": self.title,
            "abstract": self.abstract,
            "claims": self.claims,
            "year": self.year,
            "authors": list(self.authors),
            "affiliations": [a.to_dict() for a in self.affiliations],
            "citation_count": self.citation_count,
            "codes": [c.to_dict() for c in self.codes],
            "journal": self.journal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Record":
        return cls(
            id=d["id"], kind=d["kind"], source_db=d["source_db"], title=d["title"],
            year=d["year"], abstract=d.get("abstract"), claims=d.get("claims"),
            authors=list(d.get("authors", [])),
            affiliations=[Affiliation.from_dict(a) for a in d.get("affiliations", [])],
            citation_count=d.get("citation_count"),
            codes=[CodeTag.from_dict(c) for c in d.get("codes", [])],
            journal=d.get("journal"),
        )


@dataclass(frozen=True, order=True)
class Window:
    start_year: int
    end_year: int

    def __post_init__(self):
        if self.start_year > self.end_year:
            raise ValueError(f"window starts after it ends: {self.start_year}-{self.end_year}")

    @property
    def label(self) -> str:
        return f"{self.start_year}-{self.end_year}"

    def __contains__(self, year: int) -> bool:
        return self.start_year <= year <= self.end_year

    @classmethod
    def parse(cls, label: str) -> "Window":
        m = re.fullmatch(r"\s*(\d{4})\s*-\s*(\d{4})\s*", label)
        if not m:
            raise ValueError(f"bad window label {label!r}, expected YYYY-YYYY")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class Provenance:
    query_text: str
    source_db: str
    retrieved_on: str  # ISO date


@dataclass
class Corpus:
    name: str
    record_ids: frozenset[str]
    provenance: Provenance

    def __len__(self) -> int:
        return len(self.record_ids)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "record_ids": sorted(self.record_ids),
            "provenance": {
                "query_text": self.provenance.query_text,
                "source_db": self.provenance.source_db,
                "retrieved_on": self.provenance.retrieved_on,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Corpus":
        p = d["provenance"]
        return cls(d["name"], frozenset(d["record_ids"]),
                   Provenance(p["query_text"], p["source_db"], p["retrieved_on"]))


@dataclass
class ParseReport:
    """Records skipped or fields dropped while parsing, with reasons."""

    skipped: list[tuple[str, str]] = field(default_factory=list)  # (locator, reason)
    warnings: list[str] = field(default_factory=list)

    def skip(self, locator: str, reason: str) -> None:
        log.warning("skipped %s: %s", locator, reason)
        self.skipped.append((locator, reason))

    def warn(self, message: str) -> None:
        log.warning(message)
        self.warnings.append(message)


def _as_text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data.lstrip("﻿")


def first_year(text: str) -> Optional[int]:
    """First run of four digits in a free-form date string."""
    m = re.search(r"(?<!\d)\d{4}(?!\d)", text or "")
    return int(m.group()) if m else None


# ---------------------------------------------------------------------------
# MEDLINE

_MEDLINE_TAG = re.compile(r"^([A-Z0-9]{1,4})\s*- ?(.*)$")


def load_mesh_trees(data: bytes | str) -> dict[str, list[str]]:
    """Read an NLM ``mtrees`` file (``Descriptor;TreeNumber`` per line)."""
    table: dict[str, list[str]] = {}
    for lineno, line in enumerate(_as_text(data).splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        name, sep, tree = line.rpartition(";")
        if not sep or not MESH_TREE_RE.match(tree.strip()):
            raise ParseError(f"malformed MeSH tree line {line!r}", lineno)
        table.setdefault(name.strip().casefold(), []).append(tree.strip())
    return table


def _medline_blocks(text: str) -> Iterator[list[tuple[int, str, str]]]:
    block: list[tuple[int, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if block:
                yield block
                block = []
            continue
        if line.startswith("      ") or line.startswith("\t"):
            if not block:
                raise ParseError("continuation line outside a record", lineno)
            n, tag, value = block[-1]
            block[-1] = (n, tag, value + " " + line.strip())
            continue
        m = _MEDLINE_TAG.match(line)
        if not m:
            raise ParseError(f"malformed tag line {line!r}", lineno)
        if m.group(1) == "PMID" and block:
            yield block
            block = []
        block.append((lineno, m.group(1), m.group(2).strip()))
    if block:
        yield block


def parse_medline(data: bytes | str, mesh_trees: Optional[dict[str, list[str]]] = None,
                  report: Optional[ParseReport] = None) -> list[Record]:
    """Parse MEDLINE field-tagged text.

    MH descriptors are resolved to tree numbers through ``mesh_trees``
    (see :func:`load_mesh_trees`); descriptors missing from the table are
    reported and dropped. Qualifiers (``/genetics``) and the major-topic
    star are stripped before lookup.
    """
    report = report if report is not None else ParseReport()
    if mesh_trees is None:
        from estmap.data import default_mesh_trees
        mesh_trees = default_mesh_trees()
    records: list[Record] = []
    seen: set[str] = set()
    for block in _medline_blocks(_as_text(data)):
        fields: dict[str, list[str]] = {}
        for _, tag, value in block:
            fields.setdefault(tag, []).append(value)
        first_line = block[0][0]
        pmid = (fields.get("PMID") or [""])[0].strip()
        if not pmid:
            report.skip(f"line {first_line}", "entry without PMID")
            continue
        rid = f"medline:{pmid}"
        if rid in seen:
            raise ParseError(f"duplicate id {rid}", first_line)
        seen.add(rid)
        year = first_year((fields.get("DP") or [""])[0])
        if year is None or not 1900 <= year <= 2100:
            report.skip(rid, "no usable publication year in DP")
            continue
        codes: list[CodeTag] = []
        for heading in fields.get("MH", []):
            name = heading.split("/")[0].strip().lstrip("*").strip()
            trees = mesh_trees.get(name.casefold())
            if not trees:
                report.warn(f"{rid}: MeSH descriptor {name!r} not in tree table")
                continue
            for tree in trees:
                tag = CodeTag("mesh", tree, name)
                if tag not in codes:
                    codes.append(tag)
        journal = (fields.get("JT") or fields.get("TA") or [None])[0]
        if journal:
            codes.append(CodeTag("journal", journal))
        records.append(Record(
            id=rid, kind="publication", source_db="medline",
            title=" ".join(fields.get("TI", [""])).strip(),
            abstract=" ".join(fields["AB"]).strip() if "AB" in fields else None,
            year=year,
            authors=list(fields.get("AU", [])),
            affiliations=[Affiliation.from_raw(a) for a in fields.get("AD", []) if a.strip()],
            codes=codes,
            journal=journal,
        ))
    return records


# ---------------------------------------------------------------------------
# Web of Science tab-delimited export

def _split_c1(cell: str) -> list[str]:
    """Split a WoS C1 cell into address strings, dropping ``[Authors]`` prefixes."""
    cell = re.sub(r"\[[^\]]*\]", "", cell)
    return [a.strip(" .") for a in cell.split(";") if a.strip(" .")]


def parse_wos_export(data: bytes | str, report: Optional[ParseReport] = None) -> list[Record]:
    report = report if report is not None else ParseReport()
    lines = _as_text(data).splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header row", 1)
    header = [h.strip() for h in lines[0].split("\t")]
    if "TI" not in header or "PY" not in header:
        raise ParseError("header row must name at least TI and PY columns", 1)
    records: list[Record] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        cells = line.split("\t")
        row = {h: (cells[i].strip() if i < len(cells) else "") for i, h in enumerate(header)}
        try:
            year = int(row["PY"])
        except ValueError:
            report.skip(f"line {lineno}", f"non-integer PY {row['PY']!r}")
            continue
        if not 1900 <= year <= 2100:
            report.skip(f"line {lineno}", f"PY {year} out of range")
            continue
        if row.get("UT"):
            rid = "wos:" + row["UT"].removeprefix("WOS:")
        else:
            digest = hashlib.sha1(f"{row['TI']}|{year}|{row.get('AU', '')}".encode()).hexdigest()
            rid = f"wos:{digest[:12]}"
        if rid in seen:
            raise ParseError(f"duplicate id {rid}", lineno)
        seen.add(rid)
        tc = row.get("TC", "")
        citations: Optional[int] = None
        if tc:
            try:
                citations = int(tc)
            except ValueError:
                report.warn(f"line {lineno}: non-integer TC {tc!r} ignored")
            else:
                if citations < 0:
                    report.warn(f"line {lineno}: negative TC ignored")
                    citations = None
        codes = [CodeTag("wos_category", c.strip()) for c in row.get("WC", "").split(";") if c.strip()]
        journal = row.get("SO") or None
        if journal:
            codes.append(CodeTag("journal", journal))
        records.append(Record(
            id=rid, kind="publication", source_db="wos",
            title=row["TI"], abstract=row.get("AB") or None, year=year,
            authors=[a.strip() for a in row.get("AU", "").split(";") if a.strip()],
            affiliations=[Affiliation.from_raw(a) for a in _split_c1(row.get("C1", ""))],
            citation_count=citations, codes=codes, journal=journal,
        ))
    return records


# ---------------------------------------------------------------------------
# Patents

def parse_patent_file(data: bytes | str, report: Optional[ParseReport] = None) -> list[Record]:
    """One JSON object per line: ``id, title, claims, filing_year, citation_count, ipc``.

    Optional ``inventors`` and ``addresses`` lists feed authors and affiliations.
    """
    report = report if report is not None else ParseReport()
    records: list[Record] = []
    seen: set[str] = set()
    for lineno, line in enumerate(_as_text(data).splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            report.skip(f"line {lineno}", f"invalid JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict) or not obj.get("id"):
            report.skip(f"line {lineno}", "object without id")
            continue
        if not obj.get("claims"):
            report.skip(f"line {lineno}", "missing claims")
            continue
        fy = obj.get("filing_year")
        if isinstance(fy, bool) or not isinstance(fy, (int, str)) or not str(fy).strip().isdigit():
            report.skip(f"line {lineno}", f"unusable filing year {fy!r}")
            continue
        year = int(fy)
        if not 1900 <= year <= 2100:
            report.skip(f"line {lineno}", f"filing year {year} out of range")
            continue
        rid = f"uspto:{obj['id']}"
        if rid in seen:
            raise ParseError(f"duplicate id {rid}", lineno)
        seen.add(rid)
        codes = []
        for ipc in obj.get("ipc", []) or []:
            ipc = str(ipc).strip()
            if IPC_RE.match(ipc):
                codes.append(CodeTag("ipc", ipc))
            else:
                report.warn(f"line {lineno}: invalid IPC code {ipc!r} dropped")
        cc = obj.get("citation_count")
        if cc is not None and (not isinstance(cc, int) or isinstance(cc, bool) or cc < 0):
            report.warn(f"line {lineno}: bad citation_count {cc!r} ignored")
            cc = None
        records.append(Record(
            id=rid, kind="patent", source_db="uspto",
            title=str(obj.get("title") or ""), claims=str(obj["claims"]), year=year,
            authors=[str(a) for a in obj.get("inventors", []) or []],
            affiliations=[Affiliation.from_raw(a) for a in obj.get("addresses", []) or [] if str(a).strip()],
            citation_count=cc, codes=codes,
        ))
    return records


# ---------------------------------------------------------------------------
# Canonical store

def dump_records(records: Iterable[Record]) -> str:
    lines = [json.dumps({"format": STORE_FORMAT, "version": STORE_VERSION})]
    lines += [json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=False) for r in records]
    return "\n".join(lines) + "\n"


def load_records(data: bytes | str) -> list[Record]:
    lines = _as_text(data).splitlines()
    if not lines:
        raise ParseError("empty store: header line missing", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise ParseError("store header is not JSON", 1) from None
    if header.get("format") != STORE_FORMAT:
        raise ParseError(f"not a record store (format={header.get('format')!r})", 1)
    if header.get("version") != STORE_VERSION:
        raise ParseError(f"unsupported store version {header.get('version')!r}", 1)
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        if line.strip():
            try:
                out.append(Record.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return out


def atomic_write(path: Path | str, data: bytes | str) -> None:
    """Write to a temporary sibling, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RecordStore:
    """Line-delimited record store on disk.

    Readers see either the old or the new file (writes go through a rename);
    writers serialise on a lock file next to the store.
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")

    def read(self) -> list[Record]:
        if not self.path.exists():
            return []
        return load_records(self.path.read_bytes())

    def by_id(self) -> dict[str, Record]:
        return {r.id: r for r in self.read()}

    def merge(self, records: Iterable[Record]) -> int:
        """Add records; an id already present is replaced (last write wins).

        Returns the number of replaced ids.
        """
        with self._lock:
            current = {r.id: r for r in self.read()}
            replaced = 0
            for r in records:
                if r.id in current:
                    replaced += 1
                    log.info("replacing existing record %s", r.id)
                current[r.id] = r
            atomic_write(self.path, dump_records(current[k] for k in sorted(current)))
        return replaced

    def resolve(self, corpus: Corpus) -> list[Record]:
        index = self.by_id()
        missing = corpus.record_ids - index.keys()
        if missing:
            raise KeyError(f"corpus {corpus.name!r} references unknown ids: {sorted(missing)[:5]}")
        return [index[i] for i in sorted(corpus.record_ids)]


# ---------------------------------------------------------------------------
# Windows and counts

@dataclass
class Partition:
    windows: list[tuple[Window, list[str]]]
    excluded: list[str]

    def labels(self) -> list[str]:
        return [w.label for w, _ in self.windows]


def make_windows(width_years: int, anchor_year: int, last_year: int,
                 first_window_override: Optional[Window | tuple[int, int]] = None) -> list[Window]:
    if width_years < 1:
        raise ValueError("window width must be at least one year")
    windows: list[Window] = []
    if first_window_override is not None:
        first = (first_window_override if isinstance(first_window_override, Window)
                 else Window(*first_window_override))
        if first.end_year >= anchor_year:
            raise ValueError(f"override {first.label} overlaps the regular windows starting {anchor_year}")
        windows.append(first)
    start = anchor_year
    while start <= last_year:
        windows.append(Window(start, start + width_years - 1))
        start += width_years
    return windows


def window_partition(records: Sequence[Record], width_years: int, anchor_year: Optional[int] = None,
                     first_window_override: Optional[Window | tuple[int, int]] = None,
                     last_year: Optional[int] = None) -> Partition:
    """Assign records to consecutive windows of ``width_years`` starting at ``anchor_year``.

    The sequence runs until it covers ``last_year`` (default: the latest
    record year). An override window, when given, comes first and may be
    shorter. Records outside every window are listed in ``excluded``.
    """
    years = [r.year for r in records]
    if anchor_year is None:
        if not years:
            raise ValueError("anchor year required for an empty corpus")
        anchor_year = min(years)
    if last_year is None:
        last_year = max(years) if years else anchor_year + width_years - 1
    windows = make_windows(width_years, anchor_year, last_year, first_window_override)
    buckets: dict[Window, list[str]] = {w: [] for w in windows}
    excluded = []
    for r in sorted(records, key=lambda r: r.id):
        for w in windows:
            if r.year in w:
                buckets[w].append(r.id)
                break
        else:
            excluded.append(r.id)
    if excluded:
        log.info("%d records fall outside all windows", len(excluded))
    return Partition([(w, buckets[w]) for w in windows], excluded)


def yearly_counts(records: Iterable[Record]) -> dict[int, int]:
    counts = Counter(r.year for r in records)
    if not counts:
        return {}
    return {y: counts.get(y, 0) for y in range(min(counts), max(counts) + 1)}


@dataclass
class TrendComparison:
    years: list[int]
    a: list[int]
    b: list[int]


def compare_trends(records_a: Iterable[Record], records_b: Iterable[Record]) -> TrendComparison:
    ca, cb = yearly_counts(records_a), yearly_counts(records_b)
    span = list(ca) + list(cb)
    if not span:
        return TrendComparison([], [], [])
    years = list(range(min(span), max(span) + 1))
    return TrendComparison(years, [ca.get(y, 0) for y in years], [cb.get(y, 0) for y in years])


def ceil_rank(share: float, n: int) -> int:
    """``ceil(share * n)`` computed on the decimal value of ``share``, at least 1."""
    from fractions import Fraction
    return max(1, math.ceil(Fraction(str(share)) * n))
