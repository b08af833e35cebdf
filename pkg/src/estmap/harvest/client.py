"""Paginated search/fetch client with rate limiting, retries and resumable cursors."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional
from urllib.parse import urlencode

import requests

from estmap.records import atomic_write

log = logging.getLogger(__name__)

ENDPOINT_ENV = "ESTMAP_HARVEST_URL"
TRANSIENT_STATUS = {429, 500, 502, 503, 504}
DB_PARAM = {"medline": "pubmed", "uspto": "uspto"}


class HarvestError(RuntimeError):
    pass


class RetriesExhausted(HarvestError):
    pass


class RateLimiter:
    """Spaces successive acquisitions at least ``1/rate`` seconds apart."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate limit must be positive")
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next: Optional[float] = None

    def acquire(self) -> float:
        now = self.clock()
        if self._next is not None and now < self._next:
            self.sleep(self._next - now)
            now = self.clock()
        self._next = max(now, self._next or now) + self.interval
        return now


@dataclass
class HarvestJob:
    query_text: str
    source_db: str = "medline"
    page_size: int = 100
    cursor_path: Optional[Path] = None
    max_retries: int = 5
    rate_limit: float = 3.0
    limiter: Optional[RateLimiter] = field(default=None, repr=False)

    def __post_init__(self):
        if self.page_size < 1:
            raise ValueError("page_size must be at least 1")
        if self.rate_limit <= 0:
            raise ValueError("rate_limit must be positive")
        if self.source_db not in DB_PARAM:
            raise ValueError(f"no search endpoint for {self.source_db!r}; ingest exported files instead")
        if self.cursor_path is not None:
            self.cursor_path = Path(self.cursor_path)


@dataclass
class FetchResult:
    payloads: dict[str, bytes]
    missing: list[str]


def request_key(path: str, params: dict) -> str:
    """Stable name for a canned response: hash of the path and sorted query string."""
    canon = f"GET {path}?{urlencode(sorted((k, str(v)) for k, v in params.items()))}"
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:24]


class HarvestClient:
    """Talks to an E-utilities-style endpoint, or replays canned responses offline.

    ``base_url`` defaults to the ``ESTMAP_HARVEST_URL`` environment variable.
    With ``fixture_dir`` set, no network is used: each request is answered
    from ``<fixture_dir>/<request_key>.json``. ``record_dir`` saves live
    responses in that layout.
    """

    def __init__(self, base_url: Optional[str] = None, fixture_dir: Optional[Path | str] = None,
                 record_dir: Optional[Path | str] = None, timeout: float = 10.0,
                 api_key: Optional[str] = None, backoff_base: float = 0.5, backoff_factor: float = 2.0,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep,
                 rng: Optional[random.Random] = None):
        self.base_url = (base_url or os.environ.get(ENDPOINT_ENV) or "").rstrip("/") or None
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.record_dir = Path(record_dir) if record_dir else None
        if self.base_url is None and self.fixture_dir is None:
            raise HarvestError(f"no endpoint: pass base_url, set {ENDPOINT_ENV}, or use a fixture directory")
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.clock = clock
        self.sleep = sleep
        self.rng = rng or random.Random(0)
        self.session = requests.Session()
        if api_key:
            self.session.headers["api-key"] = api_key
        self.retries: list[tuple[str, int, str]] = []  # (path, attempt, reason)
        self.requests_made = 0

    # -- transport ---------------------------------------------------------

    def _limiter(self, job: HarvestJob) -> RateLimiter:
        if job.limiter is None:
            job.limiter = RateLimiter(job.rate_limit, self.clock, self.sleep)
        return job.limiter

    def _replay(self, path: str, params: dict) -> tuple[int, dict, bytes]:
        f = self.fixture_dir / f"{request_key(path, params)}.json"
        if not f.exists():
            raise HarvestError(f"no canned response for {path} {params} ({f.name})")
        doc = json.loads(f.read_text("utf-8"))
        return doc["status"], doc.get("headers", {}), doc["body"].encode("utf-8")

    def _save(self, path: str, params: dict, status: int, headers: dict, body: bytes) -> None:
        keep = {k: v for k, v in headers.items() if k.lower().startswith("x-")}
        doc = {"path": path, "params": params, "status": status, "headers": keep,
               "body": body.decode("utf-8")}
        atomic_write(self.record_dir / f"{request_key(path, params)}.json",
                     json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True))

    def get(self, path: str, params: dict, job: HarvestJob) -> tuple[dict, bytes]:
        """GET with rate limiting and retries; returns (headers, body) of a 200 response."""
        if self.fixture_dir is not None:
            status, headers, body = self._replay(path, params)
            if status != 200:
                raise HarvestError(f"canned response for {path} has status {status}")
            return headers, body
        limiter = self._limiter(job)
        url = f"{self.base_url}{path}"
        for attempt in range(job.max_retries + 1):
            limiter.acquire()
            self.requests_made += 1
            retry_after = 0.0
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                reason = type(exc).__name__
            else:
                if resp.status_code == 200:
                    if self.record_dir is not None:
                        self._save(path, params, 200, dict(resp.headers), resp.content)
                    return dict(resp.headers), resp.content
                if resp.status_code not in TRANSIENT_STATUS:
                    raise HarvestError(f"{path} returned {resp.status_code}: {resp.text[:200]}")
                reason = f"HTTP {resp.status_code}"
                try:
                    retry_after = float(resp.headers.get("Retry-After", 0))
                except ValueError:
                    retry_after = 0.0
            if attempt == job.max_retries:
                raise RetriesExhausted(f"{path}: giving up after {attempt + 1} attempts ({reason})")
            self.retries.append((path, attempt + 1, reason))
            cap = self.backoff_base * self.backoff_factor ** attempt
            delay = max(self.rng.uniform(0, cap), retry_after)
            log.warning("%s failed (%s); retry %d in %.3fs", path, reason, attempt + 1, delay)
            self.sleep(delay)
        raise AssertionError("unreachable")

    # -- cursor ------------------------------------------------------------

    @staticmethod
    def _cursor_state(job: HarvestJob) -> dict:
        fresh = {"query": job.query_text, "source_db": job.source_db, "cursor": None,
                 "pages_done": 0, "done": False}
        if job.cursor_path is None or not job.cursor_path.exists():
            return fresh
        state = json.loads(job.cursor_path.read_text("utf-8"))
        if state.get("query") != job.query_text or state.get("source_db") != job.source_db:
            log.warning("cursor file %s belongs to another query; starting over", job.cursor_path)
            return fresh
        return state

    @staticmethod
    def _persist(job: HarvestJob, state: dict) -> None:
        if job.cursor_path is not None:
            atomic_write(job.cursor_path, json.dumps(state, sort_keys=True))

    # -- operations --------------------------------------------------------

    def search(self, job: HarvestJob) -> Iterator[list[str]]:
        """Yield pages of record ids in order.

        The cursor is saved once the consumer asks for the next page, so a
        restarted job resumes after the last page it finished with.
        """
        state = self._cursor_state(job)
        while not state["done"]:
            params = {"db": DB_PARAM[job.source_db], "term": job.query_text, "retmax": job.page_size}
            if state["cursor"] is not None:
                params["cursor"] = state["cursor"]
            _, body = self.get("/esearch", params, job)
            result = json.loads(body)
            ids = [str(i) for i in result.get("idlist", [])]
            nxt = result.get("next")
            if ids:
                yield ids
            state = {**state, "cursor": nxt, "pages_done": state["pages_done"] + bool(ids),
                     "done": nxt is None, "count": result.get("count")}
            self._persist(job, state)

    def fetch_records(self, ids: list[str], job: HarvestJob) -> FetchResult:
        """Raw payload per id, requested in batches of at most ``job.page_size``."""
        result = FetchResult({}, [])
        for start in range(0, len(ids), job.page_size):
            batch = ids[start:start + job.page_size]
            params = {"db": DB_PARAM[job.source_db], "id": ",".join(batch)}
            headers, body = self.get("/efetch", params, job)
            found = split_payload(body, job.source_db)
            for i in batch:
                if i in found:
                    result.payloads[i] = found[i]
                else:
                    log.warning("id %s unknown to the server", i)
                    result.missing.append(i)
        return result


def split_payload(body: bytes, source_db: str) -> dict[str, bytes]:
    """Break a fetch response into per-id payloads in the records parsers' formats."""
    text = body.decode("utf-8")
    out: dict[str, bytes] = {}
    if source_db == "uspto":
        for line in text.splitlines():
            if line.strip():
                out[str(json.loads(line)["id"])] = (line + "\n").encode("utf-8")
        return out
    for chunk in re.split(r"\n\s*\n(?=PMID- )", text):
        chunk = chunk.strip("\n")
        m = re.match(r"PMID- (\S+)", chunk)
        if m:
            out[m.group(1)] = (chunk + "\n").encode("utf-8")
    return out


@dataclass
class HarvestSummary:
    pages: int
    fetched: list[str]
    missing: list[str]
    out_dir: Path


def _safe_name(rid: str) -> str:
    return re.sub(r"[^\w.\-]", "_", rid)


def run_harvest(client: HarvestClient, job: HarvestJob, out_dir: Path | str) -> HarvestSummary:
    """Search, fetch every page and store one payload file per id under ``out_dir``.

    Payload files are keyed by id, so a page fetched again after a restart
    overwrites rather than duplicates.
    """
    out_dir = Path(out_dir)
    ext = ".jsonl" if job.source_db == "uspto" else ".txt"
    fetched, missing, pages = [], [], 0
    for page in client.search(job):
        res = client.fetch_records(page, job)
        for rid, payload in res.payloads.items():
            atomic_write(out_dir / f"{_safe_name(rid)}{ext}", payload)
            fetched.append(rid)
        missing += res.missing
        pages += 1
    return HarvestSummary(pages, fetched, missing, out_dir)


def collect_payloads(out_dir: Path | str, source_db: str) -> bytes:
    """Concatenate stored payloads (sorted by file name) for the records parsers."""
    ext = ".jsonl" if source_db == "uspto" else ".txt"
    sep = b"" if source_db == "uspto" else b"\n"
    return sep.join(p.read_bytes() for p in sorted(Path(out_dir).glob(f"*{ext}")))
