"""Local stand-in for the search/fetch API, with scripted faults and a request log.

Run ``python -m estmap.harvest.mock --fixtures DIR`` to serve the payload
files in DIR (one file per id, named ``<id>.txt`` or ``<id>.jsonl``); the
chosen URL is printed on the first line of standard output.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse


@dataclass
class Fault:
    endpoint: str  # "esearch" or "efetch"
    call: int  # 1-based call number on that endpoint
    action: str  # "429", "500", "503", "timeout", "delay", "404"
    seconds: float = 0.0


@dataclass
class LoggedRequest:
    t: float
    endpoint: str
    params: dict[str, str]
    status: int


def _encode_cursor(offset: int) -> str:
    return base64.urlsafe_b64encode(f"offset:{offset}".encode()).decode().rstrip("=")


def _decode_cursor(token: str) -> int:
    raw = base64.urlsafe_b64decode(token + "=" * (-len(token) % 4)).decode()
    if not raw.startswith("offset:"):
        raise ValueError("bad cursor")
    return int(raw[7:])


class MockServer:
    """Threaded HTTP server on 127.0.0.1 with an ephemeral port."""

    def __init__(self, payloads: dict[str, bytes], db: str = "pubmed", faults: Optional[list[Fault]] = None,
                 timeout_seconds: float = 1.0):
        self.payloads = dict(sorted(payloads.items()))
        self.db = db
        self.faults = list(faults or [])
        self.timeout_seconds = timeout_seconds
        self.log: list[LoggedRequest] = []
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()
        self._httpd: Optional[ThreadingHTTPServer] = None
        self._thread: Optional[threading.Thread] = None

    @classmethod
    def from_dir(cls, directory: Path | str, **kwargs) -> "MockServer":
        payloads = {}
        for p in sorted(Path(directory).iterdir()):
            if p.suffix in (".txt", ".jsonl"):
                payloads[p.stem] = p.read_bytes()
        db = "uspto" if any(p.endswith(".jsonl") for p in map(str, Path(directory).iterdir())) else "pubmed"
        return cls(payloads, db=kwargs.pop("db", db), **kwargs)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_GET(self):
                server._handle(self)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def requests_to(self, endpoint: str) -> list[LoggedRequest]:
        return [r for r in self.log if r.endpoint == endpoint]

    # -- request handling --------------------------------------------------

    def _fault_for(self, endpoint: str) -> Optional[Fault]:
        with self._lock:
            n = self._calls[endpoint] = self._calls.get(endpoint, 0) + 1
        for f in self.faults:
            if f.endpoint == endpoint and f.call == n:
                return f
        return None

    def _record(self, endpoint: str, params: dict, status: int, t: float) -> None:
        with self._lock:
            self.log.append(LoggedRequest(t, endpoint, params, status))

    def _handle(self, req: BaseHTTPRequestHandler) -> None:
        t = time.monotonic()
        parsed = urlparse(req.path)
        endpoint = parsed.path.strip("/")
        params = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        if endpoint not in ("esearch", "efetch"):
            self._reply(req, 404, b"unknown endpoint")
            self._record(endpoint, params, 404, t)
            return
        fault = self._fault_for(endpoint)
        if fault is not None:
            if fault.action == "timeout":
                time.sleep(fault.seconds or self.timeout_seconds)
                self._record(endpoint, params, 0, t)
                try:
                    self._reply(req, 503, b"too late")
                except OSError:
                    pass
                return
            if fault.action == "delay":
                time.sleep(fault.seconds)
            else:
                status = int(fault.action)
                self._record(endpoint, params, status, t)
                headers = {"Retry-After": "0"} if status == 429 else {}
                self._reply(req, status, b"injected fault", headers)
                return
        if params.get("db", self.db) != self.db:
            self._record(endpoint, params, 400, t)
            self._reply(req, 400, b"unknown db")
            return
        if endpoint == "esearch":
            status, body, headers = self._esearch(params)
        else:
            status, body, headers = self._efetch(params)
        self._record(endpoint, params, status, t)
        self._reply(req, status, body, headers)

    def _esearch(self, params: dict) -> tuple[int, bytes, dict]:
        ids = list(self.payloads)
        try:
            retmax = int(params.get("retmax", 20))
            offset = _decode_cursor(params["cursor"]) if "cursor" in params else int(params.get("retstart", 0))
        except (ValueError, KeyError):
            return 400, b"bad paging parameters", {}
        page = ids[offset:offset + retmax]
        end = offset + len(page)
        body = {"count": len(ids), "retstart": offset, "idlist": page,
                "next": _encode_cursor(end) if end < len(ids) else None}
        return 200, json.dumps(body).encode(), {"Content-Type": "application/json"}

    def _efetch(self, params: dict) -> tuple[int, bytes, dict]:
        wanted = [i for i in params.get("id", "").split(",") if i]
        found = [self.payloads[i] for i in wanted if i in self.payloads]
        missing = [i for i in wanted if i not in self.payloads]
        if self.db == "uspto":
            body = b"".join(p if p.endswith(b"\n") else p + b"\n" for p in found)
        else:
            body = b"\n".join(found)
        headers = {"Content-Type": "text/plain; charset=utf-8"}
        if missing:
            headers["X-Missing-Ids"] = ",".join(missing)
        return 200, body, headers

    @staticmethod
    def _reply(req: BaseHTTPRequestHandler, status: int, body: bytes, headers: Optional[dict] = None) -> None:
        req.send_response(status)
        for k, v in (headers or {}).items():
            req.send_header(k, v)
        req.send_header("Content-Length", str(len(body)))
        req.end_headers()
        req.wfile.write(body)


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m estmap.harvest.mock", description=__doc__.splitlines()[0])
    ap.add_argument("--fixtures", required=True, type=Path, help="directory of per-id payload files")
    ap.add_argument("--fault", action="append", default=[], metavar="ENDPOINT:CALL:ACTION[:SECONDS]",
                    help="inject a fault, e.g. esearch:2:429 or efetch:1:timeout")
    args = ap.parse_args(argv)
    faults = []
    for spec in args.fault:
        parts = spec.split(":")
        faults.append(Fault(parts[0], int(parts[1]), parts[2], float(parts[3]) if len(parts) > 3 else 0.0))
    server = MockServer.from_dir(args.fixtures, faults=faults).start()
    print(server.url, flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
