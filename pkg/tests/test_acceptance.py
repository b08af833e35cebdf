"""Acceptance suite: one test per criterion, each check logged for the summary lines.

Run with ``pytest tests/test_acceptance.py`` (or ``python3 tests/test_acceptance.py``);
the terminal summary prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import random
import shutil
import subprocess
import sys
import time
import xml.etree.ElementTree as ET
from decimal import Decimal
from itertools import combinations
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

if __package__ in (None, ""):
    sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from estmap import data
from estmap.cli import main as cli_main
from estmap.geo import excellence_test, top_cited_threshold, validate_geojson
from estmap.harvest.mock import Fault, MockServer
from estmap.network import Graph, component_report, connected_components, graph_distances, layout_stress, \
    stress, stress_majorization
from estmap.overlay import rao_stirling
from estmap.querylang import emit_query, normalize_surface, parse_query
from estmap.records import Record, make_windows
from tests import acceptance_log
from tests.golden import CASES, COMPONENT_TABLE, SEARCH_STRINGS

CHI2_CRITICAL = 3.841


def _check(criterion: int, name: str, ok: bool) -> bool:
    acceptance_log.record(criterion, name, bool(ok))
    return bool(ok)


def _finish(criterion: int, results: list[bool]) -> None:
    failed = [name for name, ok in acceptance_log._results[criterion] if not ok]
    assert all(results), f"criterion {criterion} failed checks: {failed}"


# ---------------------------------------------------------------------------
# 1. query dialect golden suite

def test_criterion_01_query_golden_suite():
    t0 = time.perf_counter()
    results = []
    for (case, dialect), text in sorted(SEARCH_STRINGS.items()):
        try:
            emitted = emit_query(parse_query(text, dialect), dialect)
            ok = emitted == normalize_surface(text)
        except ValueError:
            ok = False
        results.append(_check(1, f"{case}/{dialect} native round trip", ok))
    for case in CASES:
        canonical = parse_query(SEARCH_STRINGS[(case, "wos")], "canonical")
        for target, retarget in (("pubmed", False), ("uspto", True)):
            got = emit_query(canonical, target, retarget=retarget)
            want = normalize_surface(SEARCH_STRINGS[(case, target)])
            results.append(_check(1, f"{case} canonical->{target}", got == want))
    results.append(_check(1, "runtime < 1 s", time.perf_counter() - t0 < 1.0))
    _finish(1, results)


# ---------------------------------------------------------------------------
# 2. co-authorship table arithmetic

def _graph_with(nodes: int, giant: int, isolated: int) -> Graph:
    """A graph with exactly the given node, giant-component and isolated counts."""
    ids = [f"v{i:04d}" for i in range(nodes)]
    g = Graph.from_edges(ids, [])
    k = 0
    if giant:
        for a, b in zip(ids[:giant], ids[1:giant]):
            g.add_edge(a, b)
        k = giant
    rest = ids[k:nodes - isolated]
    cap = min(3, giant) if giant else 3
    assert len(rest) != 1 and cap >= 2
    i = 0
    while i < len(rest):
        size = 3 if len(rest) - i == 3 and cap >= 3 else 2
        for a, b in zip(rest[i:i + size], rest[i + 1:i + size]):
            g.add_edge(a, b)
        i += size
    return g


def test_criterion_02_component_table():
    t0 = time.perf_counter()
    results = []
    tol = Decimal("0.01")
    for case, rows in COMPONENT_TABLE.items():
        for label, (nodes, giant, giant_pct, isolated, isolated_pct) in rows.items():
            rep = component_report(_graph_with(nodes, giant, isolated)).to_dict()
            counts_ok = (rep["nodes"], rep["giant_component"], rep["isolated_nodes"]) == (nodes, giant, isolated)
            results.append(_check(2, f"{case} {label} counts", counts_ok))
            results.append(_check(2, f"{case} {label} giant %",
                                  abs(Decimal(rep["giant_component_pct"]) - Decimal(giant_pct)) <= tol))
            results.append(_check(2, f"{case} {label} isolated %",
                                  abs(Decimal(rep["isolated_pct"]) - Decimal(isolated_pct)) <= tol))
    results.append(_check(2, "runtime < 1 s", time.perf_counter() - t0 < 1.0))
    _finish(2, results)


# ---------------------------------------------------------------------------
# 3. chi-square against a textbook implementation

def _textbook_chi2(n_top: int, n_total: int, K: int, N: int) -> float:
    table = [[n_top, n_total - n_top], [K - n_top, N - n_total - K + n_top]]
    rows = [sum(r) for r in table]
    cols = [table[0][j] + table[1][j] for j in range(2)]
    if 0 in rows or 0 in cols:
        return 0.0
    total = 0.0
    for i in range(2):
        for j in range(2):
            e = rows[i] * cols[j] / N
            total += (table[i][j] - e) ** 2 / e
    return total


def test_criterion_03_chi2_oracle():
    rng = random.Random(20130)
    grid = []
    for N in (20, 37, 100, 250, 1000):
        for n_total in (1, 2, 5, 10, N // 4, N // 2, N - 1, N):
            for K in (0, 1, 3, N // 10, N // 4, N // 2, N):
                lo, hi = max(0, K - (N - n_total)), min(n_total, K)
                grid += [(n_top, n_total, K, N) for n_top in sorted({lo, hi, (lo + hi) // 2})]
    while len(grid) < 12_000:
        N = rng.randint(2, 5000)
        n_total, K = rng.randint(1, N), rng.randint(0, N)
        grid.append((rng.randint(max(0, K - (N - n_total)), min(n_total, K)), n_total, K, N))
    worst, flag_ok, equal_ok, n_equal = 0.0, True, True, 0
    for n_top, n_total, K, N in grid:
        res = excellence_test(n_top, n_total, K, N)
        want = _textbook_chi2(n_top, n_total, K, N)
        worst = max(worst, abs(res.chi2 - want))
        flag_ok &= res.significant == (res.chi2 > CHI2_CRITICAL)
        if n_top * N == n_total * K:
            n_equal += 1
            equal_ok &= res.chi2 == 0.0
    results = [
        _check(3, f"{len(grid)} tuples within 1e-9 (worst {worst:.2e})", len(grid) >= 10_000 and worst <= 1e-9),
        _check(3, "significance flag is chi2 > 3.841", flag_ok),
        _check(3, f"equal proportions give 0 ({n_equal} cases)", equal_ok and n_equal > 0),
    ]
    # the flag flips exactly at the critical value: N=200 tables straddling 3.841
    flips = sorted((excellence_test(a, 100, 60, 200).chi2, excellence_test(a, 100, 60, 200).significant)
                   for a in range(0, 61))
    below = [c for c, s in flips if not s]
    above = [c for c, s in flips if s]
    results.append(_check(3, "flag flips at 3.841", max(below) <= CHI2_CRITICAL < min(above)))
    _finish(3, results)


# ---------------------------------------------------------------------------
# 4. Rao-Stirling against the naive double loop

def test_criterion_04_rao_stirling_oracle():
    rng = np.random.default_rng(44)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 51))
        codes = [f"c{i}" for i in range(k)]
        A = rng.uniform(0, 1, (k, k))
        D = (A + A.T) / 2
        np.fill_diagonal(D, 0.0)
        counts = {c: int(n) for c, n in zip(codes, rng.integers(0, 20, k))}
        if not any(counts.values()):
            counts[codes[0]] = 1
        total = sum(counts.values())
        naive = 0.0
        for i, ci in enumerate(codes):
            for j, cj in enumerate(codes):
                if i != j:
                    naive += counts[ci] / total * counts[cj] / total * D[i, j]
        worst = max(worst, abs(rao_stirling(counts, D, codes).delta - naive))
    single = rao_stirling({"a": 9}, np.array([[0.0, 1.0], [1.0, 0.0]]), ["a", "b"]).delta
    half = rao_stirling({"a": 1, "b": 1}, np.array([[0.0, 1.0], [1.0, 0.0]]), ["a", "b"]).delta
    results = [
        _check(4, f"1000 frames within 1e-12 (worst {worst:.1e})", worst <= 1e-12),
        _check(4, "single code gives 0", single == 0.0),
        _check(4, "p=(1/2,1/2), d=1 gives 0.5", half == 0.5),
    ]
    _finish(4, results)


# ---------------------------------------------------------------------------
# 5. components against a traversal oracle

def _bfs_components(nodes: list[str], edges: list[tuple[str, str]]) -> list[list[str]]:
    adj = {n: [] for n in nodes}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen, out = set(), []
    for n in nodes:
        if n in seen:
            continue
        queue, comp = [n], []
        seen.add(n)
        while queue:
            x = queue.pop(0)
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    queue.append(y)
        out.append(sorted(comp))
    return out


def test_criterion_05_component_oracle():
    rng = random.Random(55)
    part_ok = min4_ok = giant_ok = iso_ok = True
    for _ in range(500):
        n = rng.randint(0, 200)
        nodes = [f"n{i:03d}" for i in range(n)]
        p = rng.choice([0.0, 0.002, 0.005, 0.01, 0.02, 0.05])
        edges = [(u, v) for u, v in combinations(nodes, 2) if rng.random() < p]
        g = Graph.from_edges(nodes, edges)
        oracle = _bfs_components(nodes, edges)
        rep = component_report(g)
        largest = max((len(c) for c in oracle), default=0)
        part_ok &= sorted(map(tuple, connected_components(g))) == sorted(map(tuple, oracle))
        min4_ok &= rep.n_components_min4 == sum(1 for c in oracle if len(c) >= 4)
        giant_ok &= rep.giant_size == (largest if largest >= 4 else 0) and rep.largest_component == largest
        iso_ok &= rep.isolated_count == sum(1 for c in oracle if len(c) == 1)
    results = [_check(5, "partition", part_ok), _check(5, "min-size-4 count", min4_ok),
               _check(5, "giant size", giant_ok), _check(5, "isolated count", iso_ok)]
    _finish(5, results)


# ---------------------------------------------------------------------------
# 6. window partitioning

def test_criterion_06_windows():
    labels = [w.label for w in make_windows(5, 1982, 2011)]
    rnai = [w.label for w in make_windows(5, 2002, 2011, (1998, 2001))]
    table_labels = list(COMPONENT_TABLE["HPV"])
    results = [
        _check(6, "anchor 1982 width 5 gives the six table windows",
               labels == table_labels == list(COMPONENT_TABLE["TPMT"])),
        _check(6, "RNAi override 1998-2001, 2002-2006, 2007-2011",
               rnai == ["1998-2001", "2002-2006", "2007-2011"]),
    ]
    _finish(6, results)


# ---------------------------------------------------------------------------
# 7. stress layout

def test_criterion_07_layout():
    rng = random.Random(77)
    monotone = True
    for k in range(100):
        n = rng.randint(2, 40)
        edges = [(i, rng.randrange(i)) for i in range(1, n)]
        edges += [(u, v) for u, v in combinations(range(n), 2) if rng.random() < 0.08 and (u, v) not in edges
                  and (v, u) not in edges]
        _, hist = stress_majorization(graph_distances(n, edges), np.random.default_rng(k))
        monotone &= all(b <= a for a, b in zip(hist, hist[1:]))
    nodes = [f"v{i:02d}" for i in range(30)]
    g = Graph.from_edges(nodes, [(nodes[i], nodes[(i * 7 + 3) % 30]) for i in range(30) if i != (i * 7 + 3) % 30])
    a, b = layout_stress(g, seed=5).coords, layout_stress(g, seed=5).coords
    path = layout_stress(Graph.from_edges("abc", [("a", "b"), ("b", "c")]), seed=0).coords
    path_stress = stress(np.array([path[c] for c in "abc"]), graph_distances(3, [(0, 1), (1, 2)]))
    results = [
        _check(7, "stress non-increasing on 100 graphs", monotone),
        _check(7, "same seed bit-identical", a == b),
        _check(7, f"3-node path stress <= 1e-6 ({path_stress:.1e})", path_stress <= 1e-6),
    ]
    _finish(7, results)


# ---------------------------------------------------------------------------
# 8. top-cited thresholding

def test_criterion_08_top_cited():
    rng = random.Random(88)
    ok = {0.10: True, 0.25: True}
    ties_seen = 0
    for trial in range(1000):
        share = 0.10 if trial % 2 else 0.25
        n = rng.randint(1, 80)
        cites = [rng.randint(0, rng.choice([3, 20, 500])) for _ in range(n)]
        recs = [Record(id=f"r{i:03d}", kind="publication", source_db="wos", title="t", year=2000,
                       citation_count=c) for i, c in enumerate(cites)]
        got = top_cited_threshold(recs, share).top_ids
        rank = max(1, -(-round(share * 100) * n // 100))
        cutoff = sorted(cites, reverse=True)[rank - 1]
        want = {f"r{i:03d}" for i, c in enumerate(cites) if c >= cutoff}
        ties_seen += len(want) > rank
        ok[share] &= got == want
    flat = [Record(id=f"r{i}", kind="patent", source_db="uspto", title="t", year=2000, citation_count=4)
            for i in range(12)]
    degenerate = top_cited_threshold(flat, 0.25)
    results = [
        _check(8, "share 0.10 matches the sort oracle", ok[0.10]),
        _check(8, "share 0.25 matches the sort oracle", ok[0.25]),
        _check(8, f"ties at the cutoff included ({ties_seen} vectors with ties)", ties_seen > 0),
        _check(8, "all-equal case flagged degenerate", degenerate.degenerate and len(degenerate.top_ids) == 12),
    ]
    _finish(8, results)


# ---------------------------------------------------------------------------
# 9. harvest robustness

def _corpus(n: int = 45) -> dict[str, bytes]:
    return {str(20000 + i): f"PMID- {20000 + i}\nDP  - 2004\nTI  - siRNA study {i}\n".encode() for i in range(n)}


@pytest.mark.slow
def test_criterion_09_harvest(tmp_path):
    manifest = Path(str(data.path("casestudy/rnai.ini")))
    out = tmp_path / "harvest"
    rate = 10.0
    cmd = [sys.executable, "-m", "estmap", "harvest", "--manifest", str(manifest), "--db", "medline",
           "--out", str(out), "--page-size", "15", "--rate", str(rate), "--timeout", "0.3"]
    env = {k: v for k, v in os.environ.items() if k != "ESTMAP_HARVEST_URL"}
    faults = [Fault("esearch", 1, "429"), Fault("efetch", 1, "timeout", 0.8),
              Fault("esearch", 3, "delay", 20.0), Fault("efetch", 4, "429")]
    corpus = _corpus()
    with MockServer(corpus, faults=faults) as server:
        first = subprocess.Popen(cmd + ["--url", server.url], env=env, stdout=subprocess.DEVNULL,
                                 stderr=subprocess.PIPE)
        deadline = time.monotonic() + 30
        while server._calls.get("esearch", 0) < 3:
            if time.monotonic() > deadline or first.poll() is not None:
                first.kill()
                pytest.fail("first harvest run never reached the stalled page: "
                            + first.stderr.read().decode(errors="replace"))
            time.sleep(0.02)
        first.kill()  # forced restart while page 2 is in flight
        first.wait()
        n_first = len(server.log)
        second = subprocess.run(cmd + ["--url", server.url], env=env, capture_output=True, timeout=120)
        log = list(server.log)
    delivered = [i for r in log if r.endpoint == "efetch" and r.status == 200 for i in r.params["id"].split(",")]
    stored = sorted(p.stem for p in out.glob("*.txt"))
    statuses = {r.status for r in log}

    def min_gap(entries):
        t = sorted(r.t for r in entries)
        return min((b - a for a, b in zip(t, t[1:])), default=math.inf)
    # connection setup can shift the server's arrival stamp by a few ms
    jitter = 0.005
    gaps = [min_gap(log[:n_first]), min_gap(log[n_first:])]
    results = [
        _check(9, "second run exits 0", second.returncode == 0),
        _check(9, "faults were exercised (429, timeout)", 429 in statuses and 0 in statuses),
        _check(9, "stored id set equals the server corpus", stored == sorted(corpus)),
        _check(9, "every id delivered exactly once", sorted(delivered) == sorted(corpus)),
        _check(9, f"request spacing >= 1/rate (min gap {min(gaps):.4f}s)", min(gaps) >= 1 / rate - jitter),
    ]
    _finish(9, results)


# ---------------------------------------------------------------------------
# 10. end-to-end determinism

def _digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _valid_graphml(raw: bytes) -> bool:
    root = ET.fromstring(raw)
    if root.tag != "{http://graphml.graphdrawing.org/xmlns}graphml":
        return False
    nx.read_graphml(io.BytesIO(raw))
    return True


def _valid_svg(raw: bytes) -> bool:
    root = ET.fromstring(raw)
    return root.tag == "{http://www.w3.org/2000/svg}svg" and root.get("viewBox") is not None


def test_criterion_10_end_to_end(tmp_path, capsys):
    src = Path(str(data.path("casestudy/rnai.ini"))).parent
    case = tmp_path / "case"
    shutil.copytree(src, case, ignore=shutil.ignore_patterns("out"))
    manifest = case / "rnai.ini"
    t0 = time.perf_counter()
    code_a = cli_main(["report", "--manifest", str(manifest), "--output", str(tmp_path / "a")])
    elapsed = time.perf_counter() - t0
    code_b = cli_main(["report", "--manifest", str(manifest), "--output", str(tmp_path / "b")])
    capsys.readouterr()
    a, b = tmp_path / "a", tmp_path / "b"

    schema_ok = True
    kinds = set()
    for p in sorted(a.rglob("*")):
        if not p.is_file():
            continue
        raw = p.read_bytes()
        try:
            if p.suffix == ".geojson":
                validate_geojson(raw)
            elif p.suffix == ".graphml":
                schema_ok &= _valid_graphml(raw)
            elif p.suffix == ".svg":
                schema_ok &= _valid_svg(raw)
            else:
                continue
            kinds.add(p.suffix)
        except Exception:
            schema_ok = False

    index = json.loads((a / "index.json").read_text())
    windows = json.loads((a / "windows.json").read_text())
    small = {w["label"]: w["records"] for w in windows["patents"]["windows"]}
    refused = any(r.get("window") == "1998-2001" and r.get("kind") in ("patent", "patents")
                  for r in index["refusals"])
    n_records = sum(1 for _ in (a / "store.jsonl").open()) - 1
    results = [
        _check(10, f"report exits 0 and finishes < 10 s ({elapsed:.1f}s, {n_records} records)",
               code_a == code_b == 0 and elapsed < 10.0),
        _check(10, "byte-identical output trees", _digest(a) == _digest(b)),
        _check(10, f"GeoJSON/GraphML/SVG outputs validate ({', '.join(sorted(kinds))})",
               schema_ok and kinds == {".geojson", ".graphml", ".svg"}),
        _check(10, "11-record patent window refused", small.get("1998-2001") == 11 and refused),
    ]
    _finish(10, results)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
