"""Co-authorship networks of cities and organisations.

Edges are undirected and weighted by the number of co-authored records;
each record links every pair of distinct nodes on it once. The layout is a
stress-majorization (SMACOF) minimisation of the Kamada-Kawai energy over
graph-theoretic distances.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from estmap import data
from estmap.geo import record_sites
from estmap.records import ParseError, Record, Window, ceil_rank
from estmap.scaling import size_term


@dataclass
class Node:
    id: str
    label: str
    kind: str
    article_count: int = 0


@dataclass
class Graph:
    nodes: dict[str, Node] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    n_articles: int = 0

    def add_node(self, node_id: str, label: Optional[str] = None, kind: str = "org") -> Node:
        if node_id not in self.nodes:
            self.nodes[node_id] = Node(node_id, label or node_id, kind)
        return self.nodes[node_id]

    def add_edge(self, u: str, v: str, weight: float = 1) -> None:
        if u == v:
            raise ValueError(f"self-loop on {u!r}")
        if u not in self.nodes or v not in self.nodes:
            raise KeyError("edge endpoint not in graph")
        key = (u, v) if u < v else (v, u)
        self.edges[key] = self.edges.get(key, 0) + weight

    def neighbours(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj

    @classmethod
    def from_edges(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> "Graph":
        g = cls()
        for n in nodes:
            g.add_node(n)
        for u, v in edges:
            g.add_edge(u, v)
        return g


# ---------------------------------------------------------------------------
# organisation names

_STOP_WORDS = {"of", "the", "and", "for", "at", "in", "de", "la", "le", "du", "der", "fur", "und"}


def _abbreviations() -> dict[str, str]:
    return dict(data.tsv_pairs("org_abbreviations.tsv"))


_ABBREV = _abbreviations()


def normalize_org(name: str) -> frozenset[str]:
    """Token set used for merge suggestions: folded, abbreviations expanded, stop words dropped."""
    text = name.casefold().replace("'", "").replace("’", "")
    tokens = re.findall(r"[^\W_]+", text)
    return frozenset(_ABBREV.get(t, t) for t in tokens if _ABBREV.get(t, t) not in _STOP_WORDS)


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


@dataclass(frozen=True)
class MergeSuggestion:
    a: str
    b: str
    score: float


def suggest_merges(raw_names: Iterable[str], threshold: float = 0.8) -> list[MergeSuggestion]:
    """Pairs of names that may denote one organisation, best first.

    Suggestions are for human review only; nothing is merged here.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    names = sorted(set(raw_names))
    tokens = {n: normalize_org(n) for n in names}
    out = []
    for a, b in combinations(names, 2):
        score = jaccard(tokens[a], tokens[b])
        if score >= threshold:
            out.append(MergeSuggestion(a, b, score))
    out.sort(key=lambda s: (-s.score, s.a, s.b))
    return out


def _key(name: str) -> str:
    return " ".join(name.split()).casefold()


class AliasMap:
    """Reviewed raw-name -> canonical-name entries. Applying it twice equals applying it once."""

    def __init__(self, entries: Optional[Mapping[str, str]] = None):
        self.entries: dict[str, str] = {}
        self.suggestions: list[MergeSuggestion] = []
        raw = {_key(k): " ".join(v.split()) for k, v in (entries or {}).items()}
        for k, v in raw.items():
            if not v:
                raise ValueError(f"empty canonical name for {k!r}")
        for k in raw:
            seen = {k}
            target = raw[k]
            while _key(target) in raw and raw[_key(target)] != target:
                if _key(target) in seen:
                    raise ValueError(f"alias cycle through {k!r}")
                seen.add(_key(target))
                target = raw[_key(target)]
            self.entries[k] = target

    @classmethod
    def load(cls, text: bytes | str) -> "AliasMap":
        if isinstance(text, bytes):
            text = text.decode("utf-8-sig")
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            cells = line.split("\t")
            if len(cells) != 2 or not cells[0].strip() or not cells[1].strip():
                raise ParseError("alias rows need raw and canonical names separated by a tab", lineno)
            entries[cells[0].strip()] = cells[1].strip()
        return cls(entries)

    def apply(self, name: str) -> str:
        return self.entries.get(_key(name), " ".join(name.split()))

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# graph construction

def record_nodes(record: Record, level: str, alias_map: Optional[AliasMap] = None) -> dict[str, str]:
    """Distinct node ids on a record (id -> label)."""
    if level == "city":
        return {k: k for k in record_sites(record)}
    if level != "org":
        raise ValueError(f"unknown network level {level!r}")
    alias_map = alias_map or AliasMap()
    out = {}
    for a in record.affiliations:
        if a.organisation:
            name = alias_map.apply(a.organisation)
            out.setdefault(name, name)
    return out


def build_coauthorship(records: Iterable[Record], level: str = "org", window: Optional[Window] = None,
                       alias_map: Optional[AliasMap] = None) -> Graph:
    g = Graph()
    for r in records:
        if window is not None and r.year not in window:
            continue
        nodes = record_nodes(r, level, alias_map)
        if not nodes:
            continue
        g.n_articles += 1
        for nid in sorted(nodes):
            g.add_node(nid, nodes[nid], level).article_count += 1
        for u, v in combinations(sorted(nodes), 2):
            g.add_edge(u, v)
    g.nodes = {k: g.nodes[k] for k in sorted(g.nodes)}
    g.edges = {k: g.edges[k] for k in sorted(g.edges)}
    return g


# ---------------------------------------------------------------------------
# components

def connected_components(graph: Graph) -> list[list[str]]:
    """Components as sorted id lists, largest first (ties by first id)."""
    parent = {n: n for n in graph.nodes}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in graph.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    groups: dict[str, list[str]] = {}
    for n in graph.nodes:
        groups.setdefault(find(n), []).append(n)
    comps = [sorted(c) for c in groups.values()]
    comps.sort(key=lambda c: (-len(c), c[0]))
    return comps


def percent(count: int, total: int) -> Decimal:
    """``count/total`` as a percentage rounded half-up to two decimals."""
    if total == 0:
        return Decimal("0.00")
    q = Fraction(100 * count, total)
    return (Decimal(q.numerator) / Decimal(q.denominator)).quantize(Decimal("0.01"), ROUND_HALF_UP)


@dataclass
class ComponentReport:
    window: Optional[Window]
    n_articles: int
    n_nodes: int
    n_ties: int
    total_weight: float
    n_components_min4: int
    giant_size: int
    largest_component: int
    isolated_count: int
    min_component_size: int = 4
    components: list[list[str]] = field(default_factory=list, repr=False)

    @property
    def giant_share(self) -> Fraction:
        return Fraction(self.giant_size, self.n_nodes) if self.n_nodes else Fraction(0)

    @property
    def isolated_share(self) -> Fraction:
        return Fraction(self.isolated_count, self.n_nodes) if self.n_nodes else Fraction(0)

    def to_dict(self) -> dict:
        return {
            "window": self.window.label if self.window else None,
            "scientific_articles": self.n_articles,
            "nodes": self.n_nodes,
            "ties": self.n_ties,
            "total_tie_weight": self.total_weight,
            "components": self.n_components_min4,
            "min_component_size": self.min_component_size,
            "giant_component": self.giant_size,
            "giant_component_pct": str(percent(self.giant_size, self.n_nodes)),
            "largest_component_any_size": self.largest_component,
            "isolated_nodes": self.isolated_count,
            "isolated_pct": str(percent(self.isolated_count, self.n_nodes)),
        }


def component_report(graph: Graph, window: Optional[Window] = None, min_component_size: int = 4) -> ComponentReport:
    """Structural summary in the layout of a co-authorship component table.

    ``giant_size`` is the largest component when it reaches
    ``min_component_size`` nodes and 0 otherwise; ``largest_component`` is
    the unrestricted maximum.
    """
    comps = connected_components(graph)
    degree = degree_centrality(graph)
    largest = len(comps[0]) if comps else 0
    return ComponentReport(
        window=window,
        n_articles=graph.n_articles,
        n_nodes=len(graph.nodes),
        n_ties=len(graph.edges),
        total_weight=sum(graph.edges.values()),
        n_components_min4=sum(1 for c in comps if len(c) >= min_component_size),
        giant_size=largest if largest >= min_component_size else 0,
        largest_component=largest,
        isolated_count=sum(1 for d in degree.values() if d == 0),
        min_component_size=min_component_size,
        components=comps,
    )


def format_reports(reports: Sequence[ComponentReport]) -> str:
    """Aligned text table with one column per window."""
    heads = [""] + [r.window.label if r.window else "all" for r in reports]
    rows = [
        ["Scientific articles"] + [str(r.n_articles) for r in reports],
        ["Nodes"] + [str(r.n_nodes) for r in reports],
        ["Ties"] + [str(r.n_ties) for r in reports],
        ["Components"] + [str(r.n_components_min4) for r in reports],
        ["Nodes in the giant component"] + [f"{r.giant_size} ({percent(r.giant_size, r.n_nodes)}%)" for r in reports],
        ["Isolated nodes"] + [f"{r.isolated_count} ({percent(r.isolated_count, r.n_nodes)}%)" for r in reports],
    ]
    table = [heads] + rows
    widths = [max(len(row[i]) for row in table) for i in range(len(heads))]
    lines = ["  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
                       for i, cell in enumerate(row)).rstrip() for row in table]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# centrality

def degree_centrality(graph: Graph) -> dict[str, int]:
    deg = {n: 0 for n in graph.nodes}
    for u, v in graph.edges:
        deg[u] += 1
        deg[v] += 1
    return deg


@dataclass
class TopCentral:
    ids: frozenset[str]
    threshold: int
    degenerate: bool


def top_central(graph: Graph, share: float = 0.05) -> TopCentral:
    """Nodes whose degree reaches that of the node at rank ``ceil(share * n)``."""
    deg = degree_centrality(graph)
    if not deg:
        return TopCentral(frozenset(), 0, True)
    ordered = sorted(deg.values(), reverse=True)
    threshold = ordered[ceil_rank(share, len(ordered)) - 1]
    if threshold == 0:
        return TopCentral(frozenset(), 0, True)
    return TopCentral(frozenset(n for n, d in deg.items() if d >= threshold), threshold, False)


# ---------------------------------------------------------------------------
# stress layout

def graph_distances(n: int, edges: Sequence[tuple[int, int]], lengths: Optional[Sequence[float]] = None) -> np.ndarray:
    if not edges:
        d = np.full((n, n), np.inf)
        np.fill_diagonal(d, 0.0)
        return d
    rows = [u for u, v in edges]
    cols = [v for u, v in edges]
    vals = list(lengths) if lengths is not None else [1.0] * len(edges)
    m = csr_matrix((vals, (rows, cols)), shape=(n, n))
    return shortest_path(m, method="D", directed=False)


def stress(X: np.ndarray, D: np.ndarray) -> float:
    n = len(X)
    iu = np.triu_indices(n, 1)
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))[iu]
    d = D[iu]
    return float(((dist - d) ** 2 / d ** 2).sum())


def classical_mds(D: np.ndarray) -> np.ndarray:
    """Torgerson scaling to two dimensions; the starting point for majorization."""
    n = len(D)
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1][:2]
    X = vecs[:, order] * np.sqrt(np.clip(vals[order], 0, None))
    if X.shape[1] < 2:
        X = np.hstack([X, np.zeros((n, 2 - X.shape[1]))])
    return X - X.mean(0)


def stress_majorization(D: np.ndarray, rng: np.random.Generator, max_iter: int = 300,
                        tol: float = 1e-7) -> tuple[np.ndarray, list[float]]:
    """Minimise sum_{i<j} d_ij^-2 (|x_i - x_j| - d_ij)^2 with Guttman transforms.

    ``D`` must be a finite distance matrix of one connected component.
    Starts from classical scaling turned by a seeded random angle and
    nudged by seeded noise. Returns the coordinates and the stress after
    every accepted iteration;
    a step that fails to lower the stress is discarded and ends the run,
    so the history never increases.
    """
    n = len(D)
    if n == 1:
        return np.zeros((1, 2)), [0.0]
    W = np.zeros_like(D)
    off = ~np.eye(n, dtype=bool)
    W[off] = D[off] ** -2.0
    V = -W
    np.fill_diagonal(V, W.sum(1))
    ones = np.full((n, n), 1.0 / n)
    Vinv = np.linalg.inv(V + ones) - ones
    X = classical_mds(D)
    angle = rng.uniform(0, 2 * math.pi)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    X = X @ rot + rng.standard_normal((n, 2)) * 1e-3
    history = [stress(X, D)]
    for _ in range(max_iter):
        diff = X[:, None, :] - X[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            B = np.where(dist > 0, -W * D / dist, 0.0)
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, -B.sum(1))
        Xn = Vinv @ (B @ X)
        s = stress(Xn, D)
        if not s < history[-1]:
            break
        gain = history[-1] - s
        X = Xn
        history.append(s)
        if gain <= tol * max(history[0], 1e-300) or s == 0.0:
            break
    return X, history


@dataclass
class Layout:
    coords: dict[str, tuple[float, float]]
    stress_history: list[list[float]]


def layout_stress(graph: Graph, seed: int = 0, lengths: Optional[Mapping[tuple[str, str], float]] = None,
                  max_iter: int = 300, padding: float = 1.0) -> Layout:
    """Lay out each connected component separately, then pack them on a grid, largest first."""
    rng = np.random.default_rng(seed)
    comps = connected_components(graph)
    placed: list[np.ndarray] = []
    histories = []
    for comp in comps:
        index = {nid: i for i, nid in enumerate(comp)}
        edges, lens = [], []
        for (u, v), w in graph.edges.items():
            if u in index and v in index:
                edges.append((index[u], index[v]))
                lens.append(lengths[(u, v)] if lengths is not None else 1.0)
        D = graph_distances(len(comp), edges, lens)
        X, hist = stress_majorization(D, rng, max_iter=max_iter)
        X = X - X.mean(0)
        placed.append(X)
        histories.append(hist)
    coords: dict[str, tuple[float, float]] = {}
    if not comps:
        return Layout(coords, histories)
    extent = max(float(np.abs(X).max()) if X.size else 0.0 for X in placed)
    cell = 2 * extent + padding
    ncols = math.ceil(math.sqrt(len(comps)))
    for k, (comp, X) in enumerate(zip(comps, placed)):
        row, col = divmod(k, ncols)
        offset = np.array([col * cell, -row * cell])
        for nid, xy in zip(comp, X + offset):
            coords[nid] = (float(xy[0]), float(xy[1]))
    return Layout(coords, histories)


# ---------------------------------------------------------------------------
# exports

def export_graphml(graph: Graph, coords: Optional[Mapping[str, tuple[float, float]]] = None) -> bytes:
    coords = coords or {}
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           '<graphml xmlns="http://graphml.graphdrawing.org/xmlns" '
           'xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" '
           'xsi:schemaLocation="http://graphml.graphdrawing.org/xmlns '
           'http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd">',
           '<key id="label" for="node" attr.name="label" attr.type="string"/>',
           '<key id="kind" for="node" attr.name="kind" attr.type="string"/>',
           '<key id="articles" for="node" attr.name="article_count" attr.type="int"/>',
           '<key id="x" for="node" attr.name="x" attr.type="double"/>',
           '<key id="y" for="node" attr.name="y" attr.type="double"/>',
           '<key id="weight" for="edge" attr.name="weight" attr.type="double"/>',
           '<graph id="G" edgedefault="undirected">']
    for nid, node in graph.nodes.items():
        parts = [f'<node id={quoteattr(nid)}>',
                 f'<data key="label">{escape(node.label)}</data>',
                 f'<data key="kind">{escape(node.kind)}</data>',
                 f'<data key="articles">{node.article_count}</data>']
        if nid in coords:
            x, y = coords[nid]
            parts += [f'<data key="x">{x:.6f}</data>', f'<data key="y">{y:.6f}</data>']
        out.append("".join(parts) + "</node>")
    for (u, v), w in graph.edges.items():
        out.append(f'<edge source={quoteattr(u)} target={quoteattr(v)}><data key="weight">{w:g}</data></edge>')
    out += ["</graph>", "</graphml>"]
    return ("\n".join(out) + "\n").encode("utf-8")


def _canvas(coords: Mapping[str, tuple[float, float]], width: float, height: float, margin: float):
    if not coords:
        return lambda xy: (width / 2, height / 2)
    xs = [c[0] for c in coords.values()]
    ys = [c[1] for c in coords.values()]
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1e-9)
    scale = min(width, height - 0) - 2 * margin
    cx, cy = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2

    def to_px(xy):
        return (width / 2 + (xy[0] - cx) / span * scale, height / 2 - (xy[1] - cy) / span * scale)
    return to_px


def export_network_svg(graph: Graph, coords: Mapping[str, tuple[float, float]], size_rule: str = "log10p1",
                       labels: Optional[Iterable[str]] = None, width: int = 800, height: int = 800,
                       min_radius: float = 2.0, max_radius: float = 18.0) -> bytes:
    """SVG drawing; node radius grows with the size rule's term of article_count.

    Only nodes in ``labels`` (default: the top 5% by degree) are labelled.
    """
    if labels is None:
        labels = top_central(graph).ids
    labels = set(labels)
    to_px = _canvas(coords, width, height, margin=max_radius + 10)
    terms = {n: size_term(node.article_count, size_rule) for n, node in graph.nodes.items()}
    top = max(terms.values(), default=0.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="#ffffff"/>',
           '<g stroke="#9aa5b1" stroke-opacity="0.7">']
    for (u, v), w in graph.edges.items():
        (x1, y1), (x2, y2) = to_px(coords[u]), to_px(coords[v])
        sw = 0.5 + math.log2(w) * 0.5 if w >= 1 else 0.5
        out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke-width="{sw:.2f}"/>')
    out.append("</g>")
    out.append('<g fill="#1f77b4" fill-opacity="0.85" stroke="#ffffff" stroke-width="0.5">')
    for nid in graph.nodes:
        x, y = to_px(coords[nid])
        r = min_radius + (max_radius - min_radius) * (terms[nid] / top if top > 0 else 0.0)
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}"><title>{escape(graph.nodes[nid].label)}'
                   f'</title></circle>')
    out.append("</g>")
    out.append('<g font-family="sans-serif" font-size="10" fill="#222222">')
    for nid in sorted(labels & graph.nodes.keys()):
        x, y = to_px(coords[nid])
        out.append(f'<text x="{x + 4:.2f}" y="{y - 4:.2f}">{escape(graph.nodes[nid].label)}</text>')
    out += ["</g>", "</svg>"]
    return ("\n".join(out) + "\n").encode("utf-8")
