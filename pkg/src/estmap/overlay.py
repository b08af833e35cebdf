"""Basemaps of categories, overlay frames, density grids and Rao-Stirling diversity.

A basemap is a fixed set of category nodes (WoS categories, journals, MeSH
terms or IPC classes) with coordinates, clusters and cosine-similarity
edges. An overlay frame counts a corpus's records per category for one time
window; frames over one basemap can be animated.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from estmap.records import IPC_RE, MESH_TREE_RE, Record, Window, atomic_write
from estmap.scaling import scale_radii

REFERENCE_SIZES = {"wos_category": 225, "journal": 10330, "mesh": 822}
DEFAULT_SIZE_RULES = {"mesh": "log2p1", "wos_category": "linear", "journal": "linear", "ipc": "linear"}
MESH_BRANCHES = {
    "C": "Diseases",
    "D": "Chemicals and Drugs",
    "E": "Analytical, Diagnostic and Therapeutic Techniques and Equipment",
}
BRANCH_COLORS = {"C": "#d62728", "D": "#2ca02c", "E": "#1f77b4"}
CLUSTER_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


class BasemapError(ValueError):
    pass


class SchemeMismatch(ValueError):
    pass


def cosine_similarity(M: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; a zero row is 0 against everything, itself included."""
    M = np.asarray(M, dtype=float)
    if (M < 0).any():
        raise ValueError("matrix must be non-negative")
    norms = np.sqrt((M * M).sum(1))
    G = M @ M.T
    nz = norms > 0
    S = np.zeros_like(G)
    S[np.ix_(nz, nz)] = G[np.ix_(nz, nz)] / np.outer(norms[nz], norms[nz])
    S = np.clip((S + S.T) / 2, 0.0, 1.0)
    S[nz, nz] = 1.0
    return S


@dataclass
class BaseNode:
    code: str
    label: str
    cluster: int
    x: float
    y: float
    branch: Optional[str] = None


@dataclass
class Basemap:
    id: str
    scheme: str
    nodes: list[BaseNode]
    edges: list[tuple[int, int, float]]
    similarity: Optional[np.ndarray] = field(default=None, repr=False)
    sparse: bool = False

    def __post_init__(self):
        codes = [n.code for n in self.nodes]
        if len(set(codes)) != len(codes):
            raise BasemapError("basemap codes are not unique")
        for n in self.nodes:
            if not (math.isfinite(n.x) and math.isfinite(n.y)):
                raise BasemapError(f"non-finite coordinates for {n.code}")
        k = len(self.nodes)
        for i, j, s in self.edges:
            if not (0 <= i < k and 0 <= j < k) or i == j:
                raise BasemapError(f"bad edge ({i}, {j})")
            if not 0 < s <= 1:
                raise BasemapError(f"edge similarity {s} outside (0, 1]")
        if self.similarity is not None:
            S = np.asarray(self.similarity, dtype=float)
            if S.shape != (k, k) or not np.allclose(S, S.T):
                raise BasemapError("similarity matrix must be square and symmetric")
            self.similarity = S
        self.index = {c: i for i, c in enumerate(codes)}

    @property
    def codes(self) -> list[str]:
        return [n.code for n in self.nodes]

    @property
    def ipc_level(self) -> Optional[int]:
        if self.scheme != "ipc" or not self.nodes:
            return None
        return len(self.nodes[0].code)

    def distance_matrix(self) -> np.ndarray:
        """``1 - s`` over the full (unpruned) similarity matrix, zero on the diagonal."""
        if self.similarity is None:
            raise BasemapError(f"basemap {self.id} carries no similarity matrix")
        D = 1.0 - self.similarity
        np.fill_diagonal(D, 0.0)
        return D

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "scheme": self.scheme,
            "nodes": [{"code": n.code, "label": n.label, "cluster": n.cluster, "branch": n.branch,
                       "x": round(n.x, 6), "y": round(n.y, 6)} for n in self.nodes],
            "edges": [{"i": i, "j": j, "s": round(s, 6)} for i, j, s in self.edges],
        }
        if self.similarity is not None:
            d["similarity"] = [[round(float(v), 9) for v in row] for row in self.similarity]
        return d

    def dumps(self) -> bytes:
        return (json.dumps(self.to_dict(), ensure_ascii=False) + "\n").encode("utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "Basemap":
        nodes = [BaseNode(n["code"], n.get("label", n["code"]), int(n.get("cluster", 0)),
                          float(n["x"]), float(n["y"]), n.get("branch")) for n in d["nodes"]]
        edges = [(int(e["i"]), int(e["j"]), float(e["s"])) for e in d.get("edges", [])]
        sim = np.asarray(d["similarity"], dtype=float) if d.get("similarity") is not None else None
        return cls(d.get("id", d["scheme"]), d["scheme"], nodes, edges, sim, sparse=not edges)


def load_basemap(source: bytes | str | Path, reference: bool = False) -> Basemap:
    """Read a basemap document. ``reference=True`` checks the published node counts."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        source = Path(source).read_bytes()
    bm = Basemap.from_dict(json.loads(source))
    if reference and bm.scheme in REFERENCE_SIZES and len(bm.nodes) != REFERENCE_SIZES[bm.scheme]:
        raise BasemapError(f"{bm.scheme} reference basemap should have {REFERENCE_SIZES[bm.scheme]} "
                           f"nodes, found {len(bm.nodes)}")
    return bm


def build_basemap(M: np.ndarray, codes: Sequence[str], scheme: str, seed: int = 0,
                  threshold: float = 0.05, labels: Optional[Sequence[str]] = None,
                  basemap_id: Optional[str] = None) -> Basemap:
    """Basemap from a category-by-category co-occurrence or cross-citation matrix.

    Edges keep pairs with similarity >= ``threshold``; coordinates come from
    the stress layout with edge length ``1 - s``; clusters from greedy
    modularity on the pruned, similarity-weighted graph.
    """
    import networkx as nx
    from networkx.algorithms.community import greedy_modularity_communities

    from estmap.network import Graph, layout_stress

    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != len(codes):
        raise BasemapError("matrix must be square with one code per row")
    if not M.any():
        raise BasemapError("degenerate basemap: all-zero matrix")
    S = cosine_similarity(M)
    k = len(codes)
    edges = [(i, j, float(S[i, j])) for i in range(k) for j in range(i + 1, k)
             if S[i, j] > 0 and S[i, j] >= threshold]
    g = Graph()
    for c in codes:
        g.add_node(c)
    lengths = {}
    for i, j, s in edges:
        g.add_edge(codes[i], codes[j], s)
        key = (codes[i], codes[j]) if codes[i] < codes[j] else (codes[j], codes[i])
        lengths[key] = max(1.0 - s, 0.01)
    coords = layout_stress(g, seed=seed, lengths=lengths).coords

    nxg = nx.Graph()
    nxg.add_nodes_from(range(k))
    nxg.add_weighted_edges_from(edges)
    comms = greedy_modularity_communities(nxg, weight="weight") if edges else [{i} for i in range(k)]
    comms = sorted((sorted(c) for c in comms), key=lambda c: (-len(c), c[0]))
    cluster = {i: ci for ci, comm in enumerate(comms) for i in comm}
    labels = labels or codes
    nodes = [BaseNode(c, labels[i], cluster[i], coords[c][0], coords[c][1],
                      c[0] if scheme == "mesh" else None) for i, c in enumerate(codes)]
    return Basemap(basemap_id or scheme, scheme, nodes, edges, S, sparse=not edges)


def read_matrix_tsv(text: bytes | str) -> tuple[list[str], np.ndarray]:
    """Square matrix with a header row of codes and the code in the first column."""
    if isinstance(text, bytes):
        text = text.decode("utf-8-sig")
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    if not lines:
        raise BasemapError("empty matrix file")
    codes = [c.strip() for c in lines[0].split("\t")[1:]]
    rows = []
    for line in lines[1:]:
        cells = line.split("\t")
        rows.append([float(x) for x in cells[1:]])
    M = np.array(rows)
    if M.shape != (len(codes), len(codes)):
        raise BasemapError(f"matrix shape {M.shape} does not match {len(codes)} codes")
    return codes, M


# ---------------------------------------------------------------------------
# classification codes

@dataclass(frozen=True)
class MeshCode:
    code: str
    branch: str

    @property
    def color(self) -> str:
        return BRANCH_COLORS[self.branch]


@dataclass
class MeshTruncation:
    codes: list[MeshCode]
    filtered: list[str]
    malformed: list[str]


def mesh_truncate(tree_numbers: Iterable[str], levels: int = 2,
                  branches: Mapping[str, str] = MESH_BRANCHES) -> MeshTruncation:
    """Cut tree numbers to their first ``levels`` dot-segments, keeping the given branches."""
    out = MeshTruncation([], [], [])
    for tn in tree_numbers:
        tn = tn.strip()
        if not MESH_TREE_RE.match(tn):
            out.malformed.append(tn)
            continue
        if tn[0] not in branches:
            out.filtered.append(tn)
            continue
        out.codes.append(MeshCode(".".join(tn.split(".")[:levels]), tn[0]))
    return out


@dataclass
class IpcTruncation:
    codes: list[str]
    skipped: list[str]


def ipc_truncate(codes: Iterable[str], level: int = 4) -> IpcTruncation:
    """Prefix of ``level`` characters: 3 gives the class (``C12``), 4 the subclass (``C12N``)."""
    if level not in (3, 4):
        raise ValueError("IPC level must be 3 or 4")
    out = IpcTruncation([], [])
    for c in codes:
        c = re.sub(r"\s+", "", c)
        if len(c) < level or not IPC_RE.match(c):
            out.skipped.append(c)
            continue
        out.codes.append(c[:level])
    return out


def record_scheme_codes(record: Record, basemap: Basemap, mesh_levels: int = 2) -> list[str]:
    """The record's codes mapped onto the basemap's scheme, deduplicated, in first-seen order."""
    raw = record.codes_of(basemap.scheme)
    if basemap.scheme == "mesh":
        mapped = [m.code for m in mesh_truncate(raw, mesh_levels).codes]
    elif basemap.scheme == "ipc":
        mapped = ipc_truncate(raw, basemap.ipc_level or 4).codes
    else:
        mapped = raw
    return list(dict.fromkeys(mapped))


# ---------------------------------------------------------------------------
# overlay frames

@dataclass
class OverlayFrame:
    basemap_id: str
    scheme: str
    window: Optional[Window]
    counts: dict[str, int]
    unmatched: list[tuple[str, int]]
    sizes: dict[str, float]
    size_rule: str

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "basemap": self.basemap_id,
            "scheme": self.scheme,
            "window": self.window.label if self.window else None,
            "size_rule": self.size_rule,
            "counts": dict(self.counts),
            "unmatched": [[c, n] for c, n in self.unmatched],
            "sizes": {k: round(v, 4) for k, v in self.sizes.items()},
        }

    def dumps(self) -> bytes:
        return (json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def project_overlay(records: Iterable[Record], basemap: Basemap, window: Optional[Window] = None,
                    size_rule: Optional[str] = None, min_px: float = 2.0, max_px: float = 24.0,
                    reference_max: Optional[float] = None, mesh_levels: int = 2) -> OverlayFrame:
    """Count records per basemap category; a record adds at most 1 to each category."""
    size_rule = size_rule or DEFAULT_SIZE_RULES.get(basemap.scheme, "linear")
    counts: Counter[str] = Counter()
    unmatched: Counter[str] = Counter()
    any_codes = scheme_codes = 0
    for r in records:
        if window is not None and r.year not in window:
            continue
        any_codes += bool(r.codes)
        codes = record_scheme_codes(r, basemap, mesh_levels)
        scheme_codes += bool(r.codes_of(basemap.scheme))
        for c in codes:
            if c in basemap.index:
                counts[c] += 1
            else:
                unmatched[c] += 1
    if any_codes and not scheme_codes:
        raise SchemeMismatch(f"no record carries {basemap.scheme} codes for basemap {basemap.id}")
    ordered = {c: counts[c] for c in basemap.codes if counts[c] > 0}
    all_counts = {c: counts.get(c, 0) for c in basemap.codes}
    return OverlayFrame(
        basemap_id=basemap.id, scheme=basemap.scheme, window=window, counts=ordered,
        unmatched=sorted(unmatched.items()),
        sizes=scale_radii(all_counts, size_rule, min_px, max_px, reference_max),
        size_rule=size_rule,
    )


# ---------------------------------------------------------------------------
# density heat map

@dataclass
class DensityGrid:
    values: np.ndarray  # rows follow y, columns follow x
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @property
    def cell_area(self) -> float:
        rows, cols = self.values.shape
        return (self.xmax - self.xmin) / cols * (self.ymax - self.ymin) / rows

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def to_text(self) -> str:
        rows, cols = self.values.shape
        lines = [f"# rows={rows} cols={cols} xmin={self.xmin:.6f} xmax={self.xmax:.6f} "
                 f"ymin={self.ymin:.6f} ymax={self.ymax:.6f}"]
        lines += [" ".join(f"{v:.6e}" for v in row) for row in self.values]
        return "\n".join(lines) + "\n"


def density_map(frame: OverlayFrame, basemap: Basemap, bandwidth: float, grid_resolution: int = 200,
                padding: float = 5.0) -> DensityGrid:
    """Count-weighted Gaussian kernel density over node positions, on cell centres.

    The grid spans the node bounding box widened by ``padding`` bandwidths on
    each side, so the integral over the grid matches the total count closely.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    xy = np.array([[n.x, n.y] for n in basemap.nodes]) if basemap.nodes else np.zeros((0, 2))
    w = np.array([frame.counts.get(n.code, 0) for n in basemap.nodes], dtype=float)
    if len(xy):
        lo, hi = xy.min(0), xy.max(0)
    else:
        lo = hi = np.zeros(2)
    pad = padding * bandwidth
    xmin, xmax, ymin, ymax = lo[0] - pad, hi[0] + pad, lo[1] - pad, hi[1] + pad
    nx_ = ny_ = grid_resolution
    xs = xmin + (np.arange(nx_) + 0.5) * (xmax - xmin) / nx_
    ys = ymin + (np.arange(ny_) + 0.5) * (ymax - ymin) / ny_
    keep = w > 0
    if not keep.any():
        return DensityGrid(np.zeros((ny_, nx_)), xmin, xmax, ymin, ymax)
    gx = np.exp(-((xs[None, :] - xy[keep, 0:1]) ** 2) / (2 * bandwidth ** 2))
    gy = np.exp(-((ys[None, :] - xy[keep, 1:2]) ** 2) / (2 * bandwidth ** 2))
    values = (gy.T * w[keep]) @ gx / (2 * math.pi * bandwidth ** 2)
    return DensityGrid(values, xmin, xmax, ymin, ymax)


# ---------------------------------------------------------------------------
# Rao-Stirling diversity

@dataclass
class DiversityReport:
    window: Optional[Window]
    scheme: str
    proportions: dict[str, float]
    delta: float
    convention: str = "sum over ordered pairs i != j of p_i * p_j * d_ij"

    def to_dict(self) -> dict:
        return {
            "window": self.window.label if self.window else None,
            "scheme": self.scheme,
            "delta": self.delta,
            "convention": self.convention,
            "proportions": self.proportions,
        }


def rao_stirling(counts: Mapping[str, int] | OverlayFrame, distance: np.ndarray, codes: Sequence[str],
                 window: Optional[Window] = None, scheme: str = "") -> DiversityReport:
    """Rao-Stirling diversity of ``counts`` under the distance matrix indexed by ``codes``."""
    if isinstance(counts, OverlayFrame):
        window = window or counts.window
        scheme = scheme or counts.scheme
        counts = counts.counts
    D = np.asarray(distance, dtype=float)
    if D.shape != (len(codes), len(codes)):
        raise ValueError("distance matrix does not match the code list")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
        raise ValueError("distance matrix must be symmetric with a zero diagonal")
    index = {c: i for i, c in enumerate(codes)}
    active = [(c, n) for c, n in counts.items() if n > 0]
    total = sum(n for _, n in active)
    if total <= 0:
        raise ValueError("empty frame: no activity to measure")
    missing = [c for c, _ in active if c not in index]
    if missing:
        raise KeyError(f"codes without distances: {missing[:5]}")
    idx = np.array([index[c] for c, _ in active])
    p = np.array([n for _, n in active], dtype=float) / total
    delta = float(p @ D[np.ix_(idx, idx)] @ p)
    return DiversityReport(window, scheme, {c: float(pi) for (c, _), pi in zip(active, p)}, delta)


# ---------------------------------------------------------------------------
# rendering and animation

def _node_color(node: BaseNode, scheme: str) -> str:
    if scheme == "mesh" and node.branch in BRANCH_COLORS:
        return BRANCH_COLORS[node.branch]
    return CLUSTER_COLORS[node.cluster % len(CLUSTER_COLORS)]


def render_overlay_svg(frame: OverlayFrame, basemap: Basemap, sequence: Optional[int] = None,
                       width: int = 800, height: int = 800) -> bytes:
    xs = [n.x for n in basemap.nodes] or [0.0]
    ys = [n.y for n in basemap.nodes] or [0.0]
    span = max(max(xs) - min(xs), max(ys) - min(ys), 1e-9)
    margin = 40.0
    scale = min(width, height) - 2 * margin
    cx, cy = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2

    def px(x: float, y: float) -> tuple[float, float]:
        return width / 2 + (x - cx) / span * scale, height / 2 - (y - cy) / span * scale

    label = frame.window.label if frame.window else "all"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f"<metadata>sequence={'' if sequence is None else f'{sequence:03d}'} window={escape(label)}</metadata>",
           '<rect width="100%" height="100%" fill="#ffffff"/>',
           '<g stroke="#c8cdd2" stroke-opacity="0.6">']
    for i, j, s in basemap.edges:
        (x1, y1), (x2, y2) = px(basemap.nodes[i].x, basemap.nodes[i].y), px(basemap.nodes[j].x, basemap.nodes[j].y)
        out.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke-width="{0.3 + s:.2f}"/>')
    out.append("</g>")
    out.append('<g stroke="#ffffff" stroke-width="0.5">')
    for n in basemap.nodes:
        x, y = px(n.x, n.y)
        count = frame.counts.get(n.code, 0)
        opacity = "0.9" if count else "0.25"
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{frame.sizes.get(n.code, 0.0):.2f}" '
                   f'fill="{_node_color(n, basemap.scheme)}" fill-opacity="{opacity}">'
                   f"<title>{escape(n.label)}: {count}</title></circle>")
    out += ["</g>", "</svg>"]
    return ("\n".join(out) + "\n").encode("utf-8")


def animate_frames(frames: Sequence[OverlayFrame], basemap: Basemap, outdir: Path | str,
                   prefix: str = "frame") -> list[Path]:
    """Write ``<prefix>_000.svg``/``.json`` onward, one pair per frame, in order."""
    ids = {f.basemap_id for f in frames}
    if len(ids) > 1 or (ids and ids != {basemap.id}):
        raise ValueError(f"frames use different basemaps: {sorted(ids)}")
    outdir = Path(outdir)
    written = []
    for k, frame in enumerate(frames):
        svg = outdir / f"{prefix}_{k:03d}.svg"
        js = outdir / f"{prefix}_{k:03d}.json"
        atomic_write(svg, render_overlay_svg(frame, basemap, sequence=k))
        atomic_write(js, frame.dumps())
        written += [svg, js]
    return written


def common_scale(records: Sequence[Record], basemap: Basemap, windows: Sequence[Window],
                 **kwargs) -> list[OverlayFrame]:
    """Frames for several windows sized on one shared scale (the largest count seen)."""
    raw = [project_overlay(records, basemap, w, **kwargs) for w in windows]
    top = max((max(f.counts.values(), default=0) for f in raw), default=0)
    return [project_overlay(records, basemap, w, reference_max=top, **kwargs) for w in windows]
