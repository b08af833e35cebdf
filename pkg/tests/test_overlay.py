from __future__ import annotations

import json
import math
import random
import re

import numpy as np
import pytest

from estmap import data
from estmap.overlay import (BaseNode, Basemap, BasemapError, OverlayFrame, SchemeMismatch, animate_frames,
                            build_basemap, common_scale, cosine_similarity, density_map, ipc_truncate,
                            load_basemap, mesh_truncate, project_overlay, rao_stirling, read_matrix_tsv)
from estmap.records import CodeTag, Record, Window


def _block_matrix(sizes=(4, 4), seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    k = sum(sizes)
    M = rng.uniform(0, 0.05, (k, k))
    start = 0
    for s in sizes:
        M[start:start + s, start:start + s] += rng.uniform(5, 10, (s, s))
        start += s
    return (M + M.T) / 2


def _rec(i: int, scheme: str, codes, year: int = 2005) -> Record:
    return Record(id=f"r{i}", kind="publication", source_db="wos", title="t", year=year,
                  codes=[CodeTag(scheme, c) for c in codes])


def _toy_basemap(scheme="wos_category") -> Basemap:
    codes = ["A", "B", "C", "D"]
    nodes = [BaseNode(c, c, 0, float(x), float(y)) for c, (x, y) in zip(codes, [(0, 0), (1, 0), (0, 1), (1, 1)])]
    S = np.array([[1, .5, .2, 0], [.5, 1, 0, .2], [.2, 0, 1, .5], [0, .2, .5, 1]])
    return Basemap("toy", scheme, nodes, [(0, 1, .5), (2, 3, .5)], S)


# -- similarity and basemaps -----------------------------------------------------

def test_cosine_matches_naive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        M = rng.integers(0, 5, (7, 5)).astype(float)
        M[rng.integers(0, 7)] = 0.0
        S = cosine_similarity(M)
        for i in range(7):
            for j in range(7):
                a, b = M[i], M[j]
                na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
                want = 0.0 if na == 0 or nb == 0 else sum(x * y for x, y in zip(a, b)) / (na * nb)
                assert abs(S[i, j] - want) < 1e-12
    with pytest.raises(ValueError):
        cosine_similarity(-np.ones((2, 2)))


def test_build_basemap_two_blocks():
    M = _block_matrix()
    codes = [f"c{i}" for i in range(8)]
    bm = build_basemap(M, codes, "wos_category", seed=0)
    clusters = [n.cluster for n in bm.nodes]
    assert len(set(clusters)) == 2
    assert len(set(clusters[:4])) == 1 and len(set(clusters[4:])) == 1
    assert bm.dumps() == build_basemap(M, codes, "wos_category", seed=0).dumps()
    again = load_basemap(bm.dumps())
    assert again.codes == codes and again.edges == [(i, j, round(s, 6)) for i, j, s in bm.edges]


def test_build_basemap_threshold_and_errors():
    M = _block_matrix()
    sparse = build_basemap(M, [f"c{i}" for i in range(8)], "wos_category", threshold=1.0)
    assert all(s >= 1.0 - 1e-12 for _, _, s in sparse.edges)
    with pytest.raises(BasemapError):
        build_basemap(np.zeros((3, 3)), ["a", "b", "c"], "ipc")
    with pytest.raises(BasemapError):
        build_basemap(np.ones((2, 3)), ["a", "b"], "ipc")
    with pytest.raises(BasemapError):
        Basemap("x", "ipc", [BaseNode("a", "a", 0, 0, 0), BaseNode("a", "a", 0, 1, 1)], [])


def test_read_matrix_tsv():
    codes, M = read_matrix_tsv("\ta\tb\na\t1\t2\nb\t2\t1\n")
    assert codes == ["a", "b"] and M.tolist() == [[1, 2], [2, 1]]
    with pytest.raises(BasemapError):
        read_matrix_tsv("\ta\tb\na\t1\t2\n")


def test_reference_mesh_stub():
    bm = load_basemap(data.read_bytes("reference_mesh_822.json"), reference=True)
    assert len(bm.nodes) == 822 and bm.scheme == "mesh"
    small = _toy_basemap("mesh")
    with pytest.raises(BasemapError):
        load_basemap(small.dumps(), reference=True)


# -- code truncation -------------------------------------------------------------

def test_mesh_truncate():
    t = mesh_truncate(["C04.557.337.428", "D12.776", "A01.456", "bogus", "E05.393.420"])
    assert [m.code for m in t.codes] == ["C04.557", "D12.776", "E05.393"]
    assert [m.branch for m in t.codes] == ["C", "D", "E"]
    assert t.filtered == ["A01.456"] and t.malformed == ["bogus"]
    once = [m.code for m in t.codes]
    assert [m.code for m in mesh_truncate(once).codes] == once


def test_ipc_truncate():
    t = ipc_truncate(["C12N 15/113", "A61K", "A6", "zz99"])
    assert t.codes == ["C12N", "A61K"] and t.skipped == ["A6", "zz99"]
    assert ipc_truncate(["C12N 15/113"], level=3).codes == ["C12"]
    assert ipc_truncate(t.codes).codes == t.codes
    with pytest.raises(ValueError):
        ipc_truncate([], level=5)


# -- overlay frames ----------------------------------------------------------------

def test_project_overlay_dedupe_and_conservation():
    bm = _toy_basemap()
    recs = [_rec(0, "wos_category", ["A", "A", "B"]), _rec(1, "wos_category", ["B", "Z"]),
            _rec(2, "wos_category", ["C"], year=1990)]
    frame = project_overlay(recs, bm, Window(2002, 2006))
    assert frame.counts == {"A": 1, "B": 2}
    assert frame.unmatched == [("Z", 1)]
    # conservation: matched plus unmatched equals distinct codes per in-window record
    distinct = sum(len(set(r.codes_of("wos_category"))) for r in recs[:2])
    assert frame.total + sum(n for _, n in frame.unmatched) == distinct
    assert frame.sizes["B"] == 24.0 and frame.sizes["D"] == 2.0


def test_project_overlay_scheme_mismatch():
    with pytest.raises(SchemeMismatch):
        project_overlay([_rec(0, "ipc", ["C12N"])], _toy_basemap())


def test_common_scale_shares_reference():
    bm = _toy_basemap()
    recs = [_rec(i, "wos_category", ["A"], year=2003) for i in range(4)] + [_rec(9, "wos_category", ["B"], 2008)]
    early, late = common_scale(recs, bm, [Window(2002, 2006), Window(2007, 2011)])
    assert early.sizes["A"] == 24.0 and late.sizes["B"] < 24.0


# -- density -------------------------------------------------------------------------

def _frame(bm: Basemap, counts: dict) -> OverlayFrame:
    return OverlayFrame(bm.id, bm.scheme, None, counts, [], {}, "linear")


def test_density_single_node_peak_and_mass():
    bm = Basemap("one", "ipc", [BaseNode("C12N", "C12N", 0, 0.0, 0.0)], [])
    grid = density_map(_frame(bm, {"C12N": 3}), bm, bandwidth=0.5, grid_resolution=101)
    r, c = np.unravel_index(grid.values.argmax(), grid.values.shape)
    assert (r, c) == (50, 50)
    assert abs(grid.values[50, 50] - 3 / (2 * math.pi * 0.25)) < 1e-9
    assert abs(grid.mass() - 3) < 1e-3 * 3


def test_density_zero_weights_symmetry_and_mass():
    bm = _toy_basemap()
    zero = density_map(_frame(bm, {}), bm, 0.35, 100)
    assert not zero.values.any()
    sym = density_map(_frame(bm, {"A": 2, "B": 2, "C": 2, "D": 2}), bm, 0.35, 100)
    assert np.allclose(sym.values, sym.values[::-1, :]) and np.allclose(sym.values, sym.values[:, ::-1])
    grid = density_map(_frame(bm, {"A": 5, "D": 1}), bm, 0.35, 100)
    assert abs(grid.mass() - 6) <= 1e-3 * 6
    with pytest.raises(ValueError):
        density_map(_frame(bm, {}), bm, 0.0)


# -- Rao-Stirling --------------------------------------------------------------------

def _naive_rs(counts: dict, D: np.ndarray, codes: list[str]) -> float:
    total = sum(counts.values())
    p = {c: n / total for c, n in counts.items() if n > 0}
    return sum(p[a] * p[b] * D[codes.index(a), codes.index(b)] for a in p for b in p if a != b)


def test_rao_stirling_matches_naive_oracle():
    rng = random.Random(8)
    nprng = np.random.default_rng(8)
    codes = [f"k{i}" for i in range(12)]
    for _ in range(300):
        A = nprng.uniform(0, 1, (12, 12))
        D = (A + A.T) / 2
        np.fill_diagonal(D, 0.0)
        counts = {c: rng.randint(0, 9) for c in rng.sample(codes, rng.randint(1, 12))}
        if not any(counts.values()):
            counts[codes[0]] = 1
        got = rao_stirling(counts, D, codes).delta
        assert abs(got - _naive_rs(counts, D, codes)) < 1e-12


def test_rao_stirling_invariances_and_errors():
    bm = _toy_basemap()
    D = bm.distance_matrix()
    one = rao_stirling({"A": 7}, D, bm.codes)
    assert one.delta == 0.0
    base = rao_stirling({"A": 1, "D": 3}, D, bm.codes).delta
    assert abs(rao_stirling({"A": 5, "D": 15}, D, bm.codes).delta - base) < 1e-15  # scale invariance
    assert abs(rao_stirling({"A": 1, "D": 3, "B": 0}, D, bm.codes).delta - base) < 1e-15
    # ordered-pair convention: two equal categories at distance 1 give 0.5
    assert rao_stirling({"A": 1, "D": 1}, D, bm.codes).delta == 0.5
    with pytest.raises(ValueError):
        rao_stirling({}, D, bm.codes)
    with pytest.raises(KeyError):
        rao_stirling({"Q": 1}, D, bm.codes)
    bad = D.copy()
    bad[0, 1] = 0.9
    with pytest.raises(ValueError):
        rao_stirling({"A": 1}, bad, bm.codes)


# -- animation -----------------------------------------------------------------------

def test_animate_frames(tmp_path):
    bm = _toy_basemap()
    recs = [_rec(0, "wos_category", ["A"])]
    frames = [project_overlay(recs, bm, Window(2002, 2006)) for _ in range(3)]
    written = animate_frames(frames, bm, tmp_path)
    assert [p.name for p in written] == [f"frame_{k:03d}.{ext}" for k in range(3) for ext in ("svg", "json")]
    svgs = [(tmp_path / f"frame_{k:03d}.svg").read_text() for k in range(3)]
    strip = [re.sub(r"<metadata>.*?</metadata>", "", s) for s in svgs]
    assert svgs[0] != svgs[1] and strip[0] == strip[1] == strip[2]
    assert json.loads((tmp_path / "frame_002.json").read_text())["counts"] == {"A": 1}
    other = Basemap("other", "wos_category", bm.nodes, [], None)
    mixed = frames[:1] + [project_overlay(recs, other, Window(2002, 2006))]
    with pytest.raises(ValueError):
        animate_frames(mixed, bm, tmp_path)
