from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from estmap.cli import main
from estmap.geo import validate_geojson
from estmap.overlay import load_basemap


@pytest.fixture
def case_dir(tmp_path, case_manifest) -> Path:
    """A writable copy of the bundled case study."""
    dst = tmp_path / "case"
    shutil.copytree(case_manifest.parent, dst, ignore=shutil.ignore_patterns("out"))
    return dst


def _run(capsys, *argv) -> tuple[int, list[dict], str]:
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    lines = [json.loads(ln) for ln in captured.out.splitlines() if ln.strip()]
    return code, lines, captured.err


def _edit(manifest: Path, old: str, new: str) -> Path:
    text = manifest.read_text()
    assert old in text
    manifest.write_text(text.replace(old, new))
    return manifest


# -- exit codes ----------------------------------------------------------------------

def test_usage_errors_exit_1(capsys, case_dir):
    assert _run(capsys)[0] == 1
    assert _run(capsys, "nosuchcommand")[0] == 1
    assert _run(capsys, "counts")[0] == 1  # manifest missing
    assert _run(capsys, "geomap", "--manifest", case_dir / "rnai.ini", "--kind", "bogus")[0] == 1


def test_bad_manifest_exit_2(capsys, case_dir, tmp_path):
    m = case_dir / "rnai.ini"
    assert _run(capsys, "counts", "--manifest", tmp_path / "missing.ini")[0] == 2
    _edit(m, "alpha = 0.05", "alpha = 1.5")
    code, _, err = _run(capsys, "counts", "--manifest", m, "--output", tmp_path / "o")
    assert code == 2 and "alpha" in err


def test_bad_query_exit_2(capsys, case_dir, tmp_path):
    m = _edit(case_dir / "rnai.ini", "TI=microRNA or TI=miRNA", "TI=(microRNA or")
    assert _run(capsys, "trends", "--manifest", m, "--output", tmp_path / "o")[0] == 2
    assert _run(capsys, "query", "TI=(siRNA")[0] == 2


def test_geomap_refusal_exit_3(capsys, case_dir, tmp_path):
    args = ["geomap", "--manifest", case_dir / "rnai.ini", "--output", tmp_path / "o", "--kind", "patents",
            "--window", "1998-2001"]
    code, _, err = _run(capsys, *args)
    assert code == 3 and "sample too small" in err
    assert _run(capsys, *args, "--keep-going")[0] == 0


# -- individual commands ---------------------------------------------------------------

def test_counts_total_matches_corpus(capsys, case_dir, tmp_path):
    out = tmp_path / "o"
    m = case_dir / "rnai.ini"
    assert _run(capsys, "delineate", "--manifest", m, "--output", out)[0] == 0
    code, lines, _ = _run(capsys, "counts", "--manifest", m, "--output", out)
    assert code == 0
    for db, total in lines[0]["totals"].items():
        corpus = json.loads((out / "corpora" / f"{db}.json").read_text())
        assert total == len(corpus["record_ids"])
    tsv = (out / "counts.tsv").read_text().splitlines()
    assert tsv[-1].startswith("total\t")


def test_query_subcommand(capsys):
    code, lines, _ = _run(capsys, "query", 'TI=siRNA or TI="RNA interference"', "--dialect", "wos",
                          "--emit", "pubmed", "--emit", "uspto", "--retarget")
    assert code == 0
    assert lines[0]["pubmed"] == 'siRNA[Title] or "RNA interference"[Title]'
    assert lines[0]["uspto"] == 'ACLM/(siRNA or "RNA interference")'
    assert _run(capsys, "query", "TI=siRNA", "--dialect", "wos", "--emit", "uspto")[0] == 2


def test_basemap_build(capsys, tmp_path):
    matrix = tmp_path / "m.tsv"
    matrix.write_text("\ta\tb\tc\td\na\t9\t8\t0\t0\nb\t8\t9\t0\t1\nc\t0\t0\t9\t7\nd\t0\t1\t7\t9\n")
    out = tmp_path / "bm.json"
    code, _, _ = _run(capsys, "basemap-build", "--matrix", matrix, "--scheme", "ipc", "--out", out, "--id", "toy")
    assert code == 0
    bm = load_basemap(out)
    assert bm.id == "toy" and bm.codes == ["a", "b", "c", "d"]
    assert len({n.cluster for n in bm.nodes}) == 2
    matrix.write_text("\ta\tb\na\t0\t0\nb\t0\t0\n")
    assert _run(capsys, "basemap-build", "--matrix", matrix, "--scheme", "ipc", "--out", out)[0] == 2


# -- full report -----------------------------------------------------------------------

def _tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_report_deterministic_and_indexed(capsys, case_dir, tmp_path):
    m = case_dir / "rnai.ini"
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "report", "--manifest", m, "--output", a)[0] == 0
    assert _run(capsys, "report", "--manifest", m, "--output", b)[0] == 0
    assert _tree_digest(a) == _tree_digest(b)

    index = json.loads((a / "index.json").read_text())
    assert index["case"] == "rnai-synthetic" and index["retrieved_on"] == "2013-01-15"
    assert any("1998-2001" in r.get("window", "") for r in index["refusals"])
    for art in index["artifacts"]:
        p = a / art["path"]
        assert hashlib.sha256(p.read_bytes()).hexdigest() == art["sha256"]
        if art["type"] == "geojson":
            validate_geojson(p.read_bytes())
    types = {art["type"] for art in index["artifacts"]}
    assert {"jsonl", "json", "tsv", "geojson", "kml", "graphml", "svg", "txt"} <= types


@pytest.mark.slow
def test_console_entry_point_module():
    done = subprocess.run([sys.executable, "-m", "estmap", "query", "TI=RNAi", "--emit", "pubmed"],
                          capture_output=True, text=True, timeout=60)
    assert done.returncode == 0
    assert json.loads(done.stdout)["pubmed"] == "RNAi[Title]"
