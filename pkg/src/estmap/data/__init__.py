"""Bundled reference tables and schemas."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


def read_bytes(name: str) -> bytes:
    return resources.files(__name__).joinpath(name).read_bytes()


def path(name: str):
    return resources.files(__name__).joinpath(name)


@lru_cache(maxsize=None)
def default_mesh_trees() -> dict[str, list[str]]:
    from estmap.records import load_mesh_trees
    return load_mesh_trees(read_bytes("mesh_trees.txt"))


def tsv_pairs(name: str) -> list[tuple[str, str]]:
    rows = []
    for line in read_bytes(name).decode("utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        a, b = line.split("\t")[:2]
        rows.append((a.strip(), b.strip()))
    return rows


@lru_cache(maxsize=None)
def geojson_schema() -> dict:
    return json.loads(read_bytes("geojson.schema.json"))
