"""Node-size rules shared by the map exporters."""

from __future__ import annotations

import math
from typing import Mapping

RULES = ("log10p1", "log2p1", "linear")


def size_term(count: float, rule: str) -> float:
    if count < 0:
        raise ValueError("negative count")
    if rule == "log10p1":
        return math.log10(count + 1)
    if rule == "log2p1":
        return math.log2(count + 1)
    if rule == "linear":
        return float(count)
    raise ValueError(f"unknown size rule {rule!r}")


def scale_radii(counts: Mapping[str, float], rule: str, min_px: float = 2.0, max_px: float = 30.0,
                reference_max: float | None = None) -> dict[str, float]:
    """Map counts to radii in ``[min_px, max_px]``, linear in the rule's size term.

    A zero term lands on ``min_px``. ``reference_max`` pins the count that maps
    to ``max_px`` so several frames share one scale.
    """
    top = reference_max if reference_max is not None else max(counts.values(), default=0)
    top_term = size_term(top, rule)
    out = {}
    for key, c in counts.items():
        t = size_term(c, rule)
        frac = min(t / top_term, 1.0) if top_term > 0 else 0.0
        out[key] = min_px + (max_px - min_px) * frac
    return out
