"""Harvesting record ids and payloads from a paginated search API."""

from estmap.harvest.client import (
    ENDPOINT_ENV,
    FetchResult,
    HarvestClient,
    HarvestError,
    HarvestJob,
    HarvestSummary,
    RateLimiter,
    RetriesExhausted,
    collect_payloads,
    request_key,
    run_harvest,
    split_payload,
)

__all__ = [
    "ENDPOINT_ENV", "FetchResult", "HarvestClient", "HarvestError", "HarvestJob", "HarvestSummary",
    "RateLimiter", "RetriesExhausted", "collect_payloads", "request_key", "run_harvest", "split_payload",
]
