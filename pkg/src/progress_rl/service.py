"""JSON-over-HTTP client shared by the external decomposer and progress ports."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import httpx

from .errors import ProtocolError, TransportError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServiceEndpoint:
    url: str
    timeout: float = 10.0
    retries: int = 3
    backoff_base: float = 0.5
    token: str | None = field(default=None, repr=False)


@dataclass
class CallTelemetry:
    attempts: int = 0
    retries: int = 0
    elapsed: float = 0.0


def post_json(endpoint: ServiceEndpoint, payload: dict, *, transport: httpx.BaseTransport | None = None,
              sleep=time.sleep, telemetry: CallTelemetry | None = None):
    """POST ``payload`` and return the decoded JSON body.

    Transport failures and 5xx answers are retried ``endpoint.retries`` times with
    exponential backoff; anything else unusable raises ProtocolError.
    """
    tel = telemetry if telemetry is not None else CallTelemetry()
    headers = {"Authorization": f"Bearer {endpoint.token}"} if endpoint.token else {}
    start = time.monotonic()
    last_error = None
    for attempt in range(endpoint.retries + 1):
        tel.attempts = attempt + 1
        tel.retries = attempt
        if attempt:
            sleep(endpoint.backoff_base * 2 ** (attempt - 1))
        try:
            with httpx.Client(transport=transport, timeout=endpoint.timeout) as client:
                resp = client.post(endpoint.url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            last_error = exc
            log.warning("attempt %d to %s failed: %s", attempt + 1, endpoint.url, exc)
            continue
        if resp.status_code >= 500:
            last_error = f"HTTP {resp.status_code}"
            log.warning("attempt %d to %s got %s", attempt + 1, endpoint.url, resp.status_code)
            continue
        tel.elapsed = time.monotonic() - start
        if resp.status_code >= 400:
            raise ProtocolError(f"{endpoint.url} answered HTTP {resp.status_code}", raw=resp.text)
        try:
            return resp.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise ProtocolError("response body is not JSON", raw=resp.text) from None
    tel.elapsed = time.monotonic() - start
    raise TransportError(f"{endpoint.url} unreachable after {tel.attempts} attempts: {last_error}",
                         attempts=tel.attempts)
