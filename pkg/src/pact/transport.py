"""Client transports and typed clients for the registry and narrowcast services."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from pact import core, keys
from pact.alt import AltReport
from pact.api import Api, dumps
from pact.core import Entry
from pact.narrowcast import NarrowcastEntry, Region


class TransportError(Exception):
    """The service could not be reached; safe to retry."""


class ServiceError(Exception):
    def __init__(self, status: int, payload: dict):
        super().__init__(f"HTTP {status}: {payload}")
        self.status = status
        self.payload = payload


class Transport(Protocol):
    def request(
        self, method: str, path: str, params: Mapping[str, object] | None = None, body: bytes | None = None
    ) -> tuple[int, bytes]: ...


def _query(params: Mapping[str, object] | None) -> dict[str, str]:
    return {k: str(v) for k, v in (params or {}).items()}


class LocalTransport:
    """Calls an in-process Api directly; ``fail`` simulates an outage."""

    def __init__(self, api: Api, source: str = "local"):
        self.api = api
        self.source = source
        self.fail = False

    def request(self, method, path, params=None, body=None):
        if self.fail:
            raise TransportError("service unreachable")
        return self.api.handle(method, path, _query(params), body, source=self.source)


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        import httpx

        self._httpx = httpx
        self.client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def request(self, method, path, params=None, body=None):
        try:
            r = self.client.request(
                method, path, params=_query(params), content=body,
                headers={"content-type": "application/json"} if body else None,
            )
        except self._httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        return r.status_code, r.content

    def close(self) -> None:
        self.client.close()


@dataclass
class SpyRecord:
    method: str
    path: str
    params: dict
    body: bytes

    @property
    def egress(self) -> bytes:
        """Everything the caller chose to send: method, path, query and body."""
        q = "&".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.method} {self.path}?{q}\n".encode() + self.body


@dataclass
class SpyTransport:
    inner: Transport
    log: list[SpyRecord] = field(default_factory=list)

    def request(self, method, path, params=None, body=None):
        self.log.append(SpyRecord(method.upper(), path, _query(params), body or b""))
        return self.inner.request(method, path, params, body)

    def writes(self) -> list[SpyRecord]:
        return [r for r in self.log if r.method != "GET" or r.body]


def _call(t: Transport, method: str, path: str, params=None, payload: dict | None = None) -> dict:
    status, content = t.request(method, path, params, dumps(payload) if payload is not None else None)
    try:
        data = json.loads(content) if content else {}
    except json.JSONDecodeError:
        data = {"error": content.decode("utf-8", "replace")}
    if status >= 500:
        raise TransportError(f"HTTP {status}")
    if status >= 400 and not (isinstance(data, dict) and "accepted" in data):
        raise ServiceError(status, data)
    return data


class RegistryClient:
    def __init__(self, transport: Transport):
        self.t = transport

    def submit(self, entry: Entry) -> dict:
        return _call(self.t, "POST", "/report", payload={"entry": keys.b64e(core.encode_entry(entry))})

    def countersign(self, locator: str, cert: str, signature: bytes) -> dict:
        body = {"locator": locator, "cert": cert, "signature": keys.b64e(signature)}
        return _call(self.t, "POST", "/countersign", payload=body)

    def fetch(self, cursor: int, limit: int = 1000) -> tuple[list[Entry], int]:
        d = _call(self.t, "GET", "/entries", {"cursor": cursor, "limit": limit})
        return [core.decode_entry(keys.b64d(e)) for e in d["entries"]], d["next_cursor"]

    def submit_alt(self, report: AltReport) -> dict:
        return _call(self.t, "POST", "/alt/report", payload={"report": keys.b64e(report.encode())})

    def fetch_alt(self, cursor: int, limit: int = 1000) -> tuple[list[AltReport], int]:
        d = _call(self.t, "GET", "/alt/entries", {"cursor": cursor, "limit": limit})
        return [AltReport.decode(keys.b64d(e)) for e in d["entries"]], d["next_cursor"]

    def health(self) -> dict:
        return _call(self.t, "GET", "/health")


def _region_params(region: Region, since: int) -> dict:
    return {
        "lat_prefix": region.lat_prefix,
        "lon_prefix": region.lon_prefix,
        "lat_bits": region.lat_bits,
        "lon_bits": region.lon_bits,
        "since": since,
    }


class NarrowcastClient:
    def __init__(self, transport: Transport):
        self.t = transport

    def get_messages(self, region: Region, since: int = 0) -> list[NarrowcastEntry]:
        d = _call(self.t, "GET", "/narrowcast/messages", _region_params(region, since))
        return [NarrowcastEntry.from_json(m) for m in d["messages"]]

    def how_big(self, region: Region, since: int = 0) -> int:
        return _call(self.t, "GET", "/narrowcast/size", _region_params(region, since))["bytes"]

    def announce(self, entry: NarrowcastEntry) -> dict:
        return _call(self.t, "POST", "/narrowcast/announce", payload=entry.to_json())
