"""Request handling shared by the HTTP services and the in-process transport.

``Api.handle`` maps (method, path, query, body) to (status, response bytes).
The FastAPI apps forward every request here unchanged, so the HTTP and
in-process paths produce byte-identical responses.
"""

from __future__ import annotations

import json
import logging
import time
from typing import Callable, Mapping

from pact import core, keys
from pact.alt import AltReport
from pact.core import MalformedEntryError
from pact.narrowcast import NarrowcastEntry, NarrowcastServer, Region, render_messages
from pact.registry import Registry

log = logging.getLogger(__name__)

DEFAULT_PAGE = 1000
MAX_PAGE = 10_000
# the only query fields a narrowcast read may carry
REGION_FIELDS = ("lat_prefix", "lon_prefix", "lat_bits", "lon_bits", "since")

_STATUS = {"rate-limited": 429, "duplicate": 409, "unauthorized": 403, "unknown-entry": 404}


class BadRequest(Exception):
    pass


def dumps(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def _int(params: Mapping[str, str], name: str, default: int | None = None) -> int:
    raw = params.get(name)
    if raw is None:
        if default is None:
            raise BadRequest(f"missing parameter {name}")
        return default
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise BadRequest(f"parameter {name} must be an integer") from None


def _field(body: Mapping, name: str) -> str:
    v = body.get(name)
    if not isinstance(v, str):
        raise BadRequest(f"missing field {name}")
    return v


def _b64(body: Mapping, name: str) -> bytes:
    try:
        return keys.b64d(_field(body, name))
    except ValueError:
        raise BadRequest(f"field {name} is not base64") from None


class Api:
    def __init__(
        self,
        registry: Registry | None = None,
        narrowcast: NarrowcastServer | None = None,
        clock: Callable[[], int] = lambda: int(time.time()),
    ):
        self.registry = registry
        self.narrowcast = narrowcast
        self.clock = clock
        self.routes = {
            ("GET", "/health"): self._health,
            ("POST", "/report"): self._report,
            ("POST", "/countersign"): self._countersign,
            ("GET", "/entries"): self._entries,
            ("POST", "/alt/report"): self._alt_report,
            ("GET", "/alt/entries"): self._alt_entries,
            ("GET", "/narrowcast/messages"): self._nc_messages,
            ("GET", "/narrowcast/size"): self._nc_size,
            ("POST", "/narrowcast/announce"): self._nc_announce,
        }

    def handle(
        self,
        method: str,
        path: str,
        params: Mapping[str, str] | None = None,
        body: bytes | None = None,
        source: str | None = None,
    ) -> tuple[int, bytes]:
        route = self.routes.get((method.upper(), "/" + path.strip("/")))
        if route is None:
            return 404, dumps({"error": "not found"})
        try:
            data = json.loads(body) if body else {}
            if not isinstance(data, dict):
                raise BadRequest("body must be a JSON object")
            return route(params or {}, data, source)
        except (BadRequest, json.JSONDecodeError, UnicodeDecodeError) as exc:
            return 400, dumps({"error": str(exc)})
        except LookupError as exc:
            return 404, dumps({"error": str(exc)})

    # -- registry -------------------------------------------------------------

    def _reg(self) -> Registry:
        if self.registry is None:
            raise LookupError("registry not served here")
        self.registry.release_tick(self.clock())
        return self.registry

    @staticmethod
    def _verdict(v) -> tuple[int, bytes]:
        if v.accepted:
            out = {"accepted": True, "tier": v.tier.label if v.tier is not None else None}
            if v.entry is not None:
                out["locator"] = v.entry.locator
            return 200, dumps(out)
        return _STATUS.get(v.reason, 400), dumps({"accepted": False, "reason": v.reason})

    def _health(self, params, body, source):
        out = {"status": "ok"}
        if self.registry is not None:
            reg = self._reg()
            out.update(entries=len(reg.entries), alt_entries=len(reg.alt_entries), pending=len(reg.pending))
        if self.narrowcast is not None:
            out["announcements"] = len(self.narrowcast.entries)
        return 200, dumps(out)

    def _report(self, params, body, source):
        reg = self._reg()
        try:
            entry = core.decode_entry(_b64(body, "entry"))
        except MalformedEntryError as exc:
            raise BadRequest(f"malformed entry: {exc}") from None
        verdict = reg.submit(entry, self.clock(), source=source)
        if verdict.accepted:
            log.info("report accepted from %s", source or "local")
        return self._verdict(verdict)

    def _countersign(self, params, body, source):
        reg = self._reg()
        v = reg.countersign(_field(body, "locator"), _field(body, "cert"), _b64(body, "signature"), self.clock())
        return self._verdict(v)

    def _page(self, params):
        cursor = _int(params, "cursor", 0)
        limit = _int(params, "limit", DEFAULT_PAGE)
        if cursor < 0 or not 1 <= limit <= MAX_PAGE:
            raise BadRequest("cursor must be >= 0 and limit in [1, 10000]")
        return cursor, limit

    def _entries(self, params, body, source):
        reg = self._reg()
        cursor, limit = self._page(params)
        recs, nxt = reg.page_records(reg.entries, cursor, limit)
        return 200, dumps({"entries": [keys.b64e(r) for r in recs], "next_cursor": nxt})

    def _alt_report(self, params, body, source):
        reg = self._reg()
        try:
            report = AltReport.decode(_b64(body, "report"))
        except ValueError as exc:
            raise BadRequest(f"malformed report: {exc}") from None
        return self._verdict(reg.submit_alt(report, self.clock(), source=source))

    def _alt_entries(self, params, body, source):
        reg = self._reg()
        cursor, limit = self._page(params)
        recs, nxt = reg.page_records(reg.alt_entries, cursor, limit)
        return 200, dumps({"entries": [keys.b64e(r) for r in recs], "next_cursor": nxt})

    # -- narrowcast -----------------------------------------------------------

    def _nc(self) -> NarrowcastServer:
        if self.narrowcast is None:
            raise LookupError("narrowcast not served here")
        return self.narrowcast

    @staticmethod
    def _region(params) -> tuple[Region, int]:
        extra = set(params) - set(REGION_FIELDS)
        if extra:
            raise BadRequest(f"unexpected parameters: {sorted(extra)}")
        try:
            region = Region(
                _int(params, "lat_prefix", 0),
                _int(params, "lon_prefix", 0),
                _int(params, "lat_bits", 0),
                _int(params, "lon_bits", 0),
            )
        except ValueError as exc:
            raise BadRequest(str(exc)) from None
        return region, _int(params, "since", 0)

    def _nc_messages(self, params, body, source):
        region, since = self._region(params)
        return 200, render_messages(self._nc().get_messages(region, since))

    def _nc_size(self, params, body, source):
        region, since = self._region(params)
        return 200, dumps({"bytes": self._nc().how_big(region, since)})

    def _nc_announce(self, params, body, source):
        nc = self._nc()
        try:
            entry = NarrowcastEntry.from_json(body)
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequest(f"malformed announcement: {exc}") from None
        ok, reason = nc.announce(entry, self.clock())
        if ok:
            return 200, dumps({"accepted": True})
        return _STATUS.get(reason, 400), dumps({"accepted": False, "reason": reason})
