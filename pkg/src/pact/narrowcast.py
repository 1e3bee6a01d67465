"""Narrowcast: signed (area, message) announcements queried by coarse region.

Coordinates are reduced to regions by sign-magnitude truncation of their
binary expansion. Latitude uses 7 integer bits and longitude 8, each plus a
sign bit, so 8 latitude bits and 9 longitude bits give whole degrees and
every extra bit halves the cell. Truncation is toward zero, so cells nest:
a coarse cell is exactly the union of the fine cells that truncate into it.

Cells are half-open on the side away from zero (a value on a boundary
belongs to the cell further from the equator or prime meridian), and the
zero cell is the open interval ``(-w, w)``.
"""

from __future__ import annotations

import json
import math
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from pact import keys
from pact.registry import SignaturePolicy

EARTH_RADIUS_M = 6_371_008.8
MIN_RADIUS_M = 10
LAT_INT_BITS, LON_INT_BITS = 7, 8
MAX_LAT_BITS, MAX_LON_BITS = 32, 33
INDEX_LAT_BITS, INDEX_LON_BITS = 8, 9


def _width(bits: int, int_bits: int) -> float:
    return 2.0 ** (int_bits - (bits - 1))


def _truncate(v: float, bits: int, int_bits: int) -> int:
    if bits == 0:
        return 0
    scaled = math.floor(abs(v) / _width(bits, int_bits))
    return -scaled if v < 0 else scaled


def _interval(q: int, bits: int, int_bits: int, lo: float, hi: float) -> tuple[float, float]:
    """Closed hull of a cell, clipped to the coordinate range."""
    if bits == 0:
        return lo, hi
    w = _width(bits, int_bits)
    if q > 0:
        a, b = q * w, (q + 1) * w
    elif q < 0:
        a, b = (q - 1) * w, q * w
    else:
        a, b = -w, w
    return max(a, lo), min(b, hi)


def _coarsen(q: int, shift: int) -> int:
    m = abs(q) >> shift
    return -m if q < 0 else m


@dataclass(frozen=True)
class Region:
    lat_prefix: int
    lon_prefix: int
    lat_bits: int
    lon_bits: int

    def __post_init__(self):
        if not 0 <= self.lat_bits <= MAX_LAT_BITS or not 0 <= self.lon_bits <= MAX_LON_BITS:
            raise ValueError("precision out of range")
        for q, bits in ((self.lat_prefix, self.lat_bits), (self.lon_prefix, self.lon_bits)):
            if bits == 0 and q != 0:
                raise ValueError("a zero-bit prefix must be 0")
            if bits and abs(q) >= 1 << (bits - 1):
                raise ValueError(f"prefix {q} not representable in {bits} bits")

    def lat_range(self) -> tuple[float, float]:
        return _interval(self.lat_prefix, self.lat_bits, LAT_INT_BITS, -90.0, 90.0)

    def lon_range(self) -> tuple[float, float]:
        return _interval(self.lon_prefix, self.lon_bits, LON_INT_BITS, -180.0, 180.0)

    def coarsen(self, lat_bits: int, lon_bits: int) -> "Region":
        """The enclosing region at (no finer than) the given precision."""
        lb, ob = min(lat_bits, self.lat_bits), min(lon_bits, self.lon_bits)
        return Region(
            _coarsen(self.lat_prefix, self.lat_bits - lb) if lb else 0,
            _coarsen(self.lon_prefix, self.lon_bits - ob) if ob else 0,
            lb,
            ob,
        )


GLOBAL = Region(0, 0, 0, 0)


def _check_coords(lat: float, lon: float) -> None:
    if not (-90 <= lat <= 90 and -180 <= lon <= 180):
        raise ValueError(f"coordinates out of range: {lat}, {lon}")


def region_of(lat: float, lon: float, lat_bits: int, lon_bits: int) -> Region:
    _check_coords(lat, lon)
    if not 0 <= lat_bits <= MAX_LAT_BITS or not 0 <= lon_bits <= MAX_LON_BITS:
        raise ValueError("precision out of range")
    return Region(
        _truncate(lat, lat_bits, LAT_INT_BITS),
        _truncate(lon, lon_bits, LON_INT_BITS),
        lat_bits,
        lon_bits,
    )


# -- geometry --------------------------------------------------------------


def haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def _wrap(d: float) -> float:
    """Longitude difference folded into [-180, 180)."""
    return (d + 180.0) % 360.0 - 180.0


def _closest_lon(lon: float, lo: float, hi: float) -> float:
    if hi - lo >= 360.0:
        return lon
    off = (lon - lo) % 360.0
    if off <= hi - lo:
        return lo + off
    return lo if abs(_wrap(lon - lo)) <= abs(_wrap(lon - hi)) else hi


def rect_distance(lat: float, lon: float, lat_lo: float, lat_hi: float, lon_lo: float, lon_hi: float) -> float:
    """Great-circle distance in meters from a point to a lat/lon rectangle."""
    in_lon = lon_hi - lon_lo >= 360.0 or (lon - lon_lo) % 360.0 <= lon_hi - lon_lo
    if lat_lo <= lat <= lat_hi and in_lon:
        return 0.0
    best = math.inf
    # parallels: nearest longitude on the edge
    lam = _closest_lon(lon, lon_lo, lon_hi)
    for phi in (lat_lo, lat_hi):
        best = min(best, haversine(lat, lon, phi, lam))
    # meridians: cos d = A sin(phi) + B cos(phi) peaks at phi0 = atan2(A, B)
    sp, cp = math.sin(math.radians(lat)), math.cos(math.radians(lat))
    for lam in (lon_lo, lon_hi):
        b = cp * math.cos(math.radians(lam - lon))
        phi0 = math.degrees(math.atan2(sp, b))
        cands = [lat_lo, lat_hi] + ([phi0] if lat_lo <= phi0 <= lat_hi else [])
        for phi in cands:
            best = min(best, haversine(lat, lon, phi, lam))
    return best


def circle_hits_region(area: "Area", region: Region, slack: float = 0.0) -> bool:
    (a, b), (c, d) = region.lat_range(), region.lon_range()
    return rect_distance(area.lat, area.lon, a, b, c, d) <= area.radius + slack


# -- entries ---------------------------------------------------------------


@dataclass(frozen=True)
class Area:
    lat: float
    lon: float
    radius: int
    t_begin: int
    t_end: int

    def problem(self) -> str | None:
        if not isinstance(self.radius, int) or not MIN_RADIUS_M <= self.radius < 2**32:
            return "radius"
        if not (-90 <= self.lat <= 90 and -180 <= self.lon <= 180):
            return "malformed"
        if not 0 <= self.t_begin <= self.t_end < 2**64:
            return "malformed"
        return None

    def to_json(self) -> dict:
        return {"lat": self.lat, "lon": self.lon, "radius": self.radius, "t_begin": self.t_begin, "t_end": self.t_end}

    @classmethod
    def from_json(cls, d: dict) -> "Area":
        return cls(float(d["lat"]), float(d["lon"]), int(d["radius"]), int(d["t_begin"]), int(d["t_end"]))


def signing_bytes(area: Area, message: bytes) -> bytes:
    return struct.pack(
        ">qqIQQ",
        round(area.lat * 1e7),
        round(area.lon * 1e7),
        area.radius,
        area.t_begin,
        area.t_end,
    ) + message


@dataclass(frozen=True)
class NarrowcastEntry:
    area: Area
    message: bytes
    signature: bytes
    signer: str
    received_at: int = 0

    def to_json(self) -> dict:
        return {
            "area": self.area.to_json(),
            "message": keys.b64e(self.message),
            "signature": keys.b64e(self.signature),
            "signer": self.signer,
            "received_at": self.received_at,
        }

    @classmethod
    def from_json(cls, d: dict) -> "NarrowcastEntry":
        return cls(
            Area.from_json(d["area"]),
            keys.b64d(d["message"]),
            keys.b64d(d["signature"]),
            str(d["signer"]),
            int(d.get("received_at", 0)),
        )


def sign_announcement(area: Area, message: bytes, sk: keys.SigningKey, signer: str) -> NarrowcastEntry:
    return NarrowcastEntry(area, message, sk.sign(signing_bytes(area, message)), signer)


def render_messages(entries: Iterable[NarrowcastEntry]) -> bytes:
    """The exact response body served for a message query."""
    body = {"messages": [e.to_json() for e in entries]}
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


# -- server ------------------------------------------------------------------


@dataclass
class NarrowcastServer:
    whitelist: SignaturePolicy = field(default_factory=SignaturePolicy)
    entries: list[NarrowcastEntry] = field(default_factory=list)
    _index: dict[tuple[int, int], list[int]] = field(default_factory=lambda: defaultdict(list))
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def announce(self, entry: NarrowcastEntry, now: int) -> tuple[bool, str | None]:
        reason = entry.area.problem()
        if reason:
            return False, reason
        if entry.signer not in self.whitelist.whitelist:
            return False, "unauthorized"
        vk, _ = self.whitelist.whitelist[entry.signer]
        if not keys.verify(vk, entry.signature, signing_bytes(entry.area, entry.message)):
            return False, "bad-signature"
        stored = NarrowcastEntry(entry.area, entry.message, entry.signature, entry.signer, now)
        with self._lock:
            idx = len(self.entries)
            self.entries.append(stored)
            for cell in index_cells(stored.area):
                self._index[cell].append(idx)
        return True, None

    def _candidates(self, region: Region, count: int) -> Iterable[int]:
        if region.lat_bits == 0 and region.lon_bits == 0:
            return range(count)
        lat_shift = INDEX_LAT_BITS - region.lat_bits
        lon_shift = INDEX_LON_BITS - region.lon_bits
        fine = region.coarsen(INDEX_LAT_BITS, INDEX_LON_BITS)
        out: set[int] = set()
        for (qa, qo), ids in list(self._index.items()):
            if lat_shift > 0:
                ok_lat = region.lat_bits == 0 or _coarsen(qa, lat_shift) == region.lat_prefix
            else:
                ok_lat = qa == fine.lat_prefix
            if lon_shift > 0:
                ok_lon = region.lon_bits == 0 or _coarsen(qo, lon_shift) == region.lon_prefix
            else:
                ok_lon = qo == fine.lon_prefix
            if ok_lat and ok_lon:
                out.update(i for i in ids if i < count)
        return sorted(out)

    def get_messages(self, region: Region, since: int) -> list[NarrowcastEntry]:
        count = len(self.entries)  # entries past this point are not yet visible
        return [
            self.entries[i]
            for i in self._candidates(region, count)
            if self.entries[i].received_at > since and circle_hits_region(self.entries[i].area, region)
        ]

    def how_big(self, region: Region, since: int) -> int:
        return len(render_messages(self.get_messages(region, since)))


def _overlaps(a: float, b: float, lo: float, hi: float, period: float | None = None) -> bool:
    shifts = (0.0,) if period is None else (-period, 0.0, period)
    return any(a + k <= hi and b + k >= lo for k in shifts)


_LAT_CELLS = range(-90, 91)
_LON_CELLS = range(-180, 181)


def index_cells(area: Area) -> list[tuple[int, int]]:
    """Index-grid cells whose hull lies within (radius + 1 m) of the center.

    A bounding box of the cap prunes the grid before the exact distance test.
    """
    ang = math.degrees((area.radius + 1.0) / EARTH_RADIUS_M)
    lat_lo, lat_hi = area.lat - ang, area.lat + ang
    c = math.cos(math.radians(area.lat))
    s = math.sin(math.radians(min(ang, 90.0)))
    if lat_lo <= -90.0 or lat_hi >= 90.0 or s >= c:
        lon_lo, lon_hi = -540.0, 540.0
    else:
        dl = math.degrees(math.asin(s / c))
        lon_lo, lon_hi = area.lon - dl, area.lon + dl
    lat_q = [q for q in _LAT_CELLS if _overlaps(*_interval(q, INDEX_LAT_BITS, LAT_INT_BITS, -90, 90), lat_lo, lat_hi)]
    lon_q = [
        q
        for q in _LON_CELLS
        if _overlaps(*_interval(q, INDEX_LON_BITS, LON_INT_BITS, -180, 180), lon_lo, lon_hi, 360.0)
    ]
    return [
        (qa, qo)
        for qa in lat_q
        for qo in lon_q
        if circle_hits_region(area, Region(qa, qo, INDEX_LAT_BITS, INDEX_LON_BITS), slack=1.0)
    ]


# -- client side ---------------------------------------------------------------


def match_trace(
    trace: Sequence[tuple[float, float, int]], pairs: Iterable[tuple[Area, bytes]]
) -> list[bytes]:
    """Messages whose area and time window contain some point of the local trace."""
    out = []
    for area, message in pairs:
        if any(
            area.t_begin <= t <= area.t_end and haversine(lat, lon, area.lat, area.lon) <= area.radius
            for lat, lon, t in trace
        ):
            out.append(message)
    return out


def negotiate_region(
    lat: float,
    lon: float,
    budget: int,
    how_big: Callable[[Region], int],
    step: int = 1,
) -> Region:
    """Refine from the global region until the download fits ``budget``.

    Only the resulting coarse regions reach ``how_big``; stops at the finest
    precision if the budget is never met.
    """
    lat_bits = lon_bits = 0
    while True:
        region = region_of(lat, lon, lat_bits, lon_bits)
        if how_big(region) <= budget:
            return region
        if lat_bits == MAX_LAT_BITS and lon_bits == MAX_LON_BITS:
            return region
        lat_bits = min(MAX_LAT_BITS, lat_bits + step)
        lon_bits = min(MAX_LON_BITS, lon_bits + step)
