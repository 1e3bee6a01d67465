"""The device-side state machine.

An ``Agent`` broadcasts the current pseudonym on every ``tick``, stores what
it hears, purges old sightings, reports (only with explicit consent) and
periodically syncs with the registry to check for exposure. Nothing leaves
the agent except its broadcasts and read-only GET requests unless
``make_report`` is called.
"""

from __future__ import annotations

import enum
import json
import logging
import secrets
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

from pact import alt, core, keys
from pact.alt import AltBroadcast, AltReport, DailyKeyring
from pact.core import ChainState, ClockRegressionError, Entry, ExposureEvent, Params
from pact.narrowcast import INDEX_LAT_BITS, INDEX_LON_BITS, match_trace, region_of
from pact.store import DAY, ObservationStore, Redaction
from pact.transport import NarrowcastClient, RegistryClient

log = logging.getLogger(__name__)


class Protocol(str, enum.Enum):
    CORE = "core"
    CORE_SI = "core-strong-integrity"
    ALT = "alt-sig"


class ConsentRequiredError(PermissionError):
    pass


@dataclass
class AgentConfig:
    params: Params = field(default_factory=Params)
    protocol: Protocol = Protocol.CORE
    retention: int | None = None  # default: the infection window
    redaction: Redaction = Redaction.DAY
    time_tolerance: int | None = None
    alt_tolerance: int = alt.DEFAULT_TOLERANCE
    alt_window: int = 14 * DAY
    skip_to_delta: bool = False
    report_signer: tuple[keys.SigningKey, str] | None = None
    page_size: int = 1000

    def __post_init__(self):
        self.protocol = Protocol(self.protocol)
        self.redaction = Redaction(self.redaction)
        if self.retention is None:
            self.retention = self.params.window


@dataclass(frozen=True)
class Alert:
    """An at-risk notice. Fields the redaction policy withholds are None."""

    count: int
    times: tuple[int, ...] | None = None
    days: tuple[int, ...] | None = None

    def to_json(self) -> dict:
        out: dict = {"at_risk": True, "count": self.count}
        if self.times is not None:
            out["times"] = list(self.times)
        if self.days is not None:
            out["days"] = list(self.days)
        return out


def default_risk(events: list[ExposureEvent]) -> bool:
    return bool(events)


def _alert(events: list[ExposureEvent], policy: Redaction) -> Alert:
    if policy is Redaction.NONE:
        # alt-protocol sightings are stored without a time; their day is the finest detail
        times = tuple(sorted(e.heard_at for e in events if e.heard_at is not None))
        days = tuple(sorted({e.day for e in events if e.heard_at is None and e.day is not None}))
        return Alert(len(events), times=times if times or not days else None, days=days or None)
    if policy is Redaction.DAY:
        return Alert(len(events), days=tuple(sorted({e.day for e in events if e.day is not None})))
    return Alert(len(events))


class Agent:
    def __init__(
        self,
        config: AgentConfig,
        now: int,
        registry: RegistryClient | None = None,
        narrowcast: NarrowcastClient | None = None,
        randbytes: Callable[[int], bytes] = secrets.token_bytes,
        risk_hook: Callable[[list[ExposureEvent]], bool] = default_risk,
        regen_cache: dict | None = None,
    ):
        self.config = config
        self.params = config.params
        self.registry = registry
        self.narrowcast = narrowcast
        self.randbytes = randbytes
        self.risk_hook = risk_hook
        self.regen_cache = regen_cache
        # (entry locator, event) pairs from the latest sync; kept on the device
        self.last_matches: list[tuple[str, ExposureEvent]] = []
        self.store = ObservationStore(
            retention=config.retention, redaction=config.redaction, dt=self.params.dt, origin=self.params.origin
        )
        self.cursor = 0
        self.nc_since = 0
        self.trace: list[tuple[float, float, int]] = []
        self.malformed = 0
        self.rejected = 0
        self.clock_warnings = 0
        self.last_response: dict | None = None
        self._lock = threading.RLock()
        self._last_alt: tuple[int, bytes] | None = None
        self.chain: ChainState | None = None
        self.si_key: keys.SigningKey | None = None
        self.keyring: DailyKeyring | None = None
        if config.protocol is Protocol.ALT:
            self.keyring = DailyKeyring(window=config.alt_window, seed_source=lambda: self.randbytes(32))
        else:
            self.chain = self._new_chain(now)

    @property
    def protocol(self) -> Protocol:
        return self.config.protocol

    def _new_chain(self, now: int) -> ChainState:
        vk = None
        if self.protocol is Protocol.CORE_SI:
            self.si_key = keys.SigningKey.from_seed(self.randbytes(32))
            vk = self.si_key.verification_key
        return core.init_chain(
            self.params, self.randbytes(self.params.nbytes), self.config.skip_to_delta, now=now, vk=vk
        )

    # -- radio ------------------------------------------------------------------

    def tick(self, now: int) -> bytes:
        """The payload to broadcast at ``now``."""
        with self._lock:
            if self.keyring is None:
                try:
                    self.chain, pid = core.advance(self.chain, now, self.params)
                except ClockRegressionError as exc:
                    self.clock_warnings += 1
                    log.warning("%s; rebroadcasting current id", exc)
                    return self.chain.current_id
                return pid
            if self._last_alt is not None and now < self._last_alt[0]:
                self.clock_warnings += 1
                log.warning("clock moved back to %d; rebroadcasting last identifier", now)
                return self._last_alt[1]
            key = self.keyring.daily_keygen(now // DAY)
            payload = alt.make_broadcast(key, now, self.randbytes).encode()
            self._last_alt = (now, payload)
            return payload

    def on_hear(self, payload: bytes, now: int) -> bool:
        with self._lock:
            if self.keyring is None:
                if len(payload) != self.params.nbytes:
                    self.malformed += 1
                    return False
                return self.store.add(bytes(payload), now)
            try:
                b = AltBroadcast.decode(payload)
            except ValueError:
                self.malformed += 1
                return False
            if not alt.validate_and_collect(self.store, b, now, self.config.alt_tolerance):
                self.rejected += 1
                return False
            return True

    def purge(self, now: int) -> int:
        with self._lock:
            if self.keyring is not None:
                self.keyring.prune(now // DAY)
            return self.store.purge(now)

    # -- reporting --------------------------------------------------------------

    def make_report(self, now: int, consent: bool = False) -> Entry | AltReport:
        """Build and upload a report, then restart with unrelated identity state.

        Refuses (before touching any state or the network) unless ``consent``
        is explicitly True.
        """
        if consent is not True:
            raise ConsentRequiredError("reporting requires explicit user consent")
        with self._lock:
            if self.keyring is not None:
                report = self.keyring.report(now // DAY)
                self.keyring.clear()
                self._last_alt = None
                if self.registry is not None:
                    self.last_response = self.registry.submit_alt(report)
                return report
            try:
                self.chain, _ = core.advance(self.chain, now, self.params)
            except ClockRegressionError:
                self.clock_warnings += 1
            old_si = self.si_key
            new_vk = None
            if self.protocol is Protocol.CORE_SI:
                self.si_key = keys.SigningKey.from_seed(self.randbytes(32))
                new_vk = self.si_key.verification_key
            entry, self.chain = core.build_report(
                self.chain,
                self.params,
                entropy=self.randbytes(self.params.nbytes),
                skip_to_delta=self.config.skip_to_delta,
                vk=new_vk,
            )
            if old_si is not None:
                entry = core.sign_entry(entry, old_si)
            if self.config.report_signer is not None:
                sk, cert = self.config.report_signer
                entry = replace(entry, signatures=((sk.sign(core.signed_payload(entry)), cert),))
            if self.registry is not None:
                self.last_response = self.registry.submit(entry)
            return entry

    # -- exposure check ---------------------------------------------------------

    def _regenerate(self, e: Entry) -> list[core.TimedId]:
        if self.regen_cache is None:
            return core.regenerate(e, self.params)
        key = (e.window_seed, e.t_start, e.t_end, e.vk)
        ids = self.regen_cache.get(key)
        if ids is None:
            ids = self.regen_cache[key] = core.regenerate(e, self.params)
        return ids

    def _match_entries(self, entries: list[Entry]) -> list[tuple[str, ExposureEvent]]:
        out = []
        for e in entries:
            if self.protocol is Protocol.CORE_SI and not core.verify_entry_si(e, self.params):
                continue
            try:
                cands = self._regenerate(e)
            except (core.MalformedEntryError, ValueError):
                self.malformed += 1
                continue
            evs = core.match_exposure(self.store, cands, self.params, self.config.time_tolerance)
            out.extend((e.locator, ev) for ev in evs)
        return out

    def _match_reports(self, reports: list[AltReport]) -> list[tuple[str, ExposureEvent]]:
        out = []
        for r in reports:
            if not r.verification_keys:
                continue
            tag = r.verification_keys[0].hex()
            out.extend((tag, ev) for ev in alt.check_exposure_alt(self.store, r.verification_keys))
        return out

    def sync_and_check(self, now: int) -> Alert | None:
        """Fetch everything published since the last sync and match it locally.

        Raises TransportError with the cursor unchanged if the registry is
        unreachable part way through.
        """
        if self.registry is None:
            raise RuntimeError("no registry configured")
        with self._lock:
            cursor = self.cursor
            fetch = self.registry.fetch_alt if self.keyring is not None else self.registry.fetch
            batches = []
            while True:
                page, nxt = fetch(cursor, self.config.page_size)
                if not page:
                    break
                batches.extend(page)
                cursor = nxt
            if self.keyring is not None:
                tagged = self._match_reports(batches)
            else:
                tagged = self._match_entries(batches)
            self.cursor = cursor
            self.last_matches = tagged
            events = [ev for _, ev in tagged]
            if not self.risk_hook(events):
                return None
            return _alert(events, self.config.redaction)

    # -- narrowcast -------------------------------------------------------------

    def record_location(self, lat: float, lon: float, t: int) -> None:
        """Append to the private location trace; it never leaves the agent."""
        with self._lock:
            self.trace.append((lat, lon, t))

    def check_narrowcast(self, lat_bits: int = INDEX_LAT_BITS, lon_bits: int = INDEX_LON_BITS) -> list[bytes]:
        """Messages relevant to the local trace, fetched by coarse region only."""
        if self.narrowcast is None:
            raise RuntimeError("no narrowcast service configured")
        with self._lock:
            regions = sorted(
                {region_of(lat, lon, lat_bits, lon_bits) for lat, lon, _ in self.trace},
                key=lambda r: (r.lat_prefix, r.lon_prefix),
            )
            seen, latest = {}, self.nc_since
            for region in regions:
                for e in self.narrowcast.get_messages(region, self.nc_since):
                    seen[e.signature] = e
                    latest = max(latest, e.received_at)
            self.nc_since = latest
            return match_trace(self.trace, [(e.area, e.message) for e in seen.values()])

    # -- persistence ------------------------------------------------------------

    def snapshot(self) -> bytes:
        with self._lock:
            return encode_snapshot(self)

    @classmethod
    def restore(cls, data: bytes, **kwargs) -> "Agent":
        return decode_snapshot(data, **kwargs)


# -- snapshot format ---------------------------------------------------------
#
# b"PACTSNAP" | u16 version | repeated (u8 tag, u32 length, payload)

SNAP_MAGIC = b"PACTSNAP"
SNAP_VERSION = 1
_T_META, _T_CHAIN, _T_KEYS, _T_RECORDS, _T_TRIPLES = 1, 2, 3, 4, 5


class SnapshotError(ValueError):
    pass


def _section(tag: int, payload: bytes) -> bytes:
    return struct.pack(">BI", tag, len(payload)) + payload


def encode_snapshot(agent: Agent) -> bytes:
    cfg, p = agent.config, agent.params
    meta = {
        "params": {"n": p.n, "dt": p.dt, "delta": p.delta, "origin": p.origin},
        "protocol": cfg.protocol.value,
        "retention": cfg.retention,
        "redaction": cfg.redaction.value,
        "time_tolerance": cfg.time_tolerance,
        "alt_tolerance": cfg.alt_tolerance,
        "alt_window": cfg.alt_window,
        "skip_to_delta": cfg.skip_to_delta,
        "cursor": agent.cursor,
        "nc_since": agent.nc_since,
        "trace": agent.trace,
    }
    out = bytearray(SNAP_MAGIC + struct.pack(">H", SNAP_VERSION))
    out += _section(_T_META, json.dumps(meta).encode())
    if agent.chain is not None:
        c = agent.chain
        chain = {
            "current_seed": c.current_seed.hex(),
            "current_index": c.current_index,
            "current_time": c.current_time,
            "current_id": c.current_id.hex(),
            "window_seed": c.window_seed.hex(),
            "window_time": c.window_time,
            "vk": c.vk.hex() if c.vk else None,
            "si_seed": agent.si_key.seed_bytes().hex() if agent.si_key else None,
        }
        out += _section(_T_CHAIN, json.dumps(chain).encode())
    if agent.keyring is not None:
        ring = {
            str(d): {
                "vk": k.verification_key.hex(),
                "sk": k.signing_key.seed_bytes().hex() if k.signing_key else None,
            }
            for d, k in agent.keyring.keys_by_day.items()
        }
        out += _section(_T_KEYS, json.dumps(ring).encode())
    recs = b"".join(struct.pack(">H", len(pid)) + pid + struct.pack(">Q", t) for pid, t in agent.store.records())
    out += _section(_T_RECORDS, recs)
    trip = bytearray()
    for day, triples in agent.store.buckets().items():
        for sigma, big_r, h in triples:
            trip += struct.pack(">Q", day) + sigma + big_r + h
    out += _section(_T_TRIPLES, bytes(trip))
    return bytes(out)


def decode_snapshot(data: bytes, **kwargs) -> Agent:
    if not data.startswith(SNAP_MAGIC) or len(data) < len(SNAP_MAGIC) + 2:
        raise SnapshotError("not an agent snapshot")
    (version,) = struct.unpack_from(">H", data, len(SNAP_MAGIC))
    if version != SNAP_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    pos, sections = len(SNAP_MAGIC) + 2, {}
    while pos < len(data):
        if pos + 5 > len(data):
            raise SnapshotError("truncated section header")
        tag, n = struct.unpack_from(">BI", data, pos)
        if pos + 5 + n > len(data):
            raise SnapshotError("truncated section")
        sections[tag] = data[pos + 5 : pos + 5 + n]
        pos += 5 + n
    if _T_META not in sections:
        raise SnapshotError("missing metadata section")
    meta = json.loads(sections[_T_META])
    cfg = AgentConfig(
        params=Params(**meta["params"]),
        protocol=Protocol(meta["protocol"]),
        retention=meta["retention"],
        redaction=Redaction(meta["redaction"]),
        time_tolerance=meta["time_tolerance"],
        alt_tolerance=meta["alt_tolerance"],
        alt_window=meta["alt_window"],
        skip_to_delta=meta["skip_to_delta"],
    )
    agent = Agent(cfg, now=0, **kwargs)
    agent.cursor, agent.nc_since = meta["cursor"], meta["nc_since"]
    agent.trace = [tuple(x) for x in meta["trace"]]
    if _T_CHAIN in sections:
        c = json.loads(sections[_T_CHAIN])
        agent.chain = ChainState(
            bytes.fromhex(c["current_seed"]),
            c["current_index"],
            c["current_time"],
            bytes.fromhex(c["current_id"]),
            bytes.fromhex(c["window_seed"]),
            c["window_time"],
            bytes.fromhex(c["vk"]) if c["vk"] else None,
        )
        agent.si_key = keys.SigningKey.from_seed(bytes.fromhex(c["si_seed"])) if c["si_seed"] else None
    if _T_KEYS in sections and agent.keyring is not None:
        for d, k in json.loads(sections[_T_KEYS]).items():
            sk = keys.SigningKey.from_seed(bytes.fromhex(k["sk"])) if k["sk"] else None
            agent.keyring.keys_by_day[int(d)] = alt.DailyKey(int(d), sk, bytes.fromhex(k["vk"]))
    recs, pos = sections.get(_T_RECORDS, b""), 0
    while pos < len(recs):
        (n,) = struct.unpack_from(">H", recs, pos)
        pid = recs[pos + 2 : pos + 2 + n]
        (t,) = struct.unpack_from(">Q", recs, pos + 2 + n)
        agent.store.add(pid, t)
        pos += 10 + n
    trip, width = sections.get(_T_TRIPLES, b""), 8 + keys.SIG_BYTES + 2 * alt.NBYTES
    if len(trip) % width:
        raise SnapshotError("triple section has a partial record")
    for i in range(0, len(trip), width):
        (day,) = struct.unpack_from(">Q", trip, i)
        s = i + 8
        sigma = trip[s : s + keys.SIG_BYTES]
        big_r = trip[s + keys.SIG_BYTES : s + keys.SIG_BYTES + alt.NBYTES]
        h = trip[s + keys.SIG_BYTES + alt.NBYTES : s + width - 8]
        agent.store.add_triple((sigma, big_r, h), day * DAY)
    return agent
