"""The public report registry.

Submissions pass plausibility, signature and rate checks, wait out a
publication delay in a pending queue, and are then appended (optionally
shuffled per release batch) to an append-only published log that clients
read by cursor. Seed-chain entries and alt-protocol key lists live in two
separate logs with the same mechanics.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import struct
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from pact import core, keys
from pact.alt import AltReport, max_report_keys
from pact.core import Entry, Params
from pact.store import DAY

log = logging.getLogger(__name__)


class Tier(enum.IntEnum):
    UNSIGNED = 0
    SELF_REPORT = 1
    HEALTHCARE = 2

    @property
    def label(self) -> str:
        return {0: "unsigned", 1: "self-report", 2: "healthcare-validated"}[self.value]

    @classmethod
    def parse(cls, label: str) -> "Tier":
        for t in cls:
            if t.label == label or t.name.lower() == label.lower():
                return t
        raise ValueError(f"unknown tier {label!r}")


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    tier: Tier | None = None
    entry: Entry | None = None

    def __bool__(self) -> bool:
        return self.accepted


def rejected(reason: str) -> Verdict:
    return Verdict(False, reason)


@dataclass
class SignaturePolicy:
    """Whitelist mapping certificate ids to (raw Ed25519 key, tier)."""

    whitelist: dict[str, tuple[bytes, Tier]] = field(default_factory=dict)

    def add(self, cert: str, vk: bytes, tier: Tier) -> None:
        keys.load_public(vk)
        self.whitelist[cert] = (vk, tier)

    def check(self, payload: bytes, sig: bytes, cert: str) -> Tier | str:
        """The signer's tier, or a rejection reason."""
        if cert not in self.whitelist:
            return "unknown-signer"
        vk, tier = self.whitelist[cert]
        if not keys.verify(vk, sig, payload):
            return "bad-signature"
        return tier

    def to_json(self) -> dict:
        return {c: {"key": keys.b64e(vk), "tier": t.label} for c, (vk, t) in self.whitelist.items()}

    @classmethod
    def from_json(cls, data: dict) -> "SignaturePolicy":
        pol = cls()
        for cert, item in data.items():
            pol.add(cert, keys.b64d(item["key"]), Tier.parse(item["tier"]))
        return pol

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SignaturePolicy":
        p = Path(path)
        return cls.from_json(json.loads(p.read_text())) if p.exists() else cls()

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))


class RateLimiter:
    """Sliding-window count of accepted submissions per source."""

    def __init__(self, limit: int, window: int):
        self.limit = limit
        self.window = window
        self._hits: dict[str, deque[int]] = defaultdict(deque)

    def allowed(self, source: str, now: int) -> bool:
        q = self._hits[source]
        while q and now - q[0] >= self.window:
            q.popleft()
        return len(q) < self.limit

    def record(self, source: str, now: int) -> None:
        self._hits[source].append(now)


class AppendOnlyLog:
    """Length-prefixed records in ``<name>.log`` plus a byte-offset ``<name>.idx``.

    Without a directory the log lives in memory only.
    """

    def __init__(self, directory: str | os.PathLike | None = None, name: str = "entries"):
        self.records: list[bytes] = []
        self._data = self._index = None
        if directory is None:
            return
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self._data, self._index = d / f"{name}.log", d / f"{name}.idx"
        if self._data.exists():
            self._load()

    def _load(self) -> None:
        blob = self._data.read_bytes()
        idx = self._index.read_bytes() if self._index.exists() else b""
        offsets = [struct.unpack_from(">Q", idx, i)[0] for i in range(0, len(idx), 8)]
        pos = 0
        while pos < len(blob):
            (n,) = struct.unpack_from(">I", blob, pos)
            if pos + 4 + n > len(blob):
                log.warning("dropping torn record at byte %d of %s", pos, self._data)
                break
            self.records.append(blob[pos + 4 : pos + 4 + n])
            pos += 4 + n
        if offsets[: len(self.records)] != self._offsets():
            log.warning("rebuilding stale index %s", self._index)
            self._index.write_bytes(b"".join(struct.pack(">Q", o) for o in self._offsets()))

    def _offsets(self) -> list[int]:
        out, pos = [], 0
        for r in self.records:
            out.append(pos)
            pos += 4 + len(r)
        return out

    def append(self, record: bytes) -> int:
        if self._data is not None:
            with open(self._data, "ab") as f:
                offset = f.tell()
                f.write(struct.pack(">I", len(record)) + record)
                f.flush()
                os.fsync(f.fileno())
            with open(self._index, "ab") as f:
                f.write(struct.pack(">Q", offset))
        self.records.append(record)
        return len(self.records) - 1

    def __len__(self) -> int:
        return len(self.records)

    def slice(self, start: int, stop: int) -> list[bytes]:
        return self.records[start:stop]


@dataclass
class RegistryConfig:
    params: Params = field(default_factory=Params)
    delay: int | None = None  # default 2 * dt
    shuffle: bool = False
    max_report_age: int | None = None  # default delta * dt + 1 day
    rate_limit: int = 10
    rate_window: int = 3600
    require_strong_integrity: bool = False
    require_signature: bool = False
    clock_slack: int = 0
    alt_grouped: bool = True
    alt_window: int = 14 * DAY
    seed: int | None = None

    def __post_init__(self):
        if self.delay is None:
            self.delay = 2 * self.params.dt
        if self.max_report_age is None:
            self.max_report_age = self.params.window + DAY


@dataclass
class _Pending:
    kind: str  # "entry" | "alt"
    record: bytes
    submitted: int
    release: int
    key: str


class Registry:
    def __init__(
        self,
        config: RegistryConfig | None = None,
        policy: SignaturePolicy | None = None,
        data_dir: str | os.PathLike | None = None,
    ):
        self.config = config or RegistryConfig()
        self.policy = policy or SignaturePolicy()
        self.params = self.config.params
        self.rng = random.Random(self.config.seed)
        self.limiter = RateLimiter(self.config.rate_limit, self.config.rate_window)
        self.entries = AppendOnlyLog(data_dir, "entries")
        self.alt_entries = AppendOnlyLog(data_dir, "alt")
        self._pending_path = Path(data_dir) / "pending.json" if data_dir else None
        self.pending: list[_Pending] = []
        self.tiers: dict[str, Tier] = {}
        self.seen_keys: set[str] = set()
        self.audit: list[tuple[str, int, int]] = []  # (key, submitted, published)
        self.listeners: list[Callable[[str, object, int], None]] = []
        self._lock = threading.Lock()
        self._rebuild()

    # -- state recovery -----------------------------------------------------

    def _rebuild(self) -> None:
        for rec in self.entries.records:
            e = core.decode_entry(rec)
            self.seen_keys.add(e.locator)
            self.tiers[e.locator] = max(self.tiers.get(e.locator, Tier.UNSIGNED), self._tier_of(e))
        for rec in self.alt_entries.records:
            for vk in AltReport.decode(rec).verification_keys:
                self.seen_keys.add(vk.hex())
        if self._pending_path and self._pending_path.exists():
            for item in json.loads(self._pending_path.read_text()):
                p = _Pending(item["kind"], keys.b64d(item["record"]), item["submitted"], item["release"], item["key"])
                self.pending.append(p)
                self.seen_keys.update(self._keys_of(p))

    def _keys_of(self, p: _Pending) -> list[str]:
        if p.kind == "entry":
            return [p.key]
        return [vk.hex() for vk in AltReport.decode(p.record).verification_keys]

    def _save_pending(self) -> None:
        if self._pending_path is None:
            return
        data = [
            {"kind": p.kind, "record": keys.b64e(p.record), "submitted": p.submitted, "release": p.release, "key": p.key}
            for p in self.pending
        ]
        tmp = self._pending_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data))
        tmp.replace(self._pending_path)

    def _tier_of(self, entry: Entry) -> Tier:
        tier = Tier.UNSIGNED
        payload = core.signed_payload(entry)
        for sig, cert in entry.signatures:
            t = self.policy.check(payload, sig, cert)
            if isinstance(t, Tier):
                tier = max(tier, t)
        return tier

    # -- intake ---------------------------------------------------------------

    def _rate_ok(self, source: str | None, tier: Tier, now: int) -> bool:
        if source is None or tier >= Tier.HEALTHCARE:
            return True
        return self.limiter.allowed(source, now)

    def submit(self, entry: Entry, now: int, source: str | None = None) -> Verdict:
        """Validate and queue a seed-chain entry."""
        cfg, p = self.config, self.params
        if len(entry.window_seed) != p.nbytes:
            return rejected("malformed")
        if entry.t_start > entry.t_end:
            return rejected("malformed")
        if entry.t_end > now + cfg.clock_slack:
            return rejected("future")
        if now - entry.t_start > cfg.max_report_age:
            return rejected("stale")
        if entry.t_end - entry.t_start > p.window + p.dt:
            return rejected("window-too-long")
        if cfg.require_strong_integrity or entry.vk is not None:
            if not core.verify_entry_si(entry, p):
                return rejected("bad-signature")
        if cfg.require_signature and not entry.signatures:
            return rejected("unsigned")
        payload = core.signed_payload(entry)
        tier = Tier.UNSIGNED
        for sig, cert in entry.signatures:
            t = self.policy.check(payload, sig, cert)
            if not isinstance(t, Tier):
                return rejected(t)
            tier = max(tier, t)
        with self._lock:
            if entry.locator in self.seen_keys:
                return rejected("duplicate")
            if not self._rate_ok(source, tier, now):
                return rejected("rate-limited")
            if source is not None and tier < Tier.HEALTHCARE:
                self.limiter.record(source, now)
            self.seen_keys.add(entry.locator)
            self.tiers[entry.locator] = tier
            self.pending.append(
                _Pending("entry", core.encode_entry(entry), now, now + cfg.delay, entry.locator)
            )
            self._save_pending()
        log.info("accepted entry %s tier=%s", entry.locator[:8], tier.label)
        return Verdict(True, tier=tier, entry=entry)

    def submit_alt(self, report: AltReport, now: int, source: str | None = None) -> Verdict:
        """Validate and queue an alt-protocol verification-key report."""
        vks = report.verification_keys
        if not vks or len(vks) > max_report_keys(self.config.alt_window):
            return rejected("malformed")
        for vk in vks:
            try:
                keys.load_public(vk)
            except ValueError:
                return rejected("malformed")
        hexes = [vk.hex() for vk in vks]
        if len(set(hexes)) != len(hexes):
            return rejected("duplicate")
        with self._lock:
            if any(h in self.seen_keys for h in hexes):
                return rejected("duplicate")
            if not self._rate_ok(source, Tier.UNSIGNED, now):
                return rejected("rate-limited")
            if source is not None:
                self.limiter.record(source, now)
            self.seen_keys.update(hexes)
            release = now + self.config.delay
            if self.config.alt_grouped:
                self.pending.append(_Pending("alt", report.encode(), now, release, hexes[0]))
            else:
                for vk, h in zip(vks, hexes):
                    self.pending.append(_Pending("alt", AltReport((vk,)).encode(), now, release, h))
            self._save_pending()
        return Verdict(True, tier=Tier.UNSIGNED)

    def countersign(self, locator: str, cert: str, signature: bytes, now: int) -> Verdict:
        """Attach an authority signature to a known entry and raise its tier.

        A pending entry is updated in place. An already published entry is
        re-appended with the extra signature, leaving the earlier record as is.
        """
        with self._lock:
            pending = next((p for p in self.pending if p.kind == "entry" and p.key == locator), None)
            if pending is not None:
                entry = core.decode_entry(pending.record)
            else:
                entry = self._latest_published(locator)
                if entry is None:
                    return rejected("unknown-entry")
            t = self.policy.check(core.signed_payload(entry), signature, cert)
            if not isinstance(t, Tier):
                return rejected(t)
            if any(c == cert for _, c in entry.signatures):
                return Verdict(True, tier=self.tiers[locator], entry=entry)
            updated = replace(entry, signatures=entry.signatures + ((signature, cert),))
            self.tiers[locator] = max(self.tiers.get(locator, Tier.UNSIGNED), t)
            if pending is not None:
                pending.record = core.encode_entry(updated)
                self._save_pending()
            else:
                self.entries.append(core.encode_entry(updated))
                self._notify("entry", updated, now)
        return Verdict(True, tier=self.tiers[locator], entry=updated)

    def _latest_published(self, locator: str) -> Entry | None:
        for rec in reversed(self.entries.records):
            e = core.decode_entry(rec)
            if e.locator == locator:
                return e
        return None

    # -- publication ----------------------------------------------------------

    def release_tick(self, now: int) -> int:
        """Publish every pending record whose delay has elapsed; return the count."""
        with self._lock:
            due = [p for p in self.pending if p.release <= now]
            if not due:
                return 0
            self.pending = [p for p in self.pending if p.release > now]
            if self.config.shuffle:
                self.rng.shuffle(due)
            for p in due:
                target = self.entries if p.kind == "entry" else self.alt_entries
                target.append(p.record)
                for k in self._keys_of(p):
                    self.audit.append((k, p.submitted, now))
            self._save_pending()
        for p in due:
            obj = core.decode_entry(p.record) if p.kind == "entry" else AltReport.decode(p.record)
            self._notify(p.kind, obj, now)
        return len(due)

    def _notify(self, kind: str, obj, now: int) -> None:
        for fn in self.listeners:
            fn(kind, obj, now)

    def fetch(self, cursor: int, limit: int | None = None) -> tuple[list[Entry], int]:
        recs, nxt = self.page_records(self.entries, cursor, limit)
        return [core.decode_entry(r) for r in recs], nxt

    def fetch_alt(self, cursor: int, limit: int | None = None) -> tuple[list[AltReport], int]:
        recs, nxt = self.page_records(self.alt_entries, cursor, limit)
        return [AltReport.decode(r) for r in recs], nxt

    @staticmethod
    def page_records(log_: AppendOnlyLog, cursor: int, limit: int | None):
        if cursor < 0:
            raise ValueError("cursor must be >= 0")
        end = len(log_)
        if cursor >= end:
            return [], cursor
        stop = end if limit is None else min(end, cursor + limit)
        return log_.slice(cursor, stop), stop

    def tier(self, locator: str) -> Tier | None:
        return self.tiers.get(locator)
