"""Signature-based alternative protocol with hash-committed timestamps.

Each day a device draws an Ed25519 keypair and keeps both halves secret.
A broadcast is ``(sigma, R, h)`` plus the opening ``(r, t)`` of the time
commitment ``h = H(r, t)``, where ``sigma`` signs ``R || h``. Receivers drop
broadcasts whose ``t`` is far from their clock or whose commitment does not
open, then keep only ``(sigma, R, h)``. A positive device publishes its
recent verification keys; everyone verifies their stored triples against them.
"""

from __future__ import annotations

import hashlib
import logging
import math
import secrets
import struct
from dataclasses import dataclass, field
from typing import Callable

from cryptography.exceptions import InvalidSignature

from pact import keys
from pact.core import ExposureEvent
from pact.store import DAY, AltTriple, ObservationStore, Redaction

log = logging.getLogger(__name__)

NBYTES = 16
DEFAULT_TOLERANCE = 120
BROADCAST_BYTES = keys.SIG_BYTES + 3 * NBYTES + 8


class WrongDayError(ValueError):
    pass


class KeyErasedError(RuntimeError):
    """Signing was attempted with a daily key whose day has ended."""


def commit_time(r: bytes, t: int) -> bytes:
    """``H(r, t) = SHA256(r || t)`` truncated to ``len(r)`` bytes."""
    return hashlib.sha256(r + struct.pack(">Q", t)).digest()[: len(r)]


@dataclass
class DailyKey:
    day: int
    signing_key: keys.SigningKey | None
    verification_key: bytes

    def erase(self) -> None:
        self.signing_key = None


@dataclass(frozen=True)
class AltBroadcast:
    sigma: bytes
    big_r: bytes
    h: bytes
    r: bytes
    t: int

    @property
    def triple(self) -> AltTriple:
        return (self.sigma, self.big_r, self.h)

    def encode(self) -> bytes:
        return self.sigma + self.big_r + self.h + self.r + struct.pack(">Q", self.t)

    @classmethod
    def decode(cls, data: bytes) -> "AltBroadcast":
        if len(data) != BROADCAST_BYTES:
            raise ValueError(f"alt broadcast must be {BROADCAST_BYTES} bytes")
        s, n = keys.SIG_BYTES, NBYTES
        (t,) = struct.unpack(">Q", data[s + 3 * n :])
        return cls(data[:s], data[s : s + n], data[s + n : s + 2 * n], data[s + 2 * n : s + 3 * n], t)


@dataclass(frozen=True)
class AltReport:
    verification_keys: tuple[bytes, ...]

    def encode(self) -> bytes:
        return struct.pack(">H", len(self.verification_keys)) + b"".join(self.verification_keys)

    @classmethod
    def decode(cls, data: bytes) -> "AltReport":
        if len(data) < 2:
            raise ValueError("truncated key list")
        (count,) = struct.unpack(">H", data[:2])
        if len(data) != 2 + count * keys.VK_BYTES:
            raise ValueError("key list length does not match its count")
        vks = tuple(data[2 + i * 32 : 2 + (i + 1) * 32] for i in range(count))
        return cls(vks)


def max_report_keys(window: int) -> int:
    return math.ceil(window / DAY)


@dataclass
class DailyKeyring:
    """A device's daily keys.

    ``daily_keygen`` is idempotent within a day; asking for a new day erases
    every earlier signing key. Verification keys are kept for ``window``
    seconds' worth of days.
    """

    window: int = 14 * DAY
    keys_by_day: dict[int, DailyKey] = field(default_factory=dict)
    seed_source: Callable[[], bytes] | None = None  # 32-byte key seeds, for reproducible runs

    def daily_keygen(self, day: int) -> DailyKey:
        existing = self.keys_by_day.get(day)
        if existing is not None:
            return existing
        for old_day, key in self.keys_by_day.items():
            if old_day < day:
                key.erase()
        seed = self.seed_source() if self.seed_source else None
        sk = keys.SigningKey.from_seed(seed)
        key = DailyKey(day, sk, sk.verification_key)
        self.keys_by_day[day] = key
        self.prune(day)
        return key

    def prune(self, today: int) -> None:
        keep = max_report_keys(self.window)
        for d in [d for d in self.keys_by_day if d <= today - keep]:
            del self.keys_by_day[d]

    def report(self, today: int) -> AltReport:
        keep = max_report_keys(self.window)
        days = sorted(d for d in self.keys_by_day if today - keep < d <= today)
        return AltReport(tuple(self.keys_by_day[d].verification_key for d in days))

    def clear(self) -> None:
        for key in self.keys_by_day.values():
            key.erase()
        self.keys_by_day.clear()


def daily_keygen(day: int, keyring: DailyKeyring | None = None) -> DailyKey:
    return (keyring or DailyKeyring()).daily_keygen(day)


def make_broadcast(key: DailyKey, t: int, rand=secrets.token_bytes) -> AltBroadcast:
    """A fresh identifier for time ``t``; ``t`` is committed to as broadcast."""
    if t // DAY != key.day:
        raise WrongDayError(f"time {t} is outside key day {key.day}")
    if key.signing_key is None:
        raise KeyErasedError(f"signing key for day {key.day} has been erased")
    big_r, r = rand(NBYTES), rand(NBYTES)
    h = commit_time(r, t)
    return AltBroadcast(key.signing_key.sign(big_r + h), big_r, h, r, t)


def validate_and_collect(
    store: ObservationStore, b: AltBroadcast, now: int, tolerance: int = DEFAULT_TOLERANCE
) -> bool:
    """Store ``b``'s triple iff its time is fresh and its commitment opens."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if abs(now - b.t) > tolerance:
        return False
    if len(b.r) != NBYTES or commit_time(b.r, b.t) != b.h:
        return False
    store.add_triple(b.triple, now)
    return True


def check_exposure_alt(
    store: ObservationStore, report_keys, stats: dict | None = None
) -> list[ExposureEvent]:
    """One event per stored triple that verifies under any reported key.

    Malformed keys are skipped; pass ``stats`` to receive their count under
    ``"malformed_keys"``.
    """
    parsed = []
    bad = 0
    for vk in report_keys:
        try:
            parsed.append(keys.load_public(vk))
        except ValueError:
            bad += 1
    if bad:
        log.warning("skipped %d malformed verification keys", bad)
    if stats is not None:
        stats["malformed_keys"] = stats.get("malformed_keys", 0) + bad
    events = []
    for triple in store.triples():
        sigma, big_r, h = triple
        msg = big_r + h
        for pk in parsed:
            try:
                pk.verify(sigma, msg)
            except InvalidSignature:
                continue
            day = store.bucket_of(triple) if store.redaction is not Redaction.SUPPRESS else None
            events.append(ExposureEvent(sigma, day=day))
            break
    return events


def cost_model(L: int, S: int, delta: int, t_G: float, t_Vrfy: float) -> tuple[float, float]:
    """Analytic check costs: seed-chain ``L*delta*log2(S)*t_G`` vs ``L*S*t_Vrfy``."""
    for name, v in (("L", L), ("S", S), ("delta", delta), ("t_G", t_G), ("t_Vrfy", t_Vrfy)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    return L * delta * math.log2(S) * t_G, L * S * t_Vrfy
