"""Seed-chain pseudonyms: derivation, epochs, reports, regeneration and matching.

A device samples a random seed and steps it once per epoch through a PRG
``G``; each step yields the next seed and the pseudonym broadcast in that
epoch. Only the seed that regenerates the last ``delta`` pseudonyms (the
window seed) and the current seed are kept. Reporting uploads the window seed
with its time span; anyone can then regenerate the reporter's pseudonyms and
compare them against what they heard.

G is SHA-256 for 128-bit seeds (first half of the digest is the next seed,
second half the pseudonym). Other seed lengths use SHAKE-256 with the same
split. In strong-integrity mode the seed is hashed together with the chain's
verification key, and reports carry a signature by the matching signing key.
"""

from __future__ import annotations

import hashlib
import secrets
import struct
from dataclasses import dataclass, replace
from typing import NewType

from pact import keys
from pact.store import DAY, ObservationStore, Redaction

PseudonymId = NewType("PseudonymId", bytes)
SiKeyPair = keys.SigningKey


class ClockRegressionError(Exception):
    """The clock moved to an earlier epoch than the chain already reached."""


class MalformedEntryError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    n: int = 128
    dt: int = 900
    delta: int = 1344
    origin: int = 0

    def __post_init__(self):
        if self.n < 128 or self.n % 8:
            raise ValueError(f"n must be a multiple of 8 and >= 128, got {self.n}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")

    @property
    def nbytes(self) -> int:
        return self.n // 8

    @property
    def window(self) -> int:
        """The infection window in seconds."""
        return self.delta * self.dt


@dataclass(frozen=True)
class ChainState:
    current_seed: bytes
    current_index: int
    current_time: int
    current_id: bytes
    window_seed: bytes
    window_time: int
    vk: bytes | None = None


@dataclass(frozen=True)
class Entry:
    window_seed: bytes
    t_start: int
    t_end: int
    signatures: tuple[tuple[bytes, str], ...] = ()
    vk: bytes | None = None
    vk_signature: bytes | None = None

    @property
    def locator(self) -> str:
        return self.window_seed.hex()


@dataclass(frozen=True)
class TimedId:
    id: bytes
    epoch_start: int


@dataclass(frozen=True)
class ExposureEvent:
    id: bytes
    epoch_start: int | None = None
    heard_at: int | None = None
    day: int | None = None


def _prg(data: bytes, nbytes: int) -> bytes:
    if nbytes == 16:
        return hashlib.sha256(data).digest()
    return hashlib.shake_256(data).digest(2 * nbytes)


def derive_next(seed: bytes, vk: bytes | None = None) -> tuple[bytes, bytes]:
    """One chain step: ``(next_seed, id) = split(G(seed [|| vk]))``."""
    if len(seed) < 16:
        raise ValueError(f"seed must be at least 16 bytes, got {len(seed)}")
    k = len(seed)
    out = _prg(seed if vk is None else seed + vk, k)
    return out[:k], out[k:]


def derive_next_bound(seed: bytes, vk: bytes) -> tuple[bytes, bytes]:
    """Strong-integrity chain step binding ``vk`` into every derivation."""
    if len(vk) != keys.VK_BYTES:
        raise ValueError("verification key must be 32 bytes")
    return derive_next(seed, vk)


def _check_seed(seed: bytes, params: Params) -> None:
    if len(seed) != params.nbytes:
        raise ValueError(f"seed must be {params.nbytes} bytes, got {len(seed)}")


def epoch_index(t: int, params: Params) -> tuple[int, int]:
    """1-based index of the epoch containing ``t`` and that epoch's start."""
    index = (t - params.origin) // params.dt + 1
    return index, params.origin + params.dt * (index - 1)


def epoch_start(t: int, params: Params) -> int:
    return epoch_index(t, params)[1]


def iterate(seed: bytes, steps: int, vk: bytes | None = None) -> list[bytes]:
    """The ids produced by ``steps`` chain steps from ``seed``, oldest first."""
    ids = []
    for _ in range(steps):
        seed, pid = derive_next(seed, vk)
        ids.append(pid)
    return ids


def init_chain(
    params: Params,
    entropy: bytes | None = None,
    skip_to_delta: bool = False,
    *,
    now: int,
    vk: bytes | None = None,
) -> ChainState:
    """Start a fresh chain whose first broadcast falls in the epoch of ``now``.

    With ``skip_to_delta`` the chain is pre-iterated so the first broadcast is
    id_delta and the window seed already spans ``delta`` epochs (the leading
    ones back-dated), hiding how recently the chain was started.
    """
    s0 = secrets.token_bytes(params.nbytes) if entropy is None else entropy
    _check_seed(s0, params)
    steps = params.delta if skip_to_delta else 1
    seed, pid = s0, b""
    for _ in range(steps):
        seed, pid = derive_next(seed, vk)
    start = epoch_start(now, params)
    return ChainState(
        current_seed=seed,
        current_index=steps,
        current_time=start,
        current_id=pid,
        window_seed=s0,
        window_time=start - (steps - 1) * params.dt,
        vk=vk,
    )


def advance(state: ChainState, now: int, params: Params) -> tuple[ChainState, bytes]:
    """Step the chain to the epoch containing ``now``; return the id to broadcast.

    Raises ClockRegressionError (state untouched) if ``now`` precedes the
    current epoch.
    """
    if now < state.current_time:
        raise ClockRegressionError(
            f"clock at {now} is before current epoch start {state.current_time}"
        )
    target, start = epoch_index(now, params)
    k = target - epoch_index(state.current_time, params)[0]
    if k == 0:
        return state, state.current_id

    i, delta = state.current_index, params.delta
    new_i = i + k
    old_w, new_w = max(i - delta, 0), max(new_i - delta, 0)
    seed, pid = state.current_seed, state.current_id
    window_seed = state.window_seed
    if new_w <= i:
        for _ in range(new_w - old_w):
            window_seed, _ = derive_next(window_seed, state.vk)
    for j in range(i + 1, new_i + 1):
        seed, pid = derive_next(seed, state.vk)
        if j == new_w:
            window_seed = seed
    new_state = replace(
        state,
        current_seed=seed,
        current_index=new_i,
        current_time=start,
        current_id=pid,
        window_seed=window_seed,
        window_time=start - (min(new_i, delta) - 1) * params.dt,
    )
    return new_state, pid


def build_report(
    state: ChainState,
    params: Params,
    *,
    entropy: bytes | None = None,
    skip_to_delta: bool = False,
    vk: bytes | None = None,
) -> tuple[Entry, ChainState]:
    """Package the window for upload and restart from fresh entropy.

    The returned state shares nothing with the reported chain; pass ``vk``
    to bind the new chain to a new strong-integrity key.
    """
    entry = Entry(
        window_seed=state.window_seed,
        t_start=state.window_time,
        t_end=state.current_time,
        vk=state.vk,
    )
    fresh = init_chain(
        params, entropy, skip_to_delta, now=state.current_time, vk=vk
    )
    return entry, fresh


def regenerate(entry: Entry, params: Params) -> list[TimedId]:
    """Recompute the reported pseudonyms with their epoch-start estimates.

    Partial epochs are widened outward (start floored, end's epoch included),
    and the result is capped at ``delta`` ids, oldest first.
    """
    if entry.t_start > entry.t_end:
        raise MalformedEntryError("t_start after t_end")
    first, first_start = epoch_index(entry.t_start, params)
    last, _ = epoch_index(entry.t_end, params)
    count = min(last - first + 1, params.delta)
    ids = iterate(entry.window_seed, count, entry.vk)
    return [TimedId(pid, first_start + k * params.dt) for k, pid in enumerate(ids)]


def _redact(pid: bytes, epoch: int, heard_at: int, policy: Redaction) -> ExposureEvent:
    if policy is Redaction.NONE:
        return ExposureEvent(pid, epoch_start=epoch, heard_at=heard_at)
    if policy is Redaction.DAY:
        return ExposureEvent(pid, day=heard_at // DAY)
    return ExposureEvent(pid)


def match_exposure(
    store: ObservationStore,
    candidates: list[TimedId],
    params: Params,
    time_tolerance: int | None = None,
) -> list[ExposureEvent]:
    """Events for stored sightings of candidate ids at a consistent time.

    A sighting at ``t`` of an id estimated to start at ``e`` matches when
    ``|t - e| <= dt + time_tolerance``. The default tolerance is ``dt // 2``;
    it must stay below ``dt`` for a two-epoch publication delay to stop
    replays of freshly published ids.
    """
    tol = params.dt // 2 if time_tolerance is None else time_tolerance
    if tol < 0:
        raise ValueError("time_tolerance must be >= 0")
    heard = store.by_id()
    events = []
    for cand in candidates:
        for t in heard.get(cand.id, ()):
            if abs(t - cand.epoch_start) <= params.dt + tol:
                events.append(_redact(cand.id, cand.epoch_start, t, store.redaction))
    return events


# -- canonical encoding -----------------------------------------------------

_FLAG_VK = 1
_FLAG_VKSIG = 2
_VERSION = 1


def signed_payload(entry: Entry) -> bytes:
    """Bytes covered by every signature: S* || t_start || t_end [|| vk]."""
    out = entry.window_seed + struct.pack(">QQ", entry.t_start, entry.t_end)
    if entry.vk is not None:
        out += entry.vk
    return out


def encode_entry(entry: Entry) -> bytes:
    flags = (_FLAG_VK if entry.vk is not None else 0) | (
        _FLAG_VKSIG if entry.vk_signature is not None else 0
    )
    out = bytearray(struct.pack(">BBB", _VERSION, flags, len(entry.window_seed)))
    out += signed_payload(entry)
    if entry.vk_signature is not None:
        out += entry.vk_signature
    out += struct.pack(">H", len(entry.signatures))
    for sig, cert in entry.signatures:
        c = cert.encode("utf-8")
        out += struct.pack(">H", len(c)) + c + struct.pack(">H", len(sig)) + sig
    return bytes(out)


def decode_entry(data: bytes) -> Entry:
    try:
        version, flags, k = struct.unpack_from(">BBB", data, 0)
        if version != _VERSION:
            raise MalformedEntryError(f"unknown entry version {version}")
        pos = 3
        seed = data[pos : pos + k]
        pos += k
        t_start, t_end = struct.unpack_from(">QQ", data, pos)
        pos += 16
        vk = vksig = None
        if flags & _FLAG_VK:
            vk = data[pos : pos + keys.VK_BYTES]
            pos += keys.VK_BYTES
        if flags & _FLAG_VKSIG:
            vksig = data[pos : pos + keys.SIG_BYTES]
            pos += keys.SIG_BYTES
        (count,) = struct.unpack_from(">H", data, pos)
        pos += 2
        sigs = []
        for _ in range(count):
            (clen,) = struct.unpack_from(">H", data, pos)
            cert = data[pos + 2 : pos + 2 + clen].decode("utf-8")
            pos += 2 + clen
            (slen,) = struct.unpack_from(">H", data, pos)
            sigs.append((data[pos + 2 : pos + 2 + slen], cert))
            pos += 2 + slen
    except (struct.error, UnicodeDecodeError) as exc:
        raise MalformedEntryError(str(exc)) from exc
    if pos != len(data) or len(seed) != k or (vk is not None and len(vk) != 32):
        raise MalformedEntryError("truncated or oversized entry")
    if vksig is not None and len(vksig) != keys.SIG_BYTES:
        raise MalformedEntryError("truncated strong-integrity signature")
    return Entry(seed, t_start, t_end, tuple(sigs), vk, vksig)


# -- strong integrity -------------------------------------------------------


def sign_entry(entry: Entry, keypair: SiKeyPair) -> Entry:
    """Bind the entry to ``keypair``: embed its vk and sign the payload."""
    bound = replace(entry, vk=keypair.verification_key, vk_signature=None)
    return replace(bound, vk_signature=keypair.sign(signed_payload(bound)))


def verify_entry_si(entry: Entry, params: Params | None = None) -> bool:
    """Check the strong-integrity signature over (S*, t_start, t_end, vk).

    Ids of a verified entry are always regenerated under the embedded vk
    (see :func:`regenerate`), so a valid signature on a foreign seed cannot
    reproduce another chain's ids.
    """
    if entry.vk is None or entry.vk_signature is None:
        return False
    if params is not None and len(entry.window_seed) != params.nbytes:
        return False
    return keys.verify(entry.vk, entry.vk_signature, signed_payload(entry))
