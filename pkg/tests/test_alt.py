import hashlib
import math
import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from pact import alt, keys
from pact.alt import AltBroadcast, AltReport, DailyKeyring
from pact.store import ObservationStore, Redaction

DAY = 86400
D0 = 18500
T0 = D0 * DAY


def store():
    return ObservationStore(retention=14 * DAY, redaction=Redaction.NONE)


def test_consecutive_days_get_unrelated_keys():
    ring = DailyKeyring()
    k1, k2 = ring.daily_keygen(D0), ring.daily_keygen(D0 + 1)
    assert k1.verification_key != k2.verification_key


def test_keygen_is_idempotent_within_a_day():
    ring = DailyKeyring()
    assert ring.daily_keygen(D0) is ring.daily_keygen(D0)


def test_signing_fails_after_rollover():
    ring = DailyKeyring()
    k1 = ring.daily_keygen(D0)
    alt.make_broadcast(k1, T0 + 5)
    ring.daily_keygen(D0 + 1)
    with pytest.raises(alt.KeyErasedError):
        alt.make_broadcast(k1, T0 + 10)


def test_broadcast_outside_key_day_rejected():
    k = DailyKeyring().daily_keygen(D0)
    with pytest.raises(alt.WrongDayError):
        alt.make_broadcast(k, T0 + DAY)


def test_broadcast_fields_are_consistent_and_fresh():
    k = DailyKeyring().daily_keygen(D0)
    b1, b2 = alt.make_broadcast(k, T0 + 60), alt.make_broadcast(k, T0 + 60)
    assert b1.triple != b2.triple
    for b in (b1, b2):
        assert b.h == hashlib.sha256(b.r + struct.pack(">Q", b.t)).digest()[:16]
        assert keys.verify(k.verification_key, b.sigma, b.big_r + b.h)
    assert AltBroadcast.decode(b1.encode()) == b1


def test_collect_fresh_accepts_and_stores_only_triple():
    k = DailyKeyring().daily_keygen(D0)
    s = store()
    b = alt.make_broadcast(k, T0 + 100)
    assert alt.validate_and_collect(s, b, T0 + 100)
    assert s.triples() == [b.triple]
    assert all(len(x) == 3 and all(isinstance(f, bytes) for f in x) for x in s.triples())


def test_collect_rejects_stale_replay():
    k = DailyKeyring().daily_keygen(D0)
    s = store()
    b = alt.make_broadcast(k, T0 + 100)
    assert not alt.validate_and_collect(s, b, T0 + 100 + 3600, tolerance=120)
    assert len(s) == 0


def test_collect_rejects_tampered_commitment():
    k = DailyKeyring().daily_keygen(D0)
    b = alt.make_broadcast(k, T0 + 100)
    h = bytes([b.h[0] ^ 1]) + b.h[1:]
    bad = AltBroadcast(b.sigma, b.big_r, h, b.r, b.t)
    assert not alt.validate_and_collect(store(), bad, T0 + 100)


@settings(max_examples=200)
@given(st.integers(-10**6, 10**6), st.integers(0, 600))
def test_collect_never_stores_outside_tolerance(skew, tol):
    k = DailyKeyring().daily_keygen(D0)
    b = alt.make_broadcast(k, T0 + 40000)
    s = store()
    accepted = alt.validate_and_collect(s, b, T0 + 40000 + skew, tolerance=tol)
    assert accepted == (abs(skew) <= tol)
    assert len(s) == int(accepted)


def test_check_exposure_round_trip_and_vacuous():
    ring = DailyKeyring()
    k = ring.daily_keygen(D0)
    s = store()
    alt.validate_and_collect(s, alt.make_broadcast(k, T0 + 10), T0 + 10)
    assert alt.check_exposure_alt(s, []) == []
    assert len(alt.check_exposure_alt(s, [k.verification_key])) == 1


def test_check_exposure_skips_malformed_keys():
    k = DailyKeyring().daily_keygen(D0)
    s = store()
    alt.validate_and_collect(s, alt.make_broadcast(k, T0 + 10), T0 + 10)
    stats = {}
    events = alt.check_exposure_alt(s, [b"short", k.verification_key], stats)
    assert len(events) == 1 and stats["malformed_keys"] == 1


def test_unreported_device_never_matches():
    rng = random.Random(5)
    reported = [keys.SigningKey.from_seed(rng.randbytes(32)).verification_key for _ in range(4)]
    s = store()
    other = DailyKeyring(seed_source=lambda: rng.randbytes(32)).daily_keygen(D0)
    for i in range(2500):
        alt.validate_and_collect(s, alt.make_broadcast(other, T0 + i), T0 + i)
    # 2500 triples x 4 keys = 10^4 verification trials
    assert alt.check_exposure_alt(s, reported) == []


def test_reported_key_matches_only_its_day():
    ring = DailyKeyring()
    k1, k2 = ring.daily_keygen(D0), None
    s = store()
    alt.validate_and_collect(s, alt.make_broadcast(k1, T0 + 5), T0 + 5)
    k2 = ring.daily_keygen(D0 + 1)
    alt.validate_and_collect(s, alt.make_broadcast(k2, T0 + DAY + 5), T0 + DAY + 5)
    assert len(alt.check_exposure_alt(s, [k1.verification_key])) == 1
    assert len(alt.check_exposure_alt(s, [k2.verification_key])) == 1


def test_cross_day_broadcasts_share_no_fields():
    ring = DailyKeyring()
    a = alt.make_broadcast(ring.daily_keygen(D0), T0 + 5)
    b = alt.make_broadcast(ring.daily_keygen(D0 + 1), T0 + DAY + 5)
    assert not {a.sigma, a.big_r, a.h, a.r} & {b.sigma, b.big_r, b.h, b.r}


def test_report_covers_window_days_only():
    ring = DailyKeyring(window=14 * DAY)
    for d in range(D0, D0 + 20):
        ring.daily_keygen(d)
    report = ring.report(D0 + 19)
    assert len(report.verification_keys) == 14
    assert report.verification_keys[-1] == ring.keys_by_day[D0 + 19].verification_key
    assert AltReport.decode(report.encode()) == report


def test_report_wire_format():
    r = AltReport((b"\x01" * 32, b"\x02" * 32))
    assert r.encode() == b"\x00\x02" + b"\x01" * 32 + b"\x02" * 32
    with pytest.raises(ValueError):
        AltReport.decode(b"\x00\x02" + b"\x01" * 32)


def test_cost_model_examples():
    pact_cost, alt_cost = alt.cost_model(1, 2, 1, 1.0, 1.0)
    assert pact_cost == pytest.approx(math.log2(2))
    assert alt_cost == 2.0
    p1, a1 = alt.cost_model(3, 8, 1344, 1e-6, 5e-5)
    p2, a2 = alt.cost_model(6, 8, 1344, 1e-6, 5e-5)
    assert p2 == pytest.approx(2 * p1) and a2 == pytest.approx(2 * a1)
    # few stored triples against a long chain: the signature scheme wins
    p, a = alt.cost_model(10, 4, 1344, 1e-6, 5e-5)
    assert a < p
    with pytest.raises(ValueError):
        alt.cost_model(0, 1, 1, 1, 1)
