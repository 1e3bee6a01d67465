import random

import pytest
from hypothesis import given, settings, strategies as st

from pact import core, keys
from pact.alt import AltReport
from pact.core import Entry, Params
from pact.registry import (
    AppendOnlyLog,
    Registry,
    RegistryConfig,
    SignaturePolicy,
    Tier,
)

P = Params(dt=900, delta=16)
T0 = 1_598_400_000


def entry(rng, t_end=T0, span=4):
    return Entry(rng.randbytes(16), t_end - span * P.dt, t_end)


def signed(e, sk, cert):
    return Entry(e.window_seed, e.t_start, e.t_end, ((sk.sign(core.signed_payload(e)), cert),))


def make_registry(**kw):
    kw.setdefault("params", P)
    return Registry(RegistryConfig(**kw))


def test_delay_holds_until_release():
    reg = make_registry()
    rng = random.Random(1)
    assert reg.submit(entry(rng), T0)
    assert reg.release_tick(T0 + 2 * P.dt - 1) == 0
    assert reg.fetch(0) == ([], 0)
    assert reg.release_tick(T0 + 2 * P.dt) == 1
    assert len(reg.fetch(0)[0]) == 1


def test_audit_respects_delay():
    reg = make_registry(delay=1234)
    rng = random.Random(2)
    for k in range(20):
        reg.submit(entry(rng, T0 + k * 100), T0 + k * 100)
        reg.release_tick(T0 + k * 100)
    reg.release_tick(T0 + 10**6)
    assert len(reg.audit) == 20
    assert all(pub - sub >= 1234 for _, sub, pub in reg.audit)


@pytest.mark.parametrize(
    "t_start,t_end,now,reason",
    [
        (T0 - 900, T0 + 1, T0, "future"),
        (T0 - 16 * 900 - 86400 - 1, T0 - 86400, T0, "stale"),
        (T0 - 18 * 900, T0, T0, "window-too-long"),
        (T0, T0 - 1, T0, "malformed"),
    ],
)
def test_plausibility_rejections(t_start, t_end, now, reason):
    reg = make_registry()
    v = reg.submit(Entry(bytes(16), t_start, t_end), now)
    assert not v and v.reason == reason
    assert not reg.pending


def test_clock_slack_admits_small_future_skew():
    reg = make_registry(clock_slack=60)
    assert reg.submit(Entry(bytes(16), T0 - 900, T0 + 30), T0)


def test_duplicate_rejected_pending_and_published():
    reg = make_registry()
    e = entry(random.Random(3))
    assert reg.submit(e, T0)
    assert reg.submit(e, T0).reason == "duplicate"
    reg.release_tick(T0 + 10**5)
    assert reg.submit(e, T0 + 10).reason == "duplicate"


def test_signature_policy_and_tiers():
    hc, selfr, rogue = keys.SigningKey.generate(), keys.SigningKey.generate(), keys.SigningKey.generate()
    pol = SignaturePolicy()
    pol.add("lab", hc.verification_key, Tier.HEALTHCARE)
    pol.add("app", selfr.verification_key, Tier.SELF_REPORT)
    reg = Registry(RegistryConfig(params=P), pol)
    rng = random.Random(4)
    assert reg.submit(signed(entry(rng), hc, "lab"), T0).tier is Tier.HEALTHCARE
    assert reg.submit(signed(entry(rng), selfr, "app"), T0).tier is Tier.SELF_REPORT
    assert reg.submit(entry(rng), T0).tier is Tier.UNSIGNED
    assert reg.submit(signed(entry(rng), rogue, "nobody"), T0).reason == "unknown-signer"
    assert reg.submit(signed(entry(rng), rogue, "lab"), T0).reason == "bad-signature"


def test_require_signature():
    reg = make_registry(require_signature=True)
    assert reg.submit(entry(random.Random(5)), T0).reason == "unsigned"


def test_policy_json_round_trip(tmp_path):
    sk = keys.SigningKey.generate()
    pol = SignaturePolicy()
    pol.add("lab", sk.verification_key, Tier.HEALTHCARE)
    pol.save(tmp_path / "wl.json")
    assert SignaturePolicy.load(tmp_path / "wl.json").whitelist == pol.whitelist
    assert SignaturePolicy.load(tmp_path / "missing.json").whitelist == {}
    with pytest.raises(ValueError):
        pol.add("bad", b"short", Tier.UNSIGNED)


def test_rate_limit_per_source_and_tier_exemption():
    hc = keys.SigningKey.generate()
    pol = SignaturePolicy()
    pol.add("lab", hc.verification_key, Tier.HEALTHCARE)
    reg = Registry(RegistryConfig(params=P, rate_limit=3, rate_window=3600), pol)
    rng = random.Random(6)
    assert all(reg.submit(entry(rng), T0 + i, source="a") for i in range(3))
    assert reg.submit(entry(rng), T0 + 5, source="a").reason == "rate-limited"
    assert reg.submit(entry(rng), T0 + 5, source="b")
    assert reg.submit(signed(entry(rng), hc, "lab"), T0 + 6, source="a")
    assert reg.submit(entry(rng), T0 + 3600, source="a")


def test_countersign_pending_and_published():
    hc = keys.SigningKey.generate()
    pol = SignaturePolicy()
    pol.add("lab", hc.verification_key, Tier.HEALTHCARE)
    reg = Registry(RegistryConfig(params=P), pol)
    rng = random.Random(7)
    e1, e2 = entry(rng), entry(rng)
    reg.submit(e1, T0)
    sig1 = hc.sign(core.signed_payload(e1))
    v = reg.countersign(e1.locator, "lab", sig1, T0 + 1)
    assert v.tier is Tier.HEALTHCARE
    assert reg.countersign(e1.locator, "lab", sig1, T0 + 2).entry.signatures == v.entry.signatures
    reg.submit(e2, T0)
    reg.release_tick(T0 + 10**4)
    published, _ = reg.fetch(0)
    assert {e.locator: len(e.signatures) for e in published} == {e1.locator: 1, e2.locator: 0}
    assert reg.countersign(e2.locator, "lab", b"\x00" * 64, T0).reason == "bad-signature"
    assert reg.countersign("ff" * 16, "lab", b"", T0).reason == "unknown-entry"
    assert reg.countersign(e2.locator, "lab", hc.sign(core.signed_payload(e2)), T0 + 10**4)
    after, _ = reg.fetch(0)
    assert after[:2] == published and len(after) == 3
    assert after[2].signatures and reg.tier(e2.locator) is Tier.HEALTHCARE


def test_strong_integrity_mode():
    reg = make_registry(require_strong_integrity=True)
    rng = random.Random(8)
    sk = keys.SigningKey.generate()
    assert reg.submit(entry(rng), T0).reason == "bad-signature"
    good = core.sign_entry(entry(rng), sk)
    assert reg.submit(good, T0)
    forged = Entry(rng.randbytes(16), good.t_start, good.t_end, vk=good.vk, vk_signature=good.vk_signature)
    assert reg.submit(forged, T0).reason == "bad-signature"


def test_shuffle_is_permutation_of_batch():
    rng = random.Random(9)
    batch = [entry(rng) for _ in range(30)]
    plain, shuffled = make_registry(), make_registry(shuffle=True, seed=1)
    for reg in (plain, shuffled):
        for e in batch:
            reg.submit(e, T0)
        reg.release_tick(T0 + 10**4)
    a, b = [x.locator for x in plain.fetch(0)[0]], [x.locator for x in shuffled.fetch(0)[0]]
    assert a == [e.locator for e in batch]
    assert sorted(a) == sorted(b) and a != b


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["submit", "tick", "fetch"]), st.integers(1, 7)), max_size=60))
def test_interleaved_fetch_sees_each_entry_once(ops):
    reg = make_registry(delay=900)
    rng = random.Random(len(ops))
    now, cursor = T0, 0
    submitted, seen = set(), []
    for op, n in ops:
        now += n * 200
        if op == "submit":
            e = entry(rng, now)
            reg.submit(e, now)
            submitted.add(e.locator)
        elif op == "tick":
            reg.release_tick(now)
        else:
            page, cursor = reg.fetch(cursor, limit=n)
            seen += [e.locator for e in page]
    reg.release_tick(now + 10**5)
    while True:
        page, cursor = reg.fetch(cursor, limit=5)
        if not page:
            break
        seen += [e.locator for e in page]
    assert len(seen) == len(set(seen))
    assert set(seen) == submitted


def test_fetch_rejects_negative_cursor():
    with pytest.raises(ValueError):
        make_registry().fetch(-1)


def test_publish_listener_sees_releases():
    reg = make_registry()
    got = []
    reg.listeners.append(lambda kind, obj, now: got.append((kind, obj.locator, now)))
    e = entry(random.Random(10))
    reg.submit(e, T0)
    reg.release_tick(T0 + 5000)
    assert got == [("entry", e.locator, T0 + 5000)]


def _vks(n, seed):
    rng = random.Random(seed)
    return tuple(keys.SigningKey.from_seed(rng.randbytes(32)).verification_key for _ in range(n))


def test_alt_grouped_and_ungrouped():
    for grouped, expected in ((True, 1), (False, 3)):
        reg = make_registry(alt_grouped=grouped)
        assert reg.submit_alt(AltReport(_vks(3, 1)), T0)
        reg.release_tick(T0 + 10**4)
        reports, _ = reg.fetch_alt(0)
        assert len(reports) == expected
        assert {vk for r in reports for vk in r.verification_keys} == set(_vks(3, 1))


def test_alt_rejections():
    reg = make_registry()
    assert reg.submit_alt(AltReport(()), T0).reason == "malformed"
    assert reg.submit_alt(AltReport(_vks(15, 2)), T0).reason == "malformed"
    assert reg.submit_alt(AltReport((b"\x00" * 31,)), T0).reason == "malformed"
    assert reg.submit_alt(AltReport(_vks(2, 3)), T0)
    assert reg.submit_alt(AltReport(_vks(2, 3)[:1]), T0).reason == "duplicate"


def test_persistence_round_trip(tmp_path):
    rng = random.Random(11)
    e1, e2 = entry(rng), entry(rng)
    reg = Registry(RegistryConfig(params=P), data_dir=tmp_path)
    reg.submit(e1, T0)
    reg.release_tick(T0 + 10**4)
    reg.submit(e2, T0 + 10**4)
    reg.submit_alt(AltReport(_vks(2, 4)), T0 + 10**4)

    again = Registry(RegistryConfig(params=P), data_dir=tmp_path)
    assert [e.locator for e in again.fetch(0)[0]] == [e1.locator]
    assert again.submit(e1, T0 + 10**4).reason == "duplicate"
    assert again.submit(e2, T0 + 10**4).reason == "duplicate"
    again.release_tick(T0 + 10**5)
    assert [e.locator for e in again.fetch(0)[0]] == [e1.locator, e2.locator]
    assert len(again.fetch_alt(0)[0]) == 1


def test_log_survives_torn_tail(tmp_path):
    log = AppendOnlyLog(tmp_path, "x")
    log.append(b"abc")
    log.append(b"defg")
    with open(tmp_path / "x.log", "ab") as f:
        f.write(b"\x00\x00\x00\x09ab")
    assert AppendOnlyLog(tmp_path, "x").records == [b"abc", b"defg"]
