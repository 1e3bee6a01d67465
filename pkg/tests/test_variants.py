import random

import pytest
from cryptography.hazmat.primitives.asymmetric import ec

from pact.groups import P256, TOY_Z23, InvalidElementError, ToyGroup
from pact.variants import (
    DualId,
    DualSecret,
    DualServer,
    MalformedIdError,
    TtpState,
    dual_check,
    dual_is_mine,
    dual_keygen,
    dual_make_id,
    dual_rerandomize,
    ttp_identify,
    ttp_make_id,
    ttp_register,
)


def brute_pow(a, k, m):
    out = 1
    for _ in range(k):
        out = out * a % m
    return out


def brute_order(a, m):
    k, x = 1, a
    while x != 1:
        x, k = x * a % m, k + 1
    return k


def test_toy_group_shape():
    assert TOY_Z23.order == 22
    assert sorted(brute_pow(5, k, 23) for k in range(22)) == list(range(1, 23))
    assert not TOY_Z23.is_valid(1) and not TOY_Z23.is_valid(22)
    assert TOY_Z23.is_valid(10) and not TOY_Z23.is_valid(23)


def test_toy_example_id():
    pid = dual_make_id(DualSecret(6), TOY_Z23, r=3)
    assert (pid.x, pid.y) == (brute_pow(5, 3, 23), brute_pow(5, 18, 23)) == (10, 6)


def test_rerandomize_with_unit_exponent_is_identity():
    pid = DualId(10, 6)
    assert dual_rerandomize(pid, TOY_Z23, r=1) == pid


def test_other_secret_rejects_example():
    assert brute_pow(10, 7, 23) != 6
    assert not dual_is_mine(DualId(10, 6), DualSecret(7), TOY_Z23)
    assert dual_is_mine(DualId(10, 6), DualSecret(6), TOY_Z23)


def test_identity_base_rejected():
    with pytest.raises(InvalidElementError):
        dual_is_mine(DualId(1, 1), DualSecret(3), TOY_Z23)
    with pytest.raises(InvalidElementError):
        dual_rerandomize(DualId(22, 1), TOY_Z23)
    with pytest.raises(InvalidElementError):
        dual_make_id(DualSecret(3), TOY_Z23, r=11)


def test_toy_exhaustive_ownership_and_closure():
    """Every secret, id randomizer and re-randomizer in Z*_23 under g=5."""
    g, q, n = 5, 23, TOY_Z23.order
    valid_r = [r for r in range(1, n) if TOY_Z23.is_valid(brute_pow(g, r, q))]
    for s in range(1, n):
        for r in valid_r:
            pid = dual_make_id(DualSecret(s), TOY_Z23, r=r)
            for r2 in range(1, n):
                x2 = brute_pow(pid.x, r2, q)
                if not TOY_Z23.is_valid(x2):
                    continue
                rid = dual_rerandomize(pid, TOY_Z23, r=r2)
                assert dual_is_mine(rid, DualSecret(s), TOY_Z23)
                ord_x = brute_order(rid.x, q)
                for s2 in range(1, n):
                    expected = brute_pow(rid.x, s2, q) == rid.y
                    assert expected == (s2 % ord_x == s % ord_x)
                    assert dual_is_mine(rid, DualSecret(s2), TOY_Z23) == expected


def test_rerandomize_chains_preserve_ownership():
    rng = random.Random(3)
    for _ in range(1000):
        s = dual_keygen(TOY_Z23, rng)
        pid = dual_make_id(s, TOY_Z23, rng)
        for _ in range(rng.randint(1, 5)):
            pid = dual_rerandomize(pid, TOY_Z23, rng)
        assert dual_is_mine(pid, s, TOY_Z23)


def test_prime_order_toy_subgroup():
    qr = ToyGroup(23, 2)  # quadratic residues, order 11
    assert qr.order == 11
    rng = random.Random(1)
    s = dual_keygen(qr, rng)
    pid = dual_rerandomize(dual_make_id(s, qr, rng), qr, rng)
    assert dual_is_mine(pid, s, qr)
    others = [t for t in range(1, 11) if t != s.s]
    assert not any(dual_is_mine(pid, DualSecret(t), qr) for t in others)


@pytest.mark.parametrize("k", [1, 2, 3, 255, 2**128 + 7, P256.order - 1])
def test_p256_scalar_mult_matches_cryptography(k):
    pub = ec.derive_private_key(k, ec.SECP256R1()).public_key().public_numbers()
    assert P256.base_exp(k) == (pub.x, pub.y)


def test_p256_group_laws_and_encoding():
    rng = random.Random(9)
    a, b = rng.randrange(1, P256.order), rng.randrange(1, P256.order)
    ga, gb = P256.base_exp(a), P256.base_exp(b)
    assert P256.op(ga, gb) == P256.base_exp(a + b)
    assert P256.exp(ga, b) == P256.exp(gb, a)
    assert P256.op(ga, P256.inverse(ga)) is None
    assert P256.exp(ga, P256.order) is None
    assert P256.decode(P256.encode(ga)) == ga
    assert P256.is_valid(ga) and not P256.is_valid(None)
    assert not P256.is_valid((ga[0], (ga[1] + 1)))
    with pytest.raises(InvalidElementError):
        P256.encode(None)
    with pytest.raises(InvalidElementError):
        P256.decode(b"\x04" + bytes(32))


def test_p256_dual_roundtrip():
    rng = random.Random(4)
    s = dual_keygen(P256, rng)
    pid = dual_rerandomize(dual_make_id(s, P256, rng), P256, rng)
    assert dual_is_mine(pid, s, P256)
    assert not dual_is_mine(pid, dual_keygen(P256, rng), P256)


def test_dual_server_check():
    rng = random.Random(8)
    a, b = dual_keygen(TOY_Z23, rng), dual_keygen(TOY_Z23, rng)
    while b.s % 11 == a.s % 11:
        b = dual_keygen(TOY_Z23, rng)
    server = DualServer()
    # uploaded id with an order-22 base so only `a` can claim it
    server.upload([dual_make_id(a, TOY_Z23, r=1)])
    assert dual_check(server, a, TOY_Z23)
    assert not dual_check(server, b, TOY_Z23)


@pytest.mark.parametrize("group", [TOY_Z23, P256], ids=["toy", "p256"])
def test_ttp_roundtrip(group):
    rng = random.Random(2)
    ttp = TtpState.create(group, rng)
    alice = ttp_register(ttp, "alice", rng)
    bob = ttp_register(ttp, "bob", rng)
    assert ttp_identify(ttp, ttp_make_id(ttp.pk, alice, group, rng)) == "alice"
    assert ttp_identify(ttp, ttp_make_id(ttp.pk, bob, group, rng)) == "bob"


def test_ttp_ids_are_randomized():
    rng = random.Random(6)
    ttp = TtpState.create(P256, rng)
    tok = ttp_register(ttp, "u", rng)
    assert ttp_make_id(ttp.pk, tok, P256, rng) != ttp_make_id(ttp.pk, tok, P256, rng)


def test_ttp_foreign_key_unidentified():
    rng = random.Random(7)
    ttp, other = TtpState.create(P256, rng), TtpState.create(P256, rng)
    tok = ttp_register(ttp, "u", rng)
    assert ttp_identify(ttp, ttp_make_id(other.pk, tok, P256, rng)) is None


def test_ttp_malformed_id():
    ttp = TtpState.create(P256, random.Random(1))
    with pytest.raises(MalformedIdError):
        ttp_identify(ttp, ((1, 2), (3, 4)))
    with pytest.raises(MalformedIdError):
        ttp_identify(ttp, "garbage")
