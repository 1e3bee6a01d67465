"""Comparison protocols: re-randomizable "dual" ids and a trusted-third-party scheme.

In the dual scheme a user broadcasts ``(g^r, g^(r*s))`` for a long-term
secret ``s``; positives upload the ids they *collected*, re-randomized by a
fresh exponent, and a user is at risk if any uploaded ``(x, y)`` satisfies
``y = x^s``. In the TTP scheme every broadcast is a fresh ElGamal encryption
of the user's registration token under the TTP's key.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable

from pact.groups import InvalidElementError


class MalformedIdError(ValueError):
    pass


@dataclass(frozen=True)
class DualSecret:
    s: int


@dataclass(frozen=True)
class DualId:
    x: Any
    y: Any


def _check(group, x, y):
    """``x`` must be a non-degenerate element; ``y`` only a group member."""
    if not group.is_valid(x):
        raise InvalidElementError(f"degenerate or foreign base element {x!r}")
    if not group.contains(y):
        raise InvalidElementError(f"foreign group element {y!r}")


def dual_keygen(group, rng=None) -> DualSecret:
    return DualSecret(group.random_exponent(rng))


def _valid_power(group, base, rng, r=None):
    """``(base^r, r)`` for the given ``r`` or the first random one giving a valid element."""
    if r is not None:
        out = group.exp(base, r)
        if not group.is_valid(out):
            raise InvalidElementError(f"exponent {r} gives a degenerate element")
        return out, r
    while True:
        r = group.random_exponent(rng)
        out = group.exp(base, r)
        if group.is_valid(out):
            return out, r


def dual_make_id(secret: DualSecret, group, rng=None, r: int | None = None) -> DualId:
    x, r = _valid_power(group, group.generator, rng, r)
    return DualId(x, group.exp(group.generator, r * secret.s))


def dual_rerandomize(pid: DualId, group, rng=None, r: int | None = None) -> DualId:
    """``(x^r, y^r)`` for a fresh ``r``; ownership is preserved."""
    _check(group, pid.x, pid.y)
    x, r = _valid_power(group, pid.x, rng, r)
    return DualId(x, group.exp(pid.y, r))


def dual_is_mine(pid: DualId, secret: DualSecret, group) -> bool:
    _check(group, pid.x, pid.y)
    return group.exp(pid.x, secret.s) == pid.y


@dataclass
class DualServer:
    """Public list of uploaded (re-randomized) ids, grouped by upload."""

    uploads: list[list[DualId]] = field(default_factory=list)

    def upload(self, ids: list[DualId]) -> None:
        self.uploads.append(list(ids))

    def all_ids(self) -> list[DualId]:
        return [i for batch in self.uploads for i in batch]


def dual_check(server: DualServer, secret: DualSecret, group) -> bool:
    return any(dual_is_mine(i, secret, group) for i in server.all_ids())


# -- trusted third party -----------------------------------------------------


@dataclass
class TtpState:
    group: Any
    sk: int
    pk: Any
    tokens: dict[Hashable, Hashable] = field(default_factory=dict)

    @classmethod
    def create(cls, group, rng=None) -> "TtpState":
        sk = group.random_exponent(rng)
        return cls(group, sk, group.base_exp(sk))


def ttp_register(state: TtpState, user: Hashable, rng=None) -> Any:
    """Issue ``user`` a fresh random group-element token."""
    g = state.group
    while True:
        token, _ = _valid_power(g, g.generator, rng)
        if token not in state.tokens:
            state.tokens[token] = user
            return token


def ttp_make_id(pk, token, group, rng=None) -> tuple[Any, Any]:
    """Randomized ElGamal encryption ``(g^k, token * pk^k)``."""
    k = group.random_exponent(rng)
    return group.base_exp(k), group.op(token, group.exp(pk, k))


def ttp_identify(state: TtpState, pid) -> Hashable | None:
    """Decrypt and look the token up; None if no registered user owns it."""
    g = state.group
    try:
        c1, c2 = pid
    except (TypeError, ValueError) as exc:
        raise MalformedIdError("id must be a ciphertext pair") from exc
    if not (g.contains(c1) and g.contains(c2)):
        raise MalformedIdError("ciphertext components are not valid group elements")
    token = g.op(c2, g.inverse(g.exp(c1, state.sk)))
    return state.tokens.get(token)
