"""Cyclic groups for the re-randomizable and TTP protocol variants.

``ToyGroup`` is a subgroup of Z*_q small enough to enumerate in tests.
``P256Group`` is the NIST P-256 curve (prime order, cofactor 1) in pure Python;
it is meant for realistic benchmarks, not for constant-time production use.
Both use multiplicative naming: ``op`` is the group law, ``exp`` repeated ``op``.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field


class InvalidElementError(ValueError):
    pass


@dataclass(frozen=True)
class ToyGroup:
    """The subgroup of Z*_modulus generated by ``generator``.

    The order need not be prime (Z*_23 under 5 has order 22); elements of
    order one or two are treated as degenerate and rejected.
    """

    modulus: int
    generator: int
    order: int = field(init=False)

    def __post_init__(self):
        x, k = self.generator % self.modulus, 1
        while x != 1:
            x = x * self.generator % self.modulus
            k += 1
            if k > self.modulus:
                raise ValueError("generator is not a unit modulo the modulus")
        object.__setattr__(self, "order", k)

    identity = 1

    def op(self, a: int, b: int) -> int:
        return a * b % self.modulus

    def exp(self, a: int, k: int) -> int:
        return pow(a, k % self.order, self.modulus)

    def base_exp(self, k: int) -> int:
        return self.exp(self.generator, k)

    def inverse(self, a: int) -> int:
        return pow(a, -1, self.modulus)

    def element_order(self, a: int) -> int:
        x, k = a, 1
        while x != 1:
            x = x * a % self.modulus
            k += 1
        return k

    def contains(self, a) -> bool:
        if not isinstance(a, int) or not 1 <= a < self.modulus:
            return False
        return pow(a, self.order, self.modulus) == 1

    def is_valid(self, a) -> bool:
        return self.contains(a) and a * a % self.modulus != 1

    def random_exponent(self, rng=None) -> int:
        return (rng.randrange(1, self.order) if rng else 1 + secrets.randbelow(self.order - 1))

    def encode(self, a: int) -> str:
        return str(a)

    def decode(self, s: str) -> int:
        return int(s)


# NIST P-256 domain parameters
_P = 2**256 - 2**224 + 2**192 + 2**96 - 1
_A = _P - 3
_B = 0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B
_N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
_GX = 0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296
_GY = 0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5


def _jac_double(p):
    x, y, z = p
    if y == 0 or z == 0:
        return (0, 1, 0)
    yy = y * y % _P
    s = 4 * x * yy % _P
    zz = z * z % _P
    m = 3 * (x - zz) * (x + zz) % _P  # a = -3
    x3 = (m * m - 2 * s) % _P
    y3 = (m * (s - x3) - 8 * yy * yy) % _P
    z3 = 2 * y * z % _P
    return (x3, y3, z3)


def _jac_add(p, q):
    if p[2] == 0:
        return q
    if q[2] == 0:
        return p
    x1, y1, z1 = p
    x2, y2, z2 = q
    z1z1, z2z2 = z1 * z1 % _P, z2 * z2 % _P
    u1, u2 = x1 * z2z2 % _P, x2 * z1z1 % _P
    s1, s2 = y1 * z2 * z2z2 % _P, y2 * z1 * z1z1 % _P
    if u1 == u2:
        return _jac_double(p) if s1 == s2 else (0, 1, 0)
    h, r = (u2 - u1) % _P, (s2 - s1) % _P
    hh = h * h % _P
    hhh = h * hh % _P
    v = u1 * hh % _P
    x3 = (r * r - hhh - 2 * v) % _P
    y3 = (r * (v - x3) - s1 * hhh) % _P
    return (x3, y3, z1 * z2 * h % _P)


def _to_affine(p):
    if p[2] == 0:
        return None
    zi = pow(p[2], -1, _P)
    zi2 = zi * zi % _P
    return (p[0] * zi2 % _P, p[1] * zi2 * zi % _P)


class P256Group:
    """Points are affine ``(x, y)`` tuples; ``None`` is the point at infinity."""

    order = _N
    generator = (_GX, _GY)
    identity = None

    def op(self, a, b):
        return _to_affine(_jac_add(self._jac(a), self._jac(b)))

    def exp(self, a, k: int):
        k %= _N
        acc = (0, 1, 0)
        base = self._jac(a)
        for bit in bin(k)[2:] if k else "":
            acc = _jac_double(acc)
            if bit == "1":
                acc = _jac_add(acc, base)
        return _to_affine(acc)

    def base_exp(self, k: int):
        return self.exp(self.generator, k)

    def inverse(self, a):
        return None if a is None else (a[0], (-a[1]) % _P)

    @staticmethod
    def _jac(a):
        return (0, 1, 0) if a is None else (a[0], a[1], 1)

    def is_valid(self, a) -> bool:
        if a is None or not isinstance(a, tuple) or len(a) != 2:
            return False
        x, y = a
        if not (0 <= x < _P and 0 <= y < _P):
            return False
        return (y * y - (x * x * x + _A * x + _B)) % _P == 0

    contains = is_valid

    def random_exponent(self, rng=None) -> int:
        return rng.randrange(1, _N) if rng else 1 + secrets.randbelow(_N - 1)

    def encode(self, a) -> bytes:
        """SEC1 compressed encoding."""
        if a is None:
            raise InvalidElementError("cannot encode the point at infinity")
        return bytes([2 + (a[1] & 1)]) + a[0].to_bytes(32, "big")

    def decode(self, data: bytes):
        if len(data) != 33 or data[0] not in (2, 3):
            raise InvalidElementError("not a compressed P-256 point")
        x = int.from_bytes(data[1:], "big")
        if x >= _P:
            raise InvalidElementError("x coordinate out of range")
        rhs = (x * x * x + _A * x + _B) % _P
        y = pow(rhs, (_P + 1) // 4, _P)
        if y * y % _P != rhs:
            raise InvalidElementError("x is not on the curve")
        if (y & 1) != (data[0] & 1):
            y = _P - y
        return (x, y)


TOY_Z23 = ToyGroup(23, 5)
P256 = P256Group()
