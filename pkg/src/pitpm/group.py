"""Prime-order groups and scalar arithmetic.

Two backends share one interface:

* ``PROD`` -- secp256k1 (order ~2**256), 33-byte compressed encodings.
* ``TEST`` -- the order-11 subgroup of (Z/23Z)*, generator 2, one-byte
  encodings.  Small enough that discrete logs are found by enumeration,
  which the test suite uses as an independent oracle.

Scalars are plain ints reduced modulo ``group.order``.  Group elements are
:class:`GroupElement` instances supporting ``*`` (group operation), ``**``
(exponentiation by a scalar) and ``~`` (inverse).
"""

from __future__ import annotations

import os
from functools import reduce
from typing import Iterable

from . import _ec_py
from .errors import DecodeError, InvalidParams

if os.environ.get("PITPM_PURE_PYTHON") == "1":
    _kernel = _ec_py
    KERNEL = "python"
else:
    try:
        from . import _ec as _kernel  # type: ignore[attr-defined]

        KERNEL = "compiled"
    except ImportError:
        _kernel = _ec_py
        KERNEL = "python"


class GroupElement:
    __slots__ = ("group", "value")

    def __init__(self, group: "Group", value):
        self.group = group
        self.value = value

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return self.group.mul(self, other)

    def __pow__(self, e: int) -> "GroupElement":
        return self.group.exp(self, e)

    def __invert__(self) -> "GroupElement":
        return self.group.inverse(self)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, GroupElement)
            and other.group is self.group
            and other.value == self.value
        )

    def __hash__(self) -> int:
        return hash((self.group.tag, self.value))

    def encode(self) -> bytes:
        return self.group.encode(self)

    def is_identity(self) -> bool:
        return self == self.group.identity

    def __repr__(self) -> str:
        return f"<{self.group.name} {self.encode().hex()}>"


class Group:
    """Interface every backend provides.  Instances are immutable."""

    name: str
    tag: int
    order: int
    element_width: int

    # backends are singletons; elements compare by group identity
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return get_group, (self.tag,)

    @property
    def scalar_width(self) -> int:
        return (self.order.bit_length() + 7) // 8

    @property
    def generator(self) -> GroupElement:
        return self._g

    @property
    def identity(self) -> GroupElement:
        return self._identity

    def exp(self, base: GroupElement, e: int) -> GroupElement:
        raise NotImplementedError

    def mul(self, a: GroupElement, b: GroupElement) -> GroupElement:
        raise NotImplementedError

    def inverse(self, a: GroupElement) -> GroupElement:
        return self.exp(a, self.order - 1)

    def encode(self, el: GroupElement) -> bytes:
        raise NotImplementedError

    def decode(self, data: bytes) -> GroupElement:
        raise NotImplementedError

    def base_exp(self, e: int) -> GroupElement:
        return self.exp(self._g, e)

    def product(self, elements: Iterable[GroupElement]) -> GroupElement:
        return reduce(self.mul, elements, self._identity)

    def multi_exp(self, pairs: Iterable[tuple[GroupElement, int]]) -> GroupElement:
        return self.product(self.exp(b, e) for b, e in pairs)

    def encode_scalar(self, x: int) -> bytes:
        return (x % self.order).to_bytes(self.scalar_width, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_width:
            raise DecodeError(f"scalar must be {self.scalar_width} bytes")
        x = int.from_bytes(data, "big")
        if x >= self.order:
            raise DecodeError("scalar out of range")
        return x

    def dlog_bruteforce(self, y: GroupElement) -> int:
        raise InvalidParams(f"discrete log search is not available on {self.name}")

    def _check(self, el: GroupElement) -> None:
        if el.group is not self:
            raise InvalidParams("element belongs to a different group")

    def __repr__(self) -> str:
        return f"<Group {self.name}>"


class ModPGroup(Group):
    """Order-q subgroup of the multiplicative group modulo a prime p."""

    def __init__(self, name: str, tag: int, p: int, q: int, g: int):
        if (p - 1) % q or pow(g, q, p) != 1 or g % p == 1:
            raise InvalidParams("g does not generate an order-q subgroup")
        self.name = name
        self.tag = tag
        self.modulus = p
        self.order = q
        self.element_width = (p.bit_length() + 7) // 8
        self._g = GroupElement(self, g)
        self._identity = GroupElement(self, 1)

    def exp(self, base, e):
        return GroupElement(self, pow(base.value, e % self.order, self.modulus))

    def mul(self, a, b):
        return GroupElement(self, a.value * b.value % self.modulus)

    def encode(self, el):
        return el.value.to_bytes(self.element_width, "big")

    def decode(self, data):
        if len(data) != self.element_width:
            raise DecodeError(f"element must be {self.element_width} bytes")
        v = int.from_bytes(data, "big")
        if not 0 < v < self.modulus or pow(v, self.order, self.modulus) != 1:
            raise DecodeError("not an element of the order-q subgroup")
        return GroupElement(self, v)

    def dlog_bruteforce(self, y):
        if self.order > 1 << 16:
            raise InvalidParams("group too large for exhaustive discrete log")
        acc = 1
        for x in range(self.order):
            if acc == y.value:
                return x
            acc = acc * self._g.value % self.modulus
        raise DecodeError("element not in the generated subgroup")


class Secp256k1Group(Group):
    name = "secp256k1"
    tag = 1
    order = _ec_py.N
    element_width = 33

    def __init__(self):
        self._g = GroupElement(self, (_ec_py.GX, _ec_py.GY))
        self._identity = GroupElement(self, None)

    def exp(self, base, e):
        e %= self.order
        if base.value is None or e == 0:
            return self._identity
        return GroupElement(self, _kernel.point_mul(e, *base.value))

    def mul(self, a, b):
        return GroupElement(self, _ec_py.point_add(a.value, b.value))

    def inverse(self, a):
        if a.value is None:
            return a
        x, y = a.value
        return GroupElement(self, (x, (-y) % _ec_py.P))

    def encode(self, el):
        if el.value is None:
            return bytes(self.element_width)
        x, y = el.value
        return bytes([2 + (y & 1)]) + x.to_bytes(32, "big")

    def decode(self, data):
        if len(data) != self.element_width:
            raise DecodeError("element must be 33 bytes")
        if data == bytes(self.element_width):
            return self._identity
        if data[0] not in (2, 3):
            raise DecodeError("bad point prefix")
        p = _ec_py.P
        x = int.from_bytes(data[1:], "big")
        if x >= p:
            raise DecodeError("x coordinate out of range")
        ysq = (pow(x, 3, p) + 7) % p
        y = pow(ysq, (p + 1) // 4, p)
        if y * y % p != ysq:
            raise DecodeError("point not on curve")
        if y & 1 != data[0] & 1:
            y = p - y
        # cofactor 1: every curve point lies in the prime-order group
        return GroupElement(self, (x, y))


TEST = ModPGroup("test-z23", 0, p=23, q=11, g=2)
PROD = Secp256k1Group()

GROUPS = {"test": TEST, "prod": PROD}
_BY_TAG = {TEST.tag: TEST, PROD.tag: PROD}


def get_group(name_or_tag) -> Group:
    if isinstance(name_or_tag, Group):
        return name_or_tag
    try:
        if isinstance(name_or_tag, int):
            return _BY_TAG[name_or_tag]
        return GROUPS[name_or_tag]
    except KeyError:
        raise InvalidParams(f"unknown group {name_or_tag!r}") from None


def group_name(group: Group) -> str:
    return "test" if group is TEST else "prod"


def random_scalar(group: Group, rng=None, nonzero: bool = True) -> int:
    """Uniform scalar from ``rng`` (a ``random.Random``-like object) or the OS CSPRNG."""
    extra = 16
    nbytes = group.scalar_width + extra
    while True:
        raw = rng.randbytes(nbytes) if rng is not None else os.urandom(nbytes)
        x = int.from_bytes(raw, "big") % group.order
        if x or not nonzero:
            return x


def random_bytes(n: int, rng=None) -> bytes:
    return rng.randbytes(n) if rng is not None else os.urandom(n)
