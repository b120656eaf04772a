"""Keyed PRF, challenge hash, key ordering and seed refresh.

Every invocation prepends a one-byte :class:`Tag` so outputs of the
different protocol uses never collide.  Byte layouts here are normative:
both the aggregator and the signers must derive identical values.
"""

from __future__ import annotations

import hashlib
import hmac
from enum import IntEnum
from typing import Iterable

from .errors import DuplicateKey, InvalidParams
from .group import Group, GroupElement

SEED_LEN = 32
MAC_LEN = 32


class Tag(IntEnum):
    NONCE = 1
    COEFF = 2
    SEED_DERIVE = 3
    SIGNING_SEED = 4
    CHALLENGE = 5
    REFRESH = 6
    MAC = 7


def _hmac512(key: bytes, tag: Tag, data: bytes) -> bytes:
    return hmac.new(key, bytes([tag]) + data, hashlib.sha512).digest()


def prf(key: bytes, tag: Tag, data: bytes, order: int) -> int:
    """HMAC-SHA512 output read big-endian and reduced modulo ``order``."""
    return int.from_bytes(_hmac512(key, tag, data), "big") % order


def prf_seed(key: bytes, tag: Tag, data: bytes) -> bytes:
    """32-byte key material (first half of the HMAC-SHA512 output)."""
    return _hmac512(key, tag, data)[:SEED_LEN]


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, bytes([Tag.MAC]) + data, hashlib.sha256).digest()


def mac_ok(key: bytes, data: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, data), tag)


def message_digest(message: bytes) -> bytes:
    """Canonical 32-byte form of a message, used in every PRF and hash input."""
    return hashlib.sha256(message).digest()


def u64(ctr: int) -> bytes:
    if not 0 <= ctr < 1 << 64:
        raise InvalidParams("counter must fit in 64 bits")
    return ctr.to_bytes(8, "big")


def hash_challenge(
    group: Group,
    R: GroupElement,
    key: GroupElement,
    message: bytes,
    ordered_set: bytes,
    ctr: int,
) -> int:
    data = b"".join(
        (
            bytes([Tag.CHALLENGE]),
            R.encode(),
            key.encode(),
            len(message).to_bytes(4, "big"),
            message,
            len(ordered_set).to_bytes(4, "big"),
            ordered_set,
            u64(ctr),
        )
    )
    return int.from_bytes(hashlib.sha512(data).digest(), "big") % group.order


def key_order(keys: Iterable[GroupElement]) -> list[GroupElement]:
    """Sort keys by their canonical encodings (byte-wise lexicographic)."""
    keys = list(keys)
    if not keys:
        raise InvalidParams("empty key set")
    ordered = sorted(keys, key=GroupElement.encode)
    for a, b in zip(ordered, ordered[1:]):
        if a == b:
            raise DuplicateKey(f"duplicate public key {a.encode().hex()}")
    return ordered


def seed_refresh(old: bytes, epoch: int, refresh_token: bytes) -> bytes:
    data = bytes([Tag.REFRESH]) + old + u64(epoch) + refresh_token
    return hashlib.sha256(data).digest()


def fingerprint(seed: bytes) -> bytes:
    return hashlib.sha256(b"pitpm-fingerprint" + seed).digest()
