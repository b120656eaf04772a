"""Two-phase multi-signature: commitment bundle, local shares, combination, verification.

The signer never talks to other signers.  It receives a
:class:`CommitmentBundle` from the aggregator, re-derives its own nonce from
its seed, checks that the published vector is consistent with both its own
commitment and the aggregate ``R``, and only then answers with a share.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import (
    AggregatorTampering,
    AuthFailure,
    CommitmentVectorInvalid,
    CounterMismatch,
    CounterReplay,
    DecodeError,
    NotAMember,
    ShareSetInvalid,
)
from .codec import Reader
from .group import Group, GroupElement, random_scalar
from .keyset import AggregatedKey, CounterStore, SignerPacket, SignerSet
from .prf import MAC_LEN, Tag, hash_challenge, mac, mac_ok, message_digest, prf, u64

MULTISIG = 0
THRESHOLD = 1

SIG_MAGIC = b"PSIG"


def derive_nonce(group: Group, seed: bytes, mdigest: bytes, ctr: int, signers: SignerSet) -> int:
    """Session nonce from a seed; ``mdigest`` is :func:`message_digest` of the message."""
    data = mdigest + u64(ctr) + signers.encoding
    return prf(seed, Tag.NONCE, data, group.order)


def challenge(group: Group, R: GroupElement, key: GroupElement, message: bytes,
              signers: SignerSet, ctr: int) -> int:
    return hash_challenge(group, R, key, message_digest(message), signers.encoding, ctr)


@dataclass(frozen=True)
class CommitmentBundle:
    """Aggregate commitment plus the full per-signer vector it was built from.

    ``agg`` carries the aggregated key and coefficients in multi-signature
    mode so that signers receive them authenticated by the bundle MAC.
    """

    mode: int
    R: GroupElement
    commitments: tuple[tuple[int, GroupElement], ...]
    ctr: int
    set_digest: bytes
    message_digest: bytes
    agg: AggregatedKey | None = None
    fallback: bool = False
    recipient: int = 0
    mac: bytes = b""

    @property
    def group(self) -> Group:
        return self.R.group

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.commitments)

    def commitment_of(self, index: int) -> GroupElement:
        for i, Rj in self.commitments:
            if i == index:
                return Rj
        raise NotAMember(f"signer {index} has no published commitment")

    def body(self) -> bytes:
        g = self.group
        parts = [
            bytes([self.mode, int(self.fallback)]),
            self.R.encode(),
            u64(self.ctr),
            self.set_digest,
            self.message_digest,
            len(self.commitments).to_bytes(2, "big"),
        ]
        for i, Rj in self.commitments:
            parts.append(i.to_bytes(2, "big") + Rj.encode())
        if self.agg is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + self.agg.apk.encode())
            for i, _ in self.commitments:
                parts.append(g.encode_scalar(self.agg.coefficients.get(i, 0)))
        parts.append(self.recipient.to_bytes(2, "big"))
        return b"".join(parts)

    def to_bytes(self) -> bytes:
        return self.body() + self.mac

    @classmethod
    def from_bytes(cls, group: Group, data: bytes) -> "CommitmentBundle":
        r = Reader(data)
        mode, fallback = r.take(1)[0], r.take(1)[0]
        R = group.decode(r.take(group.element_width))
        ctr = r.int(8)
        set_digest = r.take(32)
        mdigest = r.take(32)
        count = r.int(2)
        commitments = tuple(
            (r.int(2), group.decode(r.take(group.element_width))) for _ in range(count)
        )
        agg = None
        if r.take(1) == b"\x01":
            apk = group.decode(r.take(group.element_width))
            coeffs = {i: group.decode_scalar(r.take(group.scalar_width)) for i, _ in commitments}
            agg = AggregatedKey(apk, coeffs, b"")
        recipient = r.int(2)
        tag = r.rest()
        if len(tag) not in (0, MAC_LEN):
            raise DecodeError("bad bundle MAC length")
        return cls(mode, R, commitments, ctr, set_digest, mdigest, agg,
                   bool(fallback), recipient, tag)

    def for_recipient(self, index: int, mac_key: bytes | None) -> "CommitmentBundle":
        b = replace(self, recipient=index, mac=b"")
        return replace(b, mac=mac(mac_key, b.body()) if mac_key else b"")

    def __eq__(self, other):
        return isinstance(other, CommitmentBundle) and self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())


@dataclass(frozen=True)
class SignatureShare:
    index: int
    s: int
    ctr: int

    def to_bytes(self, group: Group) -> bytes:
        return self.index.to_bytes(2, "big") + group.encode_scalar(self.s) + u64(self.ctr)

    @classmethod
    def from_bytes(cls, group: Group, data: bytes) -> "SignatureShare":
        r = Reader(data)
        share = cls(r.int(2), group.decode_scalar(r.take(group.scalar_width)), r.int(8))
        r.end()
        return share


@dataclass(frozen=True)
class MultiSignature:
    """``(R, c, s, ctr, signers)`` plus the per-signer coefficients.

    Threshold signatures reuse this type; their coefficient slot carries the
    Lagrange weights of the signing set.
    """

    R: GroupElement
    c: int
    s: int
    ctr: int
    signers: tuple[int, ...]
    coefficients: dict[int, int] = field(default_factory=dict)

    @property
    def group(self) -> Group:
        return self.R.group

    def core_bytes(self) -> bytes:
        g = self.group
        return self.R.encode() + g.encode_scalar(self.c) + g.encode_scalar(self.s)

    def to_bytes(self) -> bytes:
        g = self.group
        parts = [SIG_MAGIC, self.core_bytes(), u64(self.ctr),
                 len(self.signers).to_bytes(2, "big")]
        for i in self.signers:
            parts.append(i.to_bytes(2, "big") + g.encode_scalar(self.coefficients.get(i, 0)))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, group: Group, data: bytes) -> "MultiSignature":
        r = Reader(data)
        if r.take(4) != SIG_MAGIC:
            raise DecodeError("not a PSIG signature")
        R = group.decode(r.take(group.element_width))
        c = group.decode_scalar(r.take(group.scalar_width))
        s = group.decode_scalar(r.take(group.scalar_width))
        ctr = r.int(8)
        count = r.int(2)
        signers, coeffs = [], {}
        for _ in range(count):
            i = r.int(2)
            signers.append(i)
            coeffs[i] = group.decode_scalar(r.take(group.scalar_width))
        r.end()
        return cls(R, c, s, ctr, tuple(signers), coeffs)


class Verdict:
    """Boolean verification result carrying a reason code on rejection."""

    __slots__ = ("ok", "reason")

    def __init__(self, ok: bool, reason: str = "ok"):
        self.ok = ok
        self.reason = reason

    def __bool__(self) -> bool:
        return self.ok

    def __repr__(self) -> str:
        return f"Verdict({self.ok}, {self.reason!r})"


REJECT_SET = "signer set"
REJECT_COEFFICIENTS = "coefficients"
REJECT_CHALLENGE = "challenge"
REJECT_EQUATION = "equation"
REJECT_STALE = "stale counter"
REJECT_THRESHOLD = "threshold"


# --- signer side -----------------------------------------------------------

def local_nonce(packet: SignerPacket, message: bytes, ctr: int, signers: SignerSet):
    """Derive ``(w_i, R_i)`` and consume ``ctr`` for this signer set."""
    if packet.index not in signers:
        raise NotAMember(f"signer {packet.index} not in set")
    packet.counters.advance(signers.digest, ctr)
    w = derive_nonce(packet.group, packet.seed, message_digest(message), ctr, signers)
    return w, packet.group.base_exp(w)


def fallback_commit(packet: SignerPacket, message: bytes, ctr: int, signers: SignerSet, rng=None):
    """Fresh random commitment for an aggregator-less session."""
    if packet.index not in signers:
        raise NotAMember(f"signer {packet.index} not in set")
    if not packet.counters.fresh(signers.digest, ctr):
        raise CounterReplay(f"counter {ctr} not fresh")
    w = random_scalar(packet.group, rng, nonzero=False)
    packet.pending[(signers.digest, ctr)] = w
    return packet.group.base_exp(w)


def check_bundle(owner_index: int, owner_mac_key: bytes, counters: CounterStore,
                 message: bytes, bundle: CommitmentBundle, signers: SignerSet,
                 expected_R: GroupElement) -> None:
    """Shared signer-side checks: MAC, membership, freshness, vector integrity."""
    if not bundle.fallback:
        if bundle.recipient != owner_index or not mac_ok(owner_mac_key, bundle.body(), bundle.mac):
            raise AuthFailure("bundle MAC does not verify")
    if owner_index not in signers:
        raise NotAMember(f"signer {owner_index} not in set")
    if bundle.set_digest != signers.digest or bundle.indices != signers.indices:
        raise CommitmentVectorInvalid("bundle is for a different signer set")
    if bundle.message_digest != message_digest(message):
        raise CommitmentVectorInvalid("bundle is for a different message")
    if not counters.fresh(signers.digest, bundle.ctr):
        raise CounterReplay(f"counter {bundle.ctr} not fresh")
    if expected_R != bundle.R:
        raise CommitmentVectorInvalid("published vector does not combine to R")


def own_nonce(packet_like, seed: bytes, message: bytes, bundle: CommitmentBundle,
              signers: SignerSet) -> int:
    group = bundle.group
    if bundle.fallback:
        try:
            return packet_like.pending[(signers.digest, bundle.ctr)]
        except KeyError:
            raise AggregatorTampering("no fallback commitment issued for this session") from None
    return derive_nonce(group, seed, message_digest(message), bundle.ctr, signers)


def local_sign(packet: SignerPacket, message: bytes, bundle: CommitmentBundle,
               agg: AggregatedKey, signers: SignerSet) -> SignatureShare:
    group = packet.group
    check_bundle(packet.index, packet.mac_key, packet.counters, message, bundle, signers,
                 group.product(Rj for _, Rj in bundle.commitments))
    if bundle.agg is not None and (
        bundle.agg.apk != agg.apk or bundle.agg.coefficients != agg.coefficients
    ):
        raise AggregatorTampering("aggregated key differs from the bundle's")
    w = own_nonce(packet, packet.seed, message, bundle, signers)
    if group.base_exp(w) != bundle.commitment_of(packet.index):
        raise AggregatorTampering(f"published R_{packet.index} differs from own commitment")
    packet.counters.advance(signers.digest, bundle.ctr)
    packet.pending.pop((signers.digest, bundle.ctr), None)
    c = challenge(group, bundle.R, agg.apk, message, signers, bundle.ctr)
    a = agg.coefficients[packet.index]
    return SignatureShare(packet.index, (w + c * a * packet.secret) % group.order, bundle.ctr)


# --- combiner / verifier ---------------------------------------------------

def _check_share_set(shares: Iterable[SignatureShare], indices, ctr: int) -> dict[int, SignatureShare]:
    by_index: dict[int, SignatureShare] = {}
    for sh in shares:
        if sh.index in by_index:
            raise ShareSetInvalid(f"duplicate share from signer {sh.index}")
        by_index[sh.index] = sh
    if set(by_index) != set(indices):
        raise ShareSetInvalid("shares do not match the signer set")
    if any(sh.ctr != ctr for sh in by_index.values()):
        raise CounterMismatch("shares carry different counters")
    return by_index


def combine(shares: Iterable[SignatureShare], bundle: CommitmentBundle, agg: AggregatedKey,
            message: bytes, signers: SignerSet) -> MultiSignature:
    group = bundle.group
    by_index = _check_share_set(shares, signers.indices, bundle.ctr)
    c = challenge(group, bundle.R, agg.apk, message, signers, bundle.ctr)
    s = sum(sh.s for sh in by_index.values()) % group.order
    return MultiSignature(bundle.R, c, s, bundle.ctr, signers.indices,
                          {i: agg.coefficients[i] for i in signers.indices})


def verify_share(group: Group, share: SignatureShare, R_i: GroupElement, pk_i: GroupElement,
                 a_i: int, c: int) -> bool:
    return group.base_exp(share.s) == R_i * pk_i ** (a_i * c % group.order)


def verify(message: bytes, sig: MultiSignature, pks: Mapping[int, GroupElement],
           verifier_state: CounterStore | None = None, *,
           coefficients: Mapping[int, int] | None = None, naive: bool = False) -> Verdict:
    """Check a multi-signature; update ``verifier_state`` on acceptance.

    ``coefficients`` are the aggregator-authenticated weights for this set.
    Pass them whenever available: without them the coefficients carried in
    ``sig`` are taken at face value.  ``naive`` verifies unweighted
    aggregates (all coefficients 1) such as the interactive baseline emits.
    """
    group = sig.group
    try:
        signers = SignerSet.by_keys({i: pks[i] for i in sig.signers})
    except (KeyError, ValueError):
        return Verdict(False, REJECT_SET)
    if signers.indices != sig.signers:
        return Verdict(False, REJECT_SET)
    if set(sig.coefficients) != set(sig.signers):
        return Verdict(False, REJECT_COEFFICIENTS)
    if naive:
        if any(a != 1 for a in sig.coefficients.values()):
            return Verdict(False, REJECT_COEFFICIENTS)
    elif any(a == 0 for a in sig.coefficients.values()):
        return Verdict(False, REJECT_COEFFICIENTS)
    if coefficients is not None and dict(coefficients) != sig.coefficients:
        return Verdict(False, REJECT_COEFFICIENTS)
    apk = group.multi_exp((pks[i], sig.coefficients[i]) for i in sig.signers)
    if sig.c != challenge(group, sig.R, apk, message, signers, sig.ctr):
        return Verdict(False, REJECT_CHALLENGE)
    if group.base_exp(sig.s) != sig.R * apk ** sig.c:
        return Verdict(False, REJECT_EQUATION)
    if verifier_state is not None:
        try:
            verifier_state.advance(signers.digest, sig.ctr, strict=False)
        except CounterReplay:
            return Verdict(False, REJECT_STALE)
    return Verdict(True)
