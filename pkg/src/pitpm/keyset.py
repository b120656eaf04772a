"""Framework setup, signer packets and PRF-weighted public-key aggregation."""

from __future__ import annotations

import copy
import hashlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Mapping

from .errors import CounterReplay, DuplicateKey, InvalidParams
from .group import Group, GroupElement, random_bytes, random_scalar
from .prf import SEED_LEN, Tag, fingerprint, key_order, prf, prf_seed, seed_refresh

log = logging.getLogger(__name__)

AGGREGATOR_TYPES = ("TPM", "TEE", "MPC")


class CounterStore:
    """Last counter seen per signer-set digest.

    ``advance`` is an atomic read-check-update.  ``strict=True`` demands
    ``ctr > last`` (signer and aggregator rule); ``strict=False`` accepts
    ``ctr >= last`` (verifier freshness rule).
    """

    def __init__(self, initial: Mapping[bytes, int] | None = None):
        self._last = dict(initial or {})
        self._lock = threading.Lock()

    def last(self, digest: bytes) -> int | None:
        return self._last.get(digest)

    def fresh(self, digest: bytes, ctr: int, strict: bool = True) -> bool:
        last = self._last.get(digest)
        if last is None:
            return True
        return ctr > last if strict else ctr >= last

    def advance(self, digest: bytes, ctr: int, strict: bool = True) -> None:
        with self._lock:
            if not self.fresh(digest, ctr, strict):
                raise CounterReplay(
                    f"counter {ctr} not fresh (last {self._last[digest]})"
                )
            self._last[digest] = ctr

    def items(self):
        return sorted(self._last.items())

    def __len__(self) -> int:
        return len(self._last)

    def __deepcopy__(self, memo):
        return CounterStore(self._last)


@dataclass(frozen=True)
class SignerSet:
    """A canonically ordered signer set and its byte encoding.

    Multi-signature sets are ordered by public-key encoding; threshold sets
    by party index (see :meth:`by_index`).
    """

    indices: tuple[int, ...]
    keys: tuple[GroupElement, ...]
    encoding: bytes
    digest: bytes

    @classmethod
    def by_keys(cls, pks: Mapping[int, GroupElement]) -> "SignerSet":
        ordered = key_order(pks.values())
        index_of = {pk.encode(): i for i, pk in pks.items()}
        indices = tuple(index_of[pk.encode()] for pk in ordered)
        encoding = b"".join(pk.encode() for pk in ordered)
        return cls(indices, tuple(ordered), encoding, _set_digest(b"M", encoding))

    @classmethod
    def by_index(cls, keys: Mapping[int, GroupElement]) -> "SignerSet":
        indices = tuple(sorted(keys))
        if not indices:
            raise InvalidParams("empty signer set")
        if indices[0] < 1:
            raise InvalidParams("party indices start at 1")
        encoding = b"".join(i.to_bytes(2, "big") for i in indices)
        return cls(
            indices,
            tuple(keys[i] for i in indices),
            encoding,
            _set_digest(b"T", encoding),
        )

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __len__(self) -> int:
        return len(self.indices)

    def key_of(self, index: int) -> GroupElement:
        return self.keys[self.indices.index(index)]


def _set_digest(kind: bytes, encoding: bytes) -> bytes:
    return hashlib.sha256(b"pitpm-set/" + kind + encoding).digest()


@dataclass
class SignerPacket:
    group: Group
    index: int
    secret: int
    public: GroupElement
    seed: bytes
    mac_key: bytes
    counters: CounterStore = field(default_factory=CounterStore)
    epoch: int = 0
    # fresh nonces generated for aggregator-less sessions, keyed by (set digest, ctr)
    pending: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 < self.secret < self.group.order:
            raise InvalidParams("secret key must be a nonzero scalar")
        if self.group.base_exp(self.secret) != self.public:
            raise InvalidParams("public key does not match secret key")
        if len(self.seed) != SEED_LEN:
            raise InvalidParams("seed must be 32 bytes")

    def refresh(self, epoch: int, token: bytes) -> None:
        self.seed = seed_refresh(self.seed, epoch, token)
        self.epoch = epoch

    def copy(self) -> "SignerPacket":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class PublicParams:
    group: Group
    n: int
    gctr: int
    aggregator_id: bytes
    seed_agg_fingerprint: bytes
    aggregator_type: str = "TPM"


@dataclass
class AggregatorSecrets:
    master_seed: bytes
    seed_agg: bytes
    seeds: dict[int, bytes]
    mac_keys: dict[int, bytes]
    operator_key: bytes
    public_keys: dict[int, GroupElement]


@dataclass(frozen=True)
class AggregatedKey:
    apk: GroupElement
    coefficients: dict[int, int]
    ordered_list_digest: bytes


def attest_aggregator(aggregator_id: bytes) -> bool:
    log.warning("remote attestation of %r is stubbed; accepting", aggregator_id)
    return True


def setup(
    lambda_bits: int,
    n: int,
    group: Group,
    rng=None,
    aggregator_id: bytes = b"pitpm-aggregator",
    aggregator_type: str = "TPM",
):
    """Generate seeds, key pairs and aggregator material for ``n`` signers.

    ``rng`` (a ``random.Random``) makes the run reproducible; by default the
    OS CSPRNG is used.  Returns ``(params, packets, aggregator_secrets)``.
    """
    if n < 1:
        raise InvalidParams("need at least one signer")
    if lambda_bits < 1:
        raise InvalidParams("security parameter must be positive")
    if n > group.order - 1:
        raise InvalidParams(f"{group.name} has only {group.order - 1} distinct keys")
    if aggregator_type not in AGGREGATOR_TYPES:
        raise InvalidParams(f"aggregator type must be one of {AGGREGATOR_TYPES}")

    master_seed = random_bytes(SEED_LEN, rng)
    seed_agg = random_bytes(SEED_LEN, rng)
    packets = []
    seen = set()
    for i in range(1, n + 1):
        while True:
            x = random_scalar(group, rng)
            pk = group.base_exp(x)
            if pk not in seen:
                break
        seen.add(pk)
        seed_i = prf_seed(master_seed, Tag.SEED_DERIVE, i.to_bytes(8, "big"))
        packets.append(
            SignerPacket(group, i, x, pk, seed_i, random_bytes(SEED_LEN, rng))
        )

    attest_aggregator(aggregator_id)
    secrets = AggregatorSecrets(
        master_seed=master_seed,
        seed_agg=seed_agg,
        seeds={p.index: p.seed for p in packets},
        mac_keys={p.index: p.mac_key for p in packets},
        operator_key=random_bytes(SEED_LEN, rng),
        public_keys={p.index: p.public for p in packets},
    )
    params = PublicParams(
        group=group,
        n=n,
        gctr=0,
        aggregator_id=aggregator_id,
        seed_agg_fingerprint=fingerprint(seed_agg),
        aggregator_type=aggregator_type,
    )
    return params, packets, secrets


def aggregation_coefficient(
    group: Group, seed_agg: bytes, pk: GroupElement, ordered: bytes
) -> int:
    data = pk.encode() + ordered
    retry = 0
    a = prf(seed_agg, Tag.COEFF, data, group.order)
    while a == 0:
        retry += 1
        a = prf(seed_agg, Tag.COEFF, data + bytes([retry]), group.order)
    return a


def key_agg(pks: Mapping[int, GroupElement], seed_agg: bytes) -> AggregatedKey:
    """Aggregate ``{index: pk}`` into ``apk = prod pk_i ** a_i``."""
    if not pks:
        raise InvalidParams("empty key set")
    signers = SignerSet.by_keys(pks)
    group = signers.keys[0].group
    coefficients = {
        i: aggregation_coefficient(group, seed_agg, pks[i], signers.encoding)
        for i in signers.indices
    }
    apk = group.multi_exp((pks[i], a) for i, a in coefficients.items())
    return AggregatedKey(apk, coefficients, hashlib.sha256(signers.encoding).digest())


def naive_key_agg(pks: Mapping[int, GroupElement]) -> AggregatedKey:
    """Unweighted product of keys; only used by the interactive baseline and attack demos."""
    signers = SignerSet.by_keys(pks)
    group = signers.keys[0].group
    return AggregatedKey(
        group.product(pks[i] for i in signers.indices),
        {i: 1 for i in signers.indices},
        hashlib.sha256(signers.encoding).digest(),
    )


def public_keys(packets) -> dict[int, GroupElement]:
    keys = {p.index: p.public for p in packets}
    if len(set(keys.values())) != len(keys):
        raise DuplicateKey("two signers share a public key")
    return keys
