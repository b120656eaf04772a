"""The seed-holding aggregator and the aggregator-less fallback coordinator."""

from __future__ import annotations

import logging
import threading
from dataclasses import replace
from typing import Callable, Iterable, Mapping

from .codec import Reader
from .errors import (
    AggregatorUnavailable,
    AuthFailure,
    CounterReplay,
    DecodeError,
    FallbackIncomplete,
    InvalidParams,
    NotAMember,
    ThresholdUnmet,
    UnknownSigner,
)
from .group import Group, GroupElement, random_bytes
from .keyset import (
    AggregatedKey,
    AggregatorSecrets,
    CounterStore,
    PublicParams,
    SignerSet,
    key_agg,
)
from .multisig import (
    MULTISIG,
    THRESHOLD,
    CommitmentBundle,
    MultiSignature,
    SignatureShare,
    combine,
    derive_nonce,
)
from .prf import SEED_LEN, mac_ok, message_digest, seed_refresh, u64
from .threshold import (
    ThresholdParams,
    ThresholdShare,
    reconstruct,
    threshold_commitment,
    weighted_commitment,
)
from . import wire

log = logging.getLogger(__name__)

QUOTE_MAGIC = b"PITPM-QUOTE1"

Tamper = Callable[[CommitmentBundle, int], CommitmentBundle]


class Aggregator:
    """Seed vault plus authenticated commitment service.

    One instance serves multi-signature sessions (``public_keys`` and
    ``seed_agg`` given), threshold sessions (``threshold`` given) or both.
    All state changes run under a single lock, so counter checks are
    linearizable across concurrent callers.
    """

    def __init__(
        self,
        group: Group,
        seeds: Mapping[int, bytes],
        mac_keys: Mapping[int, bytes],
        *,
        public_keys: Mapping[int, GroupElement] | None = None,
        seed_agg: bytes | None = None,
        threshold: ThresholdParams | None = None,
        operator_key: bytes = b"",
        aggregator_id: bytes = b"pitpm-aggregator",
        aggregator_type: str = "TPM",
        epoch: int = 0,
    ):
        if set(seeds) != set(mac_keys):
            raise InvalidParams("every stored seed needs a MAC key")
        self.group = group
        self._seeds = dict(seeds)
        self._mac_keys = dict(mac_keys)
        self.public_keys = dict(public_keys or {})
        self._seed_agg = seed_agg
        self.threshold = threshold
        self._operator_key = operator_key
        self.aggregator_id = aggregator_id
        self.aggregator_type = aggregator_type
        self.epoch = epoch
        self.available = True
        # test hook: rewrites a bundle in transit, before the response MAC
        self.tamper: Tamper | None = None
        self.served = CounterStore()
        self.served_log: list[tuple[bytes, int]] = []
        self._cache: dict[bytes, CommitmentBundle] = {}
        self._lock = threading.RLock()

    @classmethod
    def from_setup(cls, params: PublicParams, secrets: AggregatorSecrets) -> "Aggregator":
        return cls(
            params.group,
            secrets.seeds,
            secrets.mac_keys,
            public_keys=secrets.public_keys,
            seed_agg=secrets.seed_agg,
            operator_key=secrets.operator_key,
            aggregator_id=params.aggregator_id,
            aggregator_type=params.aggregator_type,
        )

    @classmethod
    def from_dkg(cls, params: ThresholdParams, shares: Iterable[ThresholdShare],
                 operator_key: bytes | None = None, rng=None) -> "Aggregator":
        shares = list(shares)
        return cls(
            params.group,
            {s.index: s.seed for s in shares},
            {s.index: s.mac_key for s in shares},
            threshold=params,
            operator_key=operator_key if operator_key is not None else random_bytes(SEED_LEN, rng),
            aggregator_id=params.aggregator_id,
        )

    def snapshot(self) -> dict:
        """Everything needed to persist this instance (secrets included)."""
        with self._lock:
            return {
                "group": self.group,
                "seeds": dict(self._seeds),
                "mac_keys": dict(self._mac_keys),
                "public_keys": dict(self.public_keys),
                "seed_agg": self._seed_agg,
                "threshold": self.threshold,
                "operator_key": self._operator_key,
                "aggregator_id": self.aggregator_id,
                "aggregator_type": self.aggregator_type,
                "epoch": self.epoch,
                "served": dict(self.served.items()),
                "cache": dict(self._cache),
            }

    @classmethod
    def restore(cls, snap: dict) -> "Aggregator":
        agg = cls(
            snap["group"], snap["seeds"], snap["mac_keys"],
            public_keys=snap.get("public_keys"),
            seed_agg=snap.get("seed_agg"),
            threshold=snap.get("threshold"),
            operator_key=snap.get("operator_key", b""),
            aggregator_id=snap.get("aggregator_id", b"pitpm-aggregator"),
            aggregator_type=snap.get("aggregator_type", "TPM"),
            epoch=snap.get("epoch", 0),
        )
        agg.served = CounterStore(snap.get("served", {}))
        agg._cache = dict(snap.get("cache", {}))
        return agg

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(sorted(self._seeds))

    # --- signer sets -------------------------------------------------------

    def signer_set(self, mode: int, indices: Iterable[int]) -> SignerSet:
        indices = list(indices)
        unknown = sorted(set(indices) - set(self._seeds))
        if unknown:
            raise UnknownSigner(f"no stored seed for signer(s) {unknown}")
        if len(set(indices)) != len(indices):
            raise InvalidParams("signer set lists an index twice")
        if mode == MULTISIG:
            if not self.public_keys:
                raise InvalidParams("aggregator holds no multi-signature key set")
            return SignerSet.by_keys({i: self.public_keys[i] for i in indices})
        if mode == THRESHOLD:
            if self.threshold is None:
                raise InvalidParams("aggregator holds no threshold parameters")
            return self.threshold.signer_set(indices)
        raise InvalidParams(f"unknown mode {mode}")

    def aggregated_key(self, signers: SignerSet) -> AggregatedKey:
        if self._seed_agg is None:
            raise InvalidParams("aggregator holds no coefficient seed")
        return key_agg({i: self.public_keys[i] for i in signers.indices}, self._seed_agg)

    # --- commitment service ------------------------------------------------

    def _compute(self, mode: int, signers: SignerSet, mdigest: bytes, ctr: int) -> CommitmentBundle:
        if mode == THRESHOLD:
            return threshold_commitment(self.group, signers, mdigest, ctr, self._seeds,
                                        self.threshold.t)
        commitments = tuple(
            (j, self.group.base_exp(derive_nonce(self.group, self._seeds[j], mdigest, ctr, signers)))
            for j in signers.indices
        )
        R = self.group.product(Rj for _, Rj in commitments)
        return CommitmentBundle(MULTISIG, R, commitments, ctr, signers.digest, mdigest,
                                self.aggregated_key(signers))

    def serve_commitment(self, req: wire.CommitmentRequest) -> CommitmentBundle:
        """Answer one request with a bundle MAC'd for the requester.

        The first request for a ``(set, ctr)`` computes and caches the bundle;
        the other members asking for the same ``(set, ctr, message)`` get the
        cached values without advancing the counter.
        """
        with self._lock:
            if not self.available:
                raise AggregatorUnavailable("aggregator offline")
            key = self._mac_keys.get(req.requester)
            if key is None or not req.authentic(key):
                raise AuthFailure("request MAC does not verify")
            if req.requester not in req.signers:
                raise NotAMember(f"requester {req.requester} is not in the signer set")
            signers = self.signer_set(req.mode, req.signers)
            if req.mode == THRESHOLD and len(signers) <= self.threshold.t:
                raise ThresholdUnmet(
                    f"|T| = {len(signers)} but t + 1 = {self.threshold.t + 1} signers are required"
                )
            cached = self._cache.get(signers.digest)
            if cached is not None and cached.ctr == req.ctr:
                if cached.message_digest != req.message_digest or cached.mode != req.mode:
                    raise CounterReplay(f"counter {req.ctr} already used for another message")
                bundle = cached
            else:
                if not self.served.fresh(signers.digest, req.ctr):
                    raise CounterReplay(
                        f"counter {req.ctr} not fresh (last {self.served.last(signers.digest)})"
                    )
                bundle = self._compute(req.mode, signers, req.message_digest, req.ctr)
                self.served.advance(signers.digest, req.ctr)
                self.served_log.append((signers.digest, req.ctr))
                self._cache[signers.digest] = bundle
            if self.tamper is not None:
                bundle = self.tamper(bundle, req.requester)
            return bundle.for_recipient(req.requester, key)

    def _served_session(self, signers: SignerSet, mdigest: bytes, ctr: int) -> CommitmentBundle:
        cached = self._cache.get(signers.digest)
        if cached is None or cached.ctr != ctr or cached.message_digest != mdigest:
            raise AuthFailure("no such served session")
        return cached

    def nonces(self, signers: SignerSet, mdigest: bytes, ctr: int) -> dict[int, int]:
        """Session nonces of a served threshold session, for robust reconstruction.

        Stays inside the aggregator acting as combiner; never put on the wire.
        """
        with self._lock:
            self._served_session(signers, mdigest, ctr)
            return {
                j: derive_nonce(self.group, self._seeds[j], mdigest, ctr, signers)
                for j in signers.indices
            }

    def combine_multisig(self, shares: Iterable[SignatureShare], message: bytes,
                         signers: SignerSet) -> MultiSignature:
        with self._lock:
            bundle = self._cache.get(signers.digest)
        if bundle is None or bundle.message_digest != message_digest(message):
            raise AuthFailure("no such served session")
        return combine(shares, bundle, bundle.agg, message, signers)

    def combine_threshold(self, shares: Iterable[SignatureShare], message: bytes,
                          signers: SignerSet, ctr: int) -> MultiSignature:
        mdigest = message_digest(message)
        with self._lock:
            bundle = self._served_session(signers, mdigest, ctr)
        nonces = self.nonces(signers, mdigest, ctr)
        return reconstruct(shares, bundle, self.threshold, message, signers, nonces)

    # --- maintenance ---------------------------------------------------------

    def refresh_epoch(self, token: bytes, operator_mac: bytes, epoch: int | None = None) -> int:
        """Replace every stored seed by its refreshed value and bump the epoch."""
        with self._lock:
            epoch = self.epoch + 1 if epoch is None else epoch
            if epoch != self.epoch + 1 or not mac_ok(
                self._operator_key, b"refresh" + u64(epoch) + token, operator_mac
            ):
                raise AuthFailure("refresh token not authorized")
            self._seeds = {i: seed_refresh(s, epoch, token) for i, s in self._seeds.items()}
            self.epoch = epoch
            self._cache.clear()
            return epoch

    def attestation_quote(self) -> bytes:
        """Fixed-structure quote; there is no hardware root behind it."""
        atype = self.aggregator_type.encode()
        return b"".join([
            QUOTE_MAGIC,
            bytes([len(atype)]), atype,
            len(self.aggregator_id).to_bytes(2, "big"), self.aggregator_id,
            u64(self.epoch),
        ])

    # --- transport -----------------------------------------------------------

    def handle_frame(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        """Dispatch one request frame; protocol errors become error frames."""
        try:
            if msg_type == wire.REQUEST:
                req = wire.CommitmentRequest.from_bytes(payload)
                return wire.BUNDLE, self.serve_commitment(req).to_bytes()
            if msg_type == wire.REFRESH:
                epoch, token, tag = wire.parse_refresh(payload)
                return wire.REFRESH, u64(self.refresh_epoch(token, tag, epoch))
            if msg_type == wire.ATTESTATION:
                return wire.ATTESTATION, self.attestation_quote()
            raise DecodeError(f"unexpected message type {msg_type:#04x}")
        except Exception as exc:
            log.info("request rejected: %s", exc)
            return wire.ERROR, wire.encode_error(exc)


def parse_quote(quote: bytes) -> dict:
    r = Reader(quote)
    if r.take(len(QUOTE_MAGIC)) != QUOTE_MAGIC:
        raise DecodeError("not an attestation quote")
    atype = r.take(r.int(1)).decode()
    aid = r.take(r.int(2))
    epoch = r.int(8)
    r.end()
    return {"type": atype, "aggregator_id": aid, "epoch": epoch}


def fallback_coordinate(
    group: Group,
    signers: SignerSet,
    message: bytes,
    ctr: int,
    solicit: Callable[[int], GroupElement | None],
    mode: int = MULTISIG,
    agg: AggregatedKey | None = None,
    t: int | None = None,
) -> CommitmentBundle:
    """Assemble a bundle from commitments collected one signer at a time.

    ``solicit(index)`` performs the round trip to a signer and returns its
    fresh ``R_i``, or ``None`` (or raises ``ConnectionError``) if the signer
    cannot be reached.  The bundle has the normal shape but no MAC: the
    coordinator holds no signer keys, and each signer checks its own entry
    against the nonce it just generated.
    """
    if mode == THRESHOLD and (t is None or len(signers) <= t):
        raise ThresholdUnmet("fallback signing set below threshold")
    commitments = []
    missing = []
    for j in signers.indices:
        try:
            Rj = solicit(j)
        except ConnectionError:
            Rj = None
        if Rj is None:
            missing.append(j)
        else:
            commitments.append((j, Rj))
    if missing:
        raise FallbackIncomplete(f"signer(s) {missing} unreachable")
    commitments = tuple(commitments)
    if mode == THRESHOLD:
        R = weighted_commitment(group, commitments)
    else:
        R = group.product(Rj for _, Rj in commitments)
    return CommitmentBundle(mode, R, commitments, ctr, signers.digest, message_digest(message),
                            agg, fallback=True)


def tamper_entry(index: int, delta: GroupElement | None = None, recompute: bool = True) -> Tamper:
    """Tamper hook replacing ``R_index`` by ``R_index * delta`` (default ``g``).

    With ``recompute`` the aggregate ``R`` is rebuilt from the altered vector,
    so only the owner of the altered entry can notice.
    """

    def hook(bundle: CommitmentBundle, _recipient: int) -> CommitmentBundle:
        d = delta if delta is not None else bundle.group.generator
        commitments = tuple((j, Rj * d if j == index else Rj) for j, Rj in bundle.commitments)
        if not recompute:
            return replace(bundle, commitments=commitments)
        if bundle.mode == THRESHOLD:
            R = weighted_commitment(bundle.group, commitments)
        else:
            R = bundle.group.product(Rj for _, Rj in commitments)
        return replace(bundle, commitments=commitments, R=R)

    return hook
