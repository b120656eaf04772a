"""Deterministic in-process network simulator and the interactive baseline.

Parties exchange real wire frames through :class:`SimNetwork`, an event
queue over a virtual clock.  Every frame is recorded in a
:class:`Transcript`; nothing sleeps.  Latency draws come from their own
seeded stream so the latency model can change timings without touching any
protocol value.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable

from . import errors, wire
from .aggregator import Aggregator, fallback_coordinate, tamper_entry
from .codec import Reader
from .errors import (
    FallbackIncomplete,
    InsufficientShares,
    InvalidParams,
    PiTPMError,
    ProtocolAborted,
)
from .group import PROD, Group, random_scalar
from .keyset import AggregatedKey, SignerPacket, SignerSet, naive_key_agg, public_keys, setup
from .multisig import (
    MULTISIG,
    THRESHOLD,
    CommitmentBundle,
    MultiSignature,
    SignatureShare,
    challenge,
    combine,
    fallback_commit,
    local_sign,
    verify,
)
from .threshold import (
    ThresholdParams,
    ThresholdShare,
    reconstruct,
    run_dkg,
    threshold_local_sign,
    verify_threshold,
)

AGG = "agg"
COORD = "coord"
DEFAULT_MESSAGE = b"pitpm simulated transaction"

PHASE_COMMIT = "commit"
PHASE_SIGN = "sign"

_PHASE_OF = {
    wire.REQUEST: PHASE_COMMIT,
    wire.BUNDLE: PHASE_COMMIT,
    wire.SOLICIT: PHASE_COMMIT,
    wire.COMMIT: PHASE_COMMIT,
    wire.ERROR: PHASE_COMMIT,
    wire.SHARE: PHASE_SIGN,
}


def signer_name(i: int) -> str:
    return f"S{i}"


# --- transcript ---------------------------------------------------------------

@dataclass(frozen=True)
class MessageRecord:
    time: float
    arrival: float
    sender: str
    receiver: str
    phase: str
    kind: str
    size: int


class Transcript:
    """Ordered record of every frame put on the simulated network."""

    def __init__(self):
        self.records: list[MessageRecord] = []
        self.errors: list[tuple[str, str, str]] = []
        self.wall_ms: float = 0.0

    def add(self, rec: MessageRecord) -> None:
        self.records.append(rec)

    def note_error(self, party: str, exc: Exception) -> None:
        self.errors.append((party, type(exc).__name__, str(exc)))

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def bytes_total(self) -> int:
        return sum(r.size for r in self.records)

    def by_phase(self) -> dict[str, int]:
        return dict(Counter(r.phase for r in self.records))

    def by_kind(self) -> dict[str, int]:
        return dict(Counter(r.kind for r in self.records))

    def error_types(self, party: str | None = None) -> list[str]:
        return [kind for p, kind, _ in self.errors if party is None or p == party]

    def to_bytes(self) -> bytes:
        doc = {
            "records": [[round(r.time, 6), round(r.arrival, 6), r.sender, r.receiver,
                         r.phase, r.kind, r.size] for r in self.records],
            "errors": self.errors,
            "wall_ms": round(self.wall_ms, 6),
        }
        return json.dumps(doc, separators=(",", ":")).encode()

    def __len__(self) -> int:
        return self.total


# --- fault plan -----------------------------------------------------------------

TAMPER_KINDS = {"bundle": wire.BUNDLE, "share": wire.SHARE}
TAMPER_ACTIONS = ("delta", "garbage")


@dataclass(frozen=True)
class TamperRule:
    """Alter one message type.

    ``bundle`` rules replace commitment ``R_index`` (times ``g``).  By default
    this happens inside the aggregator, before the response MAC, which
    models a misbehaving aggregator; ``in_transit=True`` alters the frame on
    the wire instead, so the MAC no longer verifies.  ``recipients`` limits
    which signers receive the altered bundle.

    ``share`` rules alter the share sent by signer ``index``: ``delta`` adds
    one to ``s``, ``garbage`` replaces it with a random scalar.
    """

    kind: str
    index: int
    action: str = "delta"
    in_transit: bool = False
    recipients: frozenset[int] | None = None

    def __post_init__(self):
        if self.kind not in TAMPER_KINDS:
            raise InvalidParams(f"tamper rule for unknown message type {self.kind!r}")
        if self.action not in TAMPER_ACTIONS:
            raise InvalidParams(f"unknown tamper action {self.action!r}")


@dataclass(frozen=True)
class FaultPlan:
    aggregator_offline: bool = False
    tamper: tuple[TamperRule, ...] = ()
    offline_signers: frozenset[int] = frozenset()
    latency_ms: float = 20.0
    jitter_ms: float = 5.0

    def __post_init__(self):
        if self.latency_ms < 0 or self.jitter_ms < 0:
            raise InvalidParams("latency parameters must be non-negative")
        object.__setattr__(self, "offline_signers", frozenset(self.offline_signers))
        object.__setattr__(self, "tamper", tuple(self.tamper))

    @property
    def timeout_ms(self) -> float:
        """How long a party waits for a reply before giving up on it."""
        return 4 * (self.latency_ms + self.jitter_ms) + 1.0


NO_FAULTS = FaultPlan()


# --- network --------------------------------------------------------------------

class SimNetwork:
    """Event queue with a virtual clock; delivery order is fully determined by the seed."""

    def __init__(self, group: Group, faults: FaultPlan, latency_rng: random.Random,
                 fault_rng: random.Random):
        self.group = group
        self.faults = faults
        self.now = 0.0
        self.transcript = Transcript()
        self._latency_rng = latency_rng
        self._fault_rng = fault_rng
        self._queue: list = []
        self._seq = 0
        self._nodes: dict[str, object] = {}
        self.down: set[str] = set()

    def register(self, name: str, node) -> None:
        self._nodes[name] = node

    def _push(self, at: float, item) -> None:
        heapq.heappush(self._queue, (at, self._seq, item))
        self._seq += 1

    def send(self, src: str, dst: str, msg_type: int, payload: bytes) -> None:
        payload = self._apply_tamper(src, dst, msg_type, payload)
        data = wire.frame(msg_type, payload)
        latency = self.faults.latency_ms + self._latency_rng.uniform(0, self.faults.jitter_ms)
        arrival = self.now + latency
        self.transcript.add(MessageRecord(
            self.now, arrival, src, dst, _PHASE_OF.get(msg_type, "other"),
            wire.FRAME_TYPES.get(msg_type, hex(msg_type)), len(data),
        ))
        self._push(arrival, ("msg", dst, src, data))

    def timer(self, at: float, callback: Callable[[], None]) -> None:
        self._push(at, ("timer", callback))

    def run(self) -> None:
        while self._queue:
            at, _, item = heapq.heappop(self._queue)
            self.now = at
            if item[0] == "timer":
                item[1]()
                continue
            _, dst, src, data = item
            if dst in self.down or dst not in self._nodes:
                continue
            msg_type, payload = wire.parse_frame(data)
            self._nodes[dst].on_message(self, src, msg_type, payload)

    def _apply_tamper(self, src: str, dst: str, msg_type: int, payload: bytes) -> bytes:
        for rule in self.faults.tamper:
            if TAMPER_KINDS[rule.kind] != msg_type:
                continue
            if rule.kind == "share" and src == signer_name(rule.index):
                share = SignatureShare.from_bytes(self.group, payload)
                q = self.group.order
                s = (share.s + 1) % q if rule.action == "delta" else random_scalar(
                    self.group, self._fault_rng, nonzero=False)
                if s == share.s:
                    s = (s + 1) % q
                payload = replace(share, s=s).to_bytes(self.group)
            elif rule.kind == "bundle" and rule.in_transit:
                if rule.recipients is not None and dst not in {signer_name(i) for i in rule.recipients}:
                    continue
                bundle = CommitmentBundle.from_bytes(self.group, payload)
                altered = tamper_entry(rule.index)(bundle, 0)
                payload = altered.body() + bundle.mac
        return payload


# --- PiTPM parties ----------------------------------------------------------------

@dataclass(frozen=True)
class Scheme:
    kind: str = "multisig"
    t: int = 0

    @classmethod
    def parse(cls, text) -> "Scheme":
        if isinstance(text, Scheme):
            return text
        kind, _, t = str(text).partition(":")
        if kind == "multisig" and not t:
            return cls("multisig")
        if kind == "threshold":
            if not t.isdigit():
                raise InvalidParams("threshold scheme needs t, e.g. threshold:2")
            return cls("threshold", int(t))
        raise InvalidParams(f"unknown scheme {text!r}")

    @property
    def mode(self) -> int:
        return THRESHOLD if self.kind == "threshold" else MULTISIG

    def __str__(self) -> str:
        return self.kind if self.kind == "multisig" else f"threshold:{self.t}"


class SignerNode:
    def __init__(self, index: int, secret, session: "Session", rng: random.Random):
        self.index = index
        self.name = signer_name(index)
        self.secret = secret  # SignerPacket or ThresholdShare
        self.session = session
        self.rng = rng

    def start(self, net: SimNetwork) -> None:
        s = self.session
        req = wire.CommitmentRequest.create(s.scheme.mode, s.message, s.ctr, s.signers.indices,
                                            self.index, self.secret.mac_key)
        net.send(self.name, AGG, wire.REQUEST, req.to_bytes())

    def on_message(self, net: SimNetwork, src: str, msg_type: int, payload: bytes) -> None:
        s = self.session
        try:
            if msg_type == wire.BUNDLE:
                bundle = CommitmentBundle.from_bytes(net.group, payload)
                if s.scheme.mode == THRESHOLD:
                    share = threshold_local_sign(self.secret, s.message, bundle, s.threshold, s.signers)
                else:
                    share = local_sign(self.secret, s.message, bundle, s.agg, s.signers)
                net.send(self.name, src, wire.SHARE, share.to_bytes(net.group))
            elif msg_type == wire.SOLICIT:
                R = fallback_commit(self.secret, s.message, s.ctr, s.signers, self.rng)
                net.send(self.name, src, wire.COMMIT, self.index.to_bytes(2, "big") + R.encode())
            elif msg_type == wire.ERROR:
                raise wire.decode_error(payload)
        except PiTPMError as exc:
            net.transcript.note_error(self.name, exc)


class CombinerMixin:
    """Collects shares and combines once all arrived or the deadline passes."""

    def _init_combiner(self, session: "Session"):
        self.session = session
        self.shares: dict[int, SignatureShare] = {}
        self.deadline_set = False

    def _take_share(self, net: SimNetwork, payload: bytes) -> None:
        share = SignatureShare.from_bytes(net.group, payload)
        if share.index in self.session.signers and share.index not in self.shares:
            self.shares[share.index] = share
        if not self.deadline_set:
            self.deadline_set = True
            net.timer(net.now + net.faults.timeout_ms, lambda: self._finish(net))
        if len(self.shares) == len(self.session.signers):
            self._finish(net)

    def _finish(self, net: SimNetwork) -> None:
        if self.session.done:
            return
        try:
            sig = self._combine(list(self.shares.values()))
            self.session.deliver(net, sig)
        except PiTPMError as exc:
            self.session.fail(net, exc)


class AggregatorNode(CombinerMixin):
    name = AGG

    def __init__(self, aggregator: Aggregator, session: "Session"):
        self.aggregator = aggregator
        self._init_combiner(session)

    def on_message(self, net: SimNetwork, src: str, msg_type: int, payload: bytes) -> None:
        if not self.aggregator.available:
            return
        if msg_type == wire.SHARE:
            self._take_share(net, payload)
            return
        rtype, rpayload = self.aggregator.handle_frame(msg_type, payload)
        net.send(AGG, src, rtype, rpayload)

    def _combine(self, shares):
        s = self.session
        if s.scheme.mode == THRESHOLD:
            return self.aggregator.combine_threshold(shares, s.message, s.signers, s.ctr)
        return self.aggregator.combine_multisig(shares, s.message, s.signers)


class CoordinatorNode(CombinerMixin):
    """Aggregator-less fallback: relays fresh commitments, then combines."""

    name = COORD

    def __init__(self, session: "Session"):
        self._init_combiner(session)
        self.commits: dict[int, object] = {}
        self.bundle: CommitmentBundle | None = None

    def start(self, net: SimNetwork) -> None:
        net.timer(net.faults.timeout_ms, lambda: self._probe(net))

    def _probe(self, net: SimNetwork) -> None:
        # out-of-band health check of the aggregator; not a protocol message
        if self.session.aggregator.available or self.session.done:
            return
        for j in self.session.signers.indices:
            net.send(COORD, signer_name(j), wire.SOLICIT, b"")
        net.timer(net.now + net.faults.timeout_ms, lambda: self._assemble(net))

    def on_message(self, net: SimNetwork, src: str, msg_type: int, payload: bytes) -> None:
        if msg_type == wire.COMMIT:
            r = Reader(payload)
            j = r.int(2)
            self.commits[j] = net.group.decode(r.take(net.group.element_width))
            if len(self.commits) == len(self.session.signers):
                self._assemble(net)
        elif msg_type == wire.SHARE and self.bundle is not None:
            self._take_share(net, payload)

    def _assemble(self, net: SimNetwork) -> None:
        if self.bundle is not None or self.session.done:
            return
        s = self.session
        try:
            self.bundle = fallback_coordinate(net.group, s.signers, s.message, s.ctr,
                                              self.commits.get, s.scheme.mode, s.agg, s.scheme.t)
        except PiTPMError as exc:
            s.fail(net, exc)
            return
        for j in s.signers.indices:
            net.send(COORD, signer_name(j), wire.BUNDLE, self.bundle.to_bytes())

    def _combine(self, shares):
        s = self.session
        if s.scheme.mode == THRESHOLD:
            return reconstruct(shares, self.bundle, s.threshold, s.message, s.signers)
        return combine(shares, self.bundle, s.agg, s.message, s.signers)


@dataclass
class Session:
    scheme: Scheme
    group: Group
    message: bytes
    ctr: int
    signers: SignerSet
    aggregator: Aggregator
    agg: AggregatedKey | None = None
    threshold: ThresholdParams | None = None
    keys: dict = field(default_factory=dict)
    packets: list = field(default_factory=list)
    signature: MultiSignature | None = None
    error: Exception | None = None
    done: bool = False

    def deliver(self, net: SimNetwork, sig: MultiSignature) -> None:
        if self.scheme.mode == THRESHOLD:
            ok = verify_threshold(self.message, sig, self.threshold)
        else:
            ok = verify(self.message, sig, self.keys, coefficients=self.agg.coefficients)
        if not ok:
            self.fail(net, ProtocolAborted(f"combined signature rejected ({ok.reason})"))
            return
        self.signature = sig
        self.done = True
        net.transcript.wall_ms = net.now

    def fail(self, net: SimNetwork, exc: Exception) -> None:
        if self.done:
            return
        # a signer-side detection is more informative than the combiner's symptom
        signer_errors = [e for e in net.transcript.errors if e[0].startswith("S")]
        if signer_errors and not isinstance(exc, FallbackIncomplete):
            party, kind, text = signer_errors[0]
            cause = exc
            exc = _rebuild_error(kind, f"{party}: {text}")
            exc.__cause__ = cause
        self.error = exc
        self.done = True
        net.transcript.wall_ms = net.now


def _rebuild_error(kind: str, text: str) -> Exception:
    cls = getattr(errors, kind, ProtocolAborted)
    try:
        return cls(text)
    except TypeError:
        return ProtocolAborted(text)


@dataclass
class RunResult:
    """Outcome of one simulated session plus the material it ran on."""

    outcome: MultiSignature | Exception
    transcript: Transcript
    session: Session

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, MultiSignature)

    def pair(self):
        return self.outcome, self.transcript


def _streams(seed: int):
    def sub(label: str) -> random.Random:
        return random.Random(hashlib.sha256(f"{seed}/{label}".encode()).digest())

    return sub


def simulate(n: int, scheme="multisig", faults: FaultPlan = NO_FAULTS, seed: int = 0,
             group: Group = PROD, message: bytes = DEFAULT_MESSAGE, ctr: int = 1,
             signer_indices=None) -> RunResult:
    """Run one complete PiTPM session through the simulator."""
    scheme = Scheme.parse(scheme)
    if n < 1:
        raise InvalidParams("need at least one signer")
    stream = _streams(seed)
    setup_rng = stream("setup")

    if scheme.mode == THRESHOLD:
        tparams, secrets, _ = run_dkg(group, scheme.t, n, setup_rng)
        aggregator = Aggregator.from_dkg(tparams, secrets, rng=setup_rng)
        indices = tuple(signer_indices or range(1, n + 1))
        signers = tparams.signer_set(indices)
        session = Session(scheme, group, message, ctr, signers, aggregator, threshold=tparams,
                          keys=dict(tparams.vks), packets=secrets)
    else:
        params, secrets, agg_secrets = setup(128, n, group, setup_rng)
        aggregator = Aggregator.from_setup(params, agg_secrets)
        keys = public_keys(secrets)
        indices = tuple(signer_indices or range(1, n + 1))
        signers = SignerSet.by_keys({i: keys[i] for i in indices})
        # coefficients published once at key-aggregation time
        agg = aggregator.aggregated_key(signers)
        session = Session(scheme, group, message, ctr, signers, aggregator, agg=agg,
                          keys=keys, packets=secrets)

    net = SimNetwork(group, faults, stream("latency"), stream("faults"))
    _install_bundle_tamper(aggregator, faults)
    aggregator.available = not faults.aggregator_offline
    agg_node = AggregatorNode(aggregator, session)
    coord = CoordinatorNode(session)
    net.register(AGG, agg_node)
    net.register(COORD, coord)
    nodes = []
    by_index = {p.index: p for p in secrets}
    for i in signers.indices:
        node = SignerNode(i, by_index[i], session, stream(f"signer{i}"))
        net.register(node.name, node)
        if i in faults.offline_signers:
            net.down.add(node.name)
        else:
            nodes.append(node)
    for node in nodes:
        node.start(net)
    coord.start(net)
    net.run()
    if not session.done:
        session.fail(net, ProtocolAborted("session stalled"))
    outcome = session.signature if session.signature is not None else session.error
    if isinstance(outcome, PiTPMError):
        outcome.transcript = net.transcript
    return RunResult(outcome, net.transcript, session)


def _install_bundle_tamper(aggregator: Aggregator, faults: FaultPlan) -> None:
    rules = [r for r in faults.tamper if r.kind == "bundle" and not r.in_transit]
    if not rules:
        return

    def hook(bundle, recipient):
        for rule in rules:
            if rule.recipients is None or recipient in rule.recipients:
                bundle = tamper_entry(rule.index)(bundle, recipient)
        return bundle

    aggregator.tamper = hook


def run_pitpm(n: int, scheme="multisig", faults: FaultPlan = NO_FAULTS, seed: int = 0,
              group: Group = PROD, **kw):
    """Returns ``(signature or exception, transcript)``."""
    return simulate(n, scheme, faults, seed, group, **kw).pair()


# --- interactive baseline -------------------------------------------------------

class BaselineSigner:
    """All-to-all commitment exchange, local challenge, all-to-all share exchange."""

    def __init__(self, packet: SignerPacket, peers: tuple[int, ...], run: "BaselineRun",
                 rng: random.Random):
        self.packet = packet
        self.index = packet.index
        self.name = signer_name(packet.index)
        self.peers = peers
        self.run = run
        self.rng = rng
        self.w = 0
        self.commits: dict[int, object] = {}
        self.shares: dict[int, int] = {}
        self.c = 0
        self.R = None

    def start(self, net: SimNetwork) -> None:
        g = net.group
        self.w = random_scalar(g, self.rng, nonzero=False)
        self.commits[self.index] = g.base_exp(self.w)
        payload = self.index.to_bytes(2, "big") + self.commits[self.index].encode()
        for j in self.peers:
            if j != self.index:
                net.send(self.name, signer_name(j), wire.COMMIT, payload)
        net.timer(net.faults.timeout_ms * 2, lambda: self._check(net))
        self._maybe_sign(net)

    def on_message(self, net: SimNetwork, src: str, msg_type: int, payload: bytes) -> None:
        g = net.group
        if msg_type == wire.COMMIT:
            r = Reader(payload)
            j = r.int(2)
            self.commits[j] = g.decode(r.take(g.element_width))
            self._maybe_sign(net)
        elif msg_type == wire.SHARE:
            share = SignatureShare.from_bytes(g, payload)
            self.shares[share.index] = share.s
            self._maybe_finish(net)

    def _maybe_sign(self, net: SimNetwork) -> None:
        if len(self.commits) < len(self.peers) or self.index in self.shares:
            return
        g = net.group
        run = self.run
        self.R = g.product(self.commits[j] for j in self.peers)
        self.c = challenge(g, self.R, run.agg.apk, run.message, run.signers, run.ctr)
        s_i = (self.w + self.c * self.packet.secret) % g.order
        self.shares[self.index] = s_i
        payload = SignatureShare(self.index, s_i, run.ctr).to_bytes(g)
        for j in self.peers:
            if j != self.index:
                net.send(self.name, signer_name(j), wire.SHARE, payload)
        self._maybe_finish(net)

    def _maybe_finish(self, net: SimNetwork) -> None:
        if len(self.shares) < len(self.peers) or self.R is None or self.index in self.run.finished:
            return
        g = net.group
        s = sum(self.shares.values()) % g.order
        run = self.run
        sig = MultiSignature(self.R, self.c, s, run.ctr, run.signers.indices,
                             dict(run.agg.coefficients))
        run.finished[self.index] = (net.now, sig)

    def _check(self, net: SimNetwork) -> None:
        if self.index not in self.run.finished:
            self.run.stalled.add(self.index)


@dataclass
class BaselineRun:
    message: bytes
    ctr: int
    signers: SignerSet
    agg: AggregatedKey
    keys: dict
    finished: dict = field(default_factory=dict)
    stalled: set = field(default_factory=set)


def run_baseline_interactive(n: int, seed: int = 0, faults: FaultPlan = NO_FAULTS,
                             group: Group = PROD, message: bytes = DEFAULT_MESSAGE, ctr: int = 1):
    """Interactive Schnorr multi-signature with unweighted key aggregation.

    Returns ``(signature or exception, transcript)``; an offline signer
    aborts the whole session.
    """
    if n < 2:
        raise InvalidParams("the interactive baseline needs at least two signers")
    stream = _streams(seed)
    _, packets, _ = setup(128, n, group, stream("setup"))
    keys = public_keys(packets)
    signers = SignerSet.by_keys(keys)
    run = BaselineRun(message, ctr, signers, naive_key_agg(keys), keys)
    net = SimNetwork(group, faults, stream("latency"), stream("faults"))
    nodes = []
    for p in packets:
        node = BaselineSigner(p, signers.indices, run, stream(f"signer{p.index}"))
        net.register(node.name, node)
        if p.index in faults.offline_signers:
            net.down.add(node.name)
        else:
            nodes.append(node)
    for node in nodes:
        node.start(net)
    net.run()

    online = [node.index for node in nodes]
    if run.stalled or any(i not in run.finished for i in online):
        exc = ProtocolAborted(f"interactive session stalled waiting for {sorted(faults.offline_signers)}")
        exc.transcript = net.transcript
        net.transcript.wall_ms = net.now
        return exc, net.transcript
    net.transcript.wall_ms = max(t for t, _ in run.finished.values())
    sig = run.finished[online[0]][1]
    if not verify(message, sig, keys, naive=True):
        exc = ProtocolAborted("baseline signature rejected")
        exc.transcript = net.transcript
        return exc, net.transcript
    return sig, net.transcript


def pitpm_message_count(n: int, fallback: bool = False) -> int:
    return 5 * n if fallback else 3 * n


def baseline_message_count(n: int) -> int:
    return 2 * n * (n - 1)
