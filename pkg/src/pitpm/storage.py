"""On-disk formats: public parameters, signer packets, the aggregator vault, DKG transcripts.

Signer packets and threshold shares have a plaintext form (``name hex``
pairs, one per line) and an encrypted form (AES-256-GCM under a key that is
handed to the signer out of band).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .aggregator import Aggregator
from .codec import Reader
from .errors import AuthFailure, DecodeError
from .group import Group, get_group, group_name
from .keyset import CounterStore, PublicParams, SignerPacket
from .multisig import CommitmentBundle
from .threshold import Complaint, DealerOutput, ThresholdParams, ThresholdShare
from .wire import frame

PP_MAGIC = b"PITPM1"
TP_MAGIC = b"PITPMT1"
ENC_MAGIC = b"PITPMX1"
DKG_MAGIC = b"PITPMDKG1"
VAULT_FORMAT = "pitpm-vault/1"
PACKET_HEADER = "pitpm-packet v1"
SHARE_HEADER = "pitpm-share v1"


# --- public parameters ----------------------------------------------------------

def encode_params(pp: PublicParams) -> bytes:
    atype = pp.aggregator_type.encode()
    return b"".join([
        PP_MAGIC,
        bytes([pp.group.tag]),
        pp.n.to_bytes(4, "big"),
        pp.gctr.to_bytes(8, "big"),
        len(pp.aggregator_id).to_bytes(2, "big"), pp.aggregator_id,
        bytes([len(atype)]), atype,
        pp.seed_agg_fingerprint,
    ])


def decode_params(data: bytes) -> PublicParams:
    r = Reader(data)
    if r.take(len(PP_MAGIC)) != PP_MAGIC:
        raise DecodeError("not a PITPM1 parameter file")
    group = get_group(r.take(1)[0])
    n = r.int(4)
    gctr = r.int(8)
    aid = r.take(r.int(2))
    atype = r.take(r.int(1)).decode()
    fp = r.take(32)
    r.end()
    return PublicParams(group, n, gctr, aid, fp, atype)


def encode_threshold_params(tp: ThresholdParams) -> bytes:
    parts = [TP_MAGIC, bytes([tp.group.tag]), tp.t.to_bytes(2, "big"), tp.n.to_bytes(2, "big"),
             tp.mpk.encode()]
    parts += [tp.vks[k].encode() for k in range(1, tp.n + 1)]
    parts += [len(tp.aggregator_id).to_bytes(2, "big"), tp.aggregator_id]
    return b"".join(parts)


def decode_threshold_params(data: bytes) -> ThresholdParams:
    r = Reader(data)
    if r.take(len(TP_MAGIC)) != TP_MAGIC:
        raise DecodeError("not a threshold parameter file")
    group = get_group(r.take(1)[0])
    t, n = r.int(2), r.int(2)
    w = group.element_width
    mpk = group.decode(r.take(w))
    vks = {k: group.decode(r.take(w)) for k in range(1, n + 1)}
    aid = r.take(r.int(2))
    r.end()
    return ThresholdParams(group, mpk, t, n, vks, aid)


# --- packets ---------------------------------------------------------------------

def _lines(header: str, fields: list[tuple[str, bytes]], counters: CounterStore) -> bytes:
    out = [header] + [f"{name} {value.hex()}" for name, value in fields]
    out += [f"counter {d.hex()} {c:016x}" for d, c in counters.items()]
    return ("\n".join(out) + "\n").encode()


def _parse_lines(data: bytes, header: str) -> tuple[dict[str, bytes], CounterStore]:
    try:
        lines = data.decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise DecodeError("packet is not ASCII text") from None
    if not lines or lines[0].strip() != header:
        raise DecodeError(f"expected {header!r} header")
    fields, counters = {}, {}
    for n, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "counter" and len(parts) == 3:
                counters[bytes.fromhex(parts[1])] = int(parts[2], 16)
            elif len(parts) == 2:
                fields[parts[0]] = bytes.fromhex(parts[1])
            else:
                raise ValueError
        except ValueError:
            raise DecodeError(f"malformed line {n}") from None
    return fields, CounterStore(counters)


def _need(fields: dict, *names):
    missing = [n for n in names if n not in fields]
    if missing:
        raise DecodeError(f"missing field(s) {missing}")
    return [fields[n] for n in names]


def packet_to_text(p: SignerPacket) -> bytes:
    g = p.group
    return _lines(PACKET_HEADER, [
        ("group", bytes([g.tag])),
        ("index", p.index.to_bytes(2, "big")),
        ("secret", g.encode_scalar(p.secret)),
        ("public", p.public.encode()),
        ("seed", p.seed),
        ("mac_key", p.mac_key),
        ("epoch", p.epoch.to_bytes(8, "big")),
    ], p.counters)


def packet_from_text(data: bytes) -> SignerPacket:
    fields, counters = _parse_lines(data, PACKET_HEADER)
    tag, index, secret, public, seed, mac_key, epoch = _need(
        fields, "group", "index", "secret", "public", "seed", "mac_key", "epoch")
    g = get_group(tag[0])
    return SignerPacket(g, int.from_bytes(index, "big"), g.decode_scalar(secret), g.decode(public),
                        seed, mac_key, counters, int.from_bytes(epoch, "big"))


def share_to_text(s: ThresholdShare) -> bytes:
    g = s.group
    return _lines(SHARE_HEADER, [
        ("group", bytes([g.tag])),
        ("index", s.index.to_bytes(2, "big")),
        ("x", g.encode_scalar(s.x)),
        ("w", g.encode_scalar(s.w)),
        ("seed", s.seed),
        ("vk", s.vk.encode()),
        ("mac_key", s.mac_key),
        ("epoch", s.epoch.to_bytes(8, "big")),
    ], s.counters)


def share_from_text(data: bytes) -> ThresholdShare:
    fields, counters = _parse_lines(data, SHARE_HEADER)
    tag, index, x, w, seed, vk, mac_key, epoch = _need(
        fields, "group", "index", "x", "w", "seed", "vk", "mac_key", "epoch")
    g = get_group(tag[0])
    share = ThresholdShare(g, int.from_bytes(index, "big"), g.decode_scalar(x), g.decode_scalar(w),
                           seed, g.decode(vk), mac_key, counters, int.from_bytes(epoch, "big"))
    if g.base_exp(share.x) != share.vk:
        raise DecodeError("share does not match its verification key")
    return share


def encrypt(key: bytes, plaintext: bytes, nonce: bytes | None = None) -> bytes:
    nonce = nonce or os.urandom(12)
    return ENC_MAGIC + nonce + AESGCM(key).encrypt(nonce, plaintext, ENC_MAGIC)


def decrypt(key: bytes, blob: bytes) -> bytes:
    if not blob.startswith(ENC_MAGIC):
        raise DecodeError("not an encrypted packet")
    body = blob[len(ENC_MAGIC):]
    try:
        return AESGCM(key).decrypt(body[:12], body[12:], ENC_MAGIC)
    except (InvalidTag, ValueError):
        raise AuthFailure("packet key does not open this file") from None


def save_secret_file(path, text: bytes, key: bytes | None) -> None:
    data = encrypt(key, text) if key is not None else text
    _atomic_write(Path(path), data)


def load_secret_file(path, key: bytes | None) -> bytes:
    data = Path(path).read_bytes()
    if data.startswith(ENC_MAGIC):
        if key is None:
            raise AuthFailure(f"{path} is encrypted; a packet key is required")
        return decrypt(key, data)
    return data


def save_packet(path, packet: SignerPacket, key: bytes | None = None) -> None:
    save_secret_file(path, packet_to_text(packet), key)


def load_packet(path, key: bytes | None = None) -> SignerPacket:
    return packet_from_text(load_secret_file(path, key))


def save_share(path, share: ThresholdShare, key: bytes | None = None) -> None:
    save_secret_file(path, share_to_text(share), key)


def load_share(path, key: bytes | None = None) -> ThresholdShare:
    return share_from_text(load_secret_file(path, key))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- key tables ------------------------------------------------------------------

def keys_to_json(group: Group, keys: dict) -> str:
    return json.dumps({
        "group": group_name(group),
        "keys": {str(i): keys[i].encode().hex() for i in sorted(keys)},
    }, indent=2)


def keys_from_json(text: str) -> tuple[Group, dict]:
    try:
        doc = json.loads(text)
        group = get_group(doc["group"])
        keys = {int(i): group.decode(bytes.fromhex(v)) for i, v in doc["keys"].items()}
    except (KeyError, ValueError, TypeError) as exc:
        raise DecodeError(f"bad key file: {exc}") from None
    return group, keys


# --- vault -----------------------------------------------------------------------

def _hexmap(m: dict) -> dict:
    return {str(k): v.hex() for k, v in sorted(m.items())}


def vault_dumps(agg: Aggregator) -> str:
    snap = agg.snapshot()
    g = snap["group"]
    tp = snap["threshold"]
    doc = {
        "format": VAULT_FORMAT,
        "group": group_name(g),
        "epoch": snap["epoch"],
        "aggregator_id": snap["aggregator_id"].hex(),
        "aggregator_type": snap["aggregator_type"],
        "seeds": _hexmap(snap["seeds"]),
        "mac_keys": _hexmap(snap["mac_keys"]),
        "seed_agg": snap["seed_agg"].hex() if snap["seed_agg"] is not None else None,
        "operator_key": snap["operator_key"].hex(),
        "public_keys": {str(i): pk.encode().hex() for i, pk in sorted(snap["public_keys"].items())},
        "threshold": encode_threshold_params(tp).hex() if tp is not None else None,
        "served": {d.hex(): c for d, c in snap["served"].items()},
        "cache": {d.hex(): b.to_bytes().hex() for d, b in snap["cache"].items()},
    }
    return json.dumps(doc, indent=2)


def vault_loads(text: str) -> Aggregator:
    try:
        doc = json.loads(text)
        if doc.get("format") != VAULT_FORMAT:
            raise DecodeError("unknown vault format")
        g = get_group(doc["group"])
        unhex = lambda m: {int(k): bytes.fromhex(v) for k, v in m.items()}
        snap = {
            "group": g,
            "seeds": unhex(doc["seeds"]),
            "mac_keys": unhex(doc["mac_keys"]),
            "public_keys": {int(i): g.decode(bytes.fromhex(v)) for i, v in doc["public_keys"].items()},
            "seed_agg": bytes.fromhex(doc["seed_agg"]) if doc["seed_agg"] else None,
            "threshold": (decode_threshold_params(bytes.fromhex(doc["threshold"]))
                          if doc["threshold"] else None),
            "operator_key": bytes.fromhex(doc["operator_key"]),
            "aggregator_id": bytes.fromhex(doc["aggregator_id"]),
            "aggregator_type": doc["aggregator_type"],
            "epoch": int(doc["epoch"]),
            "served": {bytes.fromhex(d): int(c) for d, c in doc["served"].items()},
            "cache": {bytes.fromhex(d): CommitmentBundle.from_bytes(g, bytes.fromhex(b))
                      for d, b in doc["cache"].items()},
        }
    except (KeyError, ValueError, TypeError) as exc:
        raise DecodeError(f"bad vault: {exc}") from None
    return Aggregator.restore(snap)


def save_vault(path, agg: Aggregator) -> None:
    _atomic_write(Path(path), vault_dumps(agg).encode())


def load_vault(path) -> Aggregator:
    return vault_loads(Path(path).read_text())


# --- DKG transcript --------------------------------------------------------------

REC_C, REC_D, REC_SHARE, REC_COMPLAINT = 1, 2, 3, 4


def _record(kind: int, dealer: int, recipient: int, payload: bytes) -> bytes:
    return (bytes([kind]) + dealer.to_bytes(2, "big") + recipient.to_bytes(2, "big")
            + len(payload).to_bytes(4, "big") + payload)


def dkg_transcript(group: Group, t: int, n: int, deals, complaints=()) -> bytes:
    """Every broadcast row, private share and complaint as framed records."""
    out = [DKG_MAGIC, bytes([group.tag]), t.to_bytes(2, "big"), n.to_bytes(2, "big")]
    for d in sorted(deals, key=lambda d: d.dealer):
        out.append(_record(REC_C, d.dealer, 0, b"".join(c.encode() for c in d.C)))
        out.append(_record(REC_D, d.dealer, 0, b"".join(c.encode() for c in d.D)))
        for k in sorted(d.shares):
            s, r = d.shares[k]
            out.append(_record(REC_SHARE, d.dealer, k, group.encode_scalar(s) + group.encode_scalar(r)))
    for c in complaints:
        out.append(_record(REC_COMPLAINT, c.dealer, c.accuser, c.reason.encode()))
    return b"".join(out)


def replay_dkg_transcript(data: bytes):
    """Parse a transcript back into ``(group, t, n, deals, complaints)``."""
    r = Reader(data)
    if r.take(len(DKG_MAGIC)) != DKG_MAGIC:
        raise DecodeError("not a DKG transcript")
    group = get_group(r.take(1)[0])
    t, n = r.int(2), r.int(2)
    w, sw = group.element_width, group.scalar_width
    rows: dict[int, dict] = {}
    complaints = []
    while r.pos < len(r.data):
        kind, dealer, recipient = r.take(1)[0], r.int(2), r.int(2)
        payload = r.take(r.int(4))
        entry = rows.setdefault(dealer, {"C": (), "D": (), "shares": {}})
        if kind in (REC_C, REC_D):
            if len(payload) != w * (t + 1):
                raise DecodeError("commitment row has the wrong length")
            els = tuple(group.decode(payload[j * w:(j + 1) * w]) for j in range(t + 1))
            entry["C" if kind == REC_C else "D"] = els
        elif kind == REC_SHARE:
            if len(payload) != 2 * sw:
                raise DecodeError("share record has the wrong length")
            entry["shares"][recipient] = (group.decode_scalar(payload[:sw]),
                                          group.decode_scalar(payload[sw:]))
        elif kind == REC_COMPLAINT:
            complaints.append(Complaint(recipient, dealer, payload.decode()))
        else:
            raise DecodeError(f"unknown record type {kind}")
    deals = [DealerOutput(i, e["C"], e["D"], e["shares"]) for i, e in sorted(rows.items())
             if e["C"]]
    return group, t, n, deals, complaints


# --- share files (signer output for the combiner) -----------------------------------

def read_frames(data: bytes) -> list[tuple[int, bytes]]:
    r = Reader(data)
    out = []
    while r.pos < len(r.data):
        length = r.int(4)
        body = r.take(length)
        if not body:
            raise DecodeError("empty frame")
        out.append((body[0], body[1:]))
    return out


def write_frames(frames) -> bytes:
    return b"".join(frame(t, p) for t, p in frames)
