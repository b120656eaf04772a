"""Length-prefixed frames and the commitment-request message.

Frame layout: ``length (4 bytes BE) || type (1 byte) || payload`` where
``length`` counts the type byte plus the payload.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, replace

from . import errors
from .codec import Reader
from .errors import DecodeError
from .group import Group
from .multisig import CommitmentBundle
from .prf import MAC_LEN, mac, mac_ok, message_digest, u64

REQUEST = 0x01
BUNDLE = 0x02
ERROR = 0x03
REFRESH = 0x04
ATTESTATION = 0x05
# frames below are exchanged between signers and the combiner/coordinator
SHARE = 0x06
SOLICIT = 0x07
COMMIT = 0x08

FRAME_TYPES = {
    REQUEST: "request",
    BUNDLE: "bundle",
    ERROR: "error",
    REFRESH: "refresh",
    ATTESTATION: "attestation",
    SHARE: "share",
    SOLICIT: "solicit",
    COMMIT: "commit",
}

MAX_FRAME = 1 << 24

ERROR_CODES = {
    errors.AuthFailure: 1,
    errors.UnknownSigner: 2,
    errors.ThresholdUnmet: 3,
    errors.CounterReplay: 4,
    errors.DecodeError: 5,
    errors.AggregatorUnavailable: 6,
    errors.NotAMember: 7,
    errors.InvalidParams: 8,
}
_CODE_TO_ERROR = {v: k for k, v in ERROR_CODES.items()}


def frame(msg_type: int, payload: bytes) -> bytes:
    return struct.pack(">IB", len(payload) + 1, msg_type) + payload


def parse_frame(data: bytes) -> tuple[int, bytes]:
    if len(data) < 5:
        raise DecodeError("short frame")
    length, msg_type = struct.unpack(">IB", data[:5])
    if length != len(data) - 4 or length < 1:
        raise DecodeError("frame length mismatch")
    return msg_type, data[5:]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = struct.unpack(">I", _recv_exact(sock, 4))
    if not 1 <= length <= MAX_FRAME:
        raise DecodeError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    return body[0], body[1:]


def encode_error(exc: Exception) -> bytes:
    code = next((c for cls, c in ERROR_CODES.items() if isinstance(exc, cls)), 0)
    return bytes([code]) + str(exc).encode()


def decode_error(payload: bytes) -> errors.PiTPMError:
    if not payload:
        return errors.PiTPMError("empty error frame")
    cls = _CODE_TO_ERROR.get(payload[0], errors.PiTPMError)
    return cls(payload[1:].decode("utf-8", "replace"))


@dataclass(frozen=True)
class CommitmentRequest:
    """``(M digest, ctr, signer set, requester)``, MAC'd with the requester's key."""

    mode: int
    message_digest: bytes
    ctr: int
    signers: tuple[int, ...]
    requester: int
    mac: bytes = b""

    def body(self) -> bytes:
        return b"".join([
            bytes([self.mode]),
            self.message_digest,
            u64(self.ctr),
            self.requester.to_bytes(2, "big"),
            len(self.signers).to_bytes(2, "big"),
            b"".join(i.to_bytes(2, "big") for i in self.signers),
        ])

    def to_bytes(self) -> bytes:
        return self.body() + self.mac

    @classmethod
    def from_bytes(cls, data: bytes) -> "CommitmentRequest":
        r = Reader(data)
        mode = r.take(1)[0]
        mdigest = r.take(32)
        ctr = r.int(8)
        requester = r.int(2)
        signers = tuple(r.int(2) for _ in range(r.int(2)))
        tag = r.take(MAC_LEN)
        r.end()
        return cls(mode, mdigest, ctr, signers, requester, tag)

    @classmethod
    def create(cls, mode: int, message: bytes, ctr: int, signers, requester: int,
               mac_key: bytes) -> "CommitmentRequest":
        req = cls(mode, message_digest(message), ctr, tuple(sorted(signers)), requester)
        return replace(req, mac=mac(mac_key, req.body()))

    def authentic(self, mac_key: bytes) -> bool:
        return mac_ok(mac_key, self.body(), self.mac)


def refresh_mac(operator_key: bytes, epoch: int, token: bytes) -> bytes:
    return mac(operator_key, b"refresh" + u64(epoch) + token)


def refresh_payload(operator_key: bytes, epoch: int, token: bytes) -> bytes:
    body = u64(epoch) + len(token).to_bytes(2, "big") + token
    return body + refresh_mac(operator_key, epoch, token)


def parse_refresh(payload: bytes) -> tuple[int, bytes, bytes]:
    """Returns ``(epoch, token, operator_mac)``."""
    r = Reader(payload)
    epoch = r.int(8)
    token = r.take(r.int(2))
    tag = r.take(MAC_LEN)
    r.end()
    return epoch, token, tag


class AggregatorClient:
    """Blocking client for the TCP aggregator service."""

    def __init__(self, host: str, port: int, group: Group, timeout: float = 10.0):
        self.group = group
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def call(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        self.sock.sendall(frame(msg_type, payload))
        rtype, rpayload = read_frame(self.sock)
        if rtype == ERROR:
            raise decode_error(rpayload)
        return rtype, rpayload

    def request_commitment(self, req: CommitmentRequest):
        rtype, payload = self.call(REQUEST, req.to_bytes())
        if rtype != BUNDLE:
            raise DecodeError(f"unexpected reply type {rtype}")
        return CommitmentBundle.from_bytes(self.group, payload)

    def refresh(self, operator_key: bytes, epoch: int, token: bytes) -> int:
        _, payload = self.call(REFRESH, refresh_payload(operator_key, epoch, token))
        return int.from_bytes(payload, "big")

    def attest(self) -> bytes:
        return self.call(ATTESTATION, b"")[1]

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
