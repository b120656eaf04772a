"""``pitpm`` command-line interface."""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

from . import storage, wire
from .aggregator import Aggregator
from .bench import bench_csv, kernel_benchmark
from .errors import DecodeError, PiTPMError, ShareSetInvalid
from .group import GROUPS, KERNEL, random_bytes
from .keyset import CounterStore, SignerSet, setup
from .multisig import (
    MULTISIG,
    THRESHOLD,
    CommitmentBundle,
    MultiSignature,
    SignatureShare,
    challenge,
    combine,
    local_sign,
    verify,
    verify_share,
)
from .prf import SEED_LEN, message_digest
from .service import AggregatorServer, parse_listen
from .threshold import reconstruct, run_dkg, threshold_local_sign, verify_threshold
from .wire import AggregatorClient, CommitmentRequest, refresh_mac

log = logging.getLogger("pitpm")


def _indices(text: str) -> tuple[int, ...]:
    try:
        out = tuple(sorted({int(v) for v in text.split(",") if v.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated indices, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty signer set")
    return out


def _rng(seed):
    return random.Random(seed) if seed is not None else None


def _key_path(secret_path: Path) -> Path:
    return secret_path.with_suffix(".key")


def _write_secret(path: Path, text: bytes, plaintext: bool, rng) -> None:
    if plaintext:
        storage.save_secret_file(path, text, None)
        return
    key = random_bytes(32, rng)
    _key_path(path).write_text(key.hex() + "\n")
    storage.save_secret_file(path, text, key)


def _packet_key(path: Path, explicit: str | None) -> bytes | None:
    if explicit:
        return bytes.fromhex(Path(explicit).read_text().strip())
    env = os.environ.get("PITPM_PACKET_KEY")
    if env:
        return bytes.fromhex(env.strip())
    sibling = _key_path(path)
    if sibling.exists():
        return bytes.fromhex(sibling.read_text().strip())
    return None


def _vault_path(arg: str | None) -> str | None:
    return os.environ.get("PITPM_VAULT") or arg


# --- setup / serve ----------------------------------------------------------------

def cmd_setup(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    group = GROUPS[args.group]
    rng = _rng(args.seed)
    params, packets, secrets = setup(args.lam, args.n, group, rng,
                                     aggregator_id=args.aggregator_id.encode(),
                                     aggregator_type=args.aggregator_type)
    (out / "pp.bin").write_bytes(storage.encode_params(params))
    storage.save_vault(out / "vault.bin", Aggregator.from_setup(params, secrets))
    keys = {p.index: p.public for p in packets}
    (out / "keys.json").write_text(storage.keys_to_json(group, keys))
    for p in packets:
        _write_secret(out / f"signer{p.index}.bin", storage.packet_to_text(p), args.plaintext, rng)
    print(f"wrote parameters, vault, keys and {len(packets)} signer packets to {out}")
    return 0


def cmd_serve(args) -> int:
    vault = _vault_path(args.seeds)
    if vault is None:
        print("error: no vault given (--seeds or PITPM_VAULT)", file=sys.stderr)
        return 2
    agg = storage.load_vault(vault)
    if args.params:
        pp = storage.decode_params(Path(args.params).read_bytes())
        if pp.group is not agg.group:
            print("error: parameter file and vault use different groups", file=sys.stderr)
            return 1
    host, port = parse_listen(args.listen)
    server = AggregatorServer(agg, host, port)
    print(f"aggregator listening on {host}:{server.address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        storage.save_vault(vault, agg)
    return 0


def _fetch_bundle(args, req: CommitmentRequest, group) -> CommitmentBundle:
    if args.aggregator:
        host, port = parse_listen(args.aggregator)
        with AggregatorClient(host, port, group) as client:
            return client.request_commitment(req)
    vault = _vault_path(args.vault)
    if vault is None:
        raise PiTPMError("give --aggregator host:port or --vault (or PITPM_VAULT)")
    agg = storage.load_vault(vault)
    bundle = agg.serve_commitment(req)
    storage.save_vault(vault, agg)
    return bundle


def _default_ctr(counters: CounterStore, signers: SignerSet, ctr):
    if ctr is not None:
        return ctr
    last = counters.last(signers.digest)
    return 1 if last is None else last + 1


# --- multi-signature ----------------------------------------------------------------

def _load_keys(path) -> tuple:
    return storage.keys_from_json(Path(path).read_text())


def cmd_sign(args) -> int:
    packet_path = Path(args.packet)
    key = _packet_key(packet_path, args.packet_key)
    packet = storage.load_packet(packet_path, key)
    pp = storage.decode_params(Path(args.params).read_bytes())
    keys_path = args.keys or Path(args.params).with_name("keys.json")
    group, keys = _load_keys(keys_path)
    if group is not packet.group or group is not pp.group:
        raise PiTPMError("packet, parameters and key file use different groups")
    signers = SignerSet.by_keys({i: keys[i] for i in args.set})
    message = Path(args.msg).read_bytes()
    ctr = _default_ctr(packet.counters, signers, args.ctr)
    req = CommitmentRequest.create(MULTISIG, message, ctr, args.set, packet.index, packet.mac_key)
    bundle = _fetch_bundle(args, req, group)
    if bundle.agg is None:
        raise PiTPMError("aggregator sent no aggregated key")
    share = local_sign(packet, message, bundle, bundle.agg, signers)
    storage.save_packet(packet_path, packet, key)
    out = args.out or f"share{packet.index}.bin"
    Path(out).write_bytes(storage.write_frames([
        (wire.SHARE, share.to_bytes(group)), (wire.BUNDLE, bundle.to_bytes())]))
    print(f"signer {packet.index}: share for ctr {ctr} written to {out}")
    return 0


def _read_share_files(paths, group):
    shares, bundles = [], []
    for path in paths:
        frames = dict(storage.read_frames(Path(path).read_bytes()))
        if wire.SHARE not in frames or wire.BUNDLE not in frames:
            raise DecodeError(f"{path} is not a share file")
        shares.append(SignatureShare.from_bytes(group, frames[wire.SHARE]))
        bundles.append(CommitmentBundle.from_bytes(group, frames[wire.BUNDLE]))
    # every member received the same bundle apart from recipient and MAC
    core = {b.for_recipient(0, None).to_bytes() for b in bundles}
    if len(core) != 1:
        raise ShareSetInvalid("share files were produced from different bundles")
    return shares, bundles[0]


def cmd_combine(args) -> int:
    group, keys = _load_keys(args.keys)
    message = Path(args.msg).read_bytes()
    shares, bundle = _read_share_files(args.shares, group)
    signers = SignerSet.by_keys({i: keys[i] for i in bundle.indices})
    agg = bundle.agg
    c = challenge(group, bundle.R, agg.apk, message, signers, bundle.ctr)
    bad = [sh.index for sh in shares
           if not verify_share(group, sh, bundle.commitment_of(sh.index), keys[sh.index],
                               agg.coefficients[sh.index], c)]
    if bad:
        raise ShareSetInvalid(f"invalid share(s) from signer(s) {bad}")
    sig = combine(shares, bundle, agg, message, signers)
    Path(args.out).write_bytes(sig.to_bytes())
    print(f"signature over {len(shares)} shares written to {args.out}")
    return 0


def cmd_verify(args) -> int:
    message = Path(args.msg).read_bytes()
    data = Path(args.sig).read_bytes()
    state = None
    if args.state and Path(args.state).exists():
        doc = json.loads(Path(args.state).read_text())
        state = CounterStore({bytes.fromhex(k): v for k, v in doc.items()})
    elif args.state:
        state = CounterStore()
    if args.threshold_params:
        tp = storage.decode_threshold_params(Path(args.threshold_params).read_bytes())
        sig = MultiSignature.from_bytes(tp.group, data)
        verdict = verify_threshold(message, sig, tp, state)
    else:
        group, keys = _load_keys(args.keys)
        sig = MultiSignature.from_bytes(group, data)
        verdict = verify(message, sig, keys, state)
    if state is not None and verdict:
        Path(args.state).write_text(json.dumps({d.hex(): c for d, c in state.items()}))
    if verdict:
        print("valid")
        return 0
    print(f"invalid: {verdict.reason}")
    return 1


# --- threshold -------------------------------------------------------------------

def cmd_dkg(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    group = GROUPS[args.group]
    rng = _rng(args.seed)
    tp, shares, deals = run_dkg(group, args.t, args.n, rng)
    (out / "params.bin").write_bytes(storage.encode_threshold_params(tp))
    (out / "transcript.bin").write_bytes(storage.dkg_transcript(group, args.t, args.n, deals))
    storage.save_vault(out / "vault.bin", Aggregator.from_dkg(tp, shares, rng=rng))
    for s in shares:
        _write_secret(out / f"{s.index}.bin", storage.share_to_text(s), args.plaintext, rng)
    print(f"(t={args.t}, n={args.n}) key shares, parameters, vault and transcript written to {out}")
    return 0


def cmd_threshold_sign(args) -> int:
    share_path = Path(args.share)
    key = _packet_key(share_path, args.packet_key)
    share = storage.load_share(share_path, key)
    params_path = Path(args.params) if args.params else share_path.with_name("params.bin")
    tp = storage.decode_threshold_params(params_path.read_bytes())
    if args.vault is None and args.aggregator is None:
        args.vault = str(params_path.with_name("vault.bin"))
    signers = tp.signer_set(args.set)
    message = Path(args.msg).read_bytes()
    ctr = _default_ctr(share.counters, signers, args.ctr)
    req = CommitmentRequest.create(THRESHOLD, message, ctr, args.set, share.index, share.mac_key)
    bundle = _fetch_bundle(args, req, tp.group)
    sig_share = threshold_local_sign(share, message, bundle, tp, signers)
    storage.save_share(share_path, share, key)
    out = args.out or f"tshare{share.index}.bin"
    Path(out).write_bytes(storage.write_frames([
        (wire.SHARE, sig_share.to_bytes(tp.group)), (wire.BUNDLE, bundle.to_bytes())]))
    print(f"party {share.index}: share for ctr {ctr} written to {out}")
    return 0


def cmd_threshold_combine(args) -> int:
    tp = storage.decode_threshold_params(Path(args.params).read_bytes())
    message = Path(args.msg).read_bytes()
    shares, bundle = _read_share_files(args.shares, tp.group)
    signers = tp.signer_set(bundle.indices)
    vault = _vault_path(args.vault)
    if vault:
        agg = storage.load_vault(vault)
        sig = agg.combine_threshold(shares, message, signers, bundle.ctr)
    else:
        sig = reconstruct(shares, bundle, tp, message, signers)
    if not verify_threshold(message, sig, tp):
        raise PiTPMError("combined threshold signature does not verify")
    Path(args.out).write_bytes(sig.to_bytes())
    print(f"threshold signature written to {args.out}")
    return 0


def cmd_refresh(args) -> int:
    vault = _vault_path(args.seeds)
    agg = storage.load_vault(vault)
    token = bytes.fromhex(args.token) if args.token else random_bytes(SEED_LEN)
    epoch = agg.epoch + 1
    tag = refresh_mac(agg.snapshot()["operator_key"], epoch, token)
    agg.refresh_epoch(token, tag, epoch)
    storage.save_vault(vault, agg)
    for p in args.packets:
        path = Path(p)
        key = _packet_key(path, None)
        text = storage.load_secret_file(path, key)
        if text.startswith(storage.SHARE_HEADER.encode()):
            s = storage.share_from_text(text)
            s.refresh(epoch, token)
            storage.save_share(path, s, key)
        else:
            s = storage.packet_from_text(text)
            s.refresh(epoch, token)
            storage.save_packet(path, s, key)
    print(f"epoch {epoch}; token {token.hex()}; refreshed {len(args.packets)} signer file(s)")
    return 0


# --- benchmarks --------------------------------------------------------------------

def cmd_bench(args) -> int:
    text = bench_csv(Path(args.config).read_text())
    if args.out:
        Path(args.out).write_text(text)
        print(f"results written to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench_kernel(args) -> int:
    res = kernel_benchmark(args.iterations)
    print(f"active kernel: {KERNEL}")
    for name in ("compiled", "python"):
        if name in res:
            print(f"{name:9s} {res[name]:.4f} ms per scalar multiplication")
    if "speedup" in res:
        print(f"speedup   {res['speedup']:.2f}x")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pitpm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup", help="generate keys, seeds and the aggregator vault")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--group", choices=sorted(GROUPS), default="prod")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int, help="deterministic run (testing only)")
    p.add_argument("--lam", type=int, default=128)
    p.add_argument("--aggregator-id", default="pitpm-aggregator")
    p.add_argument("--aggregator-type", choices=["TPM", "TEE", "MPC"], default="TPM")
    p.add_argument("--plaintext", action="store_true", help="write unencrypted signer packets")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("serve", help="run the aggregator TCP service")
    p.add_argument("--params")
    p.add_argument("--seeds", help="vault file (PITPM_VAULT overrides)")
    p.add_argument("--listen", default="127.0.0.1:7744")
    p.set_defaults(func=cmd_serve)

    def session_opts(p):
        p.add_argument("--msg", required=True)
        p.add_argument("--set", type=_indices, required=True)
        p.add_argument("--ctr", type=int)
        p.add_argument("--aggregator", help="host:port of a running aggregator")
        p.add_argument("--vault", help="serve the commitment in-process from this vault")
        p.add_argument("--packet-key", help="file holding the hex packet key")
        p.add_argument("--out")

    p = sub.add_parser("sign", help="produce a multi-signature share")
    p.add_argument("--params", required=True)
    p.add_argument("--packet", required=True)
    p.add_argument("--keys")
    session_opts(p)
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("combine", help="combine multi-signature shares")
    p.add_argument("--keys", required=True)
    p.add_argument("--msg", required=True)
    p.add_argument("--shares", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("verify", help="verify a signature")
    p.add_argument("--sig", required=True)
    p.add_argument("--msg", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--keys")
    g.add_argument("--threshold-params")
    p.add_argument("--state", help="JSON verifier counter state (read and updated)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dkg", help="run the distributed key generation")
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group", choices=sorted(GROUPS), default="prod")
    p.add_argument("--seed", type=int)
    p.add_argument("--plaintext", action="store_true")
    p.set_defaults(func=cmd_dkg)

    p = sub.add_parser("threshold-sign", help="produce a threshold signature share")
    p.add_argument("--share", required=True)
    p.add_argument("--params")
    session_opts(p)
    p.set_defaults(func=cmd_threshold_sign)

    p = sub.add_parser("threshold-combine", help="reconstruct a threshold signature")
    p.add_argument("--params", required=True)
    p.add_argument("--msg", required=True)
    p.add_argument("--shares", nargs="+", required=True)
    p.add_argument("--vault", help="lets the aggregator cover missing or invalid shares")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_threshold_combine)

    p = sub.add_parser("refresh", help="advance the seed epoch in the vault and signer files")
    p.add_argument("--seeds", required=True)
    p.add_argument("--token", help="hex refresh token (random if omitted)")
    p.add_argument("--packets", nargs="*", default=[])
    p.set_defaults(func=cmd_refresh)

    p = sub.add_parser("bench", help="message-complexity benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bench-kernel", help="compare compiled and pure-Python curve kernels")
    p.add_argument("--iterations", type=int, default=200)
    p.set_defaults(func=cmd_bench_kernel)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PiTPMError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
