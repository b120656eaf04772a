import random
import threading
from dataclasses import replace

import pytest

from helpers import deployment, keys_of, multisig_session, request, threshold_deployment
from pitpm import aggregator as aggregator_mod
from pitpm import multisig, wire
from pitpm.aggregator import (
    Aggregator,
    fallback_coordinate,
    parse_quote,
    tamper_entry,
)
from pitpm.errors import (
    AggregatorTampering,
    AggregatorUnavailable,
    AuthFailure,
    CounterReplay,
    FallbackIncomplete,
    NotAMember,
    ThresholdUnmet,
    UnknownSigner,
)
from pitpm.group import PROD, TEST
from pitpm.keyset import setup
from pitpm.multisig import MULTISIG, THRESHOLD, combine, fallback_commit, local_sign, verify
from pitpm.service import AggregatorServer, parse_listen
from pitpm.threshold import weighted_commitment

MSG = b"aggregator test"


def test_serve_worked_vector(monkeypatch):
    forced = {1: 7, 2: 2}
    monkeypatch.setattr(aggregator_mod, "derive_nonce", lambda g, seed, md, ctr, s: forced[seed[0]])
    seeds = {1: b"\x01" * 32, 2: b"\x02" * 32}
    keys = {1: b"\x11" * 32, 2: b"\x12" * 32}
    agg = Aggregator(TEST, seeds, keys, public_keys={1: TEST.base_exp(3), 2: TEST.base_exp(5)},
                     seed_agg=b"\x03" * 32)
    req = wire.CommitmentRequest.create(MULTISIG, MSG, 1, [1, 2], 1, keys[1])
    bundle = agg.serve_commitment(req)
    assert bundle.R.value == 6
    assert [Rj.value for _, Rj in bundle.commitments] == [13, 4]
    # the same request again gets the cached answer
    assert agg.serve_commitment(req) == bundle
    assert agg.served_log == [(agg.signer_set(MULTISIG, [1, 2]).digest, 1)]


def test_request_rejections():
    agg, packets = deployment(TEST, 3, random.Random(1))
    good = request(packets[1], MSG, 1, [1, 2])
    with pytest.raises(AuthFailure):
        agg.serve_commitment(replace(good, mac=bytes(32)))
    with pytest.raises(AuthFailure):
        agg.serve_commitment(replace(good, requester=2))
    with pytest.raises(UnknownSigner):
        agg.serve_commitment(request(packets[1], MSG, 1, [1, 9]))
    with pytest.raises(NotAMember):
        agg.serve_commitment(request(packets[3], MSG, 1, [1, 2]))
    agg.available = False
    with pytest.raises(AggregatorUnavailable):
        agg.serve_commitment(good)


def test_counter_policing():
    agg, packets = deployment(TEST, 2, random.Random(2))
    agg.serve_commitment(request(packets[1], MSG, 5, [1, 2]))
    with pytest.raises(CounterReplay):
        agg.serve_commitment(request(packets[1], b"another", 5, [1, 2]))
    agg.serve_commitment(request(packets[2], MSG, 6, [1, 2]))
    with pytest.raises(CounterReplay):
        agg.serve_commitment(request(packets[1], MSG, 5, [1, 2]))
    with pytest.raises(CounterReplay):
        agg.serve_commitment(request(packets[1], MSG, 3, [1, 2]))
    # counters are per set
    agg.serve_commitment(request(packets[1], MSG, 1, [1]))


def test_threshold_unmet():
    agg, params, shares = threshold_deployment(TEST, 2, 5, random.Random(3))
    with pytest.raises(ThresholdUnmet):
        agg.serve_commitment(request(shares[1], MSG, 1, [1, 2], THRESHOLD))
    agg.serve_commitment(request(shares[1], MSG, 1, [1, 2, 3], THRESHOLD))


def test_bundle_transparency():
    r = random.Random(4)
    agg, packets = deployment(TEST, 5, r)
    tagg, params, shares = threshold_deployment(TEST, 2, 5, r)
    for ctr in range(1, 251):
        S = sorted(r.sample(range(1, 6), r.randint(1, 5)))
        b = agg.serve_commitment(request(packets[S[0]], MSG, ctr, S))
        assert b.R == TEST.product(Rj for _, Rj in b.commitments)
        T = sorted(r.sample(range(1, 6), r.randint(3, 5)))
        tb = tagg.serve_commitment(request(shares[T[0]], MSG, ctr, T, THRESHOLD))
        assert tb.R == weighted_commitment(TEST, tb.commitments)


def test_no_seed_material_on_the_wire():
    r = random.Random(5)
    params, packets, secrets = setup(128, 4, PROD, r)
    agg = Aggregator.from_setup(params, secrets)
    packets = {p.index: p for p in packets}
    secret_blobs = [secrets.master_seed, secrets.seed_agg, *secrets.seeds.values()]
    windows = {b[i:i + 8] for b in secret_blobs for i in range(len(b) - 7)}
    emitted = [agg.handle_frame(wire.ATTESTATION, b"")[1]]
    for ctr in range(1, 101):
        S = sorted(r.sample(range(1, 5), r.randint(1, 4)))
        signers = agg.signer_set(MULTISIG, S)
        key = agg.aggregated_key(signers)
        shares = []
        for i in S:
            req = request(packets[i], MSG, ctr, S)
            emitted.append(req.to_bytes())
            rtype, payload = agg.handle_frame(wire.REQUEST, req.to_bytes())
            assert rtype == wire.BUNDLE
            emitted.append(payload)
            bundle = multisig.CommitmentBundle.from_bytes(PROD, payload)
            sh = local_sign(packets[i], MSG, bundle, key, signers)
            emitted.append(sh.to_bytes(PROD))
            shares.append(sh)
        emitted.append(agg.combine_multisig(shares, MSG, signers).to_bytes())
        emitted.append(agg.handle_frame(wire.REQUEST, req.to_bytes()[:-1] + b"\x00")[1])
    for blob in emitted:
        for i in range(len(blob) - 7):
            assert blob[i:i + 8] not in windows


def test_tampering_detected_every_time():
    r = random.Random(6)
    agg, packets = deployment(PROD, 4, r)
    for trial in range(100):
        S = sorted(r.sample(range(1, 5), r.randint(2, 4)))
        victim = r.choice(S)
        signers = agg.signer_set(MULTISIG, S)
        agg.tamper = tamper_entry(victim, PROD.base_exp(r.randrange(1, PROD.order)))
        bundle = agg.serve_commitment(request(packets[victim], MSG, trial + 1, S))
        with pytest.raises(AggregatorTampering):
            local_sign(packets[victim], MSG, bundle, agg.aggregated_key(signers), signers)
    agg.tamper = None


def test_concurrent_counter_policing():
    agg, packets = deployment(TEST, 3, random.Random(7))
    S = [1, 2, 3]
    errors = []

    def worker(seed):
        r = random.Random(seed)
        for _ in range(200):
            i = r.choice(S)
            try:
                agg.serve_commitment(request(packets[i], b"m%d" % seed, r.randrange(1, 400), S))
            except CounterReplay:
                pass
            except Exception as exc:  # pragma: no cover - reported below
                errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    served = [ctr for _, ctr in agg.served_log]
    assert len(served) > 1
    assert all(a < b for a, b in zip(served, served[1:]))


def _refresh(agg, epoch, token):
    return agg.refresh_epoch(token, wire.refresh_mac(agg._operator_key, epoch, token), epoch)


def test_refresh_symmetry_and_old_signatures():
    r = random.Random(8)
    agg, packets = deployment(PROD, 3, r)
    pks = keys_of(packets)
    old, _, _ = multisig_session(agg, packets, MSG, 1)
    before = {i: p.seed for i, p in packets.items()}
    assert _refresh(agg, 1, b"epoch-one") == 1
    for p in packets.values():
        p.refresh(1, b"epoch-one")
        assert p.seed != before[p.index]
    new, _, _ = multisig_session(agg, packets, MSG, 2)
    assert verify(MSG, new, pks)
    assert verify(MSG, old, pks)


def test_refresh_mismatch_detected():
    agg, packets = deployment(TEST, 2, random.Random(9))
    _refresh(agg, 1, b"tok")
    packets[1].refresh(1, b"tok")  # signer 2 missed the refresh
    signers = agg.signer_set(MULTISIG, [1, 2])
    b2 = agg.serve_commitment(request(packets[2], MSG, 1, [1, 2]))
    with pytest.raises(AggregatorTampering):
        local_sign(packets[2], MSG, b2, agg.aggregated_key(signers), signers)


def test_refresh_requires_operator():
    agg, _ = deployment(TEST, 2, random.Random(10))
    with pytest.raises(AuthFailure):
        agg.refresh_epoch(b"tok", bytes(32))
    with pytest.raises(AuthFailure):
        _refresh(agg, 2, b"tok")  # skips an epoch
    assert agg.epoch == 0


def test_fallback_round():
    r = random.Random(11)
    agg, packets = deployment(PROD, 3, r)
    S = [1, 2, 3]
    signers = agg.signer_set(MULTISIG, S)
    key = agg.aggregated_key(signers)
    agg.available = False
    with pytest.raises(AggregatorUnavailable):
        agg.serve_commitment(request(packets[1], MSG, 1, S))
    bundle = fallback_coordinate(PROD, signers, MSG, 1,
                                 lambda j: fallback_commit(packets[j], MSG, 1, signers, r),
                                 agg=key)
    shares = [local_sign(packets[i], MSG, bundle, key, signers) for i in S]
    sig = combine(shares, bundle, key, MSG, signers)
    assert verify(MSG, sig, keys_of(packets))
    normal, _, _ = multisig_session(*deployment(PROD, 3, r), MSG, 1)
    assert len(sig.to_bytes()) == len(normal.to_bytes())


def test_fallback_unreachable_signer():
    agg, packets = deployment(TEST, 3, random.Random(12))
    signers = agg.signer_set(MULTISIG, [1, 2, 3])

    def solicit(j):
        if j == 2:
            raise ConnectionError("down")
        return fallback_commit(packets[j], MSG, 1, signers)

    with pytest.raises(FallbackIncomplete):
        fallback_coordinate(TEST, signers, MSG, 1, solicit)


def test_fallback_bundle_without_fresh_commitment_rejected():
    r = random.Random(13)
    agg, packets = deployment(TEST, 2, r)
    signers = agg.signer_set(MULTISIG, [1, 2])
    key = agg.aggregated_key(signers)
    # a coordinator inventing R_1 cannot make signer 1 sign
    bundle = fallback_coordinate(TEST, signers, MSG, 1, lambda j: TEST.base_exp(j + 1), agg=key)
    with pytest.raises(AggregatorTampering):
        local_sign(packets[1], MSG, bundle, key, signers)


def test_snapshot_round_trip():
    agg, packets = deployment(TEST, 2, random.Random(14))
    multisig_session(agg, packets, MSG, 4)
    clone = Aggregator.restore(agg.snapshot())
    with pytest.raises(CounterReplay):
        clone.serve_commitment(request(packets[1], b"new", 4, [1, 2]))
    assert clone.serve_commitment(request(packets[1], MSG, 4, [1, 2])) == \
        agg.serve_commitment(request(packets[1], MSG, 4, [1, 2]))


def test_attestation_quote():
    agg, _ = deployment(TEST, 1, random.Random(15))
    quote = parse_quote(agg.attestation_quote())
    assert quote == {"type": "TPM", "aggregator_id": b"pitpm-aggregator", "epoch": 0}


def test_handle_frame_errors():
    agg, packets = deployment(TEST, 2, random.Random(16))
    rtype, payload = agg.handle_frame(0x7F, b"")
    assert rtype == wire.ERROR
    req = request(packets[1], MSG, 1, [1, 2])
    rtype, payload = agg.handle_frame(wire.REQUEST, req.to_bytes()[:-1] + b"\xff")
    assert rtype == wire.ERROR
    assert isinstance(wire.decode_error(payload), AuthFailure)


def test_tcp_service_round_trip():
    r = random.Random(17)
    agg, packets = deployment(PROD, 2, r)
    server = AggregatorServer(agg, "127.0.0.1", 0)
    server.start_background()
    try:
        host, port = server.address
        S = [1, 2]
        signers = agg.signer_set(MULTISIG, S)
        key = agg.aggregated_key(signers)
        shares = []
        with wire.AggregatorClient(host, port, PROD) as client:
            assert parse_quote(client.attest())["type"] == "TPM"
            for i in S:
                bundle = client.request_commitment(request(packets[i], MSG, 1, S))
                shares.append(local_sign(packets[i], MSG, bundle, key, signers))
            with pytest.raises(CounterReplay):
                client.request_commitment(request(packets[1], b"other", 1, S))
            sig = agg.combine_multisig(shares, MSG, signers)
            assert verify(MSG, sig, keys_of(packets))
            assert client.refresh(agg._operator_key, 1, b"t") == 1
            with pytest.raises(AuthFailure):
                client.refresh(b"wrong", 2, b"t")
    finally:
        server.shutdown()
        server.server_close()


def test_parse_listen():
    assert parse_listen("127.0.0.1:7744") == ("127.0.0.1", 7744)
    with pytest.raises(ValueError):
        parse_listen("7744")
