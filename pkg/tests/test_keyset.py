import copy
import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attacks import rogue_key_forgery
from pitpm import keyset
from pitpm.errors import CounterReplay, DuplicateKey, InvalidParams
from pitpm.group import PROD, TEST
from pitpm.keyset import (
    CounterStore,
    SignerPacket,
    SignerSet,
    aggregation_coefficient,
    key_agg,
    naive_key_agg,
    public_keys,
    setup,
)
from pitpm.multisig import verify
from pitpm.prf import fingerprint


def test_setup_single_signer():
    params, packets, secrets = setup(128, 1, TEST)
    assert len(packets) == 1
    p = packets[0]
    assert p.public == TEST.base_exp(p.secret)
    assert params.n == 1 and params.gctr == 0
    assert params.seed_agg_fingerprint == fingerprint(secrets.seed_agg)


def test_setup_distinct_material(rng):
    _, packets, secrets = setup(128, 3, TEST, rng)
    assert len({p.seed for p in packets}) == 3
    assert len({p.public for p in packets}) == 3
    assert len({p.mac_key for p in packets}) == 3
    assert secrets.seeds == {p.index: p.seed for p in packets}


def test_setup_fresh_randomness():
    _, _, s1 = setup(128, 2, PROD)
    _, _, s2 = setup(128, 2, PROD)
    assert s1.master_seed != s2.master_seed
    assert s1.seed_agg != s2.seed_agg


def test_setup_reproducible_with_rng():
    a = setup(128, 3, PROD, random.Random(9))
    b = setup(128, 3, PROD, random.Random(9))
    assert [p.seed for p in a[1]] == [p.seed for p in b[1]]
    assert a[2].seed_agg == b[2].seed_agg


def test_setup_rejects_bad_n():
    with pytest.raises(InvalidParams):
        setup(128, 0, TEST)
    with pytest.raises(InvalidParams):
        setup(128, 11, TEST)  # only 10 distinct non-identity keys exist
    with pytest.raises(InvalidParams):
        setup(128, 2, TEST, aggregator_type="HSM")


def test_packet_checks_key_pair():
    with pytest.raises(InvalidParams):
        SignerPacket(TEST, 1, 3, TEST.base_exp(4), b"\x00" * 32, b"\x00" * 32)
    with pytest.raises(InvalidParams):
        SignerPacket(TEST, 1, 0, TEST.identity, b"\x00" * 32, b"\x00" * 32)


def test_key_agg_worked_vector(monkeypatch):
    pk1, pk2 = TEST.base_exp(3), TEST.base_exp(5)
    assert (pk1.value, pk2.value) == (8, 9)
    forced = {8: 2, 9: 4}
    monkeypatch.setattr(keyset, "aggregation_coefficient",
                        lambda group, seed, pk, ordered: forced[pk.value])
    agg = key_agg({1: pk1, 2: pk2}, b"\x00" * 32)
    assert agg.coefficients == {1: 2, 2: 4}
    assert agg.apk.value == 16
    assert TEST.dlog_bruteforce(agg.apk) == (2 * 3 + 4 * 5) % 11 == 4


def test_key_agg_single_key():
    pk = PROD.base_exp(77)
    agg = key_agg({1: pk}, b"\x05" * 32)
    assert agg.apk == pk ** agg.coefficients[1]


def test_key_agg_order_independent(rng):
    pks = {i: PROD.base_exp(rng.randrange(1, PROD.order)) for i in range(1, 6)}
    reordered = dict(reversed(list(pks.items())))
    a, b = key_agg(pks, b"\x01" * 32), key_agg(reordered, b"\x01" * 32)
    assert a == b


def test_key_agg_rejects_duplicates():
    pk = TEST.base_exp(2)
    with pytest.raises(DuplicateKey):
        key_agg({1: pk, 2: pk}, b"\x00" * 32)
    with pytest.raises(InvalidParams):
        key_agg({}, b"\x00" * 32)


def test_zero_coefficient_is_resampled(monkeypatch):
    calls = []

    def fake(key, tag, data, order):
        calls.append(data)
        return 0 if len(calls) == 1 else 3

    monkeypatch.setattr(keyset, "prf", fake)
    assert aggregation_coefficient(TEST, b"k", TEST.base_exp(1), b"L") == 3
    assert calls[1] == calls[0] + b"\x01"


def test_apk_dlog_oracle():
    r = random.Random(11)
    for _ in range(200):
        k = r.randint(1, 5)
        xs = r.sample(range(1, 11), k)
        pks = {i + 1: TEST.base_exp(x) for i, x in enumerate(xs)}
        agg = key_agg(pks, r.randbytes(32))
        expected = sum(agg.coefficients[i + 1] * x for i, x in enumerate(xs)) % 11
        assert TEST.dlog_bruteforce(agg.apk) == expected
        assert all(a != 0 for a in agg.coefficients.values())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 10), min_size=1, max_size=5, unique=True), st.binary(min_size=32, max_size=32))
def test_key_agg_is_pure(xs, seed):
    pks = {i: TEST.base_exp(x) for i, x in enumerate(xs, start=1)}
    assert key_agg(pks, seed) == key_agg(dict(pks), seed)


def test_rogue_key_naive_arm_forges():
    r = random.Random(4)
    for group in (TEST, PROD):
        honest = {i: group.base_exp(r.randrange(1, group.order)) for i in (1, 2)}
        if honest[1] == honest[2]:
            continue
        sig, keys, agg, _ = rogue_key_forgery(group, honest, r, b"pay me")
        assert verify(b"pay me", sig, keys, naive=True)


def test_rogue_key_prf_arm_on_test_group():
    # on q = 11 the forgery works exactly when the PRF weights happen to
    # cancel the honest keys, or the challenge is 0; verification agrees
    # with that ground truth
    r = random.Random(6)
    wins = 0
    for _ in range(300):
        x1, x2 = r.sample(range(1, 11), 2)
        honest = {1: TEST.base_exp(x1), 2: TEST.base_exp(x2)}
        sig, keys, agg, y = rogue_key_forgery(TEST, honest, r, b"m", seed_agg=r.randbytes(32))
        cancels = agg.apk == TEST.base_exp(y * agg.coefficients[3]) or sig.c == 0
        assert bool(verify(b"m", sig, keys, coefficients=agg.coefficients)) == cancels
        wins += cancels
    assert wins < 300 * 0.25


def test_rogue_key_prf_arm_on_prod():
    r = random.Random(7)
    for _ in range(20):
        honest = {i: PROD.base_exp(r.randrange(1, PROD.order)) for i in (1, 2, 3)}
        sig, keys, agg, _ = rogue_key_forgery(PROD, honest, r, b"m", seed_agg=r.randbytes(32))
        assert not verify(b"m", sig, keys, coefficients=agg.coefficients)


def test_naive_key_agg_is_plain_product():
    pks = {1: TEST.base_exp(2), 2: TEST.base_exp(3)}
    agg = naive_key_agg(pks)
    assert agg.apk == TEST.base_exp(5)
    assert agg.coefficients == {1: 1, 2: 1}


def test_public_keys_detects_duplicates():
    _, packets, _ = setup(128, 2, TEST)
    packets[1] = copy.copy(packets[1])
    packets[1].public = packets[0].public
    with pytest.raises(DuplicateKey):
        public_keys(packets)


def test_signer_set_orders():
    pks = {1: TEST.decode(b"\x09"), 2: TEST.decode(b"\x08")}
    s = SignerSet.by_keys(pks)
    assert s.indices == (2, 1)
    assert s.encoding == b"\x08\x09"
    t = SignerSet.by_index({3: TEST.base_exp(1), 1: TEST.base_exp(1)})
    assert t.indices == (1, 3)
    assert t.digest != s.digest
    with pytest.raises(InvalidParams):
        SignerSet.by_index({0: TEST.base_exp(1)})


def test_counter_store_rules():
    c = CounterStore()
    c.advance(b"d", 3)
    with pytest.raises(CounterReplay):
        c.advance(b"d", 3)
    c.advance(b"d", 3, strict=False)
    with pytest.raises(CounterReplay):
        c.advance(b"d", 2, strict=False)
    assert c.last(b"d") == 3
    assert c.last(b"other") is None


def test_counter_store_is_linearizable():
    c = CounterStore()
    accepted = []
    lock = threading.Lock()

    def worker(values):
        for v in values:
            try:
                c.advance(b"d", v)
            except CounterReplay:
                continue
            with lock:
                accepted.append(v)

    r = random.Random(1)
    threads = [threading.Thread(target=worker, args=([r.randrange(500) for _ in range(300)],))
               for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert accepted == sorted(accepted)
    assert len(set(accepted)) == len(accepted)
