"""Honest in-process sessions used across test modules."""

import random

from pitpm import wire
from pitpm.aggregator import Aggregator
from pitpm.keyset import public_keys, setup
from pitpm.multisig import MULTISIG, THRESHOLD, local_sign
from pitpm.threshold import run_dkg, threshold_local_sign


def deployment(group, n, rng=None):
    params, packets, secrets = setup(128, n, group, rng)
    return Aggregator.from_setup(params, secrets), {p.index: p for p in packets}


def request(packet, message, ctr, indices, mode=MULTISIG):
    return wire.CommitmentRequest.create(mode, message, ctr, indices, packet.index, packet.mac_key)


def multisig_session(agg, packets, message, ctr, indices=None):
    """Run one full session; returns ``(sig, bundle, signers)``."""
    indices = list(indices or packets)
    signers = agg.signer_set(MULTISIG, indices)
    shares = []
    bundle = None
    for i in indices:
        bundle = agg.serve_commitment(request(packets[i], message, ctr, indices))
        shares.append(local_sign(packets[i], message, bundle, agg.aggregated_key(signers), signers))
    return agg.combine_multisig(shares, message, signers), bundle, signers


def threshold_deployment(group, t, n, rng=None):
    rng = rng or random.Random()
    params, shares, _ = run_dkg(group, t, n, rng)
    shares = {s.index: s for s in shares}
    return Aggregator.from_dkg(params, shares.values(), rng=rng), params, shares


def threshold_session(agg, params, shares, message, ctr, indices):
    signers = params.signer_set(indices)
    out = []
    for i in indices:
        sh = shares[i]
        bundle = agg.serve_commitment(request(sh, message, ctr, indices, THRESHOLD))
        out.append(threshold_local_sign(sh, message, bundle, params, signers))
    return agg.combine_threshold(out, message, signers, ctr), out, signers


def keys_of(packets):
    return public_keys(packets.values())
