"""(t, n) threshold signatures over a Feldman-verified distributed key.

Sharing polynomials have degree ``t`` so that any ``t + 1`` parties can
sign and ``t`` corrupted parties learn nothing.  Party indices double as
evaluation points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import (
    AggregatorTampering,
    CounterReplay,
    DkgRestartRequired,
    InsufficientShares,
    InvalidIndex,
    InvalidParams,
    NotAMember,
    ThresholdUnmet,
)
from .group import Group, GroupElement, random_bytes, random_scalar
from .keyset import CounterStore, SignerSet
from .multisig import (
    REJECT_COEFFICIENTS,
    REJECT_CHALLENGE,
    REJECT_EQUATION,
    REJECT_SET,
    REJECT_STALE,
    REJECT_THRESHOLD,
    THRESHOLD,
    CommitmentBundle,
    MultiSignature,
    SignatureShare,
    Verdict,
    challenge,
    check_bundle,
    derive_nonce,
    own_nonce,
)
from .prf import SEED_LEN, Tag, prf_seed, seed_refresh


@dataclass(frozen=True)
class DealerOutput:
    dealer: int
    C: tuple[GroupElement, ...]
    D: tuple[GroupElement, ...]
    shares: dict[int, tuple[int, int]]

    @property
    def t(self) -> int:
        return len(self.C) - 1


@dataclass(frozen=True)
class Complaint:
    accuser: int
    dealer: int
    reason: str


@dataclass
class ThresholdShare:
    group: Group
    index: int
    x: int
    w: int
    seed: bytes
    vk: GroupElement
    mac_key: bytes
    counters: CounterStore = field(default_factory=CounterStore)
    epoch: int = 0
    pending: dict = field(default_factory=dict, repr=False)

    def refresh(self, epoch: int, token: bytes) -> None:
        self.seed = seed_refresh(self.seed, epoch, token)
        self.epoch = epoch


@dataclass(frozen=True)
class ThresholdParams:
    group: Group
    mpk: GroupElement
    t: int
    n: int
    vks: dict[int, GroupElement]
    aggregator_id: bytes = b"pitpm-aggregator"

    def signer_set(self, indices: Iterable[int]) -> SignerSet:
        indices = set(indices)
        unknown = indices - set(self.vks)
        if unknown:
            raise InvalidIndex(f"unknown party index {sorted(unknown)}")
        return SignerSet.by_index({i: self.vks[i] for i in indices})


def _check_tn(t: int, n: int) -> None:
    if not 0 <= t < n:
        raise InvalidParams(f"need 0 <= t < n, got t={t}, n={n}")


def poly_eval(coeffs, x: int, q: int) -> int:
    acc = 0
    for a in reversed(coeffs):
        acc = (acc * x + a) % q
    return acc


def commitment_eval(group: Group, rows, k: int) -> GroupElement:
    """``prod_j rows[j] ** (k ** j)`` -- the committed polynomial at ``k``, in the exponent."""
    q = group.order
    return group.multi_exp((row, pow(k, j, q)) for j, row in enumerate(rows))


def dkg_deal(group: Group, i: int, t: int, n: int, rng=None, phi=None, psi=None) -> DealerOutput:
    """Sample two degree-``t`` polynomials and share them to parties ``1..n``."""
    _check_tn(t, n)
    q = group.order
    phi = list(phi) if phi is not None else [random_scalar(group, rng, nonzero=False) for _ in range(t + 1)]
    psi = list(psi) if psi is not None else [random_scalar(group, rng, nonzero=False) for _ in range(t + 1)]
    if len(phi) != t + 1 or len(psi) != t + 1:
        raise InvalidParams("polynomials must have t + 1 coefficients")
    C = tuple(group.base_exp(a) for a in phi)
    D = tuple(group.base_exp(b) for b in psi)
    shares = {k: (poly_eval(phi, k, q), poly_eval(psi, k, q)) for k in range(1, n + 1)}
    out = DealerOutput(i, C, D, shares)
    for k, share in shares.items():
        if not dkg_verify_share(group, k, share, C, D):
            raise AssertionError("dealer self-check failed")
    return out


def dkg_verify_share(group: Group, k: int, share, C, D) -> bool:
    s, r = share
    return (
        group.base_exp(s) == commitment_eval(group, C, k)
        and group.base_exp(r) == commitment_eval(group, D, k)
    )


def collect_complaints(group: Group, k: int, deals: Iterable[DealerOutput]) -> list[Complaint]:
    """Party ``k`` checks every share addressed to it."""
    complaints = []
    for deal in deals:
        share = deal.shares.get(k)
        if share is None:
            complaints.append(Complaint(k, deal.dealer, "missing share"))
        elif not dkg_verify_share(group, k, share, deal.C, deal.D):
            complaints.append(Complaint(k, deal.dealer, "share fails commitment check"))
    return complaints


def dkg_finalize(group: Group, deals, complaints=(), t: int | None = None, n: int | None = None,
                 rng=None, aggregator_id: bytes = b"pitpm-aggregator"):
    """Combine verified deals into per-party shares and public parameters.

    Any complaint, whether supplied or found while re-checking, aborts with
    :class:`DkgRestartRequired`; the whole DKG must then be rerun.
    """
    deals = sorted(deals, key=lambda d: d.dealer)
    if not deals:
        raise InvalidParams("no deals")
    t = deals[0].t if t is None else t
    n = len(deals[0].shares) if n is None else n
    _check_tn(t, n)
    if any(d.t != t or len(d.D) != t + 1 for d in deals):
        raise InvalidParams("deals disagree on the threshold")
    complaints = list(complaints)
    for k in range(1, n + 1):
        complaints.extend(collect_complaints(group, k, deals))
    if complaints:
        raise DkgRestartRequired(complaints)

    q = group.order
    mpk = group.product(d.C[0] for d in deals)
    shares, vks = [], {}
    for k in range(1, n + 1):
        x_k = sum(d.shares[k][0] for d in deals) % q
        w_k = sum(d.shares[k][1] for d in deals) % q
        vk = group.product(commitment_eval(group, d.C, k) for d in deals)
        if vk != group.base_exp(x_k):
            raise AssertionError("combined share inconsistent with commitments")
        vks[k] = vk
        shares.append(ThresholdShare(
            group, k, x_k, w_k, signing_seed(group, w_k), vk, random_bytes(SEED_LEN, rng)
        ))
    params = ThresholdParams(group, mpk, t, n, vks, aggregator_id)
    return params, shares


def signing_seed(group: Group, w_k: int) -> bytes:
    return prf_seed(group.encode_scalar(w_k), Tag.SIGNING_SEED, b"signing")


def run_dkg(group: Group, t: int, n: int, rng=None, max_attempts: int = 3, corrupt=None):
    """Deal, verify and finalize, restarting on complaints.

    ``corrupt(deals) -> deals`` lets tests inject bad shares.  Returns
    ``(params, shares, deals)``.
    """
    for attempt in range(max_attempts):
        deals = [dkg_deal(group, i, t, n, rng) for i in range(1, n + 1)]
        if corrupt is not None:
            deals = corrupt(deals)
        try:
            params, shares = dkg_finalize(group, deals, (), t, n, rng)
            return params, shares, deals
        except DkgRestartRequired:
            if attempt == max_attempts - 1:
                raise
            corrupt = None
    raise AssertionError("unreachable")


def lagrange_at_zero(T: Iterable[int], i: int, q: int) -> int:
    """``L_i(0) = prod_{k in T, k != i} (-k) / (i - k)`` modulo ``q``."""
    T = list(T)
    if i not in T:
        raise NotAMember(f"{i} not in interpolation set")
    if 0 in T or any(k % q == 0 for k in T):
        raise InvalidIndex("interpolation points must be nonzero")
    if len(set(k % q for k in T)) != len(T):
        raise InvalidIndex("interpolation points must be distinct")
    num = den = 1
    for k in T:
        if k != i:
            num = num * -k % q
            den = den * (i - k) % q
    return num * pow(den, -1, q) % q


def lagrange_weights(T: Iterable[int], q: int) -> dict[int, int]:
    T = list(T)
    return {i: lagrange_at_zero(T, i, q) for i in T}


def weighted_commitment(group: Group, commitments: Iterable[tuple[int, GroupElement]]) -> GroupElement:
    commitments = list(commitments)
    weights = lagrange_weights([i for i, _ in commitments], group.order)
    return group.multi_exp((Rj, weights[i]) for i, Rj in commitments)


def threshold_commitment(group: Group, signers: SignerSet, mdigest: bytes, ctr: int,
                         seeds: Mapping[int, bytes], t: int) -> CommitmentBundle:
    """Aggregator-side commitment for set ``signers``; the bundle is not yet MAC'd.

    ``mdigest`` is the message digest carried by the commitment request.
    """
    if len(signers) <= t:
        raise ThresholdUnmet(f"|T| = {len(signers)} but t + 1 = {t + 1} signers are required")
    commitments = tuple(
        (j, group.base_exp(derive_nonce(group, seeds[j], mdigest, ctr, signers)))
        for j in signers.indices
    )
    return CommitmentBundle(THRESHOLD, weighted_commitment(group, commitments), commitments,
                            ctr, signers.digest, mdigest)


def threshold_local_sign(share: ThresholdShare, message: bytes, bundle: CommitmentBundle,
                         params: ThresholdParams, signers: SignerSet) -> SignatureShare:
    group = share.group
    if len(signers) <= params.t:
        raise ThresholdUnmet("signing set below threshold")
    check_bundle(share.index, share.mac_key, share.counters, message, bundle, signers,
                 weighted_commitment(group, bundle.commitments))
    w = own_nonce(share, share.seed, message, bundle, signers)
    if group.base_exp(w) != bundle.commitment_of(share.index):
        raise AggregatorTampering(f"published R_{share.index} differs from own commitment")
    share.counters.advance(signers.digest, bundle.ctr)
    share.pending.pop((signers.digest, bundle.ctr), None)
    c = challenge(group, bundle.R, params.mpk, message, signers, bundle.ctr)
    return SignatureShare(share.index, (w + c * share.x) % group.order, bundle.ctr)


def verify_threshold_share(group: Group, share: SignatureShare, R_i: GroupElement,
                           vk_i: GroupElement, c: int) -> bool:
    return group.base_exp(share.s) == R_i * vk_i ** c


def reconstruct(shares: Iterable[SignatureShare], bundle: CommitmentBundle,
                params: ThresholdParams, message: bytes, signers: SignerSet,
                nonces: Mapping[int, int] | None = None) -> MultiSignature:
    """Filter shares and interpolate the final signature.

    If every member of the signing set returned a valid share, the result
    is the plain Lagrange combination.  Otherwise the missing or invalid
    members are covered using the smallest ``t + 1`` valid shares together
    with the session nonces ``nonces`` (``{index: w_j}``), which only the
    seed-holding aggregator can supply; without them this raises
    :class:`InsufficientShares`.  The signing set and ``R`` are never
    changed, so the challenge stays valid.
    """
    group = params.group
    q = group.order
    c = challenge(group, bundle.R, params.mpk, message, signers, bundle.ctr)
    valid: dict[int, SignatureShare] = {}
    for sh in shares:
        if sh.index in valid or sh.index not in signers or sh.ctr != bundle.ctr:
            continue
        if verify_threshold_share(group, sh, bundle.commitment_of(sh.index), params.vks[sh.index], c):
            valid[sh.index] = sh
    if len(valid) < params.t + 1:
        raise InsufficientShares(f"{len(valid)} valid share(s), need {params.t + 1}")

    T = signers.indices
    weights = lagrange_weights(T, q)
    if set(valid) == set(T):
        s = sum(weights[j] * valid[j].s for j in T) % q
    else:
        if nonces is None:
            raise InsufficientShares(
                f"only {len(valid)} of {len(T)} members answered; covering the rest needs the session nonces"
            )
        helpers = sorted(valid)[: params.t + 1]
        helper_weights = lagrange_weights(helpers, q)
        cx = sum(helper_weights[k] * (valid[k].s - nonces[k]) for k in helpers)
        s = (sum(weights[j] * nonces[j] for j in T) + cx) % q
    return MultiSignature(bundle.R, c, s, bundle.ctr, T, weights)


def verify_threshold(message: bytes, sig: MultiSignature, params: ThresholdParams,
                     verifier_state: CounterStore | None = None) -> Verdict:
    group = params.group
    if len(sig.signers) < params.t + 1:
        return Verdict(False, REJECT_THRESHOLD)
    if list(sig.signers) != sorted(set(sig.signers)) or not set(sig.signers) <= set(params.vks):
        return Verdict(False, REJECT_SET)
    signers = params.signer_set(sig.signers)
    if verifier_state is not None and not verifier_state.fresh(signers.digest, sig.ctr, strict=False):
        return Verdict(False, REJECT_STALE)
    if sig.coefficients and sig.coefficients != lagrange_weights(signers.indices, group.order):
        return Verdict(False, REJECT_COEFFICIENTS)
    if sig.c != challenge(group, sig.R, params.mpk, message, signers, sig.ctr):
        return Verdict(False, REJECT_CHALLENGE)
    if group.base_exp(sig.s) != sig.R * params.mpk ** sig.c:
        return Verdict(False, REJECT_EQUATION)
    if verifier_state is not None:
        try:
            verifier_state.advance(signers.digest, sig.ctr, strict=False)
        except CounterReplay:
            return Verdict(False, REJECT_STALE)
    return Verdict(True)
