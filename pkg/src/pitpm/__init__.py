"""Partially interactive Schnorr multi- and threshold signatures.

A trusted aggregator holds per-signer PRF seeds and hands every signer the
full commitment vector for a session, so signers never talk to each other.
"""

from .aggregator import Aggregator, fallback_coordinate
from .errors import *  # noqa: F401,F403
from .group import KERNEL, PROD, TEST, get_group
from .harness import FaultPlan, TamperRule, run_baseline_interactive, run_pitpm, simulate
from .keyset import CounterStore, SignerSet, key_agg, setup
from .multisig import MultiSignature, combine, local_sign, verify
from .threshold import reconstruct, run_dkg, threshold_local_sign, verify_threshold
from .wire import CommitmentRequest

__version__ = "0.1.0"

__all__ = [
    "Aggregator",
    "CommitmentRequest",
    "CounterStore",
    "FaultPlan",
    "KERNEL",
    "MultiSignature",
    "PROD",
    "SignerSet",
    "TEST",
    "TamperRule",
    "combine",
    "fallback_coordinate",
    "get_group",
    "key_agg",
    "local_sign",
    "reconstruct",
    "run_baseline_interactive",
    "run_dkg",
    "run_pitpm",
    "setup",
    "simulate",
    "threshold_local_sign",
    "verify",
    "verify_threshold",
]
