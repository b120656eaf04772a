"""Exception hierarchy shared by every protocol module."""


class PiTPMError(Exception):
    """Base class. ``transcript`` is attached by the simulator when available."""

    transcript = None


class InvalidParams(PiTPMError, ValueError):
    pass


class DuplicateKey(PiTPMError, ValueError):
    pass


class DecodeError(PiTPMError, ValueError):
    pass


class NotAMember(PiTPMError):
    pass


class InvalidIndex(PiTPMError, ValueError):
    pass


class CounterReplay(PiTPMError):
    pass


class CounterMismatch(PiTPMError):
    pass


class AuthFailure(PiTPMError):
    pass


class AggregatorTampering(PiTPMError):
    """The published commitment for this signer differs from its own nonce."""


class CommitmentVectorInvalid(PiTPMError):
    """The published vector does not multiply out to the published R."""


class ShareSetInvalid(PiTPMError):
    pass


class ThresholdUnmet(PiTPMError):
    pass


class InsufficientShares(PiTPMError):
    pass


class DkgRestartRequired(PiTPMError):
    def __init__(self, complaints):
        super().__init__(f"{len(complaints)} unresolved complaint(s)")
        self.complaints = list(complaints)


class UnknownSigner(PiTPMError):
    pass


class AggregatorUnavailable(PiTPMError):
    pass


class FallbackIncomplete(PiTPMError):
    pass


class ProtocolAborted(PiTPMError):
    pass


class ConfigError(PiTPMError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
