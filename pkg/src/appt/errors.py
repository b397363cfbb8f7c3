"""Exception hierarchy for the APPT gateway."""


class ApptError(Exception):
    """Base class for every error raised by this package."""


class ValidationFailed(ApptError, ValueError):
    pass


class KeyTooSmall(ApptError, ValueError):
    pass


class DelimiterInField(ApptError, ValueError):
    pass


class MalformedClaims(ApptError, ValueError):
    pass


class PayloadTooLarge(ApptError, ValueError):
    pass


class NoPrivateKey(ApptError):
    pass


class DecryptFailed(ApptError):
    pass


class InvalidPolicy(ApptError, ValueError):
    pass


class UnknownUser(ApptError, LookupError):
    pass


class OtpAlreadyUsed(ApptError):
    pass


class BadDestination(ApptError, ValueError):
    pass


class DeliveryFailed(ApptError):
    pass


class MalformedCookie(ApptError, ValueError):
    pass


class UnknownScenario(ApptError, LookupError):
    pass


class OtpRequestDenied(ApptError):
    """Flow A refusal. ``reason`` is a :class:`appt.domain.DenyReason`."""

    def __init__(self, reason):
        super().__init__(reason.value)
        self.reason = reason
