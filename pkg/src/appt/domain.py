"""Core value types shared across the gateway, plus injectable clocks.

Instants are plain ``int`` seconds since the epoch (whole-second precision).
"""
from __future__ import annotations

import base64
import binascii
import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .errors import MalformedCookie, ValidationFailed

TOKEN_VERSION = "APPT1"
DEFAULT_TOKEN_TTL_S = 900


class Status(enum.Enum):
    ACTIVE = "Active"
    EXPIRED = "Expired"


class Channel(enum.Enum):
    SMS = "sms"
    EMAIL = "email"


class Outcome(enum.Enum):
    GRANTED = "Granted"
    DENIED = "Denied"


class DenyReason(enum.Enum):
    BAD_CREDENTIALS = "BadCredentials"
    CHALLENGE_FAILED = "ChallengeFailed"
    RATE_LIMITED = "RateLimited"
    UNKNOWN_USER = "UnknownUser"
    OTP_MISMATCH = "OtpMismatch"
    OTP_ALREADY_USED = "OtpAlreadyUsed"
    TOKEN_MISSING = "TokenMissing"
    TOKEN_UNDECRYPTABLE = "TokenUndecryptable"
    TOKEN_EXPIRED = "TokenExpired"
    TOKEN_NAME_MISMATCH = "TokenNameMismatch"
    USER_MISMATCH = "UserMismatch"
    MACHINE_MISMATCH = "MachineMismatch"
    INSECURE_TRANSPORT = "InsecureTransport"


def _has_control_chars(s: str) -> bool:
    return any(ord(c) < 0x20 or ord(c) == 0x7F for c in s)


def check_username(username: str) -> None:
    if not isinstance(username, str) or not username:
        raise ValidationFailed("username must be a non-empty string")
    if _has_control_chars(username):
        raise ValidationFailed("username contains control characters")


def is_mobile(value: str) -> bool:
    return value.isascii() and value.isdigit() and 7 <= len(value) <= 15


def is_email(value: str) -> bool:
    if value.count("@") != 1 or _has_control_chars(value):
        return False
    local, domain = value.split("@")
    return bool(local) and bool(domain)


@dataclass(frozen=True)
class UserRecord:
    username: str
    permanent_credential_hash: bytes
    mobile: str
    email: str

    def validate(self) -> None:
        check_username(self.username)
        if not is_mobile(self.mobile):
            raise ValidationFailed(f"mobile must be 7-15 digits: {self.mobile!r}")
        if not is_email(self.email):
            raise ValidationFailed(f"malformed email: {self.email!r}")
        if not self.permanent_credential_hash:
            raise ValidationFailed("missing credential hash")


@dataclass(frozen=True)
class OtpRecord:
    username: str
    otp_hash: bytes
    status: Status
    token_name: str
    issued_at: int


@dataclass(frozen=True)
class TokenClaims:
    token_name: str
    host_username: str
    email: str
    host_ip: str
    issued_at: int
    expires_at: int
    version: str = TOKEN_VERSION


@dataclass(frozen=True)
class EncryptedToken:
    """Opaque RSA ciphertext; ``encoded`` is its standard base-64 text."""

    ciphertext: bytes

    @property
    def encoded(self) -> str:
        return base64.b64encode(self.ciphertext).decode("ascii")

    @classmethod
    def from_encoded(cls, text: str) -> "EncryptedToken":
        try:
            raw = base64.b64decode(text.encode("ascii"), validate=True)
        except (binascii.Error, UnicodeEncodeError, ValueError) as exc:
            raise MalformedCookie(f"not base-64: {text[:32]!r}") from exc
        if not raw:
            raise MalformedCookie("empty token")
        return cls(raw)


@dataclass(frozen=True)
class AuthDecision:
    outcome: Outcome
    session_id: Optional[str] = None
    reason: Optional[DenyReason] = None

    def __post_init__(self):
        if self.outcome is Outcome.GRANTED:
            if not self.session_id or self.reason is not None:
                raise ValueError("Granted decision needs a session_id and no reason")
        else:
            if self.reason is None or self.session_id is not None:
                raise ValueError("Denied decision needs a reason and no session_id")

    @classmethod
    def granted(cls, session_id: str) -> "AuthDecision":
        return cls(Outcome.GRANTED, session_id=session_id)

    @classmethod
    def denied(cls, reason: DenyReason) -> "AuthDecision":
        return cls(Outcome.DENIED, reason=reason)

    @property
    def is_granted(self) -> bool:
        return self.outcome is Outcome.GRANTED

    def __str__(self) -> str:
        if self.is_granted:
            return "Granted"
        return f"Denied({self.reason.value})"


class Clock(Protocol):
    def now(self) -> int: ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


@dataclass
class TestClock:
    """Frozen clock advanced explicitly by the caller."""

    __test__ = False  # keep pytest from collecting it

    current: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def now(self) -> int:
        with self._lock:
            return self.current

    def set(self, instant: int) -> None:
        with self._lock:
            if instant < self.current:
                raise ValueError("test clock cannot move backwards")
            self.current = int(instant)

    def advance(self, seconds: int) -> int:
        if seconds < 0:
            raise ValueError("test clock cannot move backwards")
        with self._lock:
            self.current += int(seconds)
            return self.current


def clock_now(clock: Clock) -> int:
    return clock.now()
