"""The two-flow protocol: OTP retrieval with token minting, then login.

Flow A (:meth:`Gate.request_otp`) checks the challenge, rate limits and the
permanent credential, stores a hashed OTP under a fresh token name, sends the
OTP out of band and returns the encrypted machine token for the cookie.

Flow B (:meth:`Gate.authenticate`) spends the user's OTP *before* any check,
then validates OTP, token, transport, expiry and the token's binding to
(token name, username, client IP). The first failing check is reported.
"""
from __future__ import annotations

import hmac
import ipaddress
import random
import uuid
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Protocol, Union

from . import crypto
from .crypto import Keypair
from .delivery import check_destination, render_body
from .domain import (
    DEFAULT_TOKEN_TTL_S,
    AuthDecision,
    Channel,
    DenyReason,
    EncryptedToken,
    TokenClaims,
    UserRecord,
)
from .errors import (
    BadDestination,
    DecryptFailed,
    DeliveryFailed,
    MalformedClaims,
    MalformedCookie,
    NoPrivateKey,
    OtpAlreadyUsed,
    OtpRequestDenied,
    PayloadTooLarge,
    UnknownUser,
    ValidationFailed,
)
from .otp import OtpPolicy, generate_otp
from .store import MemoryStore, RateKey, RateScope

# longest textual IPv6 address; used to size-check provisioned emails
_WORST_CASE_IP = "ffff:ffff:ffff:ffff:ffff:ffff:255.255.255.255"


@dataclass(frozen=True)
class GateConfig:
    token_ttl_s: int = DEFAULT_TOKEN_TTL_S
    otp_policy: OtpPolicy = field(default_factory=OtpPolicy)
    rate_limit: int = 5
    rate_window_s: int = 3600
    require_secure_transport: bool = True
    hash_iterations: int = crypto.DEFAULT_HASH_ITERATIONS

    def __post_init__(self):
        if self.token_ttl_s < 1:
            raise ValidationFailed("token_ttl_s must be >= 1")
        if self.rate_limit < 1 or self.rate_window_s < 1:
            raise ValidationFailed("rate_limit and rate_window_s must be >= 1")
        self.otp_policy.validate()


class Challenge(Protocol):
    def verify(self, answer: str) -> bool: ...


@dataclass(frozen=True)
class ExpectedAnswerChallenge:
    """Deterministic stand-in for a CAPTCHA: exact string match."""

    expected: str

    def verify(self, answer: str) -> bool:
        if not isinstance(answer, str) or not answer:
            return False
        return hmac.compare_digest(answer.encode("utf-8"), self.expected.encode("utf-8"))


def verify_challenge(challenge: Challenge, answer: str) -> bool:
    return bool(challenge.verify(answer))


def canonical_ip(address: str) -> str:
    try:
        return ipaddress.ip_address(address.strip()).compressed
    except ValueError:
        return address


class OtpIssued(NamedTuple):
    token: EncryptedToken
    receipt: int


class Dispatcher(Protocol):
    def dispatch(self, channel: Channel, destination: str, body: str, now: int) -> int: ...


TokenInput = Union[EncryptedToken, str, None]


class Gate:
    def __init__(
        self,
        store: MemoryStore,
        outbox: Dispatcher,
        keypair: Keypair,
        config: GateConfig = GateConfig(),
        challenge: Challenge = ExpectedAnswerChallenge("two words"),
        entropy: Optional[random.Random] = None,
    ):
        if keypair.private_key is None:
            raise NoPrivateKey("the gate needs the private key to validate tokens")
        self.store = store
        self.outbox = outbox
        self.keypair = keypair
        self.config = config
        self.challenge = challenge
        self._rng = entropy if entropy is not None else random.SystemRandom()
        self._dummy_hash = crypto.hash_secret("", config.hash_iterations)

    # -- provisioning --------------------------------------------------------

    def provision_user(self, username: str, password: str, mobile: str, email: str) -> UserRecord:
        record = UserRecord(username, crypto.hash_secret(password, self.config.hash_iterations), mobile, email)
        record.validate()
        probe = TokenClaims(str(uuid.UUID(int=0)), username, email, _WORST_CASE_IP, 0, 0)
        try:
            crypto.encrypt_token(probe, self.keypair)
        except (PayloadTooLarge, ValueError) as exc:
            raise ValidationFailed(f"user fields cannot fit in a token: {exc}") from exc
        self.store.upsert_user(record)
        return record

    # -- Flow A --------------------------------------------------------------

    def request_otp(
        self,
        username: str,
        permanent_secret: str,
        channel: Channel,
        challenge_answer: str,
        client_ip: str,
        now: int,
    ) -> OtpIssued:
        if not verify_challenge(self.challenge, challenge_answer):
            raise OtpRequestDenied(DenyReason.CHALLENGE_FAILED)

        cfg = self.config
        ip = canonical_ip(client_ip)
        allowed = True
        if username:
            allowed &= self.store.rate_check(RateKey(RateScope.PER_USER, username), now, cfg.rate_limit, cfg.rate_window_s)
        if ip:
            allowed &= self.store.rate_check(RateKey(RateScope.PER_IP, ip), now, cfg.rate_limit, cfg.rate_window_s)
        if not allowed:
            raise OtpRequestDenied(DenyReason.RATE_LIMITED)

        user = self.store.lookup_user(username) if username else None
        if user is None:
            crypto.verify_secret(permanent_secret, self._dummy_hash)  # equalize timing
            raise OtpRequestDenied(DenyReason.BAD_CREDENTIALS)
        if not crypto.verify_secret(permanent_secret, user.permanent_credential_hash):
            raise OtpRequestDenied(DenyReason.BAD_CREDENTIALS)

        channel = Channel(channel)
        destination = user.mobile if channel is Channel.SMS else user.email
        try:
            check_destination(channel, destination)
        except BadDestination as exc:
            raise DeliveryFailed(str(exc)) from exc

        otp = generate_otp(cfg.otp_policy, self._rng)
        token_name = str(uuid.UUID(int=self._rng.getrandbits(128)))
        claims = TokenClaims(
            token_name=token_name,
            host_username=username,
            email=user.email,
            host_ip=ip,
            issued_at=int(now),
            expires_at=int(now) + cfg.token_ttl_s,
        )
        token = crypto.encrypt_token(claims, self.keypair)
        self.store.issue_otp(username, crypto.hash_secret(otp, cfg.hash_iterations), token_name, now)
        try:
            receipt = self.outbox.dispatch(channel, destination, render_body(otp), now)
        except Exception as exc:
            raise DeliveryFailed(str(exc)) from exc
        return OtpIssued(token, receipt)

    # -- Flow B --------------------------------------------------------------

    def authenticate(
        self,
        username: str,
        otp: str,
        token: TokenInput,
        client_ip: str,
        transport_secure: bool,
        now: int,
    ) -> AuthDecision:
        deny = AuthDecision.denied
        try:
            snapshot = self.store.consume_otp(username)
        except UnknownUser:
            return deny(DenyReason.UNKNOWN_USER)
        except OtpAlreadyUsed:
            return deny(DenyReason.OTP_ALREADY_USED)

        if not isinstance(otp, str) or not crypto.verify_secret(otp, snapshot.otp_hash):
            return deny(DenyReason.OTP_MISMATCH)
        if token is None or token == "":
            return deny(DenyReason.TOKEN_MISSING)
        try:
            if isinstance(token, str):
                token = EncryptedToken.from_encoded(token)
            claims = crypto.decrypt_token(token, self.keypair)
        except (MalformedCookie, DecryptFailed, MalformedClaims):
            return deny(DenyReason.TOKEN_UNDECRYPTABLE)
        if self.config.require_secure_transport and not transport_secure:
            return deny(DenyReason.INSECURE_TRANSPORT)
        # the OTP shares the token's lifetime
        if claims.expires_at <= now or snapshot.issued_at + self.config.token_ttl_s <= now:
            return deny(DenyReason.TOKEN_EXPIRED)
        if not hmac.compare_digest(claims.token_name.encode(), snapshot.token_name.encode()):
            return deny(DenyReason.TOKEN_NAME_MISMATCH)
        if claims.host_username != username:
            return deny(DenyReason.USER_MISMATCH)
        if canonical_ip(claims.host_ip) != canonical_ip(client_ip):
            return deny(DenyReason.MACHINE_MISMATCH)

        session_id = f"{self._rng.getrandbits(128):032x}"
        self.store.create_session(session_id, username, now)
        return AuthDecision.granted(session_id)

    def session_user(self, session_id: str) -> Optional[str]:
        return self.store.lookup_session(session_id) if session_id else None
