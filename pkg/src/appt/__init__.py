"""Phishing-resistant login gateway: out-of-band one-time passwords bound to
the requesting machine by an encrypted, short-lived token."""

from .crypto import Keypair, decrypt_token, encrypt_token, generate_keypair
from .domain import AuthDecision, DenyReason, EncryptedToken, TestClock, TokenClaims
from .gate import Gate, GateConfig

__all__ = [
    "AuthDecision",
    "DenyReason",
    "EncryptedToken",
    "Gate",
    "GateConfig",
    "Keypair",
    "TestClock",
    "TokenClaims",
    "decrypt_token",
    "encrypt_token",
    "generate_keypair",
]
