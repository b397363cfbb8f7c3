"""Token envelope: canonical claims encoding and RSA PKCS#1 v1.5 encryption.

Encryption goes through ``cryptography``. Decryption is done on the raw RSA
primitive with an explicit padding check, because OpenSSL >= 3.2 applies
implicit rejection to PKCS#1 v1.5 and returns a synthetic plaintext instead
of failing; a tampered token must fail loudly here.
"""
from __future__ import annotations

import hashlib
import hmac
import os
import re
import secrets
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

from .domain import TOKEN_VERSION, EncryptedToken, TokenClaims
from .errors import (
    DecryptFailed,
    DelimiterInField,
    KeyTooSmall,
    MalformedClaims,
    NoPrivateKey,
    PayloadTooLarge,
    ValidationFailed,
)

MIN_KEY_BITS = 2048
PKCS1_OVERHEAD = 11

_CLAIM_KEYS = ("v", "tn", "un", "em", "ip", "ia", "ex")
_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)")


@dataclass(frozen=True)
class Keypair:
    public_key: rsa.RSAPublicKey
    private_key: Optional[rsa.RSAPrivateKey] = None

    @property
    def modulus_bytes(self) -> int:
        return (self.public_key.key_size + 7) // 8

    @property
    def max_payload(self) -> int:
        return self.modulus_bytes - PKCS1_OVERHEAD

    def public_only(self) -> "Keypair":
        return Keypair(self.public_key)

    def private_pem(self) -> bytes:
        if self.private_key is None:
            raise NoPrivateKey("keypair does not contain a private key")
        return self.private_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption(),
        )

    def public_pem(self) -> bytes:
        return self.public_key.public_bytes(
            serialization.Encoding.PEM,
            serialization.PublicFormat.SubjectPublicKeyInfo,
        )


def generate_keypair(bits: int = MIN_KEY_BITS) -> Keypair:
    if bits < MIN_KEY_BITS:
        raise KeyTooSmall(f"{bits}-bit keys are below the {MIN_KEY_BITS}-bit floor")
    private = rsa.generate_private_key(public_exponent=65537, key_size=bits)
    return Keypair(private.public_key(), private)


def _check_size(public_key) -> None:
    if not isinstance(public_key, rsa.RSAPublicKey):
        raise ValidationFailed("token keys must be RSA")
    if public_key.key_size < MIN_KEY_BITS:
        raise KeyTooSmall(f"{public_key.key_size}-bit key is below the floor")


def load_keypair(public_path=None, private_path=None) -> Keypair:
    """Load PEM key files. Either path may be omitted, not both."""
    private = None
    if private_path is not None:
        private = serialization.load_pem_private_key(Path(private_path).read_bytes(), password=None)
        _check_size(private.public_key())
    if public_path is not None:
        public = serialization.load_pem_public_key(Path(public_path).read_bytes())
        _check_size(public)
        if private is not None and public.public_numbers() != private.public_key().public_numbers():
            raise ValidationFailed("public and private key files do not match")
    elif private is not None:
        public = private.public_key()
    else:
        raise ValueError("need at least one key path")
    return Keypair(public, private)


def save_keypair(pair: Keypair, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    priv_path, pub_path = out / "token_private.pem", out / "token_public.pem"
    fd = os.open(priv_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "wb") as fh:
        fh.write(pair.private_pem())
    pub_path.write_bytes(pair.public_pem())
    return priv_path, pub_path


def encode_claims(claims: TokenClaims) -> bytes:
    if claims.version != TOKEN_VERSION:
        raise MalformedClaims(f"unsupported token version {claims.version!r}")
    text_fields = (claims.token_name, claims.host_username, claims.email, claims.host_ip)
    for value in text_fields:
        if "\n" in value:
            raise DelimiterInField(f"newline in claim value {value!r}")
    values = (claims.version, *text_fields, str(int(claims.issued_at)), str(int(claims.expires_at)))
    text = "\n".join(f"{k}={v}" for k, v in zip(_CLAIM_KEYS, values))
    try:
        return text.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ValidationFailed("claim values must be valid unicode text") from exc


def decode_claims(data: bytes) -> TokenClaims:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedClaims("claims are not UTF-8") from exc
    lines = text.split("\n")
    if len(lines) != len(_CLAIM_KEYS):
        raise MalformedClaims(f"expected {len(_CLAIM_KEYS)} lines, got {len(lines)}")
    values = []
    for key, line in zip(_CLAIM_KEYS, lines):
        name, sep, value = line.partition("=")
        if not sep or name != key:
            raise MalformedClaims(f"expected key {key!r}, got {line[:16]!r}")
        values.append(value)
    version, tn, un, em, ip, ia, ex = values
    if version != TOKEN_VERSION:
        raise MalformedClaims(f"unsupported token version {version!r}")
    for raw in (ia, ex):
        if not _INT_RE.fullmatch(raw):
            raise MalformedClaims(f"instant is not a canonical integer: {raw!r}")
    return TokenClaims(
        token_name=tn, host_username=un, email=em, host_ip=ip,
        issued_at=int(ia), expires_at=int(ex), version=version,
    )


def encrypt_token(claims: TokenClaims, key: Keypair) -> EncryptedToken:
    plain = encode_claims(claims)
    if len(plain) > key.max_payload:
        raise PayloadTooLarge(f"{len(plain)} bytes exceeds the {key.max_payload}-byte padding bound")
    return EncryptedToken(key.public_key.encrypt(plain, padding.PKCS1v15()))


def encrypt_bytes(plain: bytes, key: Keypair) -> bytes:
    """Raw PKCS#1 v1.5 encryption of ``plain``; exposed for bound checks."""
    if len(plain) > key.max_payload:
        raise PayloadTooLarge(f"{len(plain)} bytes exceeds the {key.max_payload}-byte padding bound")
    return key.public_key.encrypt(plain, padding.PKCS1v15())


def decrypt_bytes(ciphertext: bytes, key: Keypair) -> bytes:
    if key.private_key is None:
        raise NoPrivateKey("keypair does not contain a private key")
    k = key.modulus_bytes
    if len(ciphertext) != k:
        raise DecryptFailed("ciphertext length does not match the modulus")
    nums = key.private_key.private_numbers()
    n, e = nums.public_numbers.n, nums.public_numbers.e
    c = int.from_bytes(ciphertext, "big")
    if c >= n:
        raise DecryptFailed("ciphertext out of range")

    # blinded CRT exponentiation
    while True:
        r = secrets.randbelow(n - 2) + 2
        try:
            r_inv = pow(r, -1, n)
            break
        except ValueError:
            continue
    cb = (c * pow(r, e, n)) % n
    m1 = pow(cb, nums.dmp1, nums.p)
    m2 = pow(cb, nums.dmq1, nums.q)
    h = (nums.iqmp * (m1 - m2)) % nums.p
    m = ((m2 + h * nums.q) * r_inv) % n
    em = m.to_bytes(k, "big")

    # 00 || 02 || PS (>= 8 nonzero bytes) || 00 || M
    sep = em.find(b"\x00", 2)
    if em[0] != 0 or em[1] != 2 or sep < 2 + 8:
        raise DecryptFailed("invalid PKCS#1 v1.5 padding")
    return em[sep + 1:]


def decrypt_token(token: EncryptedToken, key: Keypair) -> TokenClaims:
    return decode_claims(decrypt_bytes(token.ciphertext, key))


# -- salted secret hashing ---------------------------------------------------

_HASH_TAG = b"p2"
_SALT_LEN = 16
DEFAULT_HASH_ITERATIONS = 120_000


def hash_secret(secret: str, iterations: int = DEFAULT_HASH_ITERATIONS, salt: bytes | None = None) -> bytes:
    """PBKDF2-HMAC-SHA256; the iteration count and salt travel with the digest."""
    salt = secrets.token_bytes(_SALT_LEN) if salt is None else salt
    dk = hashlib.pbkdf2_hmac("sha256", secret.encode("utf-8"), salt, iterations)
    return _HASH_TAG + struct.pack(">I", iterations) + salt + dk


def verify_secret(secret: str, stored: bytes) -> bool:
    if len(stored) != len(_HASH_TAG) + 4 + _SALT_LEN + 32 or not stored.startswith(_HASH_TAG):
        return False
    (iterations,) = struct.unpack(">I", stored[2:6])
    salt = stored[6:6 + _SALT_LEN]
    candidate = hash_secret(secret, iterations, salt)
    return hmac.compare_digest(candidate, stored)
