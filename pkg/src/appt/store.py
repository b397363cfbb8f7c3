"""In-process store for users, OTP rows, sessions and rate counters.

All OTP row transitions happen under one lock, which makes ``issue_otp`` and
``consume_otp`` linearizable. Snapshot file layout (big-endian)::

    b"APPTSNAP" | u16 version=1 | u32 record_count | record*
    record  := u8 kind | u32 payload_len | payload
    kind 1 (user) payload := field(username) field(credential_hash) field(mobile) field(email)
    kind 2 (otp)  payload := field(username) field(otp_hash) field(status) field(token_name) i64 issued_at
    field   := u32 len | bytes (UTF-8 for text)

Records are written in insertion order; OTP rows of a user keep issue order.
Sessions and rate counters are not persisted.
"""
from __future__ import annotations

import enum
import io
import os
import struct
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .domain import OtpRecord, Status, UserRecord
from .errors import OtpAlreadyUsed, UnknownUser, ValidationFailed

SNAPSHOT_MAGIC = b"APPTSNAP"
SNAPSHOT_VERSION = 1
_KIND_USER = 1
_KIND_OTP = 2


class RateScope(enum.Enum):
    PER_USER = "PerUser"
    PER_IP = "PerIp"


@dataclass(frozen=True)
class RateKey:
    scope: RateScope
    value: str

    def __post_init__(self):
        if not self.value:
            raise ValidationFailed("rate key value must be non-empty")


class MemoryStore:
    def __init__(self):
        self._lock = threading.RLock()
        self._users: dict[str, UserRecord] = {}
        self._otps: dict[str, list[OtpRecord]] = defaultdict(list)
        self._token_names: set[str] = set()
        self._sessions: dict[str, tuple[str, int]] = {}
        self._rate_lock = threading.Lock()
        self._rate: dict[RateKey, deque] = defaultdict(deque)

    # -- users ---------------------------------------------------------------

    def upsert_user(self, user: UserRecord) -> None:
        user.validate()
        with self._lock:
            self._users[user.username] = user

    def lookup_user(self, username: str) -> Optional[UserRecord]:
        with self._lock:
            return self._users.get(username)

    def usernames(self) -> list[str]:
        with self._lock:
            return list(self._users)

    # -- OTP rows ------------------------------------------------------------

    def issue_otp(self, username: str, otp_hash: bytes, token_name: str, issued_at: int) -> None:
        with self._lock:
            if username not in self._users:
                raise UnknownUser(username)
            if token_name in self._token_names:
                raise ValidationFailed(f"token name {token_name!r} was already issued")
            rows = self._otps[username]
            # supersede: at most one Active row per user
            for i, row in enumerate(rows):
                if row.status is Status.ACTIVE:
                    rows[i] = replace(row, status=Status.EXPIRED)
            rows.append(OtpRecord(username, otp_hash, Status.ACTIVE, token_name, int(issued_at)))
            self._token_names.add(token_name)

    def consume_otp(self, username: str) -> OtpRecord:
        """Expire the user's Active row and return it as it was before expiry."""
        with self._lock:
            if username not in self._users:
                raise UnknownUser(username)
            rows = self._otps.get(username)
            if not rows or rows[-1].status is not Status.ACTIVE:
                raise OtpAlreadyUsed(username)
            snapshot = rows[-1]
            rows[-1] = replace(snapshot, status=Status.EXPIRED)
            return snapshot

    def otp_rows(self, username: str) -> list[OtpRecord]:
        with self._lock:
            return list(self._otps.get(username, ()))

    def active_otp(self, username: str) -> Optional[OtpRecord]:
        with self._lock:
            active = [r for r in self._otps.get(username, ()) if r.status is Status.ACTIVE]
            return active[-1] if active else None

    # -- sessions ------------------------------------------------------------

    def create_session(self, session_id: str, username: str, now: int) -> None:
        with self._lock:
            if session_id in self._sessions:
                raise ValidationFailed("duplicate session id")
            self._sessions[session_id] = (username, int(now))

    def lookup_session(self, session_id: str) -> Optional[str]:
        with self._lock:
            entry = self._sessions.get(session_id)
            return entry[0] if entry else None

    # -- flooding control ----------------------------------------------------

    def rate_check(self, key: RateKey, now: int, limit: int, window_s: int) -> bool:
        """Record one request and report whether the window count is within ``limit``."""
        if limit < 1 or window_s < 1:
            raise ValueError("limit and window_s must be >= 1")
        with self._rate_lock:
            stamps = self._rate[key]
            stamps.append(int(now))
            # window is (now - window_s, now]
            while stamps and stamps[0] <= now - window_s:
                stamps.popleft()
            return sum(1 for t in stamps if t <= now) <= limit

    def rate_log(self, key: RateKey) -> list[int]:
        with self._rate_lock:
            return list(self._rate.get(key, ()))

    # -- snapshots -----------------------------------------------------------

    def save_snapshot(self, path: str | Path) -> None:
        path = Path(path)
        with self._lock:
            records = [(_KIND_USER, _pack_user(u)) for u in self._users.values()]
            for rows in self._otps.values():
                records.extend((_KIND_OTP, _pack_otp(r)) for r in rows)
        buf = io.BytesIO()
        buf.write(SNAPSHOT_MAGIC)
        buf.write(struct.pack(">HI", SNAPSHOT_VERSION, len(records)))
        for kind, payload in records:
            buf.write(struct.pack(">BI", kind, len(payload)))
            buf.write(payload)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load_snapshot(cls, path: str | Path) -> "MemoryStore":
        store = cls()
        path = Path(path)
        if not path.exists():
            return store
        data = memoryview(path.read_bytes())
        if bytes(data[:8]) != SNAPSHOT_MAGIC:
            raise ValidationFailed(f"{path} is not an APPT snapshot")
        version, count = struct.unpack_from(">HI", data, 8)
        if version != SNAPSHOT_VERSION:
            raise ValidationFailed(f"unsupported snapshot version {version}")
        off = 14
        for _ in range(count):
            kind, length = struct.unpack_from(">BI", data, off)
            off += 5
            payload = bytes(data[off:off + length])
            if len(payload) != length:
                raise ValidationFailed("truncated snapshot")
            off += length
            if kind == _KIND_USER:
                store.upsert_user(_unpack_user(payload))
            elif kind == _KIND_OTP:
                row = _unpack_otp(payload)
                store._otps[row.username].append(row)
                store._token_names.add(row.token_name)
            else:
                raise ValidationFailed(f"unknown snapshot record kind {kind}")
        if off != len(data):
            raise ValidationFailed("trailing bytes in snapshot")
        return store


def _field(value: bytes | str) -> bytes:
    raw = value.encode("utf-8") if isinstance(value, str) else value
    return struct.pack(">I", len(raw)) + raw


def _read_fields(payload: bytes, n: int) -> tuple[list[bytes], int]:
    out, off = [], 0
    for _ in range(n):
        (length,) = struct.unpack_from(">I", payload, off)
        off += 4
        out.append(payload[off:off + length])
        off += length
    return out, off


def _pack_user(u: UserRecord) -> bytes:
    return b"".join(_field(v) for v in (u.username, u.permanent_credential_hash, u.mobile, u.email))


def _unpack_user(payload: bytes) -> UserRecord:
    (name, cred, mobile, email), _ = _read_fields(payload, 4)
    return UserRecord(name.decode(), cred, mobile.decode(), email.decode())


def _pack_otp(r: OtpRecord) -> bytes:
    head = b"".join(_field(v) for v in (r.username, r.otp_hash, r.status.value, r.token_name))
    return head + struct.pack(">q", r.issued_at)


def _unpack_otp(payload: bytes) -> OtpRecord:
    (name, otp_hash, status, token_name), off = _read_fields(payload, 4)
    (issued_at,) = struct.unpack_from(">q", payload, off)
    return OtpRecord(name.decode(), otp_hash, Status(status.decode()), token_name.decode(), issued_at)
