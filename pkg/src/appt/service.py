"""HTTP front end for the gate.

Routing lives in :class:`ApptApp`, which maps a plain request description to a
:class:`Response`. The stdlib HTTP server below only adapts sockets to it, so
the same app can be driven in-process (harness, differential tests) or over a
real listener.
"""
from __future__ import annotations

import datetime
import ipaddress
import json
import logging
import os
import random
import ssl
import threading
from dataclasses import dataclass, field, fields
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping, Optional

from . import crypto
from .delivery import Outbox
from .domain import Channel, Clock, DenyReason, EncryptedToken, SystemClock
from .errors import DeliveryFailed, OtpRequestDenied, ValidationFailed
from .gate import ExpectedAnswerChallenge, Gate, GateConfig
from .otp import OtpPolicy
from .store import MemoryStore

log = logging.getLogger(__name__)

COOKIE_NAME = "APPTSecureCookie"
COOKIE_MAX_AGE_S = 900
CONFIG_ENV = "APPT_CONFIG"


def emit_cookie(token: EncryptedToken, max_age_s: int = COOKIE_MAX_AGE_S) -> str:
    return f"{COOKIE_NAME}={token.encoded}; Max-Age={max_age_s}; Path=/; Secure; HttpOnly"


def cookie_value(cookie_header: Optional[str]) -> Optional[str]:
    """Raw value of the token cookie in a ``Cookie`` request header, if any."""
    if not cookie_header:
        return None
    for pair in cookie_header.split(";"):
        name, sep, value = pair.strip().partition("=")
        if sep and name.strip() == COOKIE_NAME:
            return value.strip()
    return None


def parse_cookie(cookie_header: Optional[str]) -> Optional[EncryptedToken]:
    value = cookie_value(cookie_header)
    if value is None:
        return None
    return EncryptedToken.from_encoded(value)


@dataclass
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8443"
    tls_cert_path: Optional[str] = None
    tls_key_path: Optional[str] = None
    token_public_key_path: Optional[str] = None
    token_private_key_path: Optional[str] = None
    token_ttl_s: int = 900
    rate_limit: int = 5
    rate_window_s: int = 3600
    otp_length: int = 7
    challenge_expected_answer: str = "two words"
    trusted_proxy: Optional[str] = None
    outbox_sink_path: Optional[str] = None
    snapshot_path: Optional[str] = None
    hash_iterations: int = crypto.DEFAULT_HASH_ITERATIONS

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        path = Path(path)
        data = json.loads(path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationFailed(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg._resolve_paths(path.parent)
        return cfg

    def _resolve_paths(self, base: Path) -> None:
        for name in ("tls_cert_path", "tls_key_path", "token_public_key_path",
                     "token_private_key_path", "outbox_sink_path", "snapshot_path"):
            value = getattr(self, name)
            if value and not os.path.isabs(value):
                setattr(self, name, str(base / value))

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_addr.rpartition(":")
        return host.strip("[]") or "127.0.0.1", int(port)

    def gate_config(self, require_secure_transport: bool = True) -> GateConfig:
        return GateConfig(
            token_ttl_s=self.token_ttl_s,
            otp_policy=OtpPolicy(length=self.otp_length),
            rate_limit=self.rate_limit,
            rate_window_s=self.rate_window_s,
            require_secure_transport=require_secure_transport,
            hash_iterations=self.hash_iterations,
        )


def resolve_config_path(cli_path: Optional[str]) -> Optional[str]:
    return os.environ.get(CONFIG_ENV) or cli_path


@dataclass
class Response:
    status: int
    body: dict
    headers: list[tuple[str, str]] = field(default_factory=list)

    def json_bytes(self) -> bytes:
        return json.dumps(self.body, sort_keys=True).encode("utf-8")


_STATUS_FOR_REASON = {DenyReason.RATE_LIMITED: HTTPStatus.TOO_MANY_REQUESTS}


def _reason_response(reason: DenyReason) -> Response:
    return Response(_STATUS_FOR_REASON.get(reason, HTTPStatus.UNAUTHORIZED), {"reason": reason.value})


def _is_loopback(address: str) -> bool:
    try:
        return ipaddress.ip_address(address).is_loopback
    except ValueError:
        return False


class ApptApp:
    def __init__(
        self,
        gate: Gate,
        clock: Clock,
        trusted_proxy: Optional[str] = None,
        snapshot_path: Optional[str] = None,
    ):
        self.gate = gate
        self.clock = clock
        self.trusted_proxy = trusted_proxy
        self.snapshot_path = snapshot_path
        self._snapshot_lock = threading.Lock()

    def client_ip(self, peer_ip: str, headers: Mapping[str, str]) -> str:
        forwarded = _header(headers, "X-Forwarded-For")
        if forwarded and self.trusted_proxy and peer_ip == self.trusted_proxy:
            return forwarded.split(",")[-1].strip()
        return peer_ip

    def handle(
        self,
        method: str,
        path: str,
        headers: Mapping[str, str],
        body: bytes,
        peer_ip: str,
        secure: bool,
    ) -> Response:
        path = path.split("?", 1)[0]
        routes = {
            "/getpassword": ("POST", self._getpassword),
            "/login": ("POST", self._login),
            "/protected": ("GET", self._protected),
            "/admin/users": ("POST", self._add_user),
        }
        if path not in routes:
            return Response(HTTPStatus.NOT_FOUND, {"error": "not found"})
        expected, handler = routes[path]
        if method != expected:
            return Response(HTTPStatus.METHOD_NOT_ALLOWED, {"error": f"use {expected}"})
        payload = {}
        if method == "POST":
            try:
                payload = json.loads(body or b"{}")
            except (json.JSONDecodeError, UnicodeDecodeError):
                return Response(HTTPStatus.BAD_REQUEST, {"error": "body must be JSON"})
            if not isinstance(payload, dict):
                return Response(HTTPStatus.BAD_REQUEST, {"error": "body must be a JSON object"})
        return handler(payload, headers, peer_ip, secure)

    def _getpassword(self, payload, headers, peer_ip, secure) -> Response:
        try:
            username, password, channel, answer = _strings(
                payload, "username", "password", "channel", "challenge_answer")
            channel = Channel(channel)
        except (KeyError, ValueError) as exc:
            return Response(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        try:
            issued = self.gate.request_otp(
                username, password, channel, answer, self.client_ip(peer_ip, headers), self.clock.now())
        except OtpRequestDenied as denied:
            return _reason_response(denied.reason)
        except DeliveryFailed:
            return Response(HTTPStatus.BAD_GATEWAY, {"reason": "DeliveryFailed"})
        cookie = emit_cookie(issued.token, self.gate.config.token_ttl_s)
        return Response(HTTPStatus.OK, {"receipt": issued.receipt}, [("Set-Cookie", cookie)])

    def _login(self, payload, headers, peer_ip, secure) -> Response:
        try:
            username, otp = _strings(payload, "username", "otp")
        except (KeyError, ValueError) as exc:
            return Response(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        token = cookie_value(_header(headers, "Cookie"))
        decision = self.gate.authenticate(
            username, otp, token, self.client_ip(peer_ip, headers), secure, self.clock.now())
        if decision.is_granted:
            return Response(HTTPStatus.OK, {"session_id": decision.session_id})
        return _reason_response(decision.reason)

    def _protected(self, payload, headers, peer_ip, secure) -> Response:
        auth = _header(headers, "Authorization") or ""
        scheme, _, session_id = auth.partition(" ")
        user = self.gate.session_user(session_id.strip()) if scheme.lower() == "bearer" else None
        if user is None:
            return Response(HTTPStatus.UNAUTHORIZED, {"error": "no valid session"})
        return Response(HTTPStatus.OK, {"username": user, "message": f"Welcome User: {user}"})

    def _add_user(self, payload, headers, peer_ip, secure) -> Response:
        if not _is_loopback(peer_ip) or _header(headers, "X-Forwarded-For"):
            return Response(HTTPStatus.FORBIDDEN, {"error": "provisioning is loopback-only"})
        try:
            username, password, mobile, email = _strings(payload, "username", "password", "mobile", "email")
            self.gate.provision_user(username, password, mobile, email)
        except (KeyError, ValueError) as exc:
            return Response(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        self.save_snapshot()
        return Response(HTTPStatus.CREATED, {"username": username})

    def save_snapshot(self) -> None:
        if self.snapshot_path:
            with self._snapshot_lock:
                self.gate.store.save_snapshot(self.snapshot_path)


def _header(headers: Mapping[str, str], name: str) -> Optional[str]:
    getter = getattr(headers, "get", None)
    value = getter(name) if getter else None
    if value is not None:
        return value
    lowered = name.lower()
    for key, val in headers.items():
        if key.lower() == lowered:
            return val
    return None


def _strings(payload: dict, *names: str) -> list[str]:
    out = []
    for name in names:
        if name not in payload:
            raise KeyError(f"missing field {name!r}")
        if not isinstance(payload[name], str):
            raise ValueError(f"field {name!r} must be a string")
        out.append(payload[name])
    return out


def build_app(
    config: ServiceConfig,
    *,
    keypair: Optional[crypto.Keypair] = None,
    store: Optional[MemoryStore] = None,
    outbox: Optional[Outbox] = None,
    clock: Optional[Clock] = None,
    entropy: Optional[random.Random] = None,
    require_secure_transport: bool = True,
) -> ApptApp:
    if keypair is None:
        keypair = crypto.load_keypair(config.token_public_key_path, config.token_private_key_path)
    if store is None:
        store = MemoryStore.load_snapshot(config.snapshot_path) if config.snapshot_path else MemoryStore()
    if outbox is None:
        outbox = Outbox(config.outbox_sink_path)
    gate = Gate(
        store,
        outbox,
        keypair,
        config.gate_config(require_secure_transport),
        ExpectedAnswerChallenge(config.challenge_expected_answer),
        entropy,
    )
    return ApptApp(gate, clock or SystemClock(), config.trusted_proxy, config.snapshot_path)


# -- sockets -----------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    server_version = "APPT/0.1"
    protocol_version = "HTTP/1.1"

    def _serve(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        resp = self.server.app.handle(
            method, self.path, self.headers, body, self.client_address[0], self.server.secure)
        payload = resp.json_bytes()
        self.send_response(int(resp.status))
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        for name, value in resp.headers:
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._serve("GET")

    def do_POST(self):
        self._serve("POST")

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)


class ApptHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, app: ApptApp, tls_context: Optional[ssl.SSLContext] = None):
        super().__init__(address, _Handler)
        self.app = app
        self.secure = tls_context is not None
        if tls_context is not None:
            self.socket = tls_context.wrap_socket(self.socket, server_side=True)

    @property
    def port(self) -> int:
        return self.server_address[1]


def server_tls_context(cert_path, key_path) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_cert_chain(cert_path, key_path)
    return ctx


def start_server(app: ApptApp, host: str = "127.0.0.1", port: int = 0,
                 tls_context: Optional[ssl.SSLContext] = None) -> tuple[ApptHTTPServer, threading.Thread]:
    server = ApptHTTPServer((host, port), app, tls_context)
    thread = threading.Thread(target=server.serve_forever, name="appt-http", daemon=True)
    thread.start()
    return server, thread


def write_self_signed_cert(out_dir, common_name: str = "localhost") -> tuple[Path, Path]:
    """Throwaway TLS certificate for loopback listeners (tests, harness)."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=1))
        .add_extension(
            x509.SubjectAlternativeName([
                x509.DNSName(common_name),
                x509.IPAddress(ipaddress.ip_address("127.0.0.1")),
            ]),
            critical=False,
        )
        .sign(key, hashes.SHA256())
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cert_path, key_path = out / "tls_cert.pem", out / "tls_key.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, serialization.NoEncryption()))
    return cert_path, key_path


def serve(config: ServiceConfig, insecure_dev: bool = False) -> None:
    tls = None
    if config.tls_cert_path and config.tls_key_path and not insecure_dev:
        tls = server_tls_context(config.tls_cert_path, config.tls_key_path)
    elif not insecure_dev:
        raise ValidationFailed("TLS cert/key not configured; pass --insecure-dev for a plaintext listener")
    app = build_app(config)
    host, port = config.host_port
    server = ApptHTTPServer((host, port), app, tls)
    log.info("listening on %s:%d (%s)", host, server.port, "https" if tls else "http, insecure-dev")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        app.save_snapshot()
