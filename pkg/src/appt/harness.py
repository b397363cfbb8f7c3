"""Scripted phishing scenarios replayed against a fresh gateway instance.

Each scenario plays a victim and an attacker through the HTTP surface and
records every step. The forged site itself is not simulated; whatever the
victim types into it is handed straight to the attacker.

By default requests are dispatched in-process; ``over_http=True`` starts a
TLS listener plus a plaintext one on loopback and sends real requests. In
that mode the client address is carried in ``X-Forwarded-For`` and the
service trusts it because the peer is the configured loopback proxy.
"""
from __future__ import annotations

import enum
import functools
import http.client
import json
import random
import re
import ssl
import tempfile
import uuid
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from . import crypto
from .delivery import Outbox
from .domain import DenyReason, EncryptedToken, TestClock, TokenClaims
from .otp import generate_otp
from .errors import UnknownScenario
from .service import (
    COOKIE_NAME,
    ApptApp,
    ServiceConfig,
    build_app,
    server_tls_context,
    start_server,
    write_self_signed_cert,
)

START_TIME = 1_700_000_000
LOOPBACK = "127.0.0.1"
VICTIM_IP = "10.0.0.5"
ATTACKER_IP = "172.16.0.9"
ATTACKER_ALT_IP = "172.16.0.10"
CHALLENGE_ANSWER = "two words"

# the provisioned-user table; the last row is the attacker's own account
FIXTURE_USERS = [
    ("aqwert", "P2323!23", "9689563581", "aqwr@yml.co"),
    ("twerffy", "6534g&*", "9689012561", "twer@yml.co"),
    ("ttyuuii", "P#$2334", "9669525452", "rtyu@yml.co"),
    ("yuhfry", "Ad#%$8", "9689123565", "yuhf@yml.co"),
    ("ikioljui", "rT%^$11", "9678595231", "ikio@yml.co"),
    ("mallory", "m4ll0ry!", "9600000001", "mallory@evil.example"),
]
VICTIM = FIXTURE_USERS[0]
ATTACKER_ACCOUNT = FIXTURE_USERS[-1]

_OTP_RE = re.compile(r"APPT code: (\S+) ")


class Verdict(enum.Enum):
    ATTACK_BLOCKED = "AttackBlocked"
    ATTACK_SUCCEEDED = "AttackSucceeded"


@dataclass(frozen=True)
class Step:
    actor: str
    action: str
    decision: str


@dataclass
class ScenarioReport:
    scenario: str
    seed: int
    steps: list[Step] = field(default_factory=list)
    verdict: Verdict = Verdict.ATTACK_BLOCKED
    legit_user_outcome: str = ""

    def attacker_decisions(self) -> list[str]:
        return [s.decision for s in self.steps if s.actor == "attacker"]

    def denied_reasons(self) -> set[str]:
        found = set()
        for s in self.steps:
            m = re.fullmatch(r"Denied\((\w+)\)", s.decision)
            if m:
                found.add(m.group(1))
        return found

    def to_json(self) -> dict:
        data = asdict(self)
        data["verdict"] = self.verdict.value
        return data

    def to_table(self) -> str:
        width = max((len(s.action) for s in self.steps), default=6)
        lines = [f"scenario: {self.scenario} (seed {self.seed})",
                 f"{'#':>3}  {'actor':<9} {'action':<{width}}  decision"]
        for i, s in enumerate(self.steps, 1):
            lines.append(f"{i:>3}  {s.actor:<9} {s.action:<{width}}  {s.decision}")
        lines.append(f"verdict: {self.verdict.value}")
        lines.append(f"legit user: {self.legit_user_outcome}")
        return "\n".join(lines)


@functools.lru_cache(maxsize=1)
def harness_keypair() -> crypto.Keypair:
    # one key per process; ciphertexts never appear in reports
    return crypto.generate_keypair(2048)


def harness_config() -> ServiceConfig:
    # low PBKDF2 cost keeps scenario runs fast; never use this in production
    return ServiceConfig(trusted_proxy=LOOPBACK, hash_iterations=1_000)


# -- transports --------------------------------------------------------------


@dataclass
class HttpResult:
    status: int
    body: dict
    headers: list[tuple[str, str]]

    def header(self, name: str) -> Optional[str]:
        for key, value in self.headers:
            if key.lower() == name.lower():
                return value
        return None


class InProcessClient:
    def __init__(self, app: ApptApp):
        self.app = app

    def request(self, method, path, *, body=None, headers=None, ip=LOOPBACK, secure=True) -> HttpResult:
        raw = json.dumps(body).encode() if body is not None else b""
        resp = self.app.handle(method, path, dict(headers or {}), raw, ip, secure)
        return HttpResult(int(resp.status), resp.body, list(resp.headers))

    def close(self):
        pass


class LoopbackHttpClient:
    """Sends real requests to a TLS listener and a plaintext listener."""

    def __init__(self, app: ApptApp):
        self._tmp = tempfile.TemporaryDirectory(prefix="appt-harness-")
        cert, key = write_self_signed_cert(self._tmp.name)
        self._tls_server, _ = start_server(app, LOOPBACK, 0, server_tls_context(cert, key))
        self._plain_server, _ = start_server(app, LOOPBACK, 0, None)
        self._client_ctx = ssl.create_default_context(cafile=str(cert))

    def request(self, method, path, *, body=None, headers=None, ip=LOOPBACK, secure=True) -> HttpResult:
        hdrs = dict(headers or {})
        if ip != LOOPBACK:
            hdrs["X-Forwarded-For"] = ip
        raw = json.dumps(body).encode() if body is not None else None
        if raw is not None:
            hdrs["Content-Type"] = "application/json"
        if secure:
            conn = http.client.HTTPSConnection(LOOPBACK, self._tls_server.port, context=self._client_ctx, timeout=10)
        else:
            conn = http.client.HTTPConnection(LOOPBACK, self._plain_server.port, timeout=10)
        try:
            conn.request(method, path, body=raw, headers=hdrs)
            resp = conn.getresponse()
            data = resp.read()
            return HttpResult(resp.status, json.loads(data or b"{}"), resp.getheaders())
        finally:
            conn.close()

    def close(self):
        for server in (self._tls_server, self._plain_server):
            server.shutdown()
            server.server_close()
        self._tmp.cleanup()


# -- scenario world ----------------------------------------------------------


class World:
    """A fresh gateway plus the actors' view of it (phones, cookie jars)."""

    def __init__(self, seed: int, over_http: bool = False):
        self.rng = random.Random(seed)
        self.clock = TestClock(START_TIME)
        self.outbox = Outbox()
        self.keypair = harness_keypair()
        self.app = build_app(
            harness_config(), keypair=self.keypair, outbox=self.outbox,
            clock=self.clock, entropy=random.Random(self.rng.getrandbits(64)),
        )
        self.client = LoopbackHttpClient(self.app) if over_http else InProcessClient(self.app)
        self.report: ScenarioReport
        self.inboxes: dict[str, list[str]] = {}
        self._session = ""
        for username, password, mobile, email in FIXTURE_USERS:
            r = self.client.request("POST", "/admin/users", body={
                "username": username, "password": password, "mobile": mobile, "email": email})
            if r.status != 201:
                raise RuntimeError(f"provisioning {username} failed: {r.body}")

    def close(self):
        self.client.close()

    def record(self, actor: str, action: str, decision: str) -> str:
        self.report.steps.append(Step(actor, action, decision))
        return decision

    # actions

    def get_password(self, actor, user, *, password=None, answer=CHALLENGE_ANSWER, ip, channel="sms",
                     label="request OTP") -> Optional[str]:
        """Flow A; returns the token cookie value when issued."""
        username, real_password, _, _ = user
        r = self.client.request("POST", "/getpassword", ip=ip, body={
            "username": username,
            "password": real_password if password is None else password,
            "channel": channel,
            "challenge_answer": answer,
        })
        if r.status == 200:
            self.record(actor, label, "Issued")
            set_cookie = r.header("Set-Cookie") or ""
            m = re.match(rf"{COOKIE_NAME}=([^;]*);", set_cookie)
            return m.group(1) if m else None
        self.record(actor, label, f"Denied({r.body.get('reason')})")
        return None

    def login(self, actor, username, otp, cookie, *, ip, secure=True, label="login") -> str:
        headers = {"Cookie": f"lang=en; {COOKIE_NAME}={cookie}"} if cookie is not None else {}
        r = self.client.request("POST", "/login", ip=ip, secure=secure, headers=headers,
                                body={"username": username, "otp": otp})
        if r.status == 200:
            self._session = r.body["session_id"]
            return self.record(actor, label, "Granted")
        return self.record(actor, label, f"Denied({r.body.get('reason')})")

    def open_protected(self, actor, ip) -> str:
        r = self.client.request("GET", "/protected", ip=ip, headers={"Authorization": f"Bearer {self._session}"})
        return self.record(actor, "open protected page", "Allowed" if r.status == 200 else f"Refused({r.status})")

    def read_phone(self, actor, user) -> Optional[str]:
        """Deliver pending messages and return the newest code for ``user``."""
        for msg in self.outbox.drain():
            self.inboxes.setdefault(msg.destination, []).append(msg.body)
        inbox = self.inboxes.get(user[2], [])
        self.record(actor, "read SMS inbox", f"{len(inbox)} message(s)")
        if not inbox:
            return None
        return _OTP_RE.match(inbox[-1]).group(1)

    def otp_status(self, username) -> str:
        rows = self.app.gate.store.otp_rows(username)
        return rows[-1].status.value if rows else "none"


# -- scenarios ---------------------------------------------------------------


def _happy_path(w: World) -> str:
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    decision = w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP)
    w.open_protected("victim", VICTIM_IP)
    return "granted" if decision == "Granted" else f"denied:{decision}"


def _forged_site_otp_replay(w: World) -> str:
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("victim", "type username+OTP into forged login page", "Captured")
    w.login("attacker", VICTIM[0], otp, None, ip=ATTACKER_IP, label="replay phished OTP (no token)")
    w.record("system", "check stolen OTP row", w.otp_status(VICTIM[0]))
    w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP, label="login at real site")
    w.login("attacker", VICTIM[0] + "_", otp, None, ip=ATTACKER_IP, label="probe look-alike username")
    return f"stolen OTP spent ({w.otp_status(VICTIM[0])}); victim must request a new code"


def _token_ip_mismatch(w: World) -> str:
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal token cookie and OTP", "Captured")
    w.login("attacker", VICTIM[0], otp, cookie, ip=ATTACKER_IP, label="replay cookie+OTP from own host")

    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal token cookie and OTP", "Captured")
    w.login("attacker", VICTIM[0], otp, cookie, ip=ATTACKER_IP, secure=False,
            label="replay cookie+OTP over plaintext HTTP")

    w.get_password("attacker", ATTACKER_ACCOUNT, ip=ATTACKER_IP, label="request OTP for own account")
    own_otp = w.read_phone("attacker", ATTACKER_ACCOUNT)
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    w.record("attacker", "steal token cookie", "Captured")
    w.login("attacker", ATTACKER_ACCOUNT[0], own_otp, cookie, ip=ATTACKER_IP,
            label="own OTP + victim's cookie")

    otp = w.read_phone("victim", VICTIM)
    decision = w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP)
    return "granted" if decision == "Granted" else f"denied:{decision}"


def _expired_token(w: World) -> str:
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal token cookie and OTP", "Captured")
    w.clock.advance(901)
    w.record("system", "advance clock", "+901 s")
    w.login("attacker", VICTIM[0], otp, cookie, ip=VICTIM_IP, label="replay from victim network after 901 s")
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    decision = w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP)
    return "granted" if decision == "Granted" else f"denied:{decision}"


def _otp_reuse(w: World) -> str:
    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    decision = w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP)
    w.record("attacker", "capture used OTP and cookie", "Captured")
    w.login("attacker", VICTIM[0], otp, cookie, ip=VICTIM_IP, label="replay used OTP")

    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    real = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal token cookie", "Captured")
    guess = generate_otp(w.app.gate.config.otp_policy, w.rng)
    while guess == real:
        guess = generate_otp(w.app.gate.config.otp_policy, w.rng)
    w.login("attacker", VICTIM[0], guess, cookie, ip=VICTIM_IP, label="guess OTP with stolen cookie")
    return "granted" if decision == "Granted" else f"denied:{decision}"


def _tampered_token(w: World) -> str:
    public = w.keypair.public_only()
    now = w.clock.now

    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal token cookie and OTP", "Captured")
    raw = bytearray(EncryptedToken.from_encoded(cookie).ciphertext)
    pos = w.rng.randrange(len(raw))
    raw[pos] ^= 1 << w.rng.randrange(8)
    w.login("attacker", VICTIM[0], otp, EncryptedToken(bytes(raw)).encoded, ip=VICTIM_IP,
            label=f"flip bit in ciphertext byte {pos}")

    w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    w.record("attacker", "steal OTP", "Captured")
    guessed_name = str(uuid.UUID(int=w.rng.getrandbits(128)))
    forged = crypto.encrypt_token(TokenClaims(
        guessed_name, VICTIM[0], VICTIM[3], ATTACKER_IP, now(), now() + 900), public)
    w.login("attacker", VICTIM[0], otp, forged.encoded, ip=ATTACKER_IP,
            label="forge token with public key, guessed token name")

    w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    leaked = w.app.gate.store.active_otp(VICTIM[0]).token_name
    w.record("attacker", "steal OTP and leaked token name", "Captured")
    forged = crypto.encrypt_token(TokenClaims(
        leaked, ATTACKER_ACCOUNT[0], ATTACKER_ACCOUNT[3], VICTIM_IP, now(), now() + 900), public)
    w.login("attacker", VICTIM[0], otp, forged.encoded, ip=VICTIM_IP,
            label="forge token with leaked name, own username")

    cookie = w.get_password("victim", VICTIM, ip=VICTIM_IP)
    otp = w.read_phone("victim", VICTIM)
    decision = w.login("victim", VICTIM[0], otp, cookie, ip=VICTIM_IP)
    return "granted" if decision == "Granted" else f"denied:{decision}"


FLOOD_WRONG_ANSWERS = 20
FLOOD_TARGET_WRONG_PW = FIXTURE_USERS[1]


def _flood_otp_requests(w: World) -> str:
    phished_password = VICTIM[1]
    w.record("victim", "type password into forged OTP-retrieval page", "Captured")
    for i in range(FLOOD_WRONG_ANSWERS):
        w.get_password("attacker", VICTIM, password=phished_password, answer=f"bot guess {i}",
                       ip=ATTACKER_IP, label="request OTP, wrong challenge answer")
    w.read_phone("victim", VICTIM)
    w.get_password("attacker", FLOOD_TARGET_WRONG_PW, password="letmein", ip=ATTACKER_ALT_IP,
                   label="credential stuffing, wrong password")
    limit = w.app.gate.config.rate_limit
    for _ in range(limit + 1):
        w.get_password("attacker", VICTIM, password=phished_password, ip=ATTACKER_IP,
                       label="request OTP, solved challenge")
    w.read_phone("victim", VICTIM)
    received = len(w.inboxes.get(VICTIM[2], []))
    return f"received {received} unsolicited code(s) (capped at rate limit {limit})"



@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    run: Callable[[World], str]
    control: bool = False


SCENARIOS: dict[str, Scenario] = {s.name: s for s in [
    Scenario("forged-site-otp-replay",
             "attacker replays an OTP phished via a forged login form, without the machine token",
             _forged_site_otp_replay),
    Scenario("token-ip-mismatch",
             "attacker steals cookie and OTP and replays them from another host",
             _token_ip_mismatch),
    Scenario("expired-token",
             "stolen cookie and OTP replayed 901 s after issue",
             _expired_token),
    Scenario("otp-reuse",
             "attacker replays an OTP the victim already used, then guesses one",
             _otp_reuse),
    Scenario("tampered-token",
             "attacker flips ciphertext bits and forges tokens with the public key",
             _tampered_token),
    Scenario("flood-otp-requests",
             "attacker hammers OTP retrieval with bad challenges, then past the rate limit",
             _flood_otp_requests),
    Scenario("happy-path",
             "legitimate user completes both flows (control)",
             _happy_path, control=True),
]}


def list_scenarios() -> list[tuple[str, str]]:
    return [(s.name, s.description) for s in SCENARIOS.values()]


def run_scenario(name: str, seed: int = 1, over_http: bool = False) -> ScenarioReport:
    try:
        scenario = SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(name) from None
    world = World(seed, over_http)
    world.report = ScenarioReport(scenario=name, seed=seed)
    try:
        world.report.legit_user_outcome = scenario.run(world)
    finally:
        world.close()
    report = world.report
    if "Granted" in report.attacker_decisions():
        report.verdict = Verdict.ATTACK_SUCCEEDED
    return report


def scenario_passed(report: ScenarioReport) -> bool:
    """Exit-status predicate: attacks blocked, and the control run succeeded."""
    if report.verdict is not Verdict.ATTACK_BLOCKED:
        return False
    if SCENARIOS[report.scenario].control:
        return report.legit_user_outcome == "granted"
    return True


ALL_DENY_REASONS = {r.value for r in DenyReason}
