import random
from pathlib import Path

import pytest

from appt import crypto
from appt.delivery import Outbox
from appt.domain import EncryptedToken, TestClock
from appt.gate import ExpectedAnswerChallenge, Gate, GateConfig
from appt.store import MemoryStore

DATA = Path(__file__).parent / "data"
T0 = 1_700_000_000
FAST_HASH = 1_000

# rows of the provisioned-user table
PAPER_USERS = [
    ("aqwert", "P2323!23", "9689563581", "aqwr@yml.co"),
    ("twerffy", "6534g&*", "9689012561", "twer@yml.co"),
    ("ttyuuii", "P#$2334", "9669525452", "rtyu@yml.co"),
    ("yuhfry", "Ad#%$8", "9689123565", "yuhf@yml.co"),
    ("ikioljui", "rT%^$11", "9678595231", "ikio@yml.co"),
]


@pytest.fixture(scope="session")
def keypair():
    return crypto.load_keypair(DATA / "token_public.pem", DATA / "token_private.pem")


@pytest.fixture(scope="session")
def frozen_token():
    return EncryptedToken.from_encoded((DATA / "frozen_token.b64").read_text().strip())


@pytest.fixture
def clock():
    return TestClock(T0)


class Env:
    """A gate wired to a test clock, an outbox and a store."""

    def __init__(self, keypair, clock, **config):
        config.setdefault("hash_iterations", FAST_HASH)
        self.clock = clock
        self.store = MemoryStore()
        self.outbox = Outbox()
        self.keypair = keypair
        self.gate = Gate(self.store, self.outbox, keypair, GateConfig(**config),
                         ExpectedAnswerChallenge("two words"), random.Random(7))
        for row in PAPER_USERS:
            self.gate.provision_user(*row)

    def flow_a(self, user="aqwert", ip="10.0.0.5", channel="sms"):
        """Run Flow A; return (otp, token) as the legitimate user sees them."""
        password = dict((u, p) for u, p, *_ in PAPER_USERS)[user]
        issued = self.gate.request_otp(user, password, channel, "two words", ip, self.clock.now())
        msg = self.outbox.drain()[-1]
        otp = msg.body.split("APPT code: ", 1)[1].split(" ", 1)[0]
        return otp, issued.token

    def login(self, user, otp, token, ip="10.0.0.5", secure=True):
        return self.gate.authenticate(user, otp, token, ip, secure, self.clock.now())


@pytest.fixture
def env(keypair, clock):
    return Env(keypair, clock)


@pytest.fixture
def make_env(keypair, clock):
    def factory(**config):
        return Env(keypair, clock, **config)
    return factory


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
