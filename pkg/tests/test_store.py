import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appt.domain import Status, UserRecord
from appt.errors import OtpAlreadyUsed, UnknownUser, ValidationFailed
from appt.store import MemoryStore, RateKey, RateScope

AQWERT = UserRecord("aqwert", b"hash", "9689563581", "aqwr@yml.co")


@pytest.fixture
def store():
    s = MemoryStore()
    s.upsert_user(AQWERT)
    s.upsert_user(UserRecord("twerffy", b"hash", "9689012561", "twer@yml.co"))
    return s


def active_rows(store, user):
    return [r for r in store.otp_rows(user) if r.status is Status.ACTIVE]


def test_upsert_and_lookup(store):
    assert store.lookup_user("aqwert") == AQWERT
    assert store.lookup_user("nosuchuser") is None


def test_second_upsert_wins(store):
    newer = UserRecord("aqwert", b"other", "9689563582", "new@yml.co")
    store.upsert_user(newer)
    assert store.lookup_user("aqwert") == newer


def test_invalid_user_rejected(store):
    with pytest.raises(ValidationFailed):
        store.upsert_user(UserRecord("", b"h", "9689563581", "aqwr@yml.co"))


def test_first_issue_creates_active_row(store):
    store.issue_otp("aqwert", b"h1", "tn-1", 0)
    (row,) = store.otp_rows("aqwert")
    assert row.status is Status.ACTIVE and row.token_name == "tn-1"


def test_second_issue_supersedes(store):
    store.issue_otp("aqwert", b"h1", "tn-1", 0)
    store.issue_otp("aqwert", b"h2", "tn-2", 5)
    rows = store.otp_rows("aqwert")
    assert [r.status for r in rows] == [Status.EXPIRED, Status.ACTIVE]
    assert len(active_rows(store, "aqwert")) == 1


def test_issue_unknown_user(store):
    with pytest.raises(UnknownUser):
        store.issue_otp("ghost", b"h", "tn", 0)


def test_token_names_never_reused(store):
    store.issue_otp("aqwert", b"h", "tn-1", 0)
    with pytest.raises(ValidationFailed):
        store.issue_otp("twerffy", b"h", "tn-1", 0)


def test_consume_returns_snapshot_and_expires(store):
    store.issue_otp("aqwert", b"h1", "tn-1", 3)
    snap = store.consume_otp("aqwert")
    assert snap.status is Status.ACTIVE and snap.otp_hash == b"h1" and snap.issued_at == 3
    assert store.otp_rows("aqwert")[-1].status is Status.EXPIRED


def test_consume_expired_row(store):
    # twerffy's row shows status 0 / "Expired" in the table
    store.issue_otp("twerffy", b"h", "tn-t", 0)
    store.consume_otp("twerffy")
    with pytest.raises(OtpAlreadyUsed):
        store.consume_otp("twerffy")


def test_consume_without_any_row(store):
    with pytest.raises(OtpAlreadyUsed):
        store.consume_otp("aqwert")


def test_consume_unknown_user(store):
    with pytest.raises(UnknownUser):
        store.consume_otp("ghost")


def test_concurrent_consume_is_once(store):
    store.issue_otp("aqwert", b"h", "tn", 0)
    results = []
    barrier = threading.Barrier(32)

    def worker():
        barrier.wait()
        try:
            results.append(store.consume_otp("aqwert"))
        except OtpAlreadyUsed:
            results.append(None)

    threads = [threading.Thread(target=worker) for _ in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(r is not None for r in results) == 1


def test_random_interleaving_keeps_single_active(store):
    rng = random.Random(11)
    counter = iter(range(10**6))
    errors = []

    def worker(seed):
        r = random.Random(seed)
        for _ in range(300):
            user = r.choice(["aqwert", "twerffy"])
            try:
                if r.random() < 0.5:
                    store.issue_otp(user, b"h", f"tn-{next(counter)}", 0)
                else:
                    store.consume_otp(user)
            except OtpAlreadyUsed:
                pass
            for u in ("aqwert", "twerffy"):
                if len(active_rows(store, u)) > 1:
                    errors.append(u)

    threads = [threading.Thread(target=worker, args=(rng.random(),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


@settings(max_examples=50)
@given(st.lists(st.tuples(st.sampled_from(["issue", "consume"]), st.sampled_from(["aqwert", "twerffy"])),
                max_size=40))
def test_sequences_never_revive_expired_rows(ops):
    s = MemoryStore()
    s.upsert_user(AQWERT)
    s.upsert_user(UserRecord("twerffy", b"h", "9689012561", "twer@yml.co"))
    expired_seen = set()
    for i, (op, user) in enumerate(ops):
        try:
            if op == "issue":
                s.issue_otp(user, b"h", f"tn-{i}", i)
            else:
                s.consume_otp(user)
        except OtpAlreadyUsed:
            pass
        for u in ("aqwert", "twerffy"):
            rows = s.otp_rows(u)
            assert sum(r.status is Status.ACTIVE for r in rows) <= 1
            for r in rows:
                if r.token_name in expired_seen:
                    assert r.status is Status.EXPIRED
                if r.status is Status.EXPIRED:
                    expired_seen.add(r.token_name)


def test_rate_threshold():
    s = MemoryStore()
    key = RateKey(RateScope.PER_USER, "a")
    assert all(s.rate_check(key, 0, 5, 60) for _ in range(5))
    assert not s.rate_check(key, 0, 5, 60)
    assert s.rate_check(key, 61, 5, 60)


def test_rate_keys_independent():
    s = MemoryStore()
    a, b = RateKey(RateScope.PER_USER, "a"), RateKey(RateScope.PER_USER, "b")
    for _ in range(6):
        s.rate_check(a, 0, 5, 60)
    assert s.rate_check(b, 0, 5, 60)
    assert s.rate_check(RateKey(RateScope.PER_IP, "a"), 0, 5, 60)


def test_rate_key_needs_value():
    with pytest.raises(ValidationFailed):
        RateKey(RateScope.PER_IP, "")


@settings(max_examples=100)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=60), st.integers(1, 5), st.integers(1, 10))
def test_rate_check_matches_recount(gaps, limit, window):
    # oracle: recount the full request log over (now - window, now]
    s = MemoryStore()
    key = RateKey(RateScope.PER_IP, "10.0.0.5")
    log, now = [], 0
    for gap in gaps:
        now += gap
        log.append(now)
        expected = sum(1 for t in log if now - window < t <= now) <= limit
        assert s.rate_check(key, now, limit, window) is expected


def test_snapshot_round_trip(tmp_path, store):
    store.issue_otp("aqwert", b"h1", "tn-1", 0)
    store.issue_otp("aqwert", b"h2", "tn-2", 7)
    store.consume_otp("aqwert")
    path = tmp_path / "appt.snap"
    store.save_snapshot(path)
    loaded = MemoryStore.load_snapshot(path)
    assert loaded.lookup_user("aqwert") == AQWERT
    assert loaded.otp_rows("aqwert") == store.otp_rows("aqwert")
    with pytest.raises(ValidationFailed):
        loaded.issue_otp("aqwert", b"h", "tn-1", 9)


def test_missing_snapshot_means_empty(tmp_path):
    assert MemoryStore.load_snapshot(tmp_path / "absent").usernames() == []


@pytest.mark.parametrize("blob", [b"NOTASNAP" + b"\x00" * 6, b"APPTSNAP\x00\x02\x00\x00\x00\x00"])
def test_bad_snapshot_rejected(tmp_path, blob):
    p = tmp_path / "bad"
    p.write_bytes(blob)
    with pytest.raises(ValidationFailed):
        MemoryStore.load_snapshot(p)


def test_truncated_snapshot_rejected(tmp_path, store):
    p = tmp_path / "s"
    store.save_snapshot(p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(Exception):
        MemoryStore.load_snapshot(p)
