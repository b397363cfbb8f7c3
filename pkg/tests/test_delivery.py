import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appt.delivery import Outbox, read_sink, render_body
from appt.domain import Channel
from appt.errors import BadDestination


def test_sms_dispatch_lands_in_outbox():
    box = Outbox()
    receipt = box.dispatch(Channel.SMS, "9689563581", "Your code: 895$%6!", 0)
    assert box.peek()[-1].destination == "9689563581"
    assert box.peek()[-1].receipt == receipt


def test_email_dispatch():
    assert Outbox().dispatch(Channel.EMAIL, "aqwr@yml.co", render_body("x"), 0) == 1


def test_shape_mismatch():
    with pytest.raises(BadDestination):
        Outbox().dispatch(Channel.SMS, "aqwr@yml.co", "b", 0)
    with pytest.raises(BadDestination):
        Outbox().dispatch(Channel.EMAIL, "9689563581", "b", 0)


def test_drain_is_fifo_and_removes():
    box = Outbox()
    box.dispatch(Channel.SMS, "9689563581", "one", 0)
    box.dispatch("email", "aqwr@yml.co", "two", 1)
    assert [m.body for m in box.drain()] == ["one", "two"]
    assert box.drain() == []


def test_empty_drain():
    assert Outbox().drain() == []


def test_body_template():
    assert render_body("895$%6!") == "APPT code: 895$%6! (valid 15 min)"


@given(st.lists(st.text(min_size=1, max_size=10), max_size=30), st.lists(st.integers(0, 30), max_size=5))
def test_every_message_surfaces_once_in_order(bodies, drain_points):
    box = Outbox()
    drained = []
    for i, body in enumerate(bodies):
        box.dispatch(Channel.SMS, "9689563581", body, i)
        if i in drain_points:
            drained.extend(box.drain())
    drained.extend(box.drain())
    assert [m.body for m in drained] == bodies
    assert [m.receipt for m in drained] == list(range(1, len(bodies) + 1))


def test_concurrent_dispatch_unique_receipts():
    box = Outbox()

    def worker():
        for _ in range(200):
            box.dispatch(Channel.SMS, "9689563581", "b", 0)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    receipts = [m.receipt for m in box.drain()]
    assert receipts == sorted(receipts) and len(set(receipts)) == 1600


def test_sink_file(tmp_path):
    sink = tmp_path / "outbox.jsonl"
    box = Outbox(sink)
    box.dispatch(Channel.SMS, "9689563581", "APPT code: a (valid 15 min)", 12)
    box.dispatch(Channel.EMAIL, "aqwr@yml.co", "b", 13)
    lines = [json.loads(line) for line in sink.read_text().splitlines()]
    assert lines[0] == {"channel": "sms", "destination": "9689563581",
                        "body": "APPT code: a (valid 15 min)", "sent_at": 12, "receipt": 1}
    assert [m.receipt for m in read_sink(sink)] == [1, 2]
