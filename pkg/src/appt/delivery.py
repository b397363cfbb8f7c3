"""Out-of-band delivery through an inspectable outbox.

The outbox stands in for an SMS gateway or mail relay: whatever a real phone
or mailbox would receive lands here, where tests and the harness read it.
"""
from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from .domain import Channel, is_email, is_mobile
from .errors import BadDestination

BODY_TEMPLATE = "APPT code: {otp} (valid 15 min)"


@dataclass(frozen=True)
class OutboundMessage:
    channel: Channel
    destination: str
    body: str
    sent_at: int
    receipt: int

    def to_json(self) -> dict:
        data = asdict(self)
        data["channel"] = self.channel.value
        return data


def check_destination(channel: Channel, destination: str) -> None:
    ok = is_mobile(destination) if channel is Channel.SMS else is_email(destination)
    if not ok:
        raise BadDestination(f"{destination!r} is not a valid {channel.value} destination")


def render_body(otp: str) -> str:
    return BODY_TEMPLATE.format(otp=otp)


class Outbox:
    """FIFO of dispatched messages, optionally mirrored to a JSON-lines sink."""

    def __init__(self, sink_path: Optional[str | Path] = None):
        self._pending: list[OutboundMessage] = []
        self._lock = threading.Lock()
        self._drain_lock = threading.Lock()
        self._next_receipt = 1
        self.sink_path = Path(sink_path) if sink_path else None

    def dispatch(self, channel: Channel, destination: str, body: str, now: int) -> int:
        channel = Channel(channel)
        check_destination(channel, destination)
        with self._lock:
            receipt = self._next_receipt
            self._next_receipt += 1
            msg = OutboundMessage(channel, destination, body, int(now), receipt)
            self._pending.append(msg)
            if self.sink_path is not None:
                with self.sink_path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(msg.to_json(), sort_keys=True) + "\n")
        return receipt

    def drain(self) -> list[OutboundMessage]:
        with self._drain_lock, self._lock:
            drained, self._pending = self._pending, []
        return drained

    def peek(self) -> list[OutboundMessage]:
        with self._lock:
            return list(self._pending)

    def __len__(self) -> int:
        with self._lock:
            return len(self._pending)


def read_sink(path: str | Path) -> list[OutboundMessage]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            data = json.loads(line)
            data["channel"] = Channel(data["channel"])
            out.append(OutboundMessage(**data))
    return out
