"""In-simulation pub/sub: point-to-point, group, and broadcast topics.

Delivery is deterministic: a message published at step t becomes due at
t + 1 and is handed to each recipient the next time that agent reaches a
decision point (offline agents therefore pick broadcasts up at their next
login). Exactly-once per (message, recipient).

An optional bridge mirrors broadcast traffic to an external MQTT broker;
the simulation never depends on the bridge succeeding.
"""

from __future__ import annotations

import heapq
import socket
import struct
from dataclasses import dataclass
from typing import Callable, Optional

SYSTEM_SENDER = "system"


class MessagingError(Exception):
    pass


class UnknownGroup(MessagingError):
    pass


class UnknownRecipient(MessagingError):
    pass


@dataclass(frozen=True)
class Message:
    msg_id: int
    topic: str            # "p2p:<uid>" | "group:<gid>" | "broadcast"
    sender: str           # "agent:<uid>" or "system"
    body: str
    sent_step: int
    deliver_step: int     # always sent_step + 1

    def to_dict(self) -> dict:
        return {
            "msg_id": self.msg_id, "topic": self.topic, "sender": self.sender,
            "body": self.body, "sent_step": self.sent_step,
            "deliver_step": self.deliver_step,
        }


def p2p_topic(uid: int) -> str:
    return f"p2p:{uid}"


def group_topic(gid: str) -> str:
    return f"group:{gid}"


BROADCAST = "broadcast"


class MessageBus:
    """Per-recipient queues ordered by (deliver_step, msg_id)."""

    def __init__(self, uids: list[int], groups: Optional[dict[str, list[int]]] = None):
        self._uids = set(uids)
        self._groups = {g: sorted(set(m)) for g, m in (groups or {}).items()}
        self._queues: dict[int, list[tuple[int, int, Message]]] = {
            u: [] for u in uids
        }
        self._next_msg_id = 1
        self.on_broadcast: Optional[Callable[[Message], None]] = None

    def register(self, uid: int) -> None:
        if uid not in self._uids:
            self._uids.add(uid)
            self._queues[uid] = []

    def _recipients(self, topic: str) -> list[int]:
        if topic == BROADCAST:
            return sorted(self._uids)
        kind, _, arg = topic.partition(":")
        if kind == "p2p":
            uid = int(arg)
            if uid not in self._uids:
                raise UnknownRecipient(f"no agent {uid}")
            return [uid]
        if kind == "group":
            if arg not in self._groups:
                raise UnknownGroup(f"no group {arg!r}")
            return self._groups[arg]
        raise MessagingError(f"bad topic {topic!r}")

    def publish(self, topic: str, sender: str, body: str, sent_step: int) -> int:
        recipients = self._recipients(topic)
        msg = Message(self._next_msg_id, topic, sender, body,
                      sent_step, sent_step + 1)
        self._next_msg_id += 1
        for uid in recipients:
            heapq.heappush(self._queues[uid], (msg.deliver_step, msg.msg_id, msg))
        if topic == BROADCAST and self.on_broadcast is not None:
            self.on_broadcast(msg)
        return msg.msg_id

    def drain(self, uid: int, step: int) -> list[Message]:
        """Pop and return everything due at or before `step`, in order."""
        q = self._queues.get(uid)
        if not q:
            return []
        out = []
        while q and q[0][0] <= step:
            out.append(heapq.heappop(q)[2])
        return out

    def pending(self, uid: int) -> int:
        return len(self._queues.get(uid, ()))

    # -- snapshot --------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "next_msg_id": self._next_msg_id,
            "queues": {
                str(uid): [m.to_dict() for _, _, m in sorted(q)]
                for uid, q in self._queues.items() if q
            },
        }

    def restore(self, snap: dict) -> None:
        self._next_msg_id = snap["next_msg_id"]
        for uid, q in self._queues.items():
            q.clear()
        for uid_s, msgs in snap["queues"].items():
            uid = int(uid_s)
            for d in msgs:
                m = Message(d["msg_id"], d["topic"], d["sender"], d["body"],
                            d["sent_step"], d["deliver_step"])
                heapq.heappush(self._queues[uid], (m.deliver_step, m.msg_id, m))


# --- MQTT bridge --------------------------------------------------------

class MqttError(Exception):
    pass


def _encode_string(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(">H", len(b)) + b


def _encode_length(n: int) -> bytes:
    # MQTT variable-length remaining-length encoding.
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n:
            byte |= 0x80
        out.append(byte)
        if not n:
            return bytes(out)


class MqttPublisher:
    """Minimal MQTT 3.1.1 client: CONNECT, QoS-0 PUBLISH, DISCONNECT.

    Enough protocol to feed broadcast telemetry to a standard broker;
    intentionally nothing more (no subscriptions, no QoS > 0).
    """

    def __init__(self, host: str, port: int = 1883, client_id: str = "mmosim",
                 timeout: float = 2.0):
        self.host = host
        self.port = port
        self.client_id = client_id
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None

    def connect(self) -> None:
        sock = socket.create_connection((self.host, self.port), self.timeout)
        sock.settimeout(self.timeout)
        var = (
            _encode_string("MQTT")
            + bytes([4])          # protocol level 3.1.1
            + bytes([0x02])       # clean session
            + struct.pack(">H", 30)  # keepalive seconds
            + _encode_string(self.client_id)
        )
        sock.sendall(bytes([0x10]) + _encode_length(len(var)) + var)
        ack = sock.recv(4)
        if len(ack) < 4 or ack[0] != 0x20 or ack[3] != 0x00:
            sock.close()
            raise MqttError(f"broker refused connection: {ack.hex()}")
        self._sock = sock

    def publish(self, topic: str, payload: str) -> None:
        if self._sock is None:
            raise MqttError("not connected")
        body = _encode_string(topic) + payload.encode("utf-8")
        self._sock.sendall(bytes([0x30]) + _encode_length(len(body)) + body)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.sendall(bytes([0xE0, 0x00]))
                self._sock.close()
            except OSError:
                pass
            self._sock = None


class BroadcastBridge:
    """Mirrors every broadcast to `sim/<run_id>/broadcast` through the
    bounded outbound pool. Failures are counted, never raised."""

    def __init__(self, run_id: str, publisher: MqttPublisher, pool):
        self.topic = f"sim/{run_id}/broadcast"
        self.publisher = publisher
        self.pool = pool
        self.published = 0
        self.failed = 0

    def __call__(self, message: Message) -> None:
        import json

        try:
            with self.pool.slot():
                self.publisher.publish(self.topic, json.dumps(message.to_dict()))
            self.published += 1
        except Exception:
            self.failed += 1
