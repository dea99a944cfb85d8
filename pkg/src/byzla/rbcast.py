"""Byzantine reliable broadcast, Bracha style.

One :class:`RbcastInstance` exists per ``(sender, tag)`` at every process.
Thresholds for ``n`` processes tolerating ``f`` faults:

* echo after the first INIT from the tag's sender,
* ready after ``(n+f)//2 + 1`` matching ECHOes or ``f+1`` matching READYs,
* deliver after ``2f+1`` matching READYs.

A correct process delivers at most one payload per tag and all correct
processes deliver the same one, even when the sender equivocates.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from byzla.simnet import Node

__all__ = [
    "ECHO",
    "INIT",
    "READY",
    "RbFrame",
    "RbcastEndpoint",
    "RbcastInstance",
    "Tag",
    "deliver_threshold",
    "echo_threshold",
    "ready_threshold",
]

INIT, ECHO, READY = "INIT", "ECHO", "READY"
_FRAME_CODE = {INIT: 1, ECHO: 2, READY: 3}
_TAG = struct.Struct(">QBqQQ")
_TAG_KIND = {"disclosure": 0, "ack": 1}


def echo_threshold(n: int, f: int) -> int:
    return (n + f) // 2 + 1


def ready_threshold(n: int, f: int) -> int:
    return f + 1


def deliver_threshold(n: int, f: int) -> int:
    return 2 * f + 1


@dataclass(frozen=True, order=True)
class Tag:
    """Names one broadcast instance.

    ``disclosure`` instances carry a round; ``ack`` instances additionally
    carry the request timestamp and the proposer the ack is destined to.
    """

    sender: int
    kind: str
    round: int = 0
    ts: int = 0
    destination: int = 0

    def encode(self) -> bytes:
        return _TAG.pack(self.sender, _TAG_KIND[self.kind], self.round, self.ts, self.destination)

    def label(self) -> str:
        if self.kind == "disclosure":
            return f"{self.sender}/disclosure/{self.round}"
        return f"{self.sender}/ack/{self.round}/{self.ts}/{self.destination}"

    @classmethod
    def disclosure(cls, sender: int, round: int = 0) -> Tag:
        return cls(sender, "disclosure", round)

    @classmethod
    def ack(cls, sender: int, round: int, ts: int, destination: int) -> Tag:
        return cls(sender, "ack", round, ts, destination)


@dataclass(frozen=True)
class RbFrame:
    phase: str
    tag: Tag
    payload: bytes

    @property
    def kind(self) -> str:
        return f"rb_{self.phase.lower()}"

    def encode(self) -> bytes:
        return bytes([_FRAME_CODE[self.phase]]) + self.tag.encode() + self.payload


class RbcastInstance:
    """Echo/ready state for one tag at one process."""

    __slots__ = ("n", "f", "tag", "init_payload", "echoes", "readies", "echo_from", "ready_from", "echoed", "readied", "delivered")

    def __init__(self, n: int, f: int, tag: Tag) -> None:
        self.n = n
        self.f = f
        self.tag = tag
        self.init_payload: bytes | None = None
        self.echoes: dict[bytes, set[int]] = {}
        self.readies: dict[bytes, set[int]] = {}
        self.echo_from: set[int] = set()
        self.ready_from: set[int] = set()
        self.echoed = False
        self.readied = False
        self.delivered: bytes | None = None

    def handle(self, src: int, phase: str, payload: bytes) -> tuple[list[tuple[str, bytes]], bytes | None]:
        """Apply one frame; returns frames to broadcast and an optional delivery."""
        out: list[tuple[str, bytes]] = []
        if phase == INIT:
            if src != self.tag.sender or self.init_payload is not None:
                return out, None
            self.init_payload = payload
            if not self.echoed:
                self.echoed = True
                out.append((ECHO, payload))
        elif phase == ECHO:
            if src in self.echo_from:
                return out, None
            self.echo_from.add(src)
            self.echoes.setdefault(payload, set()).add(src)
            if not self.readied and len(self.echoes[payload]) >= echo_threshold(self.n, self.f):
                self.readied = True
                out.append((READY, payload))
        elif phase == READY:
            if src in self.ready_from:
                return out, None
            self.ready_from.add(src)
            self.readies.setdefault(payload, set()).add(src)
            count = len(self.readies[payload])
            if not self.readied and count >= ready_threshold(self.n, self.f):
                self.readied = True
                out.append((READY, payload))
            if self.delivered is None and count >= deliver_threshold(self.n, self.f):
                self.delivered = payload
                return out, payload
        else:
            raise ValueError(f"unknown rbcast phase {phase!r}")
        return out, None


class RbcastEndpoint:
    """All broadcast instances seen by one process."""

    def __init__(self, node: Node, n: int, f: int) -> None:
        self.node = node
        self.owner = node.id
        self.n = n
        self.f = f
        self.instances: dict[Tag, RbcastInstance] = {}
        self.opened: set[Tag] = set()
        self.deliveries: dict[Tag, bytes] = {}

    def broadcast(self, tag: Tag, payload: bytes) -> None:
        if tag.sender != self.owner:
            raise AssertionError(f"process {self.owner} cannot broadcast under {tag.label()}")
        if tag in self.opened:
            raise AssertionError(f"tag {tag.label()} reused by its sender")
        self.opened.add(tag)
        self.node.port.broadcast(RbFrame(INIT, tag, payload), range(self.n))

    def handle(self, src: int, frame: RbFrame) -> bytes | None:
        inst = self.instances.get(frame.tag)
        if inst is None:
            inst = self.instances[frame.tag] = RbcastInstance(self.n, self.f, frame.tag)
        out, delivered = inst.handle(src, frame.phase, frame.payload)
        for phase, payload in out:
            self.node.port.broadcast(RbFrame(phase, frame.tag, payload), range(self.n))
        if delivered is not None:
            if frame.tag in self.deliveries:
                raise AssertionError(f"second delivery for {frame.tag.label()}")
            self.deliveries[frame.tag] = delivered
            self.node.port.emit("rb-deliver", delivered, tag=frame.tag.label(), sender=frame.tag.sender)
        return delivered
