"""Shared plumbing for protocol processes."""

from __future__ import annotations

from typing import Any

from byzla.lattice import AdmissibilityPredicate, LatticeValue, accept_all
from byzla.rbcast import RbcastEndpoint, RbFrame, Tag
from byzla.simnet import Node


def quorum(n: int, f: int) -> int:
    """Byzantine quorum size; any two quorums share a correct process when n >= 3f+1."""
    return (n + f) // 2 + 1


class Process(Node):
    """A protocol process with a reliable-broadcast endpoint.

    Incoming rbcast frames are routed through the endpoint; everything else
    goes to :meth:`on_direct`. After every event :meth:`progress` re-checks
    the process's guards, so a quiescent network means no enabled guard.
    """

    def __init__(self, node_id: int, n: int, f: int, admissible: AdmissibilityPredicate = accept_all) -> None:
        super().__init__(node_id)
        self.n = n
        self.f = f
        self.quorum = quorum(n, f)
        self.admissible = admissible
        self.rb = RbcastEndpoint(self, n, f)

    def on_message(self, src: int, msg: Any) -> None:
        if isinstance(msg, RbFrame):
            payload = self.rb.handle(src, msg)
            if payload is not None:
                self.on_rb_deliver(msg.tag, payload)
        else:
            self.on_direct(src, msg)
        self.progress()

    def on_rb_deliver(self, tag: Tag, payload: bytes) -> None:
        pass

    def on_direct(self, src: int, msg: Any) -> None:
        pass

    def progress(self) -> None:
        pass

    def all_admissible(self, value: LatticeValue) -> bool:
        return all(self.admissible(item) for item in value)

    def emit(self, kind: str, payload: bytes | None = None, **detail: Any) -> None:
        if self.port is not None:
            self.port.emit(kind, payload, **detail)
