"""Wait-Till-Safe: single-shot Byzantine lattice agreement.

Each process plays both roles. As a proposer it reliably broadcasts its
input (disclosure phase), waits for ``n - f`` admissible disclosures, then
collects acks from a Byzantine quorum of acceptors, refining its proposal
on every nack that adds something new. As an acceptor it acks any request
that contains its accepted set and nacks otherwise.

A message is only handled once every item it carries has been reliably
delivered to this process (the ``SvS`` set); until then it waits in a
buffer that is re-scanned, in arrival order, whenever state changes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from byzla.lattice import AdmissibilityPredicate, Item, LatticeValue, accept_all
from byzla.process import Process
from byzla.rbcast import Tag

__all__ = ["Ack", "AckReq", "Nack", "WtsNode", "DISCLOSING", "PROPOSING", "DECIDED"]

DISCLOSING, PROPOSING, DECIDED = "disclosing", "proposing", "decided"

_TS = struct.Struct(">Q")


@dataclass(frozen=True)
class AckReq:
    proposal: LatticeValue
    ts: int
    kind = "ack_req"

    @property
    def value(self) -> LatticeValue:
        return self.proposal

    def encode(self) -> bytes:
        return b"\x10" + _TS.pack(self.ts) + self.proposal.to_bytes()


@dataclass(frozen=True)
class Ack:
    accepted: LatticeValue
    ts: int
    kind = "ack"

    @property
    def value(self) -> LatticeValue:
        return self.accepted

    def encode(self) -> bytes:
        return b"\x11" + _TS.pack(self.ts) + self.accepted.to_bytes()


@dataclass(frozen=True)
class Nack:
    accepted: LatticeValue
    ts: int
    kind = "nack"

    @property
    def value(self) -> LatticeValue:
        return self.accepted

    def encode(self) -> bytes:
        return b"\x12" + _TS.pack(self.ts) + self.accepted.to_bytes()


class WtsNode(Process):
    """Co-located WTS proposer and acceptor."""

    def __init__(
        self,
        node_id: int,
        n: int,
        f: int,
        value: Item | None = None,
        admissible: AdmissibilityPredicate = accept_all,
    ) -> None:
        super().__init__(node_id, n, f, admissible)
        self.proposed_value = value
        self.has_proposed = False
        # proposer
        self.state = DISCLOSING
        self.proposed = LatticeValue()
        self.acks: set[int] = set()
        self.svs: set[Item] = set()
        self.init_counter = 0
        self.ts = 0
        self.refinements = 0
        self.decision: LatticeValue | None = None
        self.proposer_waiting: list[tuple[int, Ack | Nack]] = []
        # acceptor; SvS is shared with the proposer
        self.accepted = LatticeValue()
        self.acceptor_waiting: list[tuple[int, AckReq]] = []

    def on_start(self) -> None:
        if self.proposed_value is not None:
            self.propose(self.proposed_value)
        self.progress()

    # -- proposer ----------------------------------------------------------

    def propose(self, item: Item) -> None:
        if self.has_proposed:
            raise AssertionError(f"process {self.id} already proposed")
        if self.state != DISCLOSING:
            raise AssertionError("propose is only valid while disclosing")
        if not self.admissible(item):
            raise ValueError(f"process {self.id} asked to propose inadmissible item {item!r}")
        self.has_proposed = True
        value = LatticeValue.of(item)
        self.proposed = self.proposed | value
        self.emit("propose", value.to_bytes(), value=value.tokens())
        self.disclose(value)

    def disclose(self, value: LatticeValue) -> None:
        self.rb.broadcast(Tag.disclosure(self.id, 0), value.to_bytes())

    def on_rb_deliver(self, tag: Tag, payload: bytes) -> None:
        if tag.kind != "disclosure" or tag.round != 0:
            return
        try:
            value = LatticeValue.from_bytes(payload)
        except ValueError:
            return
        self.on_disclosure(value, tag.sender)

    def is_admissible_input(self, value: LatticeValue) -> bool:
        return len(value) == 1 and self.all_admissible(value)

    def on_disclosure(self, value: LatticeValue, sender: int) -> None:
        if not self.is_admissible_input(value):
            self.emit("disclosure-rejected", value.to_bytes(), sender=sender)
            return
        if self.state == DISCLOSING:
            self.proposed = self.proposed | value
        self.svs.update(value.items)
        self.init_counter += 1
        self.emit("disclosure", value.to_bytes(), sender=sender, value=value.tokens())

    def start_proposing(self) -> bool:
        if self.state != DISCLOSING or self.init_counter < self.n - self.f:
            return False
        self.state = PROPOSING
        self.send_request()
        return True

    def send_request(self) -> None:
        self.emit("ack-req", self.proposed.to_bytes(), ts=self.ts, size=len(self.proposed))
        self.port.broadcast(AckReq(self.proposed, self.ts))

    def safe(self, value: LatticeValue) -> bool:
        return value.items <= self.svs

    def on_ack(self, src: int, msg: Ack) -> None:
        self.acks.add(src)

    def on_nack(self, src: int, msg: Nack) -> bool:
        if msg.accepted.items <= self.proposed.items:
            return False
        added = len(msg.accepted.items - self.proposed.items)
        self.proposed = self.proposed | msg.accepted
        self.acks = set()
        self.ts += 1
        self.refinements += 1
        self.emit("refine", self.proposed.to_bytes(), ts=self.ts, added=added, src=src)
        self.send_request()
        return True

    def try_decide(self) -> bool:
        if self.state != PROPOSING or len(self.acks) < self.quorum:
            return False
        self.state = DECIDED
        self.decision = self.proposed
        self.emit("decide", self.decision.to_bytes(), value=self.decision.tokens(), refinements=self.refinements)
        return True

    # -- acceptor ----------------------------------------------------------

    def acceptor_on_ack_req(self, src: int, msg: AckReq) -> None:
        rcvd = msg.proposal
        if self.accepted.items <= rcvd.items:
            self.accepted = rcvd
            self.port.send(src, Ack(self.accepted, msg.ts))
        else:
            self.port.send(src, Nack(self.accepted, msg.ts))
            self.accepted = self.accepted | rcvd

    # -- event loop --------------------------------------------------------

    def on_direct(self, src: int, msg) -> None:
        if isinstance(msg, AckReq):
            self.acceptor_waiting.append((src, msg))
        elif isinstance(msg, (Ack, Nack)):
            self.proposer_waiting.append((src, msg))

    def progress(self) -> None:
        changed = True
        while changed:
            changed = self.start_proposing()
            if self.acceptor_waiting:
                keep = []
                for src, msg in self.acceptor_waiting:
                    if self.safe(msg.proposal):
                        self.acceptor_on_ack_req(src, msg)
                        changed = True
                    else:
                        keep.append((src, msg))
                self.acceptor_waiting = keep
            if self.state == PROPOSING and self.proposer_waiting:
                changed |= self._drain_proposer()

    def _drain_proposer(self) -> bool:
        changed = False
        keep = []
        for src, msg in self.proposer_waiting:
            if self.state != PROPOSING or msg.ts > self.ts or not self.safe(msg.value):
                keep.append((src, msg))
                continue
            if msg.ts < self.ts:
                # stale: can never match the timestamp guard again
                continue
            changed = True
            if isinstance(msg, Ack):
                self.on_ack(src, msg)
                self.try_decide()
            else:
                self.on_nack(src, msg)
        self.proposer_waiting = [(s, m) for s, m in keep if m.ts >= self.ts]
        return changed
