"""Generalized Wait-Till-Safe: an unbounded sequence of lattice decisions.

Values arrive asynchronously and are batched per round. Every round is a
WTS instance in miniature: a disclosure phase over reliable broadcast, then
an ack/nack phase. Two things differ from the single-shot protocol.

* Acks are reliably broadcast, so every process sees every acceptance and
  can decide a quorum-accepted set even if someone else proposed it.
* Acceptors only serve requests for rounds they trust (``safe_r``). Round
  ``r + 1`` becomes trusted once a quorum of acks for round ``r`` has been
  seen, so a Byzantine process cannot race ahead of the correct ones.

Proposals are cumulative across rounds. The proposer-side SAFE check
therefore compares against everything disclosed up to the current round,
and the acceptor-side check against everything disclosed in any round.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from byzla.lattice import AdmissibilityPredicate, Item, LatticeValue, accept_all
from byzla.process import Process
from byzla.rbcast import Tag

__all__ = ["AckKey", "GwtsAckReq", "GwtsNack", "GwtsNode", "AckTally"]

NEWROUND, DISCLOSING, PROPOSING, HALTED = "newround", "disclosing", "proposing", "halted"

_TS_ROUND = struct.Struct(">Qq")


@dataclass(frozen=True)
class GwtsAckReq:
    proposal: LatticeValue
    ts: int
    round: int
    kind = "ack_req"

    @property
    def value(self) -> LatticeValue:
        return self.proposal

    def encode(self) -> bytes:
        return b"\x20" + _TS_ROUND.pack(self.ts, self.round) + self.proposal.to_bytes()


@dataclass(frozen=True)
class GwtsNack:
    accepted: LatticeValue
    ts: int
    round: int
    kind = "nack"

    @property
    def value(self) -> LatticeValue:
        return self.accepted

    def encode(self) -> bytes:
        return b"\x22" + _TS_ROUND.pack(self.ts, self.round) + self.accepted.to_bytes()


@dataclass(frozen=True)
class AckKey:
    """What a quorum of acks has to agree on (everything but the sender)."""

    round: int
    ts: int
    destination: int
    accepted: LatticeValue

    def label(self) -> str:
        return f"{self.destination}/{self.ts}/{self.round}"


class AckTally:
    """Ack history with a distinct-sender count per :class:`AckKey`."""

    def __init__(self, quorum: int) -> None:
        self.quorum = quorum
        self.senders: dict[AckKey, set[int]] = {}
        self.complete: dict[int, list[AckKey]] = {}

    def add(self, key: AckKey, sender: int) -> bool:
        """Record one ack; True if this made ``key`` reach a quorum."""
        senders = self.senders.setdefault(key, set())
        if sender in senders:
            return False
        senders.add(sender)
        if len(senders) == self.quorum:
            self.complete.setdefault(key.round, []).append(key)
            return True
        return False

    def records(self):
        for key, senders in self.senders.items():
            for s in senders:
                yield key, s

    def __contains__(self, item) -> bool:
        key, sender = item
        return sender in self.senders.get(key, ())


class GwtsNode(Process):
    """Co-located GWTS proposer and acceptor.

    ``script`` holds values to submit: entry ``k`` is submitted once round
    ``k - 1`` has been decided (entry 0 at start), so it lands in
    ``Batch[k]``. The proposer stops after ``max_rounds`` decisions; the
    acceptor keeps serving. With ``lazy`` set, a new round only starts when
    there is something to agree on (see :meth:`wants_round`).
    """

    def __init__(
        self,
        node_id: int,
        n: int,
        f: int,
        script: list[Item] | None = None,
        admissible: AdmissibilityPredicate = accept_all,
        max_rounds: int | None = None,
        lazy: bool = False,
    ) -> None:
        super().__init__(node_id, n, f, admissible)
        self.script = list(script or [])
        self.max_rounds = max_rounds
        self.lazy = lazy
        # proposer
        self.state = NEWROUND
        self.batch: dict[int, set[Item]] = {}
        self.svs: dict[int, set[Item]] = {}
        self.first_seen: dict[Item, int] = {}
        self.counter: dict[int, int] = {}
        self.r = -1
        self.ts = 0
        self.proposed = LatticeValue()
        self.decided = LatticeValue()
        self.decisions: list[LatticeValue] = []
        self.refinements: dict[int, int] = {}
        self.proposer_acks = AckTally(self.quorum)
        self.nack_waiting: list[tuple[int, GwtsNack]] = []
        self.ack_waiting: list[tuple[int, AckKey]] = []
        self.max_disclosed_round = -1
        # acceptor
        self.accepted = LatticeValue()
        self.safe_r = 0
        self.acceptor_acks = AckTally(self.quorum)
        self.req_waiting: list[tuple[int, GwtsAckReq]] = []
        self.acceptor_ack_waiting: list[tuple[int, AckKey]] = []
        self.used_ack_tags: set[tuple[int, int, int]] = set()

    def on_start(self) -> None:
        if self.script:
            self.submit(self.script[0])
        self.progress()

    # -- inputs --------------------------------------------------------------

    def submit(self, item: Item) -> None:
        self.batch.setdefault(self.r + 1, set()).add(item)
        self.emit("submit", LatticeValue.of(item).to_bytes(), value=[item.token()], round=self.r + 1)

    # -- proposer ------------------------------------------------------------

    def wants_round(self) -> bool:
        if not self.lazy:
            return True
        return (
            bool(self.batch.get(self.r + 1))
            or not self.proposed <= self.decided
            or self.max_disclosed_round > self.r
        )

    def begin_round(self) -> None:
        self.state = DISCLOSING
        self.r += 1
        batch = LatticeValue(frozenset(self.batch.pop(self.r, ())))
        self.proposed = self.proposed | batch
        self.emit("round-start", batch.to_bytes(), round=self.r)
        self.disclose(batch)

    def disclose(self, batch: LatticeValue) -> None:
        self.rb.broadcast(Tag.disclosure(self.id, self.r), batch.to_bytes())

    def on_rb_deliver(self, tag: Tag, payload: bytes) -> None:
        try:
            value = LatticeValue.from_bytes(payload)
        except ValueError:
            return
        if tag.kind == "disclosure":
            self.on_disclosure(value, tag.round, tag.sender)
        else:
            key = AckKey(tag.round, tag.ts, tag.destination, value)
            self.ack_waiting.append((tag.sender, key))
            self.acceptor_ack_waiting.append((tag.sender, key))

    def on_disclosure(self, value: LatticeValue, round: int, sender: int) -> None:
        if round < 0 or not self.all_admissible(value):
            self.emit("disclosure-rejected", value.to_bytes(), sender=sender, round=round)
            return
        if self.state == DISCLOSING:
            self.proposed = self.proposed | value
        self.svs.setdefault(round, set()).update(value.items)
        for item in value.items:
            if self.first_seen.get(item, round + 1) > round:
                self.first_seen[item] = round
        self.counter[round] = self.counter.get(round, 0) + 1
        self.max_disclosed_round = max(self.max_disclosed_round, round)
        self.emit("disclosure", value.to_bytes(), sender=sender, round=round, value=value.tokens())

    def safe(self, value: LatticeValue, upto: int) -> bool:
        seen = self.first_seen
        for item in value.items:
            r = seen.get(item)
            if r is None or r > upto:
                return False
        return True

    def safe_any(self, value: LatticeValue) -> bool:
        seen = self.first_seen
        return all(item in seen for item in value.items)

    def start_proposing(self) -> bool:
        if self.state != DISCLOSING or self.counter.get(self.r, 0) < self.n - self.f:
            return False
        self.state = PROPOSING
        self.ts += 1
        self.send_request()
        return True

    def send_request(self) -> None:
        self.emit("ack-req", self.proposed.to_bytes(), round=self.r, ts=self.ts, size=len(self.proposed))
        self.port.broadcast(GwtsAckReq(self.proposed, self.ts, self.r))

    def on_nack(self, src: int, msg: GwtsNack) -> bool:
        if msg.accepted.items <= self.proposed.items:
            return False
        added = len(msg.accepted.items - self.proposed.items)
        self.proposed = self.proposed | msg.accepted
        self.ts += 1
        self.refinements[self.r] = self.refinements.get(self.r, 0) + 1
        self.emit("refine", self.proposed.to_bytes(), round=self.r, ts=self.ts, added=added, src=src)
        self.send_request()
        return True

    def try_decide(self) -> bool:
        if self.state != PROPOSING:
            return False
        eligible = [k for k in self.proposer_acks.complete.get(self.r, ()) if self.decided.items <= k.accepted.items]
        if not eligible:
            return False
        key = min(eligible, key=lambda k: (k.round, k.ts, k.destination))
        self.decide(key)
        return True

    def decide(self, key: AckKey) -> None:
        self.decided = key.accepted
        self.decisions.append(key.accepted)
        self.emit(
            "decide",
            key.accepted.to_bytes(),
            round=self.r,
            value=key.accepted.tokens(),
            refinements=self.refinements.get(self.r, 0),
            destination=key.destination,
            ts=key.ts,
        )
        self.on_decided(key.accepted)
        if self.max_rounds is not None and len(self.decisions) >= self.max_rounds:
            self.state = HALTED
            return
        self.state = NEWROUND
        k = self.r + 1
        if k < len(self.script):
            self.submit(self.script[k])

    def on_decided(self, value: LatticeValue) -> None:
        pass

    # -- acceptor ------------------------------------------------------------

    def acceptor_on_ack_req(self, src: int, msg: GwtsAckReq) -> None:
        self.emit("ack-req-processed", round=msg.round, safe_r=self.safe_r, src=src, ts=msg.ts)
        rcvd = msg.proposal
        if self.accepted.items <= rcvd.items:
            self.accepted = rcvd
            self.emit("ack-rbcast", rcvd.to_bytes(), round=msg.round, ts=msg.ts, destination=src)
            self.rb.broadcast(Tag.ack(self.id, msg.round, msg.ts, src), rcvd.to_bytes())
        else:
            self.port.send(src, GwtsNack(self.accepted, msg.ts, msg.round))
            self.accepted = self.accepted | rcvd

    def advance_trust(self) -> bool:
        changed = False
        while True:
            done = self.acceptor_acks.complete.get(self.safe_r)
            if not done:
                return changed
            witness = done[0]
            self.safe_r += 1
            self.emit("safe-r", witness.accepted.to_bytes(), safe_r=self.safe_r, witness=witness.label())
            changed = True

    # -- event loop ----------------------------------------------------------

    def on_direct(self, src: int, msg) -> None:
        if isinstance(msg, GwtsAckReq):
            tag = (msg.round, msg.ts, src)
            if tag in self.used_ack_tags:
                # a repeated (round, ts) from the same proposer: only a
                # Byzantine proposer does this and acking would reuse a tag
                return
            self.used_ack_tags.add(tag)
            self.req_waiting.append((src, msg))
        elif isinstance(msg, GwtsNack):
            self.nack_waiting.append((src, msg))

    def progress(self) -> None:
        changed = True
        while changed:
            changed = False
            if self.state == NEWROUND and self.wants_round():
                self.begin_round()
                changed = True
            changed |= self.start_proposing()
            changed |= self._drain_acceptor()
            if self.state == PROPOSING:
                changed |= self._drain_proposer()

    def _drain_acceptor(self) -> bool:
        changed = False
        if self.acceptor_ack_waiting:
            keep = []
            for sender, key in self.acceptor_ack_waiting:
                if key.round <= self.safe_r and self.safe_any(key.accepted):
                    self.acceptor_acks.add(key, sender)
                    changed = True
                else:
                    keep.append((sender, key))
            self.acceptor_ack_waiting = keep
            if changed:
                self.advance_trust()
        if self.req_waiting:
            keep = []
            for src, msg in self.req_waiting:
                if msg.round <= self.safe_r and self.safe_any(msg.proposal):
                    self.acceptor_on_ack_req(src, msg)
                    changed = True
                else:
                    keep.append((src, msg))
            self.req_waiting = keep
        return changed

    def _drain_proposer(self) -> bool:
        changed = False
        if self.ack_waiting:
            keep = []
            for sender, key in self.ack_waiting:
                if self.safe(key.accepted, self.r):
                    self.proposer_acks.add(key, sender)
                    changed = True
                else:
                    keep.append((sender, key))
            self.ack_waiting = keep
        if self.try_decide():
            return True
        if self.nack_waiting:
            keep = []
            for src, msg in self.nack_waiting:
                if self.state != PROPOSING:
                    keep.append((src, msg))
                    continue
                if msg.round < self.r or (msg.round == self.r and msg.ts < self.ts):
                    continue  # stale: can never match again
                if msg.round != self.r or msg.ts != self.ts or not self.safe(msg.accepted, self.r):
                    keep.append((src, msg))
                    continue
                changed = True
                self.on_nack(src, msg)
            self.nack_waiting = keep
        return changed
