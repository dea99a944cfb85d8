"""Replicated state machine for commutative updates, on top of GWTS.

The state is the set of commands applied so far, so agreeing on the state
is generalized lattice agreement over sets of commands. Replicas run GWTS
and clients talk to them:

update(cmd)
    ``cmd`` is submitted at ``f + 1`` replicas, so at least one correct
    replica proposes it. The update completes once ``f + 1`` distinct
    replicas report a decision that contains it.
read()
    an update with a fresh no-op, then a confirmation step. For each
    decision reported for the no-op, the client asks every replica to
    confirm it was quorum-accepted, and returns the first set that
    ``f + 1`` replicas confirm. The returned set has the no-ops stripped.

Replicas tell clients about decisions with :class:`DecideNote`. Every
replica learns of every client request, but only ``propose=True``
requests are submitted to GWTS.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import Any

from byzla.gwts import GwtsNode
from byzla.lattice import Item, ItemKind, LatticeValue
from byzla.simnet import Node, ScenarioConfig

__all__ = [
    "ClientNode",
    "ClientRequest",
    "CnfRep",
    "CnfReq",
    "DecideNote",
    "ReplicaNode",
    "command",
    "nop",
    "rsm_admissible",
    "rsm_execute",
    "build_clients",
]

_U64 = struct.Struct(">Q")


def command(client: int, seq: int, op: bytes | str = b"") -> Item:
    """A unique command: client id as origin, sequence number first in the payload."""
    if isinstance(op, str):
        op = op.encode()
    return Item(client, ItemKind.COMMAND, _U64.pack(seq) + op)


def nop(client: int, counter: int) -> Item:
    return Item(client, ItemKind.NOP, _U64.pack(client) + _U64.pack(counter))


def rsm_admissible(item: Item) -> bool:
    """Structural well-formedness of commands and no-ops."""
    if item.kind == ItemKind.COMMAND:
        return len(item.payload) >= 8
    if item.kind == ItemKind.NOP:
        return len(item.payload) == 16 and _U64.unpack_from(item.payload)[0] == item.origin
    return False


def rsm_execute(state: LatticeValue) -> frozenset[Item]:
    """Apply a set of commands; with commutative updates that is the set itself."""
    return frozenset(item for item in state if item.kind == ItemKind.COMMAND)


# -- messages ------------------------------------------------------------------


@dataclass(frozen=True)
class ClientRequest:
    item: Item
    propose: bool
    kind = "client_req"

    def encode(self) -> bytes:
        return b"\x40" + bytes([self.propose]) + self.item.encode()


@dataclass(frozen=True)
class DecideNote:
    value: LatticeValue
    kind = "decide_note"

    def encode(self) -> bytes:
        return b"\x41" + self.value.to_bytes()


@dataclass(frozen=True)
class CnfReq:
    value: LatticeValue
    kind = "cnf_req"

    def encode(self) -> bytes:
        return b"\x42" + self.value.to_bytes()


@dataclass(frozen=True)
class CnfRep:
    value: LatticeValue
    kind = "cnf_rep"

    def encode(self) -> bytes:
        return b"\x43" + self.value.to_bytes()


# -- replica ---------------------------------------------------------------------


class ReplicaNode(GwtsNode):
    """A GWTS process with the client-facing plug-in.

    Rounds are lazy: a replica with nothing new to agree on stays idle
    instead of burning its round budget.
    """

    def __init__(self, node_id: int, n: int, f: int, max_rounds: int | None = None) -> None:
        super().__init__(node_id, n, f, admissible=rsm_admissible, max_rounds=max_rounds, lazy=True)
        self.interest: dict[Item, set[int]] = {}
        self.noted: set[tuple[Item, int]] = set()
        self.pending_conf: set[tuple[LatticeValue, int]] = set()

    def wants_round(self) -> bool:
        if super().wants_round():
            return True
        decided = self.decided.items
        return any(item in self.first_seen and item not in decided for item in self.interest)

    def on_direct(self, src: int, msg: Any) -> None:
        if isinstance(msg, ClientRequest):
            self.on_client_request(src, msg)
        elif isinstance(msg, CnfReq):
            self.pending_conf.add((msg.value, src))
        else:
            super().on_direct(src, msg)

    def on_client_request(self, client: int, msg: ClientRequest) -> None:
        self.interest.setdefault(msg.item, set()).add(client)
        if msg.propose:
            if self.admissible(msg.item):
                self.submit(msg.item)
            else:
                self.emit("submit-rejected", LatticeValue.of(msg.item).to_bytes(), client=client)
        if msg.item in self.decided.items:
            self.notify(self.decided)

    def on_decided(self, value: LatticeValue) -> None:
        self.notify(value)

    def notify(self, value: LatticeValue) -> None:
        clients = set()
        for item in value.items & self.interest.keys():
            for client in self.interest[item]:
                if (item, client) not in self.noted:
                    self.noted.add((item, client))
                    clients.add(client)
        for client in sorted(clients):
            self.port.send(client, DecideNote(value))

    def quorum_accepted(self) -> set[LatticeValue]:
        out = set()
        for tally in (self.proposer_acks, self.acceptor_acks):
            for keys in tally.complete.values():
                out.update(k.accepted for k in keys)
        return out

    def progress(self) -> None:
        super().progress()
        if self.pending_conf:
            confirmed = self.quorum_accepted()
            for value, client in sorted(self.pending_conf, key=lambda p: (p[1], p[0].to_bytes())):
                if value in confirmed:
                    self.pending_conf.discard((value, client))
                    self.port.send(client, CnfRep(value))


# -- clients ---------------------------------------------------------------------


class ClientNode(Node):
    """Runs its operations one after the other, waiting for each to complete."""

    def __init__(
        self,
        client_id: int,
        n: int,
        f: int,
        ops: list[str],
        selection: str = "lowest",
        seed: int = 0,
    ) -> None:
        super().__init__(client_id)
        self.n = n
        self.f = f
        self.ops = list(ops)
        self.selection = selection
        self.rng = random.Random(f"{seed}/{client_id}")
        self.next_op = 0
        self.seq = 0
        self.reads = 0
        self.current: tuple[str, Item] | None = None
        self.dec_set: dict[int, LatticeValue] = {}
        self.conf_set: dict[LatticeValue, set[int]] = {}
        self.confirming = False
        self.results: list[tuple[str, Item, Any]] = []

    def proposers(self) -> list[int]:
        if self.selection == "random":
            return sorted(self.rng.sample(range(self.n), self.f + 1))
        return list(range(self.f + 1))

    def on_start(self) -> None:
        self.start_next()

    def start_next(self) -> None:
        if self.next_op >= len(self.ops):
            self.current = None
            return
        op = self.ops[self.next_op]
        self.next_op += 1
        if op == "update":
            item = command(self.id, self.seq, f"op{self.seq}")
            self.seq += 1
        else:
            item = nop(self.id, self.reads)
            self.reads += 1
        self.current = (op, item)
        self.dec_set = {}
        self.conf_set = {}
        self.confirming = False
        self.port.emit(f"{op}-start", LatticeValue.of(item).to_bytes(), item=item.token())
        self.submit(item)

    def submit(self, item: Item) -> None:
        chosen = set(self.proposers())
        for replica in range(self.n):
            self.port.send(replica, ClientRequest(item, replica in chosen))

    def on_message(self, src: int, msg: Any) -> None:
        if self.current is None or src >= self.n:
            return
        op, item = self.current
        if isinstance(msg, DecideNote):
            if item in msg.value and src not in self.dec_set:
                self.dec_set[src] = msg.value
                self.on_decide_note()
        elif isinstance(msg, CnfRep) and op == "read" and self.confirming:
            self.conf_set.setdefault(msg.value, set()).add(src)
            if len(self.conf_set[msg.value]) >= self.f + 1:
                self.complete(msg.value)

    def on_decide_note(self) -> None:
        op, item = self.current
        if len(self.dec_set) < self.f + 1:
            return
        if op == "update":
            self.complete(None)
        elif not self.confirming:
            self.confirming = True
            for value in sorted(set(self.dec_set.values()), key=LatticeValue.to_bytes):
                self.port.broadcast(CnfReq(value))

    def complete(self, state: LatticeValue | None) -> None:
        op, item = self.current
        if op == "update":
            self.port.emit("update-complete", LatticeValue.of(item).to_bytes(), item=item.token())
            self.results.append((op, item, None))
        else:
            result = LatticeValue(rsm_execute(state))
            self.port.emit(
                "read-complete",
                result.to_bytes(),
                item=item.token(),
                result=result.tokens(),
                state=state.tokens(),
            )
            self.results.append((op, item, result))
        self.start_next()


class BadClient(ClientNode):
    """Misbehaves in every way a client can without touching replica code.

    It submits inadmissible commands, sends commands to a single replica
    instead of ``f + 1``, never waits for completion, and asks replicas to
    confirm fabricated states.
    """

    def on_start(self) -> None:
        fake = LatticeValue.of(command(self.id, 10_000, "forged"))
        for k, op in enumerate(self.ops):
            self.port.broadcast(ClientRequest(Item(self.id, ItemKind.COMMAND, b"bad"), True))
            self.port.broadcast(ClientRequest(Item.value(self.id, f"stray{k}"), True))
            if op == "update":
                item = command(self.id, self.seq, "lonely")
                self.seq += 1
                self.port.send(k % self.n, ClientRequest(item, True))
            else:
                item = nop(self.id, self.reads)
                self.reads += 1
                self.port.send(k % self.n, ClientRequest(item, True))
            self.port.broadcast(CnfReq(fake))

    def on_message(self, src: int, msg: Any) -> None:
        pass


def build_clients(cfg: ScenarioConfig) -> list[Node]:
    seed = int(cfg.scheduler.get("seed", 0))
    clients: list[Node] = []
    for k, spec in enumerate(cfg.clients):
        cls = BadClient if spec.get("strategy") == "bad-client" else ClientNode
        clients.append(cls(cfg.n + k, cfg.n, cfg.f, spec.get("ops", []), cfg.replica_selection, seed, **spec.get("params", {})))
    return clients
