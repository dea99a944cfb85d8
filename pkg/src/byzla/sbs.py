"""Signature-based single-shot lattice agreement (SbS).

Reliable broadcast is replaced by signatures, which brings the proposer's
message count down to O(f·n). A run has three phases:

init
    every proposer signs its input and sends it to all proposers. Two
    different values signed by the same process are a *conflict*, and a
    proposer drops both.
safetying
    a proposer sends its conflict-free set to the acceptors. Each acceptor
    echoes the set back in a signed :class:`SafeAck`, listing every
    conflict it knows of. A value that a quorum of acks echo, and that
    none of them list in a conflict, has a *safety proof*. At most one value
    per signer can ever get one.
proposing
    WTS-style ack/nack, except that every value travels with its proof and
    is re-checked by every recipient (:func:`all_safe`). An acceptor that
    sends an ill-formed reply is flagged and ignored from then on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Mapping

from byzla.lattice import AdmissibilityPredicate, Item, LatticeValue, accept_all
from byzla.process import Process
from byzla.signatures import Signer

__all__ = [
    "SignedValue",
    "SafeAck",
    "ProposalSet",
    "SbsInit",
    "SafeReq",
    "SafeAckMsg",
    "SbsAckReq",
    "SbsAck",
    "SbsNack",
    "SbsNode",
    "all_safe",
    "is_safe_entry",
    "return_conflicts",
    "remove_conflicts",
    "verify_conf_pair",
    "PROPOSER_KINDS",
]

INIT, SAFETYING, PROPOSING, DECIDED = "init", "safetying", "proposing", "decided"

# message kinds a process sends in its proposer role
PROPOSER_KINDS = ("init_phase", "safe_req", "ack_req")

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")
_TS = struct.Struct(">Q")


def _blob(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


@dataclass(frozen=True)
class SignedValue:
    """An input value signed by the process that proposed it.

    Equality and hashing look at ``(value, sender)`` only; whether the
    signature is any good is a separate question answered by :meth:`verify`.
    """

    value: Item
    sender: int
    sig: bytes = field(compare=False, repr=False)

    @classmethod
    def create(cls, signer: Signer, value: Item) -> SignedValue:
        return cls(value, signer.node_id, signer.sign(cls.body_of(value, signer.node_id)))

    @staticmethod
    def body_of(value: Item, sender: int) -> bytes:
        return b"sv" + _I64.pack(sender) + value.encode()

    def verify(self, signer: Signer) -> bool:
        return signer.verify(self.sender, self.body_of(self.value, self.sender), self.sig)

    @cached_property
    def encoded(self) -> bytes:
        return self.body_of(self.value, self.sender) + _blob(self.sig)

    def sort_key(self) -> tuple:
        return (self.sender, self.value)


def _sorted_values(values: Iterable[SignedValue]) -> list[SignedValue]:
    return sorted(values, key=SignedValue.sort_key)


def _pair(x: SignedValue, y: SignedValue) -> tuple[SignedValue, SignedValue]:
    return (x, y) if x.sort_key() <= y.sort_key() else (y, x)


def verify_conf_pair(pair: tuple[SignedValue, SignedValue], signer: Signer) -> bool:
    x, y = pair
    return x.verify(signer) and y.verify(signer) and x.sender == y.sender and x.value != y.value


def return_conflicts(values: Iterable[SignedValue], signer: Signer) -> frozenset[tuple[SignedValue, SignedValue]]:
    """Every conflicting pair in ``values``; pairs are stored in canonical order."""
    by_sender: dict[int, list[SignedValue]] = {}
    for sv in values:
        by_sender.setdefault(sv.sender, []).append(sv)
    out = set()
    for group in by_sender.values():
        for i, x in enumerate(group):
            for y in group[i + 1 :]:
                if verify_conf_pair((x, y), signer):
                    out.add(_pair(x, y))
    return frozenset(out)


def remove_conflicts(values: Iterable[SignedValue], signer: Signer) -> set[SignedValue]:
    values = set(values)
    for x, y in return_conflicts(values, signer):
        values.discard(x)
        values.discard(y)
    return values


@dataclass(frozen=True)
class SafeAck:
    """An acceptor's signed echo of a safety set plus the conflicts it knows."""

    rcvd: frozenset[SignedValue]
    conflicts: frozenset[tuple[SignedValue, SignedValue]]
    acceptor: int
    sig: bytes

    @classmethod
    def create(cls, signer: Signer, rcvd: frozenset[SignedValue], conflicts) -> SafeAck:
        conflicts = frozenset(conflicts)
        return cls(rcvd, conflicts, signer.node_id, signer.sign(cls.body_of(rcvd, conflicts, signer.node_id)))

    @staticmethod
    def body_of(rcvd, conflicts, acceptor: int) -> bytes:
        parts = [b"safe_ack", _I64.pack(acceptor), _U32.pack(len(rcvd))]
        parts.extend(sv.encoded for sv in _sorted_values(rcvd))
        pairs = sorted(conflicts, key=lambda p: (p[0].sort_key(), p[1].sort_key()))
        parts.append(_U32.pack(len(pairs)))
        for x, y in pairs:
            parts.append(x.encoded)
            parts.append(y.encoded)
        return b"".join(parts)

    @cached_property
    def body(self) -> bytes:
        return self.body_of(self.rcvd, self.conflicts, self.acceptor)

    @cached_property
    def encoded(self) -> bytes:
        return self.body + _blob(self.sig)

    @cached_property
    def conflicted(self) -> frozenset[SignedValue]:
        return frozenset(v for pair in self.conflicts for v in pair)

    @cached_property
    def _hash(self) -> int:
        return hash(self.encoded)

    def __hash__(self) -> int:
        return self._hash

    def verify(self, signer: Signer) -> bool:
        return signer.verify(self.acceptor, self.body, self.sig)


SafetyProof = frozenset  # of SafeAck


def is_safe_entry(
    value: SignedValue,
    proof: Iterable[SafeAck],
    signer: Signer,
    quorum: int,
    admissible: AdmissibilityPredicate = accept_all,
) -> bool:
    """Does ``proof`` show that ``value`` is safe?"""
    proof = list(proof)
    if len(proof) < quorum or not admissible(value.value) or not value.verify(signer):
        return False
    if len({ack.acceptor for ack in proof}) != len(proof):
        return False
    for ack in proof:
        if value not in ack.rcvd or value in ack.conflicted or not ack.verify(signer):
            return False
    return True


def all_safe(
    proposal: ProposalSet,
    signer: Signer,
    quorum: int,
    admissible: AdmissibilityPredicate = accept_all,
) -> bool:
    return all(is_safe_entry(v, proof, signer, quorum, admissible) for v, proof in proposal.entries.items())


class ProposalSet:
    """Signed values, each carrying the safety proof it was accepted with.

    ``a | b`` keeps ``a``'s proof for values both sides hold. Inclusion
    (``<=``) compares values only; ``==`` compares proofs as well.
    """

    __slots__ = ("entries", "_keys", "_hash", "_enc")

    def __init__(self, entries: Mapping[SignedValue, frozenset[SafeAck]] | None = None) -> None:
        self.entries: dict[SignedValue, frozenset[SafeAck]] = dict(entries or {})
        self._keys = frozenset(self.entries)
        self._hash: int | None = None
        self._enc: bytes | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[SignedValue]:
        return iter(self.entries)

    def values(self) -> frozenset[SignedValue]:
        return self._keys

    def __or__(self, other: ProposalSet) -> ProposalSet:
        merged = dict(other.entries)
        merged.update(self.entries)
        return ProposalSet(merged)

    def __le__(self, other: ProposalSet) -> bool:
        return self._keys <= other._keys

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProposalSet):
            return NotImplemented
        return self._keys == other._keys and self.entries == other.entries

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.encode())
        return self._hash

    def __repr__(self) -> str:
        return f"ProposalSet({sorted(v.value.token() for v in self._keys)})"

    def lattice_value(self) -> LatticeValue:
        return LatticeValue(frozenset(v.value for v in self._keys))

    def proof_size(self) -> int:
        return sum(len(p) for p in self.entries.values())

    def encode(self) -> bytes:
        if self._enc is None:
            parts = [_U32.pack(len(self.entries))]
            for sv in _sorted_values(self.entries):
                proof = sorted(self.entries[sv], key=lambda a: a.encoded)
                parts.append(sv.encoded)
                parts.append(_U32.pack(len(proof)))
                parts.extend(_blob(a.encoded) for a in proof)
            self._enc = b"".join(parts)
        return self._enc


# -- messages ------------------------------------------------------------------


@dataclass(frozen=True)
class SbsInit:
    signed: SignedValue
    kind = "init_phase"

    def encode(self) -> bytes:
        return b"\x30" + self.signed.encoded


@dataclass(frozen=True)
class SafeReq:
    safety_set: frozenset[SignedValue]
    kind = "safe_req"

    def encode(self) -> bytes:
        return b"\x31" + _U32.pack(len(self.safety_set)) + b"".join(sv.encoded for sv in _sorted_values(self.safety_set))


@dataclass(frozen=True)
class SafeAckMsg:
    ack: SafeAck
    kind = "safe_ack"

    def encode(self) -> bytes:
        return b"\x32" + self.ack.encoded


@dataclass(frozen=True)
class SbsAckReq:
    proposal: ProposalSet
    ts: int
    kind = "ack_req"

    def encode(self) -> bytes:
        return b"\x33" + _TS.pack(self.ts) + self.proposal.encode()


@dataclass(frozen=True)
class SbsAck:
    proposal: ProposalSet
    ts: int
    kind = "ack"

    def encode(self) -> bytes:
        return b"\x34" + _TS.pack(self.ts) + self.proposal.encode()


@dataclass(frozen=True)
class SbsNack:
    proposal: ProposalSet
    ts: int
    kind = "nack"

    def encode(self) -> bytes:
        return b"\x35" + _TS.pack(self.ts) + self.proposal.encode()


# -- node ----------------------------------------------------------------------


class SbsNode(Process):
    """Co-located SbS proposer and acceptor."""

    def __init__(
        self,
        node_id: int,
        n: int,
        f: int,
        value: Item | None,
        signer: Signer,
        admissible: AdmissibilityPredicate = accept_all,
    ) -> None:
        super().__init__(node_id, n, f, admissible)
        if signer.node_id != node_id:
            raise ValueError("a node must hold its own signing key")
        self.signer = signer
        self.proposed_value = value
        # proposer
        self.state = INIT
        self.safety_set: set[SignedValue] = set()
        self.sent_safety_set: frozenset[SignedValue] | None = None
        self.safe_acks: dict[int, SafeAck] = {}
        self.proposed = ProposalSet()
        self.ack_set: set[int] = set()
        self.byz: set[int] = set()
        self.ts = 0
        self.refinements = 0
        self.decision: LatticeValue | None = None
        # acceptor
        self.safe_candidates: set[SignedValue] = set()
        self.accepted = ProposalSet()

    # -- proposer ------------------------------------------------------------

    def on_start(self) -> None:
        if self.proposed_value is not None:
            self.propose(self.proposed_value)
        self.progress()

    def propose(self, item: Item) -> None:
        if not self.admissible(item):
            raise ValueError(f"process {self.id} asked to propose inadmissible item {item!r}")
        sv = SignedValue.create(self.signer, item)
        self.safety_set.add(sv)
        value = LatticeValue.of(item)
        self.emit("propose", value.to_bytes(), value=value.tokens())
        self.send_init(sv)

    def send_init(self, sv: SignedValue) -> None:
        self.port.broadcast(SbsInit(sv))

    def on_init(self, src: int, sv: SignedValue) -> None:
        if self.state != INIT or not sv.verify(self.signer) or not self.admissible(sv.value):
            return
        self.safety_set = remove_conflicts(self.safety_set | {sv}, self.signer)

    def start_safetying(self) -> bool:
        if self.state != INIT or len(self.safety_set) < self.n - self.f:
            return False
        self.state = SAFETYING
        self.sent_safety_set = frozenset(self.safety_set)
        self.emit("safe-req", size=len(self.sent_safety_set))
        self.port.broadcast(SafeReq(self.sent_safety_set))
        return True

    def flag(self, src: int, reason: str) -> None:
        if src not in self.byz:
            self.byz.add(src)
            self.emit("byz-flag", flagged=src, reason=reason)

    def on_safe_ack(self, src: int, ack: SafeAck) -> None:
        if self.state != SAFETYING:
            return
        ok = (
            ack.acceptor == src
            and ack.verify(self.signer)
            and ack.rcvd == self.sent_safety_set
            and all(verify_conf_pair(p, self.signer) for p in ack.conflicts)
        )
        if not ok:
            self.flag(src, "bad-safe-ack")
        elif src not in self.safe_acks:
            self.safe_acks[src] = ack

    def build_proposal(self) -> bool:
        if self.state != SAFETYING or len(self.safe_acks) < self.quorum:
            return False
        proof = frozenset(self.safe_acks.values())
        conflicted = frozenset().union(*(a.conflicted for a in proof))
        self.proposed = ProposalSet({sv: proof for sv in self.safety_set if sv not in conflicted})
        self.state = PROPOSING
        self.ack_set = set()
        self.ts += 1
        self.send_request()
        return True

    def send_request(self) -> None:
        self.emit(
            "ack-req",
            self.proposed.lattice_value().to_bytes(),
            ts=self.ts,
            size=len(self.proposed),
            proof_size=self.proposed.proof_size(),
        )
        self.port.broadcast(SbsAckReq(self.proposed, self.ts))

    def on_ack(self, src: int, msg: SbsAck) -> None:
        if self.state != PROPOSING or msg.ts != self.ts:
            return  # late replies prove nothing
        if msg.proposal == self.proposed and src not in self.byz:
            self.ack_set.add(src)
        else:
            self.flag(src, "bad-ack")

    def on_nack(self, src: int, msg: SbsNack) -> None:
        if self.state != PROPOSING or msg.ts != self.ts:
            return
        rcvd = msg.proposal
        if not rcvd <= self.proposed and src not in self.byz and all_safe(rcvd, self.signer, self.quorum, self.admissible):
            before = len(self.proposed)
            self.proposed = self.proposed | rcvd
            self.ack_set = set()
            self.ts += 1
            self.refinements += 1
            self.emit("refine", self.proposed.lattice_value().to_bytes(), ts=self.ts, added=len(self.proposed) - before, src=src)
            self.send_request()
        else:
            self.flag(src, "bad-nack")

    def try_decide(self) -> bool:
        if self.state != PROPOSING or len(self.ack_set) < self.quorum:
            return False
        self.state = DECIDED
        self.decision = self.proposed.lattice_value()
        self.emit("decide", self.decision.to_bytes(), value=self.decision.tokens(), refinements=self.refinements)
        return True

    # -- acceptor ------------------------------------------------------------

    def acceptor_on_safe_req(self, src: int, safety_set: frozenset[SignedValue]) -> None:
        if not all(sv.verify(self.signer) for sv in safety_set):
            return
        pool = safety_set | self.safe_candidates
        conflicts = return_conflicts(pool, self.signer)
        self.port.send(src, SafeAckMsg(SafeAck.create(self.signer, safety_set, conflicts)))
        self.safe_candidates |= remove_conflicts(pool, self.signer)

    def acceptor_on_ack_req(self, src: int, msg: SbsAckReq) -> None:
        rcvd = msg.proposal
        if not all_safe(rcvd, self.signer, self.quorum, self.admissible):
            self.emit("ack-req-rejected", src=src, ts=msg.ts)
            return
        if self.accepted <= rcvd:
            self.accepted = rcvd
            self.port.send(src, SbsAck(self.accepted, msg.ts))
        else:
            self.port.send(src, SbsNack(self.accepted, msg.ts))
            self.accepted = rcvd | self.accepted

    # -- event loop ----------------------------------------------------------

    def on_direct(self, src: int, msg) -> None:
        if isinstance(msg, SbsInit):
            self.on_init(src, msg.signed)
        elif isinstance(msg, SafeReq):
            self.acceptor_on_safe_req(src, msg.safety_set)
        elif isinstance(msg, SafeAckMsg):
            self.on_safe_ack(src, msg.ack)
        elif isinstance(msg, SbsAckReq):
            self.acceptor_on_ack_req(src, msg)
        elif isinstance(msg, SbsAck):
            self.on_ack(src, msg)
        elif isinstance(msg, SbsNack):
            self.on_nack(src, msg)

    def progress(self) -> None:
        self.start_safetying()
        self.build_proposal()
        self.try_decide()
