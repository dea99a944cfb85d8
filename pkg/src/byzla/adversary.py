"""Byzantine strategies.

Each strategy is a node class that takes the place of a correct process.
Most subclass the honest node and override the one behaviour they attack,
so the rest of the node (reliable broadcast participation, the acceptor
role) keeps running and the attack is exercised against a live protocol.
Adversaries act through their port only: they can send arbitrary frames
from their own id but cannot touch links between correct nodes.
"""

from __future__ import annotations

from typing import Any

from byzla.lattice import Item, LatticeValue
from byzla.process import Process
from byzla.rbcast import ECHO, INIT, READY, RbFrame, Tag
from byzla.simnet import Node
from byzla import gwts, rsm, sbs, wts

__all__ = ["SilentNode", "strategies_for", "register"]

_REGISTRY: dict[str, dict[str, type]] = {}


def register(protocol: str, name: str):
    def deco(cls):
        _REGISTRY.setdefault(protocol, {})[name] = cls
        return cls

    return deco


def strategies_for(protocol: str) -> dict[str, type]:
    return dict(_REGISTRY.get(protocol, {}))


class SilentNode(Node):
    """Sends nothing and ignores everything; behaves like a crash at time 0."""

    def __init__(self, node_id: int, *args: Any, **kwargs: Any) -> None:
        super().__init__(node_id)


for _proto in ("rbcast", "wts", "gwts", "sbs", "rsm"):
    register(_proto, "silent")(SilentNode)


def equivocate(node, tag: Tag, payloads: tuple[bytes, bytes]) -> None:
    """Open ``tag`` with a different payload for each half of the processes.

    Each destination receives one INIT, one ECHO and one READY, all for the
    payload assigned to it, which is the most an equivocator can push into a
    single instance without repeating itself to a peer.
    """
    node.rb.opened.add(tag)
    half = node.n // 2
    for dst in range(node.n):
        payload = payloads[0] if dst < half else payloads[1]
        for phase in (INIT, ECHO, READY):
            node.port.send(dst, RbFrame(phase, tag, payload))


class _OwnTagSwallower:
    """Mixin: frames for the node's own equivocated instances are ignored."""

    def on_message(self, src: int, msg: Any) -> None:
        if isinstance(msg, RbFrame) and msg.tag.sender == self.id and msg.tag in self.rb.opened:
            return
        super().on_message(src, msg)


# -- rbcast-only scenarios ---------------------------------------------------


class RbcastNode(Process):
    """Correct process in an rbcast-only scenario: broadcasts one payload."""

    def __init__(self, node_id: int, n: int, f: int, payload: bytes) -> None:
        super().__init__(node_id, n, f)
        self.payload = payload

    def on_start(self) -> None:
        self.rb.broadcast(Tag.disclosure(self.id, 0), self.payload)


@register("rbcast", "equivocator")
class RbcastEquivocator(_OwnTagSwallower, RbcastNode):
    def on_start(self) -> None:
        equivocate(self, Tag.disclosure(self.id, 0), (self.payload, self.payload + b"'"))


# -- WTS -----------------------------------------------------------------------


@register("wts", "equivocator")
class WtsEquivocator(_OwnTagSwallower, wts.WtsNode):
    """Discloses two different values to the two halves of the system."""

    def disclose(self, value: LatticeValue) -> None:
        (item,) = value.items
        twin = Item(item.origin, item.kind, item.payload + b"'")
        equivocate(self, Tag.disclosure(self.id, 0), (value.to_bytes(), LatticeValue.of(twin).to_bytes()))


@register("wts", "nack-flooder")
class WtsNackFlooder(wts.WtsNode):
    """Nacks every request at once with everything it has seen delivered."""

    def on_direct(self, src: int, msg: Any) -> None:
        if isinstance(msg, wts.AckReq):
            self.port.send(src, wts.Nack(LatticeValue(frozenset(self.svs)), msg.ts))
            return
        super().on_direct(src, msg)


@register("wts", "stale-acker")
class WtsStaleAcker(wts.WtsNode):
    """Never acks the current request; replays acks for older timestamps."""

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.seen: dict[int, list[wts.AckReq]] = {}

    def on_direct(self, src: int, msg: Any) -> None:
        if isinstance(msg, wts.AckReq):
            history = self.seen.setdefault(src, [])
            for old in history:
                self.port.send(src, wts.Ack(old.proposal, old.ts))
            if msg.ts > 0:
                self.port.send(src, wts.Ack(msg.proposal, msg.ts - 1))
            history.append(msg)
            return
        super().on_direct(src, msg)


# -- GWTS ----------------------------------------------------------------------


@register("gwts", "round-jumper")
class GwtsRoundJumper(gwts.GwtsNode):
    """Skips disclosure and floods ack requests for rounds nobody trusts yet.

    The requests carry only values that are already disclosed, so SAFEA
    passes everywhere and the acceptors' round gating is the only thing
    standing between them and an ack. The node still serves as an acceptor
    and relays broadcasts, so correct processes are not starved.
    """

    def __init__(self, *args: Any, lead: int = 3, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.lead = lead
        self.jump_ts = 0
        self.flooded_to = 0
        self.state = gwts.HALTED  # never discloses, never proposes

    def on_start(self) -> None:
        self.flood(1)

    def flood(self, start: int) -> None:
        target = start + self.lead
        seen = LatticeValue(frozenset(self.first_seen))
        for r in range(max(start, self.flooded_to + 1), target + 1):
            self.jump_ts += 1
            self.port.broadcast(gwts.GwtsAckReq(seen, self.jump_ts, r))
        self.flooded_to = max(self.flooded_to, target)

    def on_disclosure(self, value: LatticeValue, round: int, sender: int) -> None:
        super().on_disclosure(value, round, sender)
        self.flood(round + 1)


# -- SbS -----------------------------------------------------------------------


@register("sbs", "double-signer")
class SbsDoubleSigner(sbs.SbsNode):
    """Signs two different inputs and tries to get a safety proof for each.

    The two signed values go to the two halves of the system in the init
    phase. In the safetying phase the first half of the acceptors is asked
    to vouch for one twin and the second half for the other. Whatever proof
    quorums it manages to assemble are pushed out as ack requests. The
    acceptor role stays honest.
    """

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.twins: tuple[sbs.SignedValue, sbs.SignedValue] | None = None
        self.variants: list[frozenset[sbs.SignedValue]] = []
        self.variant_acks: list[dict[int, sbs.SafeAck]] = []
        self.pushed: set[int] = set()

    def propose(self, item: Item) -> None:
        twin = Item(item.origin, item.kind, item.payload + b"'")
        a = sbs.SignedValue.create(self.signer, item)
        b = sbs.SignedValue.create(self.signer, twin)
        self.twins = (a, b)
        self.emit("propose", LatticeValue.of(item).to_bytes(), value=[item.token()])
        half = self.n // 2
        for dst in range(self.n):
            self.port.send(dst, sbs.SbsInit(a if dst < half else b))

    def on_init(self, src: int, sv: sbs.SignedValue) -> None:
        if self.twins and sv in self.twins:
            return
        super().on_init(src, sv)

    def start_safetying(self) -> bool:
        if self.state != sbs.INIT or self.twins is None or len(self.safety_set) < self.n - self.f - 1:
            return False
        self.state = sbs.SAFETYING
        others = frozenset(self.safety_set)
        self.variants = [others | {self.twins[0]}, others | {self.twins[1]}]
        self.variant_acks = [{}, {}]
        half = self.n // 2
        for dst in range(self.n):
            self.port.send(dst, sbs.SafeReq(self.variants[0 if dst < half else 1]))
        return True

    def on_safe_ack(self, src: int, ack: sbs.SafeAck) -> None:
        if self.state != sbs.SAFETYING or ack.acceptor != src or not ack.verify(self.signer):
            return
        for k, variant in enumerate(self.variants):
            if ack.rcvd == variant:
                self.variant_acks[k].setdefault(src, ack)

    def build_proposal(self) -> bool:
        for k, acks in enumerate(self.variant_acks):
            if k in self.pushed or len(acks) < self.quorum:
                continue
            self.pushed.add(k)
            proof = frozenset(acks.values())
            conflicted = frozenset().union(*(a.conflicted for a in proof))
            proposal = sbs.ProposalSet({sv: proof for sv in self.variants[k] if sv not in conflicted})
            self.ts += 1
            self.port.broadcast(sbs.SbsAckReq(proposal, self.ts))
        return False


@register("sbs", "nack-flooder")
class SbsNackFlooder(sbs.SbsNode):
    """Acceptor that nacks every valid request with all proven values it knows."""

    def acceptor_on_ack_req(self, src: int, msg: sbs.SbsAckReq) -> None:
        if not sbs.all_safe(msg.proposal, self.signer, self.quorum, self.admissible):
            return
        self.accepted = self.accepted | msg.proposal
        self.port.send(src, sbs.SbsNack(self.accepted, msg.ts))


# -- RSM -----------------------------------------------------------------------


@register("rsm", "fabricator-replica")
class RsmFabricatorReplica(rsm.ReplicaNode):
    """Lies to clients while playing GWTS honestly.

    It drops every command it was asked to propose, reports a fabricated
    decision to the client at once, and confirms whatever it is asked to
    confirm, fabricated states included.
    """

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.fakes = 0

    def on_client_request(self, client: int, msg: rsm.ClientRequest) -> None:
        self.fakes += 1
        forged = rsm.command(10_000 + self.id, self.fakes, "fabricated")
        fabricated = LatticeValue.of(msg.item, forged)
        self.port.send(client, rsm.DecideNote(fabricated))
        self.port.send(client, rsm.CnfRep(fabricated))

    def on_direct(self, src: int, msg: Any) -> None:
        if isinstance(msg, rsm.CnfReq):
            self.port.send(src, rsm.CnfRep(msg.value))
            return
        super().on_direct(src, msg)
