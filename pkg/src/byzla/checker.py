"""Offline trace checker.

Every check takes a :class:`~byzla.simnet.Trace` plus the run's *roles*
(who was Byzantine, the scheduler policy, the round budget and so on; see
:func:`byzla.harness.roles_for`) and returns a :class:`Verdict` with one
:class:`PropertyResult` per property. A failing result always names the
events that witness the failure by their ``seq`` numbers.

Liveness-style properties need a run that actually finished. When a run
did not reach quiescence under a scheduler that is only eventually fair,
those properties are reported as inconclusive (``passed is None``) instead
of failing.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable

from byzla.lattice import Item, LatticeValue
from byzla.simnet import Trace, TraceEvent

__all__ = [
    "PropertyResult",
    "TraceFormatError",
    "Verdict",
    "check",
    "check_gla",
    "check_la",
    "check_rbcast",
    "check_rsm",
    "check_sbs_uniqueness",
]


class TraceFormatError(ValueError):
    """The trace (or roles file) is structurally broken, as opposed to failing a property."""


@dataclass
class PropertyResult:
    name: str
    passed: bool | None
    witness: list[int] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        status = {True: "pass", False: "fail", None: "inconclusive"}[self.passed]
        return {"property": self.name, "status": status, "witness": self.witness, "message": self.message}


@dataclass
class Verdict:
    protocol: str
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.passed is not False for r in self.results)

    def failures(self) -> list[PropertyResult]:
        return [r for r in self.results if r.passed is False]

    def __getitem__(self, name: str) -> PropertyResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def add(self, name: str, witness: Iterable[int] = (), message: str = "", passed: bool | None = None) -> None:
        witness = sorted(set(witness))
        if passed is None and not message.startswith("inconclusive"):
            passed = not witness and not message
        self.results.append(PropertyResult(name, passed, witness, message))

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "ok": self.ok, "properties": [r.to_dict() for r in self.results]}


# -- helpers -------------------------------------------------------------------


def _need(event: TraceEvent, key: str) -> Any:
    try:
        return event.detail[key]
    except (KeyError, TypeError):
        raise TraceFormatError(f"event seq={event.seq} kind={event.kind!r} lacks detail field {key!r}") from None


def _value(event: TraceEvent, key: str = "value") -> frozenset[str]:
    raw = _need(event, key)
    if not isinstance(raw, list) or not all(isinstance(t, str) for t in raw):
        raise TraceFormatError(f"event seq={event.seq}: {key!r} must be a list of item tokens")
    return frozenset(raw)


def _origin(token: str) -> int:
    try:
        return Item.from_token(token).origin
    except ValueError:
        raise TraceFormatError(f"malformed item token {token!r}") from None


def _roles(roles: dict, *keys: str) -> None:
    for key in keys:
        if key not in roles:
            raise TraceFormatError(f"roles lack field {key!r}")


def _end(trace: Trace) -> TraceEvent | None:
    ends = trace.of_kind("end")
    return ends[-1] if ends else None


def _finished(trace: Trace, roles: dict) -> bool | None:
    """True if liveness can be judged, None if the run is inconclusive."""
    end = _end(trace)
    if end is None:
        raise TraceFormatError("trace has no end event")
    if _need(end, "quiescent"):
        return True
    if roles.get("scheduler", {}).get("policy") == "adversarial-delay":
        return None
    return False


def _liveness(verdict: Verdict, name: str, trace: Trace, roles: dict, missing: list[int], detail: str) -> None:
    finished = _finished(trace, roles)
    if not missing:
        verdict.add(name)
    elif finished is None:
        verdict.add(name, message=f"inconclusive: run did not quiesce ({detail})", passed=None)
    else:
        end = _end(trace)
        why = detail if finished else f"{detail}; run not quiescent"
        verdict.add(name, [end.seq], why, passed=False)


def _chain_violation(events: list[tuple[TraceEvent, frozenset[str]]]) -> list[int]:
    """Seqs of one incomparable pair, or [] if all values form a chain."""
    ordered = sorted(events, key=lambda p: (len(p[1]), p[0].seq))
    for (e1, a), (e2, b) in zip(ordered, ordered[1:]):
        if not a <= b:
            # consecutive-by-size is enough: a chain sorted by size is totally ordered
            return [e1.seq, e2.seq]
    return []


def _metric_sent(trace: Trace, ids: Iterable[int], kinds: Iterable[str] | None = None) -> dict[int, int]:
    end = _end(trace)
    if end is None:
        raise TraceFormatError("trace has no end event")
    sent = _need(end, "metrics").get("sent", {})
    out = {}
    for i in ids:
        counts = sent.get(str(i), {})
        out[i] = sum(counts.get(k, 0) for k in kinds) if kinds is not None else sum(counts.values())
    return out


# -- single-shot lattice agreement ---------------------------------------------


def check_la(trace: Trace, roles: dict) -> Verdict:
    """WTS and SbS: Liveness, Stability, Comparability, Inclusivity, Non-Triviality and the bounds."""
    _roles(roles, "protocol", "n", "f", "byzantine")
    protocol, n, f = roles["protocol"], roles["n"], roles["f"]
    byz = set(roles["byzantine"])
    correct = [i for i in range(n) if i not in byz]
    verdict = Verdict(protocol)

    decides: dict[int, list[TraceEvent]] = defaultdict(list)
    proposals: dict[int, TraceEvent] = {}
    for e in trace:
        if e.node in byz:
            continue
        if e.kind == "decide":
            decides[e.node].append(e)
        elif e.kind == "propose":
            proposals[e.node] = e

    _liveness(verdict, "Liveness", trace, roles, [i for i in correct if not decides[i]],
              f"correct nodes without a decision: {[i for i in correct if not decides[i]]}")

    extra = [e.seq for i in correct for e in decides[i][1:]]
    verdict.add("Stability", extra, "a correct node decided more than once" if extra else "")

    firsts = [(decides[i][0], _value(decides[i][0])) for i in correct if decides[i]]
    bad = _chain_violation(firsts)
    verdict.add("Comparability", bad, "incomparable decisions" if bad else "")

    bad = []
    for i in correct:
        if decides[i] and i in proposals and not _value(proposals[i]) <= _value(decides[i][0]):
            bad += [proposals[i].seq, decides[i][0].seq]
    verdict.add("Inclusivity", bad, "own proposal missing from decision" if bad else "")

    x = frozenset().union(*(_value(e) for e in proposals.values())) if proposals else frozenset()
    b_items: set[str] = set()
    bad = []
    for dec, value in firsts:
        for token in value - x:
            if _origin(token) in byz:
                b_items.add(token)
            else:
                bad.append(dec.seq)
    if len(b_items) > f:
        bad += [d.seq for d, v in firsts if v & b_items]
    verdict.add(
        "Non-Triviality",
        bad,
        f"decision outside X ∪ B or |B|={len(b_items)} > f={f}" if bad else "",
    )

    depth_bound = {"wts": 2 * f + 5, "sbs": 5 + 4 * f}.get(protocol)
    if roles.get("scheduler", {}).get("policy") == "lockstep" and depth_bound is not None:
        bad = [d.seq for d, _ in firsts if d.depth > depth_bound]
        verdict.add("DelayBound", bad, f"decision deeper than {depth_bound}" if bad else "")

    ref_bound = {"wts": f, "sbs": 2 * f}.get(protocol)
    if ref_bound is not None:
        bad = [d.seq for d, _ in firsts if _need(d, "refinements") > ref_bound]
        verdict.add("RefinementBound", bad, f"more than {ref_bound} refinements" if bad else "")

    if protocol == "sbs":
        from byzla.sbs import PROPOSER_KINDS

        limit = (3 + 2 * f) * n
        sent = _metric_sent(trace, correct, PROPOSER_KINDS)
        over = {i: s for i, s in sent.items() if s > limit}
        verdict.add("MessageBound", [_end(trace).seq] if over else [], f"proposer sends {over} exceed {limit}" if over else "")
    return verdict


# -- generalized lattice agreement -------------------------------------------


def check_gla(trace: Trace, roles: dict) -> Verdict:
    """GWTS: Liveness, Local Stability, Comparability, Inclusivity, Non-Triviality, gating and budget."""
    _roles(roles, "n", "f", "byzantine", "rounds")
    n, f = roles["n"], roles["f"]
    byz = set(roles["byzantine"])
    correct = [i for i in range(n) if i not in byz]
    verdict = Verdict(roles.get("protocol", "gwts"))

    decides: dict[int, list[TraceEvent]] = defaultdict(list)
    submits: dict[int, list[TraceEvent]] = defaultdict(list)
    disclosed: dict[int, set[str]] = defaultdict(set)
    disclosures: dict[tuple[int, int], list[TraceEvent]] = defaultdict(list)
    gating = []
    for e in trace:
        if e.node in byz:
            continue
        if e.kind == "decide":
            decides[e.node].append(e)
        elif e.kind == "submit":
            submits[e.node].append(e)
        elif e.kind == "disclosure":
            disclosed[e.node].update(_value(e))
            disclosures[(e.node, _need(e, "round"))].append(e)
        elif e.kind == "ack-req-processed":
            if _need(e, "round") > _need(e, "safe_r"):
                gating.append(e.seq)

    rounds = roles["rounds"]
    short = [i for i in correct if len(decides[i]) < rounds]
    _liveness(verdict, "Liveness", trace, roles, short, f"nodes with fewer than {rounds} decisions: {short}")

    bad = []
    for i in correct:
        seq = decides[i]
        for a, b in zip(seq, seq[1:]):
            if not _value(a) <= _value(b):
                bad += [a.seq, b.seq]
    verdict.add("Local Stability", bad, "decision sequence shrank" if bad else "")

    everything = [(e, _value(e)) for i in correct for e in decides[i]]
    bad = _chain_violation(everything)
    verdict.add("Comparability", bad, "incomparable decisions" if bad else "")

    finished = _finished(trace, roles)
    bad = []
    for i in correct:
        decided = frozenset().union(*(_value(e) for e in decides[i])) if decides[i] else frozenset()
        bad += [s.seq for s in submits[i] if not _value(s) <= decided]
    if bad and finished is None:
        verdict.add("Inclusivity", message="inconclusive: run did not quiesce", passed=None)
    else:
        verdict.add("Inclusivity", bad, "submitted value never decided by its submitter" if bad else "")

    bad = []
    for i in correct:
        for e in decides[i]:
            if not _value(e) <= disclosed[i]:
                bad.append(e.seq)
    for (node, rnd), events in disclosures.items():
        senders = [_need(e, "sender") for e in events]
        byz_sets = [s for s in senders if s in byz]
        if len(senders) != len(set(senders)) or len(byz_sets) > f:
            bad += [e.seq for e in events]
    verdict.add("Non-Triviality", bad, "decided item without disclosure, or too many Byzantine disclosures" if bad else "")

    verdict.add("Round Gating", gating, "acceptor served a round beyond Safe_r" if gating else "")

    c = roles.get("message_budget_c")
    if c is not None:
        sent = sum(_metric_sent(trace, correct).values())
        decisions = sum(len(decides[i]) for i in correct)
        per = sent / decisions if decisions else float("inf")
        limit = c * max(f, 1) * n * n
        verdict.add(
            "Message Budget",
            [_end(trace).seq] if per > limit else [],
            f"{per:.1f} messages per decision exceeds {limit}" if per > limit else "",
        )
    return verdict


# -- replicated state machine ------------------------------------------------------


@dataclass
class _Op:
    kind: str
    client: int
    item: str
    start: int
    end: int | None = None
    result: frozenset[str] | None = None
    state: frozenset[str] | None = None
    events: list[int] = field(default_factory=list)


def check_rsm(trace: Trace, roles: dict) -> Verdict:
    """The six RSM properties, for correct clients, over trace order."""
    _roles(roles, "n", "byzantine", "clients")
    n = roles["n"]
    byz = set(roles["byzantine"])
    good_clients = {c["id"]: c for c in roles["clients"] if c.get("strategy") is None}
    verdict = Verdict(roles.get("protocol", "rsm"))

    ops: list[_Op] = []
    open_ops: dict[int, _Op] = {}
    decided: set[frozenset[str]] = set()
    for e in trace:
        if e.node in good_clients:
            if e.kind in ("update-start", "read-start"):
                op = _Op(e.kind.split("-")[0], e.node, _need(e, "item"), e.seq, events=[e.seq])
                ops.append(op)
                open_ops[e.node] = op
            elif e.kind in ("update-complete", "read-complete"):
                op = open_ops.pop(e.node, None)
                if op is None or op.item != _need(e, "item"):
                    raise TraceFormatError(f"event seq={e.seq}: completion without a matching start")
                op.end = e.seq
                op.events.append(e.seq)
                if op.kind == "read":
                    op.result = _value(e, "result")
                    op.state = _value(e, "state")
        elif e.kind == "decide" and e.node < n and e.node not in byz:
            decided.add(_value(e))

    expected = sum(len(c.get("ops", [])) for c in good_clients.values())
    pending = [op.start for op in ops if op.end is None]
    missing = expected - len(ops)
    _liveness(
        verdict,
        "Liveness",
        trace,
        roles,
        pending + ([-1] if missing > 0 else []),
        f"{len(pending)} operations never completed, {max(missing, 0)} never started",
    )

    reads = [op for op in ops if op.kind == "read" and op.end is not None]
    updates = [op for op in ops if op.kind == "update" and op.end is not None]

    bad = []
    for r in reads:
        commands = frozenset(t for t in r.state if Item.from_token(t).kind.name == "COMMAND")
        if r.state not in decided or r.result != commands:
            bad += r.events
    verdict.add("Read Validity", bad, "read returned a state no correct replica decided" if bad else "")

    bad = _chain_violation([(_fake_event(r.end), r.result) for r in reads])
    verdict.add("Read Consistency", bad, "incomparable read results" if bad else "")

    bad = []
    for r1 in reads:
        for r2 in reads:
            if r1.end < r2.start and not r1.result <= r2.result:
                bad += [r1.end, r2.end]
    verdict.add("Read Monotonicity", bad, "a later read lost commands" if bad else "")

    bad = []
    for u1 in updates:
        for u2 in updates:
            if u1.end < u2.start:
                for r in reads:
                    if u2.item in r.result and u1.item not in r.result:
                        bad += [u1.end, u2.start, r.end]
    verdict.add("Update Stability", bad, "read saw a later update without an earlier one" if bad else "")

    bad = []
    for u in updates:
        for r in reads:
            if u.end < r.start and u.item not in r.result:
                bad += [u.end, r.end]
    verdict.add("Update Visibility", bad, "completed update missing from a later read" if bad else "")
    return verdict


def _fake_event(seq: int) -> TraceEvent:
    return TraceEvent(seq, 0, -1, "read-complete")


# -- reliable broadcast ------------------------------------------------------------


def check_rbcast(trace: Trace, roles: dict) -> Verdict:
    """Agreement, integrity, validity and the per-instance message count."""
    _roles(roles, "n", "byzantine")
    n = roles["n"]
    byz = set(roles["byzantine"])
    correct = [i for i in range(n) if i not in byz]
    verdict = Verdict(roles.get("protocol", "rbcast"))

    deliveries: dict[str, list[TraceEvent]] = defaultdict(list)
    sends: dict[str, list[int]] = defaultdict(list)
    for e in trace:
        if e.kind == "rb-deliver" and e.node not in byz:
            deliveries[_need(e, "tag")].append(e)
        elif e.kind == "send" and "tag" in e.detail:
            sends[e.detail["tag"]].append(e.seq)

    bad = []
    for events in deliveries.values():
        if len({e.digest for e in events}) > 1:
            bad += [e.seq for e in events]
    verdict.add("Agreement", bad, "correct nodes delivered different payloads for one tag" if bad else "")

    bad = []
    for events in deliveries.values():
        per_node = defaultdict(list)
        for e in events:
            per_node[e.node].append(e.seq)
        bad += [s for seqs in per_node.values() if len(seqs) > 1 for s in seqs]
    verdict.add("Integrity", bad, "a node delivered twice under one tag" if bad else "")

    missing = []
    for tag, events in deliveries.items():
        got = {e.node for e in events}
        if len(got) != len(correct):
            missing.append(tag)
    for s in correct:
        tag = f"{s}/disclosure/0"
        if roles.get("protocol") == "rbcast" and tag not in deliveries:
            missing.append(tag)
    _liveness(verdict, "Totality", trace, roles, missing, f"instances not delivered by every correct node: {missing}")

    limit = n + 2 * n * n
    if sends:
        over = [s for seqs in sends.values() if len(seqs) > limit for s in seqs[limit:]]
        verdict.add("Message Count", over, f"an instance used more than {limit} messages" if over else "")
    return verdict


# -- SbS proof scan -----------------------------------------------------------------


def check_sbs_uniqueness(envelopes: Iterable, roles: dict, signer) -> Verdict:
    """At most one value per signer can ever be shown safe.

    Scans every envelope of a run. A value counts as safe if a message
    carried it with a valid proof, or if the signed acks seen anywhere in
    the run, pooled together, would make a valid proof for it.
    """
    from byzla import sbs

    _roles(roles, "n", "f")
    n, f = roles["n"], roles["f"]
    quorum = (n + f) // 2 + 1
    verdict = Verdict("sbs")

    acks: set[sbs.SafeAck] = set()
    carried: dict[sbs.SignedValue, list[int]] = defaultdict(list)
    for env in envelopes:
        msg = env.payload
        if isinstance(msg, sbs.SafeAckMsg):
            acks.add(msg.ack)
        elif isinstance(msg, (sbs.SbsAckReq, sbs.SbsAck, sbs.SbsNack)):
            for value, proof in msg.proposal.entries.items():
                acks.update(proof)
                if sbs.is_safe_entry(value, proof, signer, quorum):
                    carried[value].append(env.seq)

    vouchers: dict[sbs.SignedValue, set[int]] = defaultdict(set)
    for ack in acks:
        if not ack.verify(signer):
            continue
        for value in ack.rcvd:
            if value not in ack.conflicted and value.verify(signer):
                vouchers[value].add(ack.acceptor)

    safe: dict[int, set[sbs.SignedValue]] = defaultdict(set)
    for value in carried:
        safe[value.sender].add(value)
    for value, who in vouchers.items():
        if len(who) >= quorum:
            safe[value.sender].add(value)

    bad = []
    for sender, values in safe.items():
        if len(values) > 1:
            bad += [s for v in values for s in carried.get(v, [])] or [-1]
    verdict.add(
        "Per-Signer Uniqueness",
        bad,
        "signers with more than one safe value: "
        + str({s: sorted(v.value.token() for v in vs) for s, vs in safe.items() if len(vs) > 1})
        if bad
        else "",
    )
    return verdict


def check(trace: Trace, roles: dict) -> Verdict:
    """Dispatch on ``roles['protocol']``."""
    _roles(roles, "protocol")
    protocol = roles["protocol"]
    if protocol in ("wts", "sbs"):
        return check_la(trace, roles)
    if protocol == "gwts":
        return check_gla(trace, roles)
    if protocol == "rsm":
        return check_rsm(trace, roles)
    if protocol == "rbcast":
        return check_rbcast(trace, roles)
    raise TraceFormatError(f"unknown protocol {protocol!r} in roles")


def decision_values(trace: Trace, node: int) -> list[LatticeValue]:
    """Decisions of one node, in order, as lattice values."""
    return [LatticeValue.from_tokens(_need(e, "value")) for e in trace if e.kind == "decide" and e.node == node]
