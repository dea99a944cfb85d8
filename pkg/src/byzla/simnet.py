"""Deterministic discrete-event network simulator.

Nodes are sequential event handlers. The simulator owns every link, so a
Byzantine node can only inject frames from its own id and can never drop or
alter traffic between correct nodes.

Message delays are measured as causal depth: each node keeps a Lamport-style
clock, a message sent at clock ``d`` arrives with depth ``d + 1`` and raises
the receiver's clock to at least that. Under the lockstep scheduler the
clock of a node equals the global step number, so latency bounds expressed
in message delays can be checked exactly.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable

__all__ = [
    "AdversarialDelayScheduler",
    "ConfigError",
    "Envelope",
    "LockstepScheduler",
    "Node",
    "RandomScheduler",
    "RunResult",
    "ScenarioConfig",
    "Simulator",
    "Trace",
    "TraceEvent",
    "make_scheduler",
    "run",
    "validate_config",
]

PROTOCOLS = ("wts", "gwts", "sbs", "rsm", "rbcast")
POLICIES = ("lockstep", "random", "adversarial-delay")


def digest(blob: bytes) -> str:
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


# ---------------------------------------------------------------------------
# Envelopes and schedulers


@dataclass(slots=True)
class Envelope:
    seq: int
    src: int
    dst: int
    payload: Any
    send_depth: int
    born: int = 0

    @property
    def depth(self) -> int:
        return self.send_depth + 1


class LockstepScheduler:
    """Delivers every message of depth ``d`` before any message of depth ``d+1``.

    Within one depth the order is a seeded shuffle, so different seeds
    exercise different interleavings of the same synchronous step.
    ``seed=None`` keeps plain send order.
    """

    policy = "lockstep"
    fair = True

    def __init__(self, seed: int | None = None) -> None:
        self.rng = random.Random(seed) if seed is not None else None
        self._heap: list[tuple[int, float, int, Envelope]] = []

    def push(self, env: Envelope) -> None:
        tie = self.rng.random() if self.rng is not None else 0.0
        heapq.heappush(self._heap, (env.depth, tie, env.seq, env))

    def pop(self, step: int) -> Envelope:
        return heapq.heappop(self._heap)[3]

    def __len__(self) -> int:
        return len(self._heap)


class RandomScheduler:
    """Uniformly random delivery order with an age cap for fairness.

    A message that has been pending for more than ``age_cap`` scheduler steps
    is delivered next, so nothing starves.
    """

    policy = "random"
    fair = True

    def __init__(self, seed: int, age_cap: int = 500) -> None:
        self.rng = random.Random(seed)
        self.age_cap = age_cap
        self._pending: list[Envelope] = []
        self._pos: dict[int, int] = {}
        self._oldest: list[tuple[int, int]] = []

    def push(self, env: Envelope) -> None:
        self._pos[env.seq] = len(self._pending)
        self._pending.append(env)
        heapq.heappush(self._oldest, (env.born, env.seq))

    def _take(self, index: int) -> Envelope:
        pending = self._pending
        env = pending[index]
        last = pending.pop()
        if last is not env:
            pending[index] = last
            self._pos[last.seq] = index
        del self._pos[env.seq]
        return env

    def _overdue(self, step: int) -> Envelope | None:
        oldest = self._oldest
        while oldest and oldest[0][1] not in self._pos:
            heapq.heappop(oldest)
        if oldest and step - oldest[0][0] > self.age_cap:
            _, seq = heapq.heappop(oldest)
            return self._take(self._pos[seq])
        return None

    def pop(self, step: int) -> Envelope:
        env = self._overdue(step)
        if env is not None:
            return env
        return self._take(self.rng.randrange(len(self._pending)))

    def __len__(self) -> int:
        return len(self._pending)


class AdversarialDelayScheduler(RandomScheduler):
    """Random scheduler that holds back named links during a finite prefix.

    ``script`` is ``{"links": [[src, dst], ...], "prefix": steps}``. Held
    links resume normal fair delivery once the prefix is over, or earlier
    if nothing else is deliverable.
    """

    policy = "adversarial-delay"

    def __init__(self, seed: int, age_cap: int = 500, script: dict | None = None) -> None:
        super().__init__(seed, age_cap)
        script = script or {}
        self.links = {tuple(link) for link in script.get("links", [])}
        self.prefix = int(script.get("prefix", 0))

    def pop(self, step: int) -> Envelope:
        if step >= self.prefix or not self.links:
            return super().pop(step)
        eligible = [i for i, e in enumerate(self._pending) if (e.src, e.dst) not in self.links]
        if not eligible:
            return self._take(self.rng.randrange(len(self._pending)))
        return self._take(self.rng.choice(eligible))


def make_scheduler(spec: dict) -> LockstepScheduler | RandomScheduler:
    policy = spec.get("policy", "random")
    seed = int(spec.get("seed", 0))
    age_cap = int(spec.get("age_cap", 500))
    if policy == "lockstep":
        return LockstepScheduler(seed)
    if policy == "random":
        return RandomScheduler(seed, age_cap)
    if policy == "adversarial-delay":
        return AdversarialDelayScheduler(seed, age_cap, spec.get("script"))
    raise ConfigError(f"unknown scheduler policy {policy!r}")


# ---------------------------------------------------------------------------
# Trace


@dataclass(slots=True)
class TraceEvent:
    seq: int
    depth: int
    node: int
    kind: str
    digest: str = ""
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "depth": self.depth,
                "node": self.node,
                "kind": self.kind,
                "digest": self.digest,
                "detail": self.detail,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: dict) -> TraceEvent:
        return cls(int(d["seq"]), int(d["depth"]), int(d["node"]), str(d["kind"]), str(d.get("digest", "")), dict(d.get("detail", {})))


class Trace(list):
    """Ordered list of :class:`TraceEvent` with JSON-lines round-tripping."""

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self)

    @classmethod
    def from_jsonl(cls, text: str) -> Trace:
        trace = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                trace.append(TraceEvent.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"trace line {lineno}: {exc}") from exc
        return trace

    def of_kind(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self if e.kind in kinds]


# ---------------------------------------------------------------------------
# Nodes


class Node:
    """Base class for simulated processes and clients.

    Subclasses override :meth:`on_start` and :meth:`on_message`. The
    simulator attaches ``self.port`` before starting the run.
    """

    def __init__(self, node_id: int) -> None:
        self.id = node_id
        self.port: Port | None = None

    def on_start(self) -> None:
        pass

    def on_message(self, src: int, msg: Any) -> None:
        pass


class Port:
    """A node's only handle on the network."""

    __slots__ = ("sim", "node_id", "n")

    def __init__(self, sim: Simulator, node_id: int, n: int) -> None:
        self.sim = sim
        self.node_id = node_id
        self.n = n

    @property
    def depth(self) -> int:
        return self.sim.clock[self.node_id]

    def send(self, dst: int, msg: Any) -> None:
        self.sim.transmit(self.node_id, dst, msg)

    def broadcast(self, msg: Any, dsts: Iterable[int] | None = None) -> None:
        for dst in range(self.n) if dsts is None else dsts:
            self.sim.transmit(self.node_id, dst, msg)

    def emit(self, kind: str, payload: bytes | None = None, **detail: Any) -> None:
        self.sim.record(self.node_id, kind, payload, detail)


@dataclass
class RunResult:
    trace: Trace
    quiescent: bool
    steps: int
    sent: dict[int, Counter]
    received: dict[int, Counter]
    envelopes: list[Envelope] | None = None
    nodes: dict[int, Node] | None = None

    def total_sent(self, node_ids: Iterable[int] | None = None) -> int:
        ids = self.sent.keys() if node_ids is None else node_ids
        return sum(sum(self.sent[i].values()) for i in ids)


class Simulator:
    """Runs a set of nodes to quiescence or until ``budget`` deliveries.

    ``n`` is the number of protocol processes (ids ``0..n-1``); extra nodes
    such as clients may use higher ids.
    """

    def __init__(
        self,
        nodes: Iterable[Node],
        n: int,
        scheduler,
        *,
        budget: int = 1_000_000,
        trace_messages: bool = True,
        record_envelopes: bool = False,
    ) -> None:
        self.nodes = {node.id: node for node in nodes}
        self.n = n
        self.scheduler = scheduler
        self.budget = budget
        self.trace_messages = trace_messages
        self.record_envelopes = record_envelopes
        self.clock: dict[int, int] = {i: 0 for i in self.nodes}
        self.sent: dict[int, Counter] = defaultdict(Counter)
        self.received: dict[int, Counter] = defaultdict(Counter)
        self.trace = Trace()
        self.envelopes: list[Envelope] = []
        self.step = 0
        self._seq = 0
        for node in self.nodes.values():
            node.port = Port(self, node.id, n)

    def transmit(self, src: int, dst: int, msg: Any) -> None:
        if dst not in self.nodes:
            raise ValueError(f"node {src} sent to unknown node {dst}")
        env = Envelope(self._seq, src, dst, msg, self.clock[src], self.step)
        self._seq += 1
        self.sent[src][msg.kind] += 1
        if self.record_envelopes:
            self.envelopes.append(env)
        if self.trace_messages:
            detail = {"dst": dst, "msg": msg.kind, "env": env.seq}
            tag = getattr(msg, "tag", None)
            if tag is not None:
                detail["tag"] = tag.label()
            self._append(src, self.clock[src], "send", digest(msg.encode()), detail)
        self.scheduler.push(env)

    def record(self, node_id: int, kind: str, payload: bytes | None, detail: dict) -> None:
        self._append(node_id, self.clock[node_id], kind, digest(payload) if payload is not None else "", detail)

    def _append(self, node_id: int, depth: int, kind: str, dig: str, detail: dict) -> None:
        self.trace.append(TraceEvent(len(self.trace), depth, node_id, kind, dig, detail))

    def run(self) -> RunResult:
        for node_id in sorted(self.nodes):
            self.nodes[node_id].on_start()
        while len(self.scheduler) and self.step < self.budget:
            env = self.scheduler.pop(self.step)
            self.step += 1
            dst = env.dst
            if env.depth > self.clock[dst]:
                self.clock[dst] = env.depth
            self.received[dst][env.payload.kind] += 1
            if self.trace_messages:
                self._append(dst, self.clock[dst], "deliver", digest(env.payload.encode()), {"src": env.src, "msg": env.payload.kind, "env": env.seq})
            self.nodes[dst].on_message(env.src, env.payload)
        quiescent = len(self.scheduler) == 0
        metrics = {
            "sent": {str(k): dict(sorted(v.items())) for k, v in sorted(self.sent.items())},
            "received": {str(k): dict(sorted(v.items())) for k, v in sorted(self.received.items())},
        }
        self._append(-1, max(self.clock.values(), default=0), "end", "", {"quiescent": quiescent, "steps": self.step, "metrics": metrics})
        return RunResult(
            self.trace,
            quiescent,
            self.step,
            dict(self.sent),
            dict(self.received),
            self.envelopes if self.record_envelopes else None,
            self.nodes,
        )


# ---------------------------------------------------------------------------
# Scenario configuration


class ConfigError(ValueError):
    """Raised for scenario configurations that cannot be run."""


@dataclass
class ScenarioConfig:
    protocol: str
    n: int
    f: int
    byzantine: list[dict] = field(default_factory=list)
    scheduler: dict = field(default_factory=lambda: {"policy": "random", "seed": 0})
    rounds: int = 3
    drain_rounds: int = 3
    inputs: dict[str, Any] = field(default_factory=dict)
    clients: list[dict] = field(default_factory=list)
    budget: int = 2_000_000
    signatures: str = "ideal"
    message_budget_c: float | None = None
    trace_messages: bool = True
    replica_selection: str = "lowest"

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for required in ("protocol", "n", "f"):
            if required not in data:
                raise ConfigError(f"missing config field {required!r}")
        try:
            cfg = cls(**data)
            cfg.n = int(cfg.n)
            cfg.f = int(cfg.f)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def with_seed(self, seed: int) -> ScenarioConfig:
        data = json.loads(json.dumps(self.to_dict()))
        data["scheduler"]["seed"] = seed
        return ScenarioConfig.from_dict(data)

    @property
    def byzantine_ids(self) -> list[int]:
        return sorted(int(b["node"]) for b in self.byzantine)

    @property
    def correct_ids(self) -> list[int]:
        bad = set(self.byzantine_ids)
        return [i for i in range(self.n) if i not in bad]


def validate_config(cfg: ScenarioConfig) -> None:
    """Reject configurations outside the model; raises :class:`ConfigError`."""
    from byzla.adversary import strategies_for

    if cfg.protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {cfg.protocol!r}; expected one of {PROTOCOLS}")
    if cfg.f < 0:
        raise ConfigError(f"f must be non-negative, got {cfg.f}")
    if cfg.n < 3 * cfg.f + 1:
        raise ConfigError(f"n={cfg.n} processes cannot tolerate f={cfg.f} Byzantine faults; at least 3f+1={3 * cfg.f + 1} are needed")
    ids = cfg.byzantine_ids
    if len(ids) != len(set(ids)):
        raise ConfigError("a node is listed as Byzantine more than once")
    if len(ids) > cfg.f:
        raise ConfigError(f"{len(ids)} Byzantine nodes exceed f={cfg.f}")
    if any(i < 0 or i >= cfg.n for i in ids):
        raise ConfigError(f"Byzantine node ids must lie in [0, {cfg.n})")
    allowed = strategies_for(cfg.protocol)
    for b in cfg.byzantine:
        if b.get("strategy") not in allowed:
            raise ConfigError(f"strategy {b.get('strategy')!r} is not available for {cfg.protocol}; expected one of {sorted(allowed)}")
    policy = cfg.scheduler.get("policy", "random")
    if policy not in POLICIES:
        raise ConfigError(f"unknown scheduler policy {policy!r}")
    if cfg.rounds < 1 or cfg.drain_rounds < 0:
        raise ConfigError("rounds must be >= 1 and drain_rounds >= 0")
    if cfg.signatures not in ("ideal", "ed25519"):
        raise ConfigError(f"unknown signature scheme {cfg.signatures!r}")
    if cfg.replica_selection not in ("lowest", "random"):
        raise ConfigError(f"unknown replica selection {cfg.replica_selection!r}")
    if cfg.protocol == "rsm":
        for c in cfg.clients:
            if c.get("strategy") not in (None, "bad-client"):
                raise ConfigError(f"unknown client strategy {c.get('strategy')!r}")
            for op in c.get("ops", []):
                if op not in ("update", "read"):
                    raise ConfigError(f"unknown client operation {op!r}")


def run(cfg: ScenarioConfig, *, record_envelopes: bool = False) -> RunResult:
    """Validate ``cfg``, build its nodes and run the simulation."""
    from byzla.harness import build

    validate_config(cfg)
    nodes = build(cfg)
    sim = Simulator(
        nodes,
        cfg.n,
        make_scheduler(cfg.scheduler),
        budget=cfg.budget,
        trace_messages=cfg.trace_messages,
        record_envelopes=record_envelopes,
    )
    return sim.run()
