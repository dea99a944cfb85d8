"""Builds the node set for a :class:`~byzla.simnet.ScenarioConfig`."""

from __future__ import annotations

from byzla.adversary import RbcastNode, strategies_for
from byzla.gwts import GwtsNode
from byzla.rsm import ReplicaNode, build_clients
from byzla.sbs import SbsNode
from byzla.signatures import make_provider
from byzla.lattice import Item
from byzla.simnet import ConfigError, Node, ScenarioConfig
from byzla.wts import WtsNode


def single_input(cfg: ScenarioConfig, node_id: int) -> Item:
    raw = cfg.inputs.get(str(node_id), f"v{node_id}")
    if isinstance(raw, list):
        if len(raw) != 1:
            raise ConfigError(f"{cfg.protocol} takes exactly one input per node, node {node_id} has {len(raw)}")
        raw = raw[0]
    return Item.value(node_id, str(raw))


def roles_for(cfg: ScenarioConfig) -> dict:
    """Ground truth the checker needs to judge a trace of ``cfg``."""
    roles = {
        "protocol": cfg.protocol,
        "n": cfg.n,
        "f": cfg.f,
        "byzantine": list(cfg.byzantine_ids),
        "correct": list(cfg.correct_ids),
        "strategies": {str(b["node"]): b["strategy"] for b in cfg.byzantine},
        "scheduler": dict(cfg.scheduler),
        "rounds": cfg.rounds,
        "signatures": cfg.signatures,
    }
    if cfg.protocol == "gwts":
        roles["rounds"] = cfg.rounds
        roles["decisions_per_node"] = cfg.rounds + cfg.drain_rounds
        if cfg.message_budget_c is not None:
            roles["message_budget_c"] = cfg.message_budget_c
    if cfg.protocol == "rsm":
        roles["clients"] = [
            {"id": cfg.n + k, "strategy": c.get("strategy"), "ops": list(c.get("ops", []))}
            for k, c in enumerate(cfg.clients)
        ]
    return roles


def build(cfg: ScenarioConfig) -> list[Node]:
    strategies = strategies_for(cfg.protocol)
    byz = {int(b["node"]): b for b in cfg.byzantine}
    builder = _BUILDERS[cfg.protocol]
    ctx = {"signatures": make_provider(cfg.signatures, int(cfg.scheduler.get("seed", 0)))}
    nodes = []
    for i in range(cfg.n):
        cls = strategies[byz[i]["strategy"]] if i in byz else None
        params = byz[i].get("params", {}) if i in byz else {}
        nodes.append(builder(cfg, i, cls, params, ctx))
    if cfg.protocol == "rsm":
        nodes.extend(build_clients(cfg))
    return nodes


def _build_rbcast(cfg, i, cls, params, ctx):
    cls = cls or RbcastNode
    return cls(i, cfg.n, cfg.f, str(cfg.inputs.get(str(i), f"p{i}")).encode(), **params)


def _build_wts(cfg, i, cls, params, ctx):
    cls = cls or WtsNode
    return cls(i, cfg.n, cfg.f, single_input(cfg, i), **params)


def round_script(cfg: ScenarioConfig, node_id: int) -> list[Item]:
    """One value per round for the first ``cfg.rounds`` rounds."""
    raw = cfg.inputs.get(str(node_id))
    if raw is None:
        raw = [f"v{node_id}.{k}" for k in range(cfg.rounds)]
    elif not isinstance(raw, list):
        raw = [raw]
    return [Item.value(node_id, str(v)) for v in raw]


def _build_gwts(cfg, i, cls, params, ctx):
    cls = cls or GwtsNode
    return cls(i, cfg.n, cfg.f, round_script(cfg, i), max_rounds=cfg.rounds + cfg.drain_rounds, **params)


def _build_sbs(cfg, i, cls, params, ctx):
    cls = cls or SbsNode
    return cls(i, cfg.n, cfg.f, single_input(cfg, i), ctx["signatures"].signer(i), **params)


def _build_rsm(cfg, i, cls, params, ctx):
    cls = cls or ReplicaNode
    return cls(i, cfg.n, cfg.f, max_rounds=cfg.rounds, **params)


_BUILDERS = {
    "rsm": _build_rsm,
    "sbs": _build_sbs,
    "gwts": _build_gwts,
    "rbcast": _build_rbcast,
    "wts": _build_wts,
}
