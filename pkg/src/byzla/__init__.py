"""Byzantine lattice agreement: protocols, a deterministic simulator and a trace checker.

Protocols: reliable broadcast (:mod:`byzla.rbcast`), single-shot lattice
agreement (:mod:`byzla.wts`, :mod:`byzla.sbs`), generalized lattice agreement
(:mod:`byzla.gwts`) and a replicated state machine on top of it
(:mod:`byzla.rsm`). :func:`run` simulates a :class:`ScenarioConfig`;
:func:`check` verifies the resulting trace.
"""

from byzla.checker import Verdict, check
from byzla.harness import roles_for
from byzla.lattice import Item, ItemKind, LatticeValue
from byzla.simnet import ConfigError, ScenarioConfig, Trace, run, validate_config

__all__ = [
    "ConfigError",
    "Item",
    "ItemKind",
    "LatticeValue",
    "ScenarioConfig",
    "Trace",
    "Verdict",
    "check",
    "roles_for",
    "run",
    "validate_config",
]
