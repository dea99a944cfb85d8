"""Signature-based agreement: proofs of safety and a double-signing node."""
from byzla import Item, ScenarioConfig, check, roles_for, run
from byzla import sbs
from byzla.signatures import make_provider

spacer = "_" * 60

provider = make_provider("ed25519", seed=0)
signer = provider.signer(2)
one = sbs.SignedValue.create(signer, Item.value(2, "left"))
two = sbs.SignedValue.create(signer, Item.value(2, "right"))
print("node 2 signs two different values")
print("both verify:", one.verify(signer), two.verify(signer))
print("conflicting pairs:", len(sbs.return_conflicts([one, two], signer)))
print("left after removing conflicts:", sbs.remove_conflicts([one, two], signer))

print(spacer)

print("\nThe same double-signer inside a run of seven nodes")
cfg = ScenarioConfig(
    protocol="sbs", n=7, f=2,
    byzantine=[{"node": 2, "strategy": "double-signer"}, {"node": 5, "strategy": "nack-flooder"}],
    scheduler={"policy": "lockstep", "seed": 3}, signatures="ed25519",
)
result = run(cfg)
for e in result.trace.of_kind("decide"):
    if e.node in cfg.byzantine_ids:
        continue
    print(f"node {e.node}: depth {e.depth}, refinements {e.detail.get('refinements', 0)}, {len(e.detail['value'])} items")
print(f"\nbounds for f={cfg.f}: depth {5 + 4 * cfg.f}, refinements {2 * cfg.f}")
print("verdict ok:", check(result.trace, roles_for(cfg)).ok)
