"""Single-shot lattice agreement with WTS, four nodes, one liar."""
from byzla import Item, LatticeValue, ScenarioConfig, check, roles_for, run

spacer = "_" * 60

print("Values are sets of items; join is union, order is inclusion")
a = LatticeValue.of(Item.value(0, "apple"))
b = LatticeValue.of(Item.value(1, "pear"))
print("a      =", a)
print("b      =", b)
print("a | b  =", a | b)
print("a <= a | b:", a <= (a | b), "  a <= b:", a <= b)

print(spacer)

print("\nFour nodes, node 3 sends different values to different peers")
cfg = ScenarioConfig(
    protocol="wts", n=4, f=1,
    byzantine=[{"node": 3, "strategy": "equivocator"}],
    scheduler={"policy": "lockstep", "seed": 0},
)
result = run(cfg)
for e in result.trace.of_kind("decide"):
    print(f"node {e.node} decides at depth {e.depth}: {sorted(e.detail['value'])}")

print(spacer)

print("\nThe correct decisions form a chain; the checker agrees")
verdict = check(result.trace, roles_for(cfg))
for r in verdict.results:
    print(f"  {r.name:<16} {'ok' if r.passed else r.message}")
print("delay bound for f=1 is", 2 * cfg.f + 5)
print("verdict ok:", verdict.ok)
