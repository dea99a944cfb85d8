"""Generalized lattice agreement: a stream of values, decided round by round."""
from byzla import LatticeValue, ScenarioConfig, check, roles_for, run

spacer = "_" * 60

cfg = ScenarioConfig(
    protocol="gwts", n=4, f=1,
    byzantine=[{"node": 3, "strategy": "round-jumper"}],
    scheduler={"policy": "random", "seed": 1},
    rounds=4, drain_rounds=2, message_budget_c=21,
)
print("Each correct node submits one new value per round; node 3 races ahead")
result = run(cfg)
roles = roles_for(cfg)

print(spacer)

for node in roles["correct"]:
    sizes = [len(e.detail["value"]) for e in result.trace.of_kind("decide") if e.node == node]
    print(f"node {node}: decision sizes {sizes}")

print(spacer)

print("\nEvery decision, from every correct node, sits on one chain")
all_decisions = sorted(
    {LatticeValue.from_tokens(e.detail["value"]) for e in result.trace.of_kind("decide") if e.node in roles["correct"]},
    key=len,
)
print("chain:", all(x <= y for x, y in zip(all_decisions, all_decisions[1:])))

verdict = check(result.trace, roles)
print("message budget:", verdict["Message Budget"].message or "within c*f*n^2 per decision")
print("verdict ok:", verdict.ok)
