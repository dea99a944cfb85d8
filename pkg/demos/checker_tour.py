"""The checker on its own: feed it a trace, break the trace, feed it again."""
import copy

from byzla import ScenarioConfig, check, roles_for, run

spacer = "_" * 60

cfg = ScenarioConfig(protocol="wts", n=4, f=1, scheduler={"policy": "lockstep", "seed": 0})
trace = run(cfg).trace
roles = roles_for(cfg)
print("clean run ok:", check(trace, roles).ok)

print(spacer)

print("\nPretend node 0 decided only on its own value")
broken = copy.deepcopy(trace)
first = next(e for e in broken if e.kind == "decide" and e.node == 0)
first.detail["value"] = first.detail["value"][:1]
other = next(e for e in broken if e.kind == "decide" and e.node == 1)
other.detail["value"] = [t for t in other.detail["value"] if t not in first.detail["value"]]
for r in check(broken, roles).failures():
    print(f"  {r.name}: {r.message}  witness={r.witness}")

print(spacer)

print("\nA run cut short under a hostile schedule is inconclusive, not failed")
held = ScenarioConfig(
    protocol="wts", n=4, f=1, budget=30,
    scheduler={"policy": "adversarial-delay", "seed": 0, "script": {"links": [[0, 1]], "prefix": 10**6}},
)
liveness = check(run(held).trace, roles_for(held))["Liveness"]
print("  Liveness:", liveness.passed, "-", liveness.message)
print("clean verdict still ok:", check(trace, roles).ok, "| broken verdict ok:", check(broken, roles).ok)
