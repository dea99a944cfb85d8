"""A replicated state machine: clients update and read through the replicas."""
import json
from pathlib import Path

from byzla import ScenarioConfig, check, roles_for, run

spacer = "_" * 60

scenario = Path(__file__).resolve().parents[1] / "scenarios" / "rsm4.json"
cfg = ScenarioConfig.from_json(scenario.read_text())
print("replicas:", cfg.n, " lying replica:", cfg.byzantine_ids, " clients:", len(cfg.clients))

result = run(cfg)
roles = roles_for(cfg)

print(spacer)

good = {c["id"] for c in roles["clients"] if c["strategy"] is None}
for e in result.trace:
    if e.node in good and e.kind in ("update-complete", "read-complete"):
        what = f"{len(e.detail['result'])} commands seen" if e.kind == "read-complete" else "applied"
        print(f"t={e.depth:>3} client {e.node} {e.kind.split('-')[0]:<6} {what}")

print(spacer)

verdict = check(result.trace, roles)
print(json.dumps({r.name: r.passed for r in verdict.results}, indent=1))
print("verdict ok:", verdict.ok)
