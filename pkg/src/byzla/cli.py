"""Command-line front end: ``run``, ``check`` and ``sweep``.

Exit codes: 0 everything passed, 1 a property failed, 2 bad input
(unreadable or invalid config, malformed trace or roles file).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from collections import defaultdict
from pathlib import Path

from byzla.checker import TraceFormatError, Verdict, check
from byzla.harness import roles_for
from byzla.simnet import ConfigError, ScenarioConfig, Trace, run

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

SWEEP_COLUMNS = ["seed", "protocol", "n", "f", "max_depth", "max_refinements", "total_msgs", "verdict"]


def load_config(path: str, seed: int | None = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = ScenarioConfig.from_json(text)
    return cfg.with_seed(seed) if seed is not None else cfg


def summarize(trace: Trace, roles: dict, verdict: Verdict) -> dict:
    """Per-node figures that can be recomputed from the trace alone."""
    byz = set(roles["byzantine"])
    depths: dict[int, list[int]] = defaultdict(list)
    refinements: dict[int, int] = defaultdict(int)
    for e in trace:
        if e.kind == "decide":
            depths[e.node].append(e.depth)
        elif e.kind == "refine":
            refinements[e.node] += 1
    end = trace.of_kind("end")[-1]
    verdict_blob = json.dumps(verdict.to_dict(), sort_keys=True).encode()
    return {
        "protocol": roles["protocol"],
        "n": roles["n"],
        "f": roles["f"],
        "byzantine": sorted(byz),
        "quiescent": end.detail["quiescent"],
        "steps": end.detail["steps"],
        "decision_depths": {str(i): d for i, d in sorted(depths.items())},
        "refinements": {str(i): refinements.get(i, 0) for i in range(roles["n"])},
        "messages_sent": end.detail["metrics"]["sent"],
        "verdict": "pass" if verdict.ok else "fail",
        "verdict_digest": hashlib.blake2b(verdict_blob, digest_size=8).hexdigest(),
    }


def _sibling(out: Path, suffix: str) -> Path:
    name = out.name[: -len(".jsonl")] if out.name.endswith(".jsonl") else out.stem
    return out.with_name(name + suffix)


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed)
    result = run(cfg)
    roles = roles_for(cfg)
    verdict = check(result.trace, roles)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.trace.to_jsonl())
    roles_path = Path(args.roles) if args.roles else _sibling(out, ".roles.json")
    roles_path.write_text(json.dumps(roles, sort_keys=True, indent=2) + "\n")
    summary = summarize(result.trace, roles, verdict)
    _sibling(out, ".summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"{cfg.protocol} n={cfg.n} f={cfg.f}: {len(result.trace)} events, verdict {summary['verdict']}")
    return EXIT_OK


def cmd_check(args) -> int:
    trace_path = Path(args.trace)
    roles_path = Path(args.roles) if args.roles else _sibling(trace_path, ".roles.json")
    try:
        trace = Trace.from_jsonl(trace_path.read_text())
        roles = json.loads(roles_path.read_text())
        verdict = check(trace, roles)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TraceFormatError, ValueError, KeyError, TypeError) as exc:
        print(f"error: malformed input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(verdict.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if verdict.ok else EXIT_FAIL


def parse_seeds(spec: str) -> list[int]:
    """``"100"`` is seeds 0..99, ``"5:10"`` is 5..9, ``"1,4,9"`` is a list."""
    try:
        if ":" in spec:
            lo, hi = spec.split(":", 1)
            return list(range(int(lo), int(hi)))
        if "," in spec:
            return [int(s) for s in spec.split(",") if s]
        return list(range(int(spec)))
    except ValueError:
        raise ConfigError(f"bad seed range {spec!r}; use N, A:B or a comma list") from None


def sweep_row(cfg: ScenarioConfig, seed: int) -> tuple[dict, Verdict]:
    cfg = cfg.with_seed(seed)
    if cfg.protocol != "rbcast":
        # per-message send events only matter to the rbcast message count
        cfg.trace_messages = False
    result = run(cfg)
    roles = roles_for(cfg)
    verdict = check(result.trace, roles)
    byz = set(roles["byzantine"])
    decides = [e for e in result.trace if e.kind == "decide" and e.node not in byz]
    refinements = [e.detail.get("refinements", 0) for e in decides]
    row = {
        "seed": seed,
        "protocol": cfg.protocol,
        "n": cfg.n,
        "f": cfg.f,
        "max_depth": max((e.depth for e in decides), default=0),
        "max_refinements": max(refinements, default=0),
        "total_msgs": result.total_sent(),
        "verdict": "pass" if verdict.ok else "fail",
    }
    return row, verdict


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    seeds = parse_seeds(args.seeds)
    rows, failed = [], []
    for seed in seeds:
        row, verdict = sweep_row(cfg, seed)
        rows.append(row)
        if not verdict.ok:
            failed.append(seed)
            names = ", ".join(r.name for r in verdict.failures())
            print(f"seed {seed} failed: {names} (replay with: run --config {args.config} --seed {seed})", file=sys.stderr)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzla", description="Byzantine lattice agreement simulator and checker")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write its trace")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="trace JSON-lines output path")
    p.add_argument("--seed", type=int, help="override the scheduler seed")
    p.add_argument("--roles", help="roles output path (default: next to the trace)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="check a trace against its roles file")
    p.add_argument("trace", help="trace JSON-lines file")
    p.add_argument("--roles", help="roles JSON file (default: next to the trace)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="run and check a scenario over many seeds")
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--seeds", default="100", help="N, A:B or a comma list (default 100)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
