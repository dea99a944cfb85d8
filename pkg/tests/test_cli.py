"""The command-line front end: file layout, exit codes, seeds and the sweep CSV."""

import csv
import io
import json
from pathlib import Path

import pytest

from mutations import MUTATIONS, base
from byzla import cli
from byzla.simnet import ConfigError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def test_run_writes_trace_roles_and_summary(tmp_path, capsys):
    out = tmp_path / "sub" / "wts.jsonl"
    assert cli.main(["run", "--config", str(SCENARIOS / "wts4.json"), "--out", str(out), "--seed", "3"]) == 0
    assert "verdict pass" in capsys.readouterr().out
    roles = json.loads((tmp_path / "sub" / "wts.roles.json").read_text())
    summary = json.loads((tmp_path / "sub" / "wts.summary.json").read_text())
    assert roles["protocol"] == "wts" and summary["verdict"] == "pass"
    # the summary's figures can be recomputed from the trace itself
    events = [json.loads(line) for line in out.read_text().splitlines()]
    decides = [e for e in events if e["kind"] == "decide"]
    assert sorted(summary["decision_depths"]) == sorted({str(e["node"]) for e in decides})
    assert summary["messages_sent"] == events[-1]["detail"]["metrics"]["sent"]


def test_run_then_check_passes(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    cli.main(["run", "--config", str(SCENARIOS / "sbs7.json"), "--out", str(out)])
    capsys.readouterr()
    assert cli.main(["check", str(out)]) == 0
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["ok"] and {p["status"] for p in verdict["properties"]} == {"pass"}


def test_explicit_roles_path(tmp_path):
    out, roles = tmp_path / "t.jsonl", tmp_path / "elsewhere.json"
    cli.main(["run", "--config", str(SCENARIOS / "rbcast4.json"), "--out", str(out), "--roles", str(roles)])
    assert roles.exists() and not (tmp_path / "t.roles.json").exists()
    assert cli.main(["check", str(out), "--roles", str(roles)]) == 0


def test_check_fails_on_violation(tmp_path, capsys):
    mutation = next(m for m in MUTATIONS if m.base == "wts" and m.prop == "Comparability")
    trace, roles = base("wts")
    mutation.apply(trace, roles)
    (tmp_path / "bad.jsonl").write_text(trace.to_jsonl())
    (tmp_path / "bad.roles.json").write_text(json.dumps(roles))
    assert cli.main(["check", str(tmp_path / "bad.jsonl")]) == 1
    verdict = json.loads(capsys.readouterr().out)
    failed = [p for p in verdict["properties"] if p["status"] == "fail"]
    assert [p["property"] for p in failed] == ["Comparability"] and failed[0]["witness"]


class TestInputErrors:
    def test_missing_trace(self, tmp_path):
        assert cli.main(["check", str(tmp_path / "nope.jsonl")]) == 2

    def test_garbled_trace(self, tmp_path):
        (tmp_path / "g.jsonl").write_text("{not json\n")
        (tmp_path / "g.roles.json").write_text(json.dumps(base("wts")[1]))
        assert cli.main(["check", str(tmp_path / "g.jsonl")]) == 2

    def test_roles_missing_field(self, tmp_path):
        trace, roles = base("wts")
        del roles["byzantine"]
        (tmp_path / "r.jsonl").write_text(trace.to_jsonl())
        (tmp_path / "r.roles.json").write_text(json.dumps(roles))
        assert cli.main(["check", str(tmp_path / "r.jsonl")]) == 2

    def test_invalid_config(self, tmp_path, capsys):
        assert cli.main(["run", "--config", str(SCENARIOS / "invalid_n3.json"), "--out", str(tmp_path / "x.jsonl")]) == 2
        assert "error" in capsys.readouterr().err
        assert not (tmp_path / "x.jsonl").exists()

    def test_unreadable_config(self, tmp_path):
        assert cli.main(["sweep", "--config", str(tmp_path / "missing.json"), "--seeds", "2"]) == 2

    def test_bad_seed_spec(self):
        assert cli.main(["sweep", "--config", str(SCENARIOS / "wts4.json"), "--seeds", "a:b"]) == 2


@pytest.mark.parametrize("spec,expected", [("3", [0, 1, 2]), ("5:8", [5, 6, 7]), ("1,4,9", [1, 4, 9]), ("0", [])])
def test_parse_seeds(spec, expected):
    assert cli.parse_seeds(spec) == expected


def test_parse_seeds_rejects_junk():
    with pytest.raises(ConfigError):
        cli.parse_seeds("x")


def test_sweep_csv(tmp_path, capsys):
    assert cli.main(["sweep", "--config", str(SCENARIOS / "wts4.json"), "--seeds", "2:6"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert list(rows[0]) == cli.SWEEP_COLUMNS
    assert [int(r["seed"]) for r in rows] == [2, 3, 4, 5]
    assert {r["verdict"] for r in rows} == {"pass"} and {r["protocol"] for r in rows} == {"wts"}
    # written to a file, the same rows come back
    out = tmp_path / "s.csv"
    cli.main(["sweep", "--config", str(SCENARIOS / "wts4.json"), "--seeds", "2:6", "--out", str(out)])
    assert list(csv.DictReader(out.open())) == rows


def test_sweep_row_matches_single_run(tmp_path):
    cfg = cli.load_config(str(SCENARIOS / "wts4.json"))
    row, verdict = cli.sweep_row(cfg, 7)
    out = tmp_path / "one.jsonl"
    cli.main(["run", "--config", str(SCENARIOS / "wts4.json"), "--out", str(out), "--seed", "7"])
    summary = json.loads((tmp_path / "one.summary.json").read_text())
    assert verdict.ok and row["total_msgs"] == sum(sum(k.values()) for k in summary["messages_sent"].values())
    assert row["max_depth"] == max(d for ds in summary["decision_depths"].values() for d in ds)
