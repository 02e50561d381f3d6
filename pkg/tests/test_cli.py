import argparse
import json

import pytest

from causalmesh.cli import EXIT_BAD_INPUT, EXIT_OK, EXIT_VIOLATIONS, main, parse_servers


def simulate(out, *extra):
    return main(["simulate", "--servers", "3", "--seed", "7", "--requests", "20", "--out", str(out), *extra])


def test_simulate_is_deterministic(tmp_path):
    assert simulate(tmp_path / "a") == EXIT_OK
    assert simulate(tmp_path / "b") == EXIT_OK
    first = (tmp_path / "a" / "trace.jsonl").read_bytes()
    assert first
    assert first == (tmp_path / "b" / "trace.jsonl").read_bytes()

    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["servers"] == 3
    assert summary["workflows"] == 20
    assert summary["fatal"] is None


def test_check_clean_run(tmp_path):
    out = tmp_path / "run"
    assert simulate(out) == EXIT_OK
    report = tmp_path / "report.json"
    code = main(
        ["check", str(out / "trace.jsonl"), "--snapshots", str(out / "snapshots.json"), "--report", str(report)]
    )
    assert code == EXIT_OK
    assert json.loads(report.read_text())["clean"] is True


def test_stalled_link_with_single_round_chain_is_flagged(tmp_path):
    out = tmp_path / "buggy"
    code = main(["simulate", "--scenario", "stalled_link", "--mode", "buggy", "--out", str(out), "--check"])
    assert code == EXIT_VIOLATIONS
    assert main(["check", str(out / "trace.jsonl"), "--snapshots", str(out / "snapshots.json")]) == EXIT_VIOLATIONS


def test_stalled_link_with_two_round_chain_is_clean(tmp_path):
    code = main(["simulate", "--scenario", "stalled_link", "--out", str(tmp_path / "ok"), "--check"])
    assert code == EXIT_OK


def test_check_malformed_trace(tmp_path, capsys):
    bad = tmp_path / "trace.jsonl"
    bad.write_text('{"seq": 0, "kind": "client_read_req"\nnot json\n')
    assert main(["check", str(bad)]) == EXIT_BAD_INPUT
    assert "malformed input" in capsys.readouterr().err


def test_check_missing_trace(tmp_path):
    assert main(["check", str(tmp_path / "absent.jsonl")]) == EXIT_BAD_INPUT


def test_anomaly_rate_csv(tmp_path):
    out = tmp_path / "anomaly.csv"
    code = main(["anomaly-rate", "--servers", "1,2", "--requests", "20", "--key-pool", "5", "--out", str(out)])
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "servers,mode,anomaly_rate"
    assert len(lines) == 5
    assert lines[1] == "1,baseline,0.0000"
    assert lines[3].startswith("1,causalmesh,")


def test_window_csv(tmp_path):
    out = tmp_path / "window.csv"
    assert main(["window", "--servers", "2-3", "--delay", "5", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "servers,hops,latency,marginal\n2,3,15,\n3,5,25,10\n"


def test_window_to_stdout(capsys):
    assert main(["window", "--servers", "2", "--delay", "1"]) == EXIT_OK
    assert capsys.readouterr().out.splitlines() == ["servers,hops,latency,marginal", "2,3,3,"]


def test_parse_servers():
    assert parse_servers("2-4") == [2, 3, 4]
    assert parse_servers("1, 2,8") == [1, 2, 8]
    with pytest.raises(argparse.ArgumentTypeError):
        parse_servers("0")
    with pytest.raises(argparse.ArgumentTypeError):
        parse_servers(",")


def test_bad_workload_preset(tmp_path, capsys):
    assert main(["simulate", "--workload", "nope", "--out", str(tmp_path / "x")]) == EXIT_BAD_INPUT
    assert "unknown workload preset" in capsys.readouterr().err


def test_workload_file(tmp_path):
    spec = tmp_path / "wl.json"
    spec.write_text(json.dumps({"shape": "write_then_read_2fn", "key_pool_size": 4}))
    out = tmp_path / "run"
    assert main(["simulate", "--workload", str(spec), "--requests", "5", "--out", str(out), "--check"]) == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["workflows"] == 5


def test_scenario_aliases(tmp_path):
    out = tmp_path / "fig17"
    assert main(["simulate", "--mode", "buggy", "--scenario", "fig17", "--out", str(out)]) == EXIT_OK
    assert main(["check", str(out / "trace.jsonl"), "--snapshots", str(out / "snapshots.json")]) == EXIT_VIOLATIONS
    assert main(["simulate", "--scenario", "fig8", "--out", str(tmp_path / "fig8"), "--check"]) == EXIT_OK


def test_abort_rate_csv(tmp_path):
    out = tmp_path / "aborts.csv"
    assert main(["abort-rate", "--capacities", "1,4", "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines() == ["capacity,readers,aborts,abort_rate", "1,8,6,0.7500", "4,8,2,0.2500"]
