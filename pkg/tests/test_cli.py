import hashlib
import json
import os
import re
import signal
import subprocess
import sys
import urllib.request
from pathlib import Path

import pytest

from intensity_lab.cli import main
from intensity_lab.replay import data_path


def run(*argv):
    return main([str(a) for a in argv])


def test_replay_exit_codes(tmp_path, capsys):
    assert run("replay", data_path("table1_g4.csv"), "--out", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["summary"]["ok"] and report["summary"]["cells"] == 123
    assert run("replay", data_path("table3_groups.csv"), "--format", "csv", "--out", tmp_path / "g.csv") == 0
    assert (tmp_path / "g.csv").read_text().startswith("cell_id,")


def test_replay_truncated_fixture_names_line(tmp_path, capsys):
    lines = data_path("table1_g4.csv").read_text().splitlines()
    lines[5] = ",".join(lines[5].split(",")[:4])
    bad = tmp_path / "table1_g4.csv"
    bad.write_text("\n".join(lines) + "\n")
    assert run("replay", bad, "--expected", data_path("table1_g4.expected.csv")) == 1
    assert "line 6" in capsys.readouterr().err


def test_missing_file_is_io_error(capsys):
    assert run("replay", "/no/such/file.csv") == 3


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        run("nonsense")
    assert info.value.code == 2


def test_detect(capsys, tmp_path):
    assert run("detect", data_path("table1_g4.csv")) == 0
    report = json.loads(capsys.readouterr().out)
    assert 10 <= report["detected_level"] <= 12
    assert run("detect", data_path("table2_g5.csv")) == 1


def test_detect_synthetic_flat_conversion(tmp_path, capsys):
    path = tmp_path / "t.csv"
    rows = ["level,views,positives,negatives"] + [f"{i},1000,30,{i}" for i in range(1, 16)]
    path.write_text("\n".join(rows) + "\n")
    assert run("detect", path) == 0
    assert json.loads(capsys.readouterr().out)["detected_level"] == 1


def test_detect_too_short(tmp_path, capsys):
    path = tmp_path / "t.csv"
    path.write_text("level,views,positives,negatives\n1,10,1,0\n2,10,1,0\n3,10,1,1\n")
    assert run("detect", path, "--window", 3) == 1
    assert "too short" in capsys.readouterr().err


def test_figures(tmp_path):
    assert run("figures", data_path("table2_g5.csv"), "--out", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"fig{i}.csv" for i in range(10, 16)]


def test_simulate_reproducible_and_manifest(tmp_path):
    config = data_path("sim_five_groups.json")
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("--fixed-clock", "simulate", config, "--n-users", 500, "--out", a) == 0
    assert run("simulate", config, "--n-users", 500, "--fixed-clock", "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert manifest["log_sha256"] == hashlib.sha256(a.read_bytes()).hexdigest()
    assert manifest["seed"] == 42
    c = tmp_path / "c.jsonl"
    run("simulate", config, "--n-users", 500, "--fixed-clock", "--seed", 7, "--out", c)
    assert c.read_bytes() != a.read_bytes()


def test_simulate_zero_users_header_only(tmp_path):
    out = tmp_path / "z.jsonl"
    assert run("simulate", data_path("sim_g4_only.json"), "--n-users", 0, "--fixed-clock", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 and "sim_config_digest" in json.loads(lines[0])


def test_bad_sim_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n_users": 5, "groups": {"G1": {"policy": {"kind": "flat", "flat_level": 9},
                                                                "behavior": {"click_prob": 0.1}}}}))
    assert run("simulate", path, "--out", tmp_path / "x.jsonl") == 1
    assert "flat_level" in capsys.readouterr().err


def test_analyze_replayed_table1_events(tmp_path, inc_counts):
    from intensity_lab.metrics import counts_to_events, write_events, write_stats_csv, build_level_table

    log = tmp_path / "events.jsonl"
    with open(log, "w") as fh:
        write_events(counts_to_events(inc_counts, group="G4"), fh)
    assert run("analyze", log, "--group", "G4", "--out", tmp_path / "out") == 0
    assert (tmp_path / "out" / "G4.csv").read_text() == write_stats_csv(build_level_table(inc_counts))
    analysis = json.loads((tmp_path / "out" / "G4.analysis.json").read_text())
    assert analysis["saturation"]["detected_level"] == 10


def test_analyze_unknown_group_and_empty_log(tmp_path, capsys, inc_counts):
    from intensity_lab.metrics import counts_to_events, write_events

    log = tmp_path / "events.jsonl"
    with open(log, "w") as fh:
        write_events(counts_to_events(inc_counts[:2], group="G4"), fh)
    assert run("analyze", log, "--group", "G2") == 1
    assert "G4" in capsys.readouterr().err
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run("analyze", empty) == 1


def test_analyze_view_only_log_has_zero_factors(tmp_path, capsys):
    log = tmp_path / "v.jsonl"
    log.write_text("".join(
        json.dumps({"ts": 0, "user_id": f"u{i}", "group": "G1", "contact": 1, "level_index": 1,
                    "levels": [1] * 6, "kind": "view"}) + "\n" for i in range(5)))
    assert run("analyze", log, "--format", "json") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["table"][0]["rpf"] == 0.0 and out["table"][0]["rnf"] == 0.0


def _start_serve(args, cwd):
    proc = subprocess.Popen([sys.executable, "-m", "intensity_lab", *map(str, args)], cwd=cwd,
                            stderr=subprocess.PIPE, text=True)
    line = proc.stderr.readline()
    match = re.search(r"http://[\d.]+:(\d+)", line)
    if match is None:
        proc.kill()
        raise AssertionError(f"server did not start: {line}{proc.stderr.read()}")
    return proc, f"http://127.0.0.1:{match.group(1)}"


def _post(base, path, body):
    req = urllib.request.Request(base + path, data=json.dumps(body).encode(), method="POST")
    with urllib.request.urlopen(req, timeout=5) as resp:
        return json.loads(resp.read())


def test_serve_logs_one_view_and_applies_params(tmp_path):
    config = tmp_path / "serve.json"
    config.write_text(json.dumps({"groups": {"G4": {"policy": {"kind": "increasing"}}},
                                  "log": "events.jsonl", "port": 0}))
    (tmp_path / "params.json").write_text(json.dumps({"detected_level": 12}))
    proc, base = _start_serve(["serve", config, "--params", tmp_path / "params.json"], tmp_path)
    try:
        body = _post(base, "/v1/decide", {"page_id": "p", "user_id": "u", "contact": 25})
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)
    assert proc.returncode == 0
    assert body["levels"] == [3, 3, 3, 3, 3, 2]
    lines = (tmp_path / "events.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["kind"] == "view"


def test_serve_bad_config(tmp_path):
    config = tmp_path / "serve.json"
    config.write_text(json.dumps({"port": 0}))
    proc = subprocess.run([sys.executable, "-m", "intensity_lab", "serve", str(config)],
                          capture_output=True, text=True, timeout=30)
    assert proc.returncode != 0 and "groups" in proc.stderr
