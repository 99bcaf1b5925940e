from __future__ import annotations

import json
import subprocess
import sys

import pytest

from soma.cli import main
from soma.memory import MemoryBank


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_run_clutter_reports_outcome_and_turns(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "run", "--scenario", "clutter", "--seed", "7",
        "--memory", str(tmp_path / "m"), "--init-memory", "--reasoner", "rules",
    )
    assert code == 0
    report = json.loads(out)
    assert report["outcome"] == "success"
    assert report["turns"] >= 1
    assert report["scenario"] == "clutter"
    assert len(report["chain_per_turn"]) == report["turns"]


def test_run_without_memory_dir_is_a_system_error(tmp_path, capsys):
    code, _, err = run_cli(
        capsys, "run", "--scenario", "none", "--seed", "1",
        "--memory", str(tmp_path / "missing"),
    )
    assert code == 3
    assert "init-memory" in err


def test_unknown_scenario_exits_with_usage_code(tmp_path, capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["run", "--scenario", "bogus", "--seed", "1",
              "--memory", str(tmp_path / "m")])
    assert exit_info.value.code == 64


def test_control_scenario_succeeds_with_empty_chain(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "run", "--scenario", "none", "--seed", "3",
        "--memory", str(tmp_path / "m"), "--init-memory",
    )
    assert code == 0
    report = json.loads(out)
    assert report["outcome"] == "success"
    assert report["chain_per_turn"] == [[]]


def test_failed_episode_exits_2(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "run", "--scenario", "clutter", "--seed", "7",
        "--memory", str(tmp_path / "m"), "--init-memory", "--reasoner", "null",
    )
    assert code == 2
    assert json.loads(out)["outcome"] == "timeout"


def test_repeated_runs_are_byte_identical(tmp_path, capsys):
    argv = ["run", "--scenario", "visual_focus", "--seed", "11",
            "--memory", str(tmp_path / "m"), "--init-memory",
            "--out", str(tmp_path / "r1.json")]
    assert main(argv) == 0
    argv[-1] = str(tmp_path / "r2.json")
    assert main(argv) == 0
    capsys.readouterr()
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_inspect_counts_match_recount(tmp_path, capsys):
    from conftest import DIM, make_entry, unit_axis

    bank = MemoryBank(embedding_dim=DIM)
    for i in range(5):
        bank.insert(make_entry(f"e{i}", success=(i < 3), embedding=unit_axis(i)))
    bank.save(tmp_path / "m")
    code, out, _ = run_cli(capsys, "inspect", "--memory", str(tmp_path / "m"))
    assert code == 0
    lines = out.strip().split("\n")
    assert json.loads(lines[0]) == {"failures": 2, "successes": 3}
    assert len(lines) == 6

    code, out, _ = run_cli(capsys, "inspect", "--memory", str(tmp_path / "m"),
                           "--partition", "failure")
    rows = [json.loads(line) for line in out.strip().split("\n")[1:]]
    assert all(not r["success"] for r in rows)


def test_consolidate_on_empty_memory_is_a_quiet_noop(tmp_path, capsys):
    MemoryBank().save(tmp_path / "m")
    code, out, err = run_cli(capsys, "consolidate", "--memory", str(tmp_path / "m"),
                             "--top-n", "3")
    assert code == 0
    assert out == ""
    assert "0 revisions" in err


def test_consolidate_ingests_stored_trajectories(tmp_path, capsys):
    run_cli(capsys, "run", "--scenario", "clutter", "--seed", "7",
            "--memory", str(tmp_path / "m"), "--init-memory",
            "--trajectory-dir", str(tmp_path / "t"))
    code, _, err = run_cli(capsys, "consolidate", "--memory", str(tmp_path / "m"),
                           "--top-n", "3", "--trajectories", str(tmp_path / "t"))
    assert code == 0
    bank = MemoryBank.load(tmp_path / "m")
    assert len(bank) >= 2  # episode entry plus its failed-attempt precedent


def test_config_file_overrides_loop_parameters(tmp_path, capsys):
    config = tmp_path / "loop.json"
    config.write_text(json.dumps({"turn_cap": 2, "k": 3}))
    code, out, _ = run_cli(
        capsys, "run", "--scenario", "clutter", "--seed", "7",
        "--memory", str(tmp_path / "m"), "--init-memory", "--reasoner", "null",
        "--config", str(config),
    )
    assert code == 2
    assert json.loads(out)["turns"] == 2  # timed out at the configured cap


def test_inspect_after_cold_runs_matches_episode_count(tmp_path, capsys):
    for seed in ("21", "22"):
        run_cli(capsys, "run", "--scenario", "none", "--seed", seed,
                "--memory", str(tmp_path / "m"), "--init-memory",
                "--trajectory-dir", str(tmp_path / "t"))
    run_cli(capsys, "consolidate", "--memory", str(tmp_path / "m"),
            "--trajectories", str(tmp_path / "t"))
    code, out, _ = run_cli(capsys, "inspect", "--memory", str(tmp_path / "m"))
    assert code == 0
    counts = json.loads(out.strip().split("\n")[0])
    assert counts == {"failures": 0, "successes": 2}


def test_bench_single_episode_has_zero_variance(tmp_path, capsys):
    code, out, _ = run_cli(
        capsys, "bench-turns", "--suite", "clutter", "--episodes", "1",
        "--seed-base", "1000", "--modes", "none,dual",
    )
    assert code == 0
    report = json.loads(out)
    assert [row["mode"] for row in report["rows"]] == ["none", "dual"]
    for row in report["rows"]:
        assert len(row["turns"]) == 1
        assert row["variance"] == 0.0


def test_bench_rejects_empty_suite(capsys):
    code, _, err = run_cli(capsys, "bench-turns", "--episodes", "0")
    assert code == 64


def test_bench_plot_written_when_requested(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    code, _, _ = run_cli(
        capsys, "bench-turns", "--suite", "clutter", "--episodes", "1",
        "--seed-base", "1000", "--modes", "none", "--plot", str(tmp_path / "turns.png"),
    )
    assert code == 0
    assert (tmp_path / "turns.png").stat().st_size > 0


def test_serve_tools_stdio_round_trip():
    proc = subprocess.run(
        [sys.executable, "-m", "soma.cli", "serve-tools"],
        input=json.dumps({"jsonrpc": "2.0", "id": 9, "method": "tools/list"}) + "\n",
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    resp = json.loads(proc.stdout)
    assert len(resp["result"]["tools"]) == 5
