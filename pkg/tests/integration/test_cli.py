import math
from pathlib import Path

import pytest

from cubesat_fsw.harness.bench import BenchSettings, LoadLevel, run_bench
from cubesat_fsw.main import EXIT_ASSERTION, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main

SCENARIO_DIR = Path(__file__).resolve().parents[2] / "scenarios"


def test_run_writes_artifacts_and_passes(tmp_path, capsys):
    assert main(["run", str(SCENARIO_DIR / "normal.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    assert "10 grants" in capsys.readouterr().out
    for artifact in ("timeline.csv", "stats.csv", "downlink.bin"):
        assert (tmp_path / artifact).exists()


def test_run_with_golden_writes_then_compares(tmp_path, capsys):
    golden = tmp_path / "golden"
    args = ["run", str(SCENARIO_DIR / "jittered.yaml"), "--out", str(tmp_path / "out"), "--golden", str(golden)]
    assert main(args) == EXIT_OK
    assert (golden / "jittered.csv").exists()
    assert main(args) == EXIT_OK
    assert main(args + ["--seed", "9"]) == EXIT_ASSERTION
    assert "golden trace" in capsys.readouterr().out


def test_failed_expectation_exits_with_assertion_code(tmp_path):
    scenario = tmp_path / "wrong.yaml"
    scenario.write_text("duration_us: 2500000\npayloads: [{id: payload1}, {id: payload2}]\nexpect: {grants: 7}\n")
    assert main(["run", str(scenario), "--out", str(tmp_path / "out")]) == EXIT_ASSERTION


def test_validate(tmp_path, capsys):
    assert main(["validate", str(SCENARIO_DIR / "chain_restart.yaml")]) == EXIT_OK
    bad = tmp_path / "bad.yaml"
    bad.write_text("payloads: [{id: payload1}]\nring: [payload1, ghost]\nfaults: [{kind: explode, at_us: 1}]\n")
    assert main(["validate", str(bad)]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "2 violation(s)" in err
    assert "ghost" in err and "explode" in err


def test_validate_missing_file_is_an_io_error(tmp_path):
    assert main(["validate", str(tmp_path / "nope.yaml")]) == EXIT_IO


def test_diff(tmp_path, capsys):
    for seed in ("1", "1", "2"):
        out = tmp_path / f"run{len(list(tmp_path.iterdir()))}"
        main(["run", str(SCENARIO_DIR / "jittered.yaml"), "--seed", seed, "--out", str(out)])
    a, b, c = (tmp_path / name / "timeline.csv" for name in ("run0", "run1", "run2"))
    assert main(["diff", str(a), str(b)]) == EXIT_OK
    assert main(["diff", str(a), str(c)]) == EXIT_ASSERTION
    assert "first divergence" in capsys.readouterr().out


def test_stats(tmp_path, capsys):
    samples = tmp_path / "samples.csv"
    samples.write_text("2000\n4000\n6000\n")
    assert main(["stats", str(samples)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "1.632993" in out and "4.000000" in out
    empty = tmp_path / "empty.csv"
    empty.write_text("name,latency_us\n")
    assert main(["stats", str(empty)]) == EXIT_VALIDATION


@pytest.mark.slow
def test_bench_smoke(capsys):
    assert main(["bench", "--duration", "0.5", "--rate", "50"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("load=light")
    assert [line.split()[0] for line in lines[2:7]] == ["avg.(ms)", "max.(ms)", "min.(ms)", "st.d.(ms)", "count"]


@pytest.mark.slow
def test_heavy_bench_gives_sane_latency_tables():
    entries = run_bench(BenchSettings(duration_s=0.5, load=LoadLevel.HEAVY, rate_hz=50))
    assert [entry.name for entry in entries] == ["/telemetry/payload1", "/telemetry/payload2", "/telemetry/payload3"]
    for entry in entries:
        assert entry.count > 0
        assert all(math.isfinite(value) for value in (entry.avg_ms, entry.max_ms, entry.min_ms, entry.std_ms))
        assert 0 <= entry.min_ms <= entry.avg_ms <= entry.max_ms
        assert entry.std_ms >= 0
