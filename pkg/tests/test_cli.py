import csv
import os
import subprocess
import sys

import pytest

from conftest import DEMO, GOLDEN, ROOT
from spectrumchain.cli import main, parse_seed_range
from spectrumchain.ledger import Chain
from spectrumchain.scenario import ConfigError

EMPTY = """schema: 1
nodes:
  generate: {count: 5, tx_power_dbm: 20.0, channels: [0], balance: 1}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_empty_workload_gives_genesis_only(tmp_path, capsys):
    sc = write(tmp_path, "e.yaml", EMPTY)
    assert main(["run", str(sc), "--out", str(tmp_path / "o")]) == 0
    chain = Chain.load(tmp_path / "o" / "ledger.bin")
    assert len(chain) == 1
    assert main(["verify", str(tmp_path / "o" / "ledger.bin")]) == 0
    assert main(["report", str(tmp_path / "o")]) == 0
    assert "rows: 0" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path, capsys):
    sc = write(tmp_path, "bad.yaml", EMPTY + "frobnicate: 1\n")
    assert main(["run", str(sc), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 4" in err and "frobnicate" in err
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_tampered_ledger_exit_code(tmp_path, capsys):
    data = bytearray((GOLDEN / "ledger10.bin").read_bytes())
    data[len(data) // 2] ^= 0x40
    bad = tmp_path / "bad.bin"
    bad.write_bytes(bytes(data))
    assert main(["verify", str(bad)]) == 3
    assert "first bad height" in capsys.readouterr().out
    assert main(["audit", str(bad), str(DEMO)]) == 3


def test_audit_flags_adversarial_ledger(capsys):
    # hash chain intact, but genesis puts a transmitter 5 m from a protection point
    assert main(["verify", str(GOLDEN / "adversarial.bin")]) == 0
    assert main(["audit", str(GOLDEN / "adversarial.bin"), str(DEMO)]) == 3
    assert "over threshold" in capsys.readouterr().out


def test_audit_passes_golden_ledger(capsys):
    assert main(["audit", str(GOLDEN / "ledger10.bin"), str(DEMO)]) == 0
    assert "violations 0" in capsys.readouterr().out


def test_golden_metrics(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(GOLDEN / "small.yaml"), "--out", str(out)]) == 0
    for name in ("metrics.csv", "run_metrics.csv"):
        assert (out / name).read_bytes() == (GOLDEN / f"small-{name}").read_bytes(), name


def test_report_cross_checks_trace(tmp_path, capsys):
    out = tmp_path / "o"
    main(["run", str(GOLDEN / "small.yaml"), "--out", str(out)])
    assert main(["report", str(out)]) == 0
    assert "trace cross-check: ok" in capsys.readouterr().out
    rows = list(csv.reader((out / "metrics.csv").open()))
    col = rows[0].index("latency_ticks")
    rows[1][col] = str(int(rows[1][col]) + 1)
    with (out / "metrics.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert main(["report", str(out)]) == 3
    assert "mismatches" in capsys.readouterr().out


def test_seed_range_merge(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(GOLDEN / "small.yaml"), "--out", str(out), "--seeds", "1..3",
                 "--jobs", "1"]) == 0
    rows = list(csv.DictReader((out / "run_metrics.csv").open()))
    assert [r["seed"] for r in rows] == ["1", "2", "3"]
    merged = list(csv.DictReader((out / "metrics.csv").open()))
    assert {r["seed"] for r in merged} == {"1", "2", "3"}
    for s in (1, 2, 3):
        assert (out / f"seed-{s}" / "ledger.bin").exists()


def test_seed_range_parse():
    assert parse_seed_range("3..5") == [3, 4, 5]
    assert parse_seed_range("4") == [4]
    for bad in ("5..3", "a..b"):
        with pytest.raises(ConfigError):
            parse_seed_range(bad)


def test_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECTRUMCHAIN_SEED", "11")
    monkeypatch.setenv("SPECTRUMCHAIN_OUT", str(tmp_path / "env-out"))
    assert main(["run", str(GOLDEN / "small.yaml")]) == 0
    row = next(csv.DictReader((tmp_path / "env-out" / "run_metrics.csv").open()))
    assert row["seed"] == "11"
    # an explicit flag wins over the environment
    assert main(["run", str(GOLDEN / "small.yaml"), "--seed", "12"]) == 0
    row = next(csv.DictReader((tmp_path / "env-out" / "run_metrics.csv").open()))
    assert row["seed"] == "12"
    monkeypatch.setenv("SPECTRUMCHAIN_SEED", "x")
    assert main(["run", str(GOLDEN / "small.yaml")]) == 2


def test_multi_chain_run_files(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(GOLDEN / "small.yaml"), "--out", str(out), "--chains", "2"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "decision.bin" in names and "ledger-R0.bin" in names and "ledger-R1.bin" in names
    assert main(["report", str(out)]) == 0


def test_pure_python_switch():
    code = "import spectrumchain, sys; sys.stdout.write(spectrumchain.BACKEND)"
    env = dict(os.environ, SPECTRUMCHAIN_PURE_PYTHON="1")
    got = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True, cwd=ROOT)
    assert got.stdout == "python"


def test_console_script_help():
    got = subprocess.run([sys.executable, "-m", "spectrumchain.cli", "--help"],
                         capture_output=True, text=True)
    assert got.returncode == 0
    for cmd in ("run", "verify", "audit", "report"):
        assert cmd in got.stdout
