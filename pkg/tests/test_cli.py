import argparse
import hashlib
import json
import subprocess
import sys

import pytest

from approxcal.cli import (
    EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, MANIFEST_NAME, main, parse_range,
)
from approxcal.datagen import load_problem
from approxcal.stefcal import RunTrace


def cli(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def problem(tmp_path_factory):
    path = tmp_path_factory.mktemp("gen") / "p16.bin"
    assert cli("gen", "--P", 16, "--seed", 0, "--out", path, "-q") == EXIT_OK
    return path


# ---------------------------------------------------------------- ranges


def test_parse_range():
    assert parse_range("5:5:20") == (5.0, 10.0, 15.0, 20.0)
    assert parse_range("20:20:100") == (20.0, 40.0, 60.0, 80.0, 100.0)
    assert parse_range("0:0.1:0.3") == (0.0, 0.1, 0.2, 0.3)
    assert parse_range("1,2.5") == (1.0, 2.5)
    assert parse_range("7") == (7.0,)
    for bad in ("5:0:20", "20:5:5", "a:b:c", "1:2", "", "nan"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_range(bad)


def test_malformed_range_is_usage_error(problem, tmp_path):
    assert cli("resilience", problem, "--em", "5:x:20", "--seed", 0, "--out", tmp_path) == EXIT_USAGE


# ---------------------------------------------------------------- gen


def test_gen_single_antenna(tmp_path):
    assert cli("gen", "--P", 1, "--seed", 0, "--out", tmp_path / "p.bin", "-q") == EXIT_OK
    pr = load_problem(tmp_path / "p.bin")
    assert pr.P == 1 and pr.M.shape == (1, 1)
    assert (tmp_path / "p.bin.manifest.json").exists()


def test_gen_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        cli("gen", "--P", 32, "--seed", 5, "--noise", 0.01, "--out", tmp_path / name,
            "--csv", tmp_path / f"{name}.csv", "-q")
    assert sha(tmp_path / "a") == sha(tmp_path / "b")
    assert sha(tmp_path / "a.csv") == sha(tmp_path / "b.csv")


def test_gen_invalid_arguments(tmp_path):
    assert cli("gen", "--P", 0, "--seed", 0, "--out", tmp_path / "p") == EXIT_USAGE
    assert cli("gen", "--P", 4, "--out", tmp_path / "p") == EXIT_USAGE
    assert cli("gen", "--P", 4, "--seed", 0, "--spread", 2, "--out", tmp_path / "p") == EXIT_USAGE


# ---------------------------------------------------------------- calibrate


def test_calibrate_outputs(problem, tmp_path):
    assert cli("calibrate", problem, "--out", tmp_path / "ref", "-q") == EXIT_OK
    names = {p.name for p in (tmp_path / "ref").iterdir()}
    assert {"trace.csv", "summary.json", MANIFEST_NAME} <= names
    summary = json.loads((tmp_path / "ref" / "summary.json").read_text())
    assert summary["converged"] and summary["even_iterations"] == summary["iterations"] // 2

    assert cli("calibrate", problem, "--backend", "acc", "--ref-trace", tmp_path / "ref" / "trace.csv",
               "--em", 1, "--seed", 3, "--out", tmp_path / "inj", "-q") == EXIT_OK
    summary = json.loads((tmp_path / "inj" / "summary.json").read_text())
    assert "acceptance" in summary and "saturations" in summary
    assert (tmp_path / "inj" / "decisions.csv").exists()


def test_hetero_zero_budget_matches_accurate(problem, tmp_path):
    cli("calibrate", problem, "--backend", "acc", "--out", tmp_path / "acc", "-q")
    cli("calibrate", problem, "--backend", "hetero", "--n-ax", 0, "--out", tmp_path / "het", "-q")
    a = RunTrace.read_csv(tmp_path / "acc" / "trace.csv")
    b = RunTrace.read_csv(tmp_path / "het" / "trace.csv")
    assert [r.gains.tobytes() for r in a.records] == [r.gains.tobytes() for r in b.records]


def test_calibrate_exit_codes(problem, tmp_path):
    assert cli("calibrate", problem, "--max-iters", 2, "--out", tmp_path / "a", "-q") == EXIT_NOT_CONVERGED
    assert (tmp_path / "a" / "trace.csv").exists()
    assert cli("calibrate", tmp_path / "missing.bin", "--out", tmp_path / "b") == EXIT_IO
    (tmp_path / "junk.bin").write_bytes(b"not a problem")
    assert cli("calibrate", tmp_path / "junk.bin", "--out", tmp_path / "c") == EXIT_IO
    assert cli("calibrate", problem, "--em", 1, "--out", tmp_path / "d") == EXIT_USAGE
    assert cli("calibrate", problem, "--backend", "hetero", "--out", tmp_path / "e") == EXIT_USAGE
    assert cli("calibrate", problem, "--backend", "bogus", "--out", tmp_path / "f") == EXIT_USAGE


# ---------------------------------------------------------------- energy / dse


def test_energy_prints_saving(capsys, tmp_path):
    assert cli("energy", 3.55, 2.08, 92, 52, "--out", tmp_path) == EXIT_OK
    assert "S_E = 23.40%" in capsys.readouterr().out
    assert json.loads((tmp_path / "energy.json").read_text())["S_E"] == pytest.approx(0.234, abs=5e-4)
    assert cli("energy", 3.55, 2.08, 92, 93) == EXIT_USAGE


def test_dse_writes_ranked_table(problem, tmp_path):
    cands = tmp_path / "c.json"
    cands.write_text(json.dumps({"candidates": [[0, 0, 4, 4, 4, 6], [0, 0, 8, 8, 8, 12]]}))
    assert cli("dse", problem, "--candidates", cands, "--out", tmp_path / "d", "-q") == EXIT_OK
    lines = (tmp_path / "d" / "dse.csv").read_text().splitlines()
    assert lines[0].startswith("rank,h,t") and len(lines) == 3
    cands.write_text("[]")
    assert cli("dse", problem, "--candidates", cands, "--out", tmp_path / "e") == EXIT_USAGE


# ---------------------------------------------------------------- config, manifest, replay


def test_config_file_overrides_flags(problem, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_iters": 2}))
    assert cli("calibrate", problem, "--config", cfg, "--out", tmp_path / "a", "-q") == EXIT_NOT_CONVERGED
    cfg.write_text(json.dumps({"no_such_option": 1}))
    assert cli("calibrate", problem, "--config", cfg, "--out", tmp_path / "b") == EXIT_USAGE
    cfg.write_text(json.dumps({"em": "1:1:2", "n_ax": "inf"}))
    assert cli("resilience", problem, "--em", 9, "--seed", 0, "--trials", 1, "--config", cfg,
               "--out", tmp_path / "c", "-q") == EXIT_OK
    manifest = json.loads((tmp_path / "c" / MANIFEST_NAME).read_text())
    assert manifest["config"]["em"] == [1.0, 2.0]


def test_manifest_contents(problem, tmp_path):
    cli("calibrate", problem, "--em", 2, "--seed", 11, "--out", tmp_path, "-q")
    m = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert m["subcommand"] == "calibrate"
    assert m["seeds"] == {"seed": 11} and m["config"]["em"] == 2.0
    assert m["inputs"] == {"problem": str(problem)}
    assert [p.rsplit("/", 1)[-1] for p in m["outputs"]] == [
        "trace.csv", "trace_gains.csv", "summary.json", "decisions.csv"]
    assert {"tool", "version", "timestamp"} <= set(m)


def test_approximate_core_alone_stalls(problem, tmp_path):
    # truncation noise keeps the relative change above tol: this is why the
    # approximate core only runs the first iterations
    assert cli("calibrate", problem, "--backend", "ax", "--out", tmp_path, "-q") == EXIT_NOT_CONVERGED


@pytest.mark.parametrize("argv", [
    ["calibrate", "{p}", "--backend", "hetero", "--n-ax", "4", "--em", "3", "--ep", "1",
     "--er", "50", "--seed", "2"],
    ["resilience", "{p}", "--em", "5:5:15", "--ep", "0,1", "--er", "50:50:100", "--n-ax", "0,50",
     "--trials", "2", "--seed", "4", "--jobs", "2"],
    ["dse", "{p}"],
], ids=["calibrate", "resilience", "dse"])
def test_replay_is_byte_identical(problem, tmp_path, argv):
    argv = [a.format(p=problem) for a in argv]
    assert cli(*argv, "--out", tmp_path / "a", "-q") == EXIT_OK
    assert cli("replay", tmp_path / "a" / MANIFEST_NAME, "--out", tmp_path / "b", "--jobs", 1,
               "-q") == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != MANIFEST_NAME)
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir() if p.name != MANIFEST_NAME)
    for name in files:
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name), name


def test_replay_rejects_non_manifest(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"subcommand": "rm"}))
    assert cli("replay", tmp_path / "m.json") == EXIT_USAGE


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "approxcal", "energy", "3.55", "2.08", "92", "52"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "23.40%" in out.stdout
