import csv
import io
import subprocess
import sys
from pathlib import Path

import pytest

from nrrach.cli import OUTPUT_ENV, main
from nrrach.scenario import bundled, load_text

OAI = str(bundled("default_oai.scenario"))
FIXED = str(bundled("fixed.scenario"))
TARGETS = str(bundled("calibration_targets.txt"))


def _only_run(root: Path) -> Path:
    (run,) = list(root.iterdir())
    return run


def test_lint_exit_codes(tmp_path, capsys):
    assert main(["lint", OAI, "--out", str(tmp_path / "a")]) == 1
    assert "Error RACH001" in capsys.readouterr().out
    assert main(["lint", FIXED, "--out", str(tmp_path / "b")]) == 0
    assert capsys.readouterr().out == "no findings\n"


def test_lint_override_reintroduces_rach002(tmp_path, capsys):
    assert main(["lint", FIXED, "--set", "rach.k2=7", "--out", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "RACH002" in out and "k2 = 9" in out


def test_dump_timeline(tmp_path, capsys):
    assert main(["lint", FIXED, "--dump-timeline", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    run = _only_run(tmp_path)
    timeline = (run / "timeline.txt").read_text()
    assert out.endswith(timeline)
    assert (Path(__file__).parent / "golden" / "timeline_slot_granular.txt").read_text() == timeline


def test_bad_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text(Path(FIXED).read_text().replace("special_dl_symbols = 6", "special_dl_symbols = 20"))
    assert main(["lint", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "special_dl_symbols=20" in err
    assert not (tmp_path / "o").exists()


def test_parse_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text("[tdd\n")
    assert main(["lint", str(bad)]) == 2
    assert f"{bad}:1:" in capsys.readouterr().err


def test_bad_override_exits_2(capsys):
    assert main(["run", FIXED, "--set", "nonsense"]) == 2
    assert main(["run", FIXED, "--set", "rach.k2=-3", "--set", "sim.trials=0"]) == 2
    err = capsys.readouterr().err
    assert "k2" in err and "sim.trials" in err


def test_missing_file_exits_4(tmp_path):
    assert main(["lint", str(tmp_path / "nope.scenario")]) == 4


def test_argparse_usage_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", FIXED, "--msg", "5"])
    assert exc.value.code == 2


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["lint", FIXED]) == 0
    run = _only_run(tmp_path / "env")
    assert run.name.startswith("lint-")
    # the flag beats the environment
    assert main(["lint", FIXED, "--out", str(tmp_path / "flag")]) == 0
    assert len(list((tmp_path / "env").iterdir())) == 1


def test_scenario_echo_reloads_identically(tmp_path):
    assert main(["lint", FIXED, "--set", "sim.seed=42", "--out", str(tmp_path)]) == 0
    echo = (_only_run(tmp_path) / "scenario.toml").read_text()
    doc = load_text(echo)
    assert doc.scenario.seed == 42 and doc.scenario.rach.k2 == 9


def test_run_reports_outcomes(tmp_path, capsys):
    assert main(["run", FIXED, "--trials", "20", "--trace", "2", "--out", str(tmp_path)]) == 0
    run = _only_run(tmp_path)
    rows = list(csv.DictReader(io.StringIO((run / "outcomes.csv").read_text())))
    assert len(rows) == 60
    assert {r["site"] for r in rows} == {"grain_bin", "ag_farm", "biorefinery"}
    assert sorted(p.name for p in (run / "traces").iterdir())[:2] == [
        "ag_farm-00000.trace", "ag_farm-00001.trace"]
    assert capsys.readouterr().out == (run / "summary.csv").read_text()


def test_default_oai_never_connects(tmp_path):
    assert main(["run", OAI, "--trials", "10", "--out", str(tmp_path)]) == 0
    summary = (_only_run(tmp_path) / "summary.csv").read_text()
    assert "Connected" not in summary and "RarReceptionFailed" in summary


def test_sweep_files(tmp_path):
    assert main(["sweep", FIXED, "--msg", "2", "--site", "biorefinery", "--trials", "10",
                 "--out", str(tmp_path)]) == 0
    run = _only_run(tmp_path)
    rows = list(csv.reader((run / "sweep-msg2-biorefinery.csv").open()))
    assert rows[0][:8] == ["site", "msg", "start", "length", "sliv", "success_count", "trials",
                           "probability"]
    assert len(rows) == 51
    heat = list(csv.reader((run / "heatmap-msg2-biorefinery.csv").open()))
    assert heat[0] == ["L\\S", "0", "1", "2", "3"]
    assert len(heat) == 15 and all(len(r) == 5 for r in heat)
    blanks = {(int(r[0]), s) for r in heat[1:] for s, v in enumerate(r[1:]) if v == ""}
    assert blanks == {(l, s) for s in range(4) for l in range(1, 15) if s + l > 14}


def test_sweep_needs_a_message(tmp_path, capsys):
    assert main(["sweep", FIXED, "--out", str(tmp_path)]) == 2
    assert "--msg" in capsys.readouterr().err


def _sweep_bytes(root, *extra):
    assert main(["sweep", FIXED, "--msg", "3", "--site", "ag_farm", "--trials", "40",
                 "--seed", "7", "--out", str(root), *extra]) == 0
    run = _only_run(root)
    return {p.name: p.read_bytes() for p in run.iterdir() if p.suffix == ".csv"}


def test_sweep_is_byte_identical_across_reruns_and_workers(tmp_path):
    first = _sweep_bytes(tmp_path / "a")
    assert first == _sweep_bytes(tmp_path / "b")
    assert first == _sweep_bytes(tmp_path / "c", "--workers", "2")
    assert first != _sweep_bytes(tmp_path / "d", "--seed", "8")


def _run_bytes(root, *extra):
    assert main(["run", FIXED, "--trials", "30", "--trace", "3", "--out", str(root), *extra]) == 0
    run = _only_run(root)
    files = {p.relative_to(run).as_posix(): p.read_bytes() for p in run.rglob("*") if p.is_file()}
    files.pop("scenario.toml")
    return files


def test_run_outputs_are_byte_identical_with_workers(tmp_path):
    first = _run_bytes(tmp_path / "a")
    assert first == _run_bytes(tmp_path / "b", "--workers", "2")


def test_calibrate_writes_fit(tmp_path, capsys):
    assert main(["calibrate", TARGETS, FIXED, "--out", str(tmp_path)]) == 0
    run = _only_run(tmp_path)
    residuals = list(csv.DictReader((run / "residuals.csv").open()))
    assert len(residuals) == 40
    assert max(abs(float(r["residual"])) for r in residuals) <= 0.10
    fitted = load_text((run / "calibrated.scenario").read_text())
    assert fitted.scenario.rach.k2 == 9
    assert "fading_sigma_db" in capsys.readouterr().out


def test_calibrate_bad_targets_exit_2(tmp_path):
    bad = tmp_path / "t.txt"
    bad.write_text("grain_bin,2,zz,0.5\n")
    assert main(["calibrate", str(bad), FIXED, "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nrrach", "lint", OAI, "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert proc.stdout.startswith("Error RACH001")
