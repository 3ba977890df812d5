import csv
import hashlib
import json
import subprocess
import sys

import pytest

from prealign.cli import main


def _run(tmp_path, *args, out="out"):
    d = tmp_path / out
    code = main([*args, "--out", str(d)])
    return code, d


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def test_classical_dist_outputs_and_manifest(tmp_path):
    code, d = _run(tmp_path, "classical-dist", "--jt", "15", "--samples", "20000", "--bins", "40")
    assert code == 0
    names = sorted(p.name for p in d.iterdir())
    assert names == ["classical-dist.manifest.json", "classical_hist.csv", "classical_summary.json"]
    rows = list(csv.reader((d / "classical_hist.csv").open()))
    assert rows[0][:3] == ["A_low [1]", "A_high [1]", "probability [1]"]
    assert len(rows) == 41
    assert sum(float(r[2]) for r in rows[1:]) == pytest.approx(1.0)
    man = json.loads((d / "classical-dist.manifest.json").read_text())
    assert man["seed"] == 20240601 and man["config"]["thermal"]["j_thermal"] == 15.0
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((d / name).read_bytes()).hexdigest() == digest
    summary = json.loads((d / "classical_summary.json").read_text())
    assert summary["ks_thermal"] < 0.02


def test_rerun_is_byte_identical_across_workers(tmp_path):
    _, a = _run(tmp_path, "classical-dist", "--kick", "10", "--samples", "150000", "--workers", "1", out="a")
    _, b = _run(tmp_path, "classical-dist", "--kick", "10", "--samples", "150000", "--workers", "3", out="b")
    assert _csvs(a) == _csvs(b)


def test_quantum_dist(tmp_path):
    code, d = _run(tmp_path, "quantum-dist", "--jt", "2", "--bins", "20")
    assert code == 0
    lines = list(csv.reader((d / "quantum_lines.csv").open()))
    assert lines[0] == ["A [1]", "weight [1]", "A_exact [fraction]"]
    assert any(r[2] == "1/3" for r in lines[1:])
    assert (d / "quantum-dist.manifest.json").exists()


def test_strong_deflect_small_run(tmp_path):
    code, d = _run(tmp_path, "strong-deflect", "--mode", "strong", "--samples", "40", "--kick", "5")
    assert code == 0
    s = json.loads((d / "strong_deflect_summary.json").read_text())
    assert "narrowing_ratio" in s and s["flags"]["solver_failures"] == 0
    assert {"vz_hist.csv", "gamma_hist.csv", "alignment_hist.csv"} <= {p.name for p in d.iterdir()}


def test_zero_intensity_gives_zero_velocities(tmp_path):
    code, d = _run(tmp_path, "strong-deflect", "--mode", "strong", "--samples", "30", "--intensity", "0")
    assert code == 0
    s = json.loads((d / "strong_deflect_summary.json").read_text())
    assert s["v_z"]["mean"] == 0.0 and s["v_z"]["std"] == 0.0


def test_asymptotics_table(tmp_path):
    code, d = _run(tmp_path, "asymptotics", "--p-list", "50", "--jt-list", "1,2", "--samples", "50000")
    assert code == 0
    rows = list(csv.DictReader((d / "asymptotics.csv").open()))
    assert len(rows) == 2
    assert all(float(r["mean_rel_error [1]"]) < 0.02 for r in rows)


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[thermal]\ntemperature = 5\n[ensemble]\nsamples = 1000\nseed = 3\n[output]\nbins = 10\n")
    code, d = _run(tmp_path, "classical-dist", "--config", str(cfg), "--seed", "4")
    assert code == 0
    man = json.loads((d / "classical-dist.manifest.json").read_text())
    assert man["seed"] == 4 and man["config"]["output"]["bins"] == 10


@pytest.mark.parametrize("text", [
    "[thermal]\ntemperature = abc\n",
    "[nonsense]\nx = 1\n",
    "[thermal]\nfoo = 1\n",
    "[thermal]\ntemperature = 5\nj_thermal = 3\n",
    "[beam]\nwaist_um = -1\n",
    "[kick]\nintensity = 1e12\n",
    "[species]\nname = XYZ\n",
    "not an ini file",
])
def test_malformed_config_exits_2_without_output(tmp_path, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    code, d = _run(tmp_path, "classical-dist", "--config", str(cfg), "--samples", "100")
    assert code == 2
    assert not d.exists()


def test_missing_config_exits_2(tmp_path):
    code, d = _run(tmp_path, "quantum-dist", "--config", str(tmp_path / "none.ini"))
    assert code == 2 and not d.exists()


def test_numerical_failure_exits_3(tmp_path):
    cfg = tmp_path / "q.ini"
    cfg.write_text("[quantum]\nj_max = 20\n")
    code, d = _run(tmp_path, "quantum-dist", "--config", str(cfg), "--kick", "25", "--jt", "1")
    assert code == 3 and not d.exists()


def test_species_commands(tmp_path, capsys):
    assert main(["species", "list"]) == 0
    assert "CS2" in capsys.readouterr().out
    assert main(["species", "validate"]) == 0
    bad = tmp_path / "sp.csv"
    bad.write_text("X,1,2\n")
    assert main(["species", "validate", "--file", str(bad)]) == 2


def test_thermal_flags_are_exclusive():
    with pytest.raises(SystemExit):
        main(["classical-dist", "--jt", "1", "--temp", "2"])


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "prealign", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
