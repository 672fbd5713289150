import csv
import io
import json
import subprocess
import sys

import pytest

from socperc.cli import main
from socperc.lattice import build_box
from socperc.percolation import dumps_configuration, sample_bernoulli


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_sample_stdout(capsys):
    code, out, _ = run(capsys, "sample", "--side", "4", "--a", "1.5", "--sweeps", "20", "--burn-in", "5",
                       "--thin", "5", "--chains", "2", "--seed", "3")
    assert code == 0
    rows = rows_of(out)
    assert list(rows[0]) == ["chain_id", "sweep", "F", "p_n"]
    assert len(rows) == 6 and {r["chain_id"] for r in rows} == {"0", "1"}


def test_sample_writes_manifest(tmp_path, capsys):
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sample", "--side", "4", "--a", "1.5", "--sweeps", "4", "--burn-in", "1",
                     "--functional", "bnb", "--b", "0.3", "--out", str(out))
    assert code == 0 and out.exists()
    manifest = json.loads(out.with_suffix(".json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["functional"] == "bnb"


def test_enumerate(capsys):
    code, out, err = run(capsys, "enumerate", "--side", "2", "--a", "1")
    assert code == 0 and "Z_n = 0.6328987830012" in err
    rows = rows_of(out)
    assert [r["F_value"] for r in rows] == ["1", "2", "3", "4"]
    assert sum(float(r["mu_probability"]) for r in rows) == pytest.approx(1.0)


def test_enumerate_cap(capsys):
    code, _, err = run(capsys, "enumerate", "--side", "5", "--a", "1")
    assert code == 2 and "24" in err


def test_couple_modes(capsys):
    code, out, _ = run(capsys, "couple", "--side", "3", "--a", "1", "--replicas", "200")
    assert code == 0 and rows_of(out)[0]["replicas"] == "200"
    code, out, _ = run(capsys, "couple", "--side", "3", "--a", "1", "--replicas", "2", "--emit", "trajectory")
    rows = rows_of(out)
    assert rows[0]["b"] == "0" and rows[0]["F"] == "9"
    code, out, _ = run(capsys, "couple", "--side", "4", "--a", "1.5", "--replicas", "3", "--emit", "stopping",
                       "--functional", "boundary")
    rows = rows_of(out)
    assert len(rows) == 3 and all(int(r["B2"]) >= int(r["B"]) for r in rows)


def test_couple_rejects_bnb(capsys):
    code, _, err = run(capsys, "couple", "--side", "3", "--a", "1", "--functional", "bnb", "--b", "0.4")
    assert code == 2 and "error" in err


def test_carve_check(tmp_path, capsys):
    box = build_box(2, 12)
    dump = tmp_path / "c.txt"
    dump.write_text(dumps_configuration(box, sample_bernoulli(box, 0.65, 4)))
    code, out, _ = run(capsys, "carve-check", str(dump), "--m", "7", "--debug")
    assert code == 0
    lines = dict(line.split(" = ") for line in out.strip().splitlines())
    assert lines["m"] == "7" and lines["component size"] == "7"
    code, out, _ = run(capsys, "carve-check", str(dump), "--seed", "2")
    assert code == 0


def test_study_concentration_config_and_flags(tmp_path, capsys):
    conf = tmp_path / "c.cfg"
    conf.write_text("n_list = 3, 4\nkind = cmax\na = 1.5\nchains = 2\nsweeps = 40\nburn_in = 10\nseed = 2\n")
    out = tmp_path / "conc.csv"
    code, _, _ = run(capsys, "study", "concentration", "--config", str(conf), "--n-list", "4", "--out", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["n"] for r in rows] == ["4"]
    assert (tmp_path / "conc_chains.csv").exists()
    first = out.read_bytes()
    run(capsys, "study", "concentration", "--config", str(conf), "--n-list", "4", "--out", str(out))
    assert out.read_bytes() == first


def test_study_window_error(capsys):
    code, _, err = run(capsys, "study", "concentration", "--kind", "boundary", "--a", "0.5", "--n-list", "4")
    assert code == 2 and "d-1 < a < d" in err


def test_study_speed(capsys):
    code, out, _ = run(capsys, "study", "speed", "--kind", "bnb", "--a", "1.9", "--b", "0.2", "--c", "0.05",
                       "--beta", "1", "--gamma", "1", "--n-list", "4", "--chains", "2", "--sweeps", "20",
                       "--burn-in", "5")
    assert code == 0 and rows_of(out)[0]["c"] == "0.05"
    code, _, err = run(capsys, "study", "speed", "--kind", "bnb", "--a", "1.9", "--b", "0.2", "--c", "0.5",
                       "--beta", "1", "--gamma", "1", "--n-list", "4")
    assert code == 2


def test_study_qn_and_tails(capsys):
    code, out, _ = run(capsys, "study", "qn", "--kind", "bnb", "--a", "1.9", "--b", "0.2", "--n-list", "3",
                       "--exact", "--tol", "1e-9")
    assert code == 0 and float(rows_of(out)[0]["q_n"]) == pytest.approx(0.4282647338695824, abs=1e-9)
    code, out, err = run(capsys, "study", "tails", "--p", "0.3", "--a", "1", "--A", "2", "--n-list", "4,6",
                         "--samples", "500")
    assert code == 0 and len(rows_of(out)) == 2 and "strictly decreasing" in err


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "socperc.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"
