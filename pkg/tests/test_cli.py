import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from panelqlm.cli import build_parser, main
from panelqlm.dgp import read_csv


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def panel(tmp_path):
    path = tmp_path / "panel.csv"
    assert main(["simulate", "--N", "200", "--T", "4", "--rho", "0.5", "--seed", "3",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture
def unit_root_panel(tmp_path):
    path = tmp_path / "ur.csv"
    assert main(["simulate", "--N", "300", "--T", "4", "--rho", "1.0", "--design", "NS_Normal",
                 "--seed", "4", "--out", str(path)]) == 0
    return path


def test_simulate_is_reproducible(tmp_path, capsys):
    args = ["simulate", "--N", "5", "--T", "4", "--rho", "0.3", "--seed", "9"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert read_csv(first).y.shape == (5, 4)


def test_simulate_wide(capsys):
    assert main(["simulate", "--N", "3", "--T", "5", "--rho", "0.3", "--seed", "1", "--wide"]) == 0
    assert read_csv(capsys.readouterr().out, wide=True).y.shape == (3, 5)


def test_simulate_requires_seed(capsys):
    assert main(["simulate", "--N", "5", "--T", "4", "--rho", "0.3"]) == 2


def test_simulate_rejects_infeasible_design(capsys):
    assert main(["simulate", "--N", "5", "--T", "4", "--rho", "1.0", "--seed", "1"]) == 2
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_estimate(panel, capsys, fmt):
    assert main(["estimate", "--data", str(panel), "--model", "re", "--format", fmt]) == 0
    out = capsys.readouterr().out
    rec = json.loads(out) if fmt == "json" else _csv(out)[0]
    assert abs(float(rec["rho"]) - 0.5) < 0.2
    assert {"sigma_v_sq", "zeta1", "pi_tilde", "r", "sv", "z1", "p", "loglik"} <= set(rec)


def test_estimate_with_fixed_rho(panel, capsys):
    assert main(["estimate", "--data", str(panel), "--h0-rho", "0.7", "--time-het"]) == 0
    rec = _csv(capsys.readouterr().out)[0]
    assert float(rec["rho"]) == 0.7 and "zeta3" in rec


def test_test_subcommand(panel, capsys):
    assert main(["test", "--data", str(panel), "--h0-rho", "0.5"]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert row["variant"] == "qlm" and row["df"] == "1"
    assert 0 <= float(row["p_value"]) <= 1


def test_test_at_unit_root_uses_qlm1(unit_root_panel, capsys):
    assert main(["test", "--model", "fe", "--h0-rho", "1.0", "--data", str(unit_root_panel)]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert row["variant"] == "qlm1" and row["df"] == "1"


def test_test_centered(panel, capsys):
    assert main(["test", "--data", str(panel), "--h0-rho", "0.5", "--centered-opg",
                 "--level", "0.1"]) == 0
    assert "rejects" in _csv(capsys.readouterr().out)[0]


def test_test_with_restriction_files(panel, tmp_path, capsys):
    A, a = tmp_path / "A.csv", tmp_path / "a.csv"
    np.savetxt(A, [[1.0, 0.0, 0.0]], delimiter=",")
    np.savetxt(a, [0.5], delimiter=",")
    assert main(["test", "--data", str(panel), "--restriction", str(A), str(a)]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert row["df"] == "1"
    np.savetxt(A, [[1.0, 0.0]], delimiter=",")
    assert main(["test", "--data", str(panel), "--restriction", str(A), str(a)]) == 2


def test_test_requires_a_hypothesis(panel):
    assert main(["test", "--data", str(panel)]) == 2
    assert main(["test", "--data", str(panel), "--h0-rho", "0.5",
                 "--restriction", "A.csv", "a.csv"]) == 2


def test_confset(panel, capsys):
    assert main(["confset", "--data", str(panel), "--grid", "0:1:21"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# level 0.95, 21 grid points")
    rows = _csv(out.split("\n", 1)[1])
    assert rows and all(float(r["lower"]) <= float(r["upper"]) for r in rows)


@pytest.mark.parametrize("grid", ["0:1", "1:0:5", "a:b:c"])
def test_confset_bad_grid(panel, grid):
    assert main(["confset", "--data", str(panel), "--grid", grid]) == 2


def test_gmm_ar(panel, capsys):
    assert main(["gmm-ar", "--data", str(panel), "--h0-rho", "0.5"]) == 0
    row = _csv(capsys.readouterr().out)[0]
    assert row["variant"] == "gmm_ar" and row["df"] == "4"


def test_power(capsys):
    assert main(["power", "--T", "4", "--e-grid", "0:1:3"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert [float(r["e"]) for r in rows] == [0.0, 0.5, 1.0]
    assert float(rows[2]["delta"]) == pytest.approx(5 / 3)
    assert float(rows[0]["power"]) == pytest.approx(0.05)


def test_power_variants(capsys):
    assert main(["power", "--T", "4", "--e-grid", "1:1:1", "--variant", "gmm_ar"]) == 0
    assert _csv(capsys.readouterr().out)[0]["df"] == "4"
    assert main(["power", "--T", "3"]) == 2


def test_verify(capsys):
    assert main(["verify", "--t-range", "3", "12"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert rows and all(r["status"] == "PASS" for r in rows)
    assert main(["verify", "--t-range", "5", "3"]) == 2


def test_mc_with_config_gives_table_shape(tmp_path, capsys):
    cfg = tmp_path / "table1.cfg"
    cfg.write_text("[experiment]\npreset = table1\nreplications = 2\n")
    manifest = tmp_path / "m.json"
    assert main(["mc", "--spec", str(cfg), "--manifest", str(manifest)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1 + 7 and all(len(line.split(",")) == 7 for line in lines)
    assert json.loads(manifest.read_text())["table_id"] == "table1"


def test_mc_is_byte_identical_on_rerun(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"t{k}.csv"
        assert main(["mc", "--preset", "table6", "--replications", "2", "--seed", "5",
                     "--layout", "long", "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_mc_bad_inputs(tmp_path):
    assert main(["mc", "--spec", str(tmp_path / "missing.cfg")]) == 2
    assert main(["mc", "--preset", "table99"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("[experiment]\nwhatever = 1\n")
    assert main(["mc", "--spec", str(bad)]) == 2


@pytest.mark.parametrize("argv", [
    ["estimate", "--data", "does-not-exist.csv"],
    ["bogus"],
    [],
    ["power", "--T", "4", "--unknown-flag"],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_malformed_csv_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["estimate", "--data", str(bad)]) == 2
    assert "malformed" in capsys.readouterr().err


def test_every_flag_is_documented(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == {"simulate", "estimate", "test", "confset", "gmm-ar", "power",
                                "verify", "mc"}
    for name, p in sub.choices.items():
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, f"{name} {action.option_strings}"
        with pytest.raises(SystemExit):
            p.parse_args(["--help"])
        text = capsys.readouterr().out
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "panelqlm.cli", "power", "--T", "9",
                          "--e-grid", "1:1:1"], capture_output=True, text=True, check=True)
    assert float(_csv(out.stdout)[0]["delta"]) == pytest.approx(105)
