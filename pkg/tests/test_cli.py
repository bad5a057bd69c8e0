import json
import subprocess
import sys

import numpy as np
import pytest

from starspec import cli
from starspec.config import RunConfig, build_config, load_config, validate
from starspec.errors import ValidationError

POLY15 = ["--eos", "polytrope", "--gamma", "1.5", "--mu", "1"]


def run(argv, capsys):
    code = cli.dispatch(argv)
    out, err = capsys.readouterr()
    return code, out, err


def csv_rows(text):
    lines = [l for l in text.splitlines() if l and not l.startswith("#")]
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


# ---------------------------------------------------------- commands


def test_eos_show(capsys):
    code, out, _ = run(["eos", "show", "--eos", "polytrope", "--gamma", "1.5", "--rho", "4"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["P"] == 8.0 and doc["dP"] == 3.0 and doc["enthalpy"] == 6.0
    code, out, _ = run(["eos", "show", "--eos", "wd", "--rho", "1", "--format", "csv"], capsys)
    assert code == 0 and out.startswith("key,value\n") and "eos.eos,whitedwarf" in out


def test_profile_gamma2(capsys):
    code, out, _ = run(["profile", "--eos", "polytrope", "--gamma", "2", "--K", "1", "--mu", "1"],
                       capsys)
    assert code == 0
    cols, rows = csv_rows(out)
    assert cols == ["r", "rho", "drho", "m", "h", "P"]
    assert float(rows[-1][0]) == pytest.approx(np.sqrt(np.pi / 2), rel=1e-9)
    assert float(rows[-1][3]) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-9)
    assert float(rows[0][1]) == 1.0


def test_profile_json(capsys):
    code, out, _ = run(["profile", *POLY15, "--nodes", "40", "--format", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["columns"][0] == "r" and len(doc["rows"]) == 40
    assert doc["R"] == doc["rows"][-1][0]


def test_curve(capsys):
    code, out, _ = run(["curve", "--eos", "polytrope", "--gamma", "1.25", "--mu-min", "0.1",
                        "--mu-max", "10", "--points", "8"], capsys)
    assert code == 0
    cols, rows = csv_rows(out)
    assert cols[-1] == "n_unstable" and len(rows) == 8
    assert {r[-1] for r in rows} == {"1"}


def test_spectrum(capsys):
    code, out, _ = run(["spectrum", "--eos", "polytrope", "--gamma", "1.25", "--mu", "1",
                        "--cells", "100"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["n_minus"] == 1 and doc["ktc_verified"] is True
    assert len(doc["unstable_eigenvalues"]) == 1 and doc["unstable_eigenvalues"][0]["im"] == 0


def test_evolve_linear(capsys):
    code, out, _ = run(["evolve-linear", *POLY15, "--cells", "50", "--tmax", "1", "--dt", "0.01"],
                       capsys)
    cols, rows = csv_rows(out)
    assert code == 0 and cols == ["t", "energy", "dissipation", "residual", "weighted"]
    assert len(rows) == 11 and float(rows[-1][0]) == 1.0


def test_simulate_with_fit(capsys):
    code, out, _ = run(["simulate", *POLY15, "--N", "40", "--perturb", "velocity:1e-3",
                        "--tmax", "2", "--dt", "0.01", "--fit", "decay:0.5:2"], capsys)
    assert code == 0
    cols, rows = csv_rows(out)
    assert cols == list(cli.simulator.TimeSeries.COLUMNS) and rows[-1][-1] == "ok"
    notes = [l for l in out.splitlines() if l.startswith("# fit")]
    assert len(notes) == 1 and "kind=decay" in notes[0] and "window=0.5:2" in notes[0]


def test_verify(capsys):
    code, out, _ = run(["verify", "--eos", "polytrope", "--gamma", "1.25", "--K", "1", "--mu", "1",
                        "--cells", "100", "--nu1", "0.1", "--nu2", "0.1"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["ktc_verified"] is True and doc["n_minus"] == 1
    assert doc["mass_coord_n_minus"] == 1 and doc["turning_point_count"] == 1
    assert doc["consistent"] is True


def test_verify_batch(capsys, monkeypatch):
    monkeypatch.setenv("STARSPEC_THREADS", "2")
    code, out, _ = run(["verify", *POLY15[:4], "--mu", "0.5,2", "--cells", "50"], capsys)
    doc = json.loads(out)
    assert code == 0 and [d["mu"] for d in doc["reports"]] == [0.5, 2.0]
    assert doc["consistent"] is True


# -------------------------------------------------------------- errors


@pytest.mark.parametrize("argv,code", [
    (["profile", "--eos", "polytrope", "--gamma", "1.5"], 1),  # missing --mu
    (["profile", *POLY15, "--bogus", "1"], 1),  # unknown flag
    (["profile", *POLY15, "--A", "2"], 1),  # conflicting flags
    (["profile", "--eos", "polytrope", "--mu", "1"], 1),  # polytrope without gamma
    (["profile", "--eos", "polytrope", "--gamma", "3", "--mu", "1"], 1),  # outside (6/5, 2]
    (["spectrum", *POLY15, "--nu1", "-1"], 1),
    (["spectrum", *POLY15, "--tau-grid", "0,2"], 1),
    (["spectrum", *POLY15, "--cells", "4"], 1),
    (["curve", "--eos", "wd", "--mu-min", "2", "--mu-max", "1"], 1),
    (["simulate", *POLY15, "--perturb", "wobble:1"], 1),
    (["simulate", *POLY15, "--fit", "decay:5:1"], 1),
    (["profile", *POLY15, "--config", "/nonexistent/file.cfg"], 1),
    (["frobnicate"], 1),
    (["profile", *POLY15, "--nodes", "1"], 1),
    (["profile", *POLY15, "--tol", "0.5"], 1),
    (["curve", "--eos", "wd", "--mu-min", "1", "--mu-max", "2", "--points", "4"], 1),
])
def test_invalid_input_exit_1(argv, code, capsys):
    got, out, err = run(argv, capsys)
    assert got == code and out == ""
    doc = json.loads(err.strip().splitlines()[-1])
    assert doc["exit"] == code and doc["message"]


def test_missing_mu_has_usage(capsys):
    _, _, err = run(["profile", "--eos", "polytrope", "--gamma", "1.5"], capsys)
    doc = json.loads(err)
    assert doc["error"] == "usage" and "--mu" in doc["message"]
    assert doc["usage"].startswith("usage: starspec profile")


def test_numerical_failure_exit_2(capsys):
    # the stable star has no unstable mode to seed from
    code, out, err = run(["simulate", *POLY15, "--N", "40", "--perturb", "eigenmode:1e-6",
                          "--tmax", "1"], capsys)
    assert code == 2 and out == ""
    assert json.loads(err)["exit"] == 2


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-c", "from starspec.cli import main; main()",
                          "eos", "show", "--eos", "polytrope", "--gamma", "2", "--rho", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["P"] == 9.0
    res = subprocess.run([sys.executable, "-c", "from starspec.cli import main; main()",
                          "profile"], capture_output=True, text=True)
    assert res.returncode == 1 and json.loads(res.stderr)["error"] == "usage"


# ------------------------------------------------------ determinism, io


@pytest.mark.parametrize("argv", [
    ["profile", *POLY15, "--nodes", "60"],
    ["spectrum", *POLY15, "--cells", "60"],
    ["simulate", *POLY15, "--N", "40", "--perturb", "displacement:1e-3", "--tmax", "1",
     "--dt", "0.01", "--format", "json"],
])
def test_byte_identical_reruns(argv, tmp_path, capsys):
    outs = []
    for k in range(2):
        path = tmp_path / f"out{k}"
        assert cli.dispatch([*argv, "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] and len(outs[0]) > 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out0", "out1"]  # no temp files left


def test_svg_does_not_change_numbers(tmp_path):
    base = ["curve", "--eos", "wd", "--mu-min", "0.1", "--mu-max", "10", "--points", "8"]
    a, b, svg = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.svg"
    assert cli.dispatch([*base, "--out", str(a)]) == 0
    assert cli.dispatch([*base, "--out", str(b), "--svg", str(svg)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert svg.read_text().lstrip().startswith("<?xml") and "<svg" in svg.read_text()


def test_svg_is_reproducible(tmp_path):
    paths = [tmp_path / "a.svg", tmp_path / "b.svg"]
    for p in paths:
        assert cli.dispatch(["profile", *POLY15, "--nodes", "30", "--out", str(tmp_path / "x"),
                             "--svg", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_float_format_round_trips():
    for x in (0.1, 1 / 3, np.pi * 1e-300, 2.0**60):
        assert float(cli.fmt(x)) == x
    assert cli.to_json({"a": float("nan"), "b": [1, 2.5], "c": True}) == \
        '{\n  "a": null,\n  "b": [\n    1,\n    2.5\n  ],\n  "c": true\n}'


# ------------------------------------------------------------- config


def write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_flag_overrides_file(tmp_path):
    path = write(tmp_path, "eos = polytrope\ngamma = 1.5\nmu = 2\n")
    cfg = build_config(load_config(path), {"gamma": 1.25})
    assert cfg.gamma == 1.25 and cfg.mus == [2.0]


def test_config_through_cli(tmp_path, capsys):
    path = write(tmp_path, "[star]\neos = polytrope\ngamma = 1.5\nmu = 1\ncells = 40\n")
    code, out, _ = run(["spectrum", "--config", path, "--gamma", "1.25"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["n_minus"] == 1 and doc["cells"] == 40


def test_empty_config_gives_defaults(tmp_path):
    path = write(tmp_path, "")
    cfg = build_config(load_config(path), {})
    assert cfg == RunConfig()
    with pytest.raises(ValidationError, match="--gamma"):
        validate(cfg, "profile")


def test_malformed_line_is_named(tmp_path):
    path = write(tmp_path, "eos = polytrope\n# comment\nthis line is broken\n")
    with pytest.raises(ValidationError, match=r"line 3.*this line is broken"):
        load_config(path)


def test_unknown_key_warns(tmp_path, caplog):
    path = write(tmp_path, "gamma = 1.5\nflavour = mint\n")
    values = load_config(path)
    assert values == {"gamma": 1.5}
    assert "flavour" in caplog.text


def test_bad_number_in_config(tmp_path):
    with pytest.raises(ValidationError, match="gamma"):
        load_config(write(tmp_path, "gamma = soft\n"))


def test_format_defaults():
    cfg = validate(build_config({}, {"gamma": 1.5, "mu": "1"}), "spectrum")
    assert cfg.format == "json"
    cfg = validate(build_config({}, {"gamma": 1.5, "mu": "1"}), "profile")
    assert cfg.format == "csv"
