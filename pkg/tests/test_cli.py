import csv
import io
import json

import numpy as np
import pytest

from qvelab.cli import COMMANDS, REPORT_FILES, main
from qvelab.config import ConfigError, load_config, parse_grid, validate
from qvelab.dos import semicircle_dos
from qvelab.figures import emit_figure_data

SEMICIRCLE = """
schema = "qvelab.experiment/1"

[profile]
kind = "stochastic-constant"
n = 200

[grid]
tau = [-0.5, 0.0, 0.5]
eta = [0.1, 0.05]
dos_tau = {{start = -2.5, stop = 2.5, num = 501}}

[samples]
count = 3
seed = 11
{extra}
"""


def _config(tmp_path, extra="", name="run.toml"):
    path = tmp_path / name
    path.write_text(SEMICIRCLE.format(extra=extra), encoding="utf-8")
    return path


def _run(tmp_path, command, extra="", out="out", *flags):
    cfg = _config(tmp_path, extra)
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out), *flags])
    return code, tmp_path / out


def _report(out, command):
    return json.loads((out / REPORT_FILES[command]).read_text(encoding="utf-8"))


def test_dos_command_writes_semicircle_csv(tmp_path):
    code, out = _run(tmp_path, "dos")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO((out / "dos.csv").read_text(encoding="utf-8"))))
    assert list(rows[0]) == ["tau", "rho"]
    centre = min(rows, key=lambda r: abs(float(r["tau"])))
    assert float(centre["rho"]) == pytest.approx(1 / np.pi, abs=2e-3)
    rep = _report(out, "dos")
    assert rep["pass"] and rep["schema"] == "qvelab.report/1"
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert man["status"] == "ok" and man["exit_code"] == 0
    assert set(man["files"]) == {"dos.csv", "dos.json"} and man["config_hash"] == rep["config_hash"]
    assert man["started"] and man["finished"]


@pytest.mark.parametrize("text", ["schema = 'qvelab.experiment/1'\n[profile\n", "schema = 'other/9'\n[profile]\nn = 3\n"])
def test_malformed_config_exits_2_without_artifacts(tmp_path, text):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(text, encoding="utf-8")
    assert main(["qve-solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("extra", [
    "[solver]\nbogus = 1\n",
    "[samples]\nsymmetry = 'quaternion'\n",
    "[checks]\nalpha = 'x'\n",
    "[extras]\nx = 1\n",
])
def test_invalid_values_exit_2(tmp_path, extra):
    path = tmp_path / "c.toml"
    text = SEMICIRCLE.format(extra="").replace("[samples]\ncount = 3\nseed = 11\n", "")
    path.write_text(text + extra, encoding="utf-8")
    assert main(["dos", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_nonconvergence_exits_3(tmp_path):
    code, out = _run(tmp_path, "qve-solve", "[solver]\ntol = 1e-300\nmax_iter = 3\n")
    assert code == 3
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert man["status"] == "not-converged" and man["exit_code"] == 3
    assert "qve.csv" in man["files"]


def test_check_failure_exits_1(tmp_path):
    code, out = _run(tmp_path, "delocalization", "[delocalization]\nc = 0.01\n")
    assert code == 1
    rep = _report(out, "delocalization")
    assert rep["pass"] is False and rep["checks"]


def test_strict_turns_warnings_into_failures(tmp_path):
    extra = "[universality]\nreference_count = 1\nmin_pool = 100000\n"
    code, out = _run(tmp_path, "universality", extra)
    rep = _report(out, "universality")
    assert rep["warnings"]
    code_strict, _ = _run(tmp_path, "universality", extra, "strict", "--strict")
    assert code_strict == 1


def test_reports_deterministic_across_workers(tmp_path):
    code1, out = _run(tmp_path, "verify-local-law", "", "same")
    first = _report(out, "verify-local-law")
    code2, out = _run(tmp_path, "verify-local-law", "", "same", "--workers", "3")
    second = _report(out, "verify-local-law")
    assert code1 == code2 == 0
    assert first == second
    assert first["seeds"] == [11 ^ i for i in range(3)]
    header = (out / "local_law_scan.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "eta,err_d,bound"


def test_seed_flag_overrides(tmp_path):
    _, out = _run(tmp_path, "delocalization", "", "s", "--seed", "5")
    assert _report(out, "delocalization")["seeds"] == [5, 4, 7]


@pytest.mark.parametrize("command", ["support", "rigidity", "anisotropic", "envelope", "measure-distance"])
def test_other_commands_run(tmp_path, command):
    extra = "[measure]\nintervals = [[-1.0, 0.5]]\n" if command == "measure-distance" else ""
    code, out = _run(tmp_path, command, extra)
    assert code in (0, 1)
    rep = _report(out, command)
    assert rep["command"] == command and set(rep) >= {"result", "checks", "config_hash", "pass"}


def test_gap_cdf_figure(tmp_path):
    _, out = _run(tmp_path, "universality", "[universality]\nreference_count = 2\nmin_pool = 10\n")
    header = (out / "gap_cdf.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "gap,cdf_model,cdf_reference"


def test_all_commands_have_reports():
    assert set(COMMANDS) == set(REPORT_FILES)


def test_figure_kind_errors():
    dos = semicircle_dos(np.linspace(-1, 1, 5))
    assert emit_figure_data(dos, "dos-curve").splitlines()[0] == "tau,rho"
    with pytest.raises(ValueError):
        emit_figure_data(dos, "histogram")
    with pytest.raises(TypeError):
        emit_figure_data(dos, "gap-cdf")


def test_config_helpers(tmp_path):
    np.testing.assert_allclose(parse_grid({"start": 1e-3, "stop": 1.0, "num": 4, "log": True}, "g"),
                               [1e-3, 1e-2, 1e-1, 1.0])
    with pytest.raises(ConfigError):
        parse_grid({"start": 0.0, "stop": 1.0}, "g")
    with pytest.raises(ConfigError):
        validate({"schema": "qvelab.experiment/1", "profile": {"n": 4}, "grid": {"eta": [0.0]}})
    cfg = load_config(_config(tmp_path), seed=2)
    assert cfg.seeds == [2, 3, 0]
    assert cfg.digest == load_config(_config(tmp_path), seed=2).digest
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
